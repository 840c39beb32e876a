#include "langshape/seq2seq.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "langshape/errors.hpp"
#include "langshape/rng.hpp"

namespace langshape {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kGradClipNorm = 5.0;
constexpr double kPlateauDelta = 1e-4;
constexpr int kPlateauPatience = 10;
constexpr double kMinLearningRate = 1e-3;

VectorXd sigmoid(const VectorXd& z) {
  return z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

double log_sum_exp(const VectorXd& v) {
  double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

// Per-step, per-layer forward cache for backpropagation through time.
struct LstmStepCache {
  VectorXd x, h_prev, c_prev;
  VectorXd i, f, g, o, c, tanh_c, h;
};

VectorXd lstm_forward(const LstmParams& p, const VectorXd& x, const VectorXd& h_prev,
                      const VectorXd& c_prev, VectorXd& c_out, LstmStepCache* cache) {
  const int hidden = static_cast<int>(p.wh.cols());
  VectorXd z = p.wx * x + p.wh * h_prev + p.b.col(0);
  VectorXd i = sigmoid(z.segment(0, hidden));
  VectorXd f = sigmoid(z.segment(hidden, hidden));
  VectorXd g = z.segment(2 * hidden, hidden).array().tanh();
  VectorXd o = sigmoid(z.segment(3 * hidden, hidden));
  c_out = f.cwiseProduct(c_prev) + i.cwiseProduct(g);
  VectorXd tanh_c = c_out.array().tanh();
  VectorXd h = o.cwiseProduct(tanh_c);
  if (cache) {
    cache->x = x;
    cache->h_prev = h_prev;
    cache->c_prev = c_prev;
    cache->i = std::move(i);
    cache->f = std::move(f);
    cache->g = std::move(g);
    cache->o = std::move(o);
    cache->c = c_out;
    cache->tanh_c = std::move(tanh_c);
    cache->h = h;
  }
  return h;
}

// Backward through one cell. dh/dc are the gradients arriving at (h, c);
// returns gradients for (x, h_prev, c_prev) and accumulates weight grads.
void lstm_backward(const LstmParams& p, const LstmStepCache& cache, const VectorXd& dh,
                   const VectorXd& dc_in, LstmParams& grad, VectorXd& dx, VectorXd& dh_prev,
                   VectorXd& dc_prev) {
  const int hidden = static_cast<int>(p.wh.cols());
  VectorXd do_ = dh.cwiseProduct(cache.tanh_c);
  VectorXd dc = dc_in + dh.cwiseProduct(cache.o).cwiseProduct(
                            (1.0 - cache.tanh_c.array().square()).matrix());
  VectorXd di = dc.cwiseProduct(cache.g);
  VectorXd df = dc.cwiseProduct(cache.c_prev);
  VectorXd dg = dc.cwiseProduct(cache.i);
  dc_prev = dc.cwiseProduct(cache.f);

  VectorXd dz(4 * hidden);
  dz.segment(0, hidden) =
      di.cwiseProduct(cache.i).cwiseProduct((1.0 - cache.i.array()).matrix());
  dz.segment(hidden, hidden) =
      df.cwiseProduct(cache.f).cwiseProduct((1.0 - cache.f.array()).matrix());
  dz.segment(2 * hidden, hidden) = dg.cwiseProduct((1.0 - cache.g.array().square()).matrix());
  dz.segment(3 * hidden, hidden) =
      do_.cwiseProduct(cache.o).cwiseProduct((1.0 - cache.o.array()).matrix());

  grad.wx.noalias() += dz * cache.x.transpose();
  grad.wh.noalias() += dz * cache.h_prev.transpose();
  grad.b.col(0) += dz;
  dx.noalias() = p.wx.transpose() * dz;
  dh_prev.noalias() = p.wh.transpose() * dz;
}

struct AttnStepCache {
  VectorXd input_embed;  // decoder input embedding (for tgt_embed grad)
  int input_id = 0;
  VectorXd alpha, ctx, comb_in, h_tilde, probs;
};

// Full teacher-forced decoder forward with caches; shared by loss and grad.
struct DecoderForward {
  std::vector<std::vector<LstmStepCache>> lstm;  // [t][layer]
  std::vector<AttnStepCache> attn;               // [t]
  std::vector<double> step_logprob;
  double total_logprob = 0.0;
};

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw ValidationError(std::string("non-finite value in ") + what);
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocab

Vocab Vocab::build(const Grammar& grammar) {
  Vocab v;
  v.source_tokens = {"<s>", "</s>"};
  for (const std::string& w : grammar.vocabulary()) v.source_tokens.push_back(w);
  v.target_tokens = {"<s>", "</s>"};
  for (int c = 0; c < kNumCellKinds; ++c) v.target_tokens.push_back(cell_name(static_cast<Cell>(c)));
  for (int a = 0; a < kNumActions; ++a)
    v.target_tokens.push_back(action_name(static_cast<Action>(a)));
  for (size_t i = 0; i < v.source_tokens.size(); ++i)
    v.source_index[v.source_tokens[i]] = static_cast<int>(i);
  for (size_t i = 0; i < v.target_tokens.size(); ++i)
    v.target_index[v.target_tokens[i]] = static_cast<int>(i);
  return v;
}

int Vocab::src(const std::string& token) const {
  auto it = source_index.find(token);
  if (it == source_index.end())
    throw ValidationError("unknown source token '" + token + "'");
  return it->second;
}

int Vocab::tgt(const std::string& token) const {
  auto it = target_index.find(token);
  if (it == target_index.end())
    throw ValidationError("unknown target token '" + token + "'");
  return it->second;
}

// ---------------------------------------------------------------------------
// ModelParams

void ModelParams::set_zero() {
  for (auto& [_, m] : param_blocks(*this)) m->setZero();
}

double ModelParams::squared_norm() const {
  double total = 0.0;
  for (auto& [_, m] : param_blocks(const_cast<ModelParams&>(*this))) total += m->squaredNorm();
  return total;
}

void ModelParams::add_scaled(const ModelParams& other, double s) {
  auto mine = param_blocks(*this);
  auto theirs = param_blocks(const_cast<ModelParams&>(other));
  for (size_t i = 0; i < mine.size(); ++i) *mine[i].second += s * *theirs[i].second;
}

void ModelParams::scale(double factor) {
  for (auto& [_, m] : param_blocks(*this)) *m *= factor;
}

std::vector<std::pair<std::string, MatrixXd*>> param_blocks(ModelParams& p) {
  std::vector<std::pair<std::string, MatrixXd*>> blocks;
  blocks.emplace_back("src_embed", &p.src_embed);
  blocks.emplace_back("tgt_embed", &p.tgt_embed);
  for (size_t l = 0; l < p.encoder.size(); ++l) {
    std::string base = "encoder" + std::to_string(l);
    blocks.emplace_back(base + ".wx", &p.encoder[l].wx);
    blocks.emplace_back(base + ".wh", &p.encoder[l].wh);
    blocks.emplace_back(base + ".b", &p.encoder[l].b);
  }
  for (size_t l = 0; l < p.decoder.size(); ++l) {
    std::string base = "decoder" + std::to_string(l);
    blocks.emplace_back(base + ".wx", &p.decoder[l].wx);
    blocks.emplace_back(base + ".wh", &p.decoder[l].wh);
    blocks.emplace_back(base + ".b", &p.decoder[l].b);
  }
  blocks.emplace_back("attn_w", &p.attn_w);
  blocks.emplace_back("comb_w", &p.comb_w);
  blocks.emplace_back("comb_b", &p.comb_b);
  blocks.emplace_back("proj_w", &p.proj_w);
  blocks.emplace_back("proj_b", &p.proj_b);
  return blocks;
}

void TrainConfig::validate() const {
  if (epochs < 1 || layers < 1 || hidden < 1 || embedding < 1 || batch < 1)
    throw ConfigError("train config: epochs, layers, hidden, embedding, batch must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("train config: learning rate must be positive");
}

// ---------------------------------------------------------------------------
// Seq2SeqModel

Seq2SeqModel Seq2SeqModel::init(Vocab vocab, int layers, int hidden, int embedding,
                                uint64_t seed) {
  Seq2SeqModel m;
  m.vocab = std::move(vocab);
  m.layers = layers;
  m.hidden = hidden;
  m.embedding = embedding;

  auto& p = m.params;
  p.src_embed.resize(static_cast<int>(m.vocab.source_tokens.size()), embedding);
  p.tgt_embed.resize(kTargetVocabSize, embedding);
  for (int l = 0; l < layers; ++l) {
    int in = l == 0 ? embedding : hidden;
    p.encoder.push_back({MatrixXd(4 * hidden, in), MatrixXd(4 * hidden, hidden),
                         MatrixXd(4 * hidden, 1)});
    p.decoder.push_back({MatrixXd(4 * hidden, in), MatrixXd(4 * hidden, hidden),
                         MatrixXd(4 * hidden, 1)});
  }
  p.attn_w.resize(hidden, hidden);
  p.comb_w.resize(hidden, 2 * hidden);
  p.comb_b.resize(hidden, 1);
  p.proj_w.resize(kTargetVocabSize, hidden);
  p.proj_b.resize(kTargetVocabSize, 1);

  Rng rng(seed);
  for (auto& [name, mat] : param_blocks(p)) {
    bool bias = name.ends_with(".b") || name == "comb_b" || name == "proj_b";
    for (int r = 0; r < mat->rows(); ++r)
      for (int c = 0; c < mat->cols(); ++c)
        (*mat)(r, c) = bias ? 0.0 : rng.uniform(-0.08, 0.08);
  }
  // Forget-gate bias starts at one so early gradients flow through time.
  for (auto& lstm : p.encoder) lstm.b.col(0).segment(hidden, hidden).setOnes();
  for (auto& lstm : p.decoder) lstm.b.col(0).segment(hidden, hidden).setOnes();
  return m;
}

ModelParams Seq2SeqModel::zero_like() const {
  ModelParams g = params;
  g.set_zero();
  return g;
}

void Seq2SeqModel::check_shapes() const {
  auto& p = const_cast<ModelParams&>(params);
  if (static_cast<int>(p.encoder.size()) != layers ||
      static_cast<int>(p.decoder.size()) != layers)
    throw ValidationError("model shapes: layer count mismatch");
  if (p.src_embed.cols() != embedding || p.tgt_embed.cols() != embedding ||
      p.tgt_embed.rows() != kTargetVocabSize)
    throw ValidationError("model shapes: embedding matrices inconsistent");
  for (int l = 0; l < layers; ++l) {
    int in = l == 0 ? embedding : hidden;
    for (const LstmParams* lp : {&p.encoder[l], &p.decoder[l]}) {
      if (lp->wx.rows() != 4 * hidden || lp->wx.cols() != in || lp->wh.rows() != 4 * hidden ||
          lp->wh.cols() != hidden || lp->b.rows() != 4 * hidden || lp->b.cols() != 1)
        throw ValidationError("model shapes: recurrent layer " + std::to_string(l) +
                              " inconsistent");
    }
  }
  if (p.attn_w.rows() != hidden || p.attn_w.cols() != hidden || p.comb_w.rows() != hidden ||
      p.comb_w.cols() != 2 * hidden || p.comb_b.rows() != hidden ||
      p.proj_w.rows() != kTargetVocabSize || p.proj_w.cols() != hidden ||
      p.proj_b.rows() != kTargetVocabSize)
    throw ValidationError("model shapes: attention/projection inconsistent");
  for (auto& [name, mat] : param_blocks(p))
    if (!mat->allFinite())
      throw ValidationError("model shapes: non-finite values in block " + name);
}

uint64_t Seq2SeqModel::fingerprint() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, size_t n) {
    const unsigned char* bytes = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const std::string& t : vocab.source_tokens) mix(t.data(), t.size());
  for (auto& [_, mat] : param_blocks(const_cast<ModelParams&>(params)))
    mix(mat->data(), sizeof(double) * mat->size());
  return h;
}

std::vector<int> Seq2SeqModel::source_ids(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const std::string& t : tokens) ids.push_back(vocab.src(t));
  return ids;
}

std::vector<int> target_ids_for(const LocalView& view, Action action) {
  std::vector<int> ids;
  ids.reserve(10);
  for (Cell c : view.cells) ids.push_back(Vocab::target_id(c));
  ids.push_back(Vocab::target_id(action));
  return ids;
}

// ---------------------------------------------------------------------------
// Forward passes

namespace {

EncodeResult encode_ids(const Seq2SeqModel& model, const std::vector<int>& ids,
                        std::vector<std::vector<LstmStepCache>>* caches) {
  if (ids.empty()) throw ValidationError("encode: empty source sequence");
  const auto& p = model.params;
  const int hidden = model.hidden;
  const int steps = static_cast<int>(ids.size());

  EncodeResult result;
  result.outputs.resize(hidden, steps);
  std::vector<VectorXd> h(model.layers, VectorXd::Zero(hidden));
  std::vector<VectorXd> c(model.layers, VectorXd::Zero(hidden));
  if (caches) caches->assign(steps, std::vector<LstmStepCache>(model.layers));

  for (int t = 0; t < steps; ++t) {
    VectorXd x = p.src_embed.row(ids[t]).transpose();
    for (int l = 0; l < model.layers; ++l) {
      VectorXd c_out;
      LstmStepCache* cache = caches ? &(*caches)[t][l] : nullptr;
      x = lstm_forward(p.encoder[l], x, h[l], c[l], c_out, cache);
      h[l] = x;
      c[l] = std::move(c_out);
    }
    result.outputs.col(t) = h[model.layers - 1];
  }
  result.final_h = std::move(h);
  result.final_c = std::move(c);
  return result;
}

DecoderForward decode_forward(const Seq2SeqModel& model, const EncodeResult& enc,
                              const std::vector<int>& target_ids, bool keep_caches) {
  const auto& p = model.params;
  const int steps = static_cast<int>(target_ids.size());
  if (steps == 0) throw ValidationError("decode: empty target sequence");

  DecoderForward fwd;
  if (keep_caches) {
    fwd.lstm.assign(steps, std::vector<LstmStepCache>(model.layers));
    fwd.attn.assign(steps, {});
  }

  std::vector<VectorXd> h = enc.final_h;
  std::vector<VectorXd> c = enc.final_c;
  for (int t = 0; t < steps; ++t) {
    int input_id = t == 0 ? 0 /* <s> */ : target_ids[t - 1];
    VectorXd x = p.tgt_embed.row(input_id).transpose();
    VectorXd input_embed = keep_caches ? x : VectorXd();
    for (int l = 0; l < model.layers; ++l) {
      VectorXd c_out;
      LstmStepCache* cache = keep_caches ? &fwd.lstm[t][l] : nullptr;
      x = lstm_forward(p.decoder[l], x, h[l], c[l], c_out, cache);
      h[l] = x;
      c[l] = std::move(c_out);
    }
    const VectorXd& h_top = h[model.layers - 1];

    VectorXd scores = enc.outputs.transpose() * (p.attn_w * h_top);
    double smax = scores.maxCoeff();
    VectorXd alpha = (scores.array() - smax).exp();
    alpha /= alpha.sum();
    VectorXd ctx = enc.outputs * alpha;

    VectorXd comb_in(2 * model.hidden);
    comb_in << ctx, h_top;
    VectorXd h_tilde = (p.comb_w * comb_in + p.comb_b.col(0)).array().tanh();
    VectorXd logits = p.proj_w * h_tilde + p.proj_b.col(0);

    double log_z = log_sum_exp(logits);
    double logp = logits(target_ids[t]) - log_z;
    check_finite(logp, "decoder log probability");
    fwd.step_logprob.push_back(logp);
    fwd.total_logprob += logp;

    if (keep_caches) {
      AttnStepCache& a = fwd.attn[t];
      a.input_embed = std::move(input_embed);
      a.input_id = input_id;
      a.alpha = std::move(alpha);
      a.ctx = std::move(ctx);
      a.comb_in = std::move(comb_in);
      a.h_tilde = std::move(h_tilde);
      a.probs = (logits.array() - log_z).exp();
    }
  }
  return fwd;
}

}  // namespace

EncodeResult encode(const Seq2SeqModel& model, const std::vector<std::string>& tokens) {
  return encode_ids(model, model.source_ids(tokens), nullptr);
}

DecoderState decoder_initial(const Seq2SeqModel& model, const EncodeResult& enc) {
  return {enc.final_h, enc.final_c};
}

Eigen::VectorXd decoder_step(const Seq2SeqModel& model, const EncodeResult& enc,
                             DecoderState& state, int input_id, Eigen::VectorXd* attention) {
  const auto& p = model.params;
  VectorXd x = p.tgt_embed.row(input_id).transpose();
  for (int l = 0; l < model.layers; ++l) {
    VectorXd c_out;
    x = lstm_forward(p.decoder[l], x, state.h[l], state.c[l], c_out, nullptr);
    state.h[l] = x;
    state.c[l] = std::move(c_out);
  }
  const VectorXd& h_top = state.h[model.layers - 1];
  VectorXd scores = enc.outputs.transpose() * (p.attn_w * h_top);
  double smax = scores.maxCoeff();
  VectorXd alpha = (scores.array() - smax).exp();
  alpha /= alpha.sum();
  if (attention) *attention = alpha;
  VectorXd ctx = enc.outputs * alpha;
  VectorXd comb_in(2 * model.hidden);
  comb_in << ctx, h_top;
  VectorXd h_tilde = (p.comb_w * comb_in + p.comb_b.col(0)).array().tanh();
  return p.proj_w * h_tilde + p.proj_b.col(0);
}

double decode_logprob(const Seq2SeqModel& model, const EncodeResult& enc,
                      const std::vector<int>& target_ids) {
  return decode_forward(model, enc, target_ids, false).total_logprob;
}

DecodeTrace decode_trace(const Seq2SeqModel& model, const EncodeResult& enc,
                         const std::vector<int>& target_ids) {
  DecodeTrace trace;
  DecoderState state = decoder_initial(model, enc);
  for (size_t t = 0; t < target_ids.size(); ++t) {
    int input_id = t == 0 ? 0 : target_ids[t - 1];
    VectorXd attention;
    VectorXd logits = decoder_step(model, enc, state, input_id, &attention);
    double logp = logits(target_ids[t]) - log_sum_exp(logits);
    trace.logits.push_back(std::move(logits));
    trace.attention.push_back(std::move(attention));
    trace.step_logprob.push_back(logp);
    trace.total += logp;
  }
  return trace;
}

double score(const Seq2SeqModel& model, const std::vector<std::string>& utterance,
             const LocalView& view, Action action) {
  EncodeResult enc = encode(model, utterance);
  return decode_logprob(model, enc, target_ids_for(view, action));
}

// ---------------------------------------------------------------------------
// Backward

double example_loss_and_grad(const Seq2SeqModel& model, const std::vector<int>& source_ids,
                             const std::vector<int>& target_ids, ModelParams* grads) {
  const auto& p = model.params;
  const int hidden = model.hidden;
  const int layers = model.layers;

  std::vector<std::vector<LstmStepCache>> enc_caches;
  EncodeResult enc = encode_ids(model, source_ids, grads ? &enc_caches : nullptr);
  DecoderForward fwd = decode_forward(model, enc, target_ids, grads != nullptr);
  double loss = -fwd.total_logprob;
  if (!grads) return loss;

  ModelParams& g = *grads;
  const int src_steps = static_cast<int>(source_ids.size());
  const int tgt_steps = static_cast<int>(target_ids.size());

  MatrixXd d_enc_outputs = MatrixXd::Zero(hidden, src_steps);
  std::vector<VectorXd> dh(layers, VectorXd::Zero(hidden));
  std::vector<VectorXd> dc(layers, VectorXd::Zero(hidden));

  for (int t = tgt_steps - 1; t >= 0; --t) {
    const AttnStepCache& a = fwd.attn[t];

    // d loss / d logits for loss = -log softmax(logits)[target].
    VectorXd dlogits = a.probs;
    dlogits(target_ids[t]) -= 1.0;

    g.proj_w.noalias() += dlogits * a.h_tilde.transpose();
    g.proj_b.col(0) += dlogits;
    VectorXd dh_tilde = p.proj_w.transpose() * dlogits;
    VectorXd da_pre = dh_tilde.cwiseProduct((1.0 - a.h_tilde.array().square()).matrix());
    g.comb_w.noalias() += da_pre * a.comb_in.transpose();
    g.comb_b.col(0) += da_pre;
    VectorXd dcomb_in = p.comb_w.transpose() * da_pre;
    VectorXd dctx = dcomb_in.head(hidden);
    VectorXd dh_top = dcomb_in.tail(hidden);

    // Attention backward: ctx = enc_outputs * alpha, scores via bilinear map.
    VectorXd dalpha = enc.outputs.transpose() * dctx;
    d_enc_outputs.noalias() += dctx * a.alpha.transpose();
    double inner = a.alpha.dot(dalpha);
    VectorXd dscores = a.alpha.cwiseProduct((dalpha.array() - inner).matrix());
    const VectorXd& h_top = fwd.lstm[t][layers - 1].h;
    VectorXd u = p.attn_w * h_top;
    d_enc_outputs.noalias() += u * dscores.transpose();
    VectorXd du = enc.outputs * dscores;
    g.attn_w.noalias() += du * h_top.transpose();
    dh_top.noalias() += p.attn_w.transpose() * du;

    // Stacked LSTM backward at this step, top layer first.
    VectorXd dx_upper;
    for (int l = layers - 1; l >= 0; --l) {
      VectorXd dh_total = dh[l];
      if (l == layers - 1)
        dh_total += dh_top;
      else
        dh_total += dx_upper;
      VectorXd dx, dh_prev, dc_prev;
      lstm_backward(p.decoder[l], fwd.lstm[t][l], dh_total, dc[l], g.decoder[l], dx, dh_prev,
                    dc_prev);
      dh[l] = std::move(dh_prev);
      dc[l] = std::move(dc_prev);
      dx_upper = std::move(dx);
    }
    g.tgt_embed.row(a.input_id) += dx_upper.transpose();
  }

  // Decoder initial states were the encoder finals.
  std::vector<VectorXd> enc_dh = std::move(dh);
  std::vector<VectorXd> enc_dc = std::move(dc);

  for (int t = src_steps - 1; t >= 0; --t) {
    enc_dh[layers - 1] += d_enc_outputs.col(t);
    VectorXd dx_upper;
    for (int l = layers - 1; l >= 0; --l) {
      VectorXd dh_total = enc_dh[l];
      if (l != layers - 1) dh_total += dx_upper;
      VectorXd dx, dh_prev, dc_prev;
      lstm_backward(p.encoder[l], enc_caches[t][l], dh_total, enc_dc[l], g.encoder[l], dx,
                    dh_prev, dc_prev);
      enc_dh[l] = std::move(dh_prev);
      enc_dc[l] = std::move(dc_prev);
      dx_upper = std::move(dx);
    }
    g.src_embed.row(source_ids[t]) += dx_upper.transpose();
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Training

TrainResult train(const Dataset& dataset, const Grammar& grammar, const TrainConfig& config) {
  config.validate();
  if (dataset.examples.empty()) throw ValidationError("train: dataset is empty");

  Vocab vocab = Vocab::build(grammar);
  Seq2SeqModel model = Seq2SeqModel::init(std::move(vocab), config.layers, config.hidden,
                                          config.embedding, derive_seed(config.seed, "init"));

  std::vector<std::vector<int>> sources, targets;
  sources.reserve(dataset.examples.size());
  for (const AnnotatedExample& ex : dataset.examples) {
    sources.push_back(model.source_ids(ex.utterance));
    targets.push_back(target_ids_for(ex.view, ex.action));
  }

  const size_t n = dataset.examples.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  double lr = config.learning_rate;
  double best_loss = std::numeric_limits<double>::infinity();
  int stall = 0;
  ModelParams grads = model.zero_like();

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(config.seed, "shuffle", static_cast<uint64_t>(epoch)));
    for (size_t i = n; i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(static_cast<int>(i))]);

    double epoch_loss = 0.0;
    for (size_t start = 0; start < n; start += config.batch) {
      size_t end = std::min(n, start + config.batch);
      grads.set_zero();
      for (size_t k = start; k < end; ++k)
        epoch_loss +=
            example_loss_and_grad(model, sources[order[k]], targets[order[k]], &grads);
      grads.scale(1.0 / static_cast<double>(end - start));
      double norm = std::sqrt(grads.squared_norm());
      double step_scale = norm > kGradClipNorm ? kGradClipNorm / norm : 1.0;
      model.params.add_scaled(grads, -lr * step_scale);
    }
    epoch_loss /= static_cast<double>(n);
    if (!std::isfinite(epoch_loss))
      throw ValidationError("train: loss diverged at epoch " + std::to_string(epoch));
    result.loss_trace.push_back(epoch_loss);

    if (epoch_loss < best_loss - kPlateauDelta) {
      best_loss = epoch_loss;
      stall = 0;
    } else if (++stall >= kPlateauPatience) {
      lr = std::max(kMinLearningRate, lr * 0.5);
      stall = 0;
    }
  }

  result.final_token_accuracy = teacher_forced_token_accuracy(model, dataset);
  result.model = std::move(model);
  return result;
}

double teacher_forced_token_accuracy(const Seq2SeqModel& model, const Dataset& dataset) {
  size_t correct = 0, total = 0;
  for (const AnnotatedExample& ex : dataset.examples) {
    EncodeResult enc = encode(model, ex.utterance);
    std::vector<int> ids = target_ids_for(ex.view, ex.action);
    DecodeTrace trace = decode_trace(model, enc, ids);
    for (size_t t = 0; t < ids.size(); ++t) {
      int best = 0;
      trace.logits[t].maxCoeff(&best);
      if (best == ids[t]) ++correct;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / total;
}

void save_loss_csv(const std::vector<double>& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write loss trace: " + path);
  out << "epoch,mean_nll\n";
  char buf[64];
  for (size_t i = 0; i < trace.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.10g\n", i, trace[i]);
    out << buf;
  }
}

// ---------------------------------------------------------------------------
// Checkpoint IO

namespace {

constexpr char kMagic[4] = {'L', 'S', 'Q', '2'};
constexpr uint32_t kVersion = 1;

struct HashingWriter {
  std::ostream& out;
  uint64_t hash = 0xcbf29ce484222325ULL;

  void write(const void* data, size_t n) {
    const unsigned char* bytes = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      hash ^= bytes[i];
      hash *= 0x100000001b3ULL;
    }
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  }
  template <typename T>
  void write_pod(T v) {
    write(&v, sizeof(T));
  }
  void write_string(const std::string& s) {
    write_pod(static_cast<uint32_t>(s.size()));
    write(s.data(), s.size());
  }
};

struct HashingReader {
  std::istream& in;
  uint64_t hash = 0xcbf29ce484222325ULL;

  void read(void* data, size_t n) {
    in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (!in) throw ParseError("checkpoint: unexpected end of file");
    const unsigned char* bytes = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      hash ^= bytes[i];
      hash *= 0x100000001b3ULL;
    }
  }
  template <typename T>
  T read_pod() {
    T v;
    read(&v, sizeof(T));
    return v;
  }
  std::string read_string() {
    uint32_t n = read_pod<uint32_t>();
    if (n > (1u << 20)) throw ParseError("checkpoint: implausible string length");
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }
};

}  // namespace

void save_model(const Seq2SeqModel& model, const TrainConfig& config, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  HashingWriter w{out};
  w.write(kMagic, 4);
  w.write_pod(kVersion);
  w.write_pod(static_cast<uint32_t>(model.layers));
  w.write_pod(static_cast<uint32_t>(model.hidden));
  w.write_pod(static_cast<uint32_t>(model.embedding));
  w.write_pod(static_cast<uint32_t>(config.epochs));
  w.write_pod(static_cast<uint32_t>(config.batch));
  w.write_pod(config.learning_rate);
  w.write_pod(config.seed);
  w.write_pod(static_cast<uint32_t>(model.vocab.source_tokens.size()));
  for (const std::string& t : model.vocab.source_tokens) w.write_string(t);
  w.write_pod(static_cast<uint32_t>(model.vocab.target_tokens.size()));
  for (const std::string& t : model.vocab.target_tokens) w.write_string(t);
  for (auto& [name, mat] : param_blocks(const_cast<ModelParams&>(model.params))) {
    w.write_string(name);
    w.write_pod(static_cast<uint32_t>(mat->rows()));
    w.write_pod(static_cast<uint32_t>(mat->cols()));
    for (int r = 0; r < mat->rows(); ++r)
      for (int c = 0; c < mat->cols(); ++c) w.write_pod((*mat)(r, c));
  }
  uint64_t digest = w.hash;
  out.write(reinterpret_cast<const char*>(&digest), sizeof(digest));
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

Checkpoint load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  HashingReader r{in};
  char magic[4];
  r.read(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw ParseError("checkpoint: bad magic");
  uint32_t version = r.read_pod<uint32_t>();
  if (version != kVersion)
    throw ParseError("checkpoint: unsupported version " + std::to_string(version));

  Checkpoint ck;
  ck.model.layers = static_cast<int>(r.read_pod<uint32_t>());
  ck.model.hidden = static_cast<int>(r.read_pod<uint32_t>());
  ck.model.embedding = static_cast<int>(r.read_pod<uint32_t>());
  ck.config.layers = ck.model.layers;
  ck.config.hidden = ck.model.hidden;
  ck.config.embedding = ck.model.embedding;
  ck.config.epochs = static_cast<int>(r.read_pod<uint32_t>());
  ck.config.batch = static_cast<int>(r.read_pod<uint32_t>());
  ck.config.learning_rate = r.read_pod<double>();
  ck.config.seed = r.read_pod<uint64_t>();

  uint32_t n_src = r.read_pod<uint32_t>();
  for (uint32_t i = 0; i < n_src; ++i) ck.model.vocab.source_tokens.push_back(r.read_string());
  uint32_t n_tgt = r.read_pod<uint32_t>();
  for (uint32_t i = 0; i < n_tgt; ++i) ck.model.vocab.target_tokens.push_back(r.read_string());
  if (n_tgt != kTargetVocabSize)
    throw ValidationError("checkpoint: target vocabulary must have exactly 14 tokens");
  for (size_t i = 0; i < ck.model.vocab.source_tokens.size(); ++i)
    ck.model.vocab.source_index[ck.model.vocab.source_tokens[i]] = static_cast<int>(i);
  for (size_t i = 0; i < ck.model.vocab.target_tokens.size(); ++i)
    ck.model.vocab.target_index[ck.model.vocab.target_tokens[i]] = static_cast<int>(i);

  // Materialize shapes, then stream blocks in declaration order.
  Seq2SeqModel shaped = Seq2SeqModel::init(ck.model.vocab, ck.model.layers, ck.model.hidden,
                                           ck.model.embedding, 0);
  ck.model.params = std::move(shaped.params);
  for (auto& [name, mat] : param_blocks(ck.model.params)) {
    std::string stored = r.read_string();
    if (stored != name)
      throw ParseError("checkpoint: expected block '" + name + "', found '" + stored + "'");
    uint32_t rows = r.read_pod<uint32_t>();
    uint32_t cols = r.read_pod<uint32_t>();
    if (rows != mat->rows() || cols != mat->cols())
      throw ValidationError("checkpoint: block '" + name + "' has inconsistent shape");
    for (uint32_t rr = 0; rr < rows; ++rr)
      for (uint32_t cc = 0; cc < cols; ++cc) (*mat)(rr, cc) = r.read_pod<double>();
  }
  uint64_t expected = r.hash;
  uint64_t stored;
  in.read(reinterpret_cast<char*>(&stored), sizeof(stored));
  if (!in || stored != expected) throw ParseError("checkpoint: integrity hash mismatch");
  ck.model.check_shapes();
  return ck;
}

}  // namespace langshape
