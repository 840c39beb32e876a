#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "langshape/frogger.hpp"
#include "langshape/grammar.hpp"
#include "langshape/trainer.hpp"

namespace langshape {

inline constexpr int kTargetVocabSize = 14;  // <s> </s> + 7 cells + 5 actions

/// Closed token<->index maps. Source side is the grammar closure plus the
/// sentence delimiters; target side is fixed and exactly 14 tokens.
struct Vocab {
  std::vector<std::string> source_tokens;
  std::vector<std::string> target_tokens;
  std::unordered_map<std::string, int> source_index;
  std::unordered_map<std::string, int> target_index;

  static Vocab build(const Grammar& grammar);

  int src(const std::string& token) const;  // throws ValidationError naming the token
  int tgt(const std::string& token) const;

  static int target_id(Cell c) { return 2 + static_cast<int>(c); }
  static int target_id(Action a) { return 2 + kNumCellKinds + static_cast<int>(a); }
};

/// One recurrent layer: gate order in the stacked rows is [i; f; g; o].
struct LstmParams {
  Eigen::MatrixXd wx;  // 4H x input
  Eigen::MatrixXd wh;  // 4H x H
  Eigen::MatrixXd b;   // 4H x 1
};

struct ModelParams {
  Eigen::MatrixXd src_embed;  // |Vs| x E
  Eigen::MatrixXd tgt_embed;  // 14 x E
  std::vector<LstmParams> encoder;
  std::vector<LstmParams> decoder;
  Eigen::MatrixXd attn_w;  // H x H, bilinear attention
  Eigen::MatrixXd comb_w;  // H x 2H, attentional combination
  Eigen::MatrixXd comb_b;  // H x 1
  Eigen::MatrixXd proj_w;  // 14 x H
  Eigen::MatrixXd proj_b;  // 14 x 1

  void set_zero();
  double squared_norm() const;
  void add_scaled(const ModelParams& other, double scale);
  void scale(double factor);
};

/// Named references to every parameter block, in checkpoint order.
std::vector<std::pair<std::string, Eigen::MatrixXd*>> param_blocks(ModelParams& params);

struct TrainConfig {
  int epochs = 100;
  int layers = 2;
  int hidden = 64;
  int embedding = 32;
  int batch = 32;
  double learning_rate = 0.5;
  uint64_t seed = 1;

  void validate() const;  // throws ConfigError
};

struct Seq2SeqModel {
  Vocab vocab;
  int layers = 2;
  int hidden = 64;
  int embedding = 32;
  ModelParams params;

  static Seq2SeqModel init(Vocab vocab, int layers, int hidden, int embedding, uint64_t seed);
  ModelParams zero_like() const;
  void check_shapes() const;  // throws ValidationError
  uint64_t fingerprint() const;

  std::vector<int> source_ids(const std::vector<std::string>& tokens) const;
};

std::vector<int> target_ids_for(const LocalView& view, Action action);

struct EncodeResult {
  Eigen::MatrixXd outputs;  // H x S, one column per source position
  std::vector<Eigen::VectorXd> final_h;
  std::vector<Eigen::VectorXd> final_c;
};

EncodeResult encode(const Seq2SeqModel& model, const std::vector<std::string>& tokens);

/// Incremental decoder state for teacher-forced scoring.
struct DecoderState {
  std::vector<Eigen::VectorXd> h;
  std::vector<Eigen::VectorXd> c;
};

DecoderState decoder_initial(const Seq2SeqModel& model, const EncodeResult& enc);

/// Consumes one input token, advances the state, and returns the logits over
/// the 14 target tokens. Attention weights go to *attention when non-null.
Eigen::VectorXd decoder_step(const Seq2SeqModel& model, const EncodeResult& enc,
                             DecoderState& state, int input_id,
                             Eigen::VectorXd* attention = nullptr);

/// Teacher-forced total log probability of the target ids; always <= 0. The
/// start delimiter is fed internally; positions scored = target length.
double decode_logprob(const Seq2SeqModel& model, const EncodeResult& enc,
                      const std::vector<int>& target_ids);

struct DecodeTrace {
  std::vector<Eigen::VectorXd> logits;     // per step
  std::vector<Eigen::VectorXd> attention;  // per step, length S
  std::vector<double> step_logprob;
  double total = 0.0;
};

DecodeTrace decode_trace(const Seq2SeqModel& model, const EncodeResult& enc,
                         const std::vector<int>& target_ids);

/// Pr_l(s, a, i): log probability of reconstructing `view ++ action` given
/// the utterance.
double score(const Seq2SeqModel& model, const std::vector<std::string>& utterance,
             const LocalView& view, Action action);

/// Forward + backward for one example. Returns the sequence NLL and adds the
/// gradients into *grads (when non-null).
double example_loss_and_grad(const Seq2SeqModel& model, const std::vector<int>& source_ids,
                             const std::vector<int>& target_ids, ModelParams* grads);

struct TrainResult {
  Seq2SeqModel model;
  std::vector<double> loss_trace;  // mean per-sequence NLL per epoch
  double final_token_accuracy = 0.0;
};

/// Mini-batch gradient descent with global-norm clipping at 5.0 and learning
/// rate halving on plateau. Deterministic for a fixed seed.
TrainResult train(const Dataset& dataset, const Grammar& grammar, const TrainConfig& config);

double teacher_forced_token_accuracy(const Seq2SeqModel& model, const Dataset& dataset);

void save_loss_csv(const std::vector<double>& trace, const std::string& path);

/// Versioned binary checkpoint: magic, version, config echo, vocab, then the
/// parameter blocks row-major in param_blocks order, with an integrity hash.
void save_model(const Seq2SeqModel& model, const TrainConfig& config, const std::string& path);

struct Checkpoint {
  Seq2SeqModel model;
  TrainConfig config;
};

Checkpoint load_model(const std::string& path);

}  // namespace langshape
