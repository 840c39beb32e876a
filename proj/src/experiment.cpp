#include <algorithm>
#include <cmath>
#include <filesystem>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "langshape/errors.hpp"
#include "langshape/harness.hpp"
#include "langshape/io_util.hpp"
#include "langshape/trainer.hpp"

namespace langshape {

namespace {

const std::vector<std::string> kAgents = {"qlearn", "observation", "language60", "language80",
                                          "language100"};

bool is_language_agent(const std::string& agent) { return agent.starts_with("language"); }

std::string map_stem(const std::string& path) {
  return std::filesystem::path(path).stem().string();
}

}  // namespace

ExperimentSettings ExperimentSettings::from_config(const KvConfig& cfg) {
  ExperimentSettings s;
  s.map_path = cfg.require("map");
  std::string dynamics = cfg.get("dynamics", "deterministic");
  if (dynamics == "deterministic") {
    s.dynamics.stochastic = false;
  } else if (dynamics == "stochastic") {
    s.dynamics.stochastic = true;
  } else {
    throw ConfigError("dynamics must be 'deterministic' or 'stochastic', got '" + dynamics + "'");
  }
  s.dynamics.p_fail = cfg.get_double("p_fail", 0.2);
  s.agent = cfg.require("agent");
  s.episodes = cfg.get_long("episodes", 2000);
  s.eval_period = cfg.get_long("eval_period", 100);
  s.eval_episodes = static_cast<int>(cfg.get_long("eval_episodes", 20));
  s.replicates = static_cast<int>(cfg.get_long("replicates", 10));
  s.master_seed = cfg.get_u64("master_seed", 7);
  s.jobs = static_cast<int>(cfg.get_long("jobs", 1));
  s.alpha = cfg.get_double("alpha", 0.1);
  s.gamma = cfg.get_double("gamma", 0.95);
  s.q_temperature = cfg.get_double("q_temperature", 1.0);
  s.step_cap = static_cast<int>(cfg.get_long("step_cap", 200));
  s.tau.tau0 = cfg.get_double("tau0", 0.2);
  s.tau.tau_max = cfg.get_double("tau_max", 5.0);
  s.tau.shape = TemperatureSchedule::shape_from_name(cfg.get("tau_shape", "linear"));
  s.tau_horizon_frac = cfg.get_double("tau_horizon_frac", 0.6);
  s.pairs_path = cfg.get("pairs", "");
  s.dataset_path = cfg.get("dataset", "");
  s.model_path = cfg.get("model", "");
  s.validate();
  return s;
}

void ExperimentSettings::validate() const {
  if (std::find(kAgents.begin(), kAgents.end(), agent) == kAgents.end())
    throw ConfigError("unknown agent '" + agent + "'");
  if (episodes < 1 || eval_period < 1 || episodes % eval_period != 0)
    throw ConfigError("eval_period must divide the episode budget");
  if (eval_episodes < 1 || replicates < 1 || step_cap < 1)
    throw ConfigError("eval_episodes, replicates and step_cap must be positive");
  if (agent == "observation" && pairs_path.empty())
    throw ConfigError("observation agent needs the 'pairs' artifact");
  if (is_language_agent(agent) && (dataset_path.empty() || model_path.empty()))
    throw ConfigError("language agents need 'dataset' and 'model' artifacts");
  TemperatureSchedule check = tau;
  check.horizon = std::max<long>(1, static_cast<long>(tau_horizon_frac * episodes));
  check.validate();
}

std::string ExperimentSettings::label() const {
  return map_stem(map_path) + "_" + (dynamics.stochastic ? "stochastic" : "deterministic") +
         "_" + agent;
}

std::string ExperimentSettings::canonical() const {
  std::ostringstream out;
  out << "agent=" << agent << ";map=" << map_path
      << ";dynamics=" << (dynamics.stochastic ? "stochastic" : "deterministic")
      << ";p_fail=" << format_double(dynamics.stochastic ? dynamics.p_fail : 0.0)
      << ";episodes=" << episodes << ";eval_period=" << eval_period
      << ";eval_episodes=" << eval_episodes << ";replicates=" << replicates
      << ";master_seed=" << master_seed << ";alpha=" << format_double(alpha)
      << ";gamma=" << format_double(gamma) << ";q_temperature=" << format_double(q_temperature)
      << ";step_cap=" << step_cap << ";tau0=" << format_double(tau.tau0)
      << ";tau_max=" << format_double(tau.tau_max)
      << ";tau_shape=" << TemperatureSchedule::shape_name(tau.shape)
      << ";tau_horizon_frac=" << format_double(tau_horizon_frac);
  return out.str();
}

void LearningCurve::finalize_stats() {
  mean.clear();
  stderr_.clear();
  for (const std::vector<double>& row : per_replicate) {
    double m = 0.0;
    for (double v : row) m += v;
    m /= row.size();
    double var = 0.0;
    for (double v : row) var += (v - m) * (v - m);
    double se = row.size() > 1 ? std::sqrt(var / (row.size() - 1)) / std::sqrt(row.size()) : 0.0;
    mean.push_back(m);
    stderr_.push_back(se);
  }
}

std::string LearningCurve::to_csv() const {
  std::ostringstream out;
  out << "# langshape curve v1 agent=" << agent << '\n';
  out << "episode";
  for (int r = 0; r < replicate_count(); ++r) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), ",rep%02d", r);
    out << buf;
  }
  out << ",mean,stderr\n";
  for (size_t i = 0; i < episodes.size(); ++i) {
    out << episodes[i];
    for (double v : per_replicate[i]) out << ',' << format_double(v);
    out << ',' << format_double(mean[i]) << ',' << format_double(stderr_[i]) << '\n';
  }
  return out.str();
}

LearningCurve LearningCurve::from_csv(const std::string& text) {
  LearningCurve curve;
  std::istringstream in(text);
  std::string line;
  int reps = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      size_t pos = line.find("agent=");
      if (pos != std::string::npos) curve.agent = line.substr(pos + 6);
      continue;
    }
    if (line.starts_with("episode")) {
      reps = 0;
      size_t pos = 0;
      while ((pos = line.find(",rep", pos)) != std::string::npos) {
        ++reps;
        pos += 4;
      }
      continue;
    }
    if (reps < 0) throw ParseError("curve csv: missing column header");
    std::istringstream row(line);
    std::string cell;
    std::vector<double> values;
    while (std::getline(row, cell, ',')) values.push_back(std::stod(cell));
    if (static_cast<int>(values.size()) != reps + 3)
      throw ParseError("curve csv: row width mismatch");
    curve.episodes.push_back(static_cast<long>(values[0]));
    curve.per_replicate.emplace_back(values.begin() + 1, values.begin() + 1 + reps);
  }
  if (curve.episodes.empty()) throw ParseError("curve csv: no data rows");
  curve.finalize_stats();
  return curve;
}

LearningCurve LearningCurve::load_csv_file(const std::string& path) {
  return from_csv(read_text_file(path));
}

ExperimentResult run_experiment(const ExperimentSettings& settings, AdviceIndex* advisor) {
  settings.validate();
  FroggerMap map = load_map_file(settings.map_path);

  TemperatureSchedule schedule = settings.tau;
  schedule.horizon = std::max<long>(1, static_cast<long>(settings.tau_horizon_frac *
                                                         settings.episodes));
  schedule.validate();

  // Artifact-backed critique sides. The advice index is shared across
  // replicates (and, via `advisor`, across experiments with the same model).
  std::optional<ObservationCritique> observation;
  std::unique_ptr<Checkpoint> checkpoint;
  std::unique_ptr<AdviceIndex> own_advisor;
  if (settings.agent == "observation") {
    observation = ObservationCritique::from_pairs(load_pairs(settings.pairs_path), schedule);
  } else if (is_language_agent(settings.agent) && !advisor) {
    checkpoint = std::make_unique<Checkpoint>(load_model(settings.model_path));
    own_advisor =
        AdviceIndex::from_dataset(&checkpoint->model, load_dataset(settings.dataset_path));
    advisor = own_advisor.get();
  }

  const long checkpoints = settings.episodes / settings.eval_period;
  LearningCurve curve;
  curve.agent = settings.agent;
  for (long i = 1; i <= checkpoints; ++i) curve.episodes.push_back(i * settings.eval_period);
  curve.per_replicate.assign(checkpoints, std::vector<double>(settings.replicates, 0.0));

  EpisodeLimits limits{settings.step_cap};
  auto run_replicate = [&](int rep) {
    QTable table;
    table.alpha = settings.alpha;
    table.gamma = settings.gamma;
    Rng train_rng(derive_seed(settings.master_seed, "train", static_cast<uint64_t>(rep)));

    ShapedPolicy policy;
    policy.table = &table;
    policy.q_temperature = settings.q_temperature;
    if (settings.agent == "observation") {
      policy.critique = [&](const LocalView& view, long episode) {
        return observation->critique(view, episode);
      };
    } else if (is_language_agent(settings.agent)) {
      policy.critique = [&](const LocalView& view, long episode) {
        return advisor->language_critique(view, episode, schedule);
      };
    }

    for (long episode = 0; episode < settings.episodes; ++episode) {
      ActionSource source = [&](const GameState& state) {
        return shaped_action_distribution(state, policy, episode);
      };
      run_episode(map, settings.dynamics, table, source, limits, train_rng);
      if ((episode + 1) % settings.eval_period == 0) {
        long chk = (episode + 1) / settings.eval_period - 1;
        Rng eval_rng(derive_seed(settings.master_seed, "eval",
                                 static_cast<uint64_t>(rep) * 1000000ULL +
                                     static_cast<uint64_t>(chk)));
        curve.per_replicate[chk][rep] = evaluate_policy(map, settings.dynamics, table,
                                                        settings.eval_episodes, limits, eval_rng);
      }
    }
  };

  int jobs = std::max(1, std::min(settings.jobs, settings.replicates));
  if (jobs == 1) {
    for (int rep = 0; rep < settings.replicates; ++rep) run_replicate(rep);
  } else {
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> workers;
    for (int w = 0; w < jobs; ++w) {
      workers.emplace_back([&, w]() {
        try {
          for (int rep = w; rep < settings.replicates; rep += jobs) run_replicate(rep);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      });
    }
    for (std::thread& t : workers) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }
  curve.finalize_stats();

  nlohmann::json prov;
  prov["config_hash"] = hash_hex(fnv1a64_bytes(settings.canonical()));
  prov["agent"] = settings.agent;
  prov["map"] = {{"path", settings.map_path}, {"hash", file_hash_hex(settings.map_path)}};
  prov["dynamics"] = settings.dynamics.stochastic ? "stochastic" : "deterministic";
  prov["p_fail"] = settings.dynamics.stochastic ? settings.dynamics.p_fail : 0.0;
  prov["episodes"] = settings.episodes;
  prov["eval_period"] = settings.eval_period;
  prov["eval_episodes"] = settings.eval_episodes;
  prov["replicates"] = settings.replicates;
  prov["master_seed"] = settings.master_seed;
  prov["alpha"] = settings.alpha;
  prov["gamma"] = settings.gamma;
  prov["q_temperature"] = settings.q_temperature;
  prov["step_cap"] = settings.step_cap;
  prov["tau"] = {{"shape", TemperatureSchedule::shape_name(schedule.shape)},
                 {"tau0", schedule.tau0},
                 {"tau_max", schedule.tau_max},
                 {"horizon", schedule.horizon}};
  if (!settings.pairs_path.empty())
    prov["pairs"] = {{"path", settings.pairs_path}, {"hash", file_hash_hex(settings.pairs_path)}};
  if (!settings.dataset_path.empty())
    prov["dataset"] = {{"path", settings.dataset_path},
                       {"hash", file_hash_hex(settings.dataset_path)}};
  if (!settings.model_path.empty())
    prov["model"] = {{"path", settings.model_path}, {"hash", file_hash_hex(settings.model_path)}};
  std::vector<uint64_t> seeds;
  for (int rep = 0; rep < settings.replicates; ++rep)
    seeds.push_back(derive_seed(settings.master_seed, "train", static_cast<uint64_t>(rep)));
  prov["replicate_seeds"] = seeds;

  ExperimentResult result;
  result.curve = std::move(curve);
  result.provenance_json = prov.dump(2) + "\n";
  return result;
}

ExperimentResult run_experiment_to_dir(const ExperimentSettings& settings,
                                       const std::string& out_dir, AdviceIndex* advisor) {
  std::filesystem::create_directories(out_dir);
  std::string label = settings.label();

  // Own the language artifacts here so the populated cache can be persisted
  // alongside the curve for audit and reuse.
  std::unique_ptr<Checkpoint> checkpoint;
  std::unique_ptr<AdviceIndex> own_advisor;
  if (is_language_agent(settings.agent) && !advisor) {
    checkpoint = std::make_unique<Checkpoint>(load_model(settings.model_path));
    own_advisor =
        AdviceIndex::from_dataset(&checkpoint->model, load_dataset(settings.dataset_path));
    advisor = own_advisor.get();
  }

  ExperimentResult result = run_experiment(settings, advisor);
  write_text_file(out_dir + "/curve_" + label + ".csv", result.curve.to_csv());
  write_text_file(out_dir + "/provenance_" + label + ".json", result.provenance_json);
  if (advisor) advisor->save_cache(out_dir + "/advice_cache_" + label + ".txt");
  return result;
}

}  // namespace langshape
