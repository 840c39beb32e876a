#include <chrono>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include <json.hpp>

#include "langshape/errors.hpp"
#include "langshape/harness.hpp"
#include "langshape/io_util.hpp"
#include "langshape/trainer.hpp"

namespace langshape {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Manifest {
  json artifacts = json::object();

  static Manifest load(const std::string& path) {
    Manifest m;
    if (fs::exists(path)) {
      json doc = json::parse(read_text_file(path));
      if (doc.contains("artifacts")) m.artifacts = doc["artifacts"];
    }
    return m;
  }

  void save(const std::string& path) const {
    json doc;
    doc["format"] = "langshape manifest v1";
    doc["artifacts"] = artifacts;
    write_text_file(path, doc.dump(2) + "\n");
  }

  bool current(const std::string& name, const std::string& abs_path, const json& inputs) const {
    if (!artifacts.contains(name)) return false;
    const json& entry = artifacts[name];
    if (entry["inputs"] != inputs) return false;
    if (!fs::exists(abs_path)) return false;
    return entry["hash"] == file_hash_hex(abs_path);
  }

  void record(const std::string& name, const std::string& rel_path, const std::string& abs_path,
              const json& inputs) {
    artifacts[name] = {{"path", rel_path}, {"hash", file_hash_hex(abs_path)}, {"inputs", inputs}};
  }
};

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

struct LanguageModelHandle {
  std::unique_ptr<Checkpoint> checkpoint;
  std::unique_ptr<AdviceIndex> advisor;
};

}  // namespace

void run_pipeline(const KvConfig& cfg, const std::string& out_dir) {
  auto t_start = std::chrono::steady_clock::now();
  fs::create_directories(out_dir);

  const std::string grammar_path = cfg.get("grammar", "data/grammar.txt");
  const std::string train_map_path = cfg.get("train_map", "data/maps/train.map");
  const std::vector<std::string> test_maps =
      cfg.get_list("test_maps", "data/maps/test25.map,data/maps/test50.map");
  const std::vector<std::string> dynamics_list = cfg.get_list("dynamics_list", "deterministic");
  const std::vector<std::string> agents =
      cfg.get_list("agents", "qlearn,observation,language60,language80,language100");
  const int collect_agents = static_cast<int>(cfg.get_long("collect_agents", 200));
  const uint64_t master_seed = cfg.get_u64("master_seed", 7);

  TrainConfig train_cfg;
  train_cfg.epochs = static_cast<int>(cfg.get_long("epochs", 100));
  train_cfg.layers = static_cast<int>(cfg.get_long("layers", 2));
  train_cfg.hidden = static_cast<int>(cfg.get_long("hidden", 64));
  train_cfg.embedding = static_cast<int>(cfg.get_long("embedding", 32));
  train_cfg.batch = static_cast<int>(cfg.get_long("batch", 32));
  train_cfg.learning_rate = cfg.get_double("learning_rate", 0.5);
  train_cfg.validate();

  const std::string manifest_path = out_dir + "/manifest.json";
  Manifest manifest = Manifest::load(manifest_path);

  auto stage = [&](const std::string& name, const std::string& rel_path, const json& inputs,
                   auto&& build) -> std::string {
    std::string abs_path = out_dir + "/" + rel_path;
    if (manifest.current(name, abs_path, inputs)) {
      std::cout << "[pipeline] " << name << ": up to date\n";
      return abs_path;
    }
    std::cout << "[pipeline] " << name << ": building\n" << std::flush;
    try {
      build(abs_path);
    } catch (const std::exception& e) {
      throw std::runtime_error("pipeline stage '" + name + "' failed: " + e.what());
    }
    manifest.record(name, rel_path, abs_path, inputs);
    manifest.save(manifest_path);
    return abs_path;
  };

  // Stage 1: demonstration pairs on the training map.
  const std::string grammar_hash = file_hash_hex(grammar_path);
  json pairs_inputs = {{"map", file_hash_hex(train_map_path)},
                       {"param:collect_agents", std::to_string(collect_agents)},
                       {"param:seed", std::to_string(derive_seed(master_seed, "collect"))}};
  std::string pairs_path = stage("pairs", "pairs.tsv", pairs_inputs, [&](const std::string& out) {
    FroggerMap map = load_map_file(train_map_path);
    save_pairs(collect_demonstrations(map, collect_agents, derive_seed(master_seed, "collect")),
               out);
  });

  // Stage 2 + 3: annotated datasets and trained models at each oracle accuracy.
  Grammar grammar = Grammar::load_file(grammar_path);
  const std::vector<std::pair<std::string, double>> accuracies = {
      {"60", 0.6}, {"80", 0.8}, {"100", 1.0}};
  std::map<std::string, std::string> dataset_paths, model_paths;
  std::ostringstream train_params;
  train_params << "epochs=" << train_cfg.epochs << ";layers=" << train_cfg.layers
               << ";hidden=" << train_cfg.hidden << ";embedding=" << train_cfg.embedding
               << ";batch=" << train_cfg.batch << ";lr=" << train_cfg.learning_rate;

  for (const auto& [pct, accuracy] : accuracies) {
    uint64_t dataset_seed = derive_seed(master_seed, "dataset");
    json ds_inputs = {{"pairs", file_hash_hex(pairs_path)},
                      {"grammar", grammar_hash},
                      {"param:accuracy", format_double(accuracy)},
                      {"param:seed", std::to_string(dataset_seed)}};
    dataset_paths[pct] = stage("dataset_" + pct, "dataset_" + pct + ".tsv", ds_inputs,
                               [&](const std::string& out) {
                                 Dataset ds = build_dataset(load_pairs(pairs_path), grammar,
                                                            accuracy, dataset_seed);
                                 save_dataset(ds, out);
                                 std::cout << "    size " << ds.stats.size << ", top share "
                                           << format_double(ds.stats.top_sentence_share)
                                           << ", mean repetition "
                                           << format_double(ds.stats.mean_repetition_share)
                                           << '\n';
                               });

    TrainConfig model_cfg = train_cfg;
    model_cfg.seed = derive_seed(master_seed, "model-" + pct);
    json model_inputs = {{"dataset", file_hash_hex(dataset_paths[pct])},
                         {"grammar", grammar_hash},
                         {"param:train", train_params.str()},
                         {"param:seed", std::to_string(model_cfg.seed)}};
    model_paths[pct] = stage(
        "model_" + pct, "model_" + pct + ".ckpt", model_inputs, [&](const std::string& out) {
          TrainResult trained = train(load_dataset(dataset_paths[pct]), grammar, model_cfg);
          save_model(trained.model, model_cfg, out);
          save_loss_csv(trained.loss_trace, out_dir + "/loss_" + pct + ".csv");
          std::cout << "    final mean nll " << format_double(trained.loss_trace.back())
                    << ", token accuracy " << format_double(trained.final_token_accuracy)
                    << '\n';
        });
  }

  // Stage 4: experiments over the grid. Advice indexes are shared per model
  // so caches warm across maps.
  std::map<std::string, LanguageModelHandle> advisors;
  auto advisor_for = [&](const std::string& pct) -> AdviceIndex* {
    auto it = advisors.find(pct);
    if (it == advisors.end()) {
      LanguageModelHandle handle;
      handle.checkpoint = std::make_unique<Checkpoint>(load_model(model_paths[pct]));
      handle.advisor = AdviceIndex::from_dataset(&handle.checkpoint->model,
                                                 load_dataset(dataset_paths[pct]));
      it = advisors.emplace(pct, std::move(handle)).first;
    }
    return it->second.advisor.get();
  };

  std::map<std::string, std::vector<std::string>> comparison_groups;  // group -> curve paths
  for (const std::string& map_path : test_maps) {
    for (const std::string& dynamics : dynamics_list) {
      for (const std::string& agent : agents) {
        KvConfig exp_cfg = cfg;
        exp_cfg.set("map", map_path);
        exp_cfg.set("dynamics", dynamics);
        exp_cfg.set("agent", agent);
        long episodes = dynamics == "stochastic" ? cfg.get_long("episodes_stochastic", 8000)
                                                 : cfg.get_long("episodes_deterministic", 2000);
        exp_cfg.set("episodes", std::to_string(cfg.get_long("episodes", episodes)));
        if (agent == "observation") exp_cfg.set("pairs", pairs_path);
        std::string pct;
        if (agent.starts_with("language")) {
          pct = agent.substr(8);
          if (!dataset_paths.count(pct))
            throw ConfigError("agent '" + agent + "' has no dataset/model artifacts");
          exp_cfg.set("dataset", dataset_paths[pct]);
          exp_cfg.set("model", model_paths[pct]);
        }

        ExperimentSettings settings = ExperimentSettings::from_config(exp_cfg);
        settings.master_seed = derive_seed(master_seed, "exp-" + settings.label());
        std::string label = settings.label();

        json exp_inputs = {{"map", file_hash_hex(map_path)},
                           {"param:experiment", settings.canonical()}};
        if (agent == "observation") exp_inputs["pairs"] = file_hash_hex(pairs_path);
        if (!pct.empty()) {
          exp_inputs["dataset"] = file_hash_hex(dataset_paths[pct]);
          exp_inputs["model"] = file_hash_hex(model_paths[pct]);
        }

        std::string curve_path = stage("curve_" + label, "curve_" + label + ".csv", exp_inputs,
                                       [&](const std::string&) {
                                         AdviceIndex* advisor =
                                             pct.empty() ? nullptr : advisor_for(pct);
                                         run_experiment_to_dir(settings, out_dir, advisor);
                                       });
        std::string group = stem_of(map_path) + "_" + dynamics;
        comparison_groups[group].push_back(curve_path);
      }
    }
  }

  // Stage 5: comparison summaries per (map, dynamics) group.
  for (const auto& [group, curve_paths] : comparison_groups) {
    json cmp_inputs = json::object();
    for (const std::string& p : curve_paths) cmp_inputs[fs::path(p).filename().string()] =
        file_hash_hex(p);
    stage("compare_" + group, "compare_" + group + ".txt", cmp_inputs,
          [&](const std::string& out) {
            std::vector<LearningCurve> curves;
            for (const std::string& p : curve_paths)
              curves.push_back(LearningCurve::load_csv_file(p));
            write_text_file(out, compare(curves).to_text());
          });
  }

  auto elapsed = std::chrono::duration_cast<std::chrono::seconds>(
      std::chrono::steady_clock::now() - t_start);
  std::cout << "[pipeline] done in " << elapsed.count() << "s; outputs in " << out_dir << '\n';
}

}  // namespace langshape
