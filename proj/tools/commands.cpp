#include "commands.hpp"

#include "fvig/errors.hpp"
#include "fvig/gradsuite.hpp"
#include "fvig/image.hpp"
#include "fvig/model.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;

namespace fvig::cli {

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

fs::path prepare_out(const CommonArgs& args) {
  const fs::path out(args.out_dir);
  fs::create_directories(out);
  return out;
}

void write_resolved(const fs::path& out, const std::string& command, const KeyValues& kv) {
  write_text(out / "config.txt", "# fvig " + command + "\n" + format_key_values(kv));
}

DatasetSplit load_data(const RunConfig& cfg) {
  if (cfg.data.synth && !cfg.data.data_dir.empty()) throw UsageError("use either --synth or --data, not both");
  if (cfg.data.synth) {
    return synth_dataset(cfg.train.seed, cfg.data.synth_classes, cfg.data.synth_per_class, cfg.model.image_size);
  }
  if (cfg.data.data_dir.empty()) throw UsageError("no dataset: pass --data DIR or --synth");
  return load_dataset(cfg.data.data_dir, cfg.model.image_size);
}

FViGModel load_model(const std::string& path) {
  if (path.empty()) throw UsageError("--checkpoint is required");
  Checkpoint ckpt;
  try {
    ckpt = load_checkpoint(path);
  } catch (const FormatError& e) {
    throw UsageError(std::string("unusable checkpoint: ") + e.what());
  }
  return FViGModel::from_checkpoint(ckpt);
}

// User-supplied model keys must agree with the configuration stored in the checkpoint.
void check_against_checkpoint(const RunConfig& cfg, const ModelConfig& stored) {
  for (const auto& key : cfg.model_keys_set) {
    for (const auto& [k, v] : cfg.model.to_key_values()) {
      if (k != key) continue;
      for (const auto& [sk, sv] : stored.to_key_values()) {
        if (sk == key && sv != v) {
          throw ConfigError("checkpoint/config mismatch on " + key + ": checkpoint has " + sv + ", config has " + v);
        }
      }
    }
  }
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

}  // namespace

bool DataOptions::set(const std::string& key, const std::string& value) {
  if (key == "data") data_dir = value;
  else if (key == "synth") synth = parse_bool(key, value);
  else if (key == "synth_classes") synth_classes = parse_size(key, value);
  else if (key == "synth_per_class") synth_per_class = parse_size(key, value);
  else return false;
  return true;
}

KeyValues DataOptions::to_key_values() const {
  return {{"data", data_dir},
          {"synth", synth ? "true" : "false"},
          {"synth_classes", std::to_string(synth_classes)},
          {"synth_per_class", std::to_string(synth_per_class)}};
}

KeyValues RunConfig::to_key_values() const {
  KeyValues kv = model.to_key_values();
  for (auto& p : train.to_key_values()) kv.push_back(std::move(p));
  for (auto& p : data.to_key_values()) kv.push_back(std::move(p));
  return kv;
}

RunConfig resolve_config(const CommonArgs& args) {
  RunConfig cfg;
  auto apply = [&](const std::string& key, const std::string& value) {
    if (cfg.model.set(key, value)) {
      cfg.model_keys_set.push_back(key);
    } else if (!cfg.train.set(key, value) && !cfg.data.set(key, value)) {
      throw ConfigError("unknown config key '" + key + "'");
    }
  };
  if (!args.config_path.empty()) {
    for (const auto& [k, v] : parse_key_values(read_text(args.config_path))) apply(k, v);
  }
  for (const auto& o : args.overrides) {
    const auto [k, v] = split_assignment(o);
    apply(k, v);
  }
  if (args.seed) cfg.train.seed = *args.seed;
  if (args.epochs) cfg.train.epochs = *args.epochs;
  if (args.synth) cfg.data.synth = true;
  if (args.classes) cfg.data.synth_classes = *args.classes;
  if (args.per_class) cfg.data.synth_per_class = *args.per_class;
  if (!args.data_dir.empty()) cfg.data.data_dir = args.data_dir;
  return cfg;
}

int cmd_train(const CommonArgs& args) {
  RunConfig cfg = resolve_config(args);
  cfg.train.validate();
  const DatasetSplit split = load_data(cfg);
  const bool classes_pinned =
      std::find(cfg.model_keys_set.begin(), cfg.model_keys_set.end(), "num_classes") != cfg.model_keys_set.end();
  if (classes_pinned && cfg.model.num_classes != split.num_classes()) {
    throw ConfigError("num_classes=" + std::to_string(cfg.model.num_classes) + " but the dataset has " +
                      std::to_string(split.num_classes()) + " classes");
  }
  cfg.model.num_classes = split.num_classes();
  cfg.model.validate();

  const fs::path out = prepare_out(args);
  write_resolved(out, "train", cfg.to_key_values());

  std::mt19937_64 init_rng(cfg.train.seed);
  FViGModel model = FViGModel::init(cfg.model, init_rng);
  std::cout << "training on " << split.size() << " images, " << split.num_classes() << " classes, "
            << count_params(cfg.model).total << " parameters\n";
  const auto log = train(model, split, cfg.train, [&](const EpochLog& e) {
    std::cout << "epoch " << e.epoch << "/" << cfg.train.epochs << "  loss " << fmt("%.6f", e.loss) << "  acc "
              << fmt("%.4f", e.accuracy) << "  lr " << fmt("%.3e", e.lr) << std::endl;
  });
  write_text(out / "train_log.csv", format_train_log(log));
  save_checkpoint(out / "model.fvig", model.to_checkpoint());
  std::cout << "wrote " << (out / "model.fvig").string() << " and " << (out / "train_log.csv").string() << "\n";
  return kExitOk;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint) {
  RunConfig cfg = resolve_config(args);
  const FViGModel model = load_model(checkpoint);
  check_against_checkpoint(cfg, model.config());
  cfg.model = model.config();
  const DatasetSplit split = load_data(cfg);
  if (split.num_classes() != cfg.model.num_classes) {
    throw ConfigError("checkpoint/config mismatch: model has " + std::to_string(cfg.model.num_classes) +
                      " classes, dataset has " + std::to_string(split.num_classes()));
  }
  const fs::path out = prepare_out(args);
  write_resolved(out, "eval", cfg.to_key_values());
  const MetricsReport report = evaluate(model, split, cfg.train.batch_size);
  write_text(out / "metrics.json", metrics_to_json(report) + "\n");
  std::cout << "accuracy " << fmt("%.6f", report.accuracy) << "\n";
  return kExitOk;
}

int cmd_gradcheck(const CommonArgs& args, const GradcheckArgs& extra) {
  const RunConfig cfg = resolve_config(args);
  if (!(extra.tol > 0.0)) throw UsageError("--tol must be positive");
  const fs::path out = prepare_out(args);
  write_resolved(out, "gradcheck", cfg.to_key_values());
  const auto results = run_grad_suite(extra.tol, cfg.train.seed, extra.op);
  std::vector<std::string> failed;
  std::printf("%-18s %-12s %-8s %s\n", "op", "max_rel_err", "status", "worst");
  for (const auto& r : results) {
    std::printf("%-18s %-12.3e %-8s %s\n", r.op.c_str(), r.report.max_rel_error, r.report.passed ? "ok" : "FAIL",
                r.report.worst_label.c_str());
    if (!r.report.passed) failed.push_back(r.op);
  }
  std::fflush(stdout);
  if (!failed.empty()) {
    std::string names;
    for (const auto& f : failed) names += (names.empty() ? "" : ", ") + f;
    std::cerr << "gradcheck failed at tol " << extra.tol << ": " << names << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

int cmd_export_graph(const CommonArgs& args, const ExportArgs& extra) {
  RunConfig cfg = resolve_config(args);
  const FViGModel model = load_model(extra.checkpoint);
  check_against_checkpoint(cfg, model.config());
  cfg.model = model.config();
  if (extra.image.empty()) throw UsageError("--image is required");
  if (extra.layer >= cfg.model.depth) {
    throw UsageError("--layer " + std::to_string(extra.layer) + " out of range [0, " + std::to_string(cfg.model.depth) + ")");
  }
  if (extra.node >= cfg.model.nodes()) {
    throw UsageError("--node " + std::to_string(extra.node) + " out of range [0, " + std::to_string(cfg.model.nodes()) + ")");
  }
  const Tensor original = read_ppm(extra.image);
  const Tensor resized = resize_bilinear(original, cfg.model.image_size, cfg.model.image_size);
  Shape batch_shape{1};
  batch_shape.insert(batch_shape.end(), resized.shape().begin(), resized.shape().end());

  GraphTrace trace;
  {
    NoGradGuard no_grad;
    model.forward(Tensor(batch_shape, resized.values()), false, nullptr, &trace);
  }
  const AdjacencyIndex& adj = trace.adjacency.at(extra.layer);
  const auto row = adj.row(0, extra.node);
  std::vector<std::size_t> neighbors(row.begin(), row.end());

  const fs::path out = prepare_out(args);
  write_resolved(out, "export-graph", cfg.to_key_values());
  nlohmann::ordered_json j;
  j["image_id"] = fs::path(extra.image).filename().string();
  j["layer"] = extra.layer;
  j["center_index"] = extra.node;
  j["neighbor_indices"] = neighbors;
  j["dilation"] = trace.dilation.at(extra.layer);
  j["k"] = adj.k;
  write_text(out / "graph.json", j.dump(2) + "\n");

  // Tint patches on the original image; patch boundaries scale with its size.
  const std::size_t h = original.dim(1), w = original.dim(2), grid = cfg.model.grid();
  Tensor overlay = original.clone();
  auto tint = [&](std::size_t node, const double (&color)[3]) {
    const std::size_t gr = node / grid, gc = node % grid;
    for (std::size_t y = gr * h / grid; y < (gr + 1) * h / grid; ++y) {
      for (std::size_t x = gc * w / grid; x < (gc + 1) * w / grid; ++x) {
        for (std::size_t c = 0; c < 3; ++c) {
          auto& v = overlay.mutable_values()[static_cast<Eigen::Index>((c * h + y) * w + x)];
          v = 0.5 * v + 0.5 * color[c];
        }
      }
    }
  };
  const double blue[3] = {0.0, 0.0, 1.0}, red[3] = {1.0, 0.0, 0.0};
  for (std::size_t n : neighbors) {
    if (n != extra.node) tint(n, blue);
  }
  tint(extra.node, red);
  write_ppm(out / "overlay.ppm", overlay);

  std::cout << "node " << extra.node << " layer " << extra.layer << " dilation " << trace.dilation.at(extra.layer)
            << " neighbors";
  for (std::size_t n : neighbors) std::cout << " " << n;
  std::cout << "\n";
  return kExitOk;
}

int cmd_params(const CommonArgs& args) {
  const RunConfig cfg = resolve_config(args);
  const ParamCensus census = count_params(cfg.model);
  const fs::path out = prepare_out(args);
  write_resolved(out, "params", cfg.to_key_values());
  std::printf("%-14s %12s\n", "group", "parameters");
  for (const auto& [name, count] : census.groups) std::printf("%-14s %12zu\n", name.c_str(), count);
  std::printf("%-14s %12zu\n", "blocks", census.block_subtotal());
  std::printf("%-14s %12zu\n", "total", census.total);
  return kExitOk;
}

int guarded(const char* command, const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::cerr << "fvig " << command << ": config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "fvig " << command << ": " << e.what() << "\n";
    return kExitUsage;
  } catch (const DatasetError& e) {
    std::cerr << "fvig " << command << ": dataset error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "fvig " << command << ": " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace fvig::cli
