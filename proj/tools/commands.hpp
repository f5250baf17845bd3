#pragma once

#include "fvig/config.hpp"
#include "fvig/train.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fvig::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Bad arguments that only the command layer can detect.
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DataOptions {
  std::string data_dir;
  bool synth = false;
  std::size_t synth_classes = 3;
  std::size_t synth_per_class = 20;

  bool set(const std::string& key, const std::string& value);
  KeyValues to_key_values() const;
};

/// Flags shared by every subcommand, as typed on the command line.
struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir = "fvig_out";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  bool synth = false;
  std::optional<std::size_t> classes;
  std::optional<std::size_t> per_class;
  std::string data_dir;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataOptions data;
  std::vector<std::string> model_keys_set;  // model keys assigned by the user

  KeyValues to_key_values() const;
};

/// Defaults, then the --config file, then --set overrides in order, then the
/// dedicated flags. Unknown keys throw ConfigError.
RunConfig resolve_config(const CommonArgs& args);

struct GradcheckArgs {
  double tol = 1e-4;
  std::string op;
};

struct ExportArgs {
  std::string checkpoint;
  std::string image;
  std::size_t node = 0;
  std::size_t layer = 0;
};

int cmd_train(const CommonArgs& args);
int cmd_eval(const CommonArgs& args, const std::string& checkpoint);
int cmd_gradcheck(const CommonArgs& args, const GradcheckArgs& extra);
int cmd_export_graph(const CommonArgs& args, const ExportArgs& extra);
int cmd_params(const CommonArgs& args);

/// Runs a command body and maps exceptions to exit codes: configuration and
/// usage problems to 2, everything else to 1.
int guarded(const char* command, const std::function<int()>& body);

}  // namespace fvig::cli
