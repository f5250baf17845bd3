#include "commands.hpp"

#include <CLI11.hpp>

#include <functional>

using namespace fvig::cli;

namespace {

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "key=value config file");
  cmd->add_option("--set", args.overrides, "override key=value (repeatable, last wins)")->take_all();
  cmd->add_option("--out", args.out_dir, "output directory")->capture_default_str();
  cmd->add_option("--seed", args.seed, "random seed");
}

void add_data(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--data", args.data_dir, "dataset root: <root>/<class>/<image>.ppm");
  cmd->add_flag("--synth", args.synth, "use the synthetic texture dataset");
  cmd->add_option("--classes", args.classes, "synthetic class count");
  cmd->add_option("--per-class", args.per_class, "synthetic images per class");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flexible vision graph network: train, evaluate and inspect"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string checkpoint;
  GradcheckArgs grad;
  ExportArgs exp;

  auto* train = app.add_subcommand("train", "train a model and write checkpoint, log and config");
  add_common(train, args);
  add_data(train, args);
  train->add_option("--epochs", args.epochs, "training epochs");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint and write metrics.json");
  add_common(eval, args);
  add_data(eval, args);
  eval->add_option("--checkpoint", checkpoint, "model checkpoint")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  add_common(gradcheck, args);
  gradcheck->add_option("--tol", grad.tol, "maximum relative error")->capture_default_str();
  gradcheck->add_option("--op", grad.op, "check a single op");

  auto* export_graph = app.add_subcommand("export-graph", "dump one node's neighbours and an overlay image");
  add_common(export_graph, args);
  export_graph->add_option("--checkpoint", exp.checkpoint, "model checkpoint")->required();
  export_graph->add_option("--image", exp.image, "input PPM image")->required();
  export_graph->add_option("--node", exp.node, "center node index")->capture_default_str();
  export_graph->add_option("--layer", exp.layer, "block index")->capture_default_str();

  auto* params = app.add_subcommand("params", "print the parameter census");
  add_common(params, args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (train->parsed()) return guarded("train", [&] { return cmd_train(args); });
  if (eval->parsed()) return guarded("eval", [&] { return cmd_eval(args, checkpoint); });
  if (gradcheck->parsed()) return guarded("gradcheck", [&] { return cmd_gradcheck(args, grad); });
  if (export_graph->parsed()) return guarded("export-graph", [&] { return cmd_export_graph(args, exp); });
  return guarded("params", [&] { return cmd_params(args); });
}
