// Command-line front end for the detection pipeline. Every stage reads one
// hierarchical JSON config; outputs land under <out>/<config-hash>/.

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "c2ir/config.hpp"
#include "c2ir/pipeline.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "runs";
  std::vector<std::string> overrides;
  std::int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON config file (defaults apply otherwise)");
  cmd->add_option("--out", args.out_dir, "output root; runs land in <out>/<config-hash>/");
  cmd->add_option("--set", args.overrides, "override a config key, e.g. --set train.epochs=5")
      ->take_all();
  cmd->add_option("--seed", args.seed, "override the top-level seed");
}

c2ir::RunConfig effective_config(const CommonArgs& args) {
  c2ir::json tree = args.config_path.empty()
                        ? c2ir::config_to_json(c2ir::RunConfig{})
                        : c2ir::read_json(args.config_path);
  for (const auto& kv : args.overrides) c2ir::apply_override(tree, kv);
  if (args.seed >= 0) tree["seed"] = static_cast<std::uint64_t>(args.seed);
  return c2ir::config_from_json(tree);
}

void print_report(const c2ir::MetricsReport& report) {
  std::printf("%-22s %-18s %8s %8s %8s %8s\n", "method", "ood_set", "tnr95", "auroc",
              "detacc", "auprin");
  for (const auto& c : report.cells)
    std::printf("%-22s %-18s %8.4f %8.4f %8.4f %8.4f\n", c.method.c_str(),
                c.ood_set.c_str(), c.tnr_at_tpr95, c.auroc, c.detection_acc, c.aupr_in);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"data-free OOD detection from BatchNorm statistics"};
  app.require_subcommand(1);

  CommonArgs args;
  std::vector<std::string> ood_filter, method_filter;
  std::string ablation_mode;

  auto* train = app.add_subcommand("train", "generate data and train the classifier");
  add_common(train, args);
  auto* invert = app.add_subcommand("invert", "synthesize class-conditional impressions");
  add_common(invert, args);
  auto* calibrate = app.add_subcommand("calibrate", "build channel/layer weights and references");
  add_common(calibrate, args);
  auto* score = app.add_subcommand("score", "dump per-sample score CSVs");
  add_common(score, args);
  auto* eval = app.add_subcommand("eval", "run the benchmark and write the metrics report");
  add_common(eval, args);
  eval->add_option("--ood", ood_filter, "restrict OOD sets (comma-separated)")->delimiter(',');
  eval->add_option("--method", method_filter, "restrict methods (comma-separated)")->delimiter(',');
  auto* ablate = app.add_subcommand("ablate", "evaluate weighting-strategy ablations");
  add_common(ablate, args);
  ablate->add_option("--mode", ablation_mode, "run a single ablation mode");
  auto* compare = app.add_subcommand("compare-layers", "emit the per-layer activation-mean table");
  add_common(compare, args);

  CLI11_PARSE(app, argc, argv);

  try {
    c2ir::RunConfig cfg = effective_config(args);
    if (!ood_filter.empty()) cfg.eval.ood_sets = ood_filter;
    if (!method_filter.empty()) cfg.eval.methods = method_filter;
    if (!ablation_mode.empty()) cfg.ablation.modes = {ablation_mode};
    const c2ir::RunPaths paths = c2ir::run_paths(args.out_dir, cfg);
    c2ir::ensure_dir(paths.root);
    c2ir::write_json(paths.root / "config.json", c2ir::config_to_json(cfg));

    if (train->parsed()) {
      const auto s = c2ir::stage_train(cfg, paths);
      std::printf("checkpoint %s  train_acc=%.4f  test_acc=%.4f\n", s.fingerprint.c_str(),
                  s.train_accuracy, s.test_accuracy);
    } else if (invert->parsed()) {
      c2ir::stage_invert(cfg, paths);
      std::printf("synthesis written to %s\n", paths.synthesis().string().c_str());
    } else if (calibrate->parsed()) {
      c2ir::stage_calibrate(cfg, paths);
      std::printf("calibration written to %s\n", paths.artifact().string().c_str());
    } else if (score->parsed()) {
      c2ir::stage_score(cfg, paths);
      std::printf("score CSVs written to %s\n", paths.reports().string().c_str());
    } else if (eval->parsed()) {
      print_report(c2ir::stage_eval(cfg, paths));
      std::printf("report written to %s\n",
                  (paths.reports() / "benchmark.json").string().c_str());
    } else if (ablate->parsed()) {
      print_report(c2ir::stage_ablate(cfg, paths));
      std::printf("report written to %s\n",
                  (paths.reports() / "ablation.json").string().c_str());
    } else if (compare->parsed()) {
      c2ir::stage_compare_layers(cfg, paths);
      std::printf("table written to %s\n",
                  (paths.reports() / "layer_comparison.csv").string().c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return c2ir::exit_code_for(e);
  }
  return 0;
}
