#include <CLI11.hpp>

#include "fedbench/fedbench.hpp"

int main(int argc, char** argv) {
  CLI::App app{"fedbench: federated learning benchmark simulator"};
  app.require_subcommand(1);
  fedbench::CliOptions opt;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", opt.out, "output JSONL path (overrides config output)");
    sub->add_option("--jobs", opt.jobs, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--durations", opt.durations, "measured or simulated")
        ->check(CLI::IsMember({"measured", "simulated"}));
  };
  auto* run = app.add_subcommand("run", "one experiment -> one ACTPR record");
  common(run);
  auto* sweep = app.add_subcommand("sweep", "grid over B, C, E, lr, optimizer, k");
  common(sweep);
  auto* attack = app.add_subcommand("attack", "FC / DLG gradient inversion campaign");
  common(attack);
  attack->add_flag("--dump-images", opt.dump_images, "write truth_<i>.pgm / recon_<i>.pgm per cell");
  auto* baselines = app.add_subcommand("baselines", "LocalAcc and CentralAcc only");
  common(baselines);
  auto* report = app.add_subcommand("report", "render JSONL records as CSV");
  report->add_option("input", opt.input, "records JSONL")->required();
  report->add_option("--out", opt.out, "CSV path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : fedbench::kExitUsage;
  }

  if (*run) return fedbench::cmd_run(opt);
  if (*sweep) return fedbench::cmd_sweep(opt);
  if (*attack) return fedbench::cmd_attack(opt);
  if (*baselines) return fedbench::cmd_baselines(opt);
  return fedbench::cmd_report(opt);
}
