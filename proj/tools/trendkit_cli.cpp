// Batch driver: simulate | decompose | common-trends | report.
//
// Settings come from --config (key = value lines), then shorthand flags,
// then --set overrides, in that order.  Exit codes: 0 clean, 2 when any
// series failed (details in <out>/manifest.json), 1 on hard errors.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "trendkit/errors.hpp"
#include "trendkit/pipeline.hpp"

namespace {

struct CliOptions {
  std::string config_path;
  std::string input;
  std::string out;
  std::string format;
  std::string depths;
  std::string workers;
  std::string seed;
  std::vector<std::string> sets;
};

void add_common_options(CLI::App* cmd, CliOptions& o) {
  cmd->add_option("--config", o.config_path, "config file of key = value lines");
  cmd->add_option("--input", o.input, "input CSV path");
  cmd->add_option("--out", o.out, "output directory (default: out)");
  cmd->add_option("--format", o.format, "input format: grid-csv | panel-csv");
  cmd->add_option("--depths", o.depths, "comma-separated depths to process (default: all)");
  cmd->add_option("--workers", o.workers, "fit worker threads (0 = all cores)");
  cmd->add_option("--seed", o.seed, "RNG seed for simulate");
  cmd->add_option("--set", o.sets, "extra key=value override (repeatable)")
      ->take_all();
}

trendkit::RunConfig build_config(const CliOptions& o) {
  trendkit::RunConfig config = o.config_path.empty()
                                   ? trendkit::default_config()
                                   : trendkit::load_config_file(o.config_path);
  if (!o.input.empty()) trendkit::apply_config_setting(config, "input", o.input);
  if (!o.out.empty()) trendkit::apply_config_setting(config, "out", o.out);
  if (!o.format.empty()) trendkit::apply_config_setting(config, "format", o.format);
  if (!o.depths.empty()) trendkit::apply_config_setting(config, "depths", o.depths);
  if (!o.workers.empty()) trendkit::apply_config_setting(config, "workers", o.workers);
  if (!o.seed.empty()) trendkit::apply_config_setting(config, "seed", o.seed);
  for (const std::string& kv : o.sets) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw trendkit::DataError("--set expects key=value, got '" + kv + "'");
    trendkit::apply_config_setting(config, kv.substr(0, eq), kv.substr(eq + 1));
  }
  return config;
}

int finish(const trendkit::RunReport& report) {
  for (const std::string& note : report.notes) std::cout << note << "\n";
  if (!report.ok()) {
    for (const trendkit::SeriesFailure& f : report.failures) {
      std::cerr << "failed:";
      if (!f.depth.empty()) std::cerr << " depth " << f.depth;
      std::cerr << " " << f.id << ": " << f.message << "\n";
    }
    std::fprintf(stderr, "%zu series failed (%.1fs); see manifest.json\n",
                 report.failures.size(), report.wall_seconds);
    return 2;
  }
  std::printf("ok (%.1fs)\n", report.wall_seconds);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"structural decomposition and common-trend extraction for gridded monthly series"};
  app.require_subcommand(1);
  CliOptions options;

  CLI::App* sim = app.add_subcommand("simulate", "write a synthetic gridded CSV plus truth files");
  CLI::App* dec = app.add_subcommand("decompose", "box-average the input and fit every series");
  CLI::App* com =
      app.add_subcommand("common-trends", "identify trends shared across the series panel");
  CLI::App* rep = app.add_subcommand("report", "change-point and stratification reports");
  for (CLI::App* cmd : {sim, dec, com, rep}) add_common_options(cmd, options);

  CLI11_PARSE(app, argc, argv);

  try {
    const trendkit::RunConfig config = build_config(options);
    trendkit::RunReport report;
    if (sim->parsed()) report = trendkit::run_simulate(config);
    else if (dec->parsed()) report = trendkit::run_decompose(config);
    else if (com->parsed()) report = trendkit::run_common_trends(config);
    else report = trendkit::run_report(config);
    return finish(report);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
