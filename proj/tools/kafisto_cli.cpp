// kafisto: run, sweep and plot optimizer experiments.
//
//   kafisto run <config.yaml> [--out DIR] [--seed N] [--quiet]
//   kafisto sweep <config-dir> [--out DIR] [--seed N] [--quiet] [--jobs N]
//   kafisto plot <metrics.csv> <column> [--out FILE] [--log]

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "kafisto/harness/config.hpp"
#include "kafisto/harness/metrics.hpp"
#include "kafisto/harness/runner.hpp"

namespace fs = std::filesystem;
using namespace kafisto::harness;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct Overrides {
  std::string out;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

RunConfig load_with_overrides(const fs::path& path, const Overrides& ov) {
  RunConfig cfg;
  try {
    cfg = load_config(read_file(path));
  } catch (const ConfigError& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  if (ov.seed) {
    // Re-derive the data seed from the overriding master seed.
    cfg.seed = *ov.seed;
    cfg.objective.seed = kafisto::derive_seed(cfg.seed, "data");
  }
  if (cfg.name == "run") cfg.name = path.stem().string();
  return cfg;
}

std::string summary_line(const RunConfig& cfg, const RunResult& res) {
  std::ostringstream s;
  s << cfg.name << ": " << to_string(cfg.optimizer) << ", " << res.table.rows.size() << " iterations";
  if (res.diverged()) {
    s << ", DIVERGED (" << *res.divergence << ")";
  } else {
    s << ", final loss " << format_real(res.final_full_loss);
  }
  if (res.final_accuracy) s << ", accuracy " << format_real(*res.final_accuracy);
  if (res.final_distance) s << ", distance to optimum " << format_real(*res.final_distance);
  return s.str();
}

int cmd_run(const fs::path& config, const Overrides& ov) {
  const RunConfig cfg = load_with_overrides(config, ov);
  const RunResult res = run_experiment(cfg);
  fs::path out = ov.out.empty() ? (cfg.output_dir.empty() ? fs::path("out") / cfg.name : fs::path(cfg.output_dir))
                                : fs::path(ov.out);
  write_outputs(res, out);
  if (!ov.quiet) {
    std::cout << summary_line(cfg, res) << "\n";
    std::cout << "wrote " << (out / "metrics.csv").string() << "\n";
  }
  return 0;
}

int cmd_sweep(const fs::path& dir, const Overrides& ov, unsigned jobs) {
  if (!fs::is_directory(dir)) throw std::runtime_error(dir.string() + " is not a directory");
  std::vector<fs::path> configs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto ext = entry.path().extension();
    if (entry.is_regular_file() && (ext == ".yaml" || ext == ".yml")) configs.push_back(entry.path());
  }
  std::sort(configs.begin(), configs.end());
  if (configs.empty()) throw std::runtime_error("no .yaml configs in " + dir.string());

  const fs::path out_root = ov.out.empty() ? fs::path("out") / dir.filename() : fs::path(ov.out);
  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());

  struct Outcome {
    RunConfig cfg;
    RunResult res;
  };
  std::vector<Outcome> outcomes(configs.size());
  std::vector<RunConfig> cfgs;
  for (const auto& c : configs) cfgs.push_back(load_with_overrides(c, ov));

  // Each task owns its config, objective and RNG streams.
  for (std::size_t start = 0; start < cfgs.size(); start += jobs) {
    std::vector<std::future<RunResult>> batch;
    const std::size_t end = std::min(cfgs.size(), start + jobs);
    for (std::size_t i = start; i < end; ++i) {
      batch.push_back(std::async(std::launch::async, [cfg = cfgs[i]] { return run_experiment(cfg); }));
    }
    for (std::size_t i = start; i < end; ++i) {
      outcomes[i] = {cfgs[i], batch[i - start].get()};
      write_outputs(outcomes[i].res, out_root / outcomes[i].cfg.name);
      if (!ov.quiet) std::cout << summary_line(outcomes[i].cfg, outcomes[i].res) << "\n";
    }
  }

  std::ostringstream summary;
  summary << "name,optimizer,iterations,diverged,final_full_loss,final_accuracy,final_distance\n";
  for (const auto& o : outcomes) {
    summary << o.cfg.name << ',' << to_string(o.cfg.optimizer) << ',' << o.res.table.rows.size() << ','
            << (o.res.diverged() ? 1 : 0) << ',' << format_real(o.res.final_full_loss) << ','
            << (o.res.final_accuracy ? format_real(*o.res.final_accuracy) : "") << ','
            << (o.res.final_distance ? format_real(*o.res.final_distance) : "") << '\n';
  }
  fs::create_directories(out_root);
  std::ofstream(out_root / "summary.csv", std::ios::binary) << summary.str();
  if (!ov.quiet) std::cout << "wrote " << (out_root / "summary.csv").string() << "\n";
  return 0;
}

int cmd_plot(const fs::path& csv, const std::string& column, const std::string& out, bool log_scale,
             bool quiet) {
  const MetricsTable table = parse_csv(read_file(csv));
  const std::string svg = emit_plot(table, column, {.log_scale = log_scale});
  fs::path target = out.empty() ? csv.parent_path() / (csv.stem().string() + "_" + column + ".svg")
                                : fs::path(out);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  std::ofstream f(target, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + target.string());
  f << svg;
  if (!quiet) std::cout << "wrote " << target.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KaFiStO optimizer experiments"};
  app.require_subcommand(1);

  Overrides ov;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--out", ov.out, "Output directory (file for plot)");
    sub->add_option("--seed", seed, "Override the config's master seed");
    sub->add_flag("--quiet", ov.quiet, "Suppress progress output");
  };

  std::string run_config;
  auto* run = app.add_subcommand("run", "Run one experiment config");
  run->add_option("config", run_config, "YAML config path")->required();
  add_common(run);

  std::string sweep_dir;
  unsigned jobs = 0;
  auto* sweep = app.add_subcommand("sweep", "Run every config in a directory");
  sweep->add_option("config-dir", sweep_dir, "Directory of YAML configs")->required();
  sweep->add_option("--jobs", jobs, "Parallel runs (default: hardware threads)");
  add_common(sweep);

  std::string csv_path, column;
  bool log_scale = false;
  auto* plot = app.add_subcommand("plot", "Render one metrics column as SVG");
  plot->add_option("csv", csv_path, "metrics.csv path")->required();
  plot->add_option("column", column, "Column name")->required();
  plot->add_flag("--log", log_scale, "Logarithmic vertical axis");
  add_common(plot);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->count("--seed") || sweep->count("--seed")) ov.seed = seed;
    if (*run) return cmd_run(run_config, ov);
    if (*sweep) return cmd_sweep(sweep_dir, ov, jobs);
    if (*plot) return cmd_plot(csv_path, column, ov.out, log_scale, ov.quiet);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
