// vibnorm run <config.json> [--out dir] [--threads N] [--mode fast|reference|both]
// vibnorm bench <config.json> [--out dir] [--threads N]

#include <CLI11.hpp>

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "vibnorm/parallel.hpp"
#include "vibnorm/report.hpp"

namespace {

// Exit codes: 0 all rows ok, 1 some row failed, 2 configuration error.
constexpr int kRowFailure = 1;
constexpr int kConfigFailure = 2;

#ifdef VIBNORM_OPENBLAS_CORETYPE
// OpenBLAS picks its kernels when the library is loaded, so the override has
// to be in the environment before the process starts: re-exec once.
void pin_openblas_coretype(char** argv) {
  if (std::getenv("OPENBLAS_CORETYPE") != nullptr) return;
  ::setenv("OPENBLAS_CORETYPE", VIBNORM_OPENBLAS_CORETYPE, 1);
  ::execv("/proc/self/exe", argv);
}
#endif

int resolve_threads(std::optional<int> flag, int config_threads) {
  if (flag) return *flag;
  return vibnorm::threads_from_env(config_threads);
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw vibnorm::ConfigError("cannot write '" + path.string() + "'");
  out << text;
}

std::filesystem::path output_path(const std::string& out_dir, const std::string& name) {
  std::filesystem::path dir = out_dir.empty() ? std::filesystem::path(".") : std::filesystem::path(out_dir);
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

int main(int argc, char** argv) {
#ifdef VIBNORM_OPENBLAS_CORETYPE
  pin_openblas_coretype(argv);
#endif
  CLI::App app{"finite time horizon p-mixed H2 norm of damped vibrational systems"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::optional<int> threads;
  std::string mode;

  auto* run_cmd = app.add_subcommand("run", "evaluate the configured sweeps and write a CSV report");
  run_cmd->add_option("config", config_path, "JSON run configuration")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--out", out_dir, "output directory (default: current directory)");
  run_cmd->add_option("--threads", threads, "worker threads (overrides VIBNORM_THREADS and the config)")
      ->check(CLI::PositiveNumber);
  run_cmd->add_option("--mode", mode, "fast, reference or both")
      ->check(CLI::IsMember({"fast", "reference", "both"}));

  auto* bench_cmd = app.add_subcommand("bench", "time the fast path against the reference");
  bench_cmd->add_option("config", config_path, "JSON run configuration")->required()->check(CLI::ExistingFile);
  bench_cmd->add_option("--out", out_dir, "output directory (default: current directory)");
  bench_cmd->add_option("--threads", threads, "worker threads (overrides VIBNORM_THREADS and the config)")
      ->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  vibnorm::RunConfig cfg;
  try {
    cfg = vibnorm::load_config(config_path);
  } catch (const vibnorm::ConfigError& e) {
    std::cerr << e.what() << '\n';
    return kConfigFailure;
  }

  try {
    const int n_threads = resolve_threads(threads, cfg.threads);
    if (run_cmd->parsed()) {
      vibnorm::RunOptions opt;
      opt.threads = n_threads;
      if (!mode.empty()) opt.mode = vibnorm::parse_mode(mode);
      const vibnorm::SweepReport report = vibnorm::run(cfg, opt);
      const auto csv = output_path(out_dir, cfg.output);
      write_file(csv, vibnorm::to_csv(report));
      const std::string summary = vibnorm::format_summary(report, cfg.drop_factor);
      write_file(csv.parent_path() / (csv.stem().string() + "_summary.txt"), summary);
      std::cout << summary << "csv: " << csv.string() << '\n';
      return report.ok() ? 0 : kRowFailure;
    }
    const vibnorm::BenchmarkReport bench = vibnorm::benchmark(cfg, n_threads);
    const auto csv = output_path(out_dir, cfg.output);
    write_file(csv, vibnorm::to_csv(bench.sweep));
    const std::string text = vibnorm::format_benchmark(bench);
    write_file(csv.parent_path() / (csv.stem().string() + "_bench.txt"), text);
    std::cout << text << "csv: " << csv.string() << '\n';
    return bench.sweep.ok() ? 0 : kRowFailure;
  } catch (const vibnorm::ConfigError& e) {
    std::cerr << e.what() << '\n';
    return kConfigFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRowFailure;
  }
}
