// Command-line front end. Talks to the library only through dem.h.
#include "dem/dem.h"

#include "CLI11.hpp"

#include <cstdio>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace {

struct Args {
  std::string config, checkpoint, out, reference, samples, sweep, resume;
  std::optional<unsigned long long> seed;
  std::optional<int> workers;
  std::optional<long long> n;
  std::vector<std::string> metrics;
  bool quiet = false;
};

int exit_code(dem_status s) {
  switch (s) {
    case DEM_OK: return 0;
    case DEM_ERR_CONFIG:
    case DEM_ERR_IO:
    case DEM_ERR_SHAPE_MISMATCH:
    case DEM_ERR_SIZE_MISMATCH:
    case DEM_ERR_DIMENSION_TOO_LARGE:
    case DEM_ERR_INVALID_ARGUMENT: return 2;
    case DEM_ERR_TRAINING_ABORTED:
    case DEM_ERR_CHAINS_OUT_OF_WINDOW: return 3;
    default: return 1;
  }
}

int run(const std::string& command, const Args& a) {
  dem_options* raw = nullptr;
  if (dem_options_create(&raw) != DEM_OK) {
    std::fprintf(stderr, "dem: %s\n", dem_last_error());
    return 1;
  }
  std::unique_ptr<dem_options, void (*)(dem_options*)> opts(raw, dem_options_destroy);

  std::vector<std::pair<std::string, std::string>> kv = {
      {"config", a.config},   {"checkpoint", a.checkpoint}, {"out", a.out},      {"reference", a.reference},
      {"samples", a.samples}, {"sweep", a.sweep},           {"resume", a.resume}};
  if (a.seed) kv.emplace_back("seed", std::to_string(*a.seed));
  if (a.workers) kv.emplace_back("workers", std::to_string(*a.workers));
  if (a.n) kv.emplace_back("n", std::to_string(*a.n));
  if (!a.metrics.empty()) {
    std::string joined;
    for (const auto& m : a.metrics) joined += (joined.empty() ? "" : ",") + m;
    kv.emplace_back("metrics", joined);
  }
  kv.emplace_back("verbose", a.quiet ? "0" : "1");

  for (const auto& [k, v] : kv) {
    if (v.empty()) continue;
    if (const dem_status s = dem_options_set(opts.get(), k.c_str(), v.c_str()); s != DEM_OK) {
      std::fprintf(stderr, "dem %s: %s\n", command.c_str(), dem_last_error());
      return exit_code(s);
    }
  }
  const dem_status s = dem_run_command(command.c_str(), opts.get());
  if (s != DEM_OK) std::fprintf(stderr, "dem %s: %s: %s\n", command.c_str(), dem_status_name(s), dem_last_error());
  return exit_code(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion sampler for Boltzmann densities trained by denoising energy matching"};
  app.set_version_flag("--version", std::string(dem_version()));
  app.require_subcommand(1);
  Args a;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--seed", a.seed, "Seed overriding run.seed");
    sub->add_option("--workers", a.workers, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--out", a.out, "Output file or directory");
    sub->add_flag("-q,--quiet", a.quiet, "No progress output");
  };

  auto* train = app.add_subcommand("train", "Train a sampler; writes a run directory");
  train->add_option("--config", a.config, "Config file")->check(CLI::ExistingFile);
  train->add_option("--resume", a.resume, "Continue from a checkpoint written with a saved buffer");
  common(train);

  auto* sample = app.add_subcommand("sample", "Draw reverse-SDE samples from a checkpoint");
  sample->add_option("--checkpoint", a.checkpoint, "Checkpoint file")->required();
  sample->add_option("-n,--n", a.n, "Number of samples");
  common(sample);

  auto* eval = app.add_subcommand("eval", "Metric report for a checkpoint or a sample file");
  eval->add_option("--checkpoint", a.checkpoint, "Checkpoint file");
  eval->add_option("--config", a.config, "Config file (when no checkpoint is given)");
  eval->add_option("--reference", a.reference, "Reference sample file");
  eval->add_option("--samples", a.samples, "Evaluate this sample file instead of sampling");
  eval->add_option("--metrics", a.metrics, "Subset of w2,tv,ess,log_z,mode_recall")->delimiter(',');
  eval->add_option("-n,--n", a.n, "Number of model samples");
  common(eval);

  auto* ablate = app.add_subcommand("ablate", "Estimator bias/MSE sweep and estimator comparison");
  ablate->add_option("--config", a.config, "Config file")->required();
  ablate->add_option("--sweep", a.sweep, "Sweep spec file")->required();
  common(ablate);

  auto* mcmc = app.add_subcommand("mcmc", "MALA reference set");
  mcmc->add_option("--config", a.config, "Config file")->required();
  common(mcmc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  for (auto* sub : app.get_subcommands()) return run(sub->get_name(), a);
  return 2;
}
