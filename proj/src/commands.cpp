#include "dem/commands.hpp"

#include "dem/binary_io.hpp"
#include "dem/metrics.hpp"
#include "dem/symmetry.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace dem {

namespace {

void say(const CommandOptions& opt, const std::string& line) {
  if (opt.log) opt.log(line);
}

ConfigMap cli_overrides(const CommandOptions& opt) {
  ConfigMap o;
  if (opt.seed) o["run.seed"] = ConfigEntry{std::to_string(*opt.seed), 0};
  if (opt.workers) o["run.workers"] = ConfigEntry{std::to_string(*opt.workers), 0};
  return o;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(Errc::Io, "failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void make_dirs(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw Error(Errc::Io, "cannot create directory " + p.string() + ": " + ec.message());
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

// Config stored with a checkpoint; the seed there is the training seed.
RunConfig config_from_checkpoint(const Checkpoint& ck) {
  if (!ck.meta.contains("config")) throw Error(Errc::Io, "checkpoint carries no config");
  return resolve_config(parse_config_text(ck.meta.at("config").get<std::string>(), "<checkpoint config>"));
}

Checkpoint load_checked(const std::string& path) {
  if (path.empty()) throw Error(Errc::Config, "a --checkpoint is required");
  try {
    return load_checkpoint(path);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(Errc::Io, "unreadable checkpoint " + path + ": " + e.what());
  }
}

Mat finite_columns(const Mat& x, std::size_t* dropped) {
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    if (x.col(j).allFinite()) keep.push_back(j);
  if (dropped) *dropped = static_cast<std::size_t>(x.cols()) - keep.size();
  Mat out(x.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t i = 0; i < keep.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = x.col(keep[i]);
  return out;
}

json sidecar(const RunConfig& cfg, const Trainer& tr, const std::string& buffer_file) {
  const auto c = tr.counters();
  json j;
  j["config"] = cfg.resolved_text;
  j["seed"] = cfg.seed;
  j["task"] = cfg.task;
  j["global_step"] = c.global_step;
  j["outer_done"] = c.outer_done;
  j["drops"] = c.drops;
  j["seeded"] = c.seeded;
  j["bad_outer_streak"] = c.bad_outer_streak;
  j["last_loss"] = c.last_loss;
  j["buffer"] = buffer_file.empty() ? json(nullptr) : json(buffer_file);
  return j;
}

void write_checkpoint(const fs::path& dir, const std::string& stem, const RunConfig& cfg, Trainer& tr) {
  std::string buffer_file;
  if (cfg.save_buffer) {
    buffer_file = stem + ".buffer.bin";
    save_array((dir / buffer_file).string(), tr.buffer().contents(), json{{"kind", "replay_buffer"}});
  }
  const json meta = sidecar(cfg, tr, buffer_file);
  save_checkpoint((dir / (stem + ".ckpt")).string(), tr.net(), meta, &tr.optimizer());
  write_text(dir / (stem + ".json"), meta.dump(2) + "\n");
}

// Keeps the header and the rows whose first column is below `step`.
std::string truncate_csv(const fs::path& path, long long step) {
  if (!fs::exists(path)) return "";
  std::istringstream in(read_text(path));
  std::string line, out;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      out += line + "\n";
      header = false;
      continue;
    }
    if (line.empty()) continue;
    if (std::stoll(line.substr(0, line.find(','))) < step) out += line + "\n";
  }
  return out;
}

std::optional<Mat> default_reference(const RunConfig& cfg, std::size_t n, std::uint64_t seed) {
  if (!cfg.eval.reference.empty()) return load_array(cfg.eval.reference).rows;
  const TargetPtr raw = make_raw_target(cfg);
  if (!raw->has_exact_sampler()) return std::nullopt;
  Rng rng(derive_seed(seed, streams::kEval, 1));
  return raw->sample_exact(n, rng);
}

// k columns spread evenly over x; pooled reference sets are ordered by chain,
// so a prefix would come from a few chains only.
Mat strided_subset(const Mat& x, Eigen::Index k) {
  Mat out(x.rows(), k);
  for (Eigen::Index i = 0; i < k; ++i) out.col(i) = x.col(i * x.cols() / k);
  return out;
}

int effective_dim(const Target& t) {
  if (t.particles()) return (t.particles()->n_particles - 1) * t.particles()->space_dim;
  return t.dim();
}

}  // namespace

std::string default_run_dir(const RunConfig& cfg) {
  const char* root = std::getenv("DEM_RUN_ROOT");
  const fs::path base = root && *root ? fs::path(root) : fs::path("runs");
  const std::time_t now = std::time(nullptr);
  std::tm utc{};
  gmtime_r(&now, &utc);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &utc);
  const std::string name = cfg.task + "_s" + std::to_string(cfg.seed) + "_" + stamp;
  fs::path p = base / name;
  for (int i = 1; fs::exists(p); ++i) p = base / (name + "-" + std::to_string(i));
  return p.string();
}

Mat generate_samples(const RunConfig& cfg, const ScoreNet& net, std::size_t n, std::uint64_t seed,
                     std::size_t* n_diverged) {
  const TargetPtr target = make_target(cfg);
  Rng rng(derive_seed(seed, streams::kSample));
  const Mat x1 = prior_sample(cfg.train.schedule, target->dim(), n, rng, target->particles());
  const ReverseResult res =
      integrate_reverse_batch(cfg.train.schedule, cfg.train.integrator, pinned_field(net, target, cfg.train.t_pin), x1,
                              derive_seed(seed, streams::kSample, 1), target->particles());
  if (n_diverged) *n_diverged = res.n_diverged();
  return res.x * cfg.scale;
}

json evaluate_samples(const RunConfig& cfg, const Mat& samples_in, const Mat* reference, const ScoreNet* net,
                      const std::vector<std::string>& metrics, long long step, std::uint64_t seed) {
  const TargetPtr raw = make_raw_target(cfg);
  if (samples_in.rows() != raw->dim())
    throw Error(Errc::ShapeMismatch, "samples have dimension " + std::to_string(samples_in.rows()) + ", target has " +
                                         std::to_string(raw->dim()));
  if (reference && reference->rows() != raw->dim())
    throw Error(Errc::ShapeMismatch, "reference has dimension " + std::to_string(reference->rows()) +
                                         ", target has " + std::to_string(raw->dim()));
  std::size_t dropped = 0;
  const Mat samples = finite_columns(samples_in, &dropped);

  json r;
  r["task"] = cfg.task;
  r["step"] = step;
  r["n_samples"] = samples.cols();
  r["seed"] = seed;
  if (dropped) r["n_nonfinite"] = dropped;

  auto need_reference = [&](const std::string& m) {
    if (!reference) throw Error(Errc::Config, "metric '" + m + "' needs a reference set");
  };
  std::optional<Vec> log_q;
  auto model_log_density = [&]() -> const Vec& {
    if (!net) throw Error(Errc::Config, "ess and log_z need a checkpoint");
    if (!log_q) {
      const TargetPtr scaled = make_target(cfg);
      const Mat xs = samples / cfg.scale;
      log_q = logdensity_pf_ode_batch(cfg.train.schedule, pinned_field(*net, scaled, cfg.train.t_pin), xs,
                                      cfg.eval.pf_ode_steps, scaled->particles());
      log_q->array() -= effective_dim(*raw) * std::log(cfg.scale);
    }
    return *log_q;
  };

  for (const auto& m : metrics) {
    if (m == "w2") {
      need_reference(m);
      const Eigen::Index k = std::min({samples.cols(), reference->cols(), kW2MaxPoints});
      r["w2"] = k == 0 ? 0.0 : wasserstein2(strided_subset(samples, k), strided_subset(*reference, k));
    } else if (m == "tv") {
      need_reference(m);
      const HistRange range{cfg.eval.tv_lo, cfg.eval.tv_hi};
      if (raw->particles()) r["tv"] = tv_interatomic(samples, *reference, *raw->particles(), cfg.eval.tv_bins, range);
      else r["tv"] = tv_grid(samples, *reference, cfg.eval.tv_bins, range);
    } else if (m == "mode_recall") {
      const auto* gmm = dynamic_cast<const GmmTarget*>(raw.get());
      if (!gmm) throw Error(Errc::Config, "mode_recall is only defined for the gmm task");
      const double radius = cfg.eval.mode_radius > 0.0 ? cfg.eval.mode_radius : 3.0 * std::sqrt(gmm->spec().variance);
      r["mode_recall"] = mode_recall(gmm->spec().means, samples, radius);
    } else if (m == "ess") {
      const Vec& lq = model_log_density();
      std::vector<double> lw(static_cast<std::size_t>(samples.cols()));
      for (Eigen::Index j = 0; j < samples.cols(); ++j) {
        double e = 0.0;
        lw[static_cast<std::size_t>(j)] = raw->try_eval(samples.col(j), e, nullptr)
                                              ? -e - lq(j)
                                              : -std::numeric_limits<double>::infinity();
      }
      r["ess"] = ess_normalized(lw);
    } else if (m == "log_z") {
      const Vec& lq = model_log_density();
      const LogZEstimate z = log_z_lower(*raw, samples, std::vector<double>(lq.data(), lq.data() + lq.size()));
      r["log_z_lower"] = z.value;
      if (z.n_dropped) r["log_z_dropped"] = z.n_dropped;
    } else {
      throw Error(Errc::Config, "unknown metric '" + m + "'");
    }
  }
  return r;
}

// ---------------------------------------------------------------------------

void cmd_train(const CommandOptions& opt) {
  std::optional<Checkpoint> resume;
  RunConfig cfg;
  if (!opt.resume.empty()) {
    resume = load_checked(opt.resume);
    cfg = config_from_checkpoint(*resume);
  } else {
    if (opt.config.empty()) throw Error(Errc::Config, "a --config is required");
    cfg = load_run_config(opt.config, cli_overrides(opt));
  }

  fs::path dir;
  if (!opt.out.empty()) dir = opt.out;
  else if (resume) dir = fs::path(opt.resume).parent_path().parent_path();
  else dir = default_run_dir(cfg);
  const fs::path ckdir = dir / "checkpoints";
  make_dirs(ckdir);
  write_text(dir / "config.resolved.ini", cfg.resolved_text);

  const TargetPtr target = make_target(cfg);
  Trainer tr(cfg.train, target, resume ? std::move(resume->net) : ScoreNet::create(cfg.arch, cfg.seed));
  if (resume) {
    const json& m = resume->meta;
    if (!resume->optimizer) throw Error(Errc::Io, "checkpoint has no optimizer state");
    if (m.at("buffer").is_null())
      throw Error(Errc::Config, "resuming needs a checkpoint written with trainer.save_buffer = true");
    const fs::path buf = fs::path(opt.resume).parent_path() / m.at("buffer").get<std::string>();
    tr.buffer().push(load_array(buf.string()).rows);
    Trainer::Counters c;
    c.global_step = m.at("global_step").get<long long>();
    c.outer_done = m.at("outer_done").get<long long>();
    c.drops = m.at("drops").get<std::size_t>();
    c.seeded = m.at("seeded").get<bool>();
    c.bad_outer_streak = m.at("bad_outer_streak").get<int>();
    c.last_loss = m.at("last_loss").get<double>();
    tr.restore(*resume->optimizer, c);
    say(opt, "resuming at step " + std::to_string(c.global_step) + " (outer " + std::to_string(c.outer_done) + ")");
  }

  const std::string metrics_header = "step,outer,loss,buffer_size,drop_count,clipped,skipped\n";
  const std::string timing_header = "step,wall_seconds\n";
  std::string kept_metrics = metrics_header, kept_timing = timing_header;
  if (resume) {
    const long long from = tr.global_step();
    if (auto t = truncate_csv(dir / "metrics.csv", from); !t.empty()) kept_metrics = t;
    if (auto t = truncate_csv(dir / "timing.csv", from); !t.empty()) kept_timing = t;
  }
  std::ofstream metrics(dir / "metrics.csv", std::ios::trunc);
  std::ofstream timing(dir / "timing.csv", std::ios::trunc);
  if (!metrics || !timing) throw Error(Errc::Io, "cannot write metrics in " + dir.string());
  metrics << kept_metrics;
  timing << kept_timing;

  say(opt, "run directory " + dir.string());
  const auto t0 = std::chrono::steady_clock::now();
  auto on_step = [&](const StepRecord& r) {
    metrics << r.step << ',' << r.outer << ',' << fmt(r.loss) << ',' << r.buffer_size << ',' << r.drop_count << ','
            << r.clipped << ',' << (r.skipped ? 1 : 0) << '\n';
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    timing << r.step << ',' << std::fixed << std::setprecision(3) << wall << std::defaultfloat << '\n';
    if ((r.step + 1) % 100 == 0)
      say(opt, "step " + std::to_string(r.step + 1) + " loss " + fmt(r.loss) + " buffer " +
                   std::to_string(r.buffer_size));
  };
  auto on_outer = [&](const Trainer& t) {
    if (cfg.checkpoint_every > 0 && t.outer_done() % cfg.checkpoint_every == 0) {
      metrics.flush();
      write_checkpoint(ckdir, "outer_" + std::to_string(t.outer_done()), cfg, tr);
    }
  };
  try {
    tr.train(on_step, on_outer);
  } catch (const Error& e) {
    metrics.flush();
    if (e.code() == Errc::TrainingAborted) write_checkpoint(ckdir, "aborted", cfg, tr);
    throw;
  }
  metrics.flush();
  timing.flush();
  write_checkpoint(ckdir, "final", cfg, tr);

  // final evaluation
  const std::uint64_t eval_seed = derive_seed(cfg.seed, streams::kEval);
  std::size_t diverged = 0;
  const Mat samples = generate_samples(cfg, tr.net(), cfg.eval.n_samples, eval_seed, &diverged);
  save_array((dir / "samples.bin").string(), samples,
             json{{"task", cfg.task}, {"seed", cfg.seed}, {"step", tr.global_step()}, {"n_diverged", diverged}});
  const auto reference = default_reference(cfg, cfg.eval.n_samples, cfg.seed);
  std::vector<std::string> wanted;
  const TargetPtr raw = make_raw_target(cfg);
  for (const auto& m : cfg.eval.metrics) {
    if ((m == "w2" || m == "tv") && !reference) {
      say(opt, "skipping " + m + ": no reference set configured");
      continue;
    }
    if ((m == "ess" || m == "log_z") && effective_dim(*raw) > kPfOdeMaxDim) {
      say(opt, "skipping " + m + ": dimension too large for the probability-flow density");
      continue;
    }
    wanted.push_back(m);
  }
  json report = evaluate_samples(cfg, samples, reference ? &*reference : nullptr, &tr.net(), wanted,
                                 tr.global_step(), cfg.seed);
  write_text(dir / "eval.json", report.dump(2) + "\n");
  say(opt, "eval " + report.dump());
}

void cmd_sample(const CommandOptions& opt) {
  Checkpoint ck = load_checked(opt.checkpoint);
  const RunConfig cfg = config_from_checkpoint(ck);
  const long long n = opt.n.value_or(static_cast<long long>(cfg.eval.n_samples));
  if (n < 0) throw Error(Errc::Config, "sample count must be nonnegative");
  const std::uint64_t seed = opt.seed.value_or(cfg.seed);
  const std::string out = opt.out.empty() ? "samples.bin" : opt.out;
  std::size_t diverged = 0;
  const Mat samples = generate_samples(cfg, *ck.net, static_cast<std::size_t>(n), seed, &diverged);
  json meta{{"task", cfg.task},
            {"seed", seed},
            {"checkpoint", fs::path(opt.checkpoint).filename().string()},
            {"step", ck.meta.value("global_step", 0LL)},
            {"n_diverged", diverged}};
  if (const auto& p = make_raw_target(cfg)->particles())
    meta["particles"] = {{"n_particles", p->n_particles}, {"space_dim", p->space_dim}};
  save_array(out, samples, meta);
  say(opt, "wrote " + std::to_string(n) + " samples to " + out);
}

void cmd_eval(const CommandOptions& opt) {
  std::optional<Checkpoint> ck;
  RunConfig cfg;
  if (!opt.checkpoint.empty()) {
    ck = load_checked(opt.checkpoint);
    cfg = opt.config.empty() ? config_from_checkpoint(*ck) : load_run_config(opt.config, cli_overrides(opt));
  } else {
    if (opt.config.empty()) throw Error(Errc::Config, "eval needs --checkpoint or --config");
    cfg = load_run_config(opt.config, cli_overrides(opt));
  }
  const std::uint64_t seed = opt.seed.value_or(cfg.seed);

  std::optional<Mat> reference;
  const std::string ref_path = !opt.reference.empty() ? opt.reference : cfg.eval.reference;
  if (!ref_path.empty()) {
    if (!fs::exists(ref_path)) throw Error(Errc::Io, "reference file not found: " + ref_path);
    reference = load_array(ref_path).rows;
  }

  Mat samples;
  if (!opt.samples.empty()) {
    samples = load_array(opt.samples).rows;
  } else {
    if (!ck) throw Error(Errc::Config, "eval needs --samples or --checkpoint");
    const long long n = opt.n.value_or(reference ? static_cast<long long>(reference->cols())
                                                 : static_cast<long long>(cfg.eval.n_samples));
    samples = generate_samples(cfg, *ck->net, static_cast<std::size_t>(std::max(0LL, n)), derive_seed(seed, streams::kEval));
  }
  if (!reference && (std::find(opt.metrics.begin(), opt.metrics.end(), "w2") != opt.metrics.end() ||
                     std::find(opt.metrics.begin(), opt.metrics.end(), "tv") != opt.metrics.end())) {
    if (auto r = default_reference(cfg, static_cast<std::size_t>(samples.cols()), seed)) reference = std::move(*r);
  }
  const std::vector<std::string>& metrics = opt.metrics.empty() ? cfg.eval.metrics : opt.metrics;
  const long long step = ck ? ck->meta.value("global_step", 0LL) : 0LL;
  const json report =
      evaluate_samples(cfg, samples, reference ? &*reference : nullptr, ck ? ck->net.get() : nullptr, metrics, step, seed);
  if (opt.out.empty()) std::cout << report.dump(2) << std::endl;
  else write_text(opt.out, report.dump(2) + "\n");
}

void cmd_ablate(const CommandOptions& opt) {
  if (opt.config.empty()) throw Error(Errc::Config, "a --config is required");
  if (opt.sweep.empty()) throw Error(Errc::Config, "a --sweep spec is required");
  const RunConfig cfg = load_run_config(opt.config, cli_overrides(opt));
  const SweepSpec sp = load_sweep_spec(opt.sweep);
  const TargetPtr target = make_target(cfg);
  if (!target->has_convolved_score())
    throw Error(Errc::InvalidArgument, "target '" + cfg.task + "' has no exact noised score to compare against");

  const fs::path dir = opt.out.empty() ? fs::path("ablate_" + cfg.task + "_s" + std::to_string(cfg.seed)) : fs::path(opt.out);
  make_dirs(dir);
  write_text(dir / "config.resolved.ini", cfg.resolved_text);

  Rng rng(derive_seed(cfg.seed, streams::kAblate));
  Mat points(target->dim(), sp.n_points);
  rng.fill_normal(points);
  points *= sp.point_scale;
  if (target->particles()) project_mean_free_columns(points, *target->particles());

  auto sweep = [&](const Target& t, EstimatorKind kind, std::uint64_t s) {
    if (!sp.sigma_values.empty()) return bias_mse_sweep_sigma(t, points, sp.sigma_values, sp.k_values, sp.repeats, s, kind);
    return bias_mse_sweep(t, points, sp.t_values, cfg.train.schedule, sp.k_values, sp.repeats, s, kind);
  };

  {
    const auto rows = sweep(*target, EstimatorKind::LogSumExp, derive_seed(cfg.seed, streams::kAblate, 1));
    std::ofstream out(dir / "bias_mse.csv", std::ios::trunc);
    if (!out) throw Error(Errc::Io, "cannot write bias_mse.csv");
    write_sweep_csv(out, rows);
    say(opt, "bias_mse.csv: " + std::to_string(rows.size()) + " rows");
  }

  const TargetPtr probe =
      sp.probe_energy_shift != 0.0 ? std::make_shared<ShiftedTarget>(target, sp.probe_energy_shift) : target;
  std::ofstream cmp(dir / "estimator_comparison.csv", std::ios::trunc);
  if (!cmp) throw Error(Errc::Io, "cannot write estimator_comparison.csv");
  cmp << "estimator,dim,t,sigma,k,point,bias_sq,mse,cosine,nan_rate,n_repeats\n";
  json summary = json::object();
  for (std::size_t i = 0; i < sp.kinds.size(); ++i) {
    const EstimatorKind kind = sp.kinds[i];
    const auto rows = sweep(*probe, kind, derive_seed(cfg.seed, streams::kAblate, 2 + i));
    std::map<int, std::pair<double, int>> per_k;
    for (const auto& r : rows) {
      cmp << to_string(kind) << ',' << r.dim << ',' << fmt(r.t) << ',' << fmt(r.sigma) << ',' << r.k << ',' << r.point
          << ',' << fmt(r.bias_sq) << ',' << fmt(r.mse) << ',' << fmt(r.cosine) << ','
          << fmt(static_cast<double>(r.n_nonfinite) / r.n_repeats) << ',' << r.n_repeats << '\n';
      if (std::isfinite(r.bias_sq)) {
        per_k[r.k].first += r.bias_sq;
        per_k[r.k].second += 1;
      }
    }
    std::vector<double> ks, bias;
    for (const auto& [k, acc] : per_k)
      if (acc.second > 0 && acc.first > 0.0) {
        ks.push_back(k);
        bias.push_back(acc.first / acc.second);
      }
    json entry{{"mean_bias_sq", bias}, {"k", ks}};
    entry["loglog_slope"] = ks.size() >= 2 ? json(loglog_slope(ks, bias)) : json(nullptr);
    summary[to_string(kind)] = entry;
  }
  write_text(dir / "summary.json", summary.dump(2) + "\n");
}

void cmd_mcmc(const CommandOptions& opt) {
  if (opt.config.empty()) throw Error(Errc::Config, "a --config is required");
  const RunConfig cfg = load_run_config(opt.config, cli_overrides(opt));
  if (cfg.mcmc.n_steps == 0) throw Error(Errc::Config, "mcmc.n_steps must be positive");
  try {
    cfg.mcmc.validate();
  } catch (const Error& e) {
    throw Error(Errc::Config, std::string("mcmc: ") + e.what());
  }
  const TargetPtr raw = make_raw_target(cfg);
  const fs::path dir = opt.out.empty() ? fs::path(default_run_dir(cfg) + "_mcmc") : fs::path(opt.out);
  make_dirs(dir);
  write_text(dir / "config.resolved.ini", cfg.resolved_text);

  const ChainResult res = run_chains(*raw, cfg.mcmc);
  json meta{{"target", raw->name()},
            {"task", cfg.task},
            {"seed", cfg.seed},
            {"step_size", res.step_size},
            {"n_chains", cfg.mcmc.n_chains},
            {"config", cfg.resolved_text}};
  save_array((dir / "reference.bin").string(), res.samples, meta);

  std::ofstream acc(dir / "acceptance.csv", std::ios::trunc);
  if (!acc) throw Error(Errc::Io, "cannot write acceptance.csv");
  acc << "chain,acceptance,in_window\n";
  for (std::size_t c = 0; c < res.acceptance.size(); ++c) {
    const double a = res.acceptance[c];
    acc << c << ',' << fmt(a) << ',' << (a >= 0.2 && a <= 0.8 ? 1 : 0) << '\n';
  }
  acc.close();

  json log{{"step_size", res.step_size},
           {"n_samples", res.samples.cols()},
           {"chains_in_window", res.chains_in_window()},
           {"warnings", res.warnings}};
  if (auto* g = dynamic_cast<const GaussianOracle*>(raw.get()); g && res.samples.cols() > 1) {
    // unit Gaussian: per-coordinate mean 0 and variance 1
    const Vec mean = res.samples.rowwise().mean();
    const Mat centered = res.samples.colwise() - mean;
    const Vec var = centered.rowwise().squaredNorm() / static_cast<double>(res.samples.cols() - 1);
    const double n_eff = static_cast<double>(res.samples.cols());
    const double mean_tol = 5.0 / std::sqrt(n_eff), var_tol = 5.0 * std::sqrt(2.0 / n_eff);
    const double mean_err = mean.cwiseAbs().maxCoeff(), var_err = (var.array() - 1.0).abs().maxCoeff();
    log["moments"] = {{"max_abs_mean", mean_err},
                      {"max_abs_var_error", var_err},
                      {"mean_tolerance", mean_tol},
                      {"var_tolerance", var_tol},
                      {"pass", mean_err <= mean_tol && var_err <= var_tol}};
  }
  write_text(dir / "mcmc.json", log.dump(2) + "\n");
  say(opt, "mcmc: " + std::to_string(res.samples.cols()) + " samples, step " + fmt(res.step_size) + ", " +
               std::to_string(res.chains_in_window()) + "/" + std::to_string(cfg.mcmc.n_chains) + " chains in window");
  if (res.chains_in_window() == 0)
    throw Error(Errc::ChainsOutOfWindow, "no chain has an acceptance rate inside [0.2, 0.8]");
}

}  // namespace dem
