#include "dem/dem.h"

#include "dem/commands.hpp"
#include "dem/metrics.hpp"

#include <iostream>
#include <sstream>

using namespace dem;

struct dem_options {
  CommandOptions opts;
};

struct dem_target {
  TargetPtr target;
};

struct dem_model {
  Checkpoint ck;
  RunConfig cfg;
};

namespace {

thread_local std::string g_last_error;

dem_status fail(dem_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

template <class F>
dem_status guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return DEM_OK;
  } catch (const Error& e) {
    return fail(static_cast<dem_status>(static_cast<int>(e.code())), e.what());
  } catch (const std::bad_alloc&) {
    return fail(DEM_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(DEM_ERR_INTERNAL, e.what());
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw Error(Errc::InvalidArgument, what);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    if (!v.empty() && v[0] != '-') {
      const unsigned long long x = std::stoull(v, &pos);
      if (pos == v.size()) return x;
    }
  } catch (const std::exception&) {
  }
  throw Error(Errc::Config, key + ": expected a nonnegative integer, got '" + v + "'");
}

// Row-major n x dim buffer <-> column-per-point matrix.
Mat from_rows(const double* x, std::size_t n, int dim) {
  return Eigen::Map<const Mat>(x, dim, static_cast<Eigen::Index>(n));
}

}  // namespace

extern "C" {

const char* dem_version(void) { return "1.0.0"; }

const char* dem_status_name(dem_status s) {
  switch (s) {
    case DEM_OK: return "ok";
    case DEM_ERR_INVALID_ARGUMENT: return "invalid argument";
    case DEM_ERR_DOMAIN: return "domain error";
    case DEM_ERR_DISTANCE_FLOOR: return "distance floor violation";
    case DEM_ERR_NONFINITE_STATE: return "non-finite state";
    case DEM_ERR_NONFINITE_LOSS: return "non-finite loss";
    case DEM_ERR_ALL_SAMPLES_INVALID: return "all samples invalid";
    case DEM_ERR_SHAPE_MISMATCH: return "shape mismatch";
    case DEM_ERR_SIZE_MISMATCH: return "size mismatch";
    case DEM_ERR_DIMENSION_TOO_LARGE: return "dimension too large";
    case DEM_ERR_EMPTY_BUFFER: return "empty buffer";
    case DEM_ERR_ALL_NONFINITE: return "all non-finite";
    case DEM_ERR_CONFIG: return "config error";
    case DEM_ERR_IO: return "i/o error";
    case DEM_ERR_TRAINING_ABORTED: return "training aborted";
    case DEM_ERR_CHAINS_OUT_OF_WINDOW: return "chains out of acceptance window";
    case DEM_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* dem_last_error(void) { return g_last_error.c_str(); }

dem_status dem_options_create(dem_options** out) {
  return guarded([&] {
    require(out != nullptr, "null output pointer");
    *out = new dem_options();
  });
}

dem_status dem_options_set(dem_options* o, const char* key, const char* value) {
  return guarded([&] {
    require(o && key && value, "null argument");
    const std::string k = key, v = value;
    CommandOptions& c = o->opts;
    if (k == "config") c.config = v;
    else if (k == "checkpoint") c.checkpoint = v;
    else if (k == "out") c.out = v;
    else if (k == "reference") c.reference = v;
    else if (k == "samples") c.samples = v;
    else if (k == "sweep") c.sweep = v;
    else if (k == "resume") c.resume = v;
    else if (k == "seed") c.seed = parse_u64(k, v);
    else if (k == "workers") {
      const auto w = parse_u64(k, v);
      if (w == 0) throw Error(Errc::Config, "workers must be positive");
      c.workers = static_cast<int>(w);
    } else if (k == "n") c.n = static_cast<long long>(parse_u64(k, v));
    else if (k == "metrics") {
      c.metrics.clear();
      std::stringstream ss(v);
      std::string item;
      while (std::getline(ss, item, ','))
        if (!item.empty()) c.metrics.push_back(item);
    } else if (k == "verbose") {
      if (v == "1") c.log = [](const std::string& line) { std::cerr << line << std::endl; };
      else c.log = nullptr;
    } else {
      throw Error(Errc::InvalidArgument, "unknown option '" + k + "'");
    }
  });
}

void dem_options_destroy(dem_options* o) { delete o; }

dem_status dem_run_command(const char* name, const dem_options* o) {
  return guarded([&] {
    require(name && o, "null argument");
    const std::string n = name;
    if (n == "train") cmd_train(o->opts);
    else if (n == "sample") cmd_sample(o->opts);
    else if (n == "eval") cmd_eval(o->opts);
    else if (n == "ablate") cmd_ablate(o->opts);
    else if (n == "mcmc") cmd_mcmc(o->opts);
    else throw Error(Errc::InvalidArgument, "unknown command '" + n + "'");
  });
}

dem_status dem_target_from_config(const char* path, dem_target** out) {
  return guarded([&] {
    require(path && out, "null argument");
    *out = new dem_target{make_raw_target(load_run_config(path))};
  });
}

dem_status dem_target_create(const char* task, int dim, dem_target** out) {
  return guarded([&] {
    require(task && out, "null argument");
    const std::string t = task;
    TargetPtr p;
    if (t == "gaussian") {
      require(dim > 0, "dimension must be positive");
      p = std::make_shared<GaussianOracle>(dim);
    } else if (t == "gmm") {
      p = std::make_shared<GmmTarget>(GmmSpec::standard(0));
    } else if (t == "dw4") {
      p = std::make_shared<DoubleWellTarget>();
    } else if (t == "lj13" || t == "lj55") {
      LennardJonesSpec s;
      s.n_particles = t == "lj13" ? 13 : 55;
      p = std::make_shared<LennardJonesTarget>(s);
    } else {
      throw Error(Errc::InvalidArgument, "unknown task '" + t + "'");
    }
    *out = new dem_target{p};
  });
}

void dem_target_destroy(dem_target* t) { delete t; }

int dem_target_dim(const dem_target* t) { return t ? t->target->dim() : 0; }

dem_status dem_target_energy(const dem_target* t, const double* x, double* energy, double* grad) {
  return guarded([&] {
    require(t && x && energy, "null argument");
    const int d = t->target->dim();
    const Eigen::Map<const Vec> xv(x, d);
    if (grad) {
      Vec g;
      *energy = t->target->energy_grad(xv, g);
      Eigen::Map<Vec>(grad, d) = g;
    } else {
      *energy = t->target->energy(xv);
    }
  });
}

dem_status dem_estimate_score(const dem_target* t, const double* x_t, double sigma, int k, int kind, double clip,
                              uint64_t seed, double* out) {
  return guarded([&] {
    require(t && x_t && out, "null argument");
    require(kind >= 0 && kind <= 2, "estimator kind must be 0, 1 or 2");
    const int d = t->target->dim();
    Rng rng(seed);
    const EstimatorKind ek = kind == 0 ? EstimatorKind::LogSumExp : kind == 1 ? EstimatorKind::Ratio : EstimatorKind::Jensen;
    const ScoreEstimate est = estimate_score_at_sigma(*t->target, Eigen::Map<const Vec>(x_t, d), sigma, k, rng, ek,
                                                      clip > 0.0 ? std::optional<double>(clip) : std::nullopt);
    Eigen::Map<Vec>(out, d) = est.value;
  });
}

dem_status dem_model_load(const char* path, dem_model** out) {
  return guarded([&] {
    require(path && out, "null argument");
    auto m = std::make_unique<dem_model>();
    m->ck = load_checkpoint(path);
    if (!m->ck.meta.contains("config")) throw Error(Errc::Io, "checkpoint carries no config");
    m->cfg = resolve_config(parse_config_text(m->ck.meta.at("config").get<std::string>(), "<checkpoint config>"));
    *out = m.release();
  });
}

void dem_model_destroy(dem_model* m) { delete m; }

int dem_model_dim(const dem_model* m) { return m ? m->ck.net->arch().dim : 0; }

dem_status dem_model_score(const dem_model* m, const double* x, size_t n, double t, double* out) {
  return guarded([&] {
    require(m && (n == 0 || (x && out)), "null argument");
    const int d = m->ck.net->arch().dim;
    const Mat s = m->ck.net->forward(from_rows(x, n, d), t);
    Eigen::Map<Mat>(out, d, static_cast<Eigen::Index>(n)) = s;
  });
}

dem_status dem_model_sample(const dem_model* m, size_t n, uint64_t seed, double* out) {
  return guarded([&] {
    require(m && (n == 0 || out), "null argument");
    const int d = m->ck.net->arch().dim;
    const Mat s = generate_samples(m->cfg, *m->ck.net, n, seed);
    Eigen::Map<Mat>(out, d, static_cast<Eigen::Index>(n)) = s;
  });
}

dem_status dem_wasserstein2(const double* a, const double* b, size_t n, int dim, double* out) {
  return guarded([&] {
    require(a && b && out && dim > 0, "invalid argument");
    *out = wasserstein2(from_rows(a, n, dim), from_rows(b, n, dim));
  });
}

dem_status dem_ess_normalized(const double* lw, size_t n, double* out) {
  return guarded([&] {
    require(lw && out, "null argument");
    *out = ess_normalized(std::vector<double>(lw, lw + n));
  });
}

}  // extern "C"
