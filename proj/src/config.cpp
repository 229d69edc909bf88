#include "dem/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace dem {

namespace {

enum class Kind { Int, UInt, Real, Bool, Text, IntList, RealList, TextList };

struct KeySpec {
  const char* key;
  Kind kind;
  const char* fallback;  // nullptr: must come from a preset or the file
};

// Schema order is also the order of the resolved config.
const KeySpec kSchema[] = {
    {"run.preset", Kind::Text, ""},
    {"run.task", Kind::Text, nullptr},
    {"run.seed", Kind::UInt, "0"},
    {"run.workers", Kind::Int, "1"},

    {"target.dim", Kind::Int, "2"},
    {"target.scale", Kind::Real, "1"},
    {"target.gmm_seed", Kind::UInt, "0"},
    {"target.gmm_table", Kind::Text, ""},
    {"target.lj_oscillator", Kind::Real, "0.5"},

    {"schedule.kind", Kind::Text, "geometric"},
    {"schedule.sigma_min", Kind::Real, nullptr},
    {"schedule.sigma_max", Kind::Real, nullptr},

    {"sde.steps", Kind::Int, "100"},
    {"sde.diffusion_scale", Kind::Real, "1"},

    {"estimator.kind", Kind::Text, "logsumexp"},
    {"estimator.k", Kind::Int, nullptr},
    {"estimator.clip", Kind::Real, nullptr},

    {"network.arch", Kind::Text, nullptr},
    {"network.hidden", Kind::Int, "128"},
    {"network.layers", Kind::Int, "3"},
    {"network.emb_pairs", Kind::Int, "64"},
    {"network.t_freq_max", Kind::Real, "100"},
    {"network.x_freq_max", Kind::Real, "30"},
    {"network.coord_range", Kind::Real, "15"},
    {"network.out_range", Kind::Real, "20"},

    {"trainer.mode", Kind::Text, "idem"},
    {"trainer.batch_size", Kind::Int, "256"},
    {"trainer.populate_size", Kind::Int, "0"},
    {"trainer.inner_steps", Kind::Int, "10"},
    {"trainer.outer_loops", Kind::Int, "100"},
    {"trainer.lr", Kind::Real, nullptr},
    {"trainer.buffer_capacity", Kind::Int, nullptr},
    {"trainer.t_pin", Kind::Real, "0"},
    {"trainer.stratified_t", Kind::Bool, "false"},
    {"trainer.max_invalid_retries", Kind::Int, "5"},
    {"trainer.abort_drop_fraction", Kind::Real, "0.5"},
    {"trainer.abort_patience", Kind::Int, "3"},
    {"trainer.checkpoint_every", Kind::Int, "0"},
    {"trainer.save_buffer", Kind::Bool, "false"},

    {"eval.n_samples", Kind::Int, "1000"},
    {"eval.metrics", Kind::TextList, "w2,tv"},
    {"eval.reference", Kind::Text, ""},
    {"eval.tv_bins", Kind::Int, "200"},
    {"eval.tv_lo", Kind::Real, nullptr},
    {"eval.tv_hi", Kind::Real, nullptr},
    {"eval.mode_radius", Kind::Real, "0"},
    {"eval.pf_ode_steps", Kind::Int, "100"},

    {"mcmc.step_size", Kind::Real, "0.01"},
    {"mcmc.n_steps", Kind::Int, "1000"},
    {"mcmc.n_chains", Kind::Int, "32"},
    {"mcmc.burn_in", Kind::Int, "200"},
    {"mcmc.thinning", Kind::Int, "10"},
    {"mcmc.tune", Kind::Bool, "true"},
    {"mcmc.tune_steps", Kind::Int, "200"},
    {"mcmc.init_sigma", Kind::Real, "1"},
    {"mcmc.init_min_distance", Kind::Real, "0"},
};

using Preset = std::vector<std::pair<const char*, const char*>>;

// Optimization hyperparameters follow the published per-task settings; the
// evaluation ranges are the fixed histogram windows used for comparability.
const std::vector<std::pair<std::string, Preset>>& presets() {
  static const std::vector<std::pair<std::string, Preset>> table = {
      {"gmm",
       {{"run.task", "gmm"}, {"target.scale", "50"}, {"schedule.sigma_min", "1e-5"}, {"schedule.sigma_max", "1"},
        {"estimator.k", "500"}, {"estimator.clip", "70"}, {"network.arch", "mlp"}, {"network.layers", "3"},
        {"trainer.lr", "5e-4"}, {"trainer.buffer_capacity", "10000"}, {"eval.tv_lo", "-50"}, {"eval.tv_hi", "50"},
        {"eval.metrics", "w2,tv,mode_recall,ess,log_z"}, {"eval.mode_radius", "18.973665961010276"}}},
      {"dw4",
       {{"run.task", "dw4"}, {"target.scale", "1"}, {"schedule.sigma_min", "1e-5"}, {"schedule.sigma_max", "3"},
        {"estimator.k", "1000"}, {"estimator.clip", "20"}, {"network.arch", "egnn"}, {"network.layers", "3"},
        {"trainer.lr", "1e-3"}, {"trainer.buffer_capacity", "10000"}, {"eval.tv_lo", "0"}, {"eval.tv_hi", "8"},
        {"eval.metrics", "w2,tv,ess,log_z"}, {"mcmc.init_sigma", "2"}}},
      {"lj13",
       {{"run.task", "lj13"}, {"target.scale", "1"}, {"schedule.sigma_min", "0.01"}, {"schedule.sigma_max", "2"},
        {"estimator.k", "1000"}, {"estimator.clip", "20"}, {"network.arch", "egnn"}, {"network.layers", "5"},
        {"trainer.lr", "1e-3"}, {"trainer.buffer_capacity", "10000"}, {"eval.tv_lo", "0"}, {"eval.tv_hi", "4"},
        {"eval.metrics", "w2,tv"}, {"mcmc.init_sigma", "1"}, {"mcmc.init_min_distance", "0.8"}}},
      {"lj55",
       {{"run.task", "lj55"}, {"target.scale", "1"}, {"schedule.sigma_min", "0.5"}, {"schedule.sigma_max", "4"},
        {"estimator.k", "100"}, {"estimator.clip", "20"}, {"network.arch", "egnn"}, {"network.layers", "5"},
        {"trainer.lr", "1e-3"}, {"trainer.buffer_capacity", "10000"}, {"eval.tv_lo", "0"}, {"eval.tv_hi", "4"},
        {"eval.metrics", "w2,tv"}, {"mcmc.init_sigma", "1.5"}, {"mcmc.init_min_distance", "0.8"}}},
  };
  return table;
}

const KeySpec* find_key(const std::string& key) {
  for (const auto& k : kSchema)
    if (key == k.key) return &k;
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

[[noreturn]] void fail(const std::string& key, const ConfigEntry& e, const std::string& what) {
  std::string where = e.line > 0 ? "line " + std::to_string(e.line) + ": " : "";
  throw Error(Errc::Config, where + key + ": " + what);
}

long long to_int(const std::string& key, const ConfigEntry& e) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(e.value, &pos);
    if (pos == e.value.size()) return v;
  } catch (const std::exception&) {
  }
  fail(key, e, "expected an integer, got '" + e.value + "'");
}

double to_real(const std::string& key, const std::string& text, const ConfigEntry& e) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(text, &pos);
    if (pos == text.size() && std::isfinite(v)) return v;
  } catch (const std::exception&) {
  }
  fail(key, e, "expected a finite number, got '" + text + "'");
}

bool to_bool(const std::string& key, const ConfigEntry& e) {
  if (e.value == "true" || e.value == "1" || e.value == "yes") return true;
  if (e.value == "false" || e.value == "0" || e.value == "no") return false;
  fail(key, e, "expected true or false, got '" + e.value + "'");
}

void check_kind(const KeySpec& spec, const ConfigEntry& e) {
  switch (spec.kind) {
    case Kind::Int: to_int(spec.key, e); break;
    case Kind::UInt:
      if (to_int(spec.key, e) < 0) fail(spec.key, e, "must be nonnegative");
      break;
    case Kind::Real: to_real(spec.key, e.value, e); break;
    case Kind::Bool: to_bool(spec.key, e); break;
    case Kind::IntList:
      for (const auto& item : split_list(e.value)) to_int(spec.key, ConfigEntry{item, e.line});
      break;
    case Kind::RealList:
      for (const auto& item : split_list(e.value)) to_real(spec.key, item, e);
      break;
    case Kind::Text:
    case Kind::TextList: break;
  }
}

class Resolved {
 public:
  explicit Resolved(std::map<std::string, ConfigEntry> v) : values_(std::move(v)) {}
  const ConfigEntry& entry(const std::string& k) const { return values_.at(k); }
  const std::string& text(const std::string& k) const { return values_.at(k).value; }
  long long integer(const std::string& k) const { return to_int(k, entry(k)); }
  int positive(const std::string& k) const {
    const long long v = integer(k);
    if (v <= 0) fail(k, entry(k), "must be positive");
    return static_cast<int>(v);
  }
  int nonneg(const std::string& k) const {
    const long long v = integer(k);
    if (v < 0) fail(k, entry(k), "must be nonnegative");
    return static_cast<int>(v);
  }
  double real(const std::string& k) const { return to_real(k, text(k), entry(k)); }
  bool flag(const std::string& k) const { return to_bool(k, entry(k)); }
  std::vector<std::string> list(const std::string& k) const { return split_list(text(k)); }
  std::string choice(const std::string& k, std::initializer_list<const char*> allowed) const {
    const std::string& v = text(k);
    for (const char* a : allowed)
      if (v == a) return v;
    std::string msg = "unknown value '" + v + "' (expected one of:";
    for (const char* a : allowed) msg += std::string(" ") + a;
    fail(k, entry(k), msg + ")");
  }

 private:
  std::map<std::string, ConfigEntry> values_;
};

}  // namespace

ConfigMap parse_config_text(const std::string& text, const std::string& origin) {
  ConfigMap out;
  std::istringstream in(text);
  std::string raw, section;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find_first_of("#;");
    std::string s = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (s.empty()) continue;
    const std::string where = origin + " line " + std::to_string(line) + ": ";
    if (s.front() == '[') {
      if (s.back() != ']') throw Error(Errc::Config, where + "malformed section header");
      section = trim(s.substr(1, s.size() - 2));
      if (section.empty()) throw Error(Errc::Config, where + "empty section name");
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw Error(Errc::Config, where + "expected 'key = value'");
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    if (key.empty()) throw Error(Errc::Config, where + "missing key");
    if (section.empty()) throw Error(Errc::Config, where + "key '" + key + "' outside any section");
    const std::string full = section + "." + key;
    if (!find_key(full)) throw Error(Errc::Config, where + "unknown key '" + full + "'");
    if (out.count(full)) throw Error(Errc::Config, where + "duplicate key '" + full + "'");
    out[full] = ConfigEntry{value, line};
  }
  return out;
}

ConfigMap parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const auto& [name, _] : presets()) out.push_back(name);
  return out;
}

RunConfig resolve_config(const ConfigMap& file, const ConfigMap& overrides) {
  for (const auto& [k, e] : overrides)
    if (!find_key(k)) throw Error(Errc::Config, "unknown key '" + k + "'");

  std::map<std::string, ConfigEntry> merged;
  for (const auto& k : kSchema)
    if (k.fallback) merged[k.key] = ConfigEntry{k.fallback, 0};

  std::string preset;
  if (auto it = file.find("run.preset"); it != file.end()) preset = it->second.value;
  if (auto it = overrides.find("run.preset"); it != overrides.end()) preset = it->second.value;
  if (!preset.empty()) {
    const Preset* chosen = nullptr;
    for (const auto& [name, p] : presets())
      if (name == preset) chosen = &p;
    if (!chosen) {
      const auto it = file.find("run.preset");
      fail("run.preset", it != file.end() ? it->second : ConfigEntry{preset, 0}, "unknown preset '" + preset + "'");
    }
    for (const auto& [k, v] : *chosen) merged[k] = ConfigEntry{v, 0};
  }
  for (const auto& [k, e] : file) merged[k] = e;
  for (const auto& [k, e] : overrides) merged[k] = e;

  for (const auto& k : kSchema) {
    auto it = merged.find(k.key);
    if (it == merged.end())
      throw Error(Errc::Config, std::string("missing required key '") + k.key + "' (set it or choose a preset)");
    check_kind(k, it->second);
  }

  std::ostringstream rendered;
  std::string current;
  for (const auto& k : kSchema) {
    const std::string key = k.key;
    const auto dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != current) {
      rendered << (current.empty() ? "" : "\n") << '[' << sec << "]\n";
      current = sec;
    }
    rendered << key.substr(dot + 1) << " = " << merged.at(key).value << '\n';
  }

  const Resolved r(std::move(merged));
  RunConfig c;
  c.resolved_text = rendered.str();
  c.preset = preset;
  c.task = r.choice("run.task", {"gmm", "dw4", "lj13", "lj55", "gaussian"});
  c.seed = static_cast<std::uint64_t>(r.integer("run.seed"));
  c.workers = r.positive("run.workers");

  c.gaussian_dim = r.positive("target.dim");
  c.scale = r.real("target.scale");
  if (!(c.scale > 0.0)) fail("target.scale", r.entry("target.scale"), "must be positive");
  c.gmm_table = r.text("target.gmm_table");
  c.lj_oscillator = r.real("target.lj_oscillator");
  c.gmm_seed = static_cast<std::uint64_t>(r.integer("target.gmm_seed"));

  TrainConfig& t = c.train;
  const std::string kind = r.choice("schedule.kind", {"geometric", "linear"});
  const double smin = r.real("schedule.sigma_min"), smax = r.real("schedule.sigma_max");
  t.schedule = kind == "geometric" ? NoiseSchedule::geometric(smin, smax) : NoiseSchedule::linear(smin, smax);
  try {
    t.schedule.validate();
  } catch (const Error& e) {
    fail("schedule", r.entry("schedule.sigma_min"), e.what());
  }
  t.integrator.n_steps = r.positive("sde.steps");
  t.integrator.diffusion_scale = r.real("sde.diffusion_scale");

  const std::string est = r.choice("estimator.kind", {"logsumexp", "ratio", "jensen"});
  c.estimator = est == "logsumexp" ? EstimatorKind::LogSumExp
                : est == "ratio"   ? EstimatorKind::Ratio
                                   : EstimatorKind::Jensen;
  t.k = r.positive("estimator.k");
  t.clip = r.real("estimator.clip");

  t.mode = r.choice("trainer.mode", {"idem", "pdem"}) == "idem" ? TrainMode::Idem : TrainMode::Pdem;
  t.batch_size = r.positive("trainer.batch_size");
  t.populate_size = r.nonneg("trainer.populate_size");
  t.inner_steps = r.positive("trainer.inner_steps");
  t.outer_loops = r.nonneg("trainer.outer_loops");
  t.lr = r.real("trainer.lr");
  if (!(t.lr > 0.0)) fail("trainer.lr", r.entry("trainer.lr"), "must be positive");
  t.buffer_capacity = static_cast<std::size_t>(r.positive("trainer.buffer_capacity"));
  t.t_pin = r.real("trainer.t_pin");
  t.stratified_t = r.flag("trainer.stratified_t");
  t.max_invalid_retries = r.positive("trainer.max_invalid_retries");
  t.abort_drop_fraction = r.real("trainer.abort_drop_fraction");
  t.abort_patience = r.positive("trainer.abort_patience");
  t.seed = c.seed;
  t.workers = c.workers;
  c.checkpoint_every = r.nonneg("trainer.checkpoint_every");
  c.save_buffer = r.flag("trainer.save_buffer");

  ArchSpec& a = c.arch;
  a.type = r.choice("network.arch", {"mlp", "egnn"}) == "mlp" ? ArchType::Mlp : ArchType::Egnn;
  a.hidden = r.positive("network.hidden");
  a.layers = r.positive("network.layers");
  a.emb_pairs = r.positive("network.emb_pairs");
  a.t_freq_max = r.real("network.t_freq_max");
  a.x_freq_max = r.real("network.x_freq_max");
  a.coord_range = r.real("network.coord_range");
  a.out_range = r.real("network.out_range");

  EvalSettings& ev = c.eval;
  ev.n_samples = static_cast<std::size_t>(r.nonneg("eval.n_samples"));
  ev.metrics = r.list("eval.metrics");
  for (const auto& m : ev.metrics)
    if (m != "w2" && m != "tv" && m != "ess" && m != "log_z" && m != "mode_recall")
      fail("eval.metrics", r.entry("eval.metrics"), "unknown metric '" + m + "'");
  ev.reference = r.text("eval.reference");
  ev.tv_bins = r.positive("eval.tv_bins");
  ev.tv_lo = r.real("eval.tv_lo");
  ev.tv_hi = r.real("eval.tv_hi");
  if (!(ev.tv_hi > ev.tv_lo)) fail("eval.tv_hi", r.entry("eval.tv_hi"), "must exceed eval.tv_lo");
  ev.mode_radius = r.real("eval.mode_radius");
  ev.pf_ode_steps = r.positive("eval.pf_ode_steps");

  MalaConfig& m = c.mcmc;
  m.step_size = r.real("mcmc.step_size");
  m.n_steps = r.nonneg("mcmc.n_steps");
  m.n_chains = r.positive("mcmc.n_chains");
  m.burn_in = r.nonneg("mcmc.burn_in");
  m.thinning = r.positive("mcmc.thinning");
  m.tune = r.flag("mcmc.tune");
  m.tune_steps = r.positive("mcmc.tune_steps");
  m.init_sigma = r.real("mcmc.init_sigma");
  m.init_min_distance = r.real("mcmc.init_min_distance");
  m.seed = c.seed;
  m.workers = c.workers;

  // network shape follows the target
  const TargetPtr target = make_target(c);
  a.dim = target->dim();
  if (a.type == ArchType::Egnn) {
    if (!target->particles())
      fail("network.arch", r.entry("network.arch"), "egnn needs a particle target");
    a.n_particles = target->particles()->n_particles;
    a.space_dim = target->particles()->space_dim;
  }
  try {
    t.validate();
  } catch (const Error& e) {
    throw Error(Errc::Config, std::string("trainer: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::string& path, const ConfigMap& overrides) {
  return resolve_config(parse_config_file(path), overrides);
}

TargetPtr make_raw_target(const RunConfig& cfg) {
  if (cfg.task == "gaussian") return std::make_shared<GaussianOracle>(cfg.gaussian_dim);
  if (cfg.task == "gmm")
    return std::make_shared<GmmTarget>(cfg.gmm_table.empty() ? GmmSpec::standard(cfg.gmm_seed)
                                                             : GmmSpec::from_table(cfg.gmm_table));
  if (cfg.task == "dw4") return std::make_shared<DoubleWellTarget>();
  LennardJonesSpec lj;
  lj.n_particles = cfg.task == "lj13" ? 13 : 55;
  lj.osc_scale = cfg.lj_oscillator;
  return std::make_shared<LennardJonesTarget>(lj);
}

TargetPtr make_target(const RunConfig& cfg) {
  TargetPtr raw = make_raw_target(cfg);
  if (cfg.scale == 1.0) return raw;
  return std::make_shared<ScaledTarget>(raw, cfg.scale);
}

// ---------------------------------------------------------------------------

SweepSpec parse_sweep_text(const std::string& text, const std::string& origin) {
  static const char* keys[] = {"k", "t", "sigma", "points", "point_scale", "repeats", "estimators", "energy_shift"};
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  bool in_sweep = false;
  std::map<std::string, ConfigEntry> v;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find_first_of("#;");
    std::string s = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (s.empty()) continue;
    const std::string where = origin + " line " + std::to_string(line) + ": ";
    if (s.front() == '[') {
      if (s != "[sweep]") throw Error(Errc::Config, where + "only a [sweep] section is allowed");
      in_sweep = true;
      continue;
    }
    if (!in_sweep) throw Error(Errc::Config, where + "key outside the [sweep] section");
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw Error(Errc::Config, where + "expected 'key = value'");
    const std::string key = trim(s.substr(0, eq));
    if (std::find_if(std::begin(keys), std::end(keys), [&](const char* k) { return key == k; }) == std::end(keys))
      throw Error(Errc::Config, where + "unknown key 'sweep." + key + "'");
    if (v.count(key)) throw Error(Errc::Config, where + "duplicate key 'sweep." + key + "'");
    v[key] = ConfigEntry{trim(s.substr(eq + 1)), line};
  }
  SweepSpec sp;
  if (!v.count("k")) throw Error(Errc::Config, "missing required key 'sweep.k'");
  for (const auto& item : split_list(v["k"].value)) {
    const long long k = to_int("sweep.k", ConfigEntry{item, v["k"].line});
    if (k <= 0) fail("sweep.k", v["k"], "values must be positive");
    sp.k_values.push_back(static_cast<int>(k));
  }
  if (v.count("t"))
    for (const auto& item : split_list(v["t"].value)) sp.t_values.push_back(to_real("sweep.t", item, v["t"]));
  if (v.count("sigma"))
    for (const auto& item : split_list(v["sigma"].value))
      sp.sigma_values.push_back(to_real("sweep.sigma", item, v["sigma"]));
  if (sp.t_values.empty() && sp.sigma_values.empty())
    throw Error(Errc::Config, "sweep needs a 't' or 'sigma' grid");
  if (v.count("points")) sp.n_points = static_cast<int>(to_int("sweep.points", v["points"]));
  if (v.count("point_scale")) sp.point_scale = to_real("sweep.point_scale", v["point_scale"].value, v["point_scale"]);
  if (v.count("repeats")) sp.repeats = static_cast<int>(to_int("sweep.repeats", v["repeats"]));
  if (v.count("energy_shift"))
    sp.probe_energy_shift = to_real("sweep.energy_shift", v["energy_shift"].value, v["energy_shift"]);
  if (sp.n_points <= 0) fail("sweep.points", v["points"], "must be positive");
  if (sp.repeats <= 0) fail("sweep.repeats", v["repeats"], "must be positive");
  const std::string kinds = v.count("estimators") ? v["estimators"].value : "logsumexp,ratio,jensen";
  for (const auto& k : split_list(kinds)) {
    if (k == "logsumexp") sp.kinds.push_back(EstimatorKind::LogSumExp);
    else if (k == "ratio") sp.kinds.push_back(EstimatorKind::Ratio);
    else if (k == "jensen") sp.kinds.push_back(EstimatorKind::Jensen);
    else fail("sweep.estimators", v["estimators"], "unknown estimator '" + k + "'");
  }
  return sp;
}

SweepSpec load_sweep_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot read sweep spec " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_sweep_text(ss.str(), path);
}

}  // namespace dem
