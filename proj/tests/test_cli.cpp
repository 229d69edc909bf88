// Drives the dem binary as a subprocess.
#include "doctest.h"

#include "json.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path& root() {
  static const fs::path r = [] {
    const fs::path d = fs::temp_directory_path() / "dem_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void put(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

struct Run {
  int code = -1;
  std::string err;
};

Run dem(const std::string& args) {
  static int counter = 0;
  const fs::path err = root() / ("stderr_" + std::to_string(counter++) + ".txt");
  const std::string cmd = std::string(DEM_CLI) + " " + args + " > /dev/null 2> " + err.string();
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = slurp(err);
  return r;
}

json header_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::string line;
  std::getline(in, line);
  return json::parse(line);
}

const std::string kTiny = R"([run]
task = gaussian
seed = 2
[target]
dim = 2
[schedule]
sigma_min = 0.01
sigma_max = 2
[sde]
steps = 20
[estimator]
k = 50
clip = 20
[network]
arch = mlp
hidden = 16
layers = 2
emb_pairs = 4
[trainer]
lr = 1e-3
batch_size = 16
inner_steps = 3
outer_loops = 3
buffer_capacity = 200
checkpoint_every = 1
save_buffer = true
[eval]
n_samples = 64
metrics = w2,tv,ess,log_z
tv_lo = -5
tv_hi = 5
pf_ode_steps = 20
[mcmc]
step_size = 0.5
n_steps = 2000
n_chains = 4
burn_in = 200
thinning = 2
tune = true
)";

fs::path tiny_config() {
  const fs::path p = root() / "tiny.ini";
  if (!fs::exists(p)) put(p, kTiny);
  return p;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors") {
  CHECK(dem("--help").code == 0);
  CHECK(dem("--version").code == 0);
  CHECK(dem("").code == 2);
  CHECK(dem("fly").code == 2);
  CHECK(dem("train --config /no/such/file.ini").code == 2);
  CHECK(dem("sample").code == 2);
}

TEST_CASE("a missing required key is named") {
  std::string text = kTiny;
  text.replace(text.find("k = 50\n"), 7, "");
  const fs::path p = root() / "missing.ini";
  put(p, text);
  const Run r = dem("train -q --config " + p.string() + " --out " + (root() / "missing_run").string());
  CHECK(r.code == 2);
  CHECK(r.err.find("estimator.k") != std::string::npos);
}

TEST_CASE("train writes a complete, reproducible run directory") {
  const fs::path a = root() / "run_a", b = root() / "run_b", c = root() / "run_c";
  REQUIRE(dem("train -q --config " + tiny_config().string() + " --out " + a.string()).code == 0);
  REQUIRE(dem("train -q --config " + tiny_config().string() + " --out " + b.string() + " --workers 3").code == 0);
  for (const char* f : {"config.resolved.ini", "metrics.csv", "timing.csv", "samples.bin", "eval.json",
                        "checkpoints/final.ckpt", "checkpoints/final.json", "checkpoints/outer_1.ckpt",
                        "checkpoints/outer_1.buffer.bin"})
    CHECK_MESSAGE(fs::exists(a / f), f);
  CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
  CHECK(slurp(a / "samples.bin") == slurp(b / "samples.bin"));

  // header plus one row per inner step
  const std::string m = slurp(a / "metrics.csv");
  CHECK(m.rfind("step,outer,loss,buffer_size,drop_count,clipped,skipped\n", 0) == 0);
  CHECK(std::count(m.begin(), m.end(), '\n') == 1 + 3 * 3);

  const json ev = json::parse(slurp(a / "eval.json"));
  for (const char* k : {"w2", "tv", "ess", "log_z_lower"}) CHECK_MESSAGE(ev.contains(k), k);
  const json h = header_of(a / "samples.bin");
  CHECK(h["shape"] == json::array({64, 2}));

  REQUIRE(dem("train -q --config " + tiny_config().string() + " --out " + c.string() + " --seed 99").code == 0);
  CHECK(slurp(a / "metrics.csv") != slurp(c / "metrics.csv"));
}

TEST_CASE("resuming reproduces the uninterrupted run") {
  const fs::path full = root() / "resume_full", part = root() / "resume_part";
  REQUIRE(dem("train -q --config " + tiny_config().string() + " --out " + full.string()).code == 0);
  fs::remove_all(part);
  fs::copy(full, part, fs::copy_options::recursive);
  REQUIRE(dem("train -q --resume " + (part / "checkpoints" / "outer_2.ckpt").string()).code == 0);
  CHECK(slurp(full / "metrics.csv") == slurp(part / "metrics.csv"));
  CHECK(slurp(full / "checkpoints" / "final.ckpt") == slurp(part / "checkpoints" / "final.ckpt"));
}

TEST_CASE("sample and eval") {
  const fs::path run = root() / "run_se";
  REQUIRE(dem("train -q --config " + tiny_config().string() + " --out " + run.string()).code == 0);
  const std::string ck = (run / "checkpoints" / "final.ckpt").string();
  const fs::path s1 = root() / "s1.bin", s2 = root() / "s2.bin";
  REQUIRE(dem("sample -q --checkpoint " + ck + " -n 40 --seed 5 --out " + s1.string()).code == 0);
  REQUIRE(dem("sample -q --checkpoint " + ck + " -n 40 --seed 5 --out " + s2.string()).code == 0);
  CHECK(slurp(s1) == slurp(s2));
  const json h = header_of(s1);
  CHECK(h["shape"] == json::array({40, 2}));
  CHECK(h["metadata"]["seed"] == 5);

  const fs::path rep = root() / "eval.json";
  REQUIRE(dem("eval -q --checkpoint " + ck + " --samples " + s1.string() + " --metrics w2,ess --out " + rep.string())
              .code == 0);
  const json r = json::parse(slurp(rep));
  CHECK(r.contains("w2"));
  CHECK(r.contains("ess"));
  CHECK(r["w2"].get<double>() >= 0.0);

  const fs::path rep2 = root() / "eval_cfg.json";
  REQUIRE(dem("eval -q --config " + tiny_config().string() + " --samples " + s1.string() + " --reference " +
              s2.string() + " --metrics w2 --out " + rep2.string())
              .code == 0);
  CHECK(json::parse(slurp(rep2))["w2"].get<double>() == 0.0);

  CHECK(dem("sample -q --checkpoint " + (root() / "nothing.ckpt").string()).code == 2);
  CHECK(dem("eval -q --config " + tiny_config().string() + " --samples " + s1.string() + " --metrics bogus").code == 2);
}

TEST_CASE("ablate writes the sweep tables") {
  const fs::path sweep = root() / "sweep.ini", out = root() / "ablate";
  put(sweep, "[sweep]\nk = 1,10,100\nsigma = 1\npoints = 2\nrepeats = 20\n");
  REQUIRE(dem("ablate -q --config " + tiny_config().string() + " --sweep " + sweep.string() + " --out " + out.string())
              .code == 0);
  const std::string bias = slurp(out / "bias_mse.csv");
  CHECK(std::count(bias.begin(), bias.end(), '\n') == 1 + 3 * 2);
  const std::string cmp = slurp(out / "estimator_comparison.csv");
  CHECK(std::count(cmp.begin(), cmp.end(), '\n') == 1 + 3 * 3 * 2);
  const json s = json::parse(slurp(out / "summary.json"));
  for (const char* k : {"logsumexp", "ratio", "jensen"}) CHECK(s.contains(k));

  put(root() / "bad_sweep.ini", "[sweep]\nk = 1\n");
  CHECK(dem("ablate -q --config " + tiny_config().string() + " --sweep " + (root() / "bad_sweep.ini").string() +
            " --out " + (root() / "ablate_bad").string())
            .code == 2);
}

TEST_CASE("mcmc reference sets") {
  const fs::path out = root() / "mcmc";
  REQUIRE(dem("mcmc -q --config " + tiny_config().string() + " --out " + out.string()).code == 0);
  const json h = header_of(out / "reference.bin");
  CHECK(h["shape"] == json::array({4 * 900, 2}));
  const json log = json::parse(slurp(out / "mcmc.json"));
  CHECK(log["chains_in_window"] == 4);
  CHECK(log["moments"]["pass"] == true);
  const std::string acc = slurp(out / "acceptance.csv");
  CHECK(std::count(acc.begin(), acc.end(), '\n') == 5);

  // a step far too large for every chain is reported with its own exit code
  std::string text = kTiny;
  text.replace(text.find("step_size = 0.5"), 15, "step_size = 9.0");
  text.replace(text.find("tune = true"), 11, "tune = false");
  put(root() / "bad_mcmc.ini", text);
  const Run r = dem("mcmc -q --config " + (root() / "bad_mcmc.ini").string() + " --out " + (root() / "mcmc_bad").string());
  CHECK(r.code == 3);
  CHECK(fs::exists(root() / "mcmc_bad" / "reference.bin"));
}

}  // TEST_SUITE
