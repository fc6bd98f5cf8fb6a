#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <unordered_set>

#include <unistd.h>

#include "cavsim/error.hpp"
#include "cavsim/experiments.hpp"
#include "cavsim/io.hpp"
#include "cavsim/rng.hpp"

using namespace cavsim;
using doctest::Approx;

namespace {

Json small_distribution() {
  return Json::parse(R"({"distribution": {"atoms": 2000, "loss_atoms": 500, "export_atoms": 5}})");
}

bool mentions(const ConfigReport& r, const std::string& what) {
  return std::any_of(r.violations.begin(), r.violations.end(),
                     [&](const std::string& v) { return v.find(what) != std::string::npos; });
}

}  // namespace

TEST_CASE("config validation") {
  CHECK(validate_config(Json::object()).ok());
  CHECK(validate_config(default_config()).ok());

  const ConfigReport neg = validate_config(Json::parse(R"({"cavity": {"kappa_MHz": -1}})"));
  CHECK(neg.violations.size() == 1);
  CHECK(mentions(neg, "cavity.kappa_MHz"));

  const ConfigReport unknown = validate_config(Json::parse(R"({"cavity": {"kapa_MHz": 15}})"));
  CHECK_FALSE(unknown.ok());
  CHECK(mentions(unknown, "cavity.kapa_MHz"));

  const ConfigReport type = validate_config(Json::parse(R"({"seed": "seven"})"));
  CHECK(mentions(type, "seed"));

  const ConfigReport two = validate_config(Json::parse(R"({"cavity": {"gamma_MHz": -3}, "trap": {"waist_um": 0}})"));
  CHECK(two.violations.size() == 2);

  CHECK_FALSE(validate_config_file("/nonexistent/config.json").ok());
  CHECK_THROWS_AS(resolve_config(Json::parse(R"({"profile": "huge"})")), Error);
}

TEST_CASE("annotated default config matches the built-in defaults") {
  const Json file = load_config_file(std::string(CAVSIM_CONFIG_DIR) + "/default.json");
  CHECK(file == default_config());
  CHECK(validate_config_file(std::string(CAVSIM_CONFIG_DIR) + "/default.json").ok());
}

TEST_CASE("profiles overlay the defaults") {
  const Json desk = resolve_config(Json::object());
  const Json full = resolve_config(Json::object(), "full");
  CHECK(desk["transition"]["repetitions"] == 60);
  CHECK(full["transition"]["repetitions"] == 300);
  CHECK(full["profile"] == "full");
  CHECK(full["cavity"] == desk["cavity"]);
}

TEST_CASE("missing atomic data is a clear error") {
  Json cfg = small_distribution();
  cfg["atomic_data"] = "/nonexistent/atomic.json";
  try {
    run_experiment("distribution", cfg, false);
    FAIL("expected an error");
  } catch (const Error& e) {
    // Caught by validation before the run, which names the field and the file.
    CHECK(e.code() == ErrorCode::Schema);
    CHECK(std::string(e.what()).find("atomic_data") != std::string::npos);
    CHECK(std::string(e.what()).find("/nonexistent/atomic.json") != std::string::npos);
  }
  CHECK_THROWS_AS(run_experiment("nonesuch", Json::object(), false), Error);
}

TEST_CASE("seed derivation: no collisions over a million labels") {
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(1000000);
  for (int i = 0; i < 1000000; ++i) seen.insert(derive_seed(42, "label/" + std::to_string(i)));
  CHECK(seen.size() == 1000000);
  CHECK(derive_seed(1, "a") != derive_seed(2, "a"));
  CHECK(derive_seed(1, "a") == derive_seed(1, "a"));
}

TEST_CASE("streams from neighbouring labels are uncorrelated") {
  const std::size_t n = 200000;
  for (int k = 0; k < 5; ++k) {
    Stream a(derive_seed(7, "shot/" + std::to_string(k)), 0), b(derive_seed(7, "shot/" + std::to_string(k + 1)), 0);
    Stream c(derive_seed(7, "shot/" + std::to_string(k)), 1);
    double sab = 0, sac = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double x = a.uniform() - 0.5, y = b.uniform() - 0.5, z = c.uniform() - 0.5;
      sab += x * y;
      sac += x * z;
    }
    // Correlation of independent uniforms: standard error 1 / sqrt(n).
    CHECK(std::abs(12 * sab / n) < 5 / std::sqrt(static_cast<double>(n)));
    CHECK(std::abs(12 * sac / n) < 5 / std::sqrt(static_cast<double>(n)));
  }
}

TEST_CASE("runs are bit-exact and independent of the thread count") {
  Json one = small_distribution();
  one["threads"] = 1;
  Json four = small_distribution();
  four["threads"] = 4;
  const RunResult a = run_experiment("distribution", one, false);
  const RunResult b = run_experiment("distribution", one, false);
  const RunResult c = run_experiment("distribution", four, false);
  REQUIRE(a.files.size() == b.files.size());
  REQUIRE(a.files.size() == c.files.size());
  for (std::size_t i = 0; i < a.files.size(); ++i) {
    CHECK(a.files[i].name == b.files[i].name);
    CHECK(sha256_hex(a.files[i].content) == sha256_hex(b.files[i].content));
    CHECK(sha256_hex(a.files[i].content) == sha256_hex(c.files[i].content));
  }
  Json other = small_distribution();
  other["seed"] = 99;
  const RunResult d = run_experiment("distribution", other, false);
  bool differs = false;
  for (std::size_t i = 0; i < a.files.size(); ++i) differs |= a.files[i].content != d.files[i].content;
  CHECK(differs);
}

TEST_CASE("manifest round trip reproduces the run") {
  const RunResult a = run_experiment("distribution", small_distribution(), false);
  const auto dir = std::filesystem::temp_directory_path() / ("cavsim_manifest_" + std::to_string(::getpid()));
  write_run(a, dir.string());
  const Json m = Json::parse(read_text_file((dir / "manifest.json").string()));
  CHECK(m["experiment"] == "distribution");
  CHECK(m["seed"] == a.seed);
  CHECK(m["outputs"].size() == a.files.size());
  for (const auto& f : m["outputs"]) {
    const std::string content = read_text_file((dir / f["name"].get<std::string>()).string());
    CHECK(sha256_hex(content) == f["sha256"].get<std::string>());
  }
  const RunResult b = run_experiment("distribution", load_config_file((dir / "manifest.json").string()), false);
  REQUIRE(b.files.size() == a.files.size());
  for (std::size_t i = 0; i < a.files.size(); ++i) CHECK(b.files[i].content == a.files[i].content);
  std::filesystem::remove_all(dir);
}

TEST_CASE("protected spectrum with no atoms is the empty cavity") {
  const Json cfg = Json::parse(R"({"protected_spectrum": {"mean_atoms": 0, "poisson_atoms": false, "shots": 3,
    "reference_atoms": 500, "nu_c": 0.0}})");
  const RunResult r = run_experiment("protected_spectrum", cfg, false);
  const auto it = std::find_if(r.files.begin(), r.files.end(), [](const OutputFile& f) { return f.name == "averaged_spectrum.csv"; });
  REQUIRE(it != r.files.end());
  const SpectrumTrace t = parse_trace_csv(it->content);
  REQUIRE(t.nu.size() > 10);
  for (std::size_t i = 0; i < t.nu.size(); ++i) CHECK(t.value[i] == Approx(225.0 / (t.nu[i] * t.nu[i] + 225.0)).epsilon(1e-12));
}

TEST_CASE("io helpers") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  for (double v : {0.1, 1.0 / 3, -1670.25, 6.02214076e23, 2.2250738585072014e-308})
    CHECK(std::stod(format_double(v)) == v);
  SpectrumTrace t;
  t.nu = {-1.5, 0, 2.25};
  t.value = {0.1, 1.0 / 3, 1e-17};
  const SpectrumTrace u = parse_trace_csv(trace_csv(t));
  CHECK(u.nu == t.nu);
  CHECK(u.value == t.value);
  CHECK_THROWS_AS(parse_trace_csv("nu_MHz,value\n1,abc\n"), Error);
  CHECK_THROWS_AS(read_text_file("/nonexistent/file"), Error);
}
