#include <doctest.h>

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "cavsim/cavsim.h"

using doctest::Approx;

TEST_CASE("status names and version") {
  CHECK(std::string(cavsim_status_name(CAVSIM_OK)) == "ok");
  CHECK(std::strlen(cavsim_status_name(CAVSIM_ERR_SCHEMA)) > 0);
  CHECK(std::strlen(cavsim_version()) > 0);
  CHECK(cavsim_experiment_count() == 5);
  CHECK(std::string(cavsim_experiment_name(0)) == "distribution");
  CHECK(cavsim_experiment_name(99) == nullptr);
}

TEST_CASE("config handles") {
  cavsim_config* cfg = nullptr;
  REQUIRE(cavsim_config_default(&cfg) == CAVSIM_OK);
  const char* report = nullptr;
  CHECK(cavsim_config_validate(cfg, &report) == 0);
  CHECK(cavsim_config_set_seed(cfg, 5) == CAVSIM_OK);
  CHECK(std::string(cavsim_config_json(cfg)).find("\"seed\": 5") != std::string::npos);
  CHECK(cavsim_config_set_profile(cfg, "full") == CAVSIM_OK);
  CHECK(cavsim_config_set_threads(cfg, -2) == CAVSIM_ERR_INVALID_ARGUMENT);
  cavsim_config_free(cfg);

  cavsim_config* bad = nullptr;
  REQUIRE(cavsim_config_parse("{\"cavity\": {\"kappa_MHz\": -1}}", &bad) == CAVSIM_OK);
  CHECK(cavsim_config_validate(bad, &report) == 1);
  CHECK(std::string(report).find("cavity.kappa_MHz") != std::string::npos);
  cavsim_config_free(bad);

  cavsim_config* broken = nullptr;
  CHECK(cavsim_config_parse("{not json", &broken) == CAVSIM_ERR_SCHEMA);
  CHECK(broken == nullptr);
  CHECK(std::strlen(cavsim_last_error()) > 0);
  CHECK(cavsim_config_load("/nonexistent/cfg.json", &broken) != CAVSIM_OK);
  CHECK(cavsim_config_default(nullptr) == CAVSIM_ERR_INVALID_ARGUMENT);
}

TEST_CASE("runs through the C surface") {
  cavsim_config* cfg = nullptr;
  REQUIRE(cavsim_config_parse("{\"distribution\": {\"atoms\": 1000, \"loss_atoms\": 200, \"export_atoms\": 2}}", &cfg) ==
          CAVSIM_OK);
  cavsim_run* run = nullptr;
  CHECK(cavsim_run_experiment(cfg, "nonesuch", 0, &run) == CAVSIM_ERR_INVALID_ARGUMENT);
  CHECK(run == nullptr);
  REQUIRE(cavsim_run_experiment(cfg, "distribution", 1, &run) == CAVSIM_OK);
  CHECK(cavsim_run_file_count(run) > 0);
  CHECK(cavsim_run_check_count(run) > 0);
  const char *id = nullptr, *desc = nullptr, *detail = nullptr;
  int passed = 0, info = 0;
  CHECK(cavsim_run_check(run, 0, &id, &desc, &passed, &info, &detail) == CAVSIM_OK);
  CHECK(std::strlen(id) > 0);
  CHECK(cavsim_run_check(run, 1000, &id, &desc, &passed, &info, &detail) == CAVSIM_ERR_INVALID_ARGUMENT);
  CHECK(cavsim_run_seconds(run) >= 0);
  CHECK(cavsim_run_summary_json(run)[0] == '{');
  cavsim_run_free(run);
  cavsim_config_free(cfg);
}

TEST_CASE("kernels") {
  double w = 0;
  REQUIRE(cavsim_wigner_3j(1, 1, 0, 1, -1, 0, &w) == CAVSIM_OK);
  CHECK(w == Approx(1 / std::sqrt(3.0)));
  CHECK(cavsim_wigner_3j(0.3, 1, 1, 0, 0, 0, &w) == CAVSIM_ERR_INVALID_ARGUMENT);
  REQUIRE(cavsim_wigner_6j(1, 1, 1, 1, 1, 1, &w) == CAVSIM_OK);
  CHECK(w == Approx(1.0 / 6));
  CHECK(cavsim_derive_seed(1, "x") == cavsim_derive_seed(1, "x"));
  CHECK(cavsim_derive_seed(1, "x") != cavsim_derive_seed(1, "y"));

  // Single emitter on resonance with the cavity: |t|^2 = 1 / (1 + C)^2 at the centre.
  const double nu = 0, g = 76, grid[3] = {-76, 0, 76};
  double out[3];
  REQUIRE(cavsim_transmission(0, 15, 3, 1, &nu, &g, 3, grid, out) == CAVSIM_OK);
  CHECK(out[1] == Approx(1 / std::pow(1 + 76.0 * 76.0 / 45.0, 2)));
  CHECK(cavsim_transmission(0, -1, 3, 1, &nu, &g, 3, grid, out) == CAVSIM_ERR_INVALID_ARGUMENT);
  CHECK(cavsim_transmission(0, 15, 3, 1, nullptr, &g, 3, grid, out) == CAVSIM_ERR_INVALID_ARGUMENT);

  const double d[2] = {0, 0}, arm[2] = {30, 40};
  double ev[3], pw[3], spw = -1;
  REQUIRE(cavsim_arrowhead_solve(0, 2, d, arm, ev, pw, &spw) == CAVSIM_OK);
  CHECK(ev[0] == Approx(-50));
  CHECK(ev[1] == Approx(0).scale(1));
  CHECK(ev[2] == Approx(50));
  CHECK(pw[0] == Approx(0.5));
  CHECK(pw[1] == Approx(0).scale(1));
  CHECK(spw == Approx(0).scale(1));
  CHECK(cavsim_arrowhead_solve(0, 2, nullptr, arm, ev, pw, &spw) == CAVSIM_ERR_INVALID_ARGUMENT);
}
