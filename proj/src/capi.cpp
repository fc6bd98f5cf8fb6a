#include "cavsim/cavsim.h"

#include <string>

#include "cavsim/angular.hpp"
#include "cavsim/arrowhead.hpp"
#include "cavsim/error.hpp"
#include "cavsim/experiments.hpp"
#include "cavsim/response.hpp"
#include "cavsim/rng.hpp"

struct cavsim_config {
  cavsim::Json json = cavsim::Json::object();
  std::string report;
  std::string text;
};

struct cavsim_run {
  cavsim::RunResult result;
  std::string summary;
};

namespace {

thread_local std::string g_last_error;

cavsim_status to_status(cavsim::ErrorCode c) {
  switch (c) {
    case cavsim::ErrorCode::InvalidArgument: return CAVSIM_ERR_INVALID_ARGUMENT;
    case cavsim::ErrorCode::NotFound: return CAVSIM_ERR_NOT_FOUND;
    case cavsim::ErrorCode::Io: return CAVSIM_ERR_IO;
    case cavsim::ErrorCode::Schema: return CAVSIM_ERR_SCHEMA;
    case cavsim::ErrorCode::EmptyBin: return CAVSIM_ERR_EMPTY_BIN;
    case cavsim::ErrorCode::NoConvergence: return CAVSIM_ERR_NO_CONVERGENCE;
    case cavsim::ErrorCode::InsufficientData: return CAVSIM_ERR_INSUFFICIENT_DATA;
  }
  return CAVSIM_ERR_INTERNAL;
}

// Runs f, translating exceptions into status codes and the thread-local message.
template <class F>
cavsim_status guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return CAVSIM_OK;
  } catch (const cavsim::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return CAVSIM_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return CAVSIM_ERR_INTERNAL;
  }
}

void require(bool ok, const char* what) {
  if (!ok) cavsim::fail(cavsim::ErrorCode::InvalidArgument, what);
}

}  // namespace

extern "C" {

const char* cavsim_last_error(void) { return g_last_error.c_str(); }

const char* cavsim_version(void) { return CAVSIM_VERSION; }

const char* cavsim_status_name(cavsim_status s) {
  switch (s) {
    case CAVSIM_OK: return "ok";
    case CAVSIM_ERR_INVALID_ARGUMENT: return "invalid argument";
    case CAVSIM_ERR_NOT_FOUND: return "not found";
    case CAVSIM_ERR_IO: return "i/o error";
    case CAVSIM_ERR_SCHEMA: return "schema error";
    case CAVSIM_ERR_EMPTY_BIN: return "empty bin";
    case CAVSIM_ERR_NO_CONVERGENCE: return "no convergence";
    case CAVSIM_ERR_INSUFFICIENT_DATA: return "insufficient data";
    case CAVSIM_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

cavsim_status cavsim_config_default(cavsim_config** out) {
  return guarded([&] {
    require(out, "null output pointer");
    *out = new cavsim_config;
  });
}

cavsim_status cavsim_config_parse(const char* text, cavsim_config** out) {
  return guarded([&] {
    require(text && out, "null argument");
    cavsim::Json j;
    try {
      j = cavsim::Json::parse(text, nullptr, true, true);
    } catch (const cavsim::Json::parse_error& e) {
      cavsim::fail(cavsim::ErrorCode::Schema, e.what());
    }
    if (j.is_object() && j.contains("manifest_version")) j = j.at("config");
    auto* c = new cavsim_config;
    c->json = std::move(j);
    *out = c;
  });
}

cavsim_status cavsim_config_load(const char* path, cavsim_config** out) {
  return guarded([&] {
    require(path && out, "null argument");
    auto* c = new cavsim_config;
    try {
      c->json = cavsim::load_config_file(path);
    } catch (...) {
      delete c;
      throw;
    }
    *out = c;
  });
}

cavsim_status cavsim_config_set_seed(cavsim_config* cfg, uint64_t seed) {
  return guarded([&] {
    require(cfg, "null config");
    cfg->json["seed"] = seed;
  });
}

cavsim_status cavsim_config_set_threads(cavsim_config* cfg, int threads) {
  return guarded([&] {
    require(cfg, "null config");
    require(threads >= 0, "threads must be non-negative");
    cfg->json["threads"] = threads;
  });
}

cavsim_status cavsim_config_set_profile(cavsim_config* cfg, const char* profile) {
  return guarded([&] {
    require(cfg && profile, "null argument");
    cfg->json["profile"] = profile;
  });
}

size_t cavsim_config_validate(cavsim_config* cfg, const char** report) {
  if (!cfg) {
    if (report) *report = "null config";
    return 1;
  }
  const cavsim::ConfigReport rep = cavsim::validate_config(cfg->json);
  cfg->report.clear();
  for (const auto& v : rep.violations) cfg->report += v + "\n";
  if (report) *report = cfg->report.c_str();
  return rep.violations.size();
}

const char* cavsim_config_json(cavsim_config* cfg) {
  if (!cfg) return "";
  const cavsim_status s = guarded([&] { cfg->text = cavsim::resolve_config(cfg->json).dump(2); });
  if (s != CAVSIM_OK) cfg->text = cfg->json.dump(2);
  return cfg->text.c_str();
}

void cavsim_config_free(cavsim_config* cfg) { delete cfg; }

size_t cavsim_experiment_count(void) { return cavsim::experiment_names().size(); }

const char* cavsim_experiment_name(size_t i) {
  const auto& n = cavsim::experiment_names();
  return i < n.size() ? n[i].c_str() : nullptr;
}

cavsim_status cavsim_run_experiment(const cavsim_config* cfg, const char* name, int check, cavsim_run** out) {
  return guarded([&] {
    require(cfg && name && out, "null argument");
    auto* r = new cavsim_run;
    try {
      r->result = cavsim::run_experiment(name, cfg->json, check != 0);
      r->summary = r->result.summary.dump(2);
    } catch (...) {
      delete r;
      throw;
    }
    *out = r;
  });
}

cavsim_status cavsim_run_write(const cavsim_run* run, const char* dir) {
  return guarded([&] {
    require(run && dir, "null argument");
    cavsim::write_run(run->result, dir);
  });
}

size_t cavsim_run_file_count(const cavsim_run* run) { return run ? run->result.files.size() : 0; }

const char* cavsim_run_file_name(const cavsim_run* run, size_t i) {
  return run && i < run->result.files.size() ? run->result.files[i].name.c_str() : nullptr;
}

size_t cavsim_run_check_count(const cavsim_run* run) { return run ? run->result.checks.size() : 0; }

cavsim_status cavsim_run_check(const cavsim_run* run, size_t i, const char** id, const char** description,
                               int* passed, int* informational, const char** detail) {
  return guarded([&] {
    require(run, "null run");
    if (i >= run->result.checks.size()) cavsim::fail(cavsim::ErrorCode::InvalidArgument, "check index out of range");
    const cavsim::Check& c = run->result.checks[i];
    if (id) *id = c.id.c_str();
    if (description) *description = c.description.c_str();
    if (passed) *passed = c.passed ? 1 : 0;
    if (informational) *informational = c.informational ? 1 : 0;
    if (detail) *detail = c.detail.c_str();
  });
}

int cavsim_run_passed(const cavsim_run* run) { return run && run->result.passed() ? 1 : 0; }

double cavsim_run_seconds(const cavsim_run* run) { return run ? run->result.wall_seconds : 0.0; }

const char* cavsim_run_summary_json(const cavsim_run* run) { return run ? run->summary.c_str() : ""; }

void cavsim_run_free(cavsim_run* run) { delete run; }

uint64_t cavsim_derive_seed(uint64_t master, const char* label) {
  return cavsim::derive_seed(master, label ? label : "");
}

cavsim_status cavsim_wigner_3j(double j1, double j2, double j3, double m1, double m2, double m3, double* out) {
  return guarded([&] {
    require(out, "null output pointer");
    *out = cavsim::wigner_3j(j1, j2, j3, m1, m2, m3);
  });
}

cavsim_status cavsim_wigner_6j(double j1, double j2, double j3, double j4, double j5, double j6, double* out) {
  return guarded([&] {
    require(out, "null output pointer");
    *out = cavsim::wigner_6j(j1, j2, j3, j4, j5, j6);
  });
}

cavsim_status cavsim_transmission(double nu_c, double kappa, double gamma, size_t n_lines, const double* nu_lines,
                                  const double* g, size_t n_grid, const double* grid, double* out) {
  return guarded([&] {
    require((n_lines == 0 || (nu_lines && g)) && (n_grid == 0 || (grid && out)), "null array argument");
    cavsim::TransmissionModel m;
    m.nu_c = nu_c;
    m.kappa = kappa;
    m.gamma = gamma;
    m.nu.assign(nu_lines, nu_lines + n_lines);
    for (size_t i = 0; i < n_lines; ++i) m.g2.push_back(g[i] * g[i]);
    m.validate();
    for (size_t i = 0; i < n_grid; ++i) out[i] = std::norm(cavsim::transmission_amplitude(grid[i], m));
  });
}

cavsim_status cavsim_arrowhead_solve(double apex, size_t n, const double* d, const double* g, double* eigenvalues,
                                     double* pw, double* s_pw) {
  return guarded([&] {
    require(n == 0 || (d && g), "null array argument");
    cavsim::ArrowheadMatrix m;
    m.apex = apex;
    m.diagonal.assign(d, d + n);
    m.arm.assign(g, g + n);
    const cavsim::EigenSolution s = cavsim::eigensolve_arrowhead(m);
    for (size_t i = 0; i <= n; ++i) {
      if (eigenvalues) eigenvalues[i] = s.eigenvalues[i];
      if (pw) pw[i] = s.pw[i];
    }
    if (s_pw) *s_pw = cavsim::s_pw(s);
  });
}

}  // extern "C"
