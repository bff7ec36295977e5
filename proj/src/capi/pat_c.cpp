#include "pat/pat.h"

#include <cstring>
#include <filesystem>
#include <memory>
#include <string>

#include "pat/errors.hpp"
#include "pat/harness.hpp"

#ifndef PAT_VERSION
#define PAT_VERSION "0.0.0"
#endif

struct pat_config {
  pat::harness::ExperimentConfig cfg;
};

struct pat_run {
  pat::harness::RunResult result;
};

namespace {

thread_local std::string g_last_error;

pat_status fail(pat_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

// Runs f and translates exceptions into status codes.
template <typename F>
pat_status guarded(F&& f) {
  try {
    g_last_error.clear();
    f();
    return PAT_OK;
  } catch (const pat::ConfigError& e) {
    return fail(PAT_ERR_CONFIG, e.what());
  } catch (const pat::UsageError& e) {
    return fail(PAT_ERR_USAGE, e.what());
  } catch (const pat::AdviceUnavailable& e) {
    return fail(PAT_ERR_USAGE, e.what());
  } catch (const pat::DimensionError& e) {
    return fail(PAT_ERR_DIMENSION, e.what());
  } catch (const pat::IncompatibleError& e) {
    return fail(PAT_ERR_INCOMPATIBLE, e.what());
  } catch (const pat::DecodeError& e) {
    return fail(PAT_ERR_DECODE, e.what());
  } catch (const pat::NumericError& e) {
    return fail(PAT_ERR_NUMERIC, e.what());
  } catch (const pat::IoError& e) {
    return fail(PAT_ERR_IO, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(PAT_ERR_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail(PAT_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(PAT_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(PAT_ERR_INTERNAL, "unknown failure");
  }
}

pat_status copy_out(const std::string& s, char* buf, size_t cap, size_t* needed) {
  if (needed) *needed = s.size() + 1;
  if (buf && cap > 0) {
    const size_t n = std::min(cap - 1, s.size());
    std::memcpy(buf, s.data(), n);
    buf[n] = '\0';
  }
  if (buf && cap < s.size() + 1) return fail(PAT_ERR_USAGE, "buffer too small");
  return PAT_OK;
}

pat_metrics to_c(const pat::harness::EpisodeRecord& r) {
  return {r.avg_step, r.success, r.team_reward, r.student_mode_freq, r.discounted_return};
}

pat::harness::Observer make_observer(pat_episode_fn cb, void* user) {
  pat::harness::Observer obs;
  if (cb) {
    obs.on_episode = [cb, user](std::uint64_t seed, const pat::harness::EpisodeRecord& r) {
      const pat_metrics m = to_c(r);
      cb(user, seed, r.episode, &m);
    };
  }
  return obs;
}

#define REQUIRE_ARG(x)                                          \
  do {                                                          \
    if (!(x)) return fail(PAT_ERR_USAGE, "null argument: " #x); \
  } while (0)

}  // namespace

extern "C" {

const char* pat_version(void) { return PAT_VERSION; }

const char* pat_last_error(void) { return g_last_error.c_str(); }

const char* pat_status_name(pat_status s) {
  switch (s) {
    case PAT_OK: return "ok";
    case PAT_ERR_CONFIG: return "config error";
    case PAT_ERR_USAGE: return "usage error";
    case PAT_ERR_DIMENSION: return "dimension error";
    case PAT_ERR_INCOMPATIBLE: return "incompatible snapshot";
    case PAT_ERR_DECODE: return "decode error";
    case PAT_ERR_NUMERIC: return "numeric error";
    case PAT_ERR_IO: return "i/o error";
    case PAT_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

pat_status pat_config_new(pat_config** out) {
  REQUIRE_ARG(out);
  return guarded([&] { *out = new pat_config{}; });
}

pat_status pat_config_parse(const char* text, const char* origin, pat_config** out) {
  REQUIRE_ARG(text);
  REQUIRE_ARG(out);
  return guarded([&] {
    auto c = std::make_unique<pat_config>();
    c->cfg = pat::harness::parse_config(text, origin ? origin : "<config>");
    *out = c.release();
  });
}

pat_status pat_config_load(const char* path, pat_config** out) {
  REQUIRE_ARG(path);
  REQUIRE_ARG(out);
  return guarded([&] {
    auto c = std::make_unique<pat_config>();
    c->cfg = pat::harness::load_config(path);
    *out = c.release();
  });
}

pat_status pat_config_clone(const pat_config* cfg, pat_config** out) {
  REQUIRE_ARG(cfg);
  REQUIRE_ARG(out);
  return guarded([&] { *out = new pat_config{cfg->cfg}; });
}

void pat_config_free(pat_config* cfg) { delete cfg; }

pat_status pat_config_set(pat_config* cfg, const char* key, const char* value) {
  REQUIRE_ARG(cfg);
  REQUIRE_ARG(key);
  REQUIRE_ARG(value);
  return guarded([&] { cfg->cfg.set(key, value); });
}

pat_status pat_config_override(pat_config* cfg, const char* assignment) {
  REQUIRE_ARG(cfg);
  REQUIRE_ARG(assignment);
  return guarded([&] { pat::harness::apply_override(cfg->cfg, assignment); });
}

pat_status pat_config_validate(const pat_config* cfg) {
  REQUIRE_ARG(cfg);
  return guarded([&] { cfg->cfg.validate(); });
}

pat_status pat_config_get(const pat_config* cfg, const char* key, char* buf, size_t cap, size_t* needed) {
  REQUIRE_ARG(cfg);
  REQUIRE_ARG(key);
  std::string v;
  const pat_status s = guarded([&] { v = cfg->cfg.get(key); });
  return s == PAT_OK ? copy_out(v, buf, cap, needed) : s;
}

pat_status pat_config_text(const pat_config* cfg, char* buf, size_t cap, size_t* needed) {
  REQUIRE_ARG(cfg);
  return copy_out(cfg->cfg.to_text(), buf, cap, needed);
}

size_t pat_config_key_count(void) { return pat::harness::config_keys().size(); }

const char* pat_config_key_name(size_t i) {
  const auto& keys = pat::harness::config_keys();
  return i < keys.size() ? keys[i].name.c_str() : nullptr;
}

const char* pat_config_key_help(size_t i) {
  const auto& keys = pat::harness::config_keys();
  return i < keys.size() ? keys[i].help.c_str() : nullptr;
}

pat_status pat_train(const pat_config* cfg, const char* out_dir, pat_episode_fn cb, void* user,
                     pat_run** out) {
  REQUIRE_ARG(cfg);
  REQUIRE_ARG(out);
  return guarded([&] {
    const auto obs = make_observer(cb, user);
    auto run = std::make_unique<pat_run>();
    run->result = pat::harness::run_training(cfg->cfg, out_dir ? out_dir : "", &obs);
    *out = run.release();
  });
}

pat_status pat_transfer(const pat_config* cfg, const char* ats_snapshot, const char* out_dir,
                        pat_episode_fn cb, void* user, pat_run** out) {
  REQUIRE_ARG(cfg);
  REQUIRE_ARG(ats_snapshot);
  REQUIRE_ARG(out);
  return guarded([&] {
    const auto obs = make_observer(cb, user);
    auto run = std::make_unique<pat_run>();
    run->result = pat::harness::run_transfer(cfg->cfg, ats_snapshot, out_dir ? out_dir : "", &obs);
    *out = run.release();
  });
}

void pat_run_free(pat_run* run) { delete run; }

size_t pat_run_seed_count(const pat_run* run) { return run ? run->result.seeds.size() : 0; }

pat_status pat_run_seed(const pat_run* run, size_t i, uint64_t* seed, int* diverged,
                        pat_metrics* final_window) {
  REQUIRE_ARG(run);
  if (i >= run->result.seeds.size()) return fail(PAT_ERR_USAGE, "seed index out of range");
  const auto& s = run->result.seeds[i];
  if (seed) *seed = s.seed;
  if (diverged) *diverged = s.diverged ? 1 : 0;
  if (final_window) *final_window = to_c(s.final_window);
  return PAT_OK;
}

size_t pat_run_diverged_count(const pat_run* run) { return run ? run->result.summary.diverged_seeds : 0; }

pat_status pat_run_summary(const pat_run* run, const char* metric, double* mean, double* std,
                           size_t* n_seeds) {
  REQUIRE_ARG(run);
  REQUIRE_ARG(metric);
  const auto& m = run->result.summary.metrics;
  const auto it = m.find(metric);
  if (it == m.end()) return fail(PAT_ERR_USAGE, std::string("unknown metric ") + metric);
  if (mean) *mean = it->second.mean;
  if (std) *std = it->second.std;
  if (n_seeds) *n_seeds = it->second.n_seeds;
  return PAT_OK;
}

pat_status pat_run_summary_json(const pat_run* run, char* buf, size_t cap, size_t* needed) {
  REQUIRE_ARG(run);
  std::string text;
  const pat_status s = guarded([&] { text = pat::harness::summary_json(run->result); });
  return s == PAT_OK ? copy_out(text, buf, cap, needed) : s;
}

pat_status pat_evaluate(const pat_config* cfg, const char* snapshot_dir, size_t episodes,
                        uint64_t eval_seed, pat_metrics* out) {
  REQUIRE_ARG(cfg);
  REQUIRE_ARG(snapshot_dir);
  REQUIRE_ARG(out);
  return guarded([&] {
    cfg->cfg.validate();
    if (!std::filesystem::is_directory(snapshot_dir)) {
      throw pat::IoError(std::string("no snapshot directory ") + snapshot_dir);
    }
    auto c = cfg->cfg;
    c.ats_pretrained.clear();
    auto team = pat::harness::make_team(c, 0);
    team->load(snapshot_dir);
    *out = to_c(pat::harness::evaluate(c, *team, episodes, eval_seed));
  });
}

pat_status pat_oracle_return(const pat_config* cfg, double* out) {
  REQUIRE_ARG(cfg);
  REQUIRE_ARG(out);
  return guarded([&] {
    cfg->cfg.env.validate();
    *out = pat::envs::oracle_optimal_return(cfg->cfg.env);
  });
}

}  // extern "C"
