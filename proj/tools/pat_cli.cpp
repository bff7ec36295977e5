// Command-line front end. Talks to the library only through pat.h.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pat/pat.h"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

struct CliError {
  int code;
  std::string message;
};

int exit_code_for(pat_status s) {
  switch (s) {
    case PAT_OK: return kExitOk;
    case PAT_ERR_NUMERIC:
    case PAT_ERR_INTERNAL: return kExitRuntime;
    default: return kExitUsage;
  }
}

void check(pat_status s) {
  if (s != PAT_OK) throw CliError{exit_code_for(s), std::string(pat_status_name(s)) + ": " + pat_last_error()};
}

using ConfigPtr = std::unique_ptr<pat_config, decltype(&pat_config_free)>;
using RunPtr = std::unique_ptr<pat_run, decltype(&pat_run_free)>;

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::size_t seeds = 0;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c, bool wants_out) {
  cmd->add_option("--config", c.config, "Config file (key = value per line)");
  cmd->add_option("--set", c.sets, "Override KEY=VALUE, applied after the file; repeatable")
      ->type_name("K=V");
  if (wants_out) cmd->add_option("--out", c.out, "Output directory")->required();
  cmd->add_option("--seeds", c.seeds, "Run seeds 1..N (overrides the seed list)");
  cmd->add_flag("--quiet,-q", c.quiet, "Only print errors");
}

// File first, then --seeds, then every --set in order.
ConfigPtr resolve(const Common& c) {
  pat_config* raw = nullptr;
  if (c.config.empty()) {
    check(pat_config_new(&raw));
  } else {
    check(pat_config_load(c.config.c_str(), &raw));
  }
  ConfigPtr cfg(raw, pat_config_free);
  if (c.seeds > 0) {
    std::string list;
    for (std::size_t s = 1; s <= c.seeds; ++s) list += (s > 1 ? "," : "") + std::to_string(s);
    check(pat_config_set(cfg.get(), "seeds", list.c_str()));
  }
  for (const auto& s : c.sets) check(pat_config_override(cfg.get(), s.c_str()));
  check(pat_config_validate(cfg.get()));
  return cfg;
}

std::string config_text(const pat_config* cfg) {
  std::size_t need = 0;
  check(pat_config_text(cfg, nullptr, 0, &need));
  std::string s(need, '\0');
  check(pat_config_text(cfg, s.data(), s.size(), nullptr));
  s.resize(need - 1);
  return s;
}

std::string config_value(const pat_config* cfg, const char* key) {
  std::size_t need = 0;
  check(pat_config_get(cfg, key, nullptr, 0, &need));
  std::string s(need, '\0');
  check(pat_config_get(cfg, key, s.data(), s.size(), nullptr));
  s.resize(need - 1);
  return s;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
  if (!f) throw CliError{kExitUsage, "cannot write " + p.string()};
}

void prepare_out(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw CliError{kExitUsage, "cannot create output directory " + out + ": " + ec.message()};
}

void write_manifest(const fs::path& out, const std::string& command, const Common& c,
                    const pat_config* cfg, const std::vector<std::pair<std::string, std::string>>& extra) {
  std::string m = "# pat run manifest\n";
  m += "version = " + std::string(pat_version()) + "\n";
  m += "command = " + command + "\n";
  m += "config_file = " + (c.config.empty() ? std::string("none") : c.config) + "\n";
  for (const auto& s : c.sets) m += "override = " + s + "\n";
  for (const auto& [k, v] : extra) m += k + " = " + v + "\n";
  m += "resolved_seeds = " + config_value(cfg, "seeds") + "\n";
  m += "\n# resolved config\n" + config_text(cfg) + "\n";
  write_text(out / "manifest.txt", m);
}

void progress(void* user, uint64_t seed, size_t episode, const pat_metrics* m) {
  const auto every = *static_cast<const std::size_t*>(user);
  if (every == 0 || (episode + 1) % every != 0) return;
  std::fprintf(stderr, "seed %llu episode %zu: steps %.1f team reward %.3f student %.3f\n",
               static_cast<unsigned long long>(seed), episode + 1, m->avg_step, m->team_reward,
               m->student_mode_freq);
}

void report(const pat_run* run, bool quiet) {
  if (quiet) return;
  for (const char* metric : {"avg_step", "success", "team_reward", "student_mode_freq"}) {
    double mean = 0, sd = 0;
    std::size_t n = 0;
    check(pat_run_summary(run, metric, &mean, &sd, &n));
    std::printf("%-18s %.4f +- %.4f (n=%zu)\n", metric, mean, sd, n);
  }
  if (const auto d = pat_run_diverged_count(run); d > 0) std::printf("diverged seeds: %zu\n", d);
}

int finish(const pat_run* run) {
  return pat_run_diverged_count(run) == pat_run_seed_count(run) ? kExitRuntime : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-based teacher-student multi-agent training"};
  app.set_version_flag("--version", std::string(pat_version()));
  app.require_subcommand(1);

  Common train_opt, eval_opt, xfer_opt, oracle_opt, check_opt;
  std::size_t every = 50;
  bool no_snapshots = false;

  auto* train = app.add_subcommand("train", "Train every seed and write logs under --out");
  add_common(train, train_opt, true);
  train->add_option("--progress-every", every, "Progress line every N episodes (0: none)");
  train->add_flag("--no-snapshots", no_snapshots, "Do not write parameter snapshots");

  std::string snapshot_dir;
  std::size_t eval_episodes = 0;
  std::uint64_t eval_seed = 1000000;
  auto* eval = app.add_subcommand("eval", "Greedy evaluation of a saved team");
  add_common(eval, eval_opt, true);
  eval->add_option("--snapshot", snapshot_dir, "Snapshot directory (snapshots/seed<s> of a run)")
      ->required();
  eval->add_option("--episodes", eval_episodes, "Episodes (default: eval_episodes)");
  eval->add_option("--eval-seed", eval_seed, "First environment seed");

  std::string ats_path;
  auto* transfer = app.add_subcommand("transfer", "Train with a pretrained attention selector");
  add_common(transfer, xfer_opt, true);
  transfer->add_option("--ats", ats_path, "Attention snapshot (ats.patp)")->required();
  transfer->add_option("--progress-every", every, "Progress line every N episodes (0: none)");

  auto* oracle = app.add_subcommand("oracle", "Optimal return of a tiny single-agent spec");
  add_common(oracle, oracle_opt, false);

  auto* validate = app.add_subcommand("validate-config", "Parse, resolve and check a config");
  add_common(validate, check_opt, false);
  bool list_keys = false;
  validate->add_flag("--keys", list_keys, "List every config key");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) {
      auto cfg = resolve(train_opt);
      if (no_snapshots) check(pat_config_set(cfg.get(), "log.snapshots", "false"));
      prepare_out(train_opt.out);
      write_manifest(train_opt.out, "train", train_opt, cfg.get(), {});
      pat_run* raw = nullptr;
      std::size_t cadence = train_opt.quiet ? 0 : every;
      check(pat_train(cfg.get(), train_opt.out.c_str(), progress, &cadence, &raw));
      RunPtr run(raw, pat_run_free);
      report(run.get(), train_opt.quiet);
      return finish(run.get());
    }
    if (*transfer) {
      auto cfg = resolve(xfer_opt);
      prepare_out(xfer_opt.out);
      write_manifest(xfer_opt.out, "transfer", xfer_opt, cfg.get(), {{"ats_snapshot", ats_path}});
      pat_run* raw = nullptr;
      std::size_t cadence = xfer_opt.quiet ? 0 : every;
      check(pat_transfer(cfg.get(), ats_path.c_str(), xfer_opt.out.c_str(), progress,
                         &cadence, &raw));
      RunPtr run(raw, pat_run_free);
      report(run.get(), xfer_opt.quiet);
      return finish(run.get());
    }
    if (*eval) {
      auto cfg = resolve(eval_opt);
      const std::size_t n =
          eval_episodes > 0 ? eval_episodes : std::stoul(config_value(cfg.get(), "eval_episodes"));
      pat_metrics m{};
      check(pat_evaluate(cfg.get(), snapshot_dir.c_str(), n, eval_seed, &m));
      prepare_out(eval_opt.out);
      write_manifest(eval_opt.out, "eval", eval_opt, cfg.get(),
                     {{"snapshot", snapshot_dir}, {"episodes", std::to_string(n)},
                      {"eval_seed", std::to_string(eval_seed)}});
      char line[512];
      std::snprintf(line, sizeof line,
                    "{\n  \"episodes\": %zu,\n  \"avg_step\": %.17g,\n  \"success\": %.17g,\n"
                    "  \"team_reward\": %.17g,\n  \"student_mode_freq\": %.17g,\n"
                    "  \"discounted_return\": %.17g\n}\n",
                    n, m.avg_step, m.success, m.team_reward, m.student_mode_freq, m.discounted_return);
      write_text(fs::path(eval_opt.out) / "eval.json", line);
      if (!eval_opt.quiet) std::fputs(line, stdout);
      return kExitOk;
    }
    if (*oracle) {
      auto cfg = resolve(oracle_opt);
      double v = 0.0;
      check(pat_oracle_return(cfg.get(), &v));
      std::printf("%.12f\n", v);
      return kExitOk;
    }
    if (*validate) {
      if (list_keys) {
        for (std::size_t i = 0; i < pat_config_key_count(); ++i) {
          std::printf("%-28s %s\n", pat_config_key_name(i), pat_config_key_help(i));
        }
        return kExitOk;
      }
      auto cfg = resolve(check_opt);
      if (!check_opt.quiet) std::fputs(config_text(cfg.get()).c_str(), stdout);
      return kExitOk;
    }
  } catch (const CliError& e) {
    std::fprintf(stderr, "pat: %s\n", e.message.c_str());
    return e.code;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "pat: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
