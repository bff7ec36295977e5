#ifndef PAT_PAT_H
#define PAT_PAT_H

/* C interface to the pat library. Every call returns a pat_status; on
 * failure pat_last_error() holds a one-line message for the calling thread.
 * Handles are opaque and owned by the caller until the matching _free. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define PAT_API __declspec(dllexport)
#else
#define PAT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum pat_status {
  PAT_OK = 0,
  PAT_ERR_CONFIG = 1,       /* unknown key, malformed or out-of-range value */
  PAT_ERR_USAGE = 2,        /* bad argument or call order */
  PAT_ERR_DIMENSION = 3,
  PAT_ERR_INCOMPATIBLE = 4, /* snapshot does not fit the run */
  PAT_ERR_DECODE = 5,       /* unreadable or corrupt snapshot */
  PAT_ERR_NUMERIC = 6,
  PAT_ERR_IO = 7,
  PAT_ERR_INTERNAL = 8
} pat_status;

typedef struct pat_config pat_config;
typedef struct pat_run pat_run;

typedef struct pat_metrics {
  double avg_step;
  double success;
  double team_reward;
  double student_mode_freq;
  double discounted_return;
} pat_metrics;

/* Called after every training episode. With several workers it may run on
 * any of them, concurrently. */
typedef void (*pat_episode_fn)(void* user, uint64_t seed, size_t episode, const pat_metrics* m);

PAT_API const char* pat_version(void);
PAT_API const char* pat_last_error(void);
PAT_API const char* pat_status_name(pat_status s);

/* ---- configuration ---- */
PAT_API pat_status pat_config_new(pat_config** out);
PAT_API pat_status pat_config_parse(const char* text, const char* origin, pat_config** out);
PAT_API pat_status pat_config_load(const char* path, pat_config** out);
PAT_API pat_status pat_config_clone(const pat_config* cfg, pat_config** out);
PAT_API void pat_config_free(pat_config* cfg);
PAT_API pat_status pat_config_set(pat_config* cfg, const char* key, const char* value);
/* "key=value" */
PAT_API pat_status pat_config_override(pat_config* cfg, const char* assignment);
PAT_API pat_status pat_config_validate(const pat_config* cfg);

/* String getters copy at most cap bytes including the terminator and report
 * the full size (terminator included) in *needed when it is non-null. */
PAT_API pat_status pat_config_get(const pat_config* cfg, const char* key, char* buf, size_t cap,
                                  size_t* needed);
PAT_API pat_status pat_config_text(const pat_config* cfg, char* buf, size_t cap, size_t* needed);

/* Number of documented keys and their names / help lines. */
PAT_API size_t pat_config_key_count(void);
PAT_API const char* pat_config_key_name(size_t i);
PAT_API const char* pat_config_key_help(size_t i);

/* ---- runs ---- */
/* out_dir may be null: nothing is written. */
PAT_API pat_status pat_train(const pat_config* cfg, const char* out_dir, pat_episode_fn cb, void* user,
                             pat_run** out);
PAT_API pat_status pat_transfer(const pat_config* cfg, const char* ats_snapshot, const char* out_dir,
                                pat_episode_fn cb, void* user, pat_run** out);
PAT_API void pat_run_free(pat_run* run);

PAT_API size_t pat_run_seed_count(const pat_run* run);
PAT_API pat_status pat_run_seed(const pat_run* run, size_t i, uint64_t* seed, int* diverged,
                                pat_metrics* final_window);
PAT_API size_t pat_run_diverged_count(const pat_run* run);
/* metric: avg_step, success, team_reward, student_mode_freq, discounted_return */
PAT_API pat_status pat_run_summary(const pat_run* run, const char* metric, double* mean, double* std,
                                   size_t* n_seeds);
PAT_API pat_status pat_run_summary_json(const pat_run* run, char* buf, size_t cap, size_t* needed);

/* Greedy evaluation of a team restored from a snapshot directory written by
 * a training run (snapshots/seed<s>). Environment seeds start at eval_seed. */
PAT_API pat_status pat_evaluate(const pat_config* cfg, const char* snapshot_dir, size_t episodes,
                                uint64_t eval_seed, pat_metrics* out);

/* Exact optimal return for a single-agent environment small enough for
 * value iteration. */
PAT_API pat_status pat_oracle_return(const pat_config* cfg, double* out);

#ifdef __cplusplus
}
#endif

#endif
