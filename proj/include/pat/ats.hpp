#pragma once

#include <cstddef>
#include <filesystem>
#include <random>
#include <vector>

#include "pat/adam.hpp"
#include "pat/layers.hpp"
#include "pat/tape.hpp"

namespace pat::ats {

// Topology of the shared selector. p is the flattened actor length.
struct AtsDims {
  std::size_t d_m = 32;
  std::size_t d_h = 64;
  std::size_t d_q = 32;
  std::size_t d_v = 64;
  std::size_t p = 0;
  std::size_t heads = 4;
  double dropout = 0.1;

  void validate() const;
  friend bool operator==(const AtsDims&, const AtsDims&) = default;
};

// Immutable snapshot of a teammate: encoder (h, c) and flattened actor.
struct TeacherPacket {
  int id = 0;
  nn::Tensor key;    // 1 x d_h
  nn::Tensor theta;  // 1 x p
};

// Per-teacher projections (W_K h_j and W_V theta_j for every head). They do
// not depend on the student, so a step computes them once for the team.
struct TeacherSummary {
  int id = 0;
  std::vector<nn::Tensor> keys;    // per head, d_q
  std::vector<nn::Tensor> values;  // per head, d_v
};

struct AdviceResult {
  int action = 0;
  std::vector<std::vector<double>> weights;  // [head][teacher], input order
  nn::Tensor decoded;                        // 1 x p
  nn::Tensor logits;                         // decoded actor at m
};

class AttentionSelector {
 public:
  AttentionSelector() = default;
  // actor_spec is the shared actor topology; its parameter count must be p.
  AttentionSelector(const AtsDims& dims, nn::MlpSpec actor_spec, std::mt19937_64& rng,
                    nn::AdamConfig opt = {});
  // Wraps existing parameters (import path).
  AttentionSelector(const AtsDims& dims, nn::MlpSpec actor_spec, nn::ParamSet params,
                    nn::AdamConfig opt = {});

  const AtsDims& dims() const { return dims_; }
  const nn::MlpSpec& actor_spec() const { return actor_spec_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }
  nn::AdamState& optimizer() { return opt_; }

  static nn::ParamLayout layout(const AtsDims& dims);

 private:
  AtsDims dims_;
  nn::MlpSpec actor_spec_;
  nn::ParamSet params_;
  nn::AdamState opt_;
};

std::vector<TeacherSummary> summarize(const AttentionSelector& sel,
                                      const std::vector<TeacherPacket>& packets);

// Pre-softmax scores per head: (W_Q m) . (W_K h_j) / sqrt(d_q).
std::vector<std::vector<double>> attend_logits(const AttentionSelector& sel, const nn::Tensor& m,
                                               const std::vector<TeacherSummary>& teachers);
std::vector<std::vector<double>> attend_weights(const AttentionSelector& sel, const nn::Tensor& m,
                                                const std::vector<TeacherSummary>& teachers);
std::vector<std::vector<double>> attend_weights(const AttentionSelector& sel, const nn::Tensor& m,
                                                const std::vector<TeacherPacket>& packets);

// training: head dropout and a Gumbel-max sample; rng is then required.
AdviceResult advise(const AttentionSelector& sel, const nn::Tensor& m,
                    const std::vector<TeacherSummary>& teachers, bool training = false,
                    std::mt19937_64* rng = nullptr);
AdviceResult advise(const AttentionSelector& sel, const nn::Tensor& m,
                    const std::vector<TeacherPacket>& packets, bool training = false,
                    std::mt19937_64* rng = nullptr);

// One student-mode step of one agent. team[student] is the student itself and
// is left out of its attention.
struct AtsSample {
  std::size_t student = 0;
  nn::Tensor m;                    // 1 x d_m
  nn::ParamSet* critic = nullptr;  // the student's own self critic
  nn::MlpSpec critic_spec;
};

struct AtsBatch {
  std::vector<TeacherPacket> team;
  std::vector<AtsSample> samples;
};

// Per-sample randomness for the relaxed objective.
struct AtsNoise {
  std::vector<nn::Tensor> gumbel;              // per sample, 1 x actions
  std::vector<std::vector<double>> head_gain;  // per sample, per head: 0 or 1/(1-p_d)
};

AtsNoise draw_noise(const AttentionSelector& sel, const AtsBatch& batch, std::size_t actions,
                    bool dropout, std::mt19937_64& rng);

// Batch mean of Q_i(m_i, gumbel_softmax(decoded actor logits)). Selector
// parameters are bound trainable, critics frozen.
nn::Var ats_objective(nn::Tape& tape, AttentionSelector& sel, const AtsBatch& batch,
                      const AtsNoise& noise, double temperature);

struct AtsUpdate {
  bool applied = false;
  double objective = 0.0;
};

// One Adam ascent step on the pooled batch. Empty batch: nothing happens.
AtsUpdate update_ats(AttentionSelector& sel, const AtsBatch& batch, double temperature,
                     std::mt19937_64& rng);

// Snapshot with an "ats.header" entry (d_m, d_h, d_q, d_v, p, heads, dropout).
void export_shared(const AttentionSelector& sel, const std::filesystem::path& path);
// d_m, d_h, p and heads must match expected; d_q and d_v come from the file,
// dropout from expected. Mismatch raises IncompatibleError naming the dims.
AttentionSelector import_shared(const std::filesystem::path& path, const AtsDims& expected,
                                nn::MlpSpec actor_spec, nn::AdamConfig opt = {});

}  // namespace pat::ats
