#include "pat/ats.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>

#include "pat/errors.hpp"
#include "pat/snapshot.hpp"

namespace pat::ats {

using nn::ParamSet;
using nn::Shape;
using nn::Tape;
using nn::Tensor;
using nn::Var;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using CVec = Eigen::Map<const Eigen::VectorXd>;
using Vec = Eigen::Map<Eigen::VectorXd>;

const char* kHeaderName = "ats.header";

std::string wq(std::size_t h) { return "WQ" + std::to_string(h); }
std::string wk(std::size_t h) { return "WK" + std::to_string(h); }
std::string wv(std::size_t h) { return "WV" + std::to_string(h); }

CMap mat(const Tensor& t) { return CMap(t.data(), t.rows(), t.cols()); }

Tensor row_of(const Tensor& t) { return t.rank() == 2 ? t : t.reshaped(Shape{1, t.size()}); }

// Indices ordered by teacher id, so sums over teachers do not depend on the
// order packets arrive in.
std::vector<std::size_t> canonical_order(const std::vector<TeacherSummary>& teachers) {
  std::vector<std::size_t> idx(teachers.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return teachers[a].id < teachers[b].id; });
  for (std::size_t i = 1; i < idx.size(); ++i) {
    if (teachers[idx[i]].id == teachers[idx[i - 1]].id) {
      throw UsageError("duplicate teacher id " + std::to_string(teachers[idx[i]].id));
    }
  }
  return idx;
}

void check_m(const AttentionSelector& sel, const Tensor& m) {
  if (m.size() != sel.dims().d_m) {
    throw DimensionError("attention query width " + std::to_string(m.size()) + ", expected " +
                         std::to_string(sel.dims().d_m));
  }
}

int argmax(const Tensor& t) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < t.size(); ++i) {
    if (t[i] > t[best]) best = i;
  }
  return static_cast<int>(best);
}

Tensor sample_gumbel_row(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor g(Shape{1, n});
  for (auto& v : g.values()) {
    double x = u(rng);
    while (x <= 0.0) x = u(rng);
    v = -std::log(-std::log(x));
  }
  return g;
}

}  // namespace

void AtsDims::validate() const {
  if (d_m == 0 || d_h == 0 || d_q == 0 || d_v == 0 || p == 0 || heads == 0) {
    throw ConfigError("attention dims must all be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("attention dropout must be in [0, 1)");
}

nn::ParamLayout AttentionSelector::layout(const AtsDims& d) {
  nn::ParamLayout out;
  for (std::size_t h = 0; h < d.heads; ++h) {
    out.push_back({wq(h), Shape{d.d_q, d.d_m}});
    out.push_back({wk(h), Shape{d.d_q, d.d_h}});
    out.push_back({wv(h), Shape{d.d_v, d.p}});
  }
  out.push_back({"WT", Shape{d.p, d.heads * d.d_v}});
  return out;
}

AttentionSelector::AttentionSelector(const AtsDims& dims, nn::MlpSpec actor_spec,
                                     std::mt19937_64& rng, nn::AdamConfig opt)
    : dims_(dims), actor_spec_(std::move(actor_spec)) {
  dims_.validate();
  if (actor_spec_.param_count() != dims_.p) {
    throw InvariantError("attention p = " + std::to_string(dims_.p) + " but the actor has " +
                         std::to_string(actor_spec_.param_count()) + " parameters");
  }
  params_ = ParamSet(layout(dims_));
  auto uniform = [&](Tensor& t, double bound) {
    std::uniform_real_distribution<double> d(-bound, bound);
    for (auto& v : t.values()) v = d(rng);
  };
  const double pd = static_cast<double>(dims_.p);
  // W_T starts as a scaled transpose of W_V, so that W_T W_V is an unbiased
  // (noisy) reconstruction of the fused teacher parameters.
  const double wt_gain = pd / static_cast<double>(dims_.heads * dims_.d_v);
  Tensor& wt = params_.at("WT").value;
  for (std::size_t h = 0; h < dims_.heads; ++h) {
    uniform(params_.at(wq(h)).value, std::sqrt(6.0 / static_cast<double>(dims_.d_q + dims_.d_m)));
    uniform(params_.at(wk(h)).value, std::sqrt(6.0 / static_cast<double>(dims_.d_q + dims_.d_h)));
    Tensor& v = params_.at(wv(h)).value;
    uniform(v, std::sqrt(3.0 / pd));
    for (std::size_t r = 0; r < dims_.d_v; ++r) {
      for (std::size_t c = 0; c < dims_.p; ++c) {
        wt.at(c, h * dims_.d_v + r) = wt_gain * v.at(r, c);
      }
    }
  }
  opt_ = nn::AdamState(params_, opt);
}

AttentionSelector::AttentionSelector(const AtsDims& dims, nn::MlpSpec actor_spec, ParamSet params,
                                     nn::AdamConfig opt)
    : dims_(dims), actor_spec_(std::move(actor_spec)), params_(std::move(params)) {
  dims_.validate();
  if (actor_spec_.param_count() != dims_.p) {
    throw InvariantError("attention p does not match the actor topology");
  }
  const auto want = layout(dims_);
  if (params_.layout() != want) throw IncompatibleError("attention parameters do not match dims");
  opt_ = nn::AdamState(params_, opt);
}

// ---- plain path --------------------------------------------------------------

std::vector<TeacherSummary> summarize(const AttentionSelector& sel,
                                      const std::vector<TeacherPacket>& packets) {
  const AtsDims& d = sel.dims();
  std::vector<TeacherSummary> out;
  out.reserve(packets.size());
  for (const auto& pk : packets) {
    if (pk.key.size() != d.d_h) {
      throw DimensionError("teacher " + std::to_string(pk.id) + " key width " +
                           std::to_string(pk.key.size()) + ", expected " + std::to_string(d.d_h));
    }
    if (pk.theta.size() != d.p) {
      throw DimensionError("teacher " + std::to_string(pk.id) + " policy length " +
                           std::to_string(pk.theta.size()) + ", expected " + std::to_string(d.p));
    }
    TeacherSummary s;
    s.id = pk.id;
    const CVec key(pk.key.data(), d.d_h);
    const CVec theta(pk.theta.data(), d.p);
    for (std::size_t h = 0; h < d.heads; ++h) {
      Tensor k(Shape{d.d_q});
      Tensor v(Shape{d.d_v});
      Vec(k.data(), d.d_q).noalias() = mat(sel.params().at(wk(h)).value) * key;
      Vec(v.data(), d.d_v).noalias() = mat(sel.params().at(wv(h)).value) * theta;
      s.keys.push_back(std::move(k));
      s.values.push_back(std::move(v));
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::vector<double>> attend_logits(const AttentionSelector& sel, const Tensor& m,
                                               const std::vector<TeacherSummary>& teachers) {
  if (teachers.empty()) throw AdviceUnavailable("no teacher packets available");
  check_m(sel, m);
  const AtsDims& d = sel.dims();
  const double inv = 1.0 / std::sqrt(static_cast<double>(d.d_q));
  const CVec mv(m.data(), d.d_m);
  std::vector<std::vector<double>> out(d.heads, std::vector<double>(teachers.size()));
  for (std::size_t h = 0; h < d.heads; ++h) {
    const Eigen::VectorXd q = mat(sel.params().at(wq(h)).value) * mv;
    for (std::size_t j = 0; j < teachers.size(); ++j) {
      out[h][j] = q.dot(CVec(teachers[j].keys[h].data(), d.d_q)) * inv;
    }
  }
  return out;
}

namespace {

std::vector<std::vector<double>> softmax_heads(const std::vector<std::vector<double>>& logits,
                                               const std::vector<std::size_t>& order) {
  auto out = logits;
  for (auto& row : out) {
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t j : order) {
      row[j] = std::exp(row[j] - mx);
      z += row[j];
    }
    for (double& v : row) v /= z;
  }
  return out;
}

}  // namespace

std::vector<std::vector<double>> attend_weights(const AttentionSelector& sel, const Tensor& m,
                                                const std::vector<TeacherSummary>& teachers) {
  const auto logits = attend_logits(sel, m, teachers);
  return softmax_heads(logits, canonical_order(teachers));
}

std::vector<std::vector<double>> attend_weights(const AttentionSelector& sel, const Tensor& m,
                                                const std::vector<TeacherPacket>& packets) {
  if (packets.empty()) throw AdviceUnavailable("no teacher packets available");
  return attend_weights(sel, m, summarize(sel, packets));
}

AdviceResult advise(const AttentionSelector& sel, const Tensor& m,
                    const std::vector<TeacherSummary>& teachers, bool training,
                    std::mt19937_64* rng) {
  if (training && rng == nullptr) throw UsageError("advise: training mode needs an rng");
  const AtsDims& d = sel.dims();
  AdviceResult res;
  const auto order = canonical_order(teachers);
  res.weights = softmax_heads(attend_logits(sel, m, teachers), order);

  Eigen::VectorXd u = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d.heads * d.d_v));
  for (std::size_t h = 0; h < d.heads; ++h) {
    double gain = 1.0;
    if (training && d.dropout > 0.0) {
      std::bernoulli_distribution drop(d.dropout);
      gain = drop(*rng) ? 0.0 : 1.0 / (1.0 - d.dropout);
    }
    auto seg = u.segment(static_cast<Eigen::Index>(h * d.d_v), static_cast<Eigen::Index>(d.d_v));
    for (std::size_t j : order) seg += res.weights[h][j] * CVec(teachers[j].values[h].data(), d.d_v);
    seg *= gain;
  }
  res.decoded = Tensor(Shape{1, d.p});
  Vec(res.decoded.data(), d.p).noalias() = mat(sel.params().at("WT").value) * u;
  if (res.decoded.size() != sel.actor_spec().param_count()) {
    throw InvariantError("decoded policy length does not match the actor topology");
  }
  const ParamSet actor = nn::unflatten_params(sel.actor_spec().layout(), res.decoded);
  res.logits = nn::mlp_forward(sel.actor_spec(), actor, row_of(m));
  Tensor scored = res.logits;
  if (training) {
    const Tensor g = sample_gumbel_row(scored.size(), *rng);
    for (std::size_t i = 0; i < scored.size(); ++i) scored[i] += g[i];
  }
  res.action = argmax(scored);
  return res;
}

AdviceResult advise(const AttentionSelector& sel, const Tensor& m,
                    const std::vector<TeacherPacket>& packets, bool training,
                    std::mt19937_64* rng) {
  if (packets.empty()) throw AdviceUnavailable("no teacher packets available");
  return advise(sel, m, summarize(sel, packets), training, rng);
}

// ---- training ------------------------------------------------------------------

AtsNoise draw_noise(const AttentionSelector& sel, const AtsBatch& batch, std::size_t actions,
                    bool dropout, std::mt19937_64& rng) {
  const AtsDims& d = sel.dims();
  AtsNoise n;
  std::bernoulli_distribution drop(d.dropout);
  for (std::size_t s = 0; s < batch.samples.size(); ++s) {
    std::vector<double> gains(d.heads, 1.0);
    if (dropout && d.dropout > 0.0) {
      for (double& g : gains) g = drop(rng) ? 0.0 : 1.0 / (1.0 - d.dropout);
    }
    n.head_gain.push_back(std::move(gains));
    n.gumbel.push_back(sample_gumbel_row(actions, rng));
  }
  return n;
}

namespace {

Var drop_row(Var all, std::size_t skip) {
  const std::size_t n = all.rows();
  std::vector<Var> parts;
  if (skip > 0) parts.push_back(nn::slice_rows(all, 0, skip));
  if (skip + 1 < n) parts.push_back(nn::slice_rows(all, skip + 1, n - skip - 1));
  return parts.size() == 1 ? parts[0] : nn::concat_rows(parts);
}

}  // namespace

Var ats_objective(Tape& tape, AttentionSelector& sel, const AtsBatch& batch, const AtsNoise& noise,
                  double temperature) {
  const AtsDims& d = sel.dims();
  const std::size_t team = batch.team.size();
  if (batch.samples.empty()) throw UsageError("ats_objective: empty batch");
  if (team < 2) throw AdviceUnavailable("attention needs at least one teacher besides the student");
  if (noise.gumbel.size() != batch.samples.size() || noise.head_gain.size() != batch.samples.size()) {
    throw UsageError("ats_objective: noise does not match the batch");
  }

  Tensor keys = Tensor::matrix(team, d.d_h);
  Tensor thetas = Tensor::matrix(team, d.p);
  for (std::size_t j = 0; j < team; ++j) {
    const auto& pk = batch.team[j];
    if (pk.key.size() != d.d_h || pk.theta.size() != d.p) {
      throw DimensionError("teacher packet " + std::to_string(pk.id) + " has wrong dims");
    }
    std::copy(pk.key.data(), pk.key.data() + d.d_h, keys.data() + j * d.d_h);
    std::copy(pk.theta.data(), pk.theta.data() + d.p, thetas.data() + j * d.p);
  }
  Var kin = tape.constant(std::move(keys));
  Var theta = tape.constant(std::move(thetas));

  std::vector<Var> wqv, kh, vh;
  for (std::size_t h = 0; h < d.heads; ++h) {
    wqv.push_back(tape.param(sel.params().at(wq(h))));
    kh.push_back(nn::matmul_bt(kin, tape.param(sel.params().at(wk(h)))));    // team x d_q
    vh.push_back(nn::matmul_bt(theta, tape.param(sel.params().at(wv(h)))));  // team x d_v
  }
  Var wt = tape.param(sel.params().at("WT"));
  const double inv = 1.0 / std::sqrt(static_cast<double>(d.d_q));

  std::vector<Var> qs;
  for (std::size_t s = 0; s < batch.samples.size(); ++s) {
    const AtsSample& smp = batch.samples[s];
    if (smp.student >= team) throw UsageError("ats sample student index out of range");
    if (smp.critic == nullptr) throw UsageError("ats sample lacks a critic");
    check_m(sel, smp.m);
    Var m = tape.constant(row_of(smp.m));
    std::vector<Var> heads;
    for (std::size_t h = 0; h < d.heads; ++h) {
      Var q = nn::matmul_bt(m, wqv[h]);
      Var logits = nn::scale(nn::matmul_bt(q, drop_row(kh[h], smp.student)), inv);
      Var alpha = nn::softmax_rows(logits);
      Var u = nn::matmul(alpha, drop_row(vh[h], smp.student));
      heads.push_back(nn::scale(u, noise.head_gain[s][h]));
    }
    Var v = nn::matmul_bt(nn::concat_cols(heads), wt);  // 1 x p
    Var act_logits = nn::mlp_forward_flat(tape, sel.actor_spec(), v, m);
    Var relaxed = nn::gumbel_softmax(act_logits, noise.gumbel[s], temperature);
    qs.push_back(nn::action_value(tape, smp.critic_spec, *smp.critic, m, relaxed, false));
  }
  return nn::mean(nn::concat_rows(qs));
}

AtsUpdate update_ats(AttentionSelector& sel, const AtsBatch& batch, double temperature,
                     std::mt19937_64& rng) {
  AtsUpdate out;
  if (batch.samples.empty() || batch.team.size() < 2) return out;
  const std::size_t actions = sel.actor_spec().output_dim();
  const AtsNoise noise = draw_noise(sel, batch, actions, true, rng);
  Tape tape;
  Var j = ats_objective(tape, sel, batch, noise, temperature);
  tape.backward(nn::scale(j, -1.0));
  out.objective = j.value()[0];
  if (!std::isfinite(out.objective)) throw NumericError("attention objective is not finite");
  sel.optimizer().step(sel.params());
  out.applied = true;
  return out;
}

// ---- transfer ------------------------------------------------------------------

void export_shared(const AttentionSelector& sel, const std::filesystem::path& path) {
  const AtsDims& d = sel.dims();
  ParamSet out;
  out.add(kHeaderName, Tensor::vector({static_cast<double>(d.d_m), static_cast<double>(d.d_h),
                                       static_cast<double>(d.d_q), static_cast<double>(d.d_v),
                                       static_cast<double>(d.p), static_cast<double>(d.heads),
                                       d.dropout}));
  for (const auto& e : sel.params()) out.add(e.name, e.value);
  nn::save_params(out, path);
}

AttentionSelector import_shared(const std::filesystem::path& path, const AtsDims& expected,
                                nn::MlpSpec actor_spec, nn::AdamConfig opt) {
  ParamSet file = nn::load_params(path);
  if (!file.contains(kHeaderName) || file.at(kHeaderName).value.size() != 7) {
    throw DecodeError(path.string() + ": missing attention header");
  }
  const Tensor& hd = file.at(kHeaderName).value;
  auto dim = [&](std::size_t i) { return static_cast<std::size_t>(hd[i]); };
  AtsDims got{dim(0), dim(1), dim(2), dim(3), dim(4), dim(5), expected.dropout};

  std::string bad;
  auto cmp = [&](const char* name, std::size_t have, std::size_t want) {
    if (have != want) {
      bad += std::string(bad.empty() ? "" : ", ") + name + " (snapshot " + std::to_string(have) +
             ", run " + std::to_string(want) + ")";
    }
  };
  cmp("D_m", got.d_m, expected.d_m);
  cmp("D_h", got.d_h, expected.d_h);
  cmp("P", got.p, expected.p);
  cmp("H", got.heads, expected.heads);
  if (!bad.empty()) throw IncompatibleError("attention snapshot incompatible: " + bad);

  ParamSet params;
  for (const auto& [name, shape] : AttentionSelector::layout(got)) {
    if (!file.contains(name) || file.at(name).value.shape() != shape) {
      throw DecodeError(path.string() + ": entry " + name + " missing or misshapen");
    }
    params.add(name, file.at(name).value);
  }
  if (file.size() != params.size() + 1) throw DecodeError(path.string() + ": unexpected entries");
  return AttentionSelector(got, std::move(actor_spec), std::move(params), opt);
}

}  // namespace pat::ats
