#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "pat/adam.hpp"
#include "pat/errors.hpp"
#include "pat/layers.hpp"
#include "pat/snapshot.hpp"
#include "pat/tape.hpp"
#include "support/fd_check.hpp"

using namespace pat;
using namespace pat::nn;

namespace {

// Straight-line reference for a tanh MLP with identity output.
std::vector<double> reference_mlp(const MlpSpec& spec, const ParamSet& p, std::vector<double> x) {
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const auto& W = p.at("W" + std::to_string(l)).value;
    const auto& b = p.at("b" + std::to_string(l)).value;
    const std::size_t in = spec.widths[l], out = spec.widths[l + 1];
    std::vector<double> y(out);
    for (std::size_t j = 0; j < out; ++j) {
      double s = b[j];
      for (std::size_t i = 0; i < in; ++i) s += x[i] * W[i * out + j];
      y[j] = (l + 1 < spec.layer_count()) ? std::tanh(s) : s;
    }
    x = std::move(y);
  }
  return x;
}

double sig(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Gate-by-gate LSTM reference, order input/forget/cell/output.
void reference_lstm(const LstmCellSpec& spec, const ParamSet& p, const std::vector<double>& x,
                    std::vector<double>& h, std::vector<double>& c) {
  const std::size_t H = spec.hidden_dim, I = spec.input_dim;
  const auto& Wx = p.at("Wx").value;
  const auto& Wh = p.at("Wh").value;
  const auto& b = p.at("b").value;
  std::vector<double> hn(H), cn(H);
  for (std::size_t j = 0; j < H; ++j) {
    double z[4];
    for (int g = 0; g < 4; ++g) {
      const std::size_t col = g * H + j;
      double s = b[col];
      for (std::size_t k = 0; k < I; ++k) s += x[k] * Wx[k * 4 * H + col];
      for (std::size_t k = 0; k < H; ++k) s += h[k] * Wh[k * 4 * H + col];
      z[g] = s;
    }
    const double ig = sig(z[0]), fg = sig(z[1]), gg = std::tanh(z[2]), og = sig(z[3]);
    cn[j] = fg * c[j] + ig * gg;
    hn[j] = og * std::tanh(cn[j]);
  }
  h = hn;
  c = cn;
}

}  // namespace

TEST_CASE("mlp_forward: zero network gives zero output") {
  MlpSpec spec{{3, 4, 2}};
  ParamSet p(spec.layout());
  auto y = mlp_forward(spec, p, Tensor::vector({0.3, -1.0, 2.0}));
  for (double v : y.values()) CHECK(v == 0.0);
}

TEST_CASE("mlp_forward: identity weights with tanh at zero input") {
  MlpSpec spec{{2, 2, 2}};
  ParamSet p(spec.layout());
  p.at("W0").value = Tensor(Shape{2, 2}, {1, 0, 0, 1});
  p.at("W1").value = Tensor(Shape{2, 2}, {1, 0, 0, 1});
  auto y = mlp_forward(spec, p, Tensor::vector({0.0, 0.0}));
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.0);
}

TEST_CASE("mlp_forward: matches a straight-line reference to 1e-12") {
  std::mt19937_64 rng(11);
  MlpSpec spec{{5, 7, 6, 3}};
  ParamSet p(spec.layout());
  testing::randomize(p, rng, 0.8);
  std::vector<double> x{0.1, -0.4, 0.9, 1.3, -2.0};
  auto got = mlp_forward(spec, p, Tensor::vector(x));
  auto want = reference_mlp(spec, p, x);
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-12);
}

TEST_CASE("mlp_forward: shape mismatch names the layer") {
  MlpSpec spec{{3, 2}};
  ParamSet p(spec.layout());
  try {
    mlp_forward(spec, p, Tensor::vector({1.0, 2.0}));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("layer 0") != std::string::npos);
  }
  CHECK_THROWS_AS(MlpSpec{{3}}.validate(), DimensionError);
  CHECK_THROWS_AS((MlpSpec{{3, 0, 1}}.validate()), DimensionError);
}

TEST_CASE("softmax outputs: normalized, nonnegative, shift invariant") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Tape t(false);
    Tensor logits = testing::random_tensor({4, 6}, rng, 30.0);
    Var y = softmax_rows(t.constant(logits));
    Tensor shifted = logits;
    for (auto& v : shifted.values()) v += 123.25;
    Var ys = softmax_rows(t.constant(shifted));
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 6; ++c) {
        CHECK(y.value().at(r, c) >= 0.0);
        s += y.value().at(r, c);
        CHECK(std::abs(y.value().at(r, c) - ys.value().at(r, c)) < 1e-9);
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
  MlpSpec spec{{2, 3}, OutputActivation::kSoftmax};
  std::mt19937_64 r2(1);
  ParamSet p = init_mlp(spec, r2);
  auto y = mlp_forward(spec, p, Tensor::vector({5.0, -5.0}));
  CHECK(std::abs(y[0] + y[1] + y[2] - 1.0) < 1e-12);
}

TEST_CASE("lstm_step: zero cell yields zero hidden output") {
  LstmCellSpec spec{3, 4};
  ParamSet p(spec.layout());
  LstmState s{Tensor(Shape{4}), Tensor(Shape{4})};
  auto out = lstm_step(spec, p, Tensor::vector({1.0, -2.0, 0.5}), s);
  for (double v : out.h.values()) CHECK(v == 0.0);
  for (double v : out.c.values()) CHECK(v == 0.0);
  CHECK(spec.param_count() == 4 * 4 * (3 + 4 + 1));
  CHECK(layout_size(spec.layout()) == spec.param_count());
}

TEST_CASE("lstm_step: three steps match a gate-by-gate reference to 1e-12") {
  std::mt19937_64 rng(5);
  LstmCellSpec spec{3, 5};
  ParamSet p = init_lstm(spec, rng);
  testing::randomize(p, rng, 0.7);
  std::vector<std::vector<double>> xs{{0.2, -0.1, 0.7}, {1.0, 0.0, -0.3}, {-0.5, 0.9, 0.4}};
  LstmState s{Tensor(Shape{5}), Tensor(Shape{5})};
  std::vector<double> h(5, 0.0), c(5, 0.0);
  for (const auto& x : xs) {
    s = lstm_step(spec, p, Tensor::vector(x), s);
    reference_lstm(spec, p, x, h, c);
  }
  for (std::size_t j = 0; j < 5; ++j) {
    CHECK(std::abs(s.h[j] - h[j]) < 1e-12);
    CHECK(std::abs(s.c[j] - c[j]) < 1e-12);
    CHECK(s.h[j] > -1.0);
    CHECK(s.h[j] < 1.0);
  }
  // Determinism.
  LstmState s2{Tensor(Shape{5}), Tensor(Shape{5})};
  for (const auto& x : xs) s2 = lstm_step(spec, p, Tensor::vector(x), s2);
  CHECK(std::memcmp(s.h.data(), s2.h.data(), 5 * sizeof(double)) == 0);
  CHECK_THROWS_AS(lstm_step(spec, p, Tensor::vector({1.0}), s), DimensionError);
}

TEST_CASE("backward: linear case gives exact gradient") {
  Tape t;
  ParamSet p;
  p.add("W", Tensor(Shape{3, 2}, {1, 2, 3, 4, 5, 6}));
  Var W = t.param(p.at("W"));
  Var x = t.constant(Tensor(Shape{2, 1}, {0.25, -1.5}));
  t.backward(sum(matmul(W, x)));
  const auto& g = p.at("W").grad;
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(g.at(i, 0) == 0.25);
    CHECK(g.at(i, 1) == -1.5);
  }
}

TEST_CASE("backward: random MLP with squared error matches finite differences") {
  std::mt19937_64 rng(17);
  for (auto out : {OutputActivation::kIdentity, OutputActivation::kSoftmax,
                   OutputActivation::kSigmoid}) {
    MlpSpec spec{{4, 6, 5, 3}, out};
    ParamSet p = init_mlp(spec, rng);
    testing::randomize(p, rng, 0.6);
    Tensor x = testing::random_tensor({3, 4}, rng);
    Tensor target = testing::random_tensor({3, 3}, rng);
    auto loss_value = [&] {
      Tensor y = mlp_forward(spec, p, x);
      double s = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - target[i]) * (y[i] - target[i]);
      return s / static_cast<double>(y.size());
    };
    p.zero_grad();
    Tape t;
    Var y = mlp_forward(t, spec, p, t.constant(x));
    Var d = sub(y, t.constant(target));
    t.backward(mean(mul(d, d)));
    auto rep = testing::fd_compare_params(p, loss_value);
    CHECK_MESSAGE(rep.failures == 0, rep.first_failure);
    CHECK(rep.checked == spec.param_count());
  }
}

TEST_CASE("backward: LSTM unrolled over several steps matches finite differences") {
  std::mt19937_64 rng(23);
  LstmCellSpec spec{3, 4};
  ParamSet p = init_lstm(spec, rng);
  testing::randomize(p, rng, 0.6);
  std::vector<Tensor> xs;
  for (int i = 0; i < 4; ++i) xs.push_back(testing::random_tensor({1, 3}, rng));
  auto run = [&](Tape& t, const std::vector<Var>& vars) {
    Var h = t.constant(Tensor::matrix(1, 4));
    Var c = t.constant(Tensor::matrix(1, 4));
    for (const auto& x : xs) std::tie(h, c) = lstm_step(t, spec, vars, t.constant(x), h, c);
    return sum(mul(h, h));
  };
  auto loss_value = [&] {
    Tape t(false);
    std::vector<Var> vars;
    for (auto& e : p) vars.push_back(t.constant(e.value));
    return run(t, vars).value()[0];
  };
  p.zero_grad();
  Tape t;
  t.backward(run(t, t.params(p)));
  auto rep = testing::fd_compare_params(p, loss_value);
  CHECK_MESSAGE(rep.failures == 0, rep.first_failure);
}

TEST_CASE("backward: disjoint passes leave the other parameters at zero") {
  std::mt19937_64 rng(2);
  MlpSpec spec{{2, 3, 1}};
  ParamSet a = init_mlp(spec, rng);
  ParamSet b = init_mlp(spec, rng);
  Tape t;
  Var x = t.constant(Tensor::vector({0.5, -0.5}));
  mlp_forward(t, spec, a, x);
  Var yb = mlp_forward(t, spec, b, x);
  t.backward(sum(yb));
  for (const auto& e : a) {
    for (double g : e.grad.values()) CHECK(g == 0.0);
  }
  double mag = 0.0;
  for (const auto& e : b) {
    for (double g : e.grad.values()) mag += std::abs(g);
  }
  CHECK(mag > 0.0);
}

TEST_CASE("backward: usage errors") {
  Tape empty;
  CHECK_THROWS_AS(empty.backward(Var{}), UsageError);
  Tape t;
  Var v = t.input(Tensor::vector({1.0, 2.0}));
  CHECK_THROWS_AS(t.backward(v), UsageError);
  Var s = sum(v);
  t.backward(s);
  CHECK(v.grad()[0] == 1.0);
  CHECK_THROWS_AS(t.backward(s), UsageError);
  Tape other;
  Var w = other.input(Tensor::vector({1.0}));
  CHECK_THROWS_AS(add(v, w), UsageError);
}

TEST_CASE("gumbel_softmax and concat/slice gradients match finite differences") {
  std::mt19937_64 rng(8);
  Tensor logits = testing::random_tensor({2, 5}, rng, 2.0);
  Tensor noise = testing::random_tensor({2, 5}, rng, 1.0);
  Tensor w = testing::random_tensor({2, 5}, rng, 1.0);
  auto f = [&](Tape& t, Var l) {
    Var y = gumbel_softmax(l, noise, 0.7);
    Var z = concat_cols({slice_cols(y, 0, 2), tanh(slice_cols(y, 2, 3))});
    Var r = concat_rows({slice_rows(z, 1, 1), slice_rows(z, 0, 1)});
    return sum(mul(row_sum(mul(r, t.constant(w))), row_sum(r)));
  };
  Tape t;
  Var l = t.input(logits);
  t.backward(f(t, l));
  Tensor g = l.grad();
  auto rep = testing::fd_compare({&logits}, {&g}, [&] {
    Tape u(false);
    return f(u, u.constant(logits)).value()[0];
  });
  CHECK_MESSAGE(rep.failures == 0, rep.first_failure);
}

TEST_CASE("adam_step: zero gradient leaves parameters, counter advances") {
  ParamSet p;
  p.add("w", Tensor::vector({1.0, -2.0}));
  AdamState opt(p, {});
  opt.step(p);
  CHECK(p.at("w").value[0] == 1.0);
  CHECK(p.at("w").value[1] == -2.0);
  CHECK(opt.steps() == 1);
  opt.step(p);
  CHECK(opt.steps() == 2);
}

TEST_CASE("adam_step: constant gradient moves against its sign, grads zeroed") {
  ParamSet p;
  p.add("w", Tensor::vector({0.0}));
  AdamState opt(p, {0.01});
  for (int i = 0; i < 20; ++i) {
    p.at("w").grad[0] = 3.0;
    opt.step(p);
    CHECK(p.at("w").grad[0] == 0.0);
  }
  CHECK(p.at("w").value[0] < 0.0);
}

TEST_CASE("adam_step: ten steps lower a quadratic loss") {
  ParamSet p;
  p.add("x", Tensor::vector({2.0}));
  AdamState opt(p, {0.1});
  auto loss = [&] { return (p.at("x").value[0] - 0.5) * (p.at("x").value[0] - 0.5); };
  const double start = loss();
  for (int i = 0; i < 10; ++i) {
    p.at("x").grad[0] = 2.0 * (p.at("x").value[0] - 0.5);
    opt.step(p);
  }
  CHECK(loss() < start);
}

TEST_CASE("adam_step: NaN gradient fails naming the parameter") {
  ParamSet p;
  p.add("critic.W0", Tensor::vector({1.0}));
  AdamState opt(p, {});
  p.at(0).grad[0] = std::nan("");
  try {
    opt.step(p);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("critic.W0") != std::string::npos);
  }
  CHECK(p.at(0).value[0] == 1.0);
}

TEST_CASE("flatten/unflatten: exact inverse and span bookkeeping") {
  std::mt19937_64 rng(4);
  MlpSpec spec{{3, 4, 2}};
  ParamSet p = init_mlp(spec, rng);
  testing::randomize(p, rng);
  Tensor flat = flatten_params(p);
  CHECK(flat.size() == spec.param_count());
  ParamSet back = unflatten_params(p.layout(), flat);
  CHECK(back == p);

  ParamSet zero(spec.layout());
  Tensor zf = flatten_params(zero);
  CHECK(zf.size() == 3 * 4 + 4 + 4 * 2 + 2);
  for (double v : zf.values()) CHECK(v == 0.0);

  // Change only b0: difference must be confined to its span [12, 16).
  ParamSet q = p;
  q.at("b0").value[1] += 1.0;
  q.at("b0").value[3] -= 2.0;
  Tensor qf = flatten_params(q);
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const bool inside = i >= 12 && i < 16;
    if (!inside) CHECK(qf[i] == flat[i]);
  }
  CHECK(qf[13] != flat[13]);
  CHECK(qf[15] != flat[15]);

  CHECK_THROWS_AS(unflatten_params(p.layout(), Tensor::vector({1.0})), DimensionError);
}

TEST_CASE("snapshot: round trip, version and truncation errors") {
  std::mt19937_64 rng(6);
  ParamSet p;
  p.add("zeta", testing::random_tensor({2, 3}, rng));
  p.add("alpha", testing::random_tensor({4}, rng));
  p.add("mid", Tensor(Shape{1, 1}, {-0.0}));
  auto dir = std::filesystem::temp_directory_path() / "pat_nncore_snap";
  std::filesystem::create_directories(dir);
  auto path = dir / "p.patp";
  save_params(p, path);
  ParamSet back = load_params(path);
  CHECK(back == p);
  CHECK(back.at(0).name == "zeta");
  CHECK(back.at(1).name == "alpha");

  auto bytes = encode_params(p);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "PATP");
  CHECK(bytes[4] == kSnapshotVersion);

  auto wrong = bytes;
  wrong[4] = 9;
  CHECK_THROWS_AS(decode_params(wrong), VersionError);

  auto cut = bytes;
  cut.pop_back();
  CHECK_THROWS_AS(decode_params(cut), DecodeError);

  auto extra = bytes;
  extra.push_back(0);
  CHECK_THROWS_AS(decode_params(extra), DecodeError);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_params(bad), DecodeError);

  {
    std::ofstream f(dir / "cut.patp", std::ios::binary);
    f.write(reinterpret_cast<const char*>(cut.data()), static_cast<std::streamsize>(cut.size()));
  }
  CHECK_THROWS_AS(load_params(dir / "cut.patp"), DecodeError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("soft_update: tau 1 copies exactly, small tau converges geometrically") {
  ParamSet online;
  online.add("w", Tensor::vector({1.0, -3.0}));
  ParamSet target;
  target.add("w", Tensor::vector({0.0, 0.0}));
  ParamSet t1 = target;
  soft_update(t1, online, 1.0);
  CHECK(t1 == online);
  for (int i = 0; i < 100; ++i) soft_update(target, online, 0.01);
  const double expected = 1.0 - std::pow(0.99, 100);
  CHECK(std::abs(target.at(0).value[0] - expected) < 1e-12);
  CHECK(std::abs(target.at(0).value[1] + 3.0 * expected) < 1e-12);
}

TEST_CASE("determinism: identical seeds give bit-identical forward and backward") {
  auto run = [] {
    std::mt19937_64 rng(99);
    MlpSpec spec{{3, 5, 2}};
    ParamSet p = init_mlp(spec, rng);
    Tape t;
    t.backward(sum(mlp_forward(t, spec, p, t.constant(Tensor::vector({0.1, 0.2, 0.3})))));
    AdamState opt(p, {});
    opt.step(p);
    return flatten_params(p);
  };
  auto a = run();
  auto b = run();
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}
