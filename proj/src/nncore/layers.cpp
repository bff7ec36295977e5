#include "pat/layers.hpp"

#include <cmath>

#include "pat/errors.hpp"

namespace pat::nn {

void MlpSpec::validate() const {
  if (widths.size() < 2) throw DimensionError("MLP needs at least two layer widths");
  for (std::size_t w : widths) {
    if (w == 0) throw DimensionError("MLP layer width must be positive");
  }
}

ParamLayout MlpSpec::layout() const {
  validate();
  ParamLayout out;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    out.emplace_back("W" + std::to_string(l), Shape{widths[l], widths[l + 1]});
    out.emplace_back("b" + std::to_string(l), Shape{widths[l + 1]});
  }
  return out;
}

std::size_t MlpSpec::param_count() const { return layout_size(layout()); }

ParamSet init_mlp(const MlpSpec& spec, std::mt19937_64& rng, double final_scale) {
  ParamSet set(spec.layout());
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    auto& w = set.at(2 * l).value;
    const double fan_in = static_cast<double>(spec.widths[l]);
    const double fan_out = static_cast<double>(spec.widths[l + 1]);
    double bound = std::sqrt(6.0 / (fan_in + fan_out));
    if (l + 1 == spec.layer_count() && final_scale > 0.0) bound = final_scale;
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : w.values()) v = dist(rng);
  }
  return set;
}

namespace {

Var apply_output(const MlpSpec& spec, Var y) {
  switch (spec.output) {
    case OutputActivation::kSoftmax:
      return softmax_rows(y);
    case OutputActivation::kSigmoid:
      return sigmoid(y);
    case OutputActivation::kIdentity:
      break;
  }
  return y;
}

void check_input(const MlpSpec& spec, const Var& x) {
  if (x.cols() != spec.input_dim()) {
    throw DimensionError("MLP layer 0 expects input width " + std::to_string(spec.input_dim()) +
                         ", got " + std::to_string(x.cols()));
  }
}

}  // namespace

Var mlp_forward(Tape& /*tape*/, const MlpSpec& spec, const std::vector<Var>& params, Var x) {
  spec.validate();
  if (params.size() != 2 * spec.layer_count()) {
    throw DimensionError("MLP expects " + std::to_string(2 * spec.layer_count()) +
                         " parameter tensors, got " + std::to_string(params.size()));
  }
  check_input(spec, x);
  Var y = x;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const Var& w = params[2 * l];
    if (w.rows() != spec.widths[l] || w.cols() != spec.widths[l + 1]) {
      throw DimensionError("MLP layer " + std::to_string(l) + " weight has shape " +
                           shape_str(w.value().shape()));
    }
    y = add_row(matmul(y, w), params[2 * l + 1]);
    if (l + 1 < spec.layer_count()) y = tanh(y);
  }
  return apply_output(spec, y);
}

Var mlp_forward(Tape& tape, const MlpSpec& spec, ParamSet& params, Var x, bool trainable) {
  return mlp_forward(tape, spec, tape.params(params, trainable), x);
}

Var mlp_forward_flat(Tape& tape, const MlpSpec& spec, Var flat, Var x) {
  const std::size_t total = spec.param_count();
  if (flat.value().size() != total) {
    throw DimensionError("flat MLP parameters: expected " + std::to_string(total) + ", got " +
                         std::to_string(flat.value().size()));
  }
  Var row = flat.rows() == 1 ? flat : reshape(flat, 1, total);
  std::vector<Var> params;
  std::size_t off = 0;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const std::size_t in = spec.widths[l], out = spec.widths[l + 1];
    params.push_back(reshape(slice_cols(row, off, in * out), in, out));
    off += in * out;
    params.push_back(slice_cols(row, off, out));
    off += out;
  }
  return mlp_forward(tape, spec, params, x);
}

Tensor mlp_forward(const MlpSpec& spec, const ParamSet& params, const Tensor& x) {
  Tape tape(false);
  std::vector<Var> vars;
  for (const auto& e : params) vars.push_back(tape.constant(e.value));
  Var in = tape.constant(x.rank() == 2 ? x : x.reshaped(Shape{1, x.size()}));
  return mlp_forward(tape, spec, vars, in).value();
}

Var action_value(Tape& tape, const MlpSpec& spec, ParamSet& params, Var m, Var a,
                 bool trainable) {
  return action_value_flat(tape, spec, tape.params(params, trainable), m, a);
}

Var action_value_flat(Tape& tape, const MlpSpec& spec, const std::vector<Var>& params, Var m,
                      Var a) {
  Var scores = mlp_forward(tape, spec, params, m);
  if (a.rows() != scores.rows() || a.cols() != scores.cols()) {
    throw DimensionError("action_value: action block does not match the critic output");
  }
  return row_sum(mul(scores, a));
}

Tensor action_value(const MlpSpec& spec, const ParamSet& params, const Tensor& m,
                    const std::vector<int>& actions) {
  const Tensor all = mlp_forward(spec, params, m);
  if (actions.size() != all.rows()) throw DimensionError("action_value: one action per row");
  Tensor q = Tensor::matrix(all.rows(), 1);
  for (std::size_t r = 0; r < all.rows(); ++r) {
    const auto a = static_cast<std::size_t>(actions[r]);
    if (a >= all.cols()) throw DimensionError("action_value: action out of range");
    q[r] = all[r * all.cols() + a];
  }
  return q;
}

void LstmCellSpec::validate() const {
  if (input_dim == 0 || hidden_dim == 0) throw DimensionError("LSTM dims must be positive");
}

ParamLayout LstmCellSpec::layout() const {
  validate();
  return {{"Wx", Shape{input_dim, 4 * hidden_dim}},
          {"Wh", Shape{hidden_dim, 4 * hidden_dim}},
          {"b", Shape{4 * hidden_dim}}};
}

ParamSet init_lstm(const LstmCellSpec& spec, std::mt19937_64& rng) {
  ParamSet set(spec.layout());
  const double bx = 1.0 / std::sqrt(static_cast<double>(spec.input_dim + spec.hidden_dim));
  std::uniform_real_distribution<double> dist(-bx, bx);
  for (auto& v : set.at(0).value.values()) v = dist(rng);
  for (auto& v : set.at(1).value.values()) v = dist(rng);
  // Forget gate bias starts at 1.
  auto& b = set.at(2).value;
  for (std::size_t j = spec.hidden_dim; j < 2 * spec.hidden_dim; ++j) b[j] = 1.0;
  return set;
}

std::pair<Var, Var> lstm_step(Tape& /*tape*/, const LstmCellSpec& spec,
                              const std::vector<Var>& params, Var x, Var h, Var c) {
  const std::size_t H = spec.hidden_dim;
  if (params.size() != 3) throw DimensionError("LSTM expects 3 parameter tensors");
  if (x.cols() != spec.input_dim) {
    throw DimensionError("LSTM input width " + std::to_string(x.cols()) + ", expected " +
                         std::to_string(spec.input_dim));
  }
  if (h.cols() != H || c.cols() != H) {
    throw DimensionError("LSTM state width must be " + std::to_string(H));
  }
  Var z = add_row(add(matmul(x, params[0]), matmul(h, params[1])), params[2]);
  Var i = sigmoid(slice_cols(z, 0, H));
  Var f = sigmoid(slice_cols(z, H, H));
  Var g = tanh(slice_cols(z, 2 * H, H));
  Var o = sigmoid(slice_cols(z, 3 * H, H));
  Var c_next = add(mul(f, c), mul(i, g));
  Var h_next = mul(o, tanh(c_next));
  return {h_next, c_next};
}

LstmState lstm_step(const LstmCellSpec& spec, const ParamSet& params, const Tensor& x,
                    const LstmState& state) {
  Tape tape(false);
  std::vector<Var> vars;
  for (const auto& e : params) vars.push_back(tape.constant(e.value));
  auto row = [](const Tensor& t) { return t.reshaped(Shape{1, t.size()}); };
  auto [h, c] = lstm_step(tape, spec, vars, tape.constant(row(x)), tape.constant(row(state.h)),
                          tape.constant(row(state.c)));
  return {h.value().reshaped(Shape{spec.hidden_dim}), c.value().reshaped(Shape{spec.hidden_dim})};
}

}  // namespace pat::nn
