#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "pat/param_set.hpp"
#include "pat/tape.hpp"

namespace pat::nn {

enum class OutputActivation { kIdentity, kSoftmax, kSigmoid };

// Fully connected tanh network. Layer l owns "W<l>" (in x out) and "b<l>"
// (out), so a batch X (B x in) maps through X * W + b.
struct MlpSpec {
  std::vector<std::size_t> widths;
  OutputActivation output = OutputActivation::kIdentity;

  void validate() const;
  std::size_t input_dim() const { return widths.front(); }
  std::size_t output_dim() const { return widths.back(); }
  std::size_t layer_count() const { return widths.size() - 1; }
  ParamLayout layout() const;
  std::size_t param_count() const;
};

// Xavier-uniform weights, zero biases. The last layer is drawn from
// U(-final_scale, final_scale) when final_scale > 0.
ParamSet init_mlp(const MlpSpec& spec, std::mt19937_64& rng, double final_scale = 0.0);

Var mlp_forward(Tape& tape, const MlpSpec& spec, const std::vector<Var>& params, Var x);
Var mlp_forward(Tape& tape, const MlpSpec& spec, ParamSet& params, Var x,
                bool trainable = true);
// Parameters taken from a flat 1 x P row laid out in spec.layout() order.
Var mlp_forward_flat(Tape& tape, const MlpSpec& spec, Var flat, Var x);
// Gradient-free evaluation.
Tensor mlp_forward(const MlpSpec& spec, const ParamSet& params, const Tensor& x);

// Critic over (state, action vector): the net scores every action from the
// state alone and a (one-hot or relaxed, B x A) mixes the scores, Q = a . f(m).
Var action_value(Tape& tape, const MlpSpec& spec, ParamSet& params, Var m, Var a,
                 bool trainable = true);
Var action_value_flat(Tape& tape, const MlpSpec& spec, const std::vector<Var>& params, Var m,
                      Var a);
// B x 1 values of the given actions, no gradient.
Tensor action_value(const MlpSpec& spec, const ParamSet& params, const Tensor& m,
                    const std::vector<int>& actions);

// LSTM cell. Gate blocks are packed in the order input, forget, cell,
// output along the 4H axis of "Wx" (I x 4H), "Wh" (H x 4H) and "b" (4H).
struct LstmCellSpec {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;

  void validate() const;
  ParamLayout layout() const;
  std::size_t param_count() const { return 4 * hidden_dim * (input_dim + hidden_dim + 1); }
};

struct LstmState {
  Tensor h;
  Tensor c;
};

ParamSet init_lstm(const LstmCellSpec& spec, std::mt19937_64& rng);

std::pair<Var, Var> lstm_step(Tape& tape, const LstmCellSpec& spec,
                              const std::vector<Var>& params, Var x, Var h, Var c);
LstmState lstm_step(const LstmCellSpec& spec, const ParamSet& params, const Tensor& x,
                    const LstmState& state);

}  // namespace pat::nn
