#pragma once

// Layer building blocks. Each layer only stores slot indices into a
// ParameterSet owned by the enclosing model, so models stay copyable.

#include "gochat/autodiff.hpp"

#include <string>
#include <vector>

namespace gochat::nn {

struct Linear {
  int in = 0;
  int out = 0;
  int weight = -1;
  int bias = -1;

  static Linear create(ParameterSet& ps, const std::string& prefix, int in, int out);
  Var operator()(Tape& tape, const ParameterSet& ps, Var x) const;
};

/// GRU cell, gate order (update, reset, candidate):
///   z = sigmoid(Wz x + Uz h + bz)
///   r = sigmoid(Wr x + Ur h + br)
///   n = tanh(Wn x + bn + r * (Un h))
///   h' = (1 - z) * n + z * h
struct Gru {
  int in = 0;
  int hidden = 0;
  int w_input = -1;   // 3h x in
  int w_hidden = -1;  // 3h x h
  int bias = -1;      // 3h

  static Gru create(ParameterSet& ps, const std::string& prefix, int in, int hidden);
  Var step(Tape& tape, const ParameterSet& ps, Var x, Var h) const;
  Var zero_state(Tape& tape) const;
};

/// Additive attention: score_j = ctx . tanh(W h_j + b), weights = softmax(scores).
struct Attention {
  int dim = 0;
  int attn = 0;
  int weight = -1;
  int bias = -1;
  int context = -1;

  static Attention create(ParameterSet& ps, const std::string& prefix, int dim, int attn_dim);

  struct Result {
    Var summary;
    Var weights;
  };
  Result operator()(Tape& tape, const ParameterSet& ps, std::span<const Var> states) const;
};

}  // namespace gochat::nn
