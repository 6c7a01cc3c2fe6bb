#include "gochat/nn.hpp"

namespace gochat::nn {

Linear Linear::create(ParameterSet& ps, const std::string& prefix, int in, int out) {
  Linear l;
  l.in = in;
  l.out = out;
  l.weight = ps.add(prefix + ".weight", out, in);
  l.bias = ps.add(prefix + ".bias", out, 1);
  return l;
}

Var Linear::operator()(Tape& tape, const ParameterSet& ps, Var x) const {
  return tape.affine(ps[weight], ps[bias], x);
}

Gru Gru::create(ParameterSet& ps, const std::string& prefix, int in, int hidden) {
  Gru g;
  g.in = in;
  g.hidden = hidden;
  g.w_input = ps.add(prefix + ".w_input", 3 * hidden, in);
  g.w_hidden = ps.add(prefix + ".w_hidden", 3 * hidden, hidden);
  g.bias = ps.add(prefix + ".bias", 3 * hidden, 1);
  return g;
}

Var Gru::step(Tape& tape, const ParameterSet& ps, Var x, Var h) const {
  const int H = hidden;
  Var gx = tape.affine(ps[w_input], ps[bias], x);
  Var gh = tape.matvec(ps[w_hidden], h);
  Var z = tape.sigmoid(tape.add(tape.slice(gx, 0, H), tape.slice(gh, 0, H)));
  Var r = tape.sigmoid(tape.add(tape.slice(gx, H, H), tape.slice(gh, H, H)));
  Var n = tape.tanh(tape.add(tape.slice(gx, 2 * H, H), tape.mul(r, tape.slice(gh, 2 * H, H))));
  return tape.add(tape.mul(tape.one_minus(z), n), tape.mul(z, h));
}

Var Gru::zero_state(Tape& tape) const { return tape.input(Vec::Zero(hidden)); }

Attention Attention::create(ParameterSet& ps, const std::string& prefix, int dim, int attn_dim) {
  Attention a;
  a.dim = dim;
  a.attn = attn_dim;
  a.weight = ps.add(prefix + ".weight", attn_dim, dim);
  a.bias = ps.add(prefix + ".bias", attn_dim, 1);
  a.context = ps.add(prefix + ".context", attn_dim, 1);
  return a;
}

Attention::Result Attention::operator()(Tape& tape, const ParameterSet& ps,
                                        std::span<const Var> states) const {
  std::vector<Var> scores;
  scores.reserve(states.size());
  Var ctx = tape.param(ps[context]);
  for (Var s : states) scores.push_back(tape.dot(ctx, tape.tanh(tape.affine(ps[weight], ps[bias], s))));
  Var weights = tape.softmax(tape.concat(scores));
  return {tape.weighted_sum(states, weights), weights};
}

}  // namespace gochat::nn
