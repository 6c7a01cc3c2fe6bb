#pragma once

// Helpers shared by unit and acceptance tests: corpus builders, parameter
// randomization and a central finite-difference gradient check.

#include "gochat/autodiff.hpp"
#include "gochat/corpus.hpp"
#include "gochat/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace gochat::testing {

inline Dialogue make_dialogue(const std::string& id, Outcome outcome, const std::vector<std::string>& texts) {
  Dialogue d;
  d.id = id;
  d.outcome = outcome;
  for (std::size_t i = 0; i < texts.size(); ++i)
    d.turns.push_back(Utterance{i % 2 == 0 ? Speaker::human : Speaker::chatbot, texts[i], {}});
  return d;
}

inline TokenSeq ids(std::vector<int> raw, int n) { return TokenSeq::from_ids(raw, n); }

inline Utterance utt(Speaker s, std::vector<int> raw, int n) { return Utterance{s, "", ids(std::move(raw), n)}; }

/// Overwrites every parameter with N(0, scale^2) draws.
inline void randomize(ParameterSet& ps, std::uint64_t seed, double scale) {
  Rng rng(seed);
  std::normal_distribution<double> nd(0.0, scale);
  Vec flat = ps.flatten();
  for (Eigen::Index i = 0; i < flat.size(); ++i) flat(i) = nd(rng);
  ps.unflatten(flat);
}

struct FdResult {
  double worst = 0.0;  // max over entries of |a - n| / max(|a|, |n|, floor)
  std::string where;
  long checked = 0;
};

/// Compares analytic gradients against central differences of `loss` for every
/// scalar of `ps`. Entries whose magnitudes are both below `floor` are compared
/// absolutely against `floor`.
inline FdResult fd_check(ParameterSet& ps, const SetGradients& analytic, const std::function<double()>& loss,
                         double h = 1e-5, double floor = 1e-6) {
  FdResult r;
  for (int s = 0; s < ps.size(); ++s) {
    Mat& m = ps[s].value;
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      double x0 = m.data()[i];
      m.data()[i] = x0 + h;
      double fp = loss();
      m.data()[i] = x0 - h;
      double fm = loss();
      m.data()[i] = x0;
      double num = (fp - fm) / (2.0 * h);
      double an = analytic[static_cast<std::size_t>(s)].data()[i];
      double rel = std::abs(num - an) / std::max({std::abs(num), std::abs(an), floor});
      ++r.checked;
      if (rel > r.worst) {
        r.worst = rel;
        r.where = ps[s].name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return r;
}

/// Dense reference GRU step (gate order update, reset, candidate) written
/// without the tape, for oracle checks.
inline Vec gru_reference(const Mat& w_in, const Mat& w_h, const Mat& b, const Vec& x, const Vec& h) {
  const Eigen::Index H = h.size();
  Vec out(H);
  for (Eigen::Index i = 0; i < H; ++i) {
    auto gate = [&](Eigen::Index row, bool with_h) {
      double a = b(row, 0);
      for (Eigen::Index j = 0; j < x.size(); ++j) a += w_in(row, j) * x(j);
      if (with_h)
        for (Eigen::Index j = 0; j < H; ++j) a += w_h(row, j) * h(j);
      return a;
    };
    double z = 1.0 / (1.0 + std::exp(-gate(i, true)));
    double r = 1.0 / (1.0 + std::exp(-gate(H + i, true)));
    double uh = 0.0;
    for (Eigen::Index j = 0; j < H; ++j) uh += w_h(2 * H + i, j) * h(j);
    double n = std::tanh(gate(2 * H + i, false) + r * uh);
    out(i) = (1.0 - z) * n + z * h(i);
  }
  return out;
}

}  // namespace gochat::testing
