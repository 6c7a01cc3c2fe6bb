#pragma once

// High-level sub-goal policy pi(g | s) = softmax(W_g^T H_t + b_g) and the HAN
// value network with its frozen target copy.

#include "gochat/checkpoint.hpp"
#include "gochat/encoder_han.hpp"
#include "gochat/rng.hpp"
#include "gochat/subgoals.hpp"

#include <cstdint>

namespace gochat {

inline constexpr double kProbFloor = 1e-12;
inline constexpr double kInitScale = 0.08;

class Manager {
 public:
  Manager() = default;
  Manager(const HanConfig& han, int K);

  /// uniform(-0.08, 0.08) over every parameter.
  void init(std::uint64_t seed);

  int K() const { return K_; }
  const HanEncoder& encoder() const { return encoder_; }
  int w_g() const { return w_g_; }  // d_dlg x K
  int b_g() const { return b_g_; }  // K

  Var logits(Tape& tape, Var H) const;
  Var probs(Tape& tape, Var H) const;

  Vec probs(const DialogueState& state) const;

  Container to_container() const;
  static Manager from_container(const Container& c);

  ParameterSet params;

 private:
  HanEncoder encoder_;
  int K_ = 0;
  int w_g_ = -1;
  int b_g_ = -1;
};

/// softmax(W_g^T H_t + b_g) for one state.
Vec manager_probs(const Manager& manager, const DialogueState& state);
/// Categorical draw; consumes one uniform variate from rng.
SubGoal sample_subgoal(const Vec& probs, Rng& rng);
/// Argmax, ties to the lowest index.
SubGoal greedy_subgoal(const Vec& probs);

/// HAN encoder followed by an affine head d_dlg -> 1.
class ValueNetwork {
 public:
  ValueNetwork() = default;
  ValueNetwork(const HanConfig& han, const std::string& prefix);

  const HanEncoder& encoder() const { return encoder_; }
  Var value(Tape& tape, Var H) const;
  double value(const DialogueState& state) const;
  void zero_head();

  ParameterSet params;

 private:
  HanEncoder encoder_;
  nn::Linear head_;
};

class Critic {
 public:
  Critic() = default;
  explicit Critic(const HanConfig& han);

  /// Encoder uniform(-0.08, 0.08), value head zero; target synced.
  void init(std::uint64_t seed);
  /// Hard copy live -> target.
  void sync_target();

  double value_estimate(const DialogueState& state, bool use_target) const;

  Container to_container() const;
  static Critic from_container(const Container& c);

  ValueNetwork live;
  ValueNetwork target;
};

nlohmann::json han_meta(const HanConfig& cfg);
HanConfig han_from_meta(const nlohmann::json& meta);

}  // namespace gochat
