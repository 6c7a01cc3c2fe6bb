#pragma once

// Low-level response generator pi(u_c | s, g): utterance encoder GRU, context
// GRU over the history, diagonal-Gaussian posterior and prior heads over h^c,
// the augmented latent [z, g], and an autoregressive GRU decoder initialized
// from tanh(affine([z~, h^c])) that also receives z~ at every step.
//
// With K = 0 the same network is the user model (no sub-goal input).

#include "gochat/checkpoint.hpp"
#include "gochat/corpus.hpp"
#include "gochat/nn.hpp"
#include "gochat/rng.hpp"
#include "gochat/subgoals.hpp"

#include <cstdint>
#include <optional>

namespace gochat {

struct WorkerConfig {
  int vocab_size = 0;
  int K = 14;  // 0 for the user model
  int d_emb = 500;
  int d_enc = 500;
  int d_ctx = 500;
  int d_z = 100;
  int d_dec = 500;
  int n = kDefaultSeqLen;
};

enum class DecodeMode { greedy, sample };

struct Gaussian {
  Var mu;
  Var logvar;
  Var sigma;  // exp(logvar / 2)
};

struct Generation {
  TokenSeq tokens;          // real tokens, padded to n
  std::vector<int> action;  // scored ids: tokens plus the stop token when one was emitted
};

/// Decoder targets for a response: real tokens, then EOS if there is room.
std::vector<int> decoder_targets(const TokenSeq& response);

class Worker {
 public:
  Worker() = default;
  Worker(const WorkerConfig& cfg, const std::string& prefix);

  void init(std::uint64_t seed);

  const WorkerConfig& config() const { return cfg_; }
  const std::string& prefix() const { return prefix_; }
  int embedding_slot() const { return embedding_; }

  /// Final GRU state over the non-pad tokens (UNK row for an empty utterance).
  Var encode_turn(Tape& tape, const TokenSeq& tokens) const;
  Var step_context(Tape& tape, Var context_prev, Var utterance) const;
  Var zero_context(Tape& tape) const;

  Gaussian posterior(Tape& tape, Var context) const;
  Gaussian prior(Tape& tape, Var context) const;

  /// z = mu + sigma * eps
  Var latent(Tape& tape, const Gaussian& q, const Vec& eps) const;
  /// [z, g]; with K = 0, z itself.
  Var augment(Tape& tape, Var z, const std::optional<SubGoal>& g) const;

  Var decoder_init(Tape& tape, Var z_aug, Var context) const;
  /// Per-step log-probabilities over the vocabulary; returns next hidden state.
  Var decoder_step(Tape& tape, Var z_aug, Var hidden, int prev_token, Var* log_probs) const;

  Generation decode(Tape& tape, Var z_aug, Var context, DecodeMode mode, Rng* rng, int max_len) const;

  /// Sum over `targets` of log max(p, 1e-12) under teacher forcing.
  Var sequence_log_prob(Tape& tape, Var z_aug, Var context, std::span<const int> targets) const;

  /// Context recurrence over a history, returning h^c after the last utterance.
  Var encode_history(Tape& tape, const std::vector<Utterance>& history) const;

  Container to_container() const;
  static Worker from_container(const Container& c);

  ParameterSet params;

 private:
  WorkerConfig cfg_;
  std::string prefix_;
  int embedding_ = -1;
  nn::Gru encoder_;
  nn::Gru context_;
  nn::Linear post_mu_, post_logvar_;
  nn::Linear prior_mu_, prior_logvar_;
  nn::Linear dec_init_;
  nn::Gru decoder_;
  nn::Linear output_;
};

/// z = mu + sigma * eps (values). Throws on dimension mismatch.
Vec sample_latent(const Vec& mu, const Vec& sigma, const Vec& eps);
/// [z, g]; throws ValidationError when g is not one-hot.
Vec augment_latent(const Vec& z, const Vec& g);

/// KL(N(mu, exp(lv)) || N(mu_p, exp(lv_p))) summed over dimensions.
Var gaussian_kl(Tape& tape, const Gaussian& q, const Gaussian& p);
double gaussian_kl(const Vec& mu, const Vec& sigma, const Vec& mu_p, const Vec& sigma_p);

/// One supervised example: history -> target response under sub-goal.
struct GenerationExample {
  std::vector<Utterance> history;
  std::optional<SubGoal> subgoal;
  TokenSeq target;
};

std::vector<GenerationExample> examples_from_pairs(const std::vector<LabeledPair>& pairs);

/// Posterior parameters for a history (values; no sampling).
struct PosteriorValues {
  Vec mu;
  Vec sigma;
};
PosteriorValues posterior_params(const Worker& worker, const std::vector<Utterance>& history);

/// Evaluation-mode log-likelihood (eps = 0) of `target` given the state and sub-goal.
double sequence_log_prob(const Worker& worker, const DialogueState& state, const std::optional<SubGoal>& g,
                         const TokenSeq& target);

/// Greedy, eps = 0 response.
Generation respond_greedy(const Worker& worker, const std::vector<Utterance>& history,
                          const std::optional<SubGoal>& g);

/// -log p(target | z) + kl_weight * KL(q || p) for one example with fixed eps.
Var example_loss(Tape& tape, const Worker& worker, const GenerationExample& ex, const Vec& eps,
                 double kl_weight);

/// Batch mean of example_loss with eps ~ N(0, I) drawn from rng in order.
double pretrain_loss(const Worker& worker, const std::vector<GenerationExample>& batch, double kl_weight,
                     Rng& rng);

Vec standard_normal(int dim, Rng& rng);

}  // namespace gochat
