#pragma once

// Supervised pretraining of worker and manager, and the joint actor-critic
// update of manager, worker and critic on self-play episodes:
//
//   L_pi = -mean_t [ alpha * A_t * log pi_psi(g_t | s_t) + beta * A^w_t * log pi_theta(u_t | s_t, g_t) ]
//   L_v  = mean_t 1/2 (r_t + gamma * V_targ(s_{t+1}) - V(s_t))^2
//   L    = L_pi + L_v
//
// Advantages enter the graph as constants.

#include "gochat/manager_critic.hpp"
#include "gochat/optim.hpp"
#include "gochat/simulator.hpp"
#include "gochat/worker_vhred.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace gochat {

struct TrainConfig {
  double alpha = 1.0;
  double beta = 0.001;
  double gamma = 0.99;
  double lr = 0.001;
  int epochs = 10;
  int m = 20;
  int episodes_per_update = 8;
  double grad_clip = 5.0;
  int target_sync_every = 100;
  std::uint64_t seed = 1;

  int batch_size = 16;            // supervised minibatch
  int kl_anneal_batches = 1000;   // supervised KL warm-up
  double baseline_decay = 0.99;   // EMA of the worker reward
  int episodes = 2000;            // self-play episode budget
  bool parallel = true;

  /// Throws ValidationError on out-of-range fields. lr == 0 (a null optimizer,
  /// used to check that updates are inert) is accepted only on request.
  void validate(bool allow_zero_lr = false) const;
  SupervisedConfig supervised() const;
};

/// R_t = r_t + gamma * R_{t+1}, R_{T+1} = 0.
std::vector<double> compute_returns(std::span<const double> rewards, double gamma);

/// Exponential moving average of observed worker rewards, starting at 0.
class WorkerBaseline {
 public:
  explicit WorkerBaseline(double decay = 0.99) : decay_(decay) {}
  double value() const { return value_; }
  double advantage(double reward) const { return reward - value_; }
  void observe(double reward) { value_ = decay_ * value_ + (1.0 - decay_) * reward; }

 private:
  double decay_;
  double value_ = 0.0;
};

struct AdvantageRecord {
  double ret = 0.0;          // R_t
  double value = 0.0;        // V(s_t), live critic
  double target_next = 0.0;  // V_targ(s_{t+1}); 0 for the terminal successor
  double manager_adv = 0.0;  // R_t - V(s_t)
  double worker_adv = 0.0;   // r^w_t - b_w
  double baseline = 0.0;     // b_w used
};

std::vector<AdvantageRecord> advantages(const Episode& episode, const Critic& critic, const TrainConfig& cfg,
                                        const WorkerBaseline& baseline);

/// One turn of the surrogate policy loss.
struct PolicyTerm {
  Var log_pi_manager;
  Var log_pi_worker;
  double manager_adv = 0.0;
  double worker_adv = 0.0;
};

/// -sum_t (alpha * A_t * log pi_psi + beta * A^w_t * log pi_theta), unnormalized.
Var policy_loss_sum(Tape& tape, std::span<const PolicyTerm> terms, double alpha, double beta);

struct PolicyTurnValues {
  double manager_adv = 0.0;
  double log_pi_manager = 0.0;
  double worker_adv = 0.0;
  double log_pi_worker = 0.0;
};
/// Per-turn mean of the surrogate loss over plain numbers.
double policy_loss(std::span<const PolicyTurnValues> turns, double alpha, double beta);

/// 1/2 (reward + gamma * target_next - V(s))^2; gradient only through `value`.
Var value_loss(Tape& tape, Var value, double reward, double target_next, double gamma);
double value_loss(double reward, double target_next, double value, double gamma);

struct EpisodeLoss {
  Var policy_sum;  // sum over turns, see policy_loss_sum
  Var value_sum;   // sum over turns of the value loss
  Var total;       // policy_sum + value_sum
};

/// Rebuilds the episode on `tape` through manager, worker and live critic with
/// the stored sub-goals, latent noise and token actions.
EpisodeLoss episode_loss(Tape& tape, const Manager& manager, const Worker& worker, const Critic& critic,
                         const Episode& episode, std::span<const AdvantageRecord> adv, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Pretraining

/// Called after every epoch with the model as it stands (for per-epoch checkpoints).
using WorkerEpochCallback = std::function<void(int epoch, double mean_loss, const Worker& worker)>;

Worker pretrain_worker(const std::vector<LabeledPair>& pairs, const WorkerConfig& wcfg, const TrainConfig& cfg,
                       const WorkerEpochCallback& on_epoch = {});

/// Mean cross-entropy of the manager against the offline sub-goal labels.
double manager_cross_entropy(const Manager& manager, const std::vector<LabeledPair>& pairs);
double manager_accuracy(const Manager& manager, const std::vector<LabeledPair>& pairs);

Manager pretrain_manager(const std::vector<LabeledPair>& pairs, const HanConfig& han, int K, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {});

// ---------------------------------------------------------------------------
// Actor-critic

struct UpdateStats {
  long update = 0;
  long episodes = 0;
  double mean_return = 0.0;
  double mean_worker_reward = 0.0;
  double success_rate = 0.0;
  double loss_pi = 0.0;
  double loss_v = 0.0;
};

std::string csv_header();
std::string csv_row(const UpdateStats& s);

class A2CTrainer {
 public:
  /// The models are updated in place; `env` and `inits` must outlive the trainer.
  A2CTrainer(Manager& manager, Worker& worker, Critic& critic, const Environment& env,
             const std::vector<Utterance>& inits, const TrainConfig& cfg);

  /// Collects episodes_per_update rollouts and applies one joint update.
  const UpdateStats& update();
  /// Runs updates until `episodes` episodes have been collected in total.
  void run(long episodes, const std::function<void(const UpdateStats&)>& on_update = {});

  const std::vector<UpdateStats>& log() const { return log_; }
  /// Outcome of every episode collected so far, in order.
  const std::vector<Outcome>& outcomes() const { return outcomes_; }
  long episodes_done() const { return episodes_done_; }
  const WorkerBaseline& baseline() const { return baseline_; }
  void write_log(const std::filesystem::path& path) const;

 private:
  Manager& manager_;
  Worker& worker_;
  Critic& critic_;
  const Environment& env_;
  const std::vector<Utterance>& inits_;
  TrainConfig cfg_;
  Adam adam_manager_, adam_worker_, adam_critic_;
  WorkerBaseline baseline_;
  long episodes_done_ = 0;
  std::vector<UpdateStats> log_;
  std::vector<Outcome> outcomes_;
};

/// Success rate over the last `window` outcomes (all of them if fewer).
double rolling_success(const std::vector<Outcome>& outcomes, std::size_t window);

}  // namespace gochat
