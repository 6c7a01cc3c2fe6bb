#pragma once

// Adam, global-norm clipping, and minibatch supervised fitting. Per-example
// gradients are computed on independent tapes (OpenMP across the batch) and
// reduced in example order, so results do not depend on the thread count.

#include "gochat/autodiff.hpp"
#include "gochat/worker_vhred.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace gochat {

class Adam {
 public:
  Adam() = default;
  Adam(const ParameterSet& set, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  /// One update; with lr == 0 parameters are left untouched.
  void step(ParameterSet& set, const SetGradients& grads);
  double lr() const { return lr_; }
  long steps() const { return t_; }

 private:
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
  SetGradients m_, v_;
};

/// Scales all gradients jointly so their global L2 norm is at most max_norm.
/// Returns the norm before clipping. max_norm <= 0 disables clipping.
double clip_global_norm(std::span<SetGradients* const> grads, double max_norm);

struct SupervisedConfig {
  double lr = 1e-3;
  int epochs = 10;
  int batch_size = 16;
  double grad_clip = 5.0;
  int kl_anneal_batches = 1000;
  std::uint64_t seed = 1;
  bool parallel = true;
};

/// KL weight after `batches_done` updates: linear 0 -> 1 over anneal_batches.
double kl_weight_at(long batches_done, int anneal_batches);

struct BatchResult {
  double loss = 0.0;  // mean over the batch
  SetGradients grads;  // of the mean loss
};

/// Gradient of the batch-mean example loss; eps[i] belongs to batch[i].
BatchResult worker_batch_gradient(const Worker& worker, std::span<const GenerationExample> batch,
                                  std::span<const Vec> eps, double kl_weight, bool parallel);

using EpochCallback = std::function<void(int epoch, double mean_loss)>;

/// Adam over shuffled minibatches of -log p + kl_weight * KL. Returns the mean
/// training loss of each epoch.
std::vector<double> fit_generator(Worker& worker, const std::vector<GenerationExample>& examples,
                                  const SupervisedConfig& cfg, const EpochCallback& on_epoch = {});

/// Fraction of target positions (real tokens plus EOS) reproduced by greedy
/// eps = 0 decoding.
double greedy_token_accuracy(const Worker& worker, const std::vector<GenerationExample>& examples);

}  // namespace gochat
