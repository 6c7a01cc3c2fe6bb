#include "gochat/optim.hpp"

#include "gochat/errors.hpp"
#include "gochat/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace gochat {

Adam::Adam(const ParameterSet& set, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(zeros_like(set)), v_(zeros_like(set)) {
  if (lr < 0.0) throw ValidationError("Adam: negative learning rate");
}

void Adam::step(ParameterSet& set, const SetGradients& grads) {
  if (static_cast<int>(grads.size()) != set.size()) throw std::invalid_argument("Adam: gradient slot mismatch");
  ++t_;
  if (lr_ == 0.0) return;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (int i = 0; i < set.size(); ++i) {
    auto& m = m_[static_cast<std::size_t>(i)];
    auto& v = v_[static_cast<std::size_t>(i)];
    const Mat& g = grads[static_cast<std::size_t>(i)];
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    set[i].value.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
  }
}

double clip_global_norm(std::span<SetGradients* const> grads, double max_norm) {
  double sq = 0.0;
  for (auto* g : grads) sq += squared_norm(*g);
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    double s = max_norm / norm;
    for (auto* g : grads)
      for (auto& m : *g) m *= s;
  }
  return norm;
}

double kl_weight_at(long batches_done, int anneal_batches) {
  if (anneal_batches <= 0) return 1.0;
  return std::min(1.0, static_cast<double>(batches_done) / anneal_batches);
}

BatchResult worker_batch_gradient(const Worker& worker, std::span<const GenerationExample> batch,
                                  std::span<const Vec> eps, double kl_weight, bool parallel) {
  if (batch.empty()) throw ValidationError("empty batch");
  const long n = static_cast<long>(batch.size());
  std::vector<SetGradients> per(batch.size());
  std::vector<double> losses(batch.size());
  auto one = [&](long i) {
    auto ui = static_cast<std::size_t>(i);
    Tape tape;
    Var loss = example_loss(tape, worker, batch[ui], eps[ui], kl_weight);
    tape.backward(loss);
    losses[ui] = tape.scalar_value(loss);
    per[ui] = tape.gradients().for_set(worker.params);
  };
  if (parallel) {
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < n; ++i) one(i);
  } else {
    for (long i = 0; i < n; ++i) one(i);
  }
  BatchResult r;
  r.grads = zeros_like(worker.params);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    accumulate(r.grads, per[i], 1.0 / static_cast<double>(n));
    r.loss += losses[i];
  }
  r.loss /= static_cast<double>(n);
  return r;
}

std::vector<double> fit_generator(Worker& worker, const std::vector<GenerationExample>& examples,
                                  const SupervisedConfig& cfg, const EpochCallback& on_epoch) {
  if (examples.empty()) throw ValidationError("fit_generator: no training examples");
  if (cfg.batch_size < 1 || cfg.epochs < 0) throw ValidationError("fit_generator: bad batch size or epochs");
  Adam adam(worker.params, cfg.lr);
  Rng order_rng = make_rng(cfg.seed, "fit.order." + worker.prefix());
  Rng eps_rng = make_rng(cfg.seed, "fit.eps." + worker.prefix());
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<double> history;
  long batches = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<GenerationExample> batch;
      std::vector<Vec> eps;
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(examples[order[i]]);
        eps.push_back(standard_normal(worker.config().d_z, eps_rng));
      }
      auto r = worker_batch_gradient(worker, batch, eps, kl_weight_at(batches, cfg.kl_anneal_batches), cfg.parallel);
      SetGradients* gs[] = {&r.grads};
      clip_global_norm(gs, cfg.grad_clip);
      adam.step(worker.params, r.grads);
      total += r.loss * static_cast<double>(end - start);
      ++batches;
    }
    history.push_back(total / static_cast<double>(examples.size()));
    if (on_epoch) on_epoch(epoch, history.back());
  }
  return history;
}

double greedy_token_accuracy(const Worker& worker, const std::vector<GenerationExample>& examples) {
  long hit = 0, total = 0;
  for (const auto& ex : examples) {
    auto target = decoder_targets(ex.target);
    auto gen = respond_greedy(worker, ex.history, ex.subgoal);
    for (std::size_t i = 0; i < target.size(); ++i) {
      ++total;
      if (i < gen.action.size() && gen.action[i] == target[i]) ++hit;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace gochat
