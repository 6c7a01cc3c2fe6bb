#include "gochat/trainer.hpp"

#include "gochat/errors.hpp"
#include "gochat/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace gochat {

void TrainConfig::validate(bool allow_zero_lr) const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ValidationError("train.gamma must lie in (0, 1]");
  if (alpha < 0.0 || beta < 0.0) throw ValidationError("train.alpha and train.beta must be >= 0");
  if (!(lr > 0.0) && !(allow_zero_lr && lr == 0.0)) throw ValidationError("train.lr must be > 0");
  if (epochs < 0) throw ValidationError("train.epochs must be >= 0");
  if (m < 1) throw ValidationError("train.m must be >= 1");
  if (episodes_per_update < 1) throw ValidationError("train.episodes_per_update must be >= 1");
  if (grad_clip < 0.0) throw ValidationError("train.grad_clip must be >= 0");
  if (target_sync_every < 1) throw ValidationError("train.target_sync_every must be >= 1");
  if (batch_size < 1) throw ValidationError("train.batch_size must be >= 1");
  if (baseline_decay < 0.0 || baseline_decay >= 1.0) throw ValidationError("train.baseline_decay must lie in [0, 1)");
  if (episodes < 0) throw ValidationError("train.episodes must be >= 0");
}

SupervisedConfig TrainConfig::supervised() const {
  SupervisedConfig s;
  s.lr = lr;
  s.epochs = epochs;
  s.batch_size = batch_size;
  s.grad_clip = grad_clip;
  s.kl_anneal_batches = kl_anneal_batches;
  s.seed = seed;
  s.parallel = parallel;
  return s;
}

std::vector<double> compute_returns(std::span<const double> rewards, double gamma) {
  if (rewards.empty()) throw ValidationError("compute_returns: empty reward list");
  std::vector<double> R(rewards.size());
  double next = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    next = rewards[i] + gamma * next;
    R[i] = next;
  }
  return R;
}

namespace {

// Values of the live (or target) critic on s_1 .. s_T of an episode.
std::vector<double> state_values(const ValueNetwork& net, const Episode& ep) {
  Tape tape(false);
  HanEncoder::Stream stream(net.encoder(), net.params, tape);
  std::vector<double> v;
  for (int t = 1; t <= ep.length(); ++t) {
    int from = stream.length(), to = 2 * t - 1;
    for (int i = from; i < to; ++i) stream.push(ep.transcript[static_cast<std::size_t>(i)].tokens);
    v.push_back(tape.scalar_value(net.value(tape, stream.summary().vector)));
  }
  return v;
}

}  // namespace

std::vector<AdvantageRecord> advantages(const Episode& episode, const Critic& critic, const TrainConfig& cfg,
                                        const WorkerBaseline& baseline) {
  if (episode.length() == 0) throw ValidationError("advantages: empty episode");
  std::vector<double> rewards;
  for (const auto& tr : episode.transitions) rewards.push_back(tr.env_reward);
  auto R = compute_returns(rewards, cfg.gamma);
  auto V = state_values(critic.live, episode);
  auto Vt = state_values(critic.target, episode);
  std::vector<AdvantageRecord> out(rewards.size());
  for (std::size_t t = 0; t < out.size(); ++t) {
    auto& a = out[t];
    a.ret = R[t];
    a.value = V[t];
    a.target_next = t + 1 < out.size() ? Vt[t + 1] : 0.0;
    a.manager_adv = R[t] - V[t];
    a.baseline = baseline.value();
    a.worker_adv = baseline.advantage(episode.transitions[t].worker_reward);
  }
  return out;
}

Var policy_loss_sum(Tape& tape, std::span<const PolicyTerm> terms, double alpha, double beta) {
  std::vector<Var> parts;
  for (const auto& t : terms) {
    parts.push_back(tape.scale(t.log_pi_manager, alpha * t.manager_adv));
    parts.push_back(tape.scale(t.log_pi_worker, beta * t.worker_adv));
  }
  if (parts.empty()) return tape.scalar(0.0);
  return tape.scale(tape.sum(tape.concat(parts)), -1.0);
}

double policy_loss(std::span<const PolicyTurnValues> turns, double alpha, double beta) {
  if (turns.empty()) throw ValidationError("policy_loss: no turns");
  Tape tape(false);
  std::vector<PolicyTerm> terms;
  for (const auto& t : turns)
    terms.push_back({tape.scalar(t.log_pi_manager), tape.scalar(t.log_pi_worker), t.manager_adv, t.worker_adv});
  return tape.scalar_value(policy_loss_sum(tape, terms, alpha, beta)) / static_cast<double>(turns.size());
}

Var value_loss(Tape& tape, Var value, double reward, double target_next, double gamma) {
  Var td = tape.sub(tape.scalar(reward + gamma * target_next), value);
  return tape.scale(tape.square(td), 0.5);
}

double value_loss(double reward, double target_next, double value, double gamma) {
  Tape tape(false);
  return tape.scalar_value(value_loss(tape, tape.scalar(value), reward, target_next, gamma));
}

EpisodeLoss episode_loss(Tape& tape, const Manager& manager, const Worker& worker, const Critic& critic,
                         const Episode& episode, std::span<const AdvantageRecord> adv, const TrainConfig& cfg) {
  const int T = episode.length();
  if (T == 0 || static_cast<int>(adv.size()) != T) throw ValidationError("episode_loss: advantage count mismatch");
  HanEncoder::Stream mstream(manager.encoder(), manager.params, tape);
  HanEncoder::Stream cstream(critic.live.encoder(), critic.live.params, tape);
  Var hc = worker.zero_context(tape);
  int pushed = 0;

  std::vector<PolicyTerm> terms;
  std::vector<Var> vlosses;
  for (int t = 1; t <= T; ++t) {
    for (; pushed < 2 * t - 1; ++pushed) {
      const auto& tokens = episode.transcript[static_cast<std::size_t>(pushed)].tokens;
      mstream.push(tokens);
      cstream.push(tokens);
      hc = worker.step_context(tape, hc, worker.encode_turn(tape, tokens));
    }
    const Transition& tr = episode.transitions[static_cast<std::size_t>(t - 1)];
    const AdvantageRecord& a = adv[static_cast<std::size_t>(t - 1)];

    Var probs = manager.probs(tape, mstream.summary().vector);
    Var log_g = tape.log_floor(tape.pick(probs, tr.subgoal.index), kProbFloor);

    auto q = worker.posterior(tape, hc);
    Var za = worker.augment(tape, worker.latent(tape, q, tr.epsilon), tr.subgoal);
    Var log_u = worker.sequence_log_prob(tape, za, hc, tr.action);
    terms.push_back({log_g, log_u, a.manager_adv, a.worker_adv});

    Var v = critic.live.value(tape, cstream.summary().vector);
    vlosses.push_back(value_loss(tape, v, tr.env_reward, a.target_next, cfg.gamma));
  }
  EpisodeLoss out;
  out.policy_sum = policy_loss_sum(tape, terms, cfg.alpha, cfg.beta);
  out.value_sum = tape.sum(tape.concat(vlosses));
  out.total = tape.add(out.policy_sum, out.value_sum);
  return out;
}

// ---------------------------------------------------------------------------

Worker pretrain_worker(const std::vector<LabeledPair>& pairs, const WorkerConfig& wcfg, const TrainConfig& cfg,
                       const WorkerEpochCallback& on_epoch) {
  if (pairs.empty()) throw ValidationError("pretrain_worker: empty corpus");
  Worker w(wcfg, "worker");
  w.init(cfg.seed);
  EpochCallback cb;
  if (on_epoch) cb = [&](int epoch, double loss) { on_epoch(epoch, loss, w); };
  fit_generator(w, examples_from_pairs(pairs), cfg.supervised(), cb);
  return w;
}

namespace {

Var manager_nll(Tape& tape, const Manager& manager, const LabeledPair& p) {
  Var H = manager.encoder().encode_state(tape, manager.params, p.state.history).vector;
  Var logp = tape.log_softmax(manager.logits(tape, H));
  return tape.scale(tape.pick(logp, p.subgoal.index), -1.0);
}

}  // namespace

double manager_cross_entropy(const Manager& manager, const std::vector<LabeledPair>& pairs) {
  if (pairs.empty()) throw ValidationError("manager_cross_entropy: no pairs");
  double total = 0.0;
  for (const auto& p : pairs) {
    Tape tape(false);
    total += tape.scalar_value(manager_nll(tape, manager, p));
  }
  return total / static_cast<double>(pairs.size());
}

double manager_accuracy(const Manager& manager, const std::vector<LabeledPair>& pairs) {
  if (pairs.empty()) throw ValidationError("manager_accuracy: no pairs");
  int hit = 0;
  for (const auto& p : pairs) hit += greedy_subgoal(manager.probs(p.state)) == p.subgoal;
  return static_cast<double>(hit) / static_cast<double>(pairs.size());
}

Manager pretrain_manager(const std::vector<LabeledPair>& pairs, const HanConfig& han, int K, const TrainConfig& cfg,
                         const EpochCallback& on_epoch) {
  if (pairs.empty()) throw ValidationError("pretrain_manager: empty corpus");
  for (const auto& p : pairs)
    if (p.subgoal.K != K) throw ValidationError("pretrain_manager: label dimension differs from K");
  Manager manager(han, K);
  manager.init(cfg.seed);
  Adam adam(manager.params, cfg.lr);
  Rng order_rng = make_rng(cfg.seed, "fit.order.manager");
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    double total = 0.0;
    for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(cfg.batch_size)) {
      const auto e = std::min(order.size(), s + static_cast<std::size_t>(cfg.batch_size));
      const auto n = static_cast<long>(e - s);
      std::vector<SetGradients> per(static_cast<std::size_t>(n));
      std::vector<double> loss(static_cast<std::size_t>(n));
      auto one = [&](long i) {
        Tape tape;
        Var l = manager_nll(tape, manager, pairs[order[s + static_cast<std::size_t>(i)]]);
        tape.backward(l);
        loss[static_cast<std::size_t>(i)] = tape.scalar_value(l);
        per[static_cast<std::size_t>(i)] = tape.gradients().for_set(manager.params);
      };
      if (cfg.parallel) {
#pragma omp parallel for schedule(dynamic)
        for (long i = 0; i < n; ++i) one(i);
      } else {
        for (long i = 0; i < n; ++i) one(i);
      }
      SetGradients g = zeros_like(manager.params);
      for (long i = 0; i < n; ++i) {
        accumulate(g, per[static_cast<std::size_t>(i)], 1.0 / static_cast<double>(n));
        total += loss[static_cast<std::size_t>(i)];
      }
      SetGradients* gs[] = {&g};
      clip_global_norm(gs, cfg.grad_clip);
      adam.step(manager.params, g);
    }
    if (on_epoch) on_epoch(epoch, total / static_cast<double>(pairs.size()));
  }
  return manager;
}

// ---------------------------------------------------------------------------

std::string csv_header() { return "update,episodes,mean_return,mean_worker_reward,success_rate,loss_pi,loss_v"; }

std::string csv_row(const UpdateStats& s) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%ld,%ld,%.17g,%.17g,%.17g,%.17g,%.17g", s.update, s.episodes, s.mean_return,
                s.mean_worker_reward, s.success_rate, s.loss_pi, s.loss_v);
  return buf;
}

A2CTrainer::A2CTrainer(Manager& manager, Worker& worker, Critic& critic, const Environment& env,
                       const std::vector<Utterance>& inits, const TrainConfig& cfg)
    : manager_(manager),
      worker_(worker),
      critic_(critic),
      env_(env),
      inits_(inits),
      cfg_(cfg),
      adam_manager_(manager.params, cfg.lr),
      adam_worker_(worker.params, cfg.lr),
      adam_critic_(critic.live.params, cfg.lr),
      baseline_(cfg.baseline_decay) {
  cfg.validate(true);
  if (manager.K() != worker.config().K) throw ValidationError("trainer: manager and worker disagree on K");
  if (inits.empty()) throw ValidationError("trainer: no initial utterances");
}

const UpdateStats& A2CTrainer::update() {
  Environment env = env_;
  env.m = cfg_.m;
  const Agent agent{&manager_, &worker_};
  auto episodes = collect_rollouts(agent, env, inits_, cfg_.seed, episodes_done_, cfg_.episodes_per_update,
                                   cfg_.parallel);

  const long E = static_cast<long>(episodes.size());
  long turns = 0;
  for (const auto& ep : episodes) turns += ep.length();
  const double scale = 1.0 / static_cast<double>(turns);

  struct PerEpisode {
    SetGradients gm, gw, gc;
    double pi = 0.0, v = 0.0, ret = 0.0;
  };
  std::vector<PerEpisode> per(static_cast<std::size_t>(E));
  auto one = [&](long i) {
    const Episode& ep = episodes[static_cast<std::size_t>(i)];
    auto adv = advantages(ep, critic_, cfg_, baseline_);
    Tape tape;
    auto loss = episode_loss(tape, manager_, worker_, critic_, ep, adv, cfg_);
    tape.backward(loss.total, scale);
    auto& r = per[static_cast<std::size_t>(i)];
    r.gm = tape.gradients().for_set(manager_.params);
    r.gw = tape.gradients().for_set(worker_.params);
    r.gc = tape.gradients().for_set(critic_.live.params);
    r.pi = tape.scalar_value(loss.policy_sum);
    r.v = tape.scalar_value(loss.value_sum);
    r.ret = adv.front().ret;
  };
  if (cfg_.parallel) {
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < E; ++i) one(i);
  } else {
    for (long i = 0; i < E; ++i) one(i);
  }

  SetGradients gm = zeros_like(manager_.params), gw = zeros_like(worker_.params),
               gc = zeros_like(critic_.live.params);
  UpdateStats s;
  double wsum = 0.0;
  int successes = 0;
  for (long i = 0; i < E; ++i) {
    const auto& r = per[static_cast<std::size_t>(i)];
    accumulate(gm, r.gm);
    accumulate(gw, r.gw);
    accumulate(gc, r.gc);
    s.loss_pi += r.pi;
    s.loss_v += r.v;
    s.mean_return += r.ret;
    const Episode& ep = episodes[static_cast<std::size_t>(i)];
    successes += ep.outcome == Outcome::success;
    outcomes_.push_back(ep.outcome);
    for (const auto& tr : ep.transitions) wsum += tr.worker_reward;
  }
  SetGradients* all[] = {&gm, &gw, &gc};
  clip_global_norm(all, cfg_.grad_clip);
  adam_manager_.step(manager_.params, gm);
  adam_worker_.step(worker_.params, gw);
  adam_critic_.step(critic_.live.params, gc);

  for (const auto& ep : episodes)
    for (const auto& tr : ep.transitions) baseline_.observe(tr.worker_reward);

  episodes_done_ += E;
  s.update = static_cast<long>(log_.size()) + 1;
  if (s.update % cfg_.target_sync_every == 0) critic_.sync_target();
  s.episodes = episodes_done_;
  s.mean_return /= static_cast<double>(E);
  s.mean_worker_reward = wsum / static_cast<double>(turns);
  s.success_rate = static_cast<double>(successes) / static_cast<double>(E);
  s.loss_pi *= scale;
  s.loss_v *= scale;
  log_.push_back(s);
  return log_.back();
}

void A2CTrainer::run(long episodes, const std::function<void(const UpdateStats&)>& on_update) {
  while (episodes_done_ < episodes) {
    const auto& s = update();
    if (on_update) on_update(s);
  }
}

void A2CTrainer::write_log(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << csv_header() << '\n';
  for (const auto& s : log_) out << csv_row(s) << '\n';
}

double rolling_success(const std::vector<Outcome>& outcomes, std::size_t window) {
  if (outcomes.empty()) return 0.0;
  std::size_t n = std::min(window, outcomes.size());
  auto first = outcomes.end() - static_cast<std::ptrdiff_t>(n);
  auto hits = std::count(first, outcomes.end(), Outcome::success);
  return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace gochat
