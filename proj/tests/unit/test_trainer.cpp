#include "gochat/errors.hpp"
#include "gochat/trainer.hpp"

#include "../support.hpp"
#include "../toy_world.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace gochat;
using gochat::testing::fd_check;
using gochat::testing::randomize;
using gochat::testing::utt;

namespace {

const HanConfig kHan{12, 4, 6, 3};
const WorkerConfig kWorker{12, 2, 4, 5, 5, 3, 5, 6};

struct Models {
  Manager manager{kHan, 2};
  Worker worker{kWorker, "worker"};
  Critic critic{kHan};
  Models() {
    randomize(manager.params, 1, 0.5);
    randomize(worker.params, 2, 0.5);
    randomize(critic.live.params, 3, 0.5);
    randomize(critic.target.params, 4, 0.5);
  }
};

// Two full turns followed by a final chatbot turn.
Episode toy_episode() {
  Episode ep;
  ep.transcript = {utt(Speaker::human, {4, 5}, 6), utt(Speaker::chatbot, {6, 7}, 6), utt(Speaker::human, {8}, 6),
                   utt(Speaker::chatbot, {9, 10, 11}, 6), utt(Speaker::human, {5, 4}, 6),
                   utt(Speaker::chatbot, {}, 6)};
  ep.init_utterance = ep.transcript[0];
  std::vector<std::vector<int>> actions{{6, 7, kEos}, {9, 10, 11, kEos}, {kEos}};
  Vec e1(3), e2(3), e3(3);
  e1 << 0.2, -0.4, 1.1;
  e2 << -0.7, 0.0, 0.3;
  e3 << 0.5, 0.5, -0.5;
  Vec eps[] = {e1, e2, e3};
  double wr[] = {0.3, 0.8, 0.0};
  for (int t = 0; t < 3; ++t) {
    Transition tr;
    tr.subgoal = SubGoal::from_index(t % 2, 2);
    tr.subgoal_probs = Vec::Constant(2, 0.5);
    tr.epsilon = eps[t];
    tr.action = actions[static_cast<std::size_t>(t)];
    tr.response = ep.transcript[static_cast<std::size_t>(2 * t + 1)].tokens;
    tr.worker_reward = wr[t];
    ep.transitions.push_back(tr);
  }
  ep.transitions.back().env_reward = 1.0;
  ep.outcome = Outcome::success;
  return ep;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

TrainConfig small_rl() {
  TrainConfig c;
  c.lr = 0.01;
  c.m = 4;
  c.episodes_per_update = 4;
  c.seed = 11;
  return c;
}

}  // namespace

TEST_CASE("discounted returns") {
  auto r = compute_returns(std::vector<double>{0, 0, 1}, 0.99);
  CHECK(r[0] == doctest::Approx(0.9801).epsilon(1e-15));
  CHECK(r[1] == doctest::Approx(0.99).epsilon(1e-15));
  CHECK(r[2] == 1.0);
  CHECK(compute_returns(std::vector<double>{0, 0, -1}, 1.0) == std::vector<double>{-1, -1, -1});
  CHECK(compute_returns(std::vector<double>{1}, 0.9) == std::vector<double>{1});
  CHECK_THROWS_AS(compute_returns(std::vector<double>{}, 0.9), ValidationError);

  Rng rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0), g(0.01, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> rw(static_cast<std::size_t>(1 + trial % 9));
    for (auto& x : rw) x = u(rng);
    double gamma = g(rng);
    auto R = compute_returns(rw, gamma);
    CHECK(R.back() == rw.back());
    for (std::size_t t = 0; t + 1 < rw.size(); ++t) CHECK(R[t] == doctest::Approx(rw[t] + gamma * R[t + 1]));
  }
}

TEST_CASE("advantages use the live critic, the target successor and the worker baseline") {
  Models m;
  Episode ep = toy_episode();
  TrainConfig cfg;
  WorkerBaseline fresh;
  auto adv = advantages(ep, m.critic, cfg, fresh);
  REQUIRE(adv.size() == 3);
  auto R = compute_returns(std::vector<double>{0, 0, 1}, cfg.gamma);
  for (int t = 1; t <= 3; ++t) {
    const auto& a = adv[static_cast<std::size_t>(t - 1)];
    double v = m.critic.value_estimate(ep.state(t), false);
    CHECK(a.value == v);
    CHECK(a.manager_adv == R[static_cast<std::size_t>(t - 1)] - v);
    CHECK(a.worker_adv == ep.transitions[static_cast<std::size_t>(t - 1)].worker_reward);
    CHECK(a.target_next == (t < 3 ? m.critic.value_estimate(ep.state(t + 1), true) : 0.0));
  }

  WorkerBaseline b(0.5);
  b.observe(0.4);
  CHECK(b.value() == doctest::Approx(0.2));
  auto adv2 = advantages(ep, m.critic, cfg, b);
  CHECK(adv2[1].worker_adv == doctest::Approx(0.8 - 0.2));
  CHECK(adv2[1].baseline == b.value());
}

TEST_CASE("surrogate policy loss") {
  // alpha 1, beta 0.001; A = 2, log pi = -1; A^w = 0.5, log pi = -2
  PolicyTurnValues turn{2.0, -1.0, 0.5, -2.0};
  CHECK(policy_loss(std::span(&turn, 1), 1.0, 0.001) == doctest::Approx(2.001).epsilon(1e-15));
  PolicyTurnValues zero{0.0, -3.0, 0.0, -7.0};
  CHECK(policy_loss(std::span(&zero, 1), 1.0, 0.001) == 0.0);

  std::vector<PolicyTurnValues> turns{{0.5, -0.2, 1.0, -4.0}, {-1.0, -0.7, 3.0, -2.0}};
  double b0 = policy_loss(turns, 1.0, 0.0);
  turns[0].log_pi_worker = -100.0;
  turns[1].worker_adv = -9.0;
  CHECK(policy_loss(turns, 1.0, 0.0) == b0);
  CHECK(b0 == doctest::Approx(-(0.5 * -0.2 + -1.0 * -0.7) / 2.0));

  // tape form agrees with the value form, summed instead of averaged
  Tape t;
  std::vector<PolicyTerm> terms{{t.scalar(-0.2), t.scalar(-4.0), 0.5, 1.0}, {t.scalar(-0.7), t.scalar(-2.0), -1.0, 3.0}};
  std::vector<PolicyTurnValues> vals{{0.5, -0.2, 1.0, -4.0}, {-1.0, -0.7, 3.0, -2.0}};
  CHECK(t.scalar_value(policy_loss_sum(t, terms, 1.0, 0.001)) ==
        doctest::Approx(2.0 * policy_loss(vals, 1.0, 0.001)).epsilon(1e-15));
}

TEST_CASE("value loss") {
  CHECK(value_loss(1.0, 0.0, 0.5, 0.99) == doctest::Approx(0.125).epsilon(1e-15));
  // Bellman fixed point
  CHECK(value_loss(0.0, 0.8, 0.99 * 0.8, 0.99) == 0.0);
  CHECK(value_loss(-1.0, 0.3, -1.0 + 0.3, 1.0) == 0.0);
  Tape t;
  CHECK(t.scalar_value(value_loss(t, t.scalar(0.5), 1.0, 0.0, 0.99)) == doctest::Approx(0.125));
}

TEST_CASE("joint loss gradient matches finite differences for every network") {
  Models m;
  Episode ep = toy_episode();
  TrainConfig cfg;
  cfg.beta = 0.3;  // large enough that the worker term is visible
  auto adv = advantages(ep, m.critic, cfg, WorkerBaseline());
  Tape tape;
  tape.backward(episode_loss(tape, m.manager, m.worker, m.critic, ep, adv, cfg).total);
  auto loss = [&] {
    Tape t(false);
    return t.scalar_value(episode_loss(t, m.manager, m.worker, m.critic, ep, adv, cfg).total);
  };
  for (ParameterSet* ps : {&m.manager.params, &m.worker.params, &m.critic.live.params}) {
    auto r = fd_check(*ps, tape.gradients().for_set(*ps), loss);
    INFO("worst at " << r.where);
    CHECK(r.worst < 1e-4);
    CHECK(r.checked > 0);
  }
}

TEST_CASE("advantages are constants and the value loss trains only the critic") {
  Models m;
  Episode ep = toy_episode();
  TrainConfig cfg;
  auto adv = advantages(ep, m.critic, cfg, WorkerBaseline());

  Tape a;
  auto la = episode_loss(a, m.manager, m.worker, m.critic, ep, adv, cfg);
  a.backward(la.policy_sum);
  for (const auto& g : a.gradients().for_set(m.critic.live.params)) CHECK(g.isZero());
  for (const auto& g : a.gradients().for_set(m.critic.target.params)) CHECK(g.isZero());

  Tape b;
  auto lb = episode_loss(b, m.manager, m.worker, m.critic, ep, adv, cfg);
  b.backward(lb.value_sum);
  for (const auto& g : b.gradients().for_set(m.manager.params)) CHECK(g.isZero());
  for (const auto& g : b.gradients().for_set(m.worker.params)) CHECK(g.isZero());
  for (const auto& g : b.gradients().for_set(m.critic.target.params)) CHECK(g.isZero());
  bool any = false;
  for (const auto& g : b.gradients().for_set(m.critic.live.params)) any |= !g.isZero();
  CHECK(any);
}

TEST_CASE("updates with a zero learning rate leave every parameter untouched") {
  gochat::testing::ToyWorld w;
  Manager manager(HanConfig{w.vocab.size(), 8, 8, 8}, 3);
  manager.init(1);
  Critic critic(HanConfig{w.vocab.size(), 8, 8, 8});
  critic.init(1);
  randomize(critic.live.params, 2, 0.3);
  Manager m0 = manager;
  Worker w0 = w.worker;
  Critic c0 = critic;
  TrainConfig cfg = small_rl();
  cfg.lr = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  A2CTrainer tr(manager, w.worker, critic, w.env, w.inits, cfg);
  tr.update();
  tr.update();
  CHECK(manager.params.identical(m0.params));
  CHECK(w.worker.params.identical(w0.params));
  CHECK(critic.live.params.identical(c0.live.params));
  CHECK(tr.episodes_done() == 8);
  CHECK(tr.outcomes().size() == 8);
}

TEST_CASE("same seed, same training log; serial equals parallel") {
  auto run = [](bool parallel, std::uint64_t seed) {
    gochat::testing::ToyWorld w;
    Manager manager(HanConfig{w.vocab.size(), 8, 8, 8}, 3);
    manager.init(1);
    Critic critic(HanConfig{w.vocab.size(), 8, 8, 8});
    critic.init(1);
    TrainConfig cfg = small_rl();
    cfg.parallel = parallel;
    cfg.seed = seed;
    A2CTrainer tr(manager, w.worker, critic, w.env, w.inits, cfg);
    tr.run(12);
    auto path = std::filesystem::temp_directory_path() / ("gochat_train_log_" + std::to_string(parallel) + ".csv");
    tr.write_log(path);
    return slurp(path);
  };
  std::string a = run(true, 11);
  CHECK(a == run(true, 11));
  CHECK(a == run(false, 11));
  CHECK(a != run(true, 12));
  CHECK(a.substr(0, a.find('\n')) == csv_header());
  CHECK(std::count(a.begin(), a.end(), '\n') == 4);
}

TEST_CASE("target critic syncs on schedule") {
  gochat::testing::ToyWorld w;
  Manager manager(HanConfig{w.vocab.size(), 8, 8, 8}, 3);
  manager.init(1);
  Critic critic(HanConfig{w.vocab.size(), 8, 8, 8});
  critic.init(1);
  randomize(critic.live.params, 2, 0.3);
  ParameterSet target0 = critic.target.params;
  TrainConfig cfg = small_rl();
  cfg.target_sync_every = 2;
  A2CTrainer tr(manager, w.worker, critic, w.env, w.inits, cfg);
  tr.update();
  CHECK(critic.target.params.identical(target0));
  CHECK(critic.live.params.flatten() != target0.flatten());
  tr.update();
  CHECK(critic.target.params.flatten() == critic.live.params.flatten());
  Vec synced = critic.target.params.flatten();
  tr.update();
  CHECK(critic.target.params.flatten() == synced);
}

TEST_CASE("worker pretraining lowers the loss") {
  gochat::testing::ToyWorld w;
  std::vector<LabeledPair> pairs;
  for (const auto& d : w.dialogues)
    for (int t = 1; 2 * t - 1 < static_cast<int>(d.turns.size()); ++t)
      pairs.push_back({d.id, t, state_at(d, t), SubGoal::from_index(t % 3, 3), d.turns[static_cast<std::size_t>(2 * t - 1)]});
  TrainConfig cfg;
  cfg.lr = 0.01;
  cfg.epochs = 4;
  cfg.kl_anneal_batches = 0;
  std::vector<double> losses;
  int saw = 0;
  Worker worker = pretrain_worker(pairs, WorkerConfig{w.vocab.size(), 3, 8, 8, 8, 4, 8, 10}, cfg,
                                  [&](int epoch, double loss, const Worker& net) {
                                    CHECK(epoch == saw++);
                                    CHECK(net.config().K == 3);
                                    losses.push_back(loss);
                                  });
  REQUIRE(losses.size() == 4);
  CHECK(losses[1] < losses[0]);
  CHECK(losses[2] < losses[1]);
  CHECK(losses[3] < losses[2]);
  CHECK_THROWS_AS(pretrain_worker({}, kWorker, cfg), ValidationError);
}

TEST_CASE("manager pretraining") {
  std::vector<LabeledPair> pairs;
  for (int i = 0; i < 40; ++i) {
    int label = i % 2;
    // the label is readable from the last human token
    DialogueState s{{utt(Speaker::human, {4 + i % 5}, 4), utt(Speaker::chatbot, {9}, 4),
                     utt(Speaker::human, {label == 0 ? 10 : 11}, 4)}};
    pairs.push_back({"d" + std::to_string(i), 2, s, SubGoal::from_index(label, 2), utt(Speaker::chatbot, {5}, 4)});
  }

  Manager uniform(kHan, 14);
  uniform.init(1);
  uniform.params[uniform.w_g()].value.setZero();
  uniform.params[uniform.b_g()].value.setZero();
  std::vector<LabeledPair> wide = pairs;
  for (auto& p : wide) p.subgoal = SubGoal::from_index(p.subgoal.index + 7, 14);
  CHECK(manager_cross_entropy(uniform, wide) == doctest::Approx(std::log(14.0)).epsilon(1e-12));

  TrainConfig cfg;
  cfg.lr = 0.02;
  cfg.epochs = 30;
  cfg.batch_size = 8;
  std::vector<double> ce;
  Manager m = pretrain_manager(pairs, kHan, 2, cfg, [&](int, double l) { ce.push_back(l); });
  CHECK(manager_accuracy(m, pairs) >= 0.95);
  CHECK(ce.back() < ce.front());
  CHECK_THROWS_AS(pretrain_manager(wide, kHan, 2, cfg), ValidationError);
}

TEST_CASE("rolling success and configuration checks") {
  std::vector<Outcome> o{Outcome::failure, Outcome::success, Outcome::success, Outcome::failure};
  CHECK(rolling_success(o, 2) == 0.5);
  CHECK(rolling_success(o, 3) == doctest::Approx(2.0 / 3.0));
  CHECK(rolling_success(o, 100) == 0.5);
  CHECK(rolling_success({}, 10) == 0.0);

  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.gamma = 1.0;
  CHECK_NOTHROW(c.validate());
  c.gamma = 0.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = TrainConfig{};
  c.m = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = TrainConfig{};
  c.lr = -1.0;
  CHECK_THROWS_AS(c.validate(true), ValidationError);
}
