#include "gochat/manager_critic.hpp"

#include "gochat/errors.hpp"

namespace gochat {

nlohmann::json han_meta(const HanConfig& cfg) {
  return {{"vocab_size", cfg.vocab_size}, {"d_emb", cfg.d_emb}, {"d_word", cfg.d_word}, {"d_dlg", cfg.d_dlg}};
}

HanConfig han_from_meta(const nlohmann::json& meta) {
  HanConfig cfg;
  cfg.vocab_size = meta.at("vocab_size").get<int>();
  cfg.d_emb = meta.at("d_emb").get<int>();
  cfg.d_word = meta.at("d_word").get<int>();
  cfg.d_dlg = meta.at("d_dlg").get<int>();
  return cfg;
}

// ---------------------------------------------------------------------------

Manager::Manager(const HanConfig& han, int K) : K_(K) {
  if (K < 2) throw ValidationError("manager: K must be >= 2");
  encoder_ = HanEncoder(params, "manager.encoder", han);
  w_g_ = params.add("manager.W_g", han.d_dlg, K);
  b_g_ = params.add("manager.b_g", K, 1);
}

void Manager::init(std::uint64_t seed) {
  Rng rng = make_rng(seed, "init.manager");
  params.init_uniform(rng, -kInitScale, kInitScale);
}

Var Manager::logits(Tape& tape, Var H) const {
  return tape.add(tape.matvec_t(params[w_g_], H), tape.param(params[b_g_]));
}

Var Manager::probs(Tape& tape, Var H) const { return tape.softmax(logits(tape, H)); }

Vec Manager::probs(const DialogueState& state) const {
  Tape tape(false);
  Var H = encoder_.encode_state(tape, params, state.history).vector;
  return tape.value(probs(tape, H));
}

Container Manager::to_container() const {
  Container c;
  c.meta["kind"] = "manager";
  c.meta["han"] = han_meta(encoder_.config());
  c.meta["K"] = K_;
  c.add(params);
  return c;
}

Manager Manager::from_container(const Container& c) {
  if (c.meta.value("kind", "") != "manager") throw ValidationError("checkpoint is not a manager");
  Manager m(han_from_meta(c.meta.at("han")), c.meta.at("K").get<int>());
  c.restore_into(m.params);
  return m;
}

Vec manager_probs(const Manager& manager, const DialogueState& state) { return manager.probs(state); }

SubGoal sample_subgoal(const Vec& probs, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double u = unit(rng);
  double acc = 0.0;
  int last_positive = 0;
  for (Eigen::Index k = 0; k < probs.size(); ++k) {
    if (probs(k) > 0.0) last_positive = static_cast<int>(k);
    acc += probs(k);
    if (acc > u) return SubGoal::from_index(static_cast<int>(k), static_cast<int>(probs.size()));
  }
  return SubGoal::from_index(last_positive, static_cast<int>(probs.size()));
}

SubGoal greedy_subgoal(const Vec& probs) { return subgoal_from_posterior(probs); }

// ---------------------------------------------------------------------------

ValueNetwork::ValueNetwork(const HanConfig& han, const std::string& prefix) {
  encoder_ = HanEncoder(params, prefix + ".encoder", han);
  head_ = nn::Linear::create(params, prefix + ".value_head", han.d_dlg, 1);
}

Var ValueNetwork::value(Tape& tape, Var H) const { return head_(tape, params, H); }

double ValueNetwork::value(const DialogueState& state) const {
  Tape tape(false);
  Var H = encoder_.encode_state(tape, params, state.history).vector;
  return tape.scalar_value(value(tape, H));
}

void ValueNetwork::zero_head() {
  params[head_.weight].value.setZero();
  params[head_.bias].value.setZero();
}

Critic::Critic(const HanConfig& han) : live(han, "critic"), target(han, "critic_target") {}

void Critic::init(std::uint64_t seed) {
  Rng rng = make_rng(seed, "init.critic");
  live.params.init_uniform(rng, -kInitScale, kInitScale);
  live.zero_head();
  sync_target();
}

void Critic::sync_target() { target.params.copy_values_from(live.params); }

double Critic::value_estimate(const DialogueState& state, bool use_target) const {
  return use_target ? target.value(state) : live.value(state);
}

Container Critic::to_container() const {
  Container c;
  c.meta["kind"] = "critic";
  c.meta["han"] = han_meta(live.encoder().config());
  c.add(live.params);
  c.add(target.params);
  return c;
}

Critic Critic::from_container(const Container& c) {
  if (c.meta.value("kind", "") != "critic") throw ValidationError("checkpoint is not a critic");
  Critic cr(han_from_meta(c.meta.at("han")));
  c.restore_into(cr.live.params);
  c.restore_into(cr.target.params);
  return cr;
}

}  // namespace gochat
