#include "gochat/worker_vhred.hpp"

#include "gochat/errors.hpp"
#include "gochat/manager_critic.hpp"

#include <cmath>

namespace gochat {

std::vector<int> decoder_targets(const TokenSeq& response) {
  std::vector<int> t(response.real().begin(), response.real().end());
  if (response.real_length < response.capacity()) t.push_back(kEos);
  return t;
}

Worker::Worker(const WorkerConfig& cfg, const std::string& prefix) : cfg_(cfg), prefix_(prefix) {
  if (cfg.vocab_size <= kReservedCount) throw ValidationError("worker: vocab too small");
  if (cfg.K < 0 || cfg.d_z < 1 || cfg.n < 2) throw ValidationError("worker: bad dimensions");
  const int aug = cfg.d_z + cfg.K;
  embedding_ = params.add(prefix + ".embedding", cfg.vocab_size, cfg.d_emb);
  encoder_ = nn::Gru::create(params, prefix + ".encoder", cfg.d_emb, cfg.d_enc);
  context_ = nn::Gru::create(params, prefix + ".context", cfg.d_enc, cfg.d_ctx);
  post_mu_ = nn::Linear::create(params, prefix + ".posterior_mu", cfg.d_ctx, cfg.d_z);
  post_logvar_ = nn::Linear::create(params, prefix + ".posterior_logvar", cfg.d_ctx, cfg.d_z);
  prior_mu_ = nn::Linear::create(params, prefix + ".prior_mu", cfg.d_ctx, cfg.d_z);
  prior_logvar_ = nn::Linear::create(params, prefix + ".prior_logvar", cfg.d_ctx, cfg.d_z);
  dec_init_ = nn::Linear::create(params, prefix + ".decoder_init", aug + cfg.d_ctx, cfg.d_dec);
  decoder_ = nn::Gru::create(params, prefix + ".decoder", cfg.d_emb + aug, cfg.d_dec);
  output_ = nn::Linear::create(params, prefix + ".output", cfg.d_dec, cfg.vocab_size);
}

void Worker::init(std::uint64_t seed) {
  Rng rng = make_rng(seed, "init." + prefix_);
  params.init_uniform(rng, -kInitScale, kInitScale);
}

Var Worker::encode_turn(Tape& tape, const TokenSeq& tokens) const {
  Var h = encoder_.zero_state(tape);
  if (tokens.real_length == 0) return encoder_.step(tape, params, tape.row(params[embedding_], kUnk), h);
  for (int id : tokens.real()) {
    if (id < 0 || id >= cfg_.vocab_size) throw std::out_of_range("token id outside worker vocabulary");
    h = encoder_.step(tape, params, tape.row(params[embedding_], id), h);
  }
  return h;
}

Var Worker::step_context(Tape& tape, Var context_prev, Var utterance) const {
  return context_.step(tape, params, utterance, context_prev);
}

Var Worker::zero_context(Tape& tape) const { return context_.zero_state(tape); }

Gaussian Worker::posterior(Tape& tape, Var context) const {
  Gaussian g;
  g.mu = post_mu_(tape, params, context);
  g.logvar = post_logvar_(tape, params, context);
  g.sigma = tape.exp(tape.scale(g.logvar, 0.5));
  return g;
}

Gaussian Worker::prior(Tape& tape, Var context) const {
  Gaussian g;
  g.mu = prior_mu_(tape, params, context);
  g.logvar = prior_logvar_(tape, params, context);
  g.sigma = tape.exp(tape.scale(g.logvar, 0.5));
  return g;
}

Var Worker::latent(Tape& tape, const Gaussian& q, const Vec& eps) const {
  if (eps.size() != cfg_.d_z) throw std::invalid_argument("latent: eps dimension mismatch");
  return tape.add(q.mu, tape.mul(q.sigma, tape.input(eps)));
}

Var Worker::augment(Tape& tape, Var z, const std::optional<SubGoal>& g) const {
  if (cfg_.K == 0) {
    if (g) throw ValidationError("user model takes no sub-goal");
    return z;
  }
  if (!g || g->K != cfg_.K) throw ValidationError("worker needs a sub-goal of dimension " + std::to_string(cfg_.K));
  return tape.concat(z, tape.input(g->onehot()));
}

Var Worker::decoder_init(Tape& tape, Var z_aug, Var context) const {
  return tape.tanh(dec_init_(tape, params, tape.concat(z_aug, context)));
}

Var Worker::decoder_step(Tape& tape, Var z_aug, Var hidden, int prev_token, Var* probs) const {
  Var in = tape.concat(tape.row(params[embedding_], prev_token), z_aug);
  Var h = decoder_.step(tape, params, in, hidden);
  *probs = tape.softmax(output_(tape, params, h));
  return h;
}

Generation Worker::decode(Tape& tape, Var z_aug, Var context, DecodeMode mode, Rng* rng, int max_len) const {
  if (mode == DecodeMode::sample && !rng) throw std::invalid_argument("decode: sample mode needs an rng");
  max_len = std::min(max_len, cfg_.n);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<int> tokens;
  Generation out;
  Var h = decoder_init(tape, z_aug, context);
  int prev = kBos;
  while (static_cast<int>(tokens.size()) < max_len) {
    Var probs;
    h = decoder_step(tape, z_aug, h, prev, &probs);
    const Vec& p = tape.value(probs);
    int tok = 0;
    if (mode == DecodeMode::greedy) {
      for (Eigen::Index k = 1; k < p.size(); ++k)
        if (p(k) > p(tok)) tok = static_cast<int>(k);
    } else {
      double u = unit(*rng), acc = 0.0;
      tok = static_cast<int>(p.size()) - 1;
      for (Eigen::Index k = 0; k < p.size(); ++k) {
        acc += p(k);
        if (acc > u) {
          tok = static_cast<int>(k);
          break;
        }
      }
    }
    out.action.push_back(tok);
    if (tok == kEos || tok == kPad) break;
    tokens.push_back(tok);
    prev = tok;
  }
  out.tokens = TokenSeq::from_ids(tokens, cfg_.n);
  return out;
}

Var Worker::sequence_log_prob(Tape& tape, Var z_aug, Var context, std::span<const int> targets) const {
  if (targets.empty()) throw std::invalid_argument("sequence_log_prob: empty target");
  Var h = decoder_init(tape, z_aug, context);
  int prev = kBos;
  std::vector<Var> terms;
  terms.reserve(targets.size());
  for (int tok : targets) {
    if (tok < 0 || tok >= cfg_.vocab_size) throw std::out_of_range("target id outside worker vocabulary");
    Var probs;
    h = decoder_step(tape, z_aug, h, prev, &probs);
    terms.push_back(tape.log_floor(tape.pick(probs, tok), kProbFloor));
    prev = tok;
  }
  return tape.sum(tape.concat(terms));
}

Var Worker::encode_history(Tape& tape, const std::vector<Utterance>& history) const {
  Var hc = zero_context(tape);
  for (const auto& u : history) hc = step_context(tape, hc, encode_turn(tape, u.tokens));
  return hc;
}

Container Worker::to_container() const {
  Container c;
  c.meta["kind"] = "worker";
  c.meta["prefix"] = prefix_;
  c.meta["dims"] = {{"vocab_size", cfg_.vocab_size}, {"K", cfg_.K},         {"d_emb", cfg_.d_emb},
                    {"d_enc", cfg_.d_enc},           {"d_ctx", cfg_.d_ctx}, {"d_z", cfg_.d_z},
                    {"d_dec", cfg_.d_dec},           {"n", cfg_.n}};
  c.add(params);
  return c;
}

Worker Worker::from_container(const Container& c) {
  if (c.meta.value("kind", "") != "worker") throw ValidationError("checkpoint is not a worker");
  const auto& d = c.meta.at("dims");
  WorkerConfig cfg;
  cfg.vocab_size = d.at("vocab_size").get<int>();
  cfg.K = d.at("K").get<int>();
  cfg.d_emb = d.at("d_emb").get<int>();
  cfg.d_enc = d.at("d_enc").get<int>();
  cfg.d_ctx = d.at("d_ctx").get<int>();
  cfg.d_z = d.at("d_z").get<int>();
  cfg.d_dec = d.at("d_dec").get<int>();
  cfg.n = d.at("n").get<int>();
  Worker w(cfg, c.meta.at("prefix").get<std::string>());
  c.restore_into(w.params);
  return w;
}

// ---------------------------------------------------------------------------

Vec sample_latent(const Vec& mu, const Vec& sigma, const Vec& eps) {
  if (mu.size() != sigma.size() || mu.size() != eps.size())
    throw std::invalid_argument("sample_latent: dimension mismatch");
  return mu + sigma.cwiseProduct(eps);
}

Vec augment_latent(const Vec& z, const Vec& g) {
  SubGoal::from_onehot(g);  // validates
  Vec out(z.size() + g.size());
  out << z, g;
  return out;
}

Var gaussian_kl(Tape& tape, const Gaussian& q, const Gaussian& p) {
  // 0.5 * sum(lv_p - lv + (exp(lv) + (mu - mu_p)^2) * exp(-lv_p) - 1)
  Var diff = tape.sub(q.mu, p.mu);
  Var num = tape.add(tape.exp(q.logvar), tape.square(diff));
  Var ratio = tape.mul(num, tape.exp(tape.scale(p.logvar, -1.0)));
  Var terms = tape.add(tape.sub(p.logvar, q.logvar), ratio);
  auto d = static_cast<double>(tape.value(q.mu).size());
  return tape.scale(tape.sub(tape.sum(terms), tape.scalar(d)), 0.5);
}

double gaussian_kl(const Vec& mu, const Vec& sigma, const Vec& mu_p, const Vec& sigma_p) {
  double kl = 0.0;
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    double d = mu(i) - mu_p(i);
    kl += std::log(sigma_p(i) / sigma(i)) + (sigma(i) * sigma(i) + d * d) / (2.0 * sigma_p(i) * sigma_p(i)) - 0.5;
  }
  return kl;
}

std::vector<GenerationExample> examples_from_pairs(const std::vector<LabeledPair>& pairs) {
  std::vector<GenerationExample> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({p.state.history, p.subgoal, p.target.tokens});
  return out;
}

PosteriorValues posterior_params(const Worker& worker, const std::vector<Utterance>& history) {
  Tape tape(false);
  Var hc = worker.encode_history(tape, history);
  auto q = worker.posterior(tape, hc);
  return {tape.value(q.mu), tape.value(q.sigma)};
}

double sequence_log_prob(const Worker& worker, const DialogueState& state, const std::optional<SubGoal>& g,
                         const TokenSeq& target) {
  Tape tape(false);
  Var hc = worker.encode_history(tape, state.history);
  auto q = worker.posterior(tape, hc);
  Var z = worker.latent(tape, q, Vec::Zero(worker.config().d_z));
  Var za = worker.augment(tape, z, g);
  auto ids = decoder_targets(target);
  return tape.scalar_value(worker.sequence_log_prob(tape, za, hc, ids));
}

Generation respond_greedy(const Worker& worker, const std::vector<Utterance>& history,
                          const std::optional<SubGoal>& g) {
  Tape tape(false);
  Var hc = worker.encode_history(tape, history);
  auto q = worker.posterior(tape, hc);
  Var z = worker.latent(tape, q, Vec::Zero(worker.config().d_z));
  Var za = worker.augment(tape, z, g);
  return worker.decode(tape, za, hc, DecodeMode::greedy, nullptr, worker.config().n);
}

Var example_loss(Tape& tape, const Worker& worker, const GenerationExample& ex, const Vec& eps, double kl_weight) {
  Var hc = worker.encode_history(tape, ex.history);
  auto q = worker.posterior(tape, hc);
  Var z = worker.latent(tape, q, eps);
  Var za = worker.augment(tape, z, ex.subgoal);
  auto ids = decoder_targets(ex.target);
  Var nll = tape.scale(worker.sequence_log_prob(tape, za, hc, ids), -1.0);
  if (kl_weight == 0.0) return nll;
  auto p = worker.prior(tape, hc);
  return tape.add(nll, tape.scale(gaussian_kl(tape, q, p), kl_weight));
}

double pretrain_loss(const Worker& worker, const std::vector<GenerationExample>& batch, double kl_weight, Rng& rng) {
  if (kl_weight < 0.0 || kl_weight > 1.0) throw ValidationError("kl_weight must be in [0, 1]");
  if (batch.empty()) throw ValidationError("pretrain_loss: empty batch");
  double total = 0.0;
  for (const auto& ex : batch) {
    Tape tape(false);
    Vec eps = standard_normal(worker.config().d_z, rng);
    total += tape.scalar_value(example_loss(tape, worker, ex, eps, kl_weight));
  }
  return total / static_cast<double>(batch.size());
}

Vec standard_normal(int dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec v(dim);
  for (int i = 0; i < dim; ++i) v(i) = normal(rng);
  return v;
}

}  // namespace gochat
