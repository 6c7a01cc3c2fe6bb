#include "gochat/simulator.hpp"

#include "gochat/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>

namespace gochat {

namespace {

IntentEffect parse_effect(const std::string& s) {
  if (s == "continue") return IntentEffect::continue_chat;
  if (s == "elicit") return IntentEffect::elicit;
  if (s == "close") return IntentEffect::close;
  throw ValidationError("synthetic task: unknown intent effect '" + s + "'");
}

const char* effect_name(IntentEffect e) {
  switch (e) {
    case IntentEffect::continue_chat:
      return "continue";
    case IntentEffect::elicit:
      return "elicit";
    case IntentEffect::close:
      return "close";
  }
  return "continue";
}

template <class T>
const T& pick(const std::vector<T>& items, Rng& rng) {
  std::uniform_int_distribution<std::size_t> d(0, items.size() - 1);
  return items[d(rng)];
}

std::string with_secret(std::string text, const std::string& secret) {
  const std::string key = "{secret}";
  for (auto pos = text.find(key); pos != std::string::npos; pos = text.find(key, pos + secret.size()))
    text.replace(pos, key.size(), secret);
  return text;
}

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ValidationError(where + ": unknown key '" + it.key() + "'");
  }
}

}  // namespace

SyntheticTask SyntheticTask::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("synthetic task: expected an object");
  check_keys(j, {"secret_token", "success_fraction", "seed", "max_turns", "max_prelude", "openers", "intents"},
             "synthetic task");
  SyntheticTask t;
  try {
    t.secret_token = j.at("secret_token").get<std::string>();
    t.success_fraction = j.value("success_fraction", 0.5);
    t.seed = j.value("seed", std::uint64_t{1});
    t.max_turns = j.value("max_turns", 20);
    t.max_prelude = j.value("max_prelude", 2);
    t.openers = j.at("openers").get<std::vector<std::string>>();
    for (const auto& ij : j.at("intents")) {
      check_keys(ij, {"name", "effect", "templates", "replies"}, "synthetic task intent");
      Intent in;
      in.name = ij.at("name").get<std::string>();
      in.effect = parse_effect(ij.at("effect").get<std::string>());
      in.templates = ij.at("templates").get<std::vector<std::string>>();
      in.replies = ij.value("replies", std::vector<std::string>{});
      t.intents.push_back(std::move(in));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("synthetic task: ") + e.what());
  }

  auto toks = tokenize(t.secret_token);
  if (toks.size() != 1 || toks[0] != t.secret_token)
    throw ValidationError("synthetic task: secret_token must be a single lowercase token");
  if (t.success_fraction < 0.0 || t.success_fraction > 1.0)
    throw ValidationError("synthetic task: success_fraction must lie in [0, 1]");
  if (t.max_prelude < 0 || t.max_prelude + 2 > t.max_turns)
    throw ValidationError("synthetic task: max_prelude + 2 must not exceed max_turns");
  if (t.openers.empty()) throw ValidationError("synthetic task: no openers");
  bool has[3] = {false, false, false};
  for (const auto& in : t.intents) {
    if (in.templates.empty()) throw ValidationError("synthetic task: intent '" + in.name + "' has no templates");
    if (in.effect != IntentEffect::close && in.replies.empty())
      throw ValidationError("synthetic task: intent '" + in.name + "' has no replies");
    if (in.effect == IntentEffect::elicit)
      for (const auto& r : in.replies)
        if (r.find("{secret}") == std::string::npos)
          throw ValidationError("synthetic task: elicit reply without {secret}: " + r);
    has[static_cast<int>(in.effect)] = true;
  }
  if (!has[1] || !has[2]) throw ValidationError("synthetic task: needs at least one elicit and one close intent");
  if (t.max_prelude > 0 && !has[0]) throw ValidationError("synthetic task: prelude needs a continue intent");
  return t;
}

SyntheticTask SyntheticTask::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError(path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

nlohmann::ordered_json SyntheticTask::to_json() const {
  nlohmann::ordered_json j;
  j["secret_token"] = secret_token;
  j["success_fraction"] = success_fraction;
  j["seed"] = seed;
  j["max_turns"] = max_turns;
  j["max_prelude"] = max_prelude;
  j["openers"] = openers;
  j["intents"] = nlohmann::ordered_json::array();
  for (const auto& in : intents) {
    nlohmann::ordered_json ij;
    ij["name"] = in.name;
    ij["effect"] = effect_name(in.effect);
    ij["templates"] = in.templates;
    ij["replies"] = in.replies;
    j["intents"].push_back(std::move(ij));
  }
  return j;
}

std::vector<Dialogue> generate_synthetic_corpus(const SyntheticTask& task, int count, std::uint64_t seed) {
  if (count < 1) throw ValidationError("synthetic corpus: count must be >= 1");
  Rng rng = make_rng(seed, "synth");
  std::vector<const Intent*> chat, elicit, close;
  for (const auto& in : task.intents) {
    if (in.effect == IntentEffect::continue_chat) chat.push_back(&in);
    if (in.effect == IntentEffect::elicit) elicit.push_back(&in);
    if (in.effect == IntentEffect::close) close.push_back(&in);
  }

  const auto n_success = static_cast<int>(std::floor(count * task.success_fraction));
  std::vector<char> success(static_cast<std::size_t>(count), 0);
  std::fill_n(success.begin(), n_success, 1);
  std::shuffle(success.begin(), success.end(), rng);

  std::vector<Dialogue> out;
  out.reserve(static_cast<std::size_t>(count));
  std::uniform_int_distribution<int> prelude(0, task.max_prelude);
  for (int i = 0; i < count; ++i) {
    Dialogue d;
    char id[32];
    std::snprintf(id, sizeof id, "synth-%05d", i);
    d.id = id;
    auto say = [&d](Speaker s, std::string text) { d.turns.push_back({s, std::move(text), {}}); };
    say(Speaker::human, pick(task.openers, rng));
    int L = prelude(rng);
    for (int j = 0; j < L; ++j) {
      const Intent& in = *pick(chat, rng);
      say(Speaker::chatbot, pick(in.templates, rng));
      say(Speaker::human, with_secret(pick(in.replies, rng), task.secret_token));
    }
    if (success[static_cast<std::size_t>(i)]) {
      const Intent& in = *pick(elicit, rng);
      say(Speaker::chatbot, pick(in.templates, rng));
      say(Speaker::human, with_secret(pick(in.replies, rng), task.secret_token));
      d.outcome = Outcome::success;
    } else {
      say(Speaker::chatbot, pick(pick(close, rng)->templates, rng));
      d.outcome = Outcome::failure;
    }
    out.push_back(std::move(d));
  }
  return out;
}

// ---------------------------------------------------------------------------

JudgeFn make_synthetic_judge(int secret_id) {
  return [secret_id](const std::vector<Utterance>& transcript) {
    for (const auto& u : transcript) {
      if (u.speaker != Speaker::human) continue;
      for (int id : u.tokens.real())
        if (id == secret_id) return Outcome::success;
    }
    return Outcome::failure;
  };
}

bool synthetic_success(const SyntheticTask& task, const Dialogue& dialogue) {
  for (const auto& u : dialogue.turns) {
    if (u.speaker != Speaker::human) continue;
    for (const auto& tok : tokenize(u.text))
      if (tok == task.secret_token) return true;
  }
  return false;
}

LearnedJudge::LearnedJudge(const HanConfig& han) {
  encoder_ = HanEncoder(params, "judge.encoder", han);
  head_ = nn::Linear::create(params, "judge.head", han.d_dlg, 1);
}

void LearnedJudge::init(std::uint64_t seed) {
  Rng rng = make_rng(seed, "init.judge");
  params.init_uniform(rng, -kInitScale, kInitScale);
}

Var LearnedJudge::logit(Tape& tape, const std::vector<Utterance>& history) const {
  return head_(tape, params, encoder_.encode_state(tape, params, history).vector);
}

double LearnedJudge::success_probability(const std::vector<Utterance>& history) const {
  Tape tape(false);
  return tape.scalar_value(tape.sigmoid(logit(tape, history)));
}

Outcome LearnedJudge::judge(const std::vector<Utterance>& history) const {
  return success_probability(history) >= 0.5 ? Outcome::success : Outcome::failure;
}

Container LearnedJudge::to_container() const {
  Container c;
  c.meta["kind"] = "judge";
  c.meta["han"] = han_meta(encoder_.config());
  c.add(params);
  return c;
}

LearnedJudge LearnedJudge::from_container(const Container& c) {
  if (c.meta.value("kind", "") != "judge") throw ValidationError("checkpoint is not a judge");
  LearnedJudge j(han_from_meta(c.meta.at("han")));
  c.restore_into(j.params);
  return j;
}

LearnedJudge train_judge(const std::vector<Dialogue>& dialogues, const HanConfig& han, const JudgeConfig& cfg,
                         JudgeTrainReport* report) {
  if (dialogues.size() < 2) throw ValidationError("train_judge: need at least two dialogues");
  LearnedJudge judge(han);
  judge.init(cfg.seed);

  std::vector<std::size_t> idx(dialogues.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng split_rng = make_rng(cfg.seed, "judge.split");
  std::shuffle(idx.begin(), idx.end(), split_rng);
  auto n_hold = static_cast<std::size_t>(std::floor(cfg.holdout_fraction * static_cast<double>(idx.size())));
  n_hold = std::clamp<std::size_t>(n_hold, 1, idx.size() - 1);
  std::vector<std::size_t> held(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_hold));
  std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(n_hold), idx.end());

  auto accuracy = [&](const LearnedJudge& j) {
    int hit = 0;
    for (auto i : held) hit += j.judge(dialogues[i].turns) == dialogues[i].outcome;
    return static_cast<double>(hit) / static_cast<double>(held.size());
  };

  Adam adam(judge.params, cfg.lr);
  Rng order_rng = make_rng(cfg.seed, "judge.order");
  constexpr std::size_t kBatch = 16;
  ParameterSet best = judge.params;
  double best_acc = accuracy(judge);
  int best_epoch = 0, since_best = 0, epoch = 0;
  for (epoch = 1; epoch <= cfg.max_epochs && since_best < cfg.patience; ++epoch) {
    std::shuffle(train.begin(), train.end(), order_rng);
    for (std::size_t s = 0; s < train.size(); s += kBatch) {
      std::size_t e = std::min(train.size(), s + kBatch);
      SetGradients g = zeros_like(judge.params);
      for (std::size_t b = s; b < e; ++b) {
        const Dialogue& d = dialogues[train[b]];
        Tape tape;
        Var p = tape.sigmoid(judge.logit(tape, d.turns));
        Var lp = d.outcome == Outcome::success ? tape.log_floor(p, kProbFloor)
                                               : tape.log_floor(tape.one_minus(p), kProbFloor);
        tape.backward(lp, -1.0);
        accumulate(g, tape.gradients().for_set(judge.params), 1.0 / static_cast<double>(e - s));
      }
      SetGradients* gs[] = {&g};
      clip_global_norm(gs, 5.0);
      adam.step(judge.params, g);
    }
    double acc = accuracy(judge);
    if (acc > best_acc) {
      best_acc = acc;
      best = judge.params;
      best_epoch = epoch;
      since_best = 0;
    } else {
      ++since_best;
    }
  }
  judge.params = best;
  if (report) *report = {epoch - 1, best_epoch, best_acc};
  return judge;
}

JudgeFn make_learned_judge(std::shared_ptr<const LearnedJudge> judge) {
  return [judge = std::move(judge)](const std::vector<Utterance>& transcript) { return judge->judge(transcript); };
}

// ---------------------------------------------------------------------------

UserModel::UserModel(Worker network) : worker_(std::move(network)) {
  if (worker_.config().K != 0) throw ValidationError("user model must not take a sub-goal");
}

Generation UserModel::respond(const std::vector<Utterance>& history) const {
  return respond_greedy(worker_, history, std::nullopt);
}

UserModel UserModel::from_container(const Container& c) { return UserModel(Worker::from_container(c)); }

std::vector<GenerationExample> user_model_examples(const std::vector<Dialogue>& dialogues, int n) {
  std::vector<GenerationExample> out;
  for (const auto& d : dialogues) {
    for (std::size_t i = 1; i < d.turns.size(); i += 2) {
      GenerationExample ex;
      ex.history.assign(d.turns.begin(), d.turns.begin() + static_cast<std::ptrdiff_t>(i) + 1);
      ex.target = i + 1 < d.turns.size() ? d.turns[i + 1].tokens : TokenSeq::from_ids({}, n);
      out.push_back(std::move(ex));
    }
  }
  return out;
}

UserModel train_user_model(const std::vector<Dialogue>& dialogues, WorkerConfig cfg, const SupervisedConfig& fit,
                           std::uint64_t init_seed) {
  cfg.K = 0;
  auto examples = user_model_examples(dialogues, cfg.n);
  if (examples.empty()) throw ValidationError("train_user_model: no human-response pairs in corpus");
  Worker w(cfg, "user");
  w.init(init_seed);
  fit_generator(w, examples, fit);
  return UserModel(std::move(w));
}

// ---------------------------------------------------------------------------

DialogueState Episode::state(int t) const {
  if (t < 1 || t > length()) throw std::out_of_range("episode state index out of range");
  DialogueState s;
  s.history.assign(transcript.begin(), transcript.begin() + (2 * t - 1));
  return s;
}

Dialogue Episode::to_dialogue(const std::string& id) const {
  Dialogue d;
  d.id = id;
  d.outcome = outcome;
  d.turns = transcript;
  return d;
}

std::string serialize_episodes(const std::vector<Episode>& episodes, const std::string& id_prefix) {
  std::string out;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const auto& ep = episodes[i];
    nlohmann::ordered_json j;
    j["id"] = id_prefix + std::to_string(i);
    j["outcome"] = ep.outcome == Outcome::success ? 1 : 0;
    j["turns"] = nlohmann::ordered_json::array();
    for (const auto& u : ep.transcript) j["turns"].push_back({{"speaker", speaker_name(u.speaker)}, {"text", u.text}});
    j["subgoals"] = nlohmann::ordered_json::array();
    for (const auto& tr : ep.transitions) j["subgoals"].push_back(tr.subgoal.index);
    out += j.dump();
    out += '\n';
  }
  return out;
}

namespace {

// Context recurrence of one network, advanced one utterance at a time.
struct ContextTrack {
  const Worker* net;
  Tape* tape;
  Var hc;
  ContextTrack(const Worker& w, Tape& t) : net(&w), tape(&t), hc(w.zero_context(t)) {}
  void push(const TokenSeq& s) { hc = net->step_context(*tape, hc, net->encode_turn(*tape, s)); }
};

}  // namespace

namespace {

void check_setup(const Agent& agent, const Environment& env) {
  if (!agent.worker || !env.user || !env.index || !env.judge || !env.state_key)
    throw std::invalid_argument("rollout: agent or environment incomplete");
  if (env.m < 1) throw ValidationError("rollout: m must be >= 1");
  if (env.index->rows() == 0) throw ValidationError("rollout: empty reference index");
  if (agent.manager && agent.manager->K() != agent.worker->config().K)
    throw ValidationError("rollout: manager and worker disagree on K");
}

}  // namespace

Episode rollout(const Agent& agent, const Environment& env, const Utterance& init, Rng& rng) {
  check_setup(agent, env);
  const Worker& worker = *agent.worker;
  const Worker& user = env.user->network();
  const int K = worker.config().K;
  const int k = std::min(env.k, env.index->rows());

  Episode ep;
  ep.init_utterance = init;
  ep.transcript.push_back(init);

  Tape tape(false);
  std::optional<HanEncoder::Stream> mstream;
  if (agent.manager) mstream.emplace(agent.manager->encoder(), agent.manager->params, tape);
  ContextTrack wctx(worker, tape), uctx(user, tape);
  auto push = [&](const Utterance& u) {
    if (mstream) mstream->push(u.tokens);
    wctx.push(u.tokens);
    uctx.push(u.tokens);
  };
  auto text_of = [&](const TokenSeq& t) { return env.vocab ? decode_tokens(*env.vocab, t) : std::string(); };
  push(init);

  for (int t = 1; t <= env.m; ++t) {
    Transition tr;
    tr.subgoal_probs = agent.manager ? tape.value(agent.manager->probs(tape, mstream->summary().vector))
                                     : Vec::Constant(K, 1.0 / K);
    tr.subgoal = sample_subgoal(tr.subgoal_probs, rng);
    tr.epsilon = standard_normal(worker.config().d_z, rng);
    auto q = worker.posterior(tape, wctx.hc);
    Var za = worker.augment(tape, worker.latent(tape, q, tr.epsilon), tr.subgoal);
    Generation gen = worker.decode(tape, za, wctx.hc, DecodeMode::sample, &rng, worker.config().n);
    tr.action = gen.action;
    tr.response = gen.tokens;
    auto wr = worker_reward(*env.index, env.state_key(DialogueState{ep.transcript}), tr.subgoal, gen.tokens, k);
    tr.worker_reward = wr.value;
    tr.degenerate = wr.degenerate;
    ep.transitions.push_back(std::move(tr));

    Utterance said{Speaker::chatbot, text_of(gen.tokens), gen.tokens};
    ep.transcript.push_back(said);
    push(said);
    if (t == env.m) break;

    auto qu = user.posterior(tape, uctx.hc);
    Var zu = user.augment(tape, user.latent(tape, qu, Vec::Zero(user.config().d_z)), std::nullopt);
    Generation reply = user.decode(tape, zu, uctx.hc, DecodeMode::greedy, nullptr, user.config().n);
    if (reply.tokens.empty()) break;
    Utterance heard{Speaker::human, text_of(reply.tokens), reply.tokens};
    ep.transcript.push_back(heard);
    push(heard);
    if (env.judge(ep.transcript) == Outcome::success) break;
  }

  ep.outcome = env.judge(ep.transcript);
  ep.transitions.back().env_reward = terminal_reward(ep.outcome);
  return ep;
}

std::vector<Episode> collect_rollouts(const Agent& agent, const Environment& env, const std::vector<Utterance>& inits,
                                      std::uint64_t seed, long first_index, int count, bool parallel) {
  if (inits.empty()) throw ValidationError("collect_rollouts: no initial utterances");
  check_setup(agent, env);
  std::vector<Episode> out(static_cast<std::size_t>(std::max(count, 0)));
  auto one = [&](int i) {
    Rng rng = make_rng(seed, "rollout", static_cast<std::uint64_t>(first_index + i));
    const Utterance& init = pick(inits, rng);
    out[static_cast<std::size_t>(i)] = rollout(agent, env, init, rng);
  };
  if (parallel) {
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < count; ++i) one(i);
  } else {
    for (int i = 0; i < count; ++i) one(i);
  }
  return out;
}

std::vector<Utterance> opening_utterances(const std::vector<Dialogue>& dialogues) {
  std::vector<Utterance> out;
  for (const auto& d : dialogues)
    if (!d.turns.empty()) out.push_back(d.turns.front());
  return out;
}

}  // namespace gochat
