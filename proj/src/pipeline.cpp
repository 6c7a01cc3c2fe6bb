#include "gochat/pipeline.hpp"

#include "gochat/errors.hpp"

#include <algorithm>
#include <fstream>

namespace gochat {

namespace {

using Json = nlohmann::json;

// Reads known keys from one section; anything left over is an error.
class Section {
 public:
  Section(const Json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j.is_object()) throw ValidationError("config: section '" + name_ + "' must be an object");
  }
  template <class T>
  void get(const char* key, T& into) {
    seen_.push_back(key);
    if (!j_.contains(key)) return;
    try {
      into = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ValidationError("config: " + name_ + "." + key + " has the wrong type");
    }
  }
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end())
        throw ValidationError("config: unknown key " + name_ + "." + it.key());
  }

 private:
  const Json& j_;
  std::string name_;
  std::vector<std::string> seen_;
};

const Json& section(const Json& j, const char* key) {
  static const Json empty = Json::object();
  return j.contains(key) ? j.at(key) : empty;
}

}  // namespace

RunConfig RunConfig::from_json(const Json& j) {
  if (!j.is_object()) throw ValidationError("config: expected a JSON object");
  RunConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    static const char* known[] = {"seed", "corpus", "subgoals", "model", "train", "reward", "user", "judge"};
    if (std::find(std::begin(known), std::end(known), it.key()) == std::end(known))
      throw ValidationError("config: unknown key " + it.key());
  }
  if (j.contains("seed")) {
    const auto& s = j["seed"];
    if (!s.is_number_integer() || (!s.is_number_unsigned() && s.get<long long>() < 0)) throw ValidationError("config: seed must be a non-negative integer");
    c.seed = j["seed"].get<std::uint64_t>();
  }

  Section corpus(section(j, "corpus"), "corpus");
  corpus.get("n", c.corpus.n);
  corpus.get("min_count", c.corpus.min_count);
  corpus.get("max_vocab", c.corpus.max_vocab);
  corpus.get("max_turns", c.corpus.max_turns);
  corpus.get("strict", c.corpus.strict);
  corpus.finish();

  Section sg(section(j, "subgoals"), "subgoals");
  sg.get("K", c.subgoals.K);
  sg.get("alpha_doc", c.subgoals.alpha_doc);
  sg.get("beta_word", c.subgoals.beta_word);
  sg.get("iters", c.subgoals.iters);
  sg.finish();

  Section model(section(j, "model"), "model");
  model.get("d_emb", c.model.d_emb);
  model.get("d_word", c.model.d_word);
  model.get("d_dlg", c.model.d_dlg);
  model.get("d_enc", c.model.d_enc);
  model.get("d_ctx", c.model.d_ctx);
  model.get("d_z", c.model.d_z);
  model.get("d_dec", c.model.d_dec);
  model.finish();

  Section train(section(j, "train"), "train");
  train.get("alpha", c.train.alpha);
  train.get("beta", c.train.beta);
  train.get("gamma", c.train.gamma);
  train.get("lr", c.train.lr);
  train.get("epochs", c.train.epochs);
  train.get("m", c.train.m);
  train.get("episodes_per_update", c.train.episodes_per_update);
  train.get("grad_clip", c.train.grad_clip);
  train.get("target_sync_every", c.train.target_sync_every);
  train.get("batch_size", c.train.batch_size);
  train.get("kl_anneal_batches", c.train.kl_anneal_batches);
  train.get("baseline_decay", c.train.baseline_decay);
  train.get("episodes", c.train.episodes);
  train.get("parallel", c.train.parallel);
  train.finish();

  Section reward(section(j, "reward"), "reward");
  reward.get("k", c.reward.k);
  reward.get("lambda", c.reward.lambda);
  reward.finish();

  Section user(section(j, "user"), "user");
  user.get("epochs", c.user.epochs);
  user.get("lr", c.user.lr);
  user.get("batch_size", c.user.batch_size);
  user.finish();

  Section judge(section(j, "judge"), "judge");
  std::string mode = "learned";
  judge.get("mode", mode);
  if (mode == "learned")
    c.judge.mode = JudgeMode::learned;
  else if (mode == "synthetic")
    c.judge.mode = JudgeMode::synthetic;
  else
    throw ValidationError("config: judge.mode must be 'learned' or 'synthetic'");
  judge.get("task", c.judge.task);
  judge.get("lr", c.judge.lr);
  judge.get("max_epochs", c.judge.max_epochs);
  judge.get("patience", c.judge.patience);
  judge.finish();

  c.set_seed(c.seed);
  c.validate();
  return c;
}

void apply_override(Json& j, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ValidationError("override '" + assignment + "' is not key=value");
  std::string key = assignment.substr(0, eq);
  std::string raw = assignment.substr(eq + 1);
  Json value = Json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  Json* node = &j;
  std::size_t start = 0;
  for (;;) {
    auto dot = key.find('.', start);
    std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ValidationError("override '" + assignment + "' has an empty key");
    if (!node->is_object()) throw ValidationError("override '" + assignment + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = Json::object();
    start = dot + 1;
  }
}

RunConfig RunConfig::load(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError(path.string());
  Json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  for (const auto& o : overrides) apply_override(j, o);
  RunConfig c = from_json(j);
  if (!c.judge.task.empty() && std::filesystem::path(c.judge.task).is_relative())
    c.judge.task = (path.parent_path() / c.judge.task).string();
  return c;
}

nlohmann::ordered_json RunConfig::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["corpus"] = {{"n", corpus.n},
                 {"min_count", corpus.min_count},
                 {"max_vocab", corpus.max_vocab},
                 {"max_turns", corpus.max_turns},
                 {"strict", corpus.strict}};
  j["subgoals"] = {{"K", subgoals.K},
                   {"alpha_doc", subgoals.alpha_doc},
                   {"beta_word", subgoals.beta_word},
                   {"iters", subgoals.iters}};
  j["model"] = {{"d_emb", model.d_emb}, {"d_word", model.d_word}, {"d_dlg", model.d_dlg}, {"d_enc", model.d_enc},
                {"d_ctx", model.d_ctx}, {"d_z", model.d_z},       {"d_dec", model.d_dec}};
  j["train"] = {{"alpha", train.alpha},
                {"beta", train.beta},
                {"gamma", train.gamma},
                {"lr", train.lr},
                {"epochs", train.epochs},
                {"m", train.m},
                {"episodes_per_update", train.episodes_per_update},
                {"grad_clip", train.grad_clip},
                {"target_sync_every", train.target_sync_every},
                {"batch_size", train.batch_size},
                {"kl_anneal_batches", train.kl_anneal_batches},
                {"baseline_decay", train.baseline_decay},
                {"episodes", train.episodes},
                {"parallel", train.parallel}};
  j["reward"] = {{"k", reward.k}, {"lambda", reward.lambda}};
  j["user"] = {{"epochs", user.epochs}, {"lr", user.lr}, {"batch_size", user.batch_size}};
  j["judge"] = {{"mode", judge.mode == JudgeMode::learned ? "learned" : "synthetic"},
                {"task", judge.task},
                {"lr", judge.lr},
                {"max_epochs", judge.max_epochs},
                {"patience", judge.patience}};
  return j;
}

void RunConfig::validate() const {
  if (corpus.n < 2) throw ValidationError("config: corpus.n must be >= 2");
  if (corpus.min_count < 1) throw ValidationError("config: corpus.min_count must be >= 1");
  if (subgoals.K < 2) throw ValidationError("config: subgoals.K must be >= 2");
  if (subgoals.alpha_doc <= 0 || subgoals.beta_word <= 0) throw ValidationError("config: LDA priors must be > 0");
  if (subgoals.iters < 1) throw ValidationError("config: subgoals.iters must be >= 1");
  for (int d : {model.d_emb, model.d_word, model.d_dlg, model.d_enc, model.d_ctx, model.d_z, model.d_dec})
    if (d < 1) throw ValidationError("config: model dimensions must be >= 1");
  train.validate();
  if (corpus.max_turns > 0 && train.m > corpus.max_turns)
    throw ValidationError("config: train.m must not exceed corpus.max_turns");
  if (reward.k < 1) throw ValidationError("config: reward.k must be >= 1");
  if (reward.lambda < 0) throw ValidationError("config: reward.lambda must be >= 0");
  if (user.epochs < 0 || !(user.lr > 0) || user.batch_size < 1) throw ValidationError("config: bad user settings");
  if (judge.mode == JudgeMode::synthetic && judge.task.empty())
    throw ValidationError("config: judge.task is required in synthetic mode");
  if (!(judge.lr > 0) || judge.max_epochs < 1 || judge.patience < 1)
    throw ValidationError("config: bad judge settings");
}

void RunConfig::set_seed(std::uint64_t s) {
  seed = s;
  subgoals.seed = s;
  train.seed = s;
}

HanConfig RunConfig::han(int vocab_size) const { return {vocab_size, model.d_emb, model.d_word, model.d_dlg}; }

WorkerConfig RunConfig::worker(int vocab_size) const {
  return {vocab_size, subgoals.K, model.d_emb, model.d_enc, model.d_ctx, model.d_z, model.d_dec, corpus.n};
}

WorkerConfig RunConfig::user_model(int vocab_size) const {
  WorkerConfig w = worker(vocab_size);
  w.K = 0;
  return w;
}

JudgeConfig RunConfig::judge_config() const {
  JudgeConfig j;
  j.lr = judge.lr;
  j.max_epochs = judge.max_epochs;
  j.patience = judge.patience;
  j.seed = seed;
  return j;
}

SupervisedConfig RunConfig::user_fit() const {
  SupervisedConfig s = train.supervised();
  s.epochs = user.epochs;
  s.lr = user.lr;
  s.batch_size = user.batch_size;
  return s;
}

PreparedCorpus prepare_corpus(std::vector<Dialogue> dialogues, const RunConfig& cfg) {
  if (dialogues.empty()) throw ValidationError("prepare_corpus: no dialogues");
  PreparedCorpus p;
  p.vocab = build_vocab(dialogues, cfg.corpus.min_count, cfg.corpus.max_vocab);
  encode_corpus(p.vocab, cfg.corpus.n, dialogues);
  p.dialogues = std::move(dialogues);
  p.topics = fit_lda(response_pairs(p.dialogues), p.vocab.size(), cfg.subgoals);
  p.pairs = label_corpus(p.topics, p.dialogues);
  return p;
}

NeighborIndex build_index(const Worker& worker, const std::vector<LabeledPair>& pairs, const RunConfig& cfg) {
  return build_reference_index(pairs, make_state_key(worker), cfg.reward.k, cfg.reward.lambda);
}

}  // namespace gochat
