#include "gochat/subgoals.hpp"

#include "gochat/checkpoint.hpp"
#include "gochat/errors.hpp"
#include "gochat/rng.hpp"

#include <json.hpp>

#include <fstream>
#include <map>
#include <random>
#include <sstream>

namespace gochat {

SubGoal SubGoal::from_index(int index, int K) {
  if (K < 1 || index < 0 || index >= K) throw std::out_of_range("sub-goal index out of range");
  return SubGoal{index, K};
}

SubGoal SubGoal::from_onehot(const Vec& onehot) {
  int hot = -1;
  for (Eigen::Index i = 0; i < onehot.size(); ++i) {
    if (onehot(i) == 1.0) {
      if (hot >= 0) throw ValidationError("sub-goal vector has more than one hot entry");
      hot = static_cast<int>(i);
    } else if (onehot(i) != 0.0) {
      throw ValidationError("sub-goal vector is not one-hot");
    }
  }
  if (hot < 0) throw ValidationError("sub-goal vector has no hot entry");
  return SubGoal{hot, static_cast<int>(onehot.size())};
}

Vec SubGoal::onehot() const {
  Vec v = Vec::Zero(K);
  v(index) = 1.0;
  return v;
}

std::vector<int> bag_of_words(const TokenSeq& tokens) {
  std::vector<int> doc;
  for (int id : tokens.real())
    if (id >= kReservedCount) doc.push_back(id);
  return doc;
}

TopicModel fit_lda(const std::vector<std::vector<int>>& documents, int vocab_size, const LdaConfig& cfg) {
  if (documents.empty()) throw ValidationError("fit_lda: no documents");
  if (cfg.K < 2) throw ValidationError("fit_lda: K must be >= 2");
  if (cfg.iters < 1) throw ValidationError("fit_lda: iters must be >= 1");
  if (cfg.alpha_doc <= 0 || cfg.beta_word <= 0) throw ValidationError("fit_lda: priors must be positive");
  std::size_t total_tokens = 0;
  for (const auto& d : documents) {
    total_tokens += d.size();
    for (int w : d)
      if (w < 0 || w >= vocab_size) throw ValidationError("fit_lda: word id out of range");
  }
  if (total_tokens == 0) throw ValidationError("fit_lda: all documents are empty");

  const int K = cfg.K;
  const int V = vocab_size;
  const double vbeta = V * cfg.beta_word;
  Rng rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<std::vector<int>> z(documents.size());
  std::vector<int> doc_topic(documents.size() * static_cast<std::size_t>(K), 0);
  std::vector<int> word_topic(static_cast<std::size_t>(V) * K, 0);
  std::vector<int> topic_total(static_cast<std::size_t>(K), 0);

  for (std::size_t d = 0; d < documents.size(); ++d) {
    z[d].resize(documents[d].size());
    for (std::size_t i = 0; i < documents[d].size(); ++i) {
      int k = static_cast<int>(unit(rng) * K);
      if (k >= K) k = K - 1;
      z[d][i] = k;
      ++doc_topic[d * K + k];
      ++word_topic[static_cast<std::size_t>(documents[d][i]) * K + k];
      ++topic_total[k];
    }
  }

  std::vector<double> cdf(static_cast<std::size_t>(K));
  for (int it = 0; it < cfg.iters; ++it) {
    for (std::size_t d = 0; d < documents.size(); ++d) {
      int* nd = &doc_topic[d * K];
      for (std::size_t i = 0; i < documents[d].size(); ++i) {
        int w = documents[d][i];
        int* nw = &word_topic[static_cast<std::size_t>(w) * K];
        int old = z[d][i];
        --nd[old];
        --nw[old];
        --topic_total[old];

        double acc = 0.0;
        for (int k = 0; k < K; ++k) {
          acc += (nd[k] + cfg.alpha_doc) * (nw[k] + cfg.beta_word) / (topic_total[k] + vbeta);
          cdf[k] = acc;
        }
        double u = unit(rng) * acc;
        int k = 0;
        while (k < K - 1 && cdf[k] < u) ++k;

        z[d][i] = k;
        ++nd[k];
        ++nw[k];
        ++topic_total[k];
      }
    }
  }

  TopicModel model;
  model.K = K;
  model.alpha_doc = cfg.alpha_doc;
  model.beta_word = cfg.beta_word;
  model.seed = cfg.seed;
  model.topic_word.resize(K, V);
  for (int k = 0; k < K; ++k) {
    for (int w = 0; w < V; ++w)
      model.topic_word(k, w) = (word_topic[static_cast<std::size_t>(w) * K + k] + cfg.beta_word) /
                               (topic_total[k] + vbeta);
    model.topic_word.row(k) /= model.topic_word.row(k).sum();
  }
  return model;
}

TopicModel fit_lda(const std::vector<std::pair<DialogueState, Utterance>>& pairs, int vocab_size,
                   const LdaConfig& cfg) {
  if (pairs.empty()) throw ValidationError("fit_lda: no pairs");
  std::vector<std::vector<int>> docs;
  docs.reserve(pairs.size());
  for (const auto& [state, target] : pairs) docs.push_back(bag_of_words(target.tokens));
  return fit_lda(docs, vocab_size, cfg);
}

Vec topic_posterior(const TopicModel& model, const std::vector<int>& document) {
  const int K = model.K;
  Vec theta = Vec::Constant(K, 1.0 / K);
  if (document.empty()) return theta;
  constexpr int kFoldInIters = 50;
  for (int it = 0; it < kFoldInIters; ++it) {
    Vec counts = Vec::Zero(K);
    for (int w : document) {
      Vec r = theta.cwiseProduct(model.topic_word.col(w));
      counts += r / r.sum();
    }
    theta = (counts.array() + model.alpha_doc).matrix();
    theta /= theta.sum();
  }
  return theta;
}

SubGoal subgoal_from_posterior(const Vec& posterior) {
  int best = 0;
  for (Eigen::Index k = 1; k < posterior.size(); ++k)
    if (posterior(k) > posterior(best)) best = static_cast<int>(k);
  return SubGoal::from_index(best, static_cast<int>(posterior.size()));
}

Assignment assign_subgoal(const TopicModel& model, const Utterance& target) {
  std::vector<int> doc;
  for (int w : bag_of_words(target.tokens))
    if (w < model.vocab_size()) doc.push_back(w);
  Assignment a;
  a.posterior = topic_posterior(model, doc);
  a.degenerate = doc.empty();
  a.subgoal = a.degenerate ? SubGoal::from_index(0, model.K) : subgoal_from_posterior(a.posterior);
  return a;
}

std::vector<std::pair<DialogueState, Utterance>> response_pairs(const std::vector<Dialogue>& dialogues) {
  std::vector<std::pair<DialogueState, Utterance>> out;
  for (const auto& d : dialogues)
    for (std::size_t i = 1; i < d.turns.size(); i += 2)
      out.emplace_back(state_at(d, static_cast<int>(i + 1) / 2), d.turns[i]);
  return out;
}

std::vector<LabeledPair> label_corpus(const TopicModel& model, const std::vector<Dialogue>& dialogues) {
  std::vector<LabeledPair> out;
  for (const auto& d : dialogues) {
    for (std::size_t i = 1; i < d.turns.size(); i += 2) {
      int t = static_cast<int>(i + 1) / 2;
      LabeledPair p;
      p.dialogue_id = d.id;
      p.turn = t;
      p.state = state_at(d, t);
      p.target = d.turns[i];
      p.subgoal = assign_subgoal(model, p.target).subgoal;
      out.push_back(std::move(p));
    }
  }
  return out;
}

void TopicModel::save(const std::filesystem::path& path) const {
  Container c;
  c.meta["kind"] = "topic_model";
  c.meta["K"] = K;
  c.meta["alpha_doc"] = alpha_doc;
  c.meta["beta_word"] = beta_word;
  c.meta["seed"] = seed;
  c.meta["vocab_size"] = vocab_size();
  c.add("topics.topic_word", topic_word);
  c.save(path);
}

TopicModel TopicModel::load(const std::filesystem::path& path) {
  Container c = Container::load(path);
  if (c.meta.value("kind", "") != "topic_model") throw ValidationError(path.string() + ": not a topic model");
  TopicModel m;
  m.K = c.meta.at("K").get<int>();
  m.alpha_doc = c.meta.at("alpha_doc").get<double>();
  m.beta_word = c.meta.at("beta_word").get<double>();
  m.seed = c.meta.at("seed").get<std::uint64_t>();
  const Mat* tw = c.find("topics.topic_word");
  if (!tw || tw->rows() != m.K) throw ValidationError(path.string() + ": bad topic-word matrix");
  m.topic_word = *tw;
  return m;
}

void write_labels(const std::filesystem::path& path, const std::vector<LabeledPair>& pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& p : pairs) {
    nlohmann::ordered_json j;
    j["dialogue_id"] = p.dialogue_id;
    j["turn"] = p.turn;
    j["subgoal"] = p.subgoal.index;
    out << j.dump() << '\n';
  }
}

std::vector<LabeledPair> read_labels(const std::filesystem::path& path, const std::vector<Dialogue>& dialogues,
                                     int K) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError(path.string());
  std::map<std::string, const Dialogue*> by_id;
  for (const auto& d : dialogues) by_id[d.id] = &d;

  std::vector<LabeledPair> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto where = path.string() + ":" + std::to_string(lineno) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(where + e.what());
    }
    auto it = by_id.find(j.at("dialogue_id").get<std::string>());
    if (it == by_id.end()) throw ValidationError(where + "unknown dialogue id");
    const Dialogue& d = *it->second;
    int t = j.at("turn").get<int>();
    auto idx = static_cast<std::size_t>(2 * t - 1);
    if (t < 1 || idx >= d.turns.size()) throw ValidationError(where + "turn has no chatbot response");
    LabeledPair p;
    p.dialogue_id = d.id;
    p.turn = t;
    p.state = state_at(d, t);
    p.target = d.turns[idx];
    p.subgoal = SubGoal::from_index(j.at("subgoal").get<int>(), K);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace gochat
