#pragma once

// Offline sub-goal discovery: LDA (collapsed Gibbs sampling) over the bag of
// words of each chatbot response, then hard argmax assignment per pair.

#include "gochat/autodiff.hpp"
#include "gochat/corpus.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace gochat {

struct SubGoal {
  int index = 0;
  int K = 0;

  static SubGoal from_index(int index, int K);
  /// Requires exactly one entry equal to 1 and the rest 0.
  static SubGoal from_onehot(const Vec& onehot);
  Vec onehot() const;

  friend bool operator==(const SubGoal&, const SubGoal&) = default;
};

struct LdaConfig {
  int K = 14;
  double alpha_doc = 0.1;
  double beta_word = 0.01;
  int iters = 200;
  std::uint64_t seed = 1;
};

struct TopicModel {
  int K = 0;
  double alpha_doc = 0.0;
  double beta_word = 0.0;
  std::uint64_t seed = 0;
  Mat topic_word;  // K x |V|, rows sum to 1

  int vocab_size() const { return static_cast<int>(topic_word.cols()); }

  void save(const std::filesystem::path& path) const;
  static TopicModel load(const std::filesystem::path& path);
};

struct LabeledPair {
  std::string dialogue_id;
  int turn = 0;  // t, 1-based
  DialogueState state;
  SubGoal subgoal;
  Utterance target;
};

/// Bag of in-vocabulary (non-reserved) word ids of an utterance.
std::vector<int> bag_of_words(const TokenSeq& tokens);

TopicModel fit_lda(const std::vector<std::vector<int>>& documents, int vocab_size, const LdaConfig& cfg);
/// Clusters the target (chatbot) utterance of each pair.
TopicModel fit_lda(const std::vector<std::pair<DialogueState, Utterance>>& pairs, int vocab_size,
                   const LdaConfig& cfg);

/// Document-topic posterior of a bag of words under fixed topics (deterministic
/// fold-in). Uniform for an empty document.
Vec topic_posterior(const TopicModel& model, const std::vector<int>& document);

/// Argmax, ties to the lowest index.
SubGoal subgoal_from_posterior(const Vec& posterior);

struct Assignment {
  SubGoal subgoal;
  Vec posterior;
  bool degenerate = false;  // no in-vocabulary tokens; index 0 by rule
};

Assignment assign_subgoal(const TopicModel& model, const Utterance& target);

/// All (state, target) pairs: one per chatbot turn of every dialogue.
std::vector<std::pair<DialogueState, Utterance>> response_pairs(const std::vector<Dialogue>& dialogues);

std::vector<LabeledPair> label_corpus(const TopicModel& model, const std::vector<Dialogue>& dialogues);

/// JSONL rows {"dialogue_id", "turn", "subgoal"}.
void write_labels(const std::filesystem::path& path, const std::vector<LabeledPair>& pairs);
/// Re-attaches labels from a labels file to encoded dialogues.
std::vector<LabeledPair> read_labels(const std::filesystem::path& path, const std::vector<Dialogue>& dialogues,
                                     int K);

}  // namespace gochat
