#pragma once

// Self-play environment: a frozen user model, an outcome judge, episode
// rollouts capped at m turns, and the bundled synthetic secret-elicitation
// task whose success rule is known exactly.

#include "gochat/corpus.hpp"
#include "gochat/encoder_han.hpp"
#include "gochat/manager_critic.hpp"
#include "gochat/optim.hpp"
#include "gochat/rewards.hpp"
#include "gochat/worker_vhred.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace gochat {

// ---------------------------------------------------------------------------
// Synthetic task

enum class IntentEffect { continue_chat, elicit, close };

struct Intent {
  std::string name;
  IntentEffect effect = IntentEffect::continue_chat;
  std::vector<std::string> templates;  // chatbot side
  std::vector<std::string> replies;    // human side; "{secret}" is substituted
};

struct SyntheticTask {
  std::string secret_token;
  double success_fraction = 0.5;
  std::uint64_t seed = 1;
  int max_turns = 20;
  int max_prelude = 2;  // chit-chat exchanges before the decisive chatbot turn
  std::vector<std::string> openers;
  std::vector<Intent> intents;

  static SyntheticTask from_json(const nlohmann::json& j);
  static SyntheticTask load(const std::filesystem::path& path);
  nlohmann::ordered_json to_json() const;
};

/// floor(count * success_fraction) dialogues follow the elicit trajectory and
/// end with the user stating the secret; the rest end with a closing turn.
std::vector<Dialogue> generate_synthetic_corpus(const SyntheticTask& task, int count, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Judges

using JudgeFn = std::function<Outcome(const std::vector<Utterance>& transcript)>;

/// Success iff some human utterance contains the secret token id.
JudgeFn make_synthetic_judge(int secret_id);
/// Same rule over raw text (used on unencoded dialogues).
bool synthetic_success(const SyntheticTask& task, const Dialogue& dialogue);

struct JudgeConfig {
  double lr = 1e-3;
  int max_epochs = 30;
  int patience = 10;
  double holdout_fraction = 0.2;
  std::uint64_t seed = 1;
};

/// HAN encoder with an affine logit head; success iff sigmoid(logit) >= 0.5.
class LearnedJudge {
 public:
  LearnedJudge() = default;
  explicit LearnedJudge(const HanConfig& han);

  void init(std::uint64_t seed);
  Var logit(Tape& tape, const std::vector<Utterance>& history) const;
  double success_probability(const std::vector<Utterance>& history) const;
  Outcome judge(const std::vector<Utterance>& history) const;

  Container to_container() const;
  static LearnedJudge from_container(const Container& c);

  ParameterSet params;

 private:
  HanEncoder encoder_;
  nn::Linear head_;
};

struct JudgeTrainReport {
  int epochs_run = 0;
  int best_epoch = 0;
  double heldout_accuracy = 0.0;
};

/// Binary cross-entropy on dialogue outcomes with an 80/20 split; keeps the
/// parameters of the epoch with the best held-out accuracy.
LearnedJudge train_judge(const std::vector<Dialogue>& dialogues, const HanConfig& han, const JudgeConfig& cfg,
                         JudgeTrainReport* report = nullptr);

JudgeFn make_learned_judge(std::shared_ptr<const LearnedJudge> judge);

// ---------------------------------------------------------------------------
// User model

/// Worker network without sub-goal input; no mutable access once built.
class UserModel {
 public:
  UserModel() = default;
  explicit UserModel(Worker network);

  const Worker& network() const { return worker_; }
  /// Greedy eps = 0 reply; an empty reply ends the episode.
  Generation respond(const std::vector<Utterance>& history) const;

  Container to_container() const { return worker_.to_container(); }
  static UserModel from_container(const Container& c);

 private:
  Worker worker_;
};

/// (history ending with a chatbot turn -> next human utterance) pairs. A
/// dialogue that ends on a chatbot turn contributes an empty target.
std::vector<GenerationExample> user_model_examples(const std::vector<Dialogue>& dialogues, int n);

UserModel train_user_model(const std::vector<Dialogue>& dialogues, WorkerConfig cfg, const SupervisedConfig& fit,
                           std::uint64_t init_seed);

// ---------------------------------------------------------------------------
// Rollouts

struct Transition {
  SubGoal subgoal;
  Vec subgoal_probs;
  Vec epsilon;
  std::vector<int> action;  // sampled ids including a stop token when one was emitted
  TokenSeq response;
  double env_reward = 0.0;
  double worker_reward = 0.0;
  bool degenerate = false;
};

struct Episode {
  Utterance init_utterance;
  std::vector<Utterance> transcript;  // u_h1, u_c1, u_h2, ...
  std::vector<Transition> transitions;
  Outcome outcome = Outcome::failure;

  int length() const { return static_cast<int>(transitions.size()); }
  /// s_t: the first 2t - 1 utterances, 1 <= t <= T.
  DialogueState state(int t) const;
  Dialogue to_dialogue(const std::string& id) const;
};

/// Corpus JSONL rows with an extra "subgoals" array.
std::string serialize_episodes(const std::vector<Episode>& episodes, const std::string& id_prefix);

struct Agent {
  const Manager* manager = nullptr;  // null: uniform random sub-goals
  const Worker* worker = nullptr;
};

struct Environment {
  const UserModel* user = nullptr;
  JudgeFn judge;
  const NeighborIndex* index = nullptr;
  StateKeyFn state_key;
  int k = 5;
  int m = 20;
  const Vocab* vocab = nullptr;  // optional, fills transcript text
};

/// One self-play episode from the opening human utterance `init`.
Episode rollout(const Agent& agent, const Environment& env, const Utterance& init, Rng& rng);

/// Episode i uses rng stream ("rollout", first_index + i) and draws its opening
/// utterance uniformly from `inits`. Serial and parallel paths give identical
/// episodes.
std::vector<Episode> collect_rollouts(const Agent& agent, const Environment& env, const std::vector<Utterance>& inits,
                                      std::uint64_t seed, long first_index, int count, bool parallel = true);

/// Opening human utterances of the training dialogues.
std::vector<Utterance> opening_utterances(const std::vector<Dialogue>& dialogues);

}  // namespace gochat
