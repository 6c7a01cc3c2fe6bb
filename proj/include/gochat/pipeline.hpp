#pragma once

// Run configuration (one JSON file, every section optional, unknown keys
// rejected) and the stage helpers shared by the command-line tool and tests.

#include "gochat/corpus.hpp"
#include "gochat/encoder_han.hpp"
#include "gochat/rewards.hpp"
#include "gochat/simulator.hpp"
#include "gochat/subgoals.hpp"
#include "gochat/trainer.hpp"
#include "gochat/worker_vhred.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace gochat {

struct CorpusSettings {
  int n = kDefaultSeqLen;
  int min_count = 1;
  int max_vocab = 0;  // <= 0: unlimited
  int max_turns = 20;
  bool strict = true;
};

struct ModelSettings {
  int d_emb = 500;
  int d_word = 500;
  int d_dlg = 50;
  int d_enc = 500;
  int d_ctx = 500;
  int d_z = 100;
  int d_dec = 500;
};

struct RewardSettings {
  int k = 5;
  double lambda = 1.0;
};

struct UserSettings {
  int epochs = 10;
  double lr = 1e-3;
  int batch_size = 16;
};

enum class JudgeMode { synthetic, learned };

struct JudgeSettings {
  JudgeMode mode = JudgeMode::learned;
  std::string task;  // synthetic task file, required in synthetic mode
  double lr = 1e-3;
  int max_epochs = 30;
  int patience = 10;
};

struct RunConfig {
  std::uint64_t seed = 1;
  CorpusSettings corpus;
  LdaConfig subgoals;
  ModelSettings model;
  TrainConfig train;
  RewardSettings reward;
  UserSettings user;
  JudgeSettings judge;

  /// Parses and validates; throws ValidationError naming the offending key.
  static RunConfig from_json(const nlohmann::json& j);
  /// `overrides` are "section.key=value" assignments applied before parsing;
  /// a relative judge.task is resolved against the config's directory.
  static RunConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
  nlohmann::ordered_json to_json() const;
  void validate() const;
  /// Propagates `seed` into every seeded section.
  void set_seed(std::uint64_t s);

  HanConfig han(int vocab_size) const;
  WorkerConfig worker(int vocab_size) const;
  WorkerConfig user_model(int vocab_size) const;
  JudgeConfig judge_config() const;
  SupervisedConfig user_fit() const;
};

/// Applies one "a.b=value" assignment; value is parsed as JSON, falling back to
/// a plain string.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Vocabulary, encoded dialogues, topic model and labeled pairs.
struct PreparedCorpus {
  Vocab vocab;
  std::vector<Dialogue> dialogues;
  TopicModel topics;
  std::vector<LabeledPair> pairs;
};

/// Builds the vocabulary, encodes, fits LDA on chatbot responses and labels
/// every pair.
PreparedCorpus prepare_corpus(std::vector<Dialogue> dialogues, const RunConfig& cfg);

NeighborIndex build_index(const Worker& worker, const std::vector<LabeledPair>& pairs, const RunConfig& cfg);

}  // namespace gochat
