#pragma once

// Environment reward (+1 / -1 at the end, 0 otherwise) and the worker's
// kNN-BLEU reward against offline references retrieved by (state, sub-goal).

#include "gochat/corpus.hpp"
#include "gochat/subgoals.hpp"
#include "gochat/worker_vhred.hpp"

#include <filesystem>
#include <functional>
#include <span>
#include <vector>

namespace gochat {

double terminal_reward(Outcome outcome);
inline constexpr double kIntermediateReward = 0.0;

using StateKeyFn = std::function<Vec(const DialogueState&)>;

/// Unit-normalized mean of `embedding` rows over the last human utterance's
/// real tokens (UNK row when it has none).
Vec mean_embedding_key(const Mat& embedding, const DialogueState& state);

/// Key function over a frozen copy of the worker's embedding table.
StateKeyFn make_state_key(const Worker& worker);

namespace kernels {

double norm(std::span<const double> v);

/// out[i] = 1 - cos(row_i, query); 1 when either vector has zero norm.
void cosine_distances_serial(std::span<const double> keys, std::span<const double> norms, int dim,
                             std::span<const double> query, std::span<double> out);
void cosine_distances_parallel(std::span<const double> keys, std::span<const double> norms, int dim,
                               std::span<const double> query, std::span<double> out);

}  // namespace kernels

class NeighborIndex {
 public:
  NeighborIndex() = default;
  NeighborIndex(int state_dim, int K, int k, double lambda);

  void add(const Vec& state_key, const SubGoal& g, TokenSeq reference);

  int rows() const { return static_cast<int>(payload_.size()); }
  int dim() const { return dim_; }
  int K() const { return K_; }
  int k() const { return k_; }
  double lambda() const { return lambda_; }
  std::span<const double> keys() const { return keys_; }
  std::span<const double> norms() const { return norms_; }
  const TokenSeq& payload(int row) const { return payload_[static_cast<std::size_t>(row)]; }

  /// [state_key ; lambda * onehot(g)]
  Vec query_key(const Vec& state_key, const SubGoal& g) const;

  /// Row indices of the k smallest cosine distances, ties to the earlier row.
  std::vector<int> nearest_rows(const Vec& query, int k, bool parallel = true) const;

  /// Container file holds keys and meta; the JSONL file holds the payload ids.
  void save(const std::filesystem::path& container, const std::filesystem::path& payload) const;
  static NeighborIndex load(const std::filesystem::path& container, const std::filesystem::path& payload);

  friend bool operator==(const NeighborIndex&, const NeighborIndex&) = default;

 private:
  int dim_ = 0;
  int state_dim_ = 0;
  int K_ = 0;
  int k_ = 5;
  double lambda_ = 1.0;
  std::vector<double> keys_;  // row-major rows x dim
  std::vector<double> norms_;
  std::vector<TokenSeq> payload_;
};

NeighborIndex build_reference_index(const std::vector<LabeledPair>& pairs, const StateKeyFn& state_key, int k = 5,
                                    double lambda = 1.0);

std::vector<TokenSeq> nearest_references(const NeighborIndex& index, const Vec& state_key, const SubGoal& g, int k);

struct WorkerReward {
  double value = 0.0;
  bool degenerate = false;  // empty generation
};

/// Mean sentence BLEU of `generated` against each of the k retrieved references.
WorkerReward worker_reward(const NeighborIndex& index, const Vec& state_key, const SubGoal& g,
                           const TokenSeq& generated, int k);

}  // namespace gochat
