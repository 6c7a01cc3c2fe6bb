#pragma once

// Sentence BLEU (add-one smoothing on every n-gram order, closest-reference
// brevity penalty), corpus-level distinct-n, and the generation report.

#include "gochat/corpus.hpp"
#include "gochat/subgoals.hpp"

#include <json.hpp>

#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gochat {

namespace detail {

template <class T>
std::map<std::vector<T>, int> ngram_counts(std::span<const T> seq, int n) {
  std::map<std::vector<T>, int> counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= seq.size(); ++i)
    ++counts[std::vector<T>(seq.begin() + static_cast<std::ptrdiff_t>(i),
                            seq.begin() + static_cast<std::ptrdiff_t>(i) + n)];
  return counts;
}

}  // namespace detail

template <class T>
double bleu(std::span<const T> candidate, const std::vector<std::vector<T>>& references, int max_n = 4) {
  if (candidate.empty()) throw std::invalid_argument("bleu: empty candidate");
  if (references.empty()) throw std::invalid_argument("bleu: no references");
  const int c = static_cast<int>(candidate.size());
  const int orders = std::min(max_n, c);

  double log_sum = 0.0;
  for (int n = 1; n <= orders; ++n) {
    auto cand = detail::ngram_counts(candidate, n);
    std::map<std::vector<T>, int> max_ref;
    for (const auto& ref : references)
      for (auto& [g, k] : detail::ngram_counts(std::span<const T>(ref), n)) max_ref[g] = std::max(max_ref[g], k);
    int matched = 0;
    for (auto& [g, k] : cand) {
      auto it = max_ref.find(g);
      if (it != max_ref.end()) matched += std::min(k, it->second);
    }
    int total = c - n + 1;
    log_sum += std::log((matched + 1.0) / (total + 1.0));
  }

  int r = static_cast<int>(references.front().size());
  for (const auto& ref : references) {
    int len = static_cast<int>(ref.size());
    if (std::abs(len - c) < std::abs(r - c) || (std::abs(len - c) == std::abs(r - c) && len < r)) r = len;
  }
  double bp = std::exp(std::min(0.0, 1.0 - static_cast<double>(r) / c));
  return bp * std::exp(log_sum / orders);
}

template <class T>
double bleu(const std::vector<T>& candidate, const std::vector<std::vector<T>>& references, int max_n = 4) {
  return bleu(std::span<const T>(candidate), references, max_n);
}

/// Unique n-grams over total n-grams across all utterances.
template <class T>
double distinct_n(const std::vector<std::vector<T>>& utterances, int n) {
  if (n < 1) throw std::invalid_argument("distinct_n: n must be >= 1");
  std::map<std::vector<T>, int> all;
  long total = 0;
  for (const auto& u : utterances) {
    for (auto& [g, k] : detail::ngram_counts(std::span<const T>(u), n)) {
      all[g] += k;
      total += k;
    }
  }
  if (total == 0) throw std::invalid_argument("distinct_n: no n-grams");
  return static_cast<double>(all.size()) / static_cast<double>(total);
}

struct EvalReport {
  double bleu = 0.0;
  double distinct1 = 0.0;
  double distinct2 = 0.0;
  int n_samples = 0;

  nlohmann::ordered_json to_json() const;
  /// Aligned table with BLEU, D-1, D-2 columns; scale100 multiplies BLEU by 100.
  std::string to_table(bool scale100 = false) const;
};

/// Produces the chatbot response (and chosen sub-goal) for a state.
using ResponseGenerator = std::function<std::pair<SubGoal, TokenSeq>(const DialogueState&)>;

/// Conditions on the true preceding context of every chatbot turn; reports the
/// mean sentence BLEU against the true response and distinct-1/2 over all
/// generations. Empty generations score BLEU 0.
EvalReport evaluate(const ResponseGenerator& generate, const std::vector<Dialogue>& test_dialogues);

class Manager;
class Worker;
/// Greedy sub-goal from the manager, greedy eps = 0 decoding from the worker.
EvalReport evaluate(const Manager& manager, const Worker& worker, const std::vector<Dialogue>& test_dialogues);

}  // namespace gochat
