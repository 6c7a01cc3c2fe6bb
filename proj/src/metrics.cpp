#include "gochat/metrics.hpp"

#include "gochat/errors.hpp"
#include "gochat/manager_critic.hpp"
#include "gochat/worker_vhred.hpp"

#include <cstdio>

namespace gochat {

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["bleu"] = bleu;
  j["distinct1"] = distinct1;
  j["distinct2"] = distinct2;
  j["n_samples"] = n_samples;
  return j;
}

std::string EvalReport::to_table(bool scale100) const {
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof buf, "%-8s %8s %8s %8s\n", "Method", "BLEU", "D-1", "D-2");
  out += buf;
  std::snprintf(buf, sizeof buf, "%-8s %8.4f %8.4f %8.4f\n", "GoChat", scale100 ? bleu * 100.0 : bleu, distinct1,
                distinct2);
  out += buf;
  std::snprintf(buf, sizeof buf, "(%d samples)\n", n_samples);
  out += buf;
  return out;
}

EvalReport evaluate(const ResponseGenerator& generate, const std::vector<Dialogue>& test_dialogues) {
  std::vector<std::vector<int>> generations;
  double bleu_sum = 0.0;
  int samples = 0;
  for (const auto& d : test_dialogues) {
    for (std::size_t i = 1; i < d.turns.size(); i += 2) {
      auto state = state_at(d, static_cast<int>(i + 1) / 2);
      auto [g, tokens] = generate(state);
      std::vector<int> cand(tokens.real().begin(), tokens.real().end());
      std::vector<int> ref(d.turns[i].tokens.real().begin(), d.turns[i].tokens.real().end());
      if (!cand.empty()) bleu_sum += bleu(cand, std::vector<std::vector<int>>{ref});
      generations.push_back(std::move(cand));
      ++samples;
    }
  }
  if (samples == 0) throw ValidationError("evaluate: test set has no chatbot turns");

  EvalReport r;
  r.n_samples = samples;
  r.bleu = bleu_sum / samples;
  auto safe_distinct = [&](int n) {
    try {
      return distinct_n(generations, n);
    } catch (const std::invalid_argument&) {
      return 0.0;
    }
  };
  r.distinct1 = safe_distinct(1);
  r.distinct2 = safe_distinct(2);
  return r;
}

EvalReport evaluate(const Manager& manager, const Worker& worker, const std::vector<Dialogue>& test_dialogues) {
  if (test_dialogues.empty()) throw ValidationError("evaluate: empty test set");
  return evaluate(
      [&](const DialogueState& s) {
        SubGoal g = greedy_subgoal(manager.probs(s));
        return std::make_pair(g, respond_greedy(worker, s.history, g).tokens);
      },
      test_dialogues);
}

}  // namespace gochat
