#include "gochat/manager_critic.hpp"
#include "gochat/metrics.hpp"
#include "gochat/worker_vhred.hpp"

#include "../support.hpp"

#include <doctest.h>

#include <cmath>
#include <unordered_map>

using namespace gochat;
using Words = std::vector<std::string>;

namespace {

// Independent smoothed sentence BLEU: n-grams as joined strings, counted with
// hash maps, closest reference length with ties to the shorter one.
double oracle_bleu(const Words& cand, const std::vector<Words>& refs, int max_n = 4) {
  auto grams = [](const Words& w, int n) {
    std::unordered_map<std::string, int> out;
    for (int i = 0; i + n <= static_cast<int>(w.size()); ++i) {
      std::string key;
      for (int j = 0; j < n; ++j) key += w[static_cast<std::size_t>(i + j)] + '\x1f';
      ++out[key];
    }
    return out;
  };
  const int c = static_cast<int>(cand.size());
  const int N = std::min(max_n, c);
  double logp = 0.0;
  for (int n = 1; n <= N; ++n) {
    auto cg = grams(cand, n);
    int clipped = 0;
    for (auto& [g, k] : cg) {
      int best = 0;
      for (const auto& r : refs) {
        auto rg = grams(r, n);
        auto it = rg.find(g);
        if (it != rg.end()) best = std::max(best, it->second);
      }
      clipped += std::min(k, best);
    }
    logp += std::log(static_cast<double>(clipped + 1) / static_cast<double>(c - n + 2));
  }
  int best_len = -1;
  for (const auto& r : refs) {
    int len = static_cast<int>(r.size());
    if (best_len < 0 || std::abs(len - c) < std::abs(best_len - c) ||
        (std::abs(len - c) == std::abs(best_len - c) && len < best_len))
      best_len = len;
  }
  double bp = c >= best_len ? 1.0 : std::exp(1.0 - static_cast<double>(best_len) / c);
  return bp * std::exp(logp / N);
}

Words random_words(Rng& rng, int min_len, int max_len, int alphabet) {
  std::uniform_int_distribution<int> len(min_len, max_len), tok(0, alphabet - 1);
  Words w(static_cast<std::size_t>(len(rng)));
  for (auto& x : w) x = "w" + std::to_string(tok(rng));
  return w;
}

}  // namespace

TEST_CASE("bleu of a sentence against itself is 1") {
  Words x{"a", "b", "c"};
  CHECK(bleu(x, std::vector<Words>{x}) == 1.0);
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    auto w = random_words(rng, 1, 15, 6);
    CHECK(bleu(w, std::vector<Words>{w}) == doctest::Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("bleu with no overlap matches the smoothing oracle") {
  Words cand{"a", "b"}, ref{"c", "d"};
  double b = bleu(cand, std::vector<Words>{ref});
  CHECK(b == doctest::Approx(oracle_bleu(cand, {ref})).epsilon(1e-15));
  CHECK(b == doctest::Approx(0.408248290463863).epsilon(1e-12));
}

TEST_CASE("brevity penalty on a one-token candidate") {
  Words cand{"a"}, ref{"a", "b", "c", "d"};
  CHECK(bleu(cand, std::vector<Words>{ref}) == doctest::Approx(std::exp(-3.0)).epsilon(1e-15));
}

TEST_CASE("bleu agrees with the oracle on random inputs") {
  Rng rng(2);
  for (int i = 0; i < 300; ++i) {
    auto cand = random_words(rng, 1, 10, 5);
    std::vector<Words> refs;
    int R = 1 + static_cast<int>(rng() % 3);
    for (int r = 0; r < R; ++r) refs.push_back(random_words(rng, 1, 10, 5));
    double got = bleu(cand, refs);
    CHECK(got == doctest::Approx(oracle_bleu(cand, refs)).epsilon(1e-12));
    CHECK(got >= 0.0);
    CHECK(got <= 1.0);
  }
}

TEST_CASE("bleu is invariant under token renaming") {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    std::vector<int> cand, ref;
    std::uniform_int_distribution<int> tok(0, 7), len(1, 9);
    for (int j = len(rng); j > 0; --j) cand.push_back(tok(rng));
    for (int j = len(rng); j > 0; --j) ref.push_back(tok(rng));
    std::vector<int> perm{3, 7, 0, 5, 1, 6, 2, 4};
    std::vector<int> pc, pr;
    for (int t : cand) pc.push_back(perm[static_cast<std::size_t>(t)]);
    for (int t : ref) pr.push_back(perm[static_cast<std::size_t>(t)]);
    CHECK(bleu(cand, std::vector<std::vector<int>>{ref}) == bleu(pc, std::vector<std::vector<int>>{pr}));
  }
}

TEST_CASE("bleu preconditions") {
  CHECK_THROWS(bleu(Words{}, std::vector<Words>{{"a"}}));
  CHECK_THROWS(bleu(Words{"a"}, std::vector<Words>{}));
}

TEST_CASE("distinct-n by definition") {
  CHECK(distinct_n(std::vector<Words>{{"i", "am", "i"}}, 1) == 2.0 / 3.0);
  CHECK(distinct_n(std::vector<Words>{{"a", "b", "a", "b"}}, 2) == 2.0 / 3.0);
  CHECK(distinct_n(std::vector<Words>{{"a", "b"}, {"c"}}, 1) == 1.0);
  CHECK_THROWS(distinct_n(std::vector<Words>{{"a"}, {"b"}}, 2));
  CHECK_THROWS(distinct_n(std::vector<Words>{}, 1));
}

TEST_CASE("a duplicate utterance never raises distinct-n") {
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    std::vector<Words> u;
    for (int j = 0; j < 4; ++j) u.push_back(random_words(rng, 2, 6, 4));
    for (int n : {1, 2}) {
      double before = distinct_n(u, n);
      auto more = u;
      more.push_back(u[static_cast<std::size_t>(i % 4)]);
      double after = distinct_n(more, n);
      CHECK(after <= before);
      CHECK(after > 0.0);
      CHECK(before <= 1.0);
    }
  }
}

namespace {

std::vector<Dialogue> toy_test_set(Vocab& v) {
  std::vector<Dialogue> d{
      gochat::testing::make_dialogue("a", Outcome::success, {"hi there", "hello friend", "how are you", "fine thanks"}),
      gochat::testing::make_dialogue("b", Outcome::failure, {"bye now", "see you soon"})};
  v = build_vocab(d, 1, 0);
  encode_corpus(v, 8, d);
  return d;
}

}  // namespace

TEST_CASE("evaluate: copying the gold response scores bleu 1") {
  Vocab v;
  auto test = toy_test_set(v);
  std::map<std::string, TokenSeq> gold;
  for (const auto& d : test)
    for (std::size_t i = 1; i < d.turns.size(); i += 2) gold[d.turns[i - 1].text] = d.turns[i].tokens;
  auto copy = [&](const DialogueState& s) { return std::make_pair(SubGoal::from_index(0, 2), gold.at(s.last().text)); };
  EvalReport r = evaluate(copy, test);
  CHECK(r.bleu == 1.0);
  CHECK(r.n_samples == 3);
}

TEST_CASE("evaluate: one fixed token gives distinct-1 of one over the token count") {
  Vocab v;
  auto test = toy_test_set(v);
  auto fixed = [](const DialogueState&) {
    return std::make_pair(SubGoal::from_index(0, 2), TokenSeq::from_ids(std::vector<int>{5, 5, 5, 5}, 8));
  };
  EvalReport r = evaluate(fixed, test);
  CHECK(r.distinct1 == doctest::Approx(1.0 / 12.0));
  CHECK(r.distinct2 == doctest::Approx(1.0 / 9.0));
  CHECK_THROWS(evaluate(fixed, {}));
}

TEST_CASE("evaluate with real models fills an in-range report") {
  Vocab v;
  auto test = toy_test_set(v);
  Manager m(HanConfig{v.size(), 4, 4, 3}, 2);
  m.init(1);
  Worker w(WorkerConfig{v.size(), 2, 4, 5, 5, 3, 5, 8}, "worker");
  w.init(1);
  EvalReport r = evaluate(m, w, test);
  CHECK(r.n_samples == 3);
  CHECK(r.bleu >= 0.0);
  CHECK(r.bleu <= 1.0);
  CHECK(r.distinct1 > 0.0);
  CHECK(r.distinct1 <= 1.0);
  CHECK(r.distinct2 > 0.0);
  CHECK(r.distinct2 <= 1.0);

  auto j = r.to_json();
  CHECK(j.contains("bleu"));
  CHECK(j["n_samples"] == 3);
  EvalReport fixed{0.097, 0.061, 0.479, 10};
  CHECK(fixed.to_table(true).find("9.70") != std::string::npos);
  CHECK(fixed.to_table(false).find("0.0970") != std::string::npos);
}
