#include "gochat/encoder_han.hpp"
#include "gochat/errors.hpp"

#include "../support.hpp"

#include <doctest.h>

using namespace gochat;
using gochat::testing::gru_reference;
using gochat::testing::randomize;
using gochat::testing::utt;

namespace {

const HanConfig kToy{12, 4, 6, 3};

struct Han {
  ParameterSet ps;
  HanEncoder enc;
  explicit Han(const HanConfig& c = kToy, std::uint64_t seed = 3) : enc(ps, "han", c) { randomize(ps, seed, 0.5); }
  const Mat& p(const std::string& name) const { return ps[ps.find("han." + name)].value; }
};

// Plain Eigen re-implementation used as the oracle.
Vec ref_gru(const Han& h, const std::string& name, const Vec& x, const Vec& s) {
  return gru_reference(h.p(name + ".w_input"), h.p(name + ".w_hidden"), h.p(name + ".bias"), x, s);
}

Vec ref_attend(const Han& h, const std::string& name, const std::vector<Vec>& states, Vec* weights_out = nullptr) {
  Vec scores(static_cast<Eigen::Index>(states.size()));
  for (std::size_t i = 0; i < states.size(); ++i) {
    Vec a = (h.p(name + ".weight") * states[i] + h.p(name + ".bias").col(0)).array().tanh();
    scores(static_cast<Eigen::Index>(i)) = h.p(name + ".context").col(0).dot(a);
  }
  Vec w = (scores.array() - scores.maxCoeff()).exp();
  w /= w.sum();
  if (weights_out) *weights_out = w;
  Vec out = Vec::Zero(states[0].size());
  for (std::size_t i = 0; i < states.size(); ++i) out += w(static_cast<Eigen::Index>(i)) * states[i];
  return out;
}

Vec ref_utterance(const Han& h, const TokenSeq& tokens) {
  std::vector<Vec> rows;
  if (tokens.real_length == 0) rows.push_back(h.p("embedding").row(kUnk).transpose());
  for (int id : tokens.real()) rows.push_back(h.p("embedding").row(id).transpose());
  const int d = h.enc.config().d_word;
  const std::size_t L = rows.size();
  std::vector<Vec> fwd(L), bwd(L);
  Vec s = Vec::Zero(d);
  for (std::size_t j = 0; j < L; ++j) fwd[j] = s = ref_gru(h, "word_fwd", rows[j], s);
  s = Vec::Zero(d);
  for (std::size_t j = L; j-- > 0;) bwd[j] = s = ref_gru(h, "word_bwd", rows[j], s);
  std::vector<Vec> states(L);
  for (std::size_t j = 0; j < L; ++j) {
    states[j].resize(2 * d);
    states[j] << fwd[j], bwd[j];
  }
  Vec summary = ref_attend(h, "word_attn", states);
  return h.p("word_proj.weight") * summary + h.p("word_proj.bias").col(0);
}

Vec ref_state(const Han& h, const std::vector<Utterance>& history) {
  Vec s = Vec::Zero(h.enc.config().d_dlg);
  std::vector<Vec> hidden;
  for (const auto& u : history) hidden.push_back(s = ref_gru(h, "dialogue_gru", ref_utterance(h, u.tokens), s));
  return ref_attend(h, "dialogue_attn", hidden);
}

Vec encode(const Han& h, const std::vector<Utterance>& history, Vec* weights = nullptr) {
  Tape t(false);
  auto e = h.enc.encode_state(t, h.ps, history);
  if (weights) *weights = t.value(e.weights);
  return t.value(e.vector);
}

std::vector<Utterance> toy_history() {
  return {utt(Speaker::human, {4, 5, 6}, 6), utt(Speaker::chatbot, {7, 8}, 6), utt(Speaker::human, {9}, 6)};
}

}  // namespace

TEST_CASE("embedding lookup, UNK rule and default width") {
  Han h;
  Tape t(false);
  auto rows = h.enc.embed(t, h.ps, TokenSeq::from_ids(std::vector<int>{}, 4));
  REQUIRE(rows.size() == 1);
  CHECK(t.value(rows[0]) == Vec(h.p("embedding").row(kUnk).transpose()));
  auto same = h.enc.embed(t, h.ps, TokenSeq::from_ids(std::vector<int>{5, 5}, 4));
  REQUIRE(same.size() == 2);
  CHECK(t.value(same[0]) == t.value(same[1]));
  CHECK_THROWS_AS(h.enc.embed(t, h.ps, TokenSeq::from_ids(std::vector<int>{12}, 4)), std::out_of_range);

  ParameterSet ps;
  HanEncoder def(ps, "d", HanConfig{10});
  CHECK(ps[ps.find("d.embedding")].value.cols() == 500);
  CHECK(def.config().d_dlg == 50);
}

TEST_CASE("single positions attend with weight one") {
  Han h;
  Tape t(false);
  auto rows = h.enc.embed(t, h.ps, TokenSeq::from_ids(std::vector<int>{7}, 4));
  auto u = h.enc.encode_utterance(t, h.ps, rows);
  CHECK(t.value(u.weights).size() == 1);
  CHECK(t.value(u.weights)(0) == 1.0);
  Vec w;
  encode(h, {utt(Speaker::human, {7}, 4)}, &w);
  CHECK(w.size() == 1);
  CHECK(w(0) == 1.0);
}

TEST_CASE("encoder matches the reference implementation") {
  Han h;
  auto hist = toy_history();
  for (std::size_t t = 1; t <= hist.size(); ++t) {
    std::vector<Utterance> prefix(hist.begin(), hist.begin() + static_cast<std::ptrdiff_t>(t));
    Vec got = encode(h, prefix);
    CHECK(got.size() == kToy.d_dlg);
    CHECK((got - ref_state(h, prefix)).cwiseAbs().maxCoeff() < 1e-13);
  }
}

TEST_CASE("swapping two tokens changes the utterance vector") {
  Han h;
  auto a = utt(Speaker::human, {4, 9, 6}, 6), b = utt(Speaker::human, {9, 4, 6}, 6);
  Tape t(false);
  Vec va = t.value(h.enc.encode_utterance(t, h.ps, h.enc.embed(t, h.ps, a.tokens)).vector);
  Vec vb = t.value(h.enc.encode_utterance(t, h.ps, h.enc.embed(t, h.ps, b.tokens)).vector);
  CHECK((va - ref_utterance(h, a.tokens)).cwiseAbs().maxCoeff() < 1e-13);
  CHECK((vb - ref_utterance(h, b.tokens)).cwiseAbs().maxCoeff() < 1e-13);
  CHECK((va - vb).norm() > 1e-6);
}

TEST_CASE("appending an utterance changes H") {
  Han h;
  auto hist = toy_history();
  Vec two = encode(h, {hist[0], hist[1]});
  Vec three = encode(h, hist);
  CHECK((two - three).norm() > 1e-6);
  CHECK((three - ref_state(h, hist)).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("attention weights are a simplex on every input") {
  Han h;
  Rng rng(8);
  std::uniform_int_distribution<int> tok(4, 11), len(0, 5), turns(1, 5);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<Utterance> hist;
    for (int i = turns(rng); i > 0; --i) {
      std::vector<int> ids;
      for (int j = len(rng); j > 0; --j) ids.push_back(tok(rng));
      hist.push_back(utt(Speaker::human, ids, 6));
    }
    Tape t(false);
    auto e = h.enc.encode_state(t, h.ps, hist);
    const Vec& w = t.value(e.weights);
    CHECK(w.size() == static_cast<Eigen::Index>(hist.size()));
    CHECK(w.minCoeff() >= 0.0);
    CHECK(std::abs(w.sum() - 1.0) < 1e-6);
    for (const auto& u : hist) {
      auto uw = h.enc.encode_utterance(t, h.ps, h.enc.embed(t, h.ps, u.tokens)).weights;
      CHECK(std::abs(t.value(uw).sum() - 1.0) < 1e-6);
      CHECK(t.value(uw).minCoeff() >= 0.0);
    }
  }
}

TEST_CASE("stream encoding equals full encoding for every prefix") {
  Han h;
  auto hist = toy_history();
  Tape t(false);
  HanEncoder::Stream s(h.enc, h.ps, t);
  for (std::size_t i = 0; i < hist.size(); ++i) {
    s.push(hist[i].tokens);
    std::vector<Utterance> prefix(hist.begin(), hist.begin() + static_cast<std::ptrdiff_t>(i) + 1);
    CHECK(t.value(s.summary().vector) == encode(h, prefix));
  }
  CHECK(s.length() == 3);
  Tape e(false);
  HanEncoder::Stream empty(h.enc, h.ps, e);
  CHECK_THROWS(empty.summary());
}

TEST_CASE("encoding is deterministic") {
  Han a, b;
  CHECK(encode(a, toy_history()) == encode(b, toy_history()));
  CHECK(encode(a, toy_history()) == encode(a, toy_history()));
}

TEST_CASE("gradient of the squared norm of H matches finite differences") {
  Han h;
  auto hist = toy_history();
  auto loss = [&](Tape& t) { return t.dot(h.enc.encode_state(t, h.ps, hist).vector, h.enc.encode_state(t, h.ps, hist).vector); };
  Tape tape;
  Var H = h.enc.encode_state(tape, h.ps, hist).vector;
  tape.backward(tape.dot(H, H));
  auto g = tape.gradients().for_set(h.ps);
  auto r = gochat::testing::fd_check(h.ps, g, [&] {
    Tape t(false);
    return t.scalar_value(loss(t));
  });
  INFO("worst at " << r.where);
  CHECK(r.worst < 1e-4);
}
