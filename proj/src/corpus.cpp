#include "gochat/corpus.hpp"

#include "gochat/errors.hpp"

#include <json.hpp>
#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace gochat {

namespace {

const std::string kReservedTokens[kReservedCount] = {"<pad>", "<unk>", "<bos>", "<eos>"};

}  // namespace

TokenSeq TokenSeq::from_ids(std::span<const int> raw, int n) {
  TokenSeq seq;
  seq.ids.assign(static_cast<std::size_t>(n), kPad);
  seq.real_length = std::min<int>(n, static_cast<int>(raw.size()));
  std::copy_n(raw.begin(), seq.real_length, seq.ids.begin());
  return seq;
}

int Dialogue::turn_count() const {
  return static_cast<int>(std::count_if(turns.begin(), turns.end(),
                                        [](const Utterance& u) { return u.speaker == Speaker::human; }));
}

const char* speaker_name(Speaker s) { return s == Speaker::human ? "human" : "chatbot"; }

// ---------------------------------------------------------------------------
// Vocab

Vocab::Vocab() {
  for (const auto& t : kReservedTokens) add(t);
}

int Vocab::add(const std::string& token) {
  auto it = to_id_.find(token);
  if (it != to_id_.end()) return it->second;
  int id = size();
  to_id_.emplace(token, id);
  to_token_.push_back(token);
  return id;
}

int Vocab::id(const std::string& token) const {
  auto it = to_id_.find(token);
  return it == to_id_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("vocab id out of range");
  return to_token_[static_cast<std::size_t>(id)];
}

std::uint64_t Vocab::fingerprint() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& t : to_token_) {
    for (unsigned char c : t) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    h ^= 0xffu;
    h *= 1099511628211ULL;
  }
  return h;
}

void Vocab::save(const std::filesystem::path& path) const {
  nlohmann::ordered_json j;
  j["tokens"] = to_token_;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError(path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  auto tokens = j.at("tokens").get<std::vector<std::string>>();
  if (tokens.size() < kReservedCount)
    throw ValidationError(path.string() + ": vocab lacks reserved entries");
  for (int i = 0; i < kReservedCount; ++i)
    if (tokens[static_cast<std::size_t>(i)] != kReservedTokens[i])
      throw ValidationError(path.string() + ": reserved id " + std::to_string(i) + " mismatch");
  Vocab v;
  for (std::size_t i = kReservedCount; i < tokens.size(); ++i) {
    if (v.contains(tokens[i])) throw ValidationError(path.string() + ": duplicate token " + tokens[i]);
    v.add(tokens[i]);
  }
  return v;
}

// ---------------------------------------------------------------------------
// Tokenization

std::vector<std::string> tokenize(const std::string& text) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  icu::UnicodeString u = icu::UnicodeString::fromUTF8(text);
  if (U_SUCCESS(status)) {
    icu::UnicodeString normalized = nfc->normalize(u, status);
    if (U_SUCCESS(status)) u = normalized;
  }
  u.toLower(icu::Locale::getRoot());

  std::vector<std::string> out;
  icu::UnicodeString current;
  auto flush = [&] {
    if (current.isEmpty()) return;
    std::string s;
    current.toUTF8String(s);
    out.push_back(std::move(s));
    current.remove();
  };
  for (int32_t i = 0; i < u.length();) {
    UChar32 c = u.char32At(i);
    if (u_isUWhiteSpace(c))
      flush();
    else
      current.append(c);
    i += U16_LENGTH(c);
  }
  flush();
  return out;
}

Vocab build_vocab(const std::vector<Dialogue>& dialogues, int min_count, int max_size) {
  if (min_count < 1) throw ValidationError("build_vocab: min_count must be >= 1");
  std::map<std::string, int> counts;
  for (const auto& d : dialogues)
    for (const auto& u : d.turns)
      for (auto& tok : tokenize(u.text)) ++counts[tok];

  std::vector<std::pair<std::string, int>> ranked;
  for (auto& [tok, c] : counts)
    if (c >= min_count && !std::count(std::begin(kReservedTokens), std::end(kReservedTokens), tok))
      ranked.emplace_back(tok, c);
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (max_size > 0 && static_cast<int>(ranked.size()) > max_size) ranked.resize(static_cast<std::size_t>(max_size));

  Vocab v;
  for (auto& [tok, c] : ranked) v.add(tok);
  return v;
}

TokenSeq encode_utterance(const Vocab& vocab, const std::string& text, int n) {
  if (n < 2) throw ValidationError("encode_utterance: n must be >= 2");
  std::vector<int> ids;
  for (const auto& tok : tokenize(text)) ids.push_back(vocab.id(tok));
  return TokenSeq::from_ids(ids, n);
}

std::string decode_tokens(const Vocab& vocab, const TokenSeq& seq) {
  std::string out;
  for (int id : seq.real()) {
    if (!out.empty()) out += ' ';
    out += vocab.token(id);
  }
  return out;
}

void encode_corpus(const Vocab& vocab, int n, std::vector<Dialogue>& dialogues) {
  for (auto& d : dialogues)
    for (auto& u : d.turns) u.tokens = encode_utterance(vocab, u.text, n);
}

// ---------------------------------------------------------------------------
// JSONL

namespace {

Dialogue parse_line(const std::string& line, int lineno, const IngestOptions& opts) {
  auto fail = [lineno](const std::string& why) {
    return ValidationError("line " + std::to_string(lineno) + ": " + why);
  };
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw fail(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw fail("expected a JSON object");

  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    if (k == "id" || k == "outcome" || k == "turns") continue;
    if (opts.strict) throw fail("unknown field '" + k + "'");
    std::clog << "warning: line " << lineno << ": ignoring unknown field '" << k << "'\n";
  }

  Dialogue d;
  if (!j.contains("id") || !j["id"].is_string()) throw fail("missing string field 'id'");
  d.id = j["id"].get<std::string>();
  if (!j.contains("outcome") || !j["outcome"].is_number_integer()) throw fail("missing outcome");
  int outcome = j["outcome"].get<int>();
  if (outcome != 0 && outcome != 1) throw fail("outcome must be 0 or 1");
  d.outcome = outcome == 1 ? Outcome::success : Outcome::failure;
  if (!j.contains("turns") || !j["turns"].is_array()) throw fail("missing array field 'turns'");
  if (j["turns"].empty()) throw fail("dialogue has no turns");

  for (const auto& t : j["turns"]) {
    if (!t.is_object()) throw fail("turn must be an object");
    for (auto it = t.begin(); it != t.end(); ++it) {
      if (it.key() == "speaker" || it.key() == "text") continue;
      if (opts.strict) throw fail("unknown turn field '" + it.key() + "'");
      std::clog << "warning: line " << lineno << ": ignoring unknown turn field '" << it.key() << "'\n";
    }
    if (!t.contains("speaker") || !t["speaker"].is_string()) throw fail("turn missing speaker");
    if (!t.contains("text") || !t["text"].is_string()) throw fail("turn missing text");
    Utterance u;
    auto sp = t["speaker"].get<std::string>();
    if (sp == "human")
      u.speaker = Speaker::human;
    else if (sp == "chatbot")
      u.speaker = Speaker::chatbot;
    else
      throw fail("unknown speaker '" + sp + "'");
    u.text = t["text"].get<std::string>();
    d.turns.push_back(std::move(u));
  }

  if (d.turns.front().speaker != Speaker::human) throw fail("dialogue must start with human");
  for (std::size_t i = 1; i < d.turns.size(); ++i)
    if (d.turns[i].speaker == d.turns[i - 1].speaker) throw fail("speakers must alternate");
  if (opts.max_turns > 0 && d.turn_count() > opts.max_turns)
    throw fail("dialogue exceeds " + std::to_string(opts.max_turns) + " turns");
  return d;
}

}  // namespace

std::vector<Dialogue> parse_dialogues(const std::string& jsonl, const IngestOptions& opts) {
  std::vector<Dialogue> out;
  std::istringstream in(jsonl);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_line(line, lineno, opts));
  }
  return out;
}

std::vector<Dialogue> ingest_dialogues(const std::filesystem::path& path, const IngestOptions& opts) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError(path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_dialogues(buf.str(), opts);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::string serialize_dialogues(const std::vector<Dialogue>& dialogues) {
  std::string out;
  for (const auto& d : dialogues) {
    nlohmann::ordered_json j;
    j["id"] = d.id;
    j["outcome"] = d.outcome == Outcome::success ? 1 : 0;
    j["turns"] = nlohmann::ordered_json::array();
    for (const auto& u : d.turns) {
      nlohmann::ordered_json t;
      t["speaker"] = speaker_name(u.speaker);
      t["text"] = u.text;
      j["turns"].push_back(std::move(t));
    }
    out += j.dump();
    out += '\n';
  }
  return out;
}

void write_dialogues(const std::filesystem::path& path, const std::vector<Dialogue>& dialogues) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << serialize_dialogues(dialogues);
}

DialogueState state_at(const Dialogue& dialogue, int t) {
  int T = dialogue.turn_count();
  if (t < 1 || t > T)
    throw std::out_of_range("state_at: t=" + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
  DialogueState s;
  s.history.assign(dialogue.turns.begin(), dialogue.turns.begin() + (2 * t - 1));
  return s;
}

}  // namespace gochat
