#pragma once

// Multi-turn dialogue data model: tokenization, vocabulary, JSONL ingestion
// and dialogue states.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace gochat {

enum class Speaker { human, chatbot };
enum class Outcome { failure = 0, success = 1 };

inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kBos = 2;
inline constexpr int kEos = 3;
inline constexpr int kReservedCount = 4;
inline constexpr int kDefaultSeqLen = 30;

/// Fixed-length id sequence; ids[j] == kPad for j >= real_length.
struct TokenSeq {
  std::vector<int> ids;
  int real_length = 0;

  int capacity() const { return static_cast<int>(ids.size()); }
  std::span<const int> real() const { return {ids.data(), static_cast<std::size_t>(real_length)}; }
  bool empty() const { return real_length == 0; }

  /// Pads (or truncates) a raw id list to exactly n entries.
  static TokenSeq from_ids(std::span<const int> raw, int n);

  friend bool operator==(const TokenSeq&, const TokenSeq&) = default;
};

struct Utterance {
  Speaker speaker = Speaker::human;
  std::string text;
  TokenSeq tokens;  // filled by encode_corpus
};

struct Dialogue {
  std::string id;
  Outcome outcome = Outcome::failure;
  std::vector<Utterance> turns;

  /// Number of human utterances, the turn count T.
  int turn_count() const;
};

/// u_h1, u_c1, ..., u_ht: odd length, last utterance human.
struct DialogueState {
  std::vector<Utterance> history;

  int turn() const { return static_cast<int>(history.size() + 1) / 2; }
  const Utterance& last() const { return history.back(); }
};

class Vocab {
 public:
  Vocab();

  /// Appends a token if absent; returns its id.
  int add(const std::string& token);
  int id(const std::string& token) const;  // kUnk when absent
  const std::string& token(int id) const;
  bool contains(const std::string& token) const { return to_id_.count(token) != 0; }
  int size() const { return static_cast<int>(to_token_.size()); }

  /// Stable 64-bit FNV-1a digest over the id->token table.
  std::uint64_t fingerprint() const;

  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.to_token_ == b.to_token_; }

 private:
  std::unordered_map<std::string, int> to_id_;
  std::vector<std::string> to_token_;
};

/// NFC-normalize, lowercase, split on whitespace.
std::vector<std::string> tokenize(const std::string& text);

Vocab build_vocab(const std::vector<Dialogue>& dialogues, int min_count, int max_size);

TokenSeq encode_utterance(const Vocab& vocab, const std::string& text, int n);
std::string decode_tokens(const Vocab& vocab, const TokenSeq& seq);

/// Fills Utterance::tokens for every turn.
void encode_corpus(const Vocab& vocab, int n, std::vector<Dialogue>& dialogues);

struct IngestOptions {
  bool strict = true;
  int max_turns = 20;  // m; <= 0 disables the cap
};

/// One JSON object per line; throws ValidationError naming the line number.
std::vector<Dialogue> ingest_dialogues(const std::filesystem::path& path, const IngestOptions& opts = {});
std::vector<Dialogue> parse_dialogues(const std::string& jsonl, const IngestOptions& opts = {});

std::string serialize_dialogues(const std::vector<Dialogue>& dialogues);
void write_dialogues(const std::filesystem::path& path, const std::vector<Dialogue>& dialogues);

/// First 2t-1 utterances; 1 <= t <= T.
DialogueState state_at(const Dialogue& dialogue, int t);

const char* speaker_name(Speaker s);

}  // namespace gochat
