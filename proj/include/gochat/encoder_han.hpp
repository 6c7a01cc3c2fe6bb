#pragma once

// Hierarchical attention encoder shared by the manager, the critic and the
// learned outcome judge.
//
// Word level: embeddings -> bidirectional GRU (d_word per direction) ->
// additive attention over the concatenated states -> linear projection to
// d_word. Dialogue level: GRU (d_dlg) over utterance vectors -> additive
// attention -> H_t.

#include "gochat/autodiff.hpp"
#include "gochat/corpus.hpp"
#include "gochat/nn.hpp"

#include <string>
#include <vector>

namespace gochat {

struct HanConfig {
  int vocab_size = 0;
  int d_emb = 500;
  int d_word = 500;
  int d_dlg = 50;
};

class HanEncoder {
 public:
  HanEncoder() = default;
  HanEncoder(ParameterSet& ps, const std::string& prefix, const HanConfig& cfg);

  const HanConfig& config() const { return cfg_; }

  /// One row per real token; a zero-length sequence embeds as the single UNK row.
  std::vector<Var> embed(Tape& tape, const ParameterSet& ps, const TokenSeq& tokens) const;

  struct Encoded {
    Var vector;
    Var weights;
  };
  Encoded encode_utterance(Tape& tape, const ParameterSet& ps, std::span<const Var> embedded) const;
  Encoded encode_dialogue(Tape& tape, const ParameterSet& ps, std::span<const Var> utterance_vectors) const;

  /// Convenience: full pipeline over a history.
  Encoded encode_state(Tape& tape, const ParameterSet& ps, const std::vector<Utterance>& history) const;

  /// Incremental encoder over a growing history on one tape. Utterance
  /// encodings and dialogue-GRU states are computed once and reused by every
  /// later prefix.
  class Stream {
   public:
    Stream(const HanEncoder& enc, const ParameterSet& ps, Tape& tape);
    void push(const TokenSeq& tokens);
    /// H over everything pushed so far.
    Encoded summary() const;
    int length() const { return static_cast<int>(hidden_.size()); }

   private:
    const HanEncoder* enc_;
    const ParameterSet* ps_;
    Tape* tape_;
    std::vector<Var> hidden_;
  };

 private:
  HanConfig cfg_;
  int embedding_ = -1;
  nn::Gru word_fwd_;
  nn::Gru word_bwd_;
  nn::Attention word_attn_;
  nn::Linear word_proj_;
  nn::Gru dialogue_gru_;
  nn::Attention dialogue_attn_;
};

}  // namespace gochat
