#include "gochat/encoder_han.hpp"

#include "gochat/errors.hpp"

namespace gochat {

HanEncoder::HanEncoder(ParameterSet& ps, const std::string& prefix, const HanConfig& cfg) : cfg_(cfg) {
  if (cfg.vocab_size <= kReservedCount) throw ValidationError("HAN: vocab too small");
  embedding_ = ps.add(prefix + ".embedding", cfg.vocab_size, cfg.d_emb);
  word_fwd_ = nn::Gru::create(ps, prefix + ".word_fwd", cfg.d_emb, cfg.d_word);
  word_bwd_ = nn::Gru::create(ps, prefix + ".word_bwd", cfg.d_emb, cfg.d_word);
  word_attn_ = nn::Attention::create(ps, prefix + ".word_attn", 2 * cfg.d_word, cfg.d_word);
  word_proj_ = nn::Linear::create(ps, prefix + ".word_proj", 2 * cfg.d_word, cfg.d_word);
  dialogue_gru_ = nn::Gru::create(ps, prefix + ".dialogue_gru", cfg.d_word, cfg.d_dlg);
  dialogue_attn_ = nn::Attention::create(ps, prefix + ".dialogue_attn", cfg.d_dlg, cfg.d_dlg);
}

std::vector<Var> HanEncoder::embed(Tape& tape, const ParameterSet& ps, const TokenSeq& tokens) const {
  std::vector<Var> rows;
  if (tokens.real_length == 0) {
    rows.push_back(tape.row(ps[embedding_], kUnk));
    return rows;
  }
  for (int id : tokens.real()) {
    if (id < 0 || id >= cfg_.vocab_size) throw std::out_of_range("token id outside encoder vocabulary");
    rows.push_back(tape.row(ps[embedding_], id));
  }
  return rows;
}

HanEncoder::Encoded HanEncoder::encode_utterance(Tape& tape, const ParameterSet& ps,
                                                 std::span<const Var> embedded) const {
  if (embedded.empty()) throw std::invalid_argument("encode_utterance: no rows");
  const std::size_t L = embedded.size();
  std::vector<Var> fwd(L), bwd(L);
  Var h = word_fwd_.zero_state(tape);
  for (std::size_t j = 0; j < L; ++j) fwd[j] = h = word_fwd_.step(tape, ps, embedded[j], h);
  h = word_bwd_.zero_state(tape);
  for (std::size_t j = L; j-- > 0;) bwd[j] = h = word_bwd_.step(tape, ps, embedded[j], h);

  std::vector<Var> states(L);
  for (std::size_t j = 0; j < L; ++j) states[j] = tape.concat(fwd[j], bwd[j]);
  auto attended = word_attn_(tape, ps, states);
  return {word_proj_(tape, ps, attended.summary), attended.weights};
}

HanEncoder::Encoded HanEncoder::encode_dialogue(Tape& tape, const ParameterSet& ps,
                                                std::span<const Var> utterance_vectors) const {
  if (utterance_vectors.empty()) throw std::invalid_argument("encode_dialogue: empty history");
  std::vector<Var> hidden;
  hidden.reserve(utterance_vectors.size());
  Var h = dialogue_gru_.zero_state(tape);
  for (Var u : utterance_vectors) hidden.push_back(h = dialogue_gru_.step(tape, ps, u, h));
  auto attended = dialogue_attn_(tape, ps, hidden);
  return {attended.summary, attended.weights};
}

HanEncoder::Encoded HanEncoder::encode_state(Tape& tape, const ParameterSet& ps,
                                             const std::vector<Utterance>& history) const {
  Stream s(*this, ps, tape);
  for (const auto& u : history) s.push(u.tokens);
  return s.summary();
}

HanEncoder::Stream::Stream(const HanEncoder& enc, const ParameterSet& ps, Tape& tape)
    : enc_(&enc), ps_(&ps), tape_(&tape) {}

void HanEncoder::Stream::push(const TokenSeq& tokens) {
  auto rows = enc_->embed(*tape_, *ps_, tokens);
  Var u = enc_->encode_utterance(*tape_, *ps_, rows).vector;
  Var prev = hidden_.empty() ? enc_->dialogue_gru_.zero_state(*tape_) : hidden_.back();
  hidden_.push_back(enc_->dialogue_gru_.step(*tape_, *ps_, u, prev));
}

HanEncoder::Encoded HanEncoder::Stream::summary() const {
  if (hidden_.empty()) throw std::logic_error("HAN stream: summary of empty history");
  auto attended = enc_->dialogue_attn_(*tape_, *ps_, hidden_);
  return {attended.summary, attended.weights};
}

}  // namespace gochat
