#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fel/error.hpp"
#include "fel/rng.hpp"

namespace fel::tok {

using Index = std::int64_t;

struct VocabOptions {
  Index max_piece_len = 8;  // in codepoints
  Index min_count = 2;      // multi-character candidates below this are dropped
};

// Unigram-LM piece inventory. Ids: the five specials first, then pieces in
// descending probability (ties broken lexicographically). Every single
// character seen in the corpus is a piece, so any in-alphabet text segments.
class Vocab {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;
  static constexpr std::int32_t kCls = 2;
  static constexpr std::int32_t kSep = 3;
  static constexpr std::int32_t kMask = 4;
  static constexpr std::int32_t kNumSpecials = 5;

  static bool is_special(std::int32_t id) { return id < kNumSpecials; }

  std::int32_t size() const { return static_cast<std::int32_t>(pieces_.size()); }
  const std::vector<std::string>& pieces() const { return pieces_; }
  const std::vector<double>& log_probs() const { return log_probs_; }
  const std::string& piece(std::int32_t id) const { return pieces_[static_cast<std::size_t>(id)]; }

  // -1 when the piece is not in the inventory.
  std::int32_t piece_id(std::string_view piece) const;
  bool has_char(std::string_view codepoint) const;
  Index max_piece_len() const { return max_piece_len_; }

  // Relative frequencies for rarity-biased masking: exp(log_prob) for
  // pieces, 0 for specials.
  std::vector<double> relative_frequencies() const;

 private:
  friend Vocab build_vocab(const std::vector<std::string>& corpus_texts, Index target_size,
                           const VocabOptions& options);
  friend Vocab load_vocab(const std::string& path);

  void index_pieces();

  std::vector<std::string> pieces_;
  std::vector<double> log_probs_;
  std::unordered_map<std::string, std::int32_t> piece_to_id_;
  std::unordered_set<std::string> char_set_;
  Index max_piece_len_ = 1;
};

Vocab build_vocab(const std::vector<std::string>& corpus_texts, Index target_size,
                  const VocabOptions& options = {});

// Line format: header "#unigram-vocab v1 size=<n>", then "piece<TAB>log_prob"
// with specials first. Byte-stable across runs.
void save_vocab(const Vocab& vocab, const std::string& path);
Vocab load_vocab(const std::string& path);

struct TokenSeq {
  std::vector<std::int32_t> ids;
  std::vector<std::string> pieces;  // covered text; [UNK] keeps the covered character
  std::vector<std::pair<Index, Index>> offsets;  // byte [start,end) into the source
};

// Max-probability segmentation; ties broken by fewer pieces, then
// leftmost-longest. Unknown characters become single-character [UNK] tokens.
TokenSeq segment_viterbi(std::string_view text, const Vocab& vocab);

// Draws a segmentation with probability proportional to (prod of piece
// probs)^alpha via forward filtering / backward sampling over the lattice.
TokenSeq segment_sample(std::string_view text, const Vocab& vocab, double alpha, Rng& rng);

// Log-probability of a given segmentation under the vocab (unk penalty for
// [UNK] pieces); used by tests and the sampler.
double segmentation_score(const TokenSeq& seq, const Vocab& vocab);

// ASCII lowering; other bytes pass through.
std::string lowercase(std::string text);

// UTF-8 codepoints with their byte offsets. Invalid lead bytes are treated as
// single-byte units.
std::vector<std::pair<Index, Index>> codepoint_spans(std::string_view text);

}  // namespace fel::tok
