#include "fel/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace fel::tok {

namespace {

// Log-probability charged per [UNK] character. Finite so sampled lattices
// containing unavoidable unknowns still normalize.
constexpr double kUnkLogProb = -100.0;

const char* kSpecialNames[Vocab::kNumSpecials] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};

bool is_space_cp(std::string_view cp) {
  return cp == " " || cp == "\t" || cp == "\n" || cp == "\r";
}

}  // namespace

std::string lowercase(std::string text) {
  for (char& c : text) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return text;
}

std::vector<std::pair<Index, Index>> codepoint_spans(std::string_view text) {
  std::vector<std::pair<Index, Index>> spans;
  Index i = 0;
  const Index n = static_cast<Index>(text.size());
  while (i < n) {
    const unsigned char lead = static_cast<unsigned char>(text[static_cast<std::size_t>(i)]);
    Index len = 1;
    if ((lead & 0xe0) == 0xc0) len = 2;
    else if ((lead & 0xf0) == 0xe0) len = 3;
    else if ((lead & 0xf8) == 0xf0) len = 4;
    if (i + len > n) len = 1;
    spans.emplace_back(i, i + len);
    i += len;
  }
  return spans;
}

std::int32_t Vocab::piece_id(std::string_view piece) const {
  auto it = piece_to_id_.find(std::string(piece));
  return it == piece_to_id_.end() ? -1 : it->second;
}

bool Vocab::has_char(std::string_view codepoint) const {
  return char_set_.count(std::string(codepoint)) > 0;
}

std::vector<double> Vocab::relative_frequencies() const {
  std::vector<double> freq(pieces_.size(), 0.0);
  for (std::size_t i = kNumSpecials; i < pieces_.size(); ++i) freq[i] = std::exp(log_probs_[i]);
  return freq;
}

void Vocab::index_pieces() {
  piece_to_id_.clear();
  char_set_.clear();
  max_piece_len_ = 1;
  for (std::size_t i = kNumSpecials; i < pieces_.size(); ++i) {
    piece_to_id_.emplace(pieces_[i], static_cast<std::int32_t>(i));
    const auto cps = codepoint_spans(pieces_[i]);
    if (cps.size() == 1) char_set_.insert(pieces_[i]);
    max_piece_len_ = std::max(max_piece_len_, static_cast<Index>(cps.size()));
  }
}

Vocab build_vocab(const std::vector<std::string>& corpus_texts, Index target_size,
                  const VocabOptions& options) {
  std::unordered_map<std::string, std::int64_t> counts;
  bool saw_content = false;
  for (const auto& raw : corpus_texts) {
    const auto cps = codepoint_spans(raw);
    std::size_t word_begin = 0;  // index into cps
    auto flush_word = [&](std::size_t word_end) {
      for (std::size_t i = word_begin; i < word_end; ++i) {
        std::string piece;
        for (std::size_t j = i; j < word_end && j - i < static_cast<std::size_t>(options.max_piece_len); ++j) {
          piece.append(raw, static_cast<std::size_t>(cps[j].first),
                       static_cast<std::size_t>(cps[j].second - cps[j].first));
          ++counts[piece];
        }
      }
    };
    for (std::size_t i = 0; i < cps.size(); ++i) {
      const std::string_view cp(raw.data() + cps[i].first,
                                static_cast<std::size_t>(cps[i].second - cps[i].first));
      if (is_space_cp(cp)) {
        flush_word(i);
        word_begin = i + 1;
        // Only the plain space acts as a piece; control whitespace is a
        // separator and never enters the inventory.
        if (cp == " ") ++counts[" "];
        saw_content = true;
      } else {
        saw_content = true;
      }
    }
    flush_word(cps.size());
  }
  if (!saw_content) throw Error("CORPUS_EMPTY", "cannot build a vocabulary from an empty corpus");

  std::vector<std::pair<std::string, std::int64_t>> chars;
  std::vector<std::pair<std::string, std::int64_t>> multi;
  for (const auto& [piece, count] : counts) {
    if (codepoint_spans(piece).size() == 1) {
      chars.emplace_back(piece, count);
    } else if (count >= options.min_count) {
      multi.emplace_back(piece, count);
    }
  }
  const Index min_size = static_cast<Index>(chars.size()) + Vocab::kNumSpecials;
  if (target_size < min_size) {
    throw Error("VOCAB_SIZE", "target size " + std::to_string(target_size) +
                                  " below character count + specials (" +
                                  std::to_string(min_size) + ")");
  }
  auto by_count = [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  };
  std::sort(multi.begin(), multi.end(), by_count);
  const std::size_t extra =
      std::min(multi.size(), static_cast<std::size_t>(target_size - min_size));
  multi.resize(extra);

  std::vector<std::pair<std::string, std::int64_t>> selected = std::move(chars);
  selected.insert(selected.end(), multi.begin(), multi.end());
  std::sort(selected.begin(), selected.end(), by_count);

  double total = 0.0;
  for (const auto& [piece, count] : selected) total += static_cast<double>(count);

  Vocab v;
  for (const char* name : kSpecialNames) {
    v.pieces_.emplace_back(name);
    v.log_probs_.push_back(0.0);
  }
  for (const auto& [piece, count] : selected) {
    v.pieces_.push_back(piece);
    v.log_probs_.push_back(std::log(static_cast<double>(count) / total));
  }
  v.index_pieces();
  v.max_piece_len_ = std::max(v.max_piece_len_, options.max_piece_len);
  return v;
}

void save_vocab(const Vocab& vocab, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("IO", "cannot open " + path + " for writing");
  os << "#unigram-vocab v1 size=" << vocab.size() << "\n";
  char buf[64];
  for (std::int32_t i = 0; i < vocab.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", vocab.log_probs()[static_cast<std::size_t>(i)]);
    os << vocab.piece(i) << "\t" << buf << "\n";
  }
  if (!os) throw Error("IO", "write failed for " + path);
}

Vocab load_vocab(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("IO", "cannot open " + path);
  std::string line;
  if (!std::getline(is, line) || line.rfind("#unigram-vocab v1 size=", 0) != 0) {
    throw Error("VOCAB_FORMAT", "missing vocab header in " + path);
  }
  const Index declared = std::stoll(line.substr(std::string("#unigram-vocab v1 size=").size()));
  Vocab v;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw Error("VOCAB_FORMAT", "malformed vocab line: " + line);
    v.pieces_.push_back(line.substr(0, tab));
    v.log_probs_.push_back(std::stod(line.substr(tab + 1)));
  }
  if (static_cast<Index>(v.pieces_.size()) != declared) {
    throw Error("VOCAB_FORMAT", "vocab size mismatch: header " + std::to_string(declared) +
                                    ", lines " + std::to_string(v.pieces_.size()));
  }
  for (std::int32_t i = 0; i < Vocab::kNumSpecials; ++i) {
    if (static_cast<std::size_t>(i) >= v.pieces_.size() ||
        v.pieces_[static_cast<std::size_t>(i)] != kSpecialNames[i]) {
      throw Error("VOCAB_FORMAT", "vocab specials out of order in " + path);
    }
  }
  v.index_pieces();
  return v;
}

// ---------------------------------------------------------------------------
// segmentation

namespace {

struct Unit {
  Index begin;  // byte offsets
  Index end;
  bool space;
};

std::vector<Unit> split_units(std::string_view text) {
  std::vector<Unit> units;
  for (const auto& [b, e] : codepoint_spans(text)) {
    const std::string_view cp(text.data() + b, static_cast<std::size_t>(e - b));
    units.push_back(Unit{b, e, is_space_cp(cp)});
  }
  return units;
}

void append_token(TokenSeq& seq, std::string_view text, Index begin, Index end,
                  std::int32_t id) {
  seq.ids.push_back(id);
  seq.pieces.emplace_back(text.substr(static_cast<std::size_t>(begin),
                                      static_cast<std::size_t>(end - begin)));
  seq.offsets.emplace_back(begin, end);
}

// Candidate pieces for a word: all vocab pieces plus an [UNK] fallback for a
// single unknown character.
struct Edge {
  std::size_t to;  // unit index after the piece
  double logp;
  std::int32_t id;  // kUnk for unknown single characters
};

std::vector<std::vector<Edge>> word_lattice(std::string_view text,
                                            const std::vector<Unit>& units, std::size_t lo,
                                            std::size_t hi, const Vocab& vocab) {
  std::vector<std::vector<Edge>> edges(hi - lo);
  for (std::size_t i = lo; i < hi; ++i) {
    std::string piece;
    for (std::size_t j = i; j < hi && j - i < static_cast<std::size_t>(vocab.max_piece_len());
         ++j) {
      piece.append(text.data() + units[j].begin,
                   static_cast<std::size_t>(units[j].end - units[j].begin));
      const std::int32_t id = vocab.piece_id(piece);
      if (id >= 0) {
        edges[i - lo].push_back(Edge{j + 1, vocab.log_probs()[static_cast<std::size_t>(id)], id});
      }
    }
    // Unknown single character fallback keeps every position reachable.
    const std::string_view cp(text.data() + units[i].begin,
                              static_cast<std::size_t>(units[i].end - units[i].begin));
    if (vocab.piece_id(cp) < 0) {
      edges[i - lo].push_back(Edge{i + 1, kUnkLogProb, Vocab::kUnk});
    }
  }
  return edges;
}

void segment_word_viterbi(std::string_view text, const std::vector<Unit>& units, std::size_t lo,
                          std::size_t hi, const Vocab& vocab, TokenSeq& out) {
  const std::size_t n = hi - lo;
  const auto edges = word_lattice(text, units, lo, hi, vocab);
  struct Best {
    double score = -std::numeric_limits<double>::infinity();
    Index pieces = 0;
    std::size_t next = 0;
    std::int32_t id = -1;
    std::size_t to = 0;
  };
  std::vector<Best> best(n + 1);
  best[n].score = 0.0;
  // Right-to-left so the tie break can prefer the longest leftmost piece.
  for (std::size_t ii = n; ii-- > 0;) {
    Best& b = best[ii];
    for (const Edge& e : edges[ii]) {
      const Best& tail = best[e.to - lo];
      if (!std::isfinite(tail.score)) continue;
      const double score = e.logp + tail.score;
      const Index pieces = 1 + tail.pieces;
      const Index len = static_cast<Index>(e.to - (ii + lo));
      bool better = false;
      if (score > b.score + 1e-12) {
        better = true;
      } else if (score > b.score - 1e-12) {
        if (pieces < b.pieces) better = true;
        else if (pieces == b.pieces && len > static_cast<Index>(b.to - (ii + lo))) better = true;
      }
      if (better || !std::isfinite(b.score)) {
        b.score = score;
        b.pieces = pieces;
        b.id = e.id;
        b.to = e.to;
      }
    }
  }
  std::size_t i = lo;
  while (i < hi) {
    const Best& b = best[i - lo];
    append_token(out, text, units[i].begin, units[b.to - 1].end, b.id);
    i = b.to;
  }
}

void segment_word_sample(std::string_view text, const std::vector<Unit>& units, std::size_t lo,
                         std::size_t hi, const Vocab& vocab, double alpha, Rng& rng,
                         TokenSeq& out) {
  const std::size_t n = hi - lo;
  const auto edges = word_lattice(text, units, lo, hi, vocab);
  // log Z[i] over all segmentations of the suffix from unit i.
  std::vector<double> z(n + 1, -std::numeric_limits<double>::infinity());
  z[n] = 0.0;
  for (std::size_t ii = n; ii-- > 0;) {
    double mx = -std::numeric_limits<double>::infinity();
    for (const Edge& e : edges[ii]) mx = std::max(mx, alpha * e.logp + z[e.to - lo]);
    double acc = 0.0;
    for (const Edge& e : edges[ii]) acc += std::exp(alpha * e.logp + z[e.to - lo] - mx);
    z[ii] = mx + std::log(acc);
  }
  std::size_t i = lo;
  while (i < hi) {
    const auto& cand = edges[i - lo];
    const double zi = z[i - lo];
    const double u = rng.uniform();
    double cum = 0.0;
    const Edge* chosen = &cand.back();
    for (const Edge& e : cand) {
      cum += std::exp(alpha * e.logp + z[e.to - lo] - zi);
      if (u < cum) {
        chosen = &e;
        break;
      }
    }
    append_token(out, text, units[i].begin, units[chosen->to - 1].end, chosen->id);
    i = chosen->to;
  }
}

template <class WordFn>
TokenSeq segment_common(std::string_view text, const Vocab& vocab, WordFn&& word_fn) {
  if (text.empty()) throw Error("EMPTY_TEXT", "cannot segment empty text");
  const auto units = split_units(text);
  TokenSeq out;
  std::size_t i = 0;
  while (i < units.size()) {
    if (units[i].space) {
      const std::string_view cp(text.data() + units[i].begin,
                                static_cast<std::size_t>(units[i].end - units[i].begin));
      const std::int32_t id = vocab.piece_id(cp);
      append_token(out, text, units[i].begin, units[i].end, id >= 0 ? id : Vocab::kUnk);
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < units.size() && !units[j].space) ++j;
    word_fn(units, i, j, out);
    i = j;
  }
  return out;
}

}  // namespace

TokenSeq segment_viterbi(std::string_view text, const Vocab& vocab) {
  return segment_common(text, vocab,
                        [&](const std::vector<Unit>& units, std::size_t lo, std::size_t hi,
                            TokenSeq& out) { segment_word_viterbi(text, units, lo, hi, vocab, out); });
}

TokenSeq segment_sample(std::string_view text, const Vocab& vocab, double alpha, Rng& rng) {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw Error("ALPHA_RANGE", "sampling alpha must be in (0,1]");
  }
  return segment_common(text, vocab,
                        [&](const std::vector<Unit>& units, std::size_t lo, std::size_t hi,
                            TokenSeq& out) {
                          segment_word_sample(text, units, lo, hi, vocab, alpha, rng, out);
                        });
}

double segmentation_score(const TokenSeq& seq, const Vocab& vocab) {
  double score = 0.0;
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    const std::int32_t id = seq.ids[i];
    if (id == Vocab::kUnk) {
      score += kUnkLogProb;
    } else if (!Vocab::is_special(id)) {
      score += vocab.log_probs()[static_cast<std::size_t>(id)];
    }
  }
  return score;
}

}  // namespace fel::tok
