#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fel/rng.hpp"
#include "fel/tokenizer.hpp"

#include "json.hpp"

namespace fel::data {

using Index = std::int64_t;

// Character (byte) span, [begin, end).
struct Span {
  Index begin = 0;
  Index end = 0;
  bool operator==(const Span&) const = default;
};

enum class StreamTag { WikiLike, WebLike };

struct Document {
  std::string raw;    // with [[...]] markup
  std::string plain;  // markup removed
  std::vector<Span> links;
  StreamTag stream = StreamTag::WikiLike;
};

// [[anchor]] markup, no nesting. Unbalanced brackets are a parse error
// reporting the byte position.
Document parse_markup(const std::string& raw);

// Token-level 4-class boundary scheme.
constexpr std::int32_t kLabelStart = 0;     // S
constexpr std::int32_t kLabelEnd = 1;       // E
constexpr std::int32_t kLabelStartEnd = 2;  // S&E
constexpr std::int32_t kLabelOutside = 3;   // ~(S&E)
constexpr std::int32_t kLabelIgnore = -1;

// Tokens partially overlapping a span edge count as inside (outward snap).
std::vector<std::int32_t> encode_boundary_labels(const tok::TokenSeq& tokens,
                                                 std::vector<Span> spans);

// "[" before each S or S&E token, "]" after each E or S&E token; unmatched
// brackets permitted since labels are per-token.
std::string decode_brackets(const std::vector<std::int32_t>& labels, const tok::TokenSeq& tokens);

struct MaskResult {
  std::vector<std::int32_t> positions;  // ascending
  std::vector<std::int32_t> labels;     // original ids at those positions
  std::vector<std::int32_t> corrupted;  // full sequence after 80/10/10 corruption
};

// Rarity-biased masking: position i is selected independently with
// probability rate * n_maskable * w_i / sum(w), w = freq^(-1/2). Specials are
// never maskable.
MaskResult weighted_mask(const std::vector<std::int32_t>& ids,
                         const std::vector<double>& freq_by_id, double rate, Rng& rng);

// Objective bits an example supervises. Values match the model head bits
// (hyp labels train the boundary head, pad labels the CLS binary head).
enum Objective : unsigned {
  kObjMlm = 1u,
  kObjNsp = 2u,
  kObjHyp = 4u,
  kObjPad = 8u,
};
constexpr unsigned kAllObjectives = kObjMlm | kObjNsp | kObjHyp | kObjPad;

std::string objective_name(unsigned bit);
unsigned objective_from_name(const std::string& name);
unsigned objectives_from_names(const std::vector<std::string>& names);
std::vector<std::string> objective_names(unsigned mask);

struct TrainingExample {
  std::vector<std::int32_t> ids;
  std::vector<std::int32_t> segment_ids;
  std::vector<std::int32_t> mlm_positions;
  std::vector<std::int32_t> mlm_labels;
  std::int32_t nsp_label = -1;
  std::vector<std::int32_t> boundary_labels;  // empty or len(ids)
  std::int32_t pad_label = -1;
  unsigned objective_mask = 0;

  bool operator==(const TrainingExample&) const = default;
  nlohmann::json to_json() const;
  static TrainingExample from_json(const nlohmann::json& j);
};

struct CTExample {
  std::string query;
  std::vector<Span> spans;
  bool operator==(const CTExample&) const = default;
  nlohmann::json to_json() const;
  static CTExample from_json(const nlohmann::json& j);
};

struct ADExample {
  std::string acronym;
  std::string snippet;
  int label = 0;
  bool operator==(const ADExample&) const = default;
  nlohmann::json to_json() const;
  static ADExample from_json(const nlohmann::json& j);
};

// Concatenation of the first characters of 2..6 unigrams.
std::string initials(const std::vector<std::string>& words);

// True iff some contiguous 2..6-unigram span of chunk has these initials.
bool has_accidental_match(const std::string& acronym, const std::string& chunk);

std::vector<std::string> whitespace_split(const std::string& text);

struct AdPair {
  ADExample positive;
  ADExample negative;
};

// Pseudo acronym detection pair for pretraining: positive from a random 2..6
// span of chunk; negative by letter mutation or by taking a positive from
// other_chunk, redrawn until it has no accidental match in chunk.
AdPair gen_pad_pair(const std::string& chunk, const std::string& other_chunk, Rng& rng);

// Finetuning pair: (known_acronym, 1) plus one filtered negative.
// entity_word_spans lists the word index ranges [first, last] of entities in
// the snippet; negatives may not equal the initials of any of them.
AdPair gen_ad_finetune_pair(const std::string& snippet,
                            const std::vector<std::pair<Index, Index>>& entity_word_spans,
                            const std::string& known_acronym, Rng& rng);

const std::vector<std::string>& stopwords50();

bool check_disjoint_split(const std::vector<std::string>& set_a,
                          const std::vector<std::string>& set_b,
                          const std::vector<std::string>& stopwords);
std::vector<std::string> shared_nonstop_unigrams(const std::vector<std::string>& set_a,
                                                 const std::vector<std::string>& set_b,
                                                 const std::vector<std::string>& stopwords);

// ---------------------------------------------------------------------------
// Synthetic planted-entity world used for desk-scale experiments.

struct CorpusParams {
  Index n_docs = 1000;
  Index entity_lexicon_size = 60;
  Index doc_len = 200;  // words per document
  std::uint64_t seed = 1;
  double web_fraction = 0.3;
  Index ct_pool_size = 240;
  Index ct_test_size = 160;
  Index ad_snippets = 300;

  nlohmann::json to_json() const;
  static CorpusParams from_json(const nlohmann::json& j);
};

struct SyntheticCorpus {
  std::vector<Document> wiki_docs;
  std::vector<Document> web_docs;
  std::vector<std::vector<std::string>> pretrain_entities;  // word phrases
  std::vector<std::vector<std::string>> finetune_entities;
  std::vector<CTExample> ct_pool;
  std::vector<CTExample> ct_test;
  std::vector<ADExample> ad_examples;  // exactly 50/50 labels
};

SyntheticCorpus gen_synthetic_corpus(const CorpusParams& params);

// ---------------------------------------------------------------------------
// Example assembly.

struct Chunk {
  Index doc = 0;
  Index index_in_doc = 0;
  std::string text;
  std::vector<Span> links;  // spans into text
  StreamTag stream = StreamTag::WikiLike;
};

std::vector<Chunk> chunk_documents(const std::vector<Document>& docs, Index chunk_words,
                                   StreamTag stream);

struct NspDraw {
  std::size_t a = 0;
  std::size_t b = 0;
  int label = 0;
};

// 50% adjacent pair (label 1), 50% second segment from another document
// (label 0). Requires at least two documents.
NspDraw make_nsp_pair(const std::vector<Chunk>& chunks, Rng& rng);

struct PackOptions {
  Index max_seq_len = 128;
  double mask_rate = 0.15;
  double alpha = 0.2;  // web-stream sampled segmentation
};

TrainingExample make_mlm_nsp_example(const std::vector<Chunk>& chunks, const tok::Vocab& vocab,
                                     const std::vector<double>& freq_by_id,
                                     const PackOptions& opt, unsigned objectives, Rng& rng);

TrainingExample make_hyp_example(const Chunk& chunk, const tok::Vocab& vocab,
                                 const PackOptions& opt);

TrainingExample make_pad_example(const ADExample& example, const tok::Vocab& vocab,
                                 const PackOptions& opt, Rng* sample_rng);

TrainingExample encode_ct_example(const CTExample& example, const tok::Vocab& vocab,
                                  Index max_seq_len);
TrainingExample encode_ad_example(const ADExample& example, const tok::Vocab& vocab,
                                  Index max_seq_len);

// ---------------------------------------------------------------------------
// File formats.

void write_corpus(const std::vector<Document>& docs, const std::string& path);
std::vector<Document> read_corpus(const std::string& path, StreamTag stream);

void write_jsonl(const std::vector<nlohmann::json>& records, const std::string& path);
std::vector<nlohmann::json> read_jsonl(const std::string& path);

void write_ct_dataset(const std::vector<CTExample>& v, const std::string& path);
std::vector<CTExample> read_ct_dataset(const std::string& path);
void write_ad_dataset(const std::vector<ADExample>& v, const std::string& path);
std::vector<ADExample> read_ad_dataset(const std::string& path);
void write_example_shard(const std::vector<TrainingExample>& v, const std::string& path);
std::vector<TrainingExample> read_example_shard(const std::string& path);

}  // namespace fel::data
