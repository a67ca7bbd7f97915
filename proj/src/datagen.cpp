#include "fel/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <unordered_set>

#include "fel/error.hpp"

namespace fel::data {

// ---------------------------------------------------------------------------
// markup

Document parse_markup(const std::string& raw) {
  Document doc;
  doc.raw = raw;
  std::string& plain = doc.plain;
  plain.reserve(raw.size());
  std::size_t i = 0;
  Index open_at = -1;
  Index anchor_begin = 0;
  while (i < raw.size()) {
    if (raw.compare(i, 2, "[[") == 0) {
      if (open_at >= 0) {
        throw Error("PARSE", "nested '[[' at byte " + std::to_string(i));
      }
      open_at = static_cast<Index>(i);
      anchor_begin = static_cast<Index>(plain.size());
      i += 2;
    } else if (raw.compare(i, 2, "]]") == 0) {
      if (open_at < 0) {
        throw Error("PARSE", "unmatched ']]' at byte " + std::to_string(i));
      }
      const Index anchor_end = static_cast<Index>(plain.size());
      if (anchor_end == anchor_begin) {
        throw Error("PARSE", "empty link anchor at byte " + std::to_string(i));
      }
      doc.links.push_back(Span{anchor_begin, anchor_end});
      open_at = -1;
      i += 2;
    } else {
      plain.push_back(raw[i]);
      ++i;
    }
  }
  if (open_at >= 0) {
    throw Error("PARSE", "unterminated '[[' at byte " + std::to_string(open_at));
  }
  return doc;
}

// ---------------------------------------------------------------------------
// boundary labels

std::vector<std::int32_t> encode_boundary_labels(const tok::TokenSeq& tokens,
                                                 std::vector<Span> spans) {
  std::sort(spans.begin(), spans.end(),
            [](const Span& a, const Span& b) { return a.begin < b.begin; });
  for (std::size_t i = 0; i + 1 < spans.size(); ++i) {
    if (spans[i].end > spans[i + 1].begin) {
      throw Error("SPANS_OVERLAP", "overlapping spans at byte " + std::to_string(spans[i].end));
    }
  }
  const std::size_t n = tokens.ids.size();
  std::vector<std::int32_t> labels(n, kLabelOutside);
  std::int64_t prev_last = -1;
  for (const Span& span : spans) {
    std::int64_t first = -1, last = -1;
    for (std::size_t t = 0; t < n; ++t) {
      const auto [tb, te] = tokens.offsets[t];
      if (tb < span.end && te > span.begin) {  // intersects: snapped inside
        if (first < 0) first = static_cast<std::int64_t>(t);
        last = static_cast<std::int64_t>(t);
      }
    }
    if (first < 0) continue;  // span covers no token (whitespace-only)
    if (first <= prev_last) {
      throw Error("SPANS_OVERLAP", "spans overlap after snapping to token boundaries");
    }
    prev_last = last;
    if (first == last) {
      labels[static_cast<std::size_t>(first)] = kLabelStartEnd;
    } else {
      labels[static_cast<std::size_t>(first)] = kLabelStart;
      labels[static_cast<std::size_t>(last)] = kLabelEnd;
    }
  }
  return labels;
}

std::string decode_brackets(const std::vector<std::int32_t>& labels,
                            const tok::TokenSeq& tokens) {
  std::string out;
  for (std::size_t t = 0; t < tokens.pieces.size(); ++t) {
    const std::int32_t label = t < labels.size() ? labels[t] : kLabelIgnore;
    if (label == kLabelIgnore) continue;
    if (label == kLabelStart || label == kLabelStartEnd) out += "[";
    out += tokens.pieces[t];
    if (label == kLabelEnd || label == kLabelStartEnd) out += "]";
  }
  return out;
}

// ---------------------------------------------------------------------------
// masking

MaskResult weighted_mask(const std::vector<std::int32_t>& ids,
                         const std::vector<double>& freq_by_id, double rate, Rng& rng) {
  if (!(rate > 0.0 && rate < 1.0)) throw Error("MASK_RATE", "mask rate must be in (0,1)");
  std::vector<std::size_t> maskable;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!tok::Vocab::is_special(ids[i])) maskable.push_back(i);
  }
  if (maskable.empty()) throw Error("NO_MASKABLE", "no maskable positions");

  double wsum = 0.0;
  std::vector<double> weights(maskable.size());
  for (std::size_t k = 0; k < maskable.size(); ++k) {
    const std::int32_t id = ids[maskable[k]];
    if (id < 0 || static_cast<std::size_t>(id) >= freq_by_id.size() || freq_by_id[id] <= 0.0) {
      throw Error("FREQ_NONPOS", "missing or non-positive frequency for id " + std::to_string(id));
    }
    weights[k] = 1.0 / std::sqrt(freq_by_id[id]);
    wsum += weights[k];
  }

  MaskResult result;
  result.corrupted = ids;
  const double n = static_cast<double>(maskable.size());
  for (std::size_t k = 0; k < maskable.size(); ++k) {
    const double p = std::min(1.0, rate * n * weights[k] / wsum);
    if (rng.uniform() < p) {
      result.positions.push_back(static_cast<std::int32_t>(maskable[k]));
      result.labels.push_back(ids[maskable[k]]);
    }
  }
  const auto vocab_size = static_cast<std::int64_t>(freq_by_id.size());
  for (std::int32_t pos : result.positions) {
    const double r = rng.uniform();
    if (r < 0.8) {
      result.corrupted[static_cast<std::size_t>(pos)] = tok::Vocab::kMask;
    } else if (r < 0.9) {
      result.corrupted[static_cast<std::size_t>(pos)] = static_cast<std::int32_t>(
          rng.uniform_int(tok::Vocab::kNumSpecials, vocab_size - 1));
    }  // else unchanged
  }
  return result;
}

// ---------------------------------------------------------------------------
// objectives

std::string objective_name(unsigned bit) {
  switch (bit) {
    case kObjMlm: return "mlm";
    case kObjNsp: return "nsp";
    case kObjHyp: return "hyp";
    case kObjPad: return "pad";
  }
  throw Error("OBJECTIVE_UNKNOWN", "bad objective bit");
}

unsigned objective_from_name(const std::string& name) {
  if (name == "mlm") return kObjMlm;
  if (name == "nsp") return kObjNsp;
  if (name == "hyp") return kObjHyp;
  if (name == "pad") return kObjPad;
  throw Error("OBJECTIVE_UNKNOWN", "unknown objective '" + name + "'");
}

unsigned objectives_from_names(const std::vector<std::string>& names) {
  unsigned mask = 0;
  for (const auto& n : names) mask |= objective_from_name(n);
  return mask;
}

std::vector<std::string> objective_names(unsigned mask) {
  std::vector<std::string> names;
  for (unsigned bit : {kObjMlm, kObjNsp, kObjHyp, kObjPad}) {
    if (mask & bit) names.push_back(objective_name(bit));
  }
  return names;
}

// ---------------------------------------------------------------------------
// record serialization

nlohmann::json TrainingExample::to_json() const {
  nlohmann::json j;
  j["ids"] = ids;
  j["segment_ids"] = segment_ids;
  j["objective_mask"] = objective_names(objective_mask);
  if (!mlm_positions.empty()) {
    j["mlm_positions"] = mlm_positions;
    j["mlm_labels"] = mlm_labels;
  }
  if (nsp_label >= 0) j["nsp_label"] = nsp_label;
  if (!boundary_labels.empty()) j["boundary_labels"] = boundary_labels;
  if (pad_label >= 0) j["pad_label"] = pad_label;
  return j;
}

TrainingExample TrainingExample::from_json(const nlohmann::json& j) {
  TrainingExample e;
  e.ids = j.at("ids").get<std::vector<std::int32_t>>();
  e.segment_ids = j.at("segment_ids").get<std::vector<std::int32_t>>();
  e.objective_mask = objectives_from_names(j.at("objective_mask").get<std::vector<std::string>>());
  if (j.contains("mlm_positions")) {
    e.mlm_positions = j.at("mlm_positions").get<std::vector<std::int32_t>>();
    e.mlm_labels = j.at("mlm_labels").get<std::vector<std::int32_t>>();
  }
  if (j.contains("nsp_label")) e.nsp_label = j.at("nsp_label").get<std::int32_t>();
  if (j.contains("boundary_labels"))
    e.boundary_labels = j.at("boundary_labels").get<std::vector<std::int32_t>>();
  if (j.contains("pad_label")) e.pad_label = j.at("pad_label").get<std::int32_t>();
  return e;
}

nlohmann::json CTExample::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const Span& s : spans) arr.push_back({s.begin, s.end});
  return nlohmann::json{{"query", query}, {"spans", arr}};
}

CTExample CTExample::from_json(const nlohmann::json& j) {
  CTExample e;
  e.query = j.at("query").get<std::string>();
  for (const auto& s : j.at("spans")) {
    e.spans.push_back(Span{s.at(0).get<Index>(), s.at(1).get<Index>()});
  }
  return e;
}

nlohmann::json ADExample::to_json() const {
  return nlohmann::json{{"acronym", acronym}, {"snippet", snippet}, {"label", label}};
}

ADExample ADExample::from_json(const nlohmann::json& j) {
  return ADExample{j.at("acronym").get<std::string>(), j.at("snippet").get<std::string>(),
                   j.at("label").get<int>()};
}

// ---------------------------------------------------------------------------
// acronyms

std::vector<std::string> whitespace_split(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream is(text);
  std::string w;
  while (is >> w) words.push_back(w);
  return words;
}

std::string initials(const std::vector<std::string>& words) {
  if (words.size() < 2 || words.size() > 6) {
    throw Error("SPAN_LEN", "initials span must cover 2..6 unigrams, got " +
                                std::to_string(words.size()));
  }
  std::string out;
  for (const auto& w : words) {
    if (w.empty()) throw Error("SPAN_LEN", "empty unigram in initials span");
    const auto cps = tok::codepoint_spans(w);
    out += w.substr(0, static_cast<std::size_t>(cps.front().second));
  }
  return out;
}

bool has_accidental_match(const std::string& acronym, const std::string& chunk) {
  const auto words = whitespace_split(chunk);
  const std::size_t len = acronym.size();  // first characters only, ASCII here
  for (std::size_t span = 2; span <= 6 && span <= words.size(); ++span) {
    for (std::size_t start = 0; start + span <= words.size(); ++start) {
      std::string cand;
      for (std::size_t k = 0; k < span; ++k) {
        const auto cps = tok::codepoint_spans(words[start + k]);
        cand += words[start + k].substr(0, static_cast<std::size_t>(cps.front().second));
      }
      if (cand.size() == len && cand == acronym) return true;
    }
  }
  return false;
}

namespace {

bool verbatim_unigram(const std::string& needle, const std::vector<std::string>& words) {
  return std::find(words.begin(), words.end(), needle) != words.end();
}

std::string mutate_acronym(const std::string& acronym, Rng& rng) {
  // m ~ Uniform{1..len} positions without replacement, each replaced by a
  // uniform letter a-z different from the original.
  const std::size_t len = acronym.size();
  std::vector<std::size_t> order(len);
  for (std::size_t i = 0; i < len; ++i) order[i] = i;
  rng.shuffle(order);
  const auto m = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(len)));
  std::string out = acronym;
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t pos = order[k];
    const int shift = static_cast<int>(rng.uniform_int(0, 24));
    char c = static_cast<char>('a' + shift);
    if (c >= acronym[pos]) c = static_cast<char>(c + 1);
    out[pos] = c;
  }
  return out;
}

constexpr int kMaxRejects = 100;

}  // namespace

AdPair gen_pad_pair(const std::string& chunk, const std::string& other_chunk, Rng& rng) {
  const auto words = whitespace_split(chunk);
  if (words.size() < 6) {
    throw Error("CHUNK_SHORT", "pseudo-acronym chunk needs at least 6 unigrams");
  }
  const auto other_words = whitespace_split(other_chunk);

  auto random_initials = [&rng](const std::vector<std::string>& ws) {
    const auto max_len = std::min<std::int64_t>(6, static_cast<std::int64_t>(ws.size()));
    const auto len = rng.uniform_int(2, max_len);
    const auto start = rng.uniform_int(0, static_cast<std::int64_t>(ws.size()) - len);
    return initials(std::vector<std::string>(ws.begin() + start, ws.begin() + start + len));
  };

  std::string positive;
  for (int attempt = 0;; ++attempt) {
    if (attempt >= kMaxRejects) {
      throw Error("PAD_GEN", "could not draw a positive pseudo-acronym for chunk");
    }
    positive = random_initials(words);
    if (!verbatim_unigram(positive, words)) break;
  }

  std::string negative;
  for (int attempt = 0;; ++attempt) {
    if (attempt >= kMaxRejects) {
      throw Error("PAD_GEN", "could not draw a negative pseudo-acronym for chunk");
    }
    // The method coin is re-flipped on every retry.
    std::string cand;
    if (rng.bernoulli(0.5)) {
      cand = mutate_acronym(positive, rng);
    } else {
      if (other_words.size() < 2) continue;
      cand = random_initials(other_words);
    }
    if (has_accidental_match(cand, chunk)) continue;
    if (verbatim_unigram(cand, words)) continue;
    negative = cand;
    break;
  }
  return AdPair{ADExample{positive, chunk, 1}, ADExample{negative, chunk, 0}};
}

AdPair gen_ad_finetune_pair(const std::string& snippet,
                            const std::vector<std::pair<Index, Index>>& entity_word_spans,
                            const std::string& known_acronym, Rng& rng) {
  const auto words = whitespace_split(snippet);
  if (verbatim_unigram(known_acronym, words)) {
    throw Error("AD_PRECONDITION", "acronym appears verbatim in snippet");
  }
  std::vector<std::string> entity_initials;
  for (const auto& [first, last] : entity_word_spans) {
    if (first < 0 || last < first || static_cast<std::size_t>(last) >= words.size()) {
      throw Error("AD_PRECONDITION", "entity word span outside snippet");
    }
    entity_initials.push_back(initials(std::vector<std::string>(
        words.begin() + first, words.begin() + last + 1)));
  }

  std::string negative;
  for (int attempt = 0;; ++attempt) {
    if (attempt >= kMaxRejects) {
      throw Error("AD_GEN", "could not draw an acronym-detection negative");
    }
    std::string cand;
    bool scan_filter = false;
    if (rng.bernoulli(0.5)) {
      // A pseudo acronym detection positive: matches some span by
      // construction, so only the entity filter applies.
      if (words.size() < 2) continue;
      const auto max_len = std::min<std::int64_t>(6, static_cast<std::int64_t>(words.size()));
      const auto len = rng.uniform_int(2, max_len);
      const auto start = rng.uniform_int(0, static_cast<std::int64_t>(words.size()) - len);
      cand = initials(std::vector<std::string>(words.begin() + start, words.begin() + start + len));
    } else {
      cand = mutate_acronym(known_acronym, rng);
      scan_filter = true;
    }
    if (std::find(entity_initials.begin(), entity_initials.end(), cand) !=
        entity_initials.end()) {
      continue;
    }
    if (scan_filter && has_accidental_match(cand, snippet)) continue;
    if (verbatim_unigram(cand, words)) continue;
    negative = cand;
    break;
  }
  return AdPair{ADExample{known_acronym, snippet, 1}, ADExample{negative, snippet, 0}};
}

// ---------------------------------------------------------------------------
// stopwords and split checks

const std::vector<std::string>& stopwords50() {
  static const std::vector<std::string> words = {
      "the",  "of",    "to",   "a",     "in",    "is",     "it",      "for",  "on",
      "with", "as",    "at",   "by",    "from",  "that",   "this",    "be",   "are",
      "was",  "were",  "or",   "an",    "and",   "not",    "but",     "if",   "then",
      "so",   "do",    "does", "did",   "has",   "have",   "had",     "can",  "will",
      "would", "should", "could", "about", "into", "over",  "under",   "when", "what",
      "which", "who",  "how",  "where", "why"};
  return words;
}

std::vector<std::string> shared_nonstop_unigrams(const std::vector<std::string>& set_a,
                                                 const std::vector<std::string>& set_b,
                                                 const std::vector<std::string>& stopwords) {
  const std::unordered_set<std::string> stops(stopwords.begin(), stopwords.end());
  auto collect = [&stops](const std::vector<std::string>& texts) {
    std::set<std::string> out;
    for (const auto& t : texts) {
      for (const auto& w : whitespace_split(t)) {
        if (!stops.count(w)) out.insert(w);
      }
    }
    return out;
  };
  const auto ua = collect(set_a);
  const auto ub = collect(set_b);
  std::vector<std::string> shared;
  std::set_intersection(ua.begin(), ua.end(), ub.begin(), ub.end(), std::back_inserter(shared));
  return shared;
}

bool check_disjoint_split(const std::vector<std::string>& set_a,
                          const std::vector<std::string>& set_b,
                          const std::vector<std::string>& stopwords) {
  return shared_nonstop_unigrams(set_a, set_b, stopwords).empty();
}

// ---------------------------------------------------------------------------
// synthetic corpus

nlohmann::json CorpusParams::to_json() const {
  return nlohmann::json{{"n_docs", n_docs},
                        {"entity_lexicon_size", entity_lexicon_size},
                        {"doc_len", doc_len},
                        {"seed", seed},
                        {"web_fraction", web_fraction},
                        {"ct_pool_size", ct_pool_size},
                        {"ct_test_size", ct_test_size},
                        {"ad_snippets", ad_snippets}};
}

CorpusParams CorpusParams::from_json(const nlohmann::json& j) {
  CorpusParams p;
  p.n_docs = j.at("n_docs").get<Index>();
  p.entity_lexicon_size = j.at("entity_lexicon_size").get<Index>();
  p.doc_len = j.at("doc_len").get<Index>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.web_fraction = j.at("web_fraction").get<double>();
  p.ct_pool_size = j.at("ct_pool_size").get<Index>();
  p.ct_test_size = j.at("ct_test_size").get<Index>();
  p.ad_snippets = j.at("ad_snippets").get<Index>();
  return p;
}

namespace {

// Filler words avoid 'z' entirely; entity words end in a z-suffix. The marker
// gives the boundary and acronym tasks a spelling cue that generalizes to
// entity words never seen in pretraining.
constexpr const char* kFillerLetters = "abcdefghilmnoprstuvw";
const std::vector<std::string> kEntitySuffixes = {"zor", "zix", "zen", "zul"};

std::string random_filler_word(Rng& rng, Index min_len, Index max_len) {
  const Index len = rng.uniform_int(min_len, max_len);
  std::string w;
  const auto n_letters = static_cast<std::int64_t>(std::string(kFillerLetters).size());
  for (Index i = 0; i < len; ++i) {
    w += kFillerLetters[static_cast<std::size_t>(rng.uniform_int(0, n_letters - 1))];
  }
  return w;
}

std::vector<std::string> distinct_words(Rng& rng, Index count,
                                        const std::function<std::string(Rng&)>& gen,
                                        std::unordered_set<std::string>& taken) {
  std::vector<std::string> out;
  while (static_cast<Index>(out.size()) < count) {
    std::string w = gen(rng);
    if (taken.insert(w).second) out.push_back(std::move(w));
  }
  return out;
}

template <class T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(v.size()) - 1))];
}

std::vector<std::vector<std::string>> make_phrases(const std::vector<std::string>& words,
                                                   Index count, Rng& rng, bool allow_single) {
  std::vector<std::vector<std::string>> phrases;
  const auto n = static_cast<std::int64_t>(words.size());
  for (Index i = 0; i < count; ++i) {
    const double r = rng.uniform();
    std::size_t len = allow_single && r < 0.15 ? 1 : (r < 0.65 ? 2 : 3);
    if (static_cast<std::int64_t>(len) > n) len = static_cast<std::size_t>(n);
    const auto start = rng.uniform_int(0, n - 1);
    std::vector<std::string> phrase;
    for (std::size_t k = 0; k < len; ++k) {
      phrase.push_back(words[static_cast<std::size_t>((start + static_cast<std::int64_t>(k)) % n)]);
    }
    phrases.push_back(std::move(phrase));
  }
  return phrases;
}

const std::vector<std::string> kDeterminers = {"the", "a", "about", "on"};
const std::vector<std::string> kConnectors = {"of", "in", "for", "with"};

struct SentencePlan {
  std::vector<std::string> words;
  Index entity_first = -1;  // word indices of the planted phrase
  Index entity_last = -1;
};

SentencePlan entity_sentence(const std::vector<std::vector<std::string>>& phrases,
                             const std::vector<std::string>& fillers, Rng& rng) {
  SentencePlan s;
  s.words.push_back(pick(kDeterminers, rng));
  const auto& phrase = pick(phrases, rng);
  s.entity_first = static_cast<Index>(s.words.size());
  for (const auto& w : phrase) s.words.push_back(w);
  s.entity_last = static_cast<Index>(s.words.size()) - 1;
  s.words.push_back(pick(kConnectors, rng));
  s.words.push_back(pick(fillers, rng));
  return s;
}

std::vector<std::string> filler_sentence(const std::vector<std::string>& fillers, Rng& rng) {
  const Index len = rng.uniform_int(4, 9);
  std::vector<std::string> words;
  for (Index i = 0; i < len; ++i) {
    if (rng.uniform() < 0.25) {
      words.push_back(pick(stopwords50(), rng));
    } else {
      words.push_back(pick(fillers, rng));
    }
  }
  return words;
}

Document synth_document(std::uint64_t doc_seed, Index doc_len,
                        const std::vector<std::vector<std::string>>& phrases,
                        const std::vector<std::string>& fillers, bool markup,
                        double entity_rate) {
  Rng rng(doc_seed);
  std::string raw;
  Index n_words = 0;
  while (n_words < doc_len) {
    if (!raw.empty()) raw += " ";
    if (rng.uniform() < entity_rate) {
      const SentencePlan s = entity_sentence(phrases, fillers, rng);
      for (Index i = 0; i < static_cast<Index>(s.words.size()); ++i) {
        if (i) raw += " ";
        const bool in_entity = i >= s.entity_first && i <= s.entity_last;
        if (markup && i == s.entity_first) raw += "[[";
        raw += s.words[static_cast<std::size_t>(i)];
        if (markup && in_entity && i == s.entity_last) raw += "]]";
      }
      n_words += static_cast<Index>(s.words.size());
    } else {
      const auto words = filler_sentence(fillers, rng);
      for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) raw += " ";
        raw += words[i];
      }
      n_words += static_cast<Index>(words.size());
    }
  }
  Document doc = parse_markup(raw);
  doc.stream = markup ? StreamTag::WikiLike : StreamTag::WebLike;
  return doc;
}

CTExample make_ct_query(const std::vector<std::vector<std::string>>& phrases,
                        const std::vector<std::string>& fillers, Rng& rng) {
  static const std::vector<std::vector<std::string>> kLeads = {
      {"what", "is", "the"}, {"when", "was", "the"}, {"how", "can", "a"},
      {"where", "is", "the"}, {"which", "of", "the"}};
  CTExample e;
  std::string q;
  std::vector<Span> spans;
  auto append_word = [&q](const std::string& w) {
    if (!q.empty()) q += " ";
    q += w;
  };
  auto append_phrase = [&](const std::vector<std::string>& phrase) {
    if (!q.empty()) q += " ";
    const Index begin = static_cast<Index>(q.size());
    for (std::size_t i = 0; i < phrase.size(); ++i) {
      if (i) q += " ";
      q += phrase[i];
    }
    spans.push_back(Span{begin, static_cast<Index>(q.size())});
  };

  for (const auto& w : pick(kLeads, rng)) append_word(w);
  append_phrase(pick(phrases, rng));
  append_word(pick(kConnectors, rng));
  append_word(pick(fillers, rng));
  if (rng.uniform() < 0.25) {
    append_word(pick(kDeterminers, rng));
    append_phrase(pick(phrases, rng));
  }
  e.query = std::move(q);
  e.spans = std::move(spans);
  return e;
}

}  // namespace

SyntheticCorpus gen_synthetic_corpus(const CorpusParams& params) {
  if (params.n_docs <= 0 || params.entity_lexicon_size <= 0 || params.doc_len <= 0 ||
      params.ct_pool_size <= 0 || params.ct_test_size <= 0 || params.ad_snippets <= 0) {
    throw Error("CORPUS_PARAMS", "synthetic corpus sizes must be positive");
  }
  Rng rng(derive_seed(params.seed, 0x1e0));
  std::unordered_set<std::string> taken(stopwords50().begin(), stopwords50().end());

  auto filler_gen = [](Rng& r) { return random_filler_word(r, 2, 6); };
  auto entity_gen = [](Rng& r) {
    return random_filler_word(r, 2, 4) + pick(kEntitySuffixes, r);
  };

  const auto fillers = distinct_words(rng, 150, filler_gen, taken);
  const std::vector<std::string> fill_pre(fillers.begin(), fillers.begin() + 100);
  const std::vector<std::string> fill_pool(fillers.begin() + 100, fillers.begin() + 125);
  const std::vector<std::string> fill_test(fillers.begin() + 125, fillers.end());

  const auto entity_words = distinct_words(rng, params.entity_lexicon_size, entity_gen, taken);
  const auto n_pre = static_cast<std::size_t>(
      std::llround(static_cast<double>(entity_words.size()) * 0.6));
  const std::vector<std::string> ent_pre(entity_words.begin(), entity_words.begin() + n_pre);
  const std::vector<std::string> ent_fine(entity_words.begin() + n_pre, entity_words.end());
  const std::size_t n_fine_pool = ent_fine.size() / 2;
  const std::vector<std::string> ent_pool(ent_fine.begin(), ent_fine.begin() + n_fine_pool);
  const std::vector<std::string> ent_test(ent_fine.begin() + n_fine_pool, ent_fine.end());
  if (ent_pre.size() < 2 || ent_pool.size() < 2 || ent_test.size() < 2) {
    throw Error("LEXICON_SPLIT", "entity lexicon too small to split");
  }

  SyntheticCorpus corpus;
  corpus.pretrain_entities = make_phrases(ent_pre, static_cast<Index>(ent_pre.size()) * 2, rng,
                                          /*allow_single=*/true);
  corpus.finetune_entities = make_phrases(ent_fine, static_cast<Index>(ent_fine.size()) * 2, rng,
                                          /*allow_single=*/true);
  const auto pool_phrases = make_phrases(ent_pool, static_cast<Index>(ent_pool.size()) * 3, rng,
                                         /*allow_single=*/true);
  const auto test_phrases = make_phrases(ent_test, static_cast<Index>(ent_test.size()) * 3, rng,
                                         /*allow_single=*/true);

  const Index n_web = static_cast<Index>(
      std::llround(static_cast<double>(params.n_docs) * params.web_fraction));
  const Index n_wiki = params.n_docs - n_web;
  for (Index d = 0; d < params.n_docs; ++d) {
    const bool wiki = d < n_wiki;
    corpus.wiki_docs.reserve(static_cast<std::size_t>(n_wiki));
    Document doc = synth_document(derive_seed(params.seed, static_cast<std::uint64_t>(d)),
                                  params.doc_len, corpus.pretrain_entities, fill_pre, wiki,
                                  wiki ? 0.4 : 0.25);
    (wiki ? corpus.wiki_docs : corpus.web_docs).push_back(std::move(doc));
  }

  Rng ct_rng(derive_seed(params.seed, 0xc7));
  for (Index i = 0; i < params.ct_pool_size; ++i) {
    corpus.ct_pool.push_back(make_ct_query(pool_phrases, fill_pool, ct_rng));
  }
  for (Index i = 0; i < params.ct_test_size; ++i) {
    corpus.ct_test.push_back(make_ct_query(test_phrases, fill_test, ct_rng));
  }

  // AD snippets use multi-word finetune phrases so the acronym always covers
  // 2..6 unigrams.
  std::vector<std::vector<std::string>> ad_phrases;
  for (const auto& p : corpus.finetune_entities) {
    if (p.size() >= 2) ad_phrases.push_back(p);
  }
  if (ad_phrases.empty()) throw Error("LEXICON_SPLIT", "no multi-word finetune entities");
  Rng ad_rng(derive_seed(params.seed, 0xad));
  for (Index i = 0; i < params.ad_snippets; ++i) {
    for (int attempt = 0;; ++attempt) {
      if (attempt >= kMaxRejects) throw Error("AD_GEN", "could not build an AD snippet");
      const auto& phrase = pick(ad_phrases, ad_rng);
      SentencePlan lead;
      lead.words.push_back(pick(kDeterminers, ad_rng));
      lead.entity_first = 1;
      for (const auto& w : phrase) lead.words.push_back(w);
      lead.entity_last = static_cast<Index>(lead.words.size()) - 1;
      lead.words.push_back(pick(kConnectors, ad_rng));
      lead.words.push_back(pick(fill_pre, ad_rng));
      auto tail = filler_sentence(fill_pre, ad_rng);
      std::vector<std::string> words = lead.words;
      words.insert(words.end(), tail.begin(), tail.end());
      std::string snippet;
      for (std::size_t k = 0; k < words.size(); ++k) {
        if (k) snippet += " ";
        snippet += words[k];
      }
      const std::string acr = initials(phrase);
      if (verbatim_unigram(acr, words)) continue;
      AdPair pair = gen_ad_finetune_pair(snippet, {{lead.entity_first, lead.entity_last}}, acr,
                                         ad_rng);
      corpus.ad_examples.push_back(std::move(pair.positive));
      corpus.ad_examples.push_back(std::move(pair.negative));
      break;
    }
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// chunking and packing

std::vector<Chunk> chunk_documents(const std::vector<Document>& docs, Index chunk_words,
                                   StreamTag stream) {
  std::vector<Chunk> chunks;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    const std::string& plain = docs[d].plain;
    // Word spans over the plain text.
    std::vector<Span> words;
    Index i = 0;
    const Index n = static_cast<Index>(plain.size());
    while (i < n) {
      while (i < n && plain[static_cast<std::size_t>(i)] == ' ') ++i;
      if (i >= n) break;
      Index b = i;
      while (i < n && plain[static_cast<std::size_t>(i)] != ' ') ++i;
      words.push_back(Span{b, i});
    }
    Index index_in_doc = 0;
    for (std::size_t w = 0; w < words.size(); w += static_cast<std::size_t>(chunk_words)) {
      const std::size_t last = std::min(words.size(), w + static_cast<std::size_t>(chunk_words));
      const Index begin = words[w].begin;
      const Index end = words[last - 1].end;
      Chunk c;
      c.doc = static_cast<Index>(d);
      c.index_in_doc = index_in_doc++;
      c.text = plain.substr(static_cast<std::size_t>(begin), static_cast<std::size_t>(end - begin));
      for (const Span& link : docs[d].links) {
        if (link.begin >= begin && link.end <= end) {
          c.links.push_back(Span{link.begin - begin, link.end - begin});
        }
      }
      c.stream = stream;
      chunks.push_back(std::move(c));
    }
  }
  return chunks;
}

NspDraw make_nsp_pair(const std::vector<Chunk>& chunks, Rng& rng) {
  std::vector<std::size_t> adjacent;
  std::set<Index> doc_ids;
  for (std::size_t i = 0; i + 1 < chunks.size(); ++i) {
    if (chunks[i].doc == chunks[i + 1].doc &&
        chunks[i].index_in_doc + 1 == chunks[i + 1].index_in_doc) {
      adjacent.push_back(i);
    }
  }
  for (const auto& c : chunks) doc_ids.insert(c.doc);
  if (chunks.size() < 2 || doc_ids.size() < 2 || adjacent.empty()) {
    throw Error("NSP_CORPUS", "corpus cannot produce both NSP labels");
  }
  NspDraw draw;
  if (rng.bernoulli(0.5)) {
    draw.label = 1;
    draw.a = adjacent[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(adjacent.size()) - 1))];
    draw.b = draw.a + 1;
  } else {
    draw.label = 0;
    draw.a = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(chunks.size()) - 1));
    do {
      draw.b = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(chunks.size()) - 1));
    } while (chunks[draw.b].doc == chunks[draw.a].doc);
  }
  return draw;
}

namespace {

tok::TokenSeq tokenize_stream(const std::string& text, StreamTag stream, const tok::Vocab& vocab,
                              double alpha, Rng* sample_rng) {
  if (stream == StreamTag::WebLike && sample_rng != nullptr) {
    return tok::segment_sample(text, vocab, alpha, *sample_rng);
  }
  return tok::segment_viterbi(text, vocab);
}

// [CLS] a [SEP] b [SEP] with segment ids 0/1, truncating the longer segment
// first.
void pack_pair(TrainingExample& e, std::vector<std::int32_t> a, std::vector<std::int32_t> b,
               Index max_seq_len) {
  const std::size_t budget = static_cast<std::size_t>(max_seq_len) - 3;
  while (a.size() + b.size() > budget) {
    if (a.size() >= b.size()) a.pop_back();
    else b.pop_back();
  }
  e.ids.push_back(tok::Vocab::kCls);
  e.segment_ids.push_back(0);
  for (auto id : a) {
    e.ids.push_back(id);
    e.segment_ids.push_back(0);
  }
  e.ids.push_back(tok::Vocab::kSep);
  e.segment_ids.push_back(0);
  for (auto id : b) {
    e.ids.push_back(id);
    e.segment_ids.push_back(1);
  }
  e.ids.push_back(tok::Vocab::kSep);
  e.segment_ids.push_back(1);
}

}  // namespace

TrainingExample make_mlm_nsp_example(const std::vector<Chunk>& chunks, const tok::Vocab& vocab,
                                     const std::vector<double>& freq_by_id,
                                     const PackOptions& opt, unsigned objectives, Rng& rng) {
  const NspDraw draw = make_nsp_pair(chunks, rng);
  const Chunk& ca = chunks[draw.a];
  const Chunk& cb = chunks[draw.b];
  const auto ta = tokenize_stream(ca.text, ca.stream, vocab, opt.alpha, &rng);
  const auto tb = tokenize_stream(cb.text, cb.stream, vocab, opt.alpha, &rng);

  TrainingExample e;
  pack_pair(e, ta.ids, tb.ids, opt.max_seq_len);
  e.objective_mask = objectives & (kObjMlm | kObjNsp);
  if (e.objective_mask & kObjNsp) e.nsp_label = draw.label;
  if (e.objective_mask & kObjMlm) {
    const MaskResult mask = weighted_mask(e.ids, freq_by_id, opt.mask_rate, rng);
    if (!mask.positions.empty()) {
      e.mlm_positions = mask.positions;
      e.mlm_labels = mask.labels;
      e.ids = mask.corrupted;
    } else {
      e.objective_mask &= ~kObjMlm;  // nothing drawn; mlm not supervised here
    }
  }
  return e;
}

TrainingExample make_hyp_example(const Chunk& chunk, const tok::Vocab& vocab,
                                 const PackOptions& opt) {
  auto tokens = tok::segment_viterbi(chunk.text, vocab);
  auto labels = encode_boundary_labels(tokens, chunk.links);
  const std::size_t budget = static_cast<std::size_t>(opt.max_seq_len) - 2;
  if (tokens.ids.size() > budget) {
    tokens.ids.resize(budget);
    labels.resize(budget);
  }
  TrainingExample e;
  e.objective_mask = kObjHyp;
  e.ids.push_back(tok::Vocab::kCls);
  e.segment_ids.push_back(0);
  e.boundary_labels.push_back(kLabelIgnore);
  for (std::size_t i = 0; i < tokens.ids.size(); ++i) {
    e.ids.push_back(tokens.ids[i]);
    e.segment_ids.push_back(0);
    e.boundary_labels.push_back(labels[i]);
  }
  e.ids.push_back(tok::Vocab::kSep);
  e.segment_ids.push_back(0);
  e.boundary_labels.push_back(kLabelIgnore);
  return e;
}

TrainingExample make_pad_example(const ADExample& example, const tok::Vocab& vocab,
                                 const PackOptions& opt, Rng* sample_rng) {
  const auto ta = tok::segment_viterbi(example.acronym, vocab);
  const auto tb = tokenize_stream(example.snippet, StreamTag::WebLike, vocab, opt.alpha,
                                  sample_rng);
  TrainingExample e;
  pack_pair(e, ta.ids, tb.ids, opt.max_seq_len);
  e.pad_label = example.label;
  e.objective_mask = kObjPad;
  return e;
}

TrainingExample encode_ct_example(const CTExample& example, const tok::Vocab& vocab,
                                  Index max_seq_len) {
  auto tokens = tok::segment_viterbi(example.query, vocab);
  auto labels = encode_boundary_labels(tokens, example.spans);
  const std::size_t budget = static_cast<std::size_t>(max_seq_len) - 2;
  if (tokens.ids.size() > budget) {
    tokens.ids.resize(budget);
    labels.resize(budget);
  }
  TrainingExample e;
  e.objective_mask = kObjHyp;
  e.ids.push_back(tok::Vocab::kCls);
  e.segment_ids.push_back(0);
  e.boundary_labels.push_back(kLabelIgnore);
  for (std::size_t i = 0; i < tokens.ids.size(); ++i) {
    e.ids.push_back(tokens.ids[i]);
    e.segment_ids.push_back(0);
    e.boundary_labels.push_back(labels[i]);
  }
  e.ids.push_back(tok::Vocab::kSep);
  e.segment_ids.push_back(0);
  e.boundary_labels.push_back(kLabelIgnore);
  return e;
}

TrainingExample encode_ad_example(const ADExample& example, const tok::Vocab& vocab,
                                  Index max_seq_len) {
  PackOptions opt;
  opt.max_seq_len = max_seq_len;
  return make_pad_example(example, vocab, opt, nullptr);
}

// ---------------------------------------------------------------------------
// files

void write_corpus(const std::vector<Document>& docs, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("IO", "cannot open " + path + " for writing");
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (i) os << "\n";
    os << docs[i].raw << "\n";
  }
  if (!os) throw Error("IO", "write failed for " + path);
}

std::vector<Document> read_corpus(const std::string& path, StreamTag stream) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("IO", "cannot open " + path);
  std::vector<Document> docs;
  std::string line, block;
  auto flush = [&] {
    if (!block.empty()) {
      Document d = parse_markup(tok::lowercase(block));
      d.stream = stream;
      docs.push_back(std::move(d));
      block.clear();
    }
  };
  while (std::getline(is, line)) {
    if (line.empty()) {
      flush();
    } else {
      if (!block.empty()) block += " ";
      block += line;
    }
  }
  flush();
  return docs;
}

void write_jsonl(const std::vector<nlohmann::json>& records, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("IO", "cannot open " + path + " for writing");
  for (const auto& r : records) os << r.dump() << "\n";
  if (!os) throw Error("IO", "write failed for " + path);
}

std::vector<nlohmann::json> read_jsonl(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("IO", "cannot open " + path);
  std::vector<nlohmann::json> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      records.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw Error("PARSE", path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

template <class T>
static void write_typed(const std::vector<T>& v, const std::string& path) {
  std::vector<nlohmann::json> records;
  records.reserve(v.size());
  for (const auto& e : v) records.push_back(e.to_json());
  write_jsonl(records, path);
}

template <class T>
static std::vector<T> read_typed(const std::string& path) {
  std::vector<T> out;
  for (const auto& r : read_jsonl(path)) out.push_back(T::from_json(r));
  return out;
}

void write_ct_dataset(const std::vector<CTExample>& v, const std::string& path) {
  write_typed(v, path);
}
std::vector<CTExample> read_ct_dataset(const std::string& path) {
  return read_typed<CTExample>(path);
}
void write_ad_dataset(const std::vector<ADExample>& v, const std::string& path) {
  write_typed(v, path);
}
std::vector<ADExample> read_ad_dataset(const std::string& path) {
  return read_typed<ADExample>(path);
}
void write_example_shard(const std::vector<TrainingExample>& v, const std::string& path) {
  write_typed(v, path);
}
std::vector<TrainingExample> read_example_shard(const std::string& path) {
  return read_typed<TrainingExample>(path);
}

}  // namespace fel::data
