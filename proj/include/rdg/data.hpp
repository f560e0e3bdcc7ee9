#pragma once

// Dataset loading, whitespace tokenization, sequence packing with input-mask
// and token-type vectors, dummy-candidate padding, and the synthetic
// evidence-grounded task generator.

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "rdg/tensor.hpp"

namespace rdg {

struct McExample {
  std::string id;
  std::string passage;
  std::string question;
  std::vector<std::string> options;
  std::size_t answer = 0;
  bool has_gold_evidence = false;
  std::size_t evidence_begin = 0;  // inclusive passage word indices
  std::size_t evidence_end = 0;
};

inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

// Token <-> id bijection with fixed reserved slots.
class Vocab {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kCls = 1;
  static constexpr std::size_t kSep = 2;
  static constexpr std::size_t kUnk = 3;
  static constexpr std::size_t kDummy = 4;

  static const std::vector<std::string>& reserved_tokens() {
    static const std::vector<std::string> r = {"[PAD]", "[CLS]", "[SEP]",
                                               "[UNK]", "[DUMMY]"};
    return r;
  }

  // Builds from a token set: reserved slots first, then sorted unique tokens.
  static Vocab build(std::vector<std::string> tokens) {
    std::sort(tokens.begin(), tokens.end());
    tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
    Vocab v;
    for (const std::string& t : reserved_tokens()) v.push(t);
    for (const std::string& t : tokens)
      if (!v.index_.count(t)) v.push(t);
    return v;
  }

  static Vocab from_corpus(const std::vector<McExample>& examples) {
    std::vector<std::string> tokens;
    for (const McExample& ex : examples) {
      for (auto& t : tokenize(ex.passage)) tokens.push_back(t);
      for (auto& t : tokenize(ex.question)) tokens.push_back(t);
      for (const std::string& o : ex.options)
        for (auto& t : tokenize(o)) tokens.push_back(t);
    }
    return build(std::move(tokens));
  }

  std::size_t size() const { return tokens_.size(); }

  std::size_t id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
  }

  bool contains(const std::string& token) const {
    return index_.count(token) > 0;
  }

  const std::string& token(std::size_t id) const {
    if (id >= tokens_.size())
      throw std::out_of_range("vocab: id " + std::to_string(id) +
                              " out of range");
    return tokens_[id];
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("vocab: cannot write " + path);
    for (const std::string& t : tokens_) out << t << "\n";
  }

  static Vocab load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("vocab: cannot read " + path);
    Vocab v;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) v.push(line);
    }
    const auto& reserved = reserved_tokens();
    if (v.size() < reserved.size())
      throw std::runtime_error("vocab: file " + path + " is truncated");
    for (std::size_t i = 0; i < reserved.size(); ++i) {
      if (v.tokens_[i] != reserved[i])
        throw std::runtime_error("vocab: reserved slot " + std::to_string(i) +
                                 " holds '" + v.tokens_[i] + "', expected '" +
                                 reserved[i] + "'");
    }
    return v;
  }

 private:
  void push(const std::string& t) {
    index_[t] = tokens_.size();
    tokens_.push_back(t);
  }
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

// One (passage, question, choice) pairing laid out as
//   [CLS] passage [SEP] question choice [SEP] [PAD]...
// T marks question+choice tokens and their trailing [SEP]; I marks non-pad.
struct PackedSequence {
  std::vector<std::size_t> token_ids;
  std::vector<double> input_mask;   // I
  std::vector<double> token_types;  // T
  std::map<std::size_t, std::size_t> passage_token_spans;  // seq pos -> word
};

inline PackedSequence pack(const McExample& ex, std::size_t choice_index,
                           const Vocab& vocab, std::size_t max_len) {
  if (choice_index >= ex.options.size())
    throw std::out_of_range("pack: choice index " +
                            std::to_string(choice_index) + " out of range");
  const auto passage = tokenize(ex.passage);
  const auto question = tokenize(ex.question);
  const auto choice = tokenize(ex.options[choice_index]);
  const std::size_t overhead = 3;  // [CLS] + two [SEP]
  if (question.size() + choice.size() + overhead > max_len) {
    throw std::runtime_error(
        "pack: question and choice alone exceed max_len=" +
        std::to_string(max_len) + " for example " + ex.id);
  }
  const std::size_t keep =
      std::min(passage.size(),
               max_len - overhead - question.size() - choice.size());

  PackedSequence p;
  p.token_ids.assign(max_len, Vocab::kPad);
  p.input_mask.assign(max_len, 0.0);
  p.token_types.assign(max_len, 0.0);

  std::size_t pos = 0;
  p.token_ids[pos++] = Vocab::kCls;
  for (std::size_t w = 0; w < keep; ++w) {
    p.passage_token_spans[pos] = w;
    p.token_ids[pos++] = vocab.id(passage[w]);
  }
  p.token_ids[pos++] = Vocab::kSep;
  for (const std::string& t : question) {
    p.token_types[pos] = 1.0;
    p.token_ids[pos++] = vocab.id(t);
  }
  for (const std::string& t : choice) {
    p.token_types[pos] = 1.0;
    p.token_ids[pos++] = vocab.id(t);
  }
  p.token_types[pos] = 1.0;
  p.token_ids[pos++] = Vocab::kSep;
  for (std::size_t i = 0; i < pos; ++i) p.input_mask[i] = 1.0;
  return p;
}

// Appends [DUMMY] options until there are exactly four.
inline McExample pad_dummy_choices(McExample ex) {
  if (ex.options.size() < 2)
    throw std::runtime_error("pad_dummy_choices: example " + ex.id + " has " +
                             std::to_string(ex.options.size()) +
                             " options, need at least 2");
  if (ex.options.size() > 4)
    throw std::runtime_error("pad_dummy_choices: example " + ex.id + " has " +
                             std::to_string(ex.options.size()) +
                             " options, at most 4 supported");
  if (ex.answer >= ex.options.size())
    throw std::runtime_error("pad_dummy_choices: example " + ex.id +
                             " answer index out of range");
  while (ex.options.size() < 4) ex.options.push_back("[DUMMY]");
  return ex;
}

// ------------------------------------------------------------ RACE-style IO

// Schema per record: {id, article, questions[], options[][], answers[]}
// with answers given as letters A-D.
inline std::vector<McExample> load_race_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_race_json: cannot read " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("load_race_json: " + path + ": " + e.what());
  }
  if (!doc.is_array()) doc = nlohmann::json::array({doc});

  std::vector<McExample> out;
  for (const auto& rec : doc) {
    std::string rid = rec.value("id", "<missing id>");
    try {
      const auto& article = rec.at("article").get_ref<const std::string&>();
      const auto& questions = rec.at("questions");
      const auto& options = rec.at("options");
      const auto& answers = rec.at("answers");
      if (questions.size() != options.size() ||
          questions.size() != answers.size()) {
        throw std::runtime_error("questions/options/answers length mismatch");
      }
      for (std::size_t q = 0; q < questions.size(); ++q) {
        McExample ex;
        ex.id = rid + "-q" + std::to_string(q);
        ex.passage = article;
        ex.question = questions[q].get<std::string>();
        for (const auto& o : options[q])
          ex.options.push_back(o.get<std::string>());
        const std::string letter = answers[q].get<std::string>();
        if (letter.size() != 1 || letter[0] < 'A' || letter[0] > 'D')
          throw std::runtime_error("bad answer letter '" + letter + "'");
        ex.answer = static_cast<std::size_t>(letter[0] - 'A');
        if (ex.answer >= ex.options.size())
          throw std::runtime_error("answer letter beyond option count");
        out.push_back(std::move(ex));
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("load_race_json: record " + rid + ": " +
                               e.what());
    }
  }
  return out;
}

// --------------------------------------------------------- line-based corpus

inline nlohmann::json example_to_json(const McExample& ex) {
  nlohmann::json j{{"id", ex.id},
                   {"passage", ex.passage},
                   {"question", ex.question},
                   {"options", ex.options},
                   {"answer", ex.answer}};
  if (ex.has_gold_evidence)
    j["gold_evidence"] = {ex.evidence_begin, ex.evidence_end};
  return j;
}

inline McExample example_from_json(const nlohmann::json& j) {
  McExample ex;
  ex.id = j.at("id").get<std::string>();
  ex.passage = j.at("passage").get<std::string>();
  ex.question = j.at("question").get<std::string>();
  ex.options = j.at("options").get<std::vector<std::string>>();
  ex.answer = j.at("answer").get<std::size_t>();
  if (j.contains("gold_evidence")) {
    ex.has_gold_evidence = true;
    ex.evidence_begin = j["gold_evidence"].at(0).get<std::size_t>();
    ex.evidence_end = j["gold_evidence"].at(1).get<std::size_t>();
  }
  return ex;
}

inline void save_jsonl(const std::vector<McExample>& examples,
                       const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_jsonl: cannot write " + path);
  for (const McExample& ex : examples) out << example_to_json(ex) << "\n";
}

inline std::vector<McExample> load_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_jsonl: cannot read " + path);
  std::vector<McExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(example_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error("load_jsonl: " + path + ":" +
                               std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// ----------------------------------------------------------- synthetic task

// Passages are shuffled key-value fact sentences "attrJ of entK is valM ."
// The question asks one fact; options are the true value plus three
// distractors (preferring values used by other facts in the same passage);
// gold evidence marks the asked fact's sentence.
struct SynthSpec {
  std::size_t n_values = 24;
  std::size_t n_entities = 12;
  std::size_t n_attributes = 6;
  std::size_t facts_per_passage = 5;
  std::size_t n_examples = 1000;
  // "passage": distractors reuse other facts' values when possible, so the
  // correct option cannot be identified by presence alone.
  // "vocab": distractors are values no fact in the passage uses.
  bool distractors_from_passage = true;
};

inline constexpr std::size_t kSynthSentenceLen = 6;  // attr of ent is val .

inline void validate(const SynthSpec& s) {
  if (s.n_values < 4)
    throw std::invalid_argument(
        "synthetic spec: need at least 4 values to build 4 distinct options");
  if (s.n_entities == 0 || s.n_attributes == 0 || s.facts_per_passage == 0)
    throw std::invalid_argument("synthetic spec: sizes must be positive");
  if (s.facts_per_passage > s.n_entities * s.n_attributes)
    throw std::invalid_argument(
        "synthetic spec: more facts per passage than distinct "
        "(entity, attribute) pairs");
  if (!s.distractors_from_passage && s.n_values < s.facts_per_passage + 3)
    throw std::invalid_argument(
        "synthetic spec: out-of-passage distractors need at least "
        "facts_per_passage + 3 values");
}

// Every token the generator can emit; the vocabulary is built from this set
// so the tokenizer is invertible in-domain.
inline std::vector<std::string> synth_token_set(const SynthSpec& spec) {
  std::vector<std::string> tokens = {"of", "is", ".", "what", "?"};
  for (std::size_t i = 0; i < spec.n_entities; ++i)
    tokens.push_back("ent" + std::to_string(i));
  for (std::size_t i = 0; i < spec.n_attributes; ++i)
    tokens.push_back("attr" + std::to_string(i));
  for (std::size_t i = 0; i < spec.n_values; ++i)
    tokens.push_back("val" + std::to_string(i));
  return tokens;
}

inline std::vector<McExample> gen_synthetic(const SynthSpec& spec,
                                            std::uint64_t seed) {
  validate(spec);
  Rng rng(seed);
  std::vector<McExample> out;
  out.reserve(spec.n_examples);
  for (std::size_t n = 0; n < spec.n_examples; ++n) {
    // Distinct (entity, attribute) pairs; each fact gets a random value.
    std::vector<std::size_t> pair_codes;
    while (pair_codes.size() < spec.facts_per_passage) {
      const std::size_t code =
          rng.below(spec.n_entities * spec.n_attributes);
      if (std::find(pair_codes.begin(), pair_codes.end(), code) ==
          pair_codes.end())
        pair_codes.push_back(code);
    }
    std::vector<std::size_t> values;
    for (std::size_t f = 0; f < spec.facts_per_passage; ++f)
      values.push_back(rng.below(spec.n_values));
    const std::size_t target = rng.below(spec.facts_per_passage);

    std::string passage;
    for (std::size_t f = 0; f < spec.facts_per_passage; ++f) {
      const std::size_t ent = pair_codes[f] / spec.n_attributes;
      const std::size_t attr = pair_codes[f] % spec.n_attributes;
      if (f) passage += " ";
      passage += "attr" + std::to_string(attr) + " of ent" +
                 std::to_string(ent) + " is val" + std::to_string(values[f]) +
                 " .";
    }

    const std::size_t ent = pair_codes[target] / spec.n_attributes;
    const std::size_t attr = pair_codes[target] % spec.n_attributes;
    const std::size_t gold_value = values[target];

    std::vector<std::size_t> distractors;
    if (spec.distractors_from_passage) {
      // other facts' values first, then fresh random values
      std::vector<std::size_t> pool;
      for (std::size_t f = 0; f < spec.facts_per_passage; ++f) {
        if (f == target || values[f] == gold_value) continue;
        if (std::find(pool.begin(), pool.end(), values[f]) == pool.end())
          pool.push_back(values[f]);
      }
      rng.shuffle(pool);
      for (std::size_t v : pool) {
        if (distractors.size() == 3) break;
        distractors.push_back(v);
      }
    }
    while (distractors.size() < 3) {
      const std::size_t v = rng.below(spec.n_values);
      if (v == gold_value) continue;
      if (std::find(distractors.begin(), distractors.end(), v) !=
          distractors.end())
        continue;
      if (!spec.distractors_from_passage &&
          std::find(values.begin(), values.end(), v) != values.end())
        continue;
      distractors.push_back(v);
    }

    std::vector<std::size_t> option_values = {gold_value, distractors[0],
                                              distractors[1], distractors[2]};
    rng.shuffle(option_values);

    McExample ex;
    ex.id = "synth-" + std::to_string(n);
    ex.passage = passage;
    ex.question = "what is attr" + std::to_string(attr) + " of ent" +
                  std::to_string(ent) + " ?";
    for (std::size_t v : option_values)
      ex.options.push_back("val" + std::to_string(v));
    ex.answer = static_cast<std::size_t>(
        std::find(option_values.begin(), option_values.end(), gold_value) -
        option_values.begin());
    ex.has_gold_evidence = true;
    ex.evidence_begin = target * kSynthSentenceLen;
    ex.evidence_end = target * kSynthSentenceLen + kSynthSentenceLen - 1;
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace rdg
