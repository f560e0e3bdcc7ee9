#pragma once

// Turns gate traces (or attention maps) into per-word scores, top-k evidence
// segments with +-context expansion, rendered reports, and a localization
// metric against known gold evidence.

#include <algorithm>
#include <string>
#include <vector>

#include <json.hpp>

#include "rdg/model.hpp"

namespace rdg {

struct TokenScore {
  std::size_t word = 0;  // passage word index
  double score = 0.0;
};

struct ExplanationSegment {
  std::size_t begin = 0;  // inclusive word indices
  std::size_t end = 0;
  std::vector<double> member_scores;
  double peak = 0.0;
};

struct ExplanationReport {
  std::string question_id;
  std::string method;  // "rdg" or "attention"
  std::vector<std::size_t> picks;  // top-k words, pre-expansion
  std::vector<ExplanationSegment> segments;
  bool has_localization = false;
  double localization = 0.0;
};

// Final-layer gate values at passage positions, mapped back to source words.
inline std::vector<TokenScore> extract_rdg_scores(
    const GateTrace& trace, const PackedSequence& packed) {
  if (trace.final.empty())
    throw std::logic_error("extract_rdg_scores: empty gate trace");
  const Tensor& r = trace.final.back();
  if (r.size() != packed.token_ids.size())
    throw std::logic_error(
        "extract_rdg_scores: trace length " + std::to_string(r.size()) +
        " does not match packed length " +
        std::to_string(packed.token_ids.size()));
  std::vector<TokenScore> out;
  for (const auto& [pos, word] : packed.passage_token_spans)
    out.push_back({word, r.at(pos)});
  return out;
}

// Attention maps averaged over heads and over unmasked query positions,
// yielding one score per key; restricted to passage positions and min-max
// normalized (a constant profile normalizes to all zeros).
inline std::vector<TokenScore> extract_attention_scores(
    const EncoderOutput& output, const PackedSequence& packed,
    std::size_t layer_index = static_cast<std::size_t>(-1)) {
  if (output.attention_maps.empty())
    throw std::logic_error("extract_attention_scores: no attention maps");
  if (layer_index == static_cast<std::size_t>(-1))
    layer_index = output.attention_maps.size() - 1;
  if (layer_index >= output.attention_maps.size())
    throw std::out_of_range("extract_attention_scores: layer " +
                            std::to_string(layer_index) + " of " +
                            std::to_string(output.attention_maps.size()));
  const auto& heads = output.attention_maps[layer_index];
  const std::size_t l = packed.token_ids.size();
  std::vector<double> key_mass(l, 0.0);
  std::size_t queries = 0;
  for (std::size_t i = 0; i < l; ++i)
    if (packed.input_mask[i] > 0.5) ++queries;
  for (const Tensor& map : heads) {
    for (std::size_t i = 0; i < l; ++i) {
      if (packed.input_mask[i] < 0.5) continue;  // padded queries ignored
      for (std::size_t j = 0; j < l; ++j) key_mass[j] += map.at2(i, j);
    }
  }
  const double denom = static_cast<double>(heads.size() * queries);
  std::vector<TokenScore> out;
  for (const auto& [pos, word] : packed.passage_token_spans)
    out.push_back({word, key_mass[pos] / denom});
  if (out.empty()) return out;
  double lo = out[0].score, hi = out[0].score;
  for (const TokenScore& t : out) {
    lo = std::min(lo, t.score);
    hi = std::max(hi, t.score);
  }
  for (TokenScore& t : out)
    t.score = hi > lo ? (t.score - lo) / (hi - lo) : 0.0;
  return out;
}

// Top-k word indices, highest score first; ties go to the lower word index.
inline std::vector<std::size_t> top_k_picks(std::vector<TokenScore> scores,
                                            std::size_t k) {
  std::sort(scores.begin(), scores.end(),
            [](const TokenScore& a, const TokenScore& b) {
              if (a.score != b.score) return a.score > b.score;
              return a.word < b.word;
            });
  std::vector<std::size_t> picks;
  for (std::size_t i = 0; i < scores.size() && i < k; ++i)
    picks.push_back(scores[i].word);
  return picks;
}

// Expands picks by +-context, clamps to the passage, merges overlapping or
// adjacent intervals, and sorts by start.
inline std::vector<ExplanationSegment> segments_from_picks(
    const std::vector<std::size_t>& picks,
    const std::vector<TokenScore>& scores, std::size_t context,
    std::size_t word_count) {
  std::vector<std::pair<std::size_t, std::size_t>> intervals;
  for (std::size_t w : picks) {
    const std::size_t b = w > context ? w - context : 0;
    const std::size_t e = std::min(w + context, word_count - 1);
    intervals.emplace_back(b, e);
  }
  std::sort(intervals.begin(), intervals.end());
  std::vector<std::pair<std::size_t, std::size_t>> merged;
  for (const auto& iv : intervals) {
    if (!merged.empty() && iv.first <= merged.back().second + 1)
      merged.back().second = std::max(merged.back().second, iv.second);
    else
      merged.push_back(iv);
  }
  std::vector<double> by_word(word_count, 0.0);
  for (const TokenScore& t : scores)
    if (t.word < word_count) by_word[t.word] = t.score;
  std::vector<ExplanationSegment> out;
  for (const auto& [b, e] : merged) {
    ExplanationSegment seg;
    seg.begin = b;
    seg.end = e;
    for (std::size_t w = b; w <= e; ++w) {
      seg.member_scores.push_back(by_word[w]);
      seg.peak = std::max(seg.peak, by_word[w]);
    }
    out.push_back(std::move(seg));
  }
  return out;
}

inline std::vector<ExplanationSegment> top_k_segments(
    const std::vector<TokenScore>& scores, std::size_t k = 10,
    std::size_t context = 2) {
  if (scores.empty()) return {};
  if (k < 1) throw std::invalid_argument("top_k_segments: k must be >= 1");
  std::size_t word_count = 0;
  for (const TokenScore& t : scores)
    word_count = std::max(word_count, t.word + 1);
  return segments_from_picks(top_k_picks(scores, k), scores, context,
                             word_count);
}

// Fraction of the selected top words (pre-expansion) inside gold evidence.
inline double localization_score(const std::vector<std::size_t>& picks,
                                 std::size_t evidence_begin,
                                 std::size_t evidence_end) {
  if (picks.empty()) return 0.0;
  std::size_t inside = 0;
  for (std::size_t w : picks)
    if (w >= evidence_begin && w <= evidence_end) ++inside;
  return static_cast<double>(inside) / static_cast<double>(picks.size());
}

inline ExplanationReport build_report(const std::string& id,
                                      const std::string& method,
                                      const std::vector<TokenScore>& scores,
                                      const McExample& example,
                                      std::size_t k = 10,
                                      std::size_t context = 2) {
  ExplanationReport rep;
  rep.question_id = id;
  rep.method = method;
  if (!scores.empty()) {
    rep.picks = top_k_picks(scores, k);
    rep.segments = top_k_segments(scores, k, context);
  }
  if (example.has_gold_evidence) {
    rep.has_localization = true;
    rep.localization = localization_score(rep.picks, example.evidence_begin,
                                          example.evidence_end);
  }
  return rep;
}

// ----------------------------------------------------------------- rendering

// Segments joined by " ... "; boundary ellipses appear when the passage
// extends past the first or last segment.
inline std::string render_plain(const ExplanationReport& report,
                                const std::vector<std::string>& words) {
  if (report.segments.empty() || words.empty()) return "";
  std::string out;
  if (report.segments.front().begin > 0) out += "... ";
  for (std::size_t s = 0; s < report.segments.size(); ++s) {
    if (s) out += " ... ";
    const auto& seg = report.segments[s];
    for (std::size_t w = seg.begin; w <= seg.end && w < words.size(); ++w) {
      if (w > seg.begin) out += " ";
      out += words[w];
    }
  }
  if (report.segments.back().end + 1 < words.size()) out += " ...";
  return out;
}

namespace detail {

inline std::string html_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

// Full passage with segment words highlighted; highlight opacity follows the
// word's score. Includes question, choices and the gold marker.
inline std::string render_html(const ExplanationReport& report,
                               const McExample& example) {
  const auto words = tokenize(example.passage);
  std::vector<double> intensity(words.size(), -1.0);
  for (const auto& seg : report.segments)
    for (std::size_t w = seg.begin; w <= seg.end && w < words.size(); ++w)
      intensity[w] = seg.member_scores[w - seg.begin];

  std::string out;
  out += "<div class=\"report\">\n";
  out += "<h3>" + detail::html_escape(report.question_id) + " (" +
         detail::html_escape(report.method) + ")</h3>\n";
  out += "<p class=\"question\">" + detail::html_escape(example.question) +
         "</p>\n<ol>\n";
  for (std::size_t c = 0; c < example.options.size(); ++c) {
    out += "<li>" + detail::html_escape(example.options[c]);
    if (c == example.answer) out += " &#10003;";
    out += "</li>\n";
  }
  out += "</ol>\n<p class=\"passage\">";
  for (std::size_t w = 0; w < words.size(); ++w) {
    if (w) out += " ";
    if (intensity[w] >= 0.0) {
      char op[16];
      std::snprintf(op, sizeof(op), "%.2f",
                    0.15 + 0.85 * std::clamp(intensity[w], 0.0, 1.0));
      out += "<mark style=\"background-color: rgba(255,170,0," +
             std::string(op) + ")\">" + detail::html_escape(words[w]) +
             "</mark>";
    } else {
      out += detail::html_escape(words[w]);
    }
  }
  out += "</p>\n";
  if (report.has_localization) {
    out += "<p class=\"metric\">localization: " +
           format_double(report.localization) + "</p>\n";
  }
  out += "</div>\n";
  return out;
}

// ANSI terminal rendering: highlighted words in the plain segment view.
inline std::string render_ansi(const ExplanationReport& report,
                               const std::vector<std::string>& words) {
  if (report.segments.empty() || words.empty()) return "";
  std::string out;
  if (report.segments.front().begin > 0) out += "... ";
  for (std::size_t s = 0; s < report.segments.size(); ++s) {
    if (s) out += " ... ";
    const auto& seg = report.segments[s];
    for (std::size_t w = seg.begin; w <= seg.end && w < words.size(); ++w) {
      if (w > seg.begin) out += " ";
      const double v = seg.member_scores[w - seg.begin];
      if (v >= 0.5)
        out += "\x1b[1;33m" + words[w] + "\x1b[0m";
      else
        out += words[w];
    }
  }
  if (report.segments.back().end + 1 < words.size()) out += " ...";
  return out;
}

inline nlohmann::json report_to_json(const ExplanationReport& report) {
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& s : report.segments) segs.push_back({s.begin, s.end});
  nlohmann::json j{{"id", report.question_id},
                   {"method", report.method},
                   {"picks", report.picks},
                   {"segments", segs}};
  if (report.has_localization) j["localization"] = report.localization;
  return j;
}

}  // namespace rdg
