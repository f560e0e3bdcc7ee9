#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "rdg/explain.hpp"

using namespace rdg;

namespace {

// Independent reference: sort picks by (score desc, index asc), mark a
// coverage array with +-context, read off maximal covered runs.
struct OracleResult {
  std::vector<std::size_t> picks;
  std::vector<std::pair<std::size_t, std::size_t>> segments;
};

OracleResult oracle_top_k(const std::vector<double>& scores, std::size_t k,
                          std::size_t ctx) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  OracleResult out;
  for (std::size_t i = 0; i < n && i < k; ++i) out.picks.push_back(idx[i]);
  std::vector<char> covered(n, 0);
  for (std::size_t w : out.picks) {
    const std::size_t b = w > ctx ? w - ctx : 0;
    const std::size_t e = std::min(w + ctx, n - 1);
    for (std::size_t p = b; p <= e; ++p) covered[p] = 1;
  }
  for (std::size_t p = 0; p < n;) {
    if (!covered[p]) {
      ++p;
      continue;
    }
    std::size_t q = p;
    while (q + 1 < n && covered[q + 1]) ++q;
    out.segments.emplace_back(p, q);
    p = q + 1;
  }
  return out;
}

std::vector<TokenScore> as_scores(const std::vector<double>& v) {
  std::vector<TokenScore> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back({i, v[i]});
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> intervals(
    const std::vector<ExplanationSegment>& segs) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const auto& s : segs) out.emplace_back(s.begin, s.end);
  return out;
}

PackedSequence tiny_packed(std::size_t passage_words, std::size_t max_len) {
  McExample ex;
  ex.id = "x";
  std::string p;
  for (std::size_t i = 0; i < passage_words; ++i)
    p += (i ? " w" : "w") + std::to_string(i);
  ex.passage = p;
  ex.question = "q";
  ex.options = {"a", "b", "c", "d"};
  Vocab v = Vocab::build(tokenize(p + " q a b c d"));
  return pack(ex, 0, v, max_len);
}

}  // namespace

TEST(ExtractRdg, AllOpenGatesScoreOne) {
  PackedSequence packed = tiny_packed(5, 16);
  GateTrace trace;
  trace.final.push_back(Tensor::filled({16}, 1.0));
  auto scores = extract_rdg_scores(trace, packed);
  ASSERT_EQ(scores.size(), 5u);
  for (const TokenScore& t : scores) EXPECT_DOUBLE_EQ(t.score, 1.0);
}

TEST(ExtractRdg, OnlyPassageWordsAppear) {
  PackedSequence packed = tiny_packed(4, 16);
  GateTrace trace;
  Tensor r = Tensor::filled({16}, 0.5);
  trace.final.push_back(r);
  auto scores = extract_rdg_scores(trace, packed);
  std::vector<std::size_t> words;
  for (const TokenScore& t : scores) words.push_back(t.word);
  EXPECT_EQ(words, (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(ExtractRdg, ScoresEqualFinalGateValuesExactly) {
  PackedSequence packed = tiny_packed(4, 16);
  GateTrace trace;
  Tensor r = Tensor::zeros({16});
  for (std::size_t i = 0; i < 16; ++i) r.at(i) = 0.01 * static_cast<double>(i);
  trace.final.push_back(r);
  auto scores = extract_rdg_scores(trace, packed);
  for (const TokenScore& t : scores) {
    // passage word w sits at sequence position w+1
    EXPECT_EQ(t.score, r.at(t.word + 1));
  }
}

TEST(ExtractRdg, TraceMismatchRejected) {
  PackedSequence packed = tiny_packed(4, 16);
  GateTrace trace;
  EXPECT_THROW(extract_rdg_scores(trace, packed), std::logic_error);
  trace.final.push_back(Tensor::filled({7}, 1.0));
  EXPECT_THROW(extract_rdg_scores(trace, packed), std::logic_error);
}

TEST(ExtractAttention, UniformMapNormalizesToZeros) {
  PackedSequence packed = tiny_packed(5, 12);
  EncoderOutput out;
  out.attention_maps.push_back(
      {Tensor::filled({12, 12}, 1.0 / 12), Tensor::filled({12, 12}, 1.0 / 12)});
  auto scores = extract_attention_scores(out, packed);
  ASSERT_EQ(scores.size(), 5u);
  for (const TokenScore& t : scores) EXPECT_DOUBLE_EQ(t.score, 0.0);
}

TEST(ExtractAttention, PaddedQueriesIgnored) {
  PackedSequence packed = tiny_packed(3, 12);
  EncoderOutput a, b;
  Rng rng(3);
  Tensor map = Tensor::zeros({12, 12});
  for (double& v : map.values()) v = rng.uniform();
  Tensor tweaked = Tensor::from(map.shape(), map.values());
  for (std::size_t i = 0; i < 12; ++i) {
    if (packed.input_mask[i] < 0.5) {
      for (std::size_t j = 0; j < 12; ++j) tweaked.at2(i, j) = rng.uniform();
    }
  }
  a.attention_maps.push_back({map});
  b.attention_maps.push_back({tweaked});
  auto sa = extract_attention_scores(a, packed);
  auto sb = extract_attention_scores(b, packed);
  for (std::size_t i = 0; i < sa.size(); ++i)
    EXPECT_DOUBLE_EQ(sa[i].score, sb[i].score);
}

TEST(TopK, ThreeWordsOnePickCoversAll) {
  auto segs = top_k_segments(as_scores({0.1, 0.9, 0.2}), 1, 2);
  ASSERT_EQ(segs.size(), 1u);
  EXPECT_EQ(segs[0].begin, 0u);
  EXPECT_EQ(segs[0].end, 2u);
}

TEST(TopK, AdjacentPicksMergeIntoOneSegment) {
  std::vector<double> scores(12, 0.0);
  scores[4] = 1.0;
  scores[6] = 0.9;
  auto segs = top_k_segments(as_scores(scores), 2, 2);
  ASSERT_EQ(segs.size(), 1u);
  EXPECT_EQ(segs[0].begin, 2u);
  EXPECT_EQ(segs[0].end, 8u);
}

TEST(TopK, KBeyondWordCountSpansPassage) {
  auto segs = top_k_segments(as_scores({0.3, 0.1, 0.2, 0.5}), 10, 2);
  ASSERT_EQ(segs.size(), 1u);
  EXPECT_EQ(segs[0].begin, 0u);
  EXPECT_EQ(segs[0].end, 3u);
}

TEST(TopK, TiesBreakTowardLowerIndex) {
  auto picks = top_k_picks(as_scores({0.5, 0.9, 0.5, 0.5}), 2);
  EXPECT_EQ(picks, (std::vector<std::size_t>{1, 0}));
}

TEST(TopK, MatchesBruteForceReference) {
  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(60);
    const std::size_t k = 1 + rng.below(12);
    const std::size_t ctx = rng.below(4);
    std::vector<double> scores(n);
    // quantized scores force plenty of ties
    for (double& s : scores)
      s = static_cast<double>(rng.below(8)) / 8.0;
    OracleResult want = oracle_top_k(scores, k, ctx);
    auto picks = top_k_picks(as_scores(scores), k);
    EXPECT_EQ(picks, want.picks);
    auto segs = top_k_segments(as_scores(scores), k, ctx);
    EXPECT_EQ(intervals(segs), want.segments);
  }
}

TEST(TopK, MergingIdempotentAndOrderIndependent) {
  Rng rng(78);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 5 + rng.below(40);
    std::vector<std::size_t> picks;
    for (int i = 0; i < 6; ++i) picks.push_back(rng.below(n));
    std::vector<TokenScore> scores = as_scores(std::vector<double>(n, 0.5));
    auto base = segments_from_picks(picks, scores, 2, n);
    std::vector<std::size_t> shuffled = picks;
    rng.shuffle(shuffled);
    EXPECT_EQ(intervals(segments_from_picks(shuffled, scores, 2, n)),
              intervals(base));
    // feeding the already-merged picks back in changes nothing
    std::vector<std::size_t> again = picks;
    again.insert(again.end(), picks.begin(), picks.end());
    EXPECT_EQ(intervals(segments_from_picks(again, scores, 2, n)),
              intervals(base));
  }
}

TEST(TopK, ScoresOutsideTopKSetDoNotChangeSegments) {
  Rng rng(79);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 12 + rng.below(30);
    std::vector<double> scores(n);
    for (double& s : scores) s = 0.5 + 0.5 * rng.uniform();
    const std::size_t k = 5;
    auto picks = top_k_picks(as_scores(scores), k);
    double kth = 1.0;
    for (std::size_t w : picks) kth = std::min(kth, scores[w]);
    std::vector<double> perturbed = scores;
    for (std::size_t i = 0; i < n; ++i) {
      if (std::find(picks.begin(), picks.end(), i) == picks.end())
        perturbed[i] = rng.uniform() * (kth - 1e-9);
    }
    EXPECT_EQ(intervals(top_k_segments(as_scores(perturbed), k, 2)),
              intervals(top_k_segments(as_scores(scores), k, 2)));
  }
}

TEST(Localization, Endpoints) {
  EXPECT_DOUBLE_EQ(localization_score({3, 4, 5}, 2, 6), 1.0);
  EXPECT_DOUBLE_EQ(localization_score({0, 1}, 5, 9), 0.0);
  EXPECT_DOUBLE_EQ(localization_score({}, 0, 3), 0.0);
  EXPECT_DOUBLE_EQ(localization_score({1, 7}, 5, 9), 0.5);
}

TEST(Localization, AddingInEvidencePickNeverLowersIt) {
  Rng rng(80);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 20;
    std::vector<std::size_t> picks;
    for (int i = 0; i < 5; ++i) picks.push_back(rng.below(n));
    const std::size_t eb = 4, ee = 9;
    const double before = localization_score(picks, eb, ee);
    std::vector<std::size_t> more = picks;
    more.push_back(eb + rng.below(ee - eb + 1));
    EXPECT_GE(localization_score(more, eb, ee) + 1e-12, before);
  }
}

TEST(Localization, RandomScoringMatchesAnalyticBaseline) {
  // Random score vectors pick a uniform k-subset, so the expected fraction
  // inside the evidence span is |evidence| / |passage|.
  Rng rng(81);
  const std::size_t n = 30, eb = 10, ee = 15, k = 10;
  const double expect =
      static_cast<double>(ee - eb + 1) / static_cast<double>(n);
  double total = 0.0;
  const int trials = 10000;
  for (int t = 0; t < trials; ++t) {
    std::vector<double> scores(n);
    for (double& s : scores) s = rng.uniform();
    total += localization_score(top_k_picks(as_scores(scores), k), eb, ee);
  }
  EXPECT_NEAR(total / trials, expect, 0.01);
}

TEST(Render, PlainJoinsSegmentsWithEllipses) {
  McExample ex;
  ex.id = "r1";
  ex.passage = "the cat sat on the mat near the old door today";
  ex.question = "where ?";
  ex.options = {"mat", "door", "roof", "car"};
  ex.answer = 0;
  std::vector<double> scores(11, 0.0);
  scores[2] = 1.0;   // "sat"
  scores[8] = 0.9;   // "old"
  auto report = build_report("r1", "rdg", as_scores(scores), ex, 2, 1);
  const auto words = tokenize(ex.passage);
  EXPECT_EQ(render_plain(report, words),
            "... cat sat on ... the old door ...");
}

TEST(Render, FullPassageSegmentHasNoEllipses) {
  McExample ex;
  ex.id = "r2";
  ex.passage = "a b c";
  ex.question = "q ?";
  ex.options = {"a", "b", "c", "d"};
  std::vector<double> scores = {0.2, 0.9, 0.1};
  auto report = build_report("r2", "rdg", as_scores(scores), ex, 1, 2);
  EXPECT_EQ(render_plain(report, tokenize(ex.passage)), "a b c");
}

TEST(Render, HtmlTagsBalance) {
  McExample ex;
  ex.id = "r3";
  ex.passage = "alpha beta <gamma> delta & epsilon";
  ex.question = "which ?";
  ex.options = {"alpha", "beta", "x", "y"};
  ex.answer = 1;
  ex.has_gold_evidence = true;
  ex.evidence_begin = 1;
  ex.evidence_end = 2;
  std::vector<double> scores = {0.1, 0.8, 0.9, 0.2, 0.3};
  auto report = build_report("r3", "rdg", as_scores(scores), ex, 2, 1);
  const std::string html = render_html(report, ex);
  auto count = [&html](const std::string& needle) {
    std::size_t c = 0, pos = 0;
    while ((pos = html.find(needle, pos)) != std::string::npos) {
      ++c;
      pos += needle.size();
    }
    return c;
  };
  EXPECT_EQ(count("<mark"), count("</mark>"));
  EXPECT_EQ(count("<div"), count("</div>"));
  EXPECT_EQ(count("<p"), count("</p>"));
  EXPECT_EQ(count("<ol>"), count("</ol>"));
  EXPECT_EQ(count("<li>"), count("</li>"));
  EXPECT_EQ(html.find('<'), html.find("<div"));  // raw '<' escaped
  EXPECT_NE(html.find("&lt;gamma&gt;"), std::string::npos);
  EXPECT_NE(html.find("localization"), std::string::npos);
}

TEST(Report, JsonShape) {
  McExample ex;
  ex.id = "j1";
  ex.passage = "a b c d e f";
  ex.question = "q ?";
  ex.options = {"a", "b", "c", "d"};
  ex.has_gold_evidence = true;
  ex.evidence_begin = 0;
  ex.evidence_end = 2;
  std::vector<double> scores = {0.9, 0.1, 0.8, 0.2, 0.1, 0.05};
  auto report = build_report("j1", "rdg", as_scores(scores), ex, 2, 0);
  auto j = report_to_json(report);
  EXPECT_EQ(j["id"], "j1");
  EXPECT_EQ(j["method"], "rdg");
  EXPECT_EQ(j["picks"], (std::vector<std::size_t>{0, 2}));
  EXPECT_DOUBLE_EQ(j["localization"].get<double>(), 1.0);
}
