#include <gtest/gtest.h>

#include "mahaflow/wer.hpp"

using namespace mahaflow;

namespace {

// Brute-force recursive edit distance over word sequences (the oracle).
int64_t word_lev_oracle(const std::vector<std::string>& a, const std::vector<std::string>& b,
                        size_t i = 0, size_t j = 0) {
  if (i == a.size()) return static_cast<int64_t>(b.size() - j);
  if (j == b.size()) return static_cast<int64_t>(a.size() - i);
  int64_t sub = word_lev_oracle(a, b, i + 1, j + 1) + (a[i] == b[j] ? 0 : 1);
  int64_t del = word_lev_oracle(a, b, i + 1, j) + 1;
  int64_t ins = word_lev_oracle(a, b, i, j + 1) + 1;
  return std::min({sub, del, ins});
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

}  // namespace

TEST(Wer, IdenticalSentencesAreZero) {
  WerReport r = wer("the quick brown fox", "the quick brown fox");
  EXPECT_EQ(r.substitutions + r.deletions + r.insertions, 0);
  EXPECT_DOUBLE_EQ(r.wer(), 0.0);
}

TEST(Wer, SingleSubstitution) {
  WerReport r = wer("a b c", "a x c");
  EXPECT_EQ(r.substitutions, 1);
  EXPECT_EQ(r.deletions, 0);
  EXPECT_EQ(r.insertions, 0);
  EXPECT_EQ(r.ref_word_count, 3);
  EXPECT_NEAR(r.wer(), 1.0 / 3.0, 1e-15);
}

TEST(Wer, EmptyHypothesisIsAllDeletions) {
  WerReport r = wer("a b", "");
  EXPECT_EQ(r.deletions, 2);
  EXPECT_DOUBLE_EQ(r.wer(), 1.0);
}

TEST(Wer, InsertionsCanExceedOne) {
  WerReport r = wer("a", "a b c d");
  EXPECT_EQ(r.insertions, 3);
  EXPECT_DOUBLE_EQ(r.wer(), 3.0);
}

TEST(Wer, WhitespaceInvariance) {
  WerReport a = wer("hello world", "hello world");
  WerReport b = wer("  hello   world  ", "\thello world\n");
  EXPECT_EQ(a.substitutions, b.substitutions);
  EXPECT_EQ(a.ref_word_count, b.ref_word_count);
  EXPECT_DOUBLE_EQ(b.wer(), 0.0);
}

TEST(Wer, NormalizerStripsPunctuationAndCase) {
  WerReport r = wer("Hello, World!", "hello world");
  EXPECT_DOUBLE_EQ(r.wer(), 0.0);
  WerReport r2 = wer("don't stop", "dont stop");
  EXPECT_DOUBLE_EQ(r2.wer(), 0.0);
}

TEST(Wer, MatchesBruteForceOracle) {
  Rng rng(33);
  const std::vector<std::string> vocab{"ka", "ta", "pa"};
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::string> a, b;
    for (int64_t i = rng.uniform_int(0, 6); i > 0; --i)
      a.push_back(vocab[static_cast<size_t>(rng.uniform_int(0, 2))]);
    for (int64_t i = rng.uniform_int(0, 6); i > 0; --i)
      b.push_back(vocab[static_cast<size_t>(rng.uniform_int(0, 2))]);
    WerReport r = wer(join(a), join(b));
    EXPECT_EQ(r.substitutions + r.deletions + r.insertions, word_lev_oracle(a, b))
        << join(a) << " / " << join(b);
  }
}

TEST(Wer, PooledAggregationIdentity) {
  std::vector<std::pair<std::string, std::string>> pairs{
      {"a b c", "a x c"}, {"one two", "one"}, {"x", "x y"}, {"p q r s", "p q r s"}};
  WerReport pooled;
  int64_t s = 0, d = 0, ins = 0, n = 0;
  for (const auto& [ref, hyp] : pairs) {
    WerReport r = wer(ref, hyp);
    pooled.pool(r);
    s += r.substitutions;
    d += r.deletions;
    ins += r.insertions;
    n += r.ref_word_count;
  }
  EXPECT_EQ(pooled.substitutions, s);
  EXPECT_DOUBLE_EQ(pooled.wer(), static_cast<double>(s + d + ins) / static_cast<double>(n));
}

TEST(CorpusStats, ReferenceCompositionTable) {
  // hours per language from the published composition table
  const std::vector<std::pair<std::string, double>> hours{
      {"assamese", 48.50},  {"bengali", 419.23},  {"bodo", 26.63},      {"dogri", 8.45},
      {"english", 12038.88}, {"french", 1007.44},  {"german", 1514.56},  {"gujarati", 292.22},
      {"hindi", 2265.75},   {"kannada", 40.66},   {"malayalam", 23.60}, {"manipuri", 27.10},
      {"marathi", 873.28},  {"odia", 430.33},     {"punjabi", 80.03},   {"rajasthani", 20.05},
      {"sanskrit", 84.01},  {"spanish", 889.68},  {"tamil", 29.37},     {"telugu", 357.79},
      {"urdu", 152.35}};
  Manifest m;
  for (const auto& [lang, h] : hours) {
    ClipRecord r;
    r.language = lang;
    r.duration_s = h * 3600.0;
    m.push_back(r);
  }
  CorpusStats s = corpus_stats(m);
  EXPECT_NEAR(s.grand_total_hours, 20629.91, 0.01);
  double english_pct = 0.0, hindi_pct = 0.0;
  for (const auto& row : s.rows) {
    if (row.language == "english") english_pct = row.percent;
    if (row.language == "hindi") hindi_pct = row.percent;
  }
  EXPECT_NEAR(english_pct, 58.36, 0.01);
  EXPECT_NEAR(hindi_pct, 10.98, 0.01);
  double pct_sum = 0.0;
  for (const auto& row : s.rows) pct_sum += row.percent;
  EXPECT_NEAR(pct_sum, 100.0, 0.05);
}

TEST(CorpusStats, SingleLanguageIsHundredPercent) {
  Manifest m;
  ClipRecord r;
  r.language = "hindi";
  r.duration_s = 120.0;
  m.push_back(r);
  CorpusStats s = corpus_stats(m);
  ASSERT_EQ(s.rows.size(), 1u);
  EXPECT_DOUBLE_EQ(s.rows[0].percent, 100.0);
}

TEST(CorpusStats, EmptyManifest) {
  CorpusStats s = corpus_stats({});
  EXPECT_TRUE(s.rows.empty());
  EXPECT_DOUBLE_EQ(s.grand_total_hours, 0.0);
}

TEST(EvalRun, IdentityTranscriberIsZeroEverywhere) {
  std::map<std::string, std::vector<std::string>> sentences{
      {"english", {"one two three", "four five"}}, {"hindi", {"एक दो तीन"}}};
  std::string captured;
  SynthesizeFn synth = [&](const std::string&, const std::string& s) {
    captured = s;
    Waveform w;
    w.samples.assign(100, 0.0);
    return w;
  };
  TranscribeFn trans = [&](const Waveform&) { return captured; };
  EvalRunResult res = eval_wer_run(sentences, synth, trans);
  EXPECT_TRUE(res.failures.empty());
  for (const auto& [lang, rep] : res.per_language) EXPECT_DOUBLE_EQ(rep.wer(), 0.0) << lang;
}

TEST(EvalRun, DeletingLastWordOfTwoWordSentencesIsHalf) {
  std::map<std::string, std::vector<std::string>> sentences{
      {"english", {"alpha beta", "gamma delta", "epsilon zeta"}}};
  std::string captured;
  SynthesizeFn synth = [&](const std::string&, const std::string& s) {
    captured = s;
    return Waveform{};
  };
  TranscribeFn trans = [&](const Waveform&) {
    size_t space = captured.rfind(' ');
    return captured.substr(0, space);
  };
  EvalRunResult res = eval_wer_run(sentences, synth, trans);
  // pooled: 3 deletions over 6 reference words
  EXPECT_DOUBLE_EQ(res.per_language.at("english").wer(), 0.5);
}

TEST(EvalRun, FailuresExcludedAndListed) {
  std::map<std::string, std::vector<std::string>> sentences{
      {"english", {"ok one", "fail here", "ok two", "ok three", "ok four", "ok five", "ok six",
                   "ok seven", "ok eight", "ok nine"}}};
  std::string captured;
  SynthesizeFn synth = [&](const std::string&, const std::string& s) {
    if (s == "fail here") throw std::runtime_error("synthesis exploded");
    captured = s;
    return Waveform{};
  };
  TranscribeFn trans = [&](const Waveform&) { return captured; };
  EvalRunResult res = eval_wer_run(sentences, synth, trans);
  ASSERT_EQ(res.failures.size(), 1u);
  EXPECT_EQ(res.failures[0].sentence, "fail here");
  // 9 surviving sentences, all exact
  EXPECT_EQ(res.per_language.at("english").ref_word_count, 18);
  EXPECT_DOUBLE_EQ(res.per_language.at("english").wer(), 0.0);
}

TEST(EvalRun, MissingFunctionsRejected) {
  EXPECT_THROW(eval_wer_run({}, nullptr, nullptr), Error);
}

TEST(WerTable, FormatsAlignedGrid) {
  std::map<std::string, std::map<std::string, double>> data{
      {"english", {{"mahaflow", 0.02}}}, {"hindi", {{"mahaflow", 0.04}}}};
  std::string table = format_wer_table({"mahaflow", "other"}, data);
  EXPECT_NE(table.find("english"), std::string::npos);
  EXPECT_NE(table.find("2.0%"), std::string::npos);
  EXPECT_NE(table.find("-"), std::string::npos);  // missing system renders as dash
}
