#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mahaflow/manifest.hpp"
#include "mahaflow/unicode.hpp"
#include "mahaflow/wav.hpp"

namespace mahaflow {

// =====================================================================
//  Word error rate
// =====================================================================

struct WerReport {
  int64_t substitutions = 0;
  int64_t deletions = 0;
  int64_t insertions = 0;
  int64_t ref_word_count = 0;

  double wer() const {
    return static_cast<double>(substitutions + deletions + insertions) /
           static_cast<double>(std::max<int64_t>(ref_word_count, 1));
  }

  void pool(const WerReport& o) {
    substitutions += o.substitutions;
    deletions += o.deletions;
    insertions += o.insertions;
    ref_word_count += o.ref_word_count;
  }
};

// NFC, lowercase, drop punctuation codepoints, collapse whitespace.
inline std::string wer_normalize(const std::string& text) {
  std::vector<uint32_t> cps = uni::utf8_decode(uni::nfc(text));
  std::vector<uint32_t> out;
  bool pending_space = false;
  for (uint32_t cp : cps) {
    if (uni::is_punct(cp)) continue;
    if (uni::is_space(cp)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(uni::to_lower(cp));
  }
  return uni::utf8_encode(out);
}

inline std::vector<std::string> split_words(const std::string& normalized) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : normalized) {
    if (c == ' ') {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

using TextNormalizer = std::function<std::string(const std::string&)>;

// Word-level Levenshtein with unit costs; the backtrace prefers the
// diagonal on ties so substitutions win over insert+delete pairs.
inline WerReport wer(const std::string& ref, const std::string& hyp,
                     const TextNormalizer& normalizer = wer_normalize) {
  std::vector<std::string> r = split_words(normalizer(ref));
  std::vector<std::string> h = split_words(normalizer(hyp));
  const size_t n = r.size(), m = h.size();
  std::vector<std::vector<int64_t>> d(n + 1, std::vector<int64_t>(m + 1));
  for (size_t i = 0; i <= n; ++i) d[i][0] = static_cast<int64_t>(i);
  for (size_t j = 0; j <= m; ++j) d[0][j] = static_cast<int64_t>(j);
  for (size_t i = 1; i <= n; ++i)
    for (size_t j = 1; j <= m; ++j)
      d[i][j] = std::min({d[i - 1][j - 1] + (r[i - 1] == h[j - 1] ? 0 : 1), d[i - 1][j] + 1,
                          d[i][j - 1] + 1});

  WerReport rep;
  rep.ref_word_count = static_cast<int64_t>(n);
  size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + (r[i - 1] == h[j - 1] ? 0 : 1)) {
      if (r[i - 1] != h[j - 1]) ++rep.substitutions;
      --i;
      --j;
    } else if (i > 0 && d[i][j] == d[i - 1][j] + 1) {
      ++rep.deletions;
      --i;
    } else {
      ++rep.insertions;
      --j;
    }
  }
  return rep;
}

// =====================================================================
//  Corpus composition statistics
// =====================================================================

struct CorpusStats {
  struct Row {
    std::string language;
    double hours = 0.0;
    double percent = 0.0;  // rounded to 2 decimals
  };
  std::vector<Row> rows;  // sorted by language
  double grand_total_hours = 0.0;
};

inline CorpusStats corpus_stats(const Manifest& manifest) {
  std::map<std::string, double> hours;
  for (const auto& r : manifest) hours[r.language] += r.duration_s / 3600.0;
  CorpusStats s;
  for (const auto& [lang, h] : hours) s.grand_total_hours += h;
  for (const auto& [lang, h] : hours) {
    double pct = s.grand_total_hours > 0.0 ? h / s.grand_total_hours * 100.0 : 0.0;
    s.rows.push_back({lang, h, std::round(pct * 100.0) / 100.0});
  }
  return s;
}

inline std::string format_corpus_stats(const CorpusStats& s) {
  char buf[128];
  std::string out = "Language              Hours     Percent\n";
  for (const auto& r : s.rows) {
    std::snprintf(buf, sizeof(buf), "%-18s %10.2f   %6.2f%%\n", r.language.c_str(), r.hours, r.percent);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "%-18s %10.2f   %6.2f%%\n", "Grand Total", s.grand_total_hours,
                s.rows.empty() ? 0.0 : 100.0);
  out += buf;
  return out;
}

// =====================================================================
//  End-to-end WER evaluation run: synthesize -> transcribe -> score,
//  pooling S/D/I/N counts per language (not averaging per-sentence WER).
// =====================================================================

struct EvalFailure {
  std::string language;
  std::string sentence;
  std::string reason;
};

struct EvalRunResult {
  std::map<std::string, WerReport> per_language;
  std::vector<EvalFailure> failures;
};

using SynthesizeFn = std::function<Waveform(const std::string& language, const std::string& text)>;
using TranscribeFn = std::function<std::string(const Waveform&)>;

inline EvalRunResult eval_wer_run(const std::map<std::string, std::vector<std::string>>& sentences,
                                  const SynthesizeFn& synthesize_fn, const TranscribeFn& transcribe_fn,
                                  const TextNormalizer& normalizer = wer_normalize) {
  require(static_cast<bool>(synthesize_fn) && static_cast<bool>(transcribe_fn), Err::bad_argument,
          "eval_wer_run: both functions required");
  EvalRunResult res;
  for (const auto& [lang, lines] : sentences) {
    WerReport pooled;
    for (const std::string& sentence : lines) {
      try {
        Waveform audio = synthesize_fn(lang, sentence);
        std::string hyp = transcribe_fn(audio);
        pooled.pool(wer(sentence, hyp, normalizer));
      } catch (const std::exception& e) {
        res.failures.push_back({lang, sentence, e.what()});
      }
    }
    res.per_language[lang] = pooled;
  }
  return res;
}

// Aligned language x system table of WER percentages.
inline std::string format_wer_table(
    const std::vector<std::string>& systems,
    const std::map<std::string, std::map<std::string, double>>& wer_by_lang) {
  char buf[64];
  std::string out = "Language          ";
  for (const auto& s : systems) {
    std::snprintf(buf, sizeof(buf), " %14s", s.c_str());
    out += buf;
  }
  out += "\n";
  for (const auto& [lang, row] : wer_by_lang) {
    std::snprintf(buf, sizeof(buf), "%-18s", lang.c_str());
    out += buf;
    for (const auto& s : systems) {
      auto it = row.find(s);
      if (it == row.end())
        std::snprintf(buf, sizeof(buf), " %14s", "-");
      else
        std::snprintf(buf, sizeof(buf), " %13.1f%%", it->second * 100.0);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace mahaflow
