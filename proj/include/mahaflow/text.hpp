#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mahaflow/common.hpp"
#include "mahaflow/unicode.hpp"

namespace mahaflow {

// =====================================================================
//  Character vocabulary
// =====================================================================

inline constexpr int64_t kPadId = 0;
inline constexpr int64_t kUnkId = 1;
inline constexpr int64_t kTextStartId = 2;
inline constexpr int64_t kTextEndId = 3;
inline constexpr int64_t kNumReservedIds = 4;

struct CharVocab {
  // codepoint -> id, ids contiguous; reserved ids 0..3 carry no codepoint.
  std::map<uint32_t, int64_t> to_id;
  std::vector<uint32_t> to_cp;  // index = id - kNumReservedIds

  int64_t size() const { return kNumReservedIds + static_cast<int64_t>(to_cp.size()); }

  int64_t id_of(uint32_t cp) const {
    auto it = to_id.find(cp);
    return it == to_id.end() ? kUnkId : it->second;
  }
};

// Character inventory: the top (cap - reserved) codepoints by corpus
// frequency (ties to the lower codepoint), with final ids assigned in
// ascending codepoint order so construction is deterministic.
inline CharVocab build_vocab(const std::vector<std::string>& corpus, int64_t cap) {
  require(!corpus.empty(), Err::empty_input, "build_vocab: empty corpus");
  require(cap >= kNumReservedIds, Err::bad_argument, "build_vocab: cap below reserved rows");
  std::unordered_map<uint32_t, int64_t> freq;
  for (const std::string& rec : corpus)
    for (uint32_t cp : uni::utf8_decode(uni::nfc(rec))) ++freq[cp];

  std::vector<std::pair<uint32_t, int64_t>> items(freq.begin(), freq.end());
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  size_t keep = std::min(items.size(), static_cast<size_t>(cap - kNumReservedIds));
  std::vector<uint32_t> cps;
  cps.reserve(keep);
  for (size_t i = 0; i < keep; ++i) cps.push_back(items[i].first);
  std::sort(cps.begin(), cps.end());

  CharVocab v;
  v.to_cp = cps;
  for (size_t i = 0; i < cps.size(); ++i)
    v.to_id[cps[i]] = kNumReservedIds + static_cast<int64_t>(i);
  return v;
}

// =====================================================================
//  Language table
// =====================================================================

struct LanguageTable {
  std::vector<std::string> codes;

  static LanguageTable defaults() {
    return LanguageTable{{"assamese", "bengali", "bodo", "dogri", "english", "french", "german",
                          "gujarati", "hindi", "kannada", "malayalam", "manipuri", "marathi",
                          "odia", "punjabi", "rajasthani", "sanskrit", "spanish", "tamil",
                          "telugu", "urdu"}};
  }

  int64_t size() const { return static_cast<int64_t>(codes.size()); }

  bool contains(const std::string& code) const {
    return std::find(codes.begin(), codes.end(), code) != codes.end();
  }

  int64_t id_of(const std::string& code) const {
    auto it = std::find(codes.begin(), codes.end(), code);
    require(it != codes.end(), Err::unknown_language, "unknown language code: " + code);
    return static_cast<int64_t>(it - codes.begin());
  }
};

// =====================================================================
//  Text token stream
// =====================================================================

struct TextTokenSeq {
  int64_t lang_id = 0;
  std::vector<int64_t> ids;  // TEXT_START ... TEXT_END
};

inline TextTokenSeq encode_text(const std::string& text, const std::string& lang,
                                const CharVocab& v, const LanguageTable& langs) {
  TextTokenSeq seq;
  seq.lang_id = langs.id_of(lang);
  seq.ids.push_back(kTextStartId);
  for (uint32_t cp : uni::utf8_decode(uni::nfc(text))) seq.ids.push_back(v.id_of(cp));
  seq.ids.push_back(kTextEndId);
  return seq;
}

inline std::string decode_text(const TextTokenSeq& seq, const CharVocab& v) {
  std::vector<uint32_t> cps;
  for (int64_t id : seq.ids) {
    require(id >= 0 && id < v.size(), Err::id_out_of_range, "decode_text: id out of range");
    if (id == kUnkId) {
      cps.push_back(0xFFFD);
    } else if (id >= kNumReservedIds) {
      cps.push_back(v.to_cp[static_cast<size_t>(id - kNumReservedIds)]);
    }
    // PAD/TEXT_START/TEXT_END are dropped
  }
  return uni::utf8_encode(cps);
}

// =====================================================================
//  Vocab file: header "MAHAVOCAB <size>", then "<hex codepoint> <id>" rows
//  for the non-reserved entries.
// =====================================================================

inline void save_vocab(const CharVocab& v, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  require(f.good(), Err::write_failed, "cannot write " + path);
  f << "MAHAVOCAB " << v.size() << "\n";
  for (size_t i = 0; i < v.to_cp.size(); ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04X %lld", v.to_cp[i],
                  static_cast<long long>(kNumReservedIds + static_cast<int64_t>(i)));
    f << buf << "\n";
  }
  require(f.good(), Err::write_failed, "short write: " + path);
}

inline CharVocab load_vocab(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), Err::missing_file, "cannot open " + path);
  std::string magic;
  int64_t size = 0;
  f >> magic >> size;
  require(magic == "MAHAVOCAB", Err::bad_magic, "not a vocab file: " + path);
  require(size >= kNumReservedIds, Err::malformed_file, "bad vocab size: " + path);
  CharVocab v;
  std::string hex;
  int64_t id = 0;
  while (f >> hex >> id) {
    uint32_t cp = static_cast<uint32_t>(std::stoul(hex, nullptr, 16));
    require(id == kNumReservedIds + static_cast<int64_t>(v.to_cp.size()), Err::malformed_file,
            "vocab ids must be contiguous: " + path);
    v.to_cp.push_back(cp);
    v.to_id[cp] = id;
  }
  require(v.size() == size, Err::malformed_file, "vocab row count mismatch: " + path);
  return v;
}

inline uint64_t vocab_hash(const CharVocab& v) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (uint32_t cp : v.to_cp) h = fnv1a64(&cp, sizeof(cp), h);
  return h;
}

// =====================================================================
//  Nukta dictionary: word-exact replacement map
// =====================================================================

struct NuktaMap {
  std::unordered_map<std::string, std::string> entries;

  void add(const std::string& from, const std::string& to) {
    require(from != to, Err::bad_argument, "nukta entry maps to itself: " + from);
    require(!entries.count(from), Err::bad_argument, "duplicate nukta key: " + from);
    entries.emplace(from, to);
  }
};

// File format: one "source<TAB>target" per line, '#' comments and blank
// lines ignored.
inline NuktaMap load_nukta_map(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), Err::missing_file, "cannot open " + path);
  NuktaMap m;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    size_t tab = line.find('\t');
    require(tab != std::string::npos, Err::malformed_file, "nukta line missing tab: " + line);
    m.add(line.substr(0, tab), line.substr(tab + 1));
  }
  return m;
}

// Replace whole whitespace-delimited words; whitespace preserved verbatim.
inline std::string apply_nukta(const std::string& text, const NuktaMap& m) {
  std::string out;
  out.reserve(text.size());
  size_t i = 0;
  auto is_ws = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
  while (i < text.size()) {
    if (is_ws(text[i])) {
      out.push_back(text[i++]);
      continue;
    }
    size_t j = i;
    while (j < text.size() && !is_ws(text[j])) ++j;
    std::string word = text.substr(i, j - i);
    auto it = m.entries.find(word);
    out += (it != m.entries.end()) ? it->second : word;
    i = j;
  }
  return out;
}

}  // namespace mahaflow
