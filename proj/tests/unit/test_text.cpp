#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "mahaflow/text.hpp"

using namespace mahaflow;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST(BuildVocab, CountsDistinctCodepoints) {
  CharVocab v = build_vocab({"ab", "ba"}, 100);
  EXPECT_EQ(v.size(), 6);  // 4 reserved + 'a' + 'b'
  EXPECT_NE(v.id_of('a'), kUnkId);
  EXPECT_NE(v.id_of('b'), kUnkId);
}

TEST(BuildVocab, CapDropsLeastFrequent) {
  CharVocab v = build_vocab({"aaab", "bc"}, 5);  // freq a:3 b:2 c:1
  EXPECT_EQ(v.size(), 5);
  EXPECT_NE(v.id_of('a'), kUnkId);
  EXPECT_EQ(v.id_of('c'), kUnkId);
}

TEST(BuildVocab, SingleRecord) {
  CharVocab v = build_vocab({"a"}, 100);
  EXPECT_EQ(v.size(), kNumReservedIds + 1);
}

TEST(BuildVocab, DeterministicBytes) {
  std::vector<std::string> corpus{"hello world", "nukta ज़रा", "mixed 123"};
  CharVocab a = build_vocab(corpus, 50);
  CharVocab b = build_vocab(corpus, 50);
  std::string pa = temp_path("vocab_a.txt"), pb = temp_path("vocab_b.txt");
  save_vocab(a, pa);
  save_vocab(b, pb);
  EXPECT_EQ(file_bytes(pa), file_bytes(pb));
}

TEST(BuildVocab, IdsAscendByCodepoint) {
  CharVocab v = build_vocab({"zya"}, 100);
  EXPECT_LT(v.id_of('a'), v.id_of('y'));
  EXPECT_LT(v.id_of('y'), v.id_of('z'));
}

TEST(BuildVocab, EmptyCorpusFails) { EXPECT_THROW(build_vocab({}, 10), Error); }

TEST(EncodeText, EmptyStringIsJustMarkers) {
  CharVocab v = build_vocab({"abc"}, 100);
  LanguageTable langs = LanguageTable::defaults();
  TextTokenSeq seq = encode_text("", "english", v, langs);
  ASSERT_EQ(seq.ids.size(), 2u);
  EXPECT_EQ(seq.ids[0], kTextStartId);
  EXPECT_EQ(seq.ids[1], kTextEndId);
}

TEST(EncodeText, RoundTripOnInVocabText) {
  std::vector<std::string> corpus{"the quick brown fox", "जरा रुको ज़रा"};
  CharVocab v = build_vocab(corpus, 200);
  LanguageTable langs = LanguageTable::defaults();
  for (const std::string& s : corpus) {
    TextTokenSeq seq = encode_text(s, "hindi", v, langs);
    EXPECT_EQ(decode_text(seq, v), uni::nfc(s));
  }
  // random strings drawn from the vocab inventory
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<uint32_t> cps;
    for (int i = 0; i < 12; ++i)
      cps.push_back(v.to_cp[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(v.to_cp.size()) - 1))]);
    std::string s = uni::utf8_encode(cps);
    EXPECT_EQ(decode_text(encode_text(s, "english", v, langs), v), uni::nfc(s));
  }
}

TEST(EncodeText, UnknownCodepointBecomesUnk) {
  CharVocab v = build_vocab({"abc"}, 100);
  LanguageTable langs = LanguageTable::defaults();
  TextTokenSeq seq = encode_text("aZc", "english", v, langs);
  ASSERT_EQ(seq.ids.size(), 5u);
  EXPECT_EQ(seq.ids[2], kUnkId);
  std::string back = decode_text(seq, v);
  EXPECT_EQ(back, std::string("a\xEF\xBF\xBD") + "c");  // U+FFFD in the middle
}

TEST(EncodeText, UnknownLanguageFails) {
  CharVocab v = build_vocab({"abc"}, 100);
  try {
    encode_text("a", "klingon", v, LanguageTable::defaults());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Err::unknown_language);
  }
}

TEST(DecodeText, RejectsOutOfRangeIds) {
  CharVocab v = build_vocab({"abc"}, 100);
  TextTokenSeq seq;
  seq.ids = {kTextStartId, v.size(), kTextEndId};
  EXPECT_THROW(decode_text(seq, v), Error);
}

TEST(EncodeText, NormalizesBeforeLookup) {
  // precomposed vs decomposed input must encode identically
  std::string decomposed = "क़";  // base + combining nukta
  std::string precomposed = "क़";
  CharVocab v = build_vocab({decomposed}, 100);
  LanguageTable langs = LanguageTable::defaults();
  TextTokenSeq a = encode_text(decomposed, "hindi", v, langs);
  TextTokenSeq b = encode_text(precomposed, "hindi", v, langs);
  EXPECT_EQ(a.ids, b.ids);
  for (int64_t id : a.ids) EXPECT_NE(id, kUnkId);
}

TEST(VocabFile, RoundTripAndErrors) {
  CharVocab v = build_vocab({"abc ज़रा"}, 100);
  std::string path = temp_path("vocab_rt.txt");
  save_vocab(v, path);
  CharVocab back = load_vocab(path);
  EXPECT_EQ(back.to_cp, v.to_cp);
  EXPECT_EQ(vocab_hash(back), vocab_hash(v));

  std::string bad = temp_path("vocab_bad.txt");
  std::ofstream f(bad);
  f << "NOTAVOCAB 5\n";
  f.close();
  try {
    load_vocab(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Err::bad_magic);
  }
}

TEST(Nukta, EmptyMapIsIdentity) {
  NuktaMap m;
  EXPECT_EQ(apply_nukta("जरा रुको", m), "जरा रुको");
}

TEST(Nukta, ReplacesWholeWords) {
  NuktaMap m;
  m.add("जरा", "ज़रा");
  EXPECT_EQ(apply_nukta("जरा रुको", m), "ज़रा रुको");
  // substring of a larger word must not match
  EXPECT_EQ(apply_nukta("जराजरा", m), "जराजरा");
}

TEST(Nukta, PreservesWhitespaceVerbatim) {
  NuktaMap m;
  m.add("a", "b");
  EXPECT_EQ(apply_nukta("  a\t a\na ", m), "  b\t b\nb ");
}

TEST(Nukta, IdempotentWhenTargetsAreNotKeys) {
  Rng rng(21);
  const std::vector<std::string> sources{"ka", "kha", "ga", "ja"};
  const std::vector<std::string> targets{"k.a", "kh.a", "g.a", "j.a"};
  NuktaMap m;
  for (size_t i = 0; i < sources.size(); ++i) m.add(sources[i], targets[i]);
  for (int trial = 0; trial < 50; ++trial) {
    std::string text;
    for (int w = 0; w < 8; ++w) {
      int64_t pick = rng.uniform_int(0, 5);
      text += pick < 4 ? sources[static_cast<size_t>(pick)] : "other";
      if (w + 1 < 8) text += ' ';
    }
    std::string once = apply_nukta(text, m);
    EXPECT_EQ(apply_nukta(once, m), once);
  }
}

TEST(Nukta, WordCountPreserved) {
  NuktaMap m;
  m.add("जरा", "ज़रा");
  std::string in = "जरा रुको जरा";
  std::string out = apply_nukta(in, m);
  auto count_words = [](const std::string& s) {
    int n = 0;
    bool in_word = false;
    for (char c : s) {
      bool ws = c == ' ' || c == '\t' || c == '\n';
      if (!ws && !in_word) ++n;
      in_word = !ws;
    }
    return n;
  };
  EXPECT_EQ(count_words(in), count_words(out));
}

TEST(Nukta, FileFormat) {
  std::string path = temp_path("nukta.tsv");
  std::ofstream f(path);
  f << "# comment line\n";
  f << "जरा\tज़रा\n";
  f << "\n";
  f << "करीब\tक़रीब\n";
  f.close();
  NuktaMap m = load_nukta_map(path);
  EXPECT_EQ(m.entries.size(), 2u);
  EXPECT_EQ(apply_nukta("जरा", m), "ज़रा");
}

TEST(Nukta, RejectsSelfMapAndDuplicates) {
  NuktaMap m;
  EXPECT_THROW(m.add("x", "x"), Error);
  m.add("a", "b");
  EXPECT_THROW(m.add("a", "c"), Error);
}
