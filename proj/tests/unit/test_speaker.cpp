#include <gtest/gtest.h>

#include "mahaflow/speaker.hpp"
#include "mahaflow/trainer.hpp"

using namespace mahaflow;

namespace {

SpeakerEncoder make_encoder(nn::ParamStore& store, uint64_t seed = 1) {
  SpeakerEncoder enc;
  enc.cfg = SpeakerEncoderConfig{2, 16, 2, 8, 12};
  Rng rng(seed);
  enc.build(store, "spk", rng);
  return enc;
}

MelSpectrogram mel_of(const Tensor& frames) {
  MelSpectrogram m;
  m.frames = frames;
  m.config.n_mels = static_cast<int>(frames.cols);
  return m;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / std::sqrt(na * nb);
}

}  // namespace

TEST(SpeakerEncoder, OutputLengthIsOutDim) {
  nn::ParamStore store;
  SpeakerEncoder enc = make_encoder(store);
  Rng rng(2);
  for (int64_t t : {1, 3, 17}) {
    SpeakerEmbedding e = embed_clip(mel_of(Tensor::randn(t, 8, rng)), enc);
    EXPECT_EQ(e.size(), 12u);
    for (double x : e) EXPECT_TRUE(std::isfinite(x));
  }
}

TEST(SpeakerEncoder, InvariantToFrameDuplication) {
  nn::ParamStore store;
  SpeakerEncoder enc = make_encoder(store);
  Rng rng(3);
  Tensor clip = Tensor::randn(6, 8, rng);
  Tensor doubled(12, 8);
  for (int64_t t = 0; t < 6; ++t)
    for (int64_t r = 0; r < 2; ++r)
      for (int64_t j = 0; j < 8; ++j) doubled.at(2 * t + r, j) = clip.at(t, j);
  SpeakerEmbedding a = embed_clip(mel_of(clip), enc);
  SpeakerEmbedding b = embed_clip(mel_of(doubled), enc);
  for (size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-9);
}

TEST(SpeakerEncoder, DistinctClipsGiveDistinctEmbeddings) {
  nn::ParamStore store;
  SpeakerEncoder enc = make_encoder(store);
  Rng rng(4);
  SpeakerEmbedding a = embed_clip(mel_of(Tensor::randn(9, 8, rng)), enc);
  SpeakerEmbedding b = embed_clip(mel_of(Tensor::randn(9, 8, rng)), enc);
  EXPECT_LT(cosine(a, b), 0.999);
}

TEST(SpeakerEncoder, EmptyClipFails) {
  nn::ParamStore store;
  SpeakerEncoder enc = make_encoder(store);
  EXPECT_THROW(embed_clip(mel_of(Tensor(0, 8)), enc), Error);
}

TEST(ReferenceSet, MeanOfIdenticalClipsEqualsSingle) {
  nn::ParamStore store;
  SpeakerEncoder enc = make_encoder(store);
  Rng rng(5);
  Tensor clip = Tensor::randn(7, 8, rng);
  SpeakerEmbedding one = embed_clip(mel_of(clip), enc);
  SpeakerEmbedding three = embed_reference_set({mel_of(clip), mel_of(clip), mel_of(clip)}, enc);
  for (size_t i = 0; i < one.size(); ++i) EXPECT_DOUBLE_EQ(three[i], one[i]);
}

TEST(ReferenceSet, PermutationInvariant) {
  nn::ParamStore store;
  SpeakerEncoder enc = make_encoder(store);
  Rng rng(6);
  std::vector<MelSpectrogram> clips{mel_of(Tensor::randn(4, 8, rng)), mel_of(Tensor::randn(6, 8, rng)),
                                    mel_of(Tensor::randn(5, 8, rng))};
  SpeakerEmbedding a = embed_reference_set({clips[0], clips[1], clips[2]}, enc);
  SpeakerEmbedding b = embed_reference_set({clips[2], clips[0], clips[1]}, enc);
  for (size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
}

TEST(ReferenceSet, SingleClipEqualsEmbedClip) {
  nn::ParamStore store;
  SpeakerEncoder enc = make_encoder(store);
  Rng rng(7);
  Tensor clip = Tensor::randn(5, 8, rng);
  SpeakerEmbedding a = embed_clip(mel_of(clip), enc);
  SpeakerEmbedding b = embed_reference_set({mel_of(clip)}, enc);
  EXPECT_EQ(a, b);
}

TEST(ReferenceSet, ZeroClipsFails) {
  nn::ParamStore store;
  SpeakerEncoder enc = make_encoder(store);
  EXPECT_THROW(embed_reference_set({}, enc), Error);
}

TEST(SelectReferences, SameSpeakerTopThree) {
  Manifest m;
  auto rec = [](const std::string& spk, const std::string& src, double off, double dur) {
    ClipRecord r;
    r.audio_path = src + ".wav";
    r.source_id = src;
    r.offset_s = off;
    r.duration_s = dur;
    r.speaker_id = spk;
    r.language = "english";
    r.text = "x";
    return r;
  };
  m.push_back(rec("alice", "s1", 0, 5));
  m.push_back(rec("alice", "s1", 6, 5));
  m.push_back(rec("alice", "s1", 12, 5));
  m.push_back(rec("alice", "s1", 18, 5));
  m.push_back(rec("bob", "s1", 24, 5));
  auto refs = select_references(m[0], m);
  EXPECT_EQ(refs.size(), 3u);
  for (const auto& r : refs) {
    EXPECT_EQ(r.speaker_id, "alice");
    EXPECT_FALSE(r.offset_s == m[0].offset_s && r.audio_path == m[0].audio_path);
  }
}

TEST(SelectReferences, FewerWhenUnavailable) {
  Manifest m;
  ClipRecord a;
  a.speaker_id = "solo";
  a.source_id = "s";
  a.audio_path = "s.wav";
  a.offset_s = 0;
  a.duration_s = 2;
  ClipRecord b = a;
  b.offset_s = 3;
  m = {a, b};
  auto refs = select_references(a, m);
  EXPECT_EQ(refs.size(), 1u);
  EXPECT_EQ(refs[0].offset_s, 3.0);
}

TEST(SelectReferences, RanksByTemporalProximity) {
  Manifest m;
  auto rec = [](double off) {
    ClipRecord r;
    r.audio_path = "long.wav";
    r.source_id = "long";
    r.offset_s = off;
    r.duration_s = 4;
    r.speaker_id = "spk";
    return r;
  };
  ClipRecord target = rec(100);
  m = {target, rec(10), rec(95), rec(300), rec(500)};
  auto refs = select_references(target, m);
  ASSERT_EQ(refs.size(), 3u);
  EXPECT_EQ(refs[0].offset_s, 95.0);   // |d| = 5
  EXPECT_EQ(refs[1].offset_s, 10.0);   // |d| = 90
  EXPECT_EQ(refs[2].offset_s, 300.0);  // |d| = 200
}

TEST(SelectReferences, NoOtherClipsFails) {
  Manifest m;
  ClipRecord a;
  a.speaker_id = "solo";
  m = {a};
  EXPECT_THROW(select_references(a, m), Error);
}

TEST(SpeakerEncoder, GradientsMatchFiniteDifferences) {
  GradCheckReport rep = gradcheck_spk(1e-5, 16, 42);
  for (const auto& g : rep.groups) EXPECT_LT(g.max_rel_err, 1e-4) << g.name;
}
