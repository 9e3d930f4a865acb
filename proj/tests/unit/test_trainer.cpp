#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "mahaflow/trainer.hpp"

using namespace mahaflow;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string store_bytes(const nn::ParamStore& store) {
  std::string out;
  for (const auto& p : store.params)
    out.append(reinterpret_cast<const char*>(p->val.v.data()), p->val.v.size() * sizeof(double));
  return out;
}

// Plain-vanilla reference update, kept deliberately separate from the
// production code path.
struct RefAdamW {
  std::vector<double> m, v;
  int64_t t = 0;
  void step(std::vector<double>& p, const std::vector<double>& g, double lr, double wd,
            double b1, double b2, double eps) {
    if (m.empty()) {
      m.assign(p.size(), 0.0);
      v.assign(p.size(), 0.0);
    }
    ++t;
    for (size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      double mhat = m[i] / (1 - std::pow(b1, t));
      double vhat = v[i] / (1 - std::pow(b2, t));
      p[i] -= lr * mhat / (std::sqrt(vhat) + eps) + lr * wd * p[i];
    }
  }
};

M1Config tiny_m1_config() {
  M1Config cfg;
  cfg.n_layers = 1;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.ff_mult = 2;
  cfg.char_vocab_size = 10;
  cfg.sem_vocab_size = 7;
  cfg.n_languages = 2;
  cfg.max_seq_len = 64;
  cfg.spk = SpeakerEncoderConfig{1, 8, 2, 6, 8};
  return cfg;
}

std::vector<M1Example> tiny_m1_dataset(const M1Config& cfg, int n = 4) {
  Rng rng(100);
  std::vector<M1Example> out;
  for (int i = 0; i < n; ++i) {
    M1Example ex;
    ex.lang_id = i % cfg.n_languages;
    ex.spk.assign(static_cast<size_t>(cfg.spk.out_dim), 0.05 * (i + 1));
    ex.text_ids = {kTextStartId, 4 + (i % 3), 5, 6, kTextEndId};
    ex.sem_ids = {1 + (i % 4), 2, 3, cfg.sem_vocab_size - 1};
    out.push_back(ex);
  }
  return out;
}

nlohmann::ordered_json tiny_blob() {
  nlohmann::ordered_json j;
  j["note"] = "test";
  return j;
}

}  // namespace

TEST(OptimizerStep, MatchesReferenceImplementation) {
  Rng rng(1);
  nn::ParamStore store;
  auto p = store.add("w", Tensor::randn(4, 5, rng));
  std::vector<double> ref_p = p->val.v;
  RefAdamW ref;
  AdamState state;
  state.init_for(store);
  TrainConfig cfg;
  cfg.lr = 3e-3;
  cfg.weight_decay = 1e-2;

  Rng grad_rng(2);
  for (int step = 0; step < 7; ++step) {
    std::vector<double> g(ref_p.size());
    for (double& x : g) x = grad_rng.normal();
    p->ensure_grad();
    p->grad.v = g;
    optimizer_step(store, state, cfg);
    ref.step(ref_p, g, cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps);
    for (size_t i = 0; i < ref_p.size(); ++i) EXPECT_NEAR(p->val.v[i], ref_p[i], 1e-12);
  }
}

TEST(OptimizerStep, ZeroGradientNoDecayIsNoOp) {
  Rng rng(3);
  nn::ParamStore store;
  auto p = store.add("w", Tensor::randn(3, 3, rng));
  Tensor before = p->val;
  AdamState state;
  state.init_for(store);
  TrainConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  p->ensure_grad();
  p->grad.zero();
  optimizer_step(store, state, cfg);
  EXPECT_EQ(p->val.v, before.v);
}

TEST(OptimizerStep, DecayOnlyClosedForm) {
  nn::ParamStore store;
  auto p = store.add("w", Tensor::full(1, 4, 2.0));
  AdamState state;
  state.init_for(store);
  TrainConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 1e-3;
  p->ensure_grad();
  p->grad.zero();
  optimizer_step(store, state, cfg);
  for (double x : p->val.v) EXPECT_NEAR(x, 2.0 * (1.0 - 1e-4), 1e-15);
}

TEST(OptimizerStep, PositiveGradientDecreasesParameter) {
  nn::ParamStore store;
  auto p = store.add("w", Tensor::full(1, 1, 1.0));
  AdamState state;
  state.init_for(store);
  TrainConfig cfg;
  cfg.lr = 0.01;
  cfg.weight_decay = 0.0;
  p->ensure_grad();
  p->grad.v[0] = 0.7;
  optimizer_step(store, state, cfg);
  EXPECT_LT(p->val.v[0], 1.0);
}

TEST(OptimizerStep, NonFiniteGradientNamesGroup) {
  nn::ParamStore store;
  auto p = store.add("m1.block0.attn.wq", Tensor::full(1, 2, 0.5));
  AdamState state;
  state.init_for(store);
  TrainConfig cfg;
  p->ensure_grad();
  p->grad.v[1] = std::numeric_limits<double>::quiet_NaN();
  try {
    optimizer_step(store, state, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Err::non_finite);
    EXPECT_NE(std::string(e.what()).find("m1.block0.attn.wq"), std::string::npos);
  }
}

TEST(Batching, PartitionsByLengthEdges) {
  std::vector<int64_t> lengths{5, 6, 50, 52};
  auto batches = length_bucketed_batches(lengths, {10, 100}, 2, 7);
  ASSERT_EQ(batches.size(), 2u);
  for (const auto& b : batches) {
    ASSERT_EQ(b.size(), 2u);
    bool small = lengths[b[0]] <= 10;
    for (size_t idx : b) EXPECT_EQ(lengths[idx] <= 10, small);
  }
}

TEST(Batching, NeverMixesBuckets) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int64_t> lengths;
    for (int i = 0; i < 40; ++i) lengths.push_back(rng.uniform_int(1, 300));
    auto batches = length_bucketed_batches(lengths, {32, 128}, 4, static_cast<uint64_t>(trial));
    size_t covered = 0;
    for (const auto& b : batches) {
      covered += b.size();
      auto bucket_of = [](int64_t len) { return len <= 32 ? 0 : len <= 128 ? 1 : 2; };
      for (size_t idx : b) EXPECT_EQ(bucket_of(lengths[idx]), bucket_of(lengths[b[0]]));
    }
    EXPECT_GE(covered, lengths.size());  // resampling may add extras, never lose
  }
}

TEST(Batching, DeterministicUnderSeed) {
  std::vector<int64_t> lengths{5, 6, 7, 50, 52, 51, 200, 220};
  auto a = length_bucketed_batches(lengths, {10, 100}, 2, 42, 0.25);
  auto b = length_bucketed_batches(lengths, {10, 100}, 2, 42, 0.25);
  EXPECT_EQ(a, b);
}

TEST(Batching, ShortBucketFractionGuaranteed) {
  // one short record, many long ones
  std::vector<int64_t> lengths{4};
  for (int i = 0; i < 60; ++i) lengths.push_back(200);
  auto batches = length_bucketed_batches(lengths, {10}, 4, 3, 0.25);
  size_t short_batches = 0;
  for (const auto& b : batches)
    if (lengths[b[0]] <= 10) ++short_batches;
  EXPECT_GE(static_cast<double>(short_batches), 0.25 * static_cast<double>(batches.size()) - 1e-9);
}

TEST(Batching, EmptyManifestFails) {
  EXPECT_THROW(length_bucketed_batches({}, {10}, 2, 0), Error);
}

TEST(Checkpoint, RoundTripBitIdentical) {
  M1Config cfg = tiny_m1_config();
  M1Model m = build_m1(cfg, 5);
  TrainerState st;
  st.opt.init_for(m.store);
  st.rng = Rng(77);
  st.step = 12;
  Checkpoint ck = checkpoint_from_store("m1", tiny_blob(), m.store, &st.opt, &st.rng, st.step);
  std::string path = temp_path("ck_rt.mhck");
  save_checkpoint(ck, path);
  Checkpoint back = load_checkpoint(path);
  EXPECT_EQ(serialize_checkpoint(back), serialize_checkpoint(ck));
  EXPECT_EQ(back.step, 12);
  EXPECT_EQ(back.kind, "m1");
  EXPECT_EQ(back.rng_state, st.rng.save_state());
}

TEST(Checkpoint, TruncatedFileNamesTensor) {
  M1Config cfg = tiny_m1_config();
  M1Model m = build_m1(cfg, 6);
  Checkpoint ck = checkpoint_from_store("m1", tiny_blob(), m.store, nullptr, nullptr, 0);
  std::string bytes = serialize_checkpoint(ck);
  std::string path = temp_path("ck_trunc.mhck");
  std::ofstream f(path, std::ios::binary);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 64));
  f.close();
  try {
    load_checkpoint(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Err::truncated_file);
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
  }
}

TEST(Checkpoint, KindMismatchIsDistinctError) {
  M1Config cfg = tiny_m1_config();
  M1Model m = build_m1(cfg, 7);
  Checkpoint ck = checkpoint_from_store("m2", tiny_blob(), m.store, nullptr, nullptr, 0);
  std::string path = temp_path("ck_kind.mhck");
  save_checkpoint(ck, path);
  try {
    load_checkpoint(path, "m1");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Err::kind_mismatch);
  }
}

TEST(Checkpoint, BadMagic) {
  std::string path = temp_path("ck_magic.mhck");
  std::ofstream f(path, std::ios::binary);
  f << "NOPE nothing here";
  f.close();
  try {
    load_checkpoint(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Err::bad_magic);
  }
}

TEST(Training, LossDecreasesOnTinyOverfit) {
  M1Config cfg = tiny_m1_config();
  M1Model m = build_m1(cfg, 8);
  auto dataset = tiny_m1_dataset(cfg);
  TrainConfig tcfg;
  tcfg.lr = 1e-2;
  tcfg.max_steps = 60;
  tcfg.batch_items = 4;
  TrainerState st;
  st.rng = Rng(1);
  std::vector<double> losses;
  train_m1(m, dataset, tcfg, st, nullptr, [&](const StepRecord& r) { losses.push_back(r.loss); });
  ASSERT_EQ(losses.size(), 60u);
  EXPECT_LT(losses.back(), losses.front());
}

TEST(Training, ResumeReproducesTrajectory) {
  M1Config cfg = tiny_m1_config();
  auto dataset = tiny_m1_dataset(cfg);
  TrainConfig tcfg;
  tcfg.lr = 5e-3;
  tcfg.batch_items = 2;

  // straight 10-step run
  M1Model a = build_m1(cfg, 9);
  TrainerState sta;
  sta.rng = Rng(4);
  tcfg.max_steps = 10;
  std::vector<double> straight;
  train_m1(a, dataset, tcfg, sta, nullptr, [&](const StepRecord& r) { straight.push_back(r.loss); });

  // 5 steps, checkpoint, restore into a fresh model, 5 more
  M1Model b = build_m1(cfg, 9);
  TrainerState stb;
  stb.rng = Rng(4);
  tcfg.max_steps = 5;
  std::vector<double> split;
  train_m1(b, dataset, tcfg, stb, nullptr, [&](const StepRecord& r) { split.push_back(r.loss); });
  Checkpoint ck = checkpoint_from_store("m1", tiny_blob(), b.store, &stb.opt, &stb.rng, stb.step);
  std::string path = temp_path("ck_resume.mhck");
  save_checkpoint(ck, path);

  Checkpoint loaded = load_checkpoint(path, "m1");
  M1Model c = build_m1(cfg, 1234);  // different init, then overwritten
  load_store_from_checkpoint(c.store, loaded);
  TrainerState stc;
  stc.opt.m = loaded.opt_m;
  stc.opt.v = loaded.opt_v;
  stc.opt.step = loaded.opt_step;
  stc.rng.load_state(loaded.rng_state);
  stc.step = loaded.step;
  tcfg.max_steps = 10;
  train_m1(c, dataset, tcfg, stc, nullptr, [&](const StepRecord& r) { split.push_back(r.loss); });

  ASSERT_EQ(straight.size(), split.size());
  for (size_t i = 0; i < straight.size(); ++i) EXPECT_EQ(straight[i], split[i]) << "step " << i;
  EXPECT_EQ(store_bytes(a.store), store_bytes(c.store));
}

TEST(Training, FreezeAllKeepsParametersBitIdentical) {
  M1Config cfg = tiny_m1_config();
  M1Model m = build_m1(cfg, 10);
  std::string before = store_bytes(m.store);
  auto dataset = tiny_m1_dataset(cfg);
  TrainConfig tcfg;
  tcfg.max_steps = 8;
  tcfg.batch_items = 2;
  tcfg.freeze = {"m1", "spk"};  // every group lives under one of these
  tcfg.freeze = {"m1"};
  TrainerState st;
  train_m1(m, dataset, tcfg, st);
  EXPECT_EQ(store_bytes(m.store), before);
}

TEST(Training, MisspelledFreezeGroupListsValidNames) {
  M1Config cfg = tiny_m1_config();
  M1Model m = build_m1(cfg, 11);
  auto dataset = tiny_m1_dataset(cfg);
  TrainConfig tcfg;
  tcfg.max_steps = 1;
  tcfg.freeze = {"m1.text_haed"};
  TrainerState st;
  try {
    train_m1(m, dataset, tcfg, st);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Err::unknown_group);
    EXPECT_NE(std::string(e.what()).find("m1.text_head"), std::string::npos);
  }
}

TEST(Finetune, HeadsStayFrozenOthersMove) {
  M1Config cfg = tiny_m1_config();
  M1Model m = build_m1(cfg, 12);
  Tensor text_w = m.text_head_w->val;
  Tensor text_b = m.text_head_b->val;
  Tensor sem_w = m.sem_head_w->val;
  Tensor char_emb = m.char_emb->val;

  auto dataset = tiny_m1_dataset(cfg);
  TrainConfig tcfg;
  tcfg.lr = 1e-2;
  tcfg.max_steps = 20;
  tcfg.batch_items = 2;
  tcfg.freeze = {"m1.text_head", "m1.sem_head"};
  TrainerState st;
  finetune_m1(m, dataset, tcfg, st);

  EXPECT_EQ(m.text_head_w->val.v, text_w.v);
  EXPECT_EQ(m.text_head_b->val.v, text_b.v);
  EXPECT_EQ(m.sem_head_w->val.v, sem_w.v);
  EXPECT_NE(m.char_emb->val.v, char_emb.v);
}

TEST(Training, NonFiniteLossAborts) {
  M1Config cfg = tiny_m1_config();
  M1Model m = build_m1(cfg, 13);
  // poison a row every sequence uses (the TEXT_START embedding)
  for (int64_t j = 0; j < cfg.d_model; ++j)
    m.char_emb->val.at(kTextStartId, j) = std::numeric_limits<double>::infinity();
  auto dataset = tiny_m1_dataset(cfg);
  TrainConfig tcfg;
  tcfg.max_steps = 3;
  TrainerState st;
  EXPECT_THROW(train_m1(m, dataset, tcfg, st), Error);
}

TEST(GradCheck, LinearModelSquaredLossIsExact) {
  nn::ParamStore store;
  Rng rng(14);
  auto w = store.add("w", Tensor::randn(3, 2, rng));
  Tensor x = Tensor::randn(5, 3, rng);
  Tensor y = Tensor::randn(5, 2, rng);
  // the loss is quadratic, so central differences carry zero truncation
  // error at any step; a wider step just suppresses rounding noise
  GradCheckReport rep = gradcheck(
      store, [&]() { return ad::mean_sq_diff(ad::matmul(ad::constant(x), w), y); }, 1e-3, 32, 0);
  EXPECT_LT(rep.overall, 1e-9);
}

TEST(GradCheck, ReportsEveryGroup) {
  GradCheckReport rep = gradcheck_spk(1e-5, 4, 2);
  EXPECT_FALSE(rep.groups.empty());
  for (const auto& g : rep.groups) {
    EXPECT_FALSE(g.name.empty());
    EXPECT_GE(g.coords, 1);
  }
}
