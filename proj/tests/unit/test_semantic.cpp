#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "mahaflow/semantic.hpp"

using namespace mahaflow;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

// Exhaustive 2-cluster oracle: best inertia over all bipartitions.
double best_two_cluster_inertia(const Tensor& pts) {
  const int64_t n = pts.rows, d = pts.cols;
  double best = 1e300;
  for (uint32_t mask = 1; mask + 1 < (1u << n); ++mask) {
    std::vector<double> mean0(static_cast<size_t>(d), 0.0), mean1(static_cast<size_t>(d), 0.0);
    int64_t c0 = 0, c1 = 0;
    for (int64_t i = 0; i < n; ++i) {
      const double* p = pts.ptr(i);
      if (mask & (1u << i)) {
        ++c1;
        for (int64_t j = 0; j < d; ++j) mean1[static_cast<size_t>(j)] += p[j];
      } else {
        ++c0;
        for (int64_t j = 0; j < d; ++j) mean0[static_cast<size_t>(j)] += p[j];
      }
    }
    for (int64_t j = 0; j < d; ++j) {
      mean0[static_cast<size_t>(j)] /= static_cast<double>(c0);
      mean1[static_cast<size_t>(j)] /= static_cast<double>(c1);
    }
    double inertia = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const double* p = pts.ptr(i);
      const auto& m = (mask & (1u << i)) ? mean1 : mean0;
      for (int64_t j = 0; j < d; ++j) {
        double diff = p[j] - m[static_cast<size_t>(j)];
        inertia += diff * diff;
      }
    }
    best = std::min(best, inertia);
  }
  return best;
}

double codebook_inertia(const Codebook& cb, const Tensor& pts) {
  double total = 0.0;
  for (int64_t i = 0; i < pts.rows; ++i) {
    double best = 1e300;
    for (int64_t c = 0; c < cb.k; ++c) {
      double s = 0.0;
      for (int64_t j = 0; j < cb.d; ++j) {
        double diff = pts.at(i, j) - static_cast<double>(cb.row(c)[j]);
        s += diff * diff;
      }
      best = std::min(best, s);
    }
    total += best;
  }
  return total;
}

}  // namespace

TEST(MfccProvider, FrameCountAndDim) {
  MfccProvider p;
  Waveform w;
  w.samples.assign(48000, 0.0);
  FrameEmbeddingSeq e = extract_frame_embeddings(w, p);
  EXPECT_EQ(e.frames.rows, 50);  // 2 s at 25 Hz
  EXPECT_EQ(e.frames.cols, MfccProvider::kDim);
  EXPECT_EQ(e.frames.cols, 14);
  EXPECT_EQ(e.frame_rate, 25);
}

TEST(MfccProvider, ZeroSignalGivesIdenticalFrames) {
  MfccProvider p;
  Waveform w;
  w.samples.assign(24000, 0.0);
  FrameEmbeddingSeq e = extract_frame_embeddings(w, p);
  ASSERT_GE(e.frames.rows, 2);
  for (int64_t t = 1; t < e.frames.rows; ++t)
    for (int64_t j = 0; j < e.frames.cols; ++j)
      EXPECT_DOUBLE_EQ(e.frames.at(t, j), e.frames.at(0, j));
}

TEST(Embeddings, RequiresNominalRate) {
  MfccProvider p;
  Waveform w;
  w.sample_rate = 16000;
  w.samples.assign(16000, 0.0);
  try {
    extract_frame_embeddings(w, p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Err::rate_mismatch);
  }
}

TEST(SidecarProvider, MissingFileIsDistinctError) {
  SidecarProvider p;
  Waveform w;
  w.samples.assign(24000, 0.0);
  try {
    extract_frame_embeddings(w, p, temp_path("nonexistent.wav"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Err::sidecar_missing);
  }
}

TEST(SidecarProvider, RoundTrip) {
  Rng rng(4);
  FrameEmbeddingSeq e;
  e.frame_rate = 25;
  e.frames = Tensor::randn(17, 14, rng);
  std::string wav_path = temp_path("sidecar_source.wav");
  save_embeddings(e, "sidecar", wav_path + ".mhem");
  SidecarProvider p;
  Waveform w;
  w.samples.assign(24000, 0.0);
  FrameEmbeddingSeq back = extract_frame_embeddings(w, p, wav_path);
  EXPECT_EQ(back.frames.rows, 17);
  EXPECT_EQ(back.frames.cols, 14);
  for (size_t i = 0; i < back.frames.v.size(); ++i)
    EXPECT_EQ(back.frames.v[i], static_cast<double>(static_cast<float>(e.frames.v[i])));
}

TEST(FitCodebook, ExactPointsGiveZeroInertia) {
  Tensor pts(4, 2);
  double coords[4][2] = {{0, 0}, {4, 0}, {0, 4}, {4, 4}};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 2; ++j) pts.at(i, j) = coords[i][j];
  Codebook cb = fit_codebook(pts, 4, 50, 1);
  EXPECT_NEAR(codebook_inertia(cb, pts), 0.0, 1e-12);
}

TEST(FitCodebook, TwoClustersReachGlobalOptimum) {
  Tensor pts(4, 2);
  double coords[4][2] = {{0, 0}, {0, 1}, {10, 0}, {10, 1}};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 2; ++j) pts.at(i, j) = coords[i][j];
  Codebook cb = fit_codebook(pts, 2, 50, 7);
  double oracle = best_two_cluster_inertia(pts);
  EXPECT_NEAR(oracle, 1.0, 1e-12);  // centroids (0, 0.5) and (10, 0.5)
  EXPECT_NEAR(codebook_inertia(cb, pts), oracle, 1e-9);
  std::vector<std::pair<float, float>> cents{{cb.row(0)[0], cb.row(0)[1]},
                                             {cb.row(1)[0], cb.row(1)[1]}};
  std::sort(cents.begin(), cents.end());
  EXPECT_FLOAT_EQ(cents[0].first, 0.0f);
  EXPECT_FLOAT_EQ(cents[0].second, 0.5f);
  EXPECT_FLOAT_EQ(cents[1].first, 10.0f);
  EXPECT_FLOAT_EQ(cents[1].second, 0.5f);
}

TEST(FitCodebook, DeterministicUnderSeed) {
  Rng rng(2);
  Tensor pts = Tensor::randn(60, 5, rng);
  Codebook a = fit_codebook(pts, 8, 40, 123);
  Codebook b = fit_codebook(pts, 8, 40, 123);
  EXPECT_EQ(serialize_codebook(a), serialize_codebook(b));
}

TEST(FitCodebook, InertiaMonotoneAndFixedPoint) {
  Rng rng(6);
  Tensor pts = Tensor::randn(120, 4, rng);
  KmeansTrace trace;
  fit_codebook(pts, 6, 100, 11, "mfcc13e", 25, &trace);
  ASSERT_GE(trace.iterations, 2);
  EXPECT_EQ(trace.reseeds, 0);
  for (size_t i = 1; i < trace.inertia_per_iter.size(); ++i)
    EXPECT_LE(trace.inertia_per_iter[i], trace.inertia_per_iter[i - 1] + 1e-12);
  EXPECT_TRUE(trace.converged);
  EXPECT_TRUE(trace.nearest_ok);
  EXPECT_LT(trace.fixed_point_max_err, 1e-9);
}

TEST(FitCodebook, FewerPointsThanClustersFails) {
  Tensor pts(3, 2);
  try {
    fit_codebook(pts, 4, 10, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Err::too_few_points);
  }
}

TEST(EncodeTokens, NearestAndTieRules) {
  Codebook cb;
  cb.k = 6;
  cb.d = 2;
  cb.centroids = {0, 0, 5, 5, 0, 2, 9, 9, 7, 7, 4, 2};  // centroid 2 at (0,2), 5 at (4,2)
  cb.provider_id = "test";

  FrameEmbeddingSeq e;
  e.frames = Tensor(3, 2);
  e.frames.at(0, 0) = 5;  // exactly centroid 1
  e.frames.at(0, 1) = 5;
  e.frames.at(1, 0) = 2;  // equidistant between centroids 2 and 5 -> lower index wins
  e.frames.at(1, 1) = 2;
  e.frames.at(2, 0) = 9;
  e.frames.at(2, 1) = 9;
  SemanticTokenSeq seq = encode_tokens(e, cb);
  ASSERT_EQ(seq.ids.size(), 4u);  // 3 frames + terminal stop
  EXPECT_EQ(seq.ids[0], 1);
  EXPECT_EQ(seq.ids[1], 2);
  EXPECT_EQ(seq.ids[2], 3);
  EXPECT_EQ(seq.ids[3], cb.sem_stop());
  EXPECT_EQ(seq.content_ids().size(), 3u);
}

TEST(EncodeTokens, PermutationEquivariant) {
  Rng rng(8);
  Codebook cb = fit_codebook(Tensor::randn(40, 3, rng), 5, 30, 3);
  Tensor frames = Tensor::randn(12, 3, rng);
  FrameEmbeddingSeq e;
  e.frames = frames;
  std::vector<int64_t> base = encode_tokens(e, cb).content_ids();

  std::vector<int64_t> perm{5, 2, 9, 0, 11, 3, 7, 1, 10, 4, 8, 6};
  FrameEmbeddingSeq shuffled;
  shuffled.frames = Tensor(12, 3);
  for (size_t i = 0; i < perm.size(); ++i)
    for (int64_t j = 0; j < 3; ++j)
      shuffled.frames.at(static_cast<int64_t>(i), j) = frames.at(perm[i], j);
  std::vector<int64_t> out = encode_tokens(shuffled, cb).content_ids();
  for (size_t i = 0; i < perm.size(); ++i) EXPECT_EQ(out[i], base[static_cast<size_t>(perm[i])]);
}

TEST(EncodeTokens, DimensionMismatchFails) {
  Codebook cb;
  cb.k = 2;
  cb.d = 3;
  cb.centroids.assign(6, 0.0f);
  FrameEmbeddingSeq e;
  e.frames = Tensor(2, 2);
  try {
    encode_tokens(e, cb);
    FAIL();
  } catch (const Error& e2) {
    EXPECT_EQ(e2.code(), Err::dim_mismatch);
  }
}

TEST(CodebookFile, RoundTripBitIdentical) {
  Rng rng(5);
  Codebook cb = fit_codebook(Tensor::randn(80, 14, rng), 64, 30, 9);
  std::string path = temp_path("cb_rt.mhcb");
  save_codebook(cb, path);
  Codebook back = load_codebook(path);
  EXPECT_EQ(serialize_codebook(back), serialize_codebook(cb));
  EXPECT_EQ(codebook_hash(back), codebook_hash(cb));
}

TEST(CodebookFile, SizeMatchesFormat) {
  Rng rng(5);
  Codebook cb = fit_codebook(Tensor::randn(80, 14, rng), 64, 30, 9, "mfcc13e", 25);
  std::string path = temp_path("cb_size.mhcb");
  save_codebook(cb, path);
  // magic(4) + version(4) + k(4) + d(4) + frame_rate(4) + provider len(2)
  // + provider bytes + 64*14 f32
  size_t expected = 4 + 4 + 4 + 4 + 4 + 2 + cb.provider_id.size() + 64 * 14 * 4;
  EXPECT_EQ(std::filesystem::file_size(path), expected);
}

TEST(CodebookFile, DistinctErrors) {
  std::string path = temp_path("cb_bad.mhcb");
  std::ofstream f(path, std::ios::binary);
  f << "XXXXsome junk";
  f.close();
  try {
    load_codebook(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Err::bad_magic);
  }

  Rng rng(5);
  Codebook cb = fit_codebook(Tensor::randn(20, 3, rng), 4, 20, 1);
  std::string good = serialize_codebook(cb);
  std::string trunc_path = temp_path("cb_trunc.mhcb");
  std::ofstream tf(trunc_path, std::ios::binary);
  tf.write(good.data(), static_cast<std::streamsize>(good.size() - 6));
  tf.close();
  try {
    load_codebook(trunc_path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Err::truncated_file);
  }

  std::string vpath = temp_path("cb_ver.mhcb");
  std::string bad_ver = good;
  bad_ver[4] = 9;  // version field
  std::ofstream vf(vpath, std::ios::binary);
  vf.write(bad_ver.data(), static_cast<std::streamsize>(bad_ver.size()));
  vf.close();
  try {
    load_codebook(vpath);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Err::bad_version);
  }
}

TEST(FitCodebook, MostSeedsReachExhaustiveOptimum) {
  // two loose blobs; on unstructured point clouds Lloyd has many local
  // optima and no seed-fraction bound can hold
  Rng rng(13);
  Tensor pts(7, 2);
  for (int64_t i = 0; i < 7; ++i) {
    double c = (i % 2 == 0) ? 1.5 : -1.5;
    pts.at(i, 0) = c + 0.6 * rng.normal();
    pts.at(i, 1) = c + 0.6 * rng.normal();
  }
  double oracle = best_two_cluster_inertia(pts);
  int hits = 0;
  const int trials = 25;
  for (int s = 0; s < trials; ++s) {
    Codebook cb = fit_codebook(pts, 2, 50, static_cast<uint64_t>(s));
    double inertia = codebook_inertia(cb, pts);
    EXPECT_GE(inertia, oracle - 1e-9);  // never better than the true optimum
    if (inertia <= oracle + 1e-6) ++hits;
  }
  EXPECT_GE(hits, trials * 8 / 10);
}
