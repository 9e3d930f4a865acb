#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "mahaflow/runconfig.hpp"

using namespace mahaflow;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST(RunConfig, DefaultsAreTyped) {
  RunConfig c;
  EXPECT_EQ(c.integer("mel.n_fft"), 1024);
  EXPECT_EQ(c.integer("mel.hop"), 240);
  EXPECT_DOUBLE_EQ(c.real("m1.text_loss_weight"), 0.1);
  EXPECT_DOUBLE_EQ(c.real("train.lr_m1"), 5e-5);
  EXPECT_DOUBLE_EQ(c.real("train.lr_m2"), 1e-4);
  EXPECT_DOUBLE_EQ(c.real("train.weight_decay"), 1e-3);
  EXPECT_FALSE(c.boolean("pipeline.augment"));
  EXPECT_EQ(c.csv("languages").size(), 21u);
  EXPECT_EQ(c.csv_int("train.bucket_edges"), (std::vector<int64_t>{64, 256, 1024}));
}

TEST(RunConfig, UnknownKeyIsRejected) {
  RunConfig c;
  try {
    c.set("mel.n_ftt", "512");  // typo
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Err::unknown_key);
  }
  EXPECT_THROW(c.str("nonsense.key"), Error);
}

TEST(RunConfig, FileParsingWithComments) {
  std::string path = temp_path("cfg_file.cfg");
  std::ofstream f(path);
  f << "# a comment\n";
  f << "mel.n_fft = 512\n";
  f << "  train.lr_m1=1e-3   # trailing comment\n";
  f << "\n";
  f.close();
  RunConfig c;
  c.load_file(path);
  EXPECT_EQ(c.integer("mel.n_fft"), 512);
  EXPECT_DOUBLE_EQ(c.real("train.lr_m1"), 1e-3);
}

TEST(RunConfig, UnknownKeyInFileFails) {
  std::string path = temp_path("cfg_bad.cfg");
  std::ofstream f(path);
  f << "mel.n_fftt = 512\n";
  f.close();
  RunConfig c;
  try {
    c.load_file(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Err::unknown_key);
  }
}

TEST(RunConfig, DumpReloadsIdentical) {
  RunConfig c;
  c.set("mel.n_fft", "2048");
  c.set("train.freeze", "m1.text_head,m1.sem_head");
  std::string dump1 = c.dump();

  std::string path = temp_path("cfg_dump.cfg");
  std::ofstream f(path);
  f << dump1;
  f.close();
  RunConfig d;
  d.load_file(path);
  EXPECT_EQ(d.dump(), dump1);
}

TEST(RunConfig, BadNumbersRejected) {
  RunConfig c;
  c.set("mel.n_fft", "banana");
  EXPECT_THROW(c.integer("mel.n_fft"), Error);
  c.set("mel.fmax", "12k");
  EXPECT_THROW(c.real("mel.fmax"), Error);
  c.set("pipeline.augment", "maybe");
  EXPECT_THROW(c.boolean("pipeline.augment"), Error);
}
