#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mahaflow/common.hpp"

namespace mahaflow {

// Flat "key = value" configuration with a fixed key registry. Unknown keys
// are rejected so a typo cannot silently fall back to a default.
class RunConfig {
 public:
  RunConfig() : values_(defaults()) {}

  static const std::map<std::string, std::string>& defaults() {
    static const std::map<std::string, std::string> d = {
        {"mel.sample_rate", "24000"},
        {"mel.n_fft", "1024"},
        {"mel.hop", "240"},
        {"mel.win", "960"},
        {"mel.n_mels", "80"},
        {"mel.fmin", "0"},
        {"mel.fmax", "12000"},
        {"mel.log_floor", "1e-5"},
        {"vocab.cap", "4893"},
        {"languages",
         "assamese,bengali,bodo,dogri,english,french,german,gujarati,hindi,kannada,malayalam,"
         "manipuri,marathi,odia,punjabi,rajasthani,sanskrit,spanish,tamil,telugu,urdu"},
        {"tokenizer.k", "64"},
        {"tokenizer.iters", "50"},
        {"tokenizer.seed", "0"},
        {"tokenizer.provider", "mfcc"},
        {"spk.n_layers", "2"},
        {"spk.d_model", "64"},
        {"spk.n_heads", "4"},
        {"spk.out_dim", "64"},
        {"m1.n_layers", "4"},
        {"m1.d_model", "256"},
        {"m1.n_heads", "8"},
        {"m1.ff_mult", "4"},
        {"m1.max_seq_len", "1024"},
        {"m1.text_loss_weight", "0.1"},
        {"m1.sem_loss_weight", "1.0"},
        {"m1.rope_base", "10000"},
        {"m2.n_blocks", "4"},
        {"m2.d_model", "128"},
        {"m2.n_heads", "4"},
        {"m2.conv_kernel", "5"},
        {"m2.relpos_buckets", "32"},
        {"m2.relpos_max_distance", "128"},
        {"m2.token_upsample", "4"},
        {"m2.time_embed_dim", "128"},
        {"train.lr_m1", "5e-5"},
        {"train.lr_m2", "1e-4"},
        {"train.weight_decay", "1e-3"},
        {"train.beta1", "0.9"},
        {"train.beta2", "0.999"},
        {"train.eps", "1e-8"},
        {"train.batch_items", "8"},
        {"train.max_steps", "1000"},
        {"train.seed", "0"},
        {"train.grad_clip_norm", "1.0"},
        {"train.min_short_fraction", "0.05"},
        {"train.bucket_edges", "64,256,1024"},
        {"train.checkpoint_every", "0"},
        {"train.freeze", ""},
        {"train.crop_seconds", "2.0"},
        {"pipeline.frame_ms", "30"},
        {"pipeline.rms_threshold", "0.01"},
        {"pipeline.hangover_frames", "5"},
        {"pipeline.min_s", "1.0"},
        {"pipeline.max_s", "30.0"},
        {"pipeline.agreement_threshold", "0.2"},
        {"pipeline.asr", "none"},
        {"pipeline.augment", "false"},
        {"pipeline.quality.clip_ratio_max", "0.01"},
        {"pipeline.quality.speech_rms_floor", "0.01"},
        {"pipeline.quality.min_active_fraction", "0.05"},
        {"pipeline.quality.snr_reference_db", "30"},
        {"pipeline.quality.background_threshold", "0.5"},
        {"pipeline.quality.music_threshold", "0.6"},
        {"sampling.temperature", "0.8"},
        {"sampling.top_k", "50"},
        {"sampling.max_new_tokens", "512"},
        {"synth.steps", "32"},
        {"synth.gl_iters", "60"},
        {"artifacts.codebook", ""},
        {"artifacts.vocab", ""},
        {"artifacts.nukta", ""},
    };
    return d;
  }

  void set(const std::string& key, const std::string& value) {
    require(defaults().count(key) > 0, Err::unknown_key, "unknown config key: " + key);
    values_[key] = value;
  }

  void load_file(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), Err::missing_file, "cannot open config " + path);
    std::string line;
    size_t lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      size_t hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      size_t eq = trimmed.find('=');
      require(eq != std::string::npos, Err::malformed_file,
              path + ":" + std::to_string(lineno) + ": expected key = value");
      set(trim(trimmed.substr(0, eq)), trim(trimmed.substr(eq + 1)));
    }
  }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    require(it != values_.end(), Err::unknown_key, "unknown config key: " + key);
    return it->second;
  }

  int64_t integer(const std::string& key) const {
    const std::string& s = str(key);
    try {
      size_t used = 0;
      int64_t v = std::stoll(s, &used);
      require(used == s.size(), Err::bad_argument, "config " + key + ": not an integer: " + s);
      return v;
    } catch (const std::logic_error&) {
      fail(Err::bad_argument, "config " + key + ": not an integer: " + s);
    }
  }

  double real(const std::string& key) const {
    const std::string& s = str(key);
    try {
      size_t used = 0;
      double v = std::stod(s, &used);
      require(used == s.size(), Err::bad_argument, "config " + key + ": not a number: " + s);
      return v;
    } catch (const std::logic_error&) {
      fail(Err::bad_argument, "config " + key + ": not a number: " + s);
    }
  }

  bool boolean(const std::string& key) const {
    const std::string& s = str(key);
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    fail(Err::bad_argument, "config " + key + ": not a boolean: " + s);
  }

  std::vector<std::string> csv(const std::string& key) const {
    std::vector<std::string> out;
    std::stringstream ss(str(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      std::string t = trim(item);
      if (!t.empty()) out.push_back(t);
    }
    return out;
  }

  std::vector<int64_t> csv_int(const std::string& key) const {
    std::vector<int64_t> out;
    for (const std::string& s : csv(key)) out.push_back(std::stoll(s));
    return out;
  }

  // Sorted "key = value" lines; parsing the dump reproduces the config.
  std::string dump() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace mahaflow
