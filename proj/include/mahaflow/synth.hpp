#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "mahaflow/flow.hpp"
#include "mahaflow/m1.hpp"
#include "mahaflow/runconfig.hpp"
#include "mahaflow/trainer.hpp"

namespace mahaflow {

// =====================================================================
//  Config <-> JSON glue for self-describing checkpoints. The m1 blob
//  carries the full vocabulary and language table so synthesis needs no
//  extra files; both blobs carry the codebook content hash for the
//  compatibility check (the two stages only compose when the semantic
//  vocabulary they were trained with matches).
// =====================================================================

inline nlohmann::ordered_json mel_to_json(const MelConfig& c) {
  nlohmann::ordered_json j;
  j["sample_rate"] = c.sample_rate;
  j["n_fft"] = c.n_fft;
  j["hop"] = c.hop;
  j["win"] = c.win;
  j["n_mels"] = c.n_mels;
  j["fmin"] = c.fmin;
  j["fmax"] = c.fmax;
  j["log_floor"] = c.log_floor;
  return j;
}

inline MelConfig mel_from_json(const nlohmann::json& j) {
  MelConfig c;
  c.sample_rate = j.at("sample_rate").get<int>();
  c.n_fft = j.at("n_fft").get<int>();
  c.hop = j.at("hop").get<int>();
  c.win = j.at("win").get<int>();
  c.n_mels = j.at("n_mels").get<int>();
  c.fmin = j.at("fmin").get<double>();
  c.fmax = j.at("fmax").get<double>();
  c.log_floor = j.at("log_floor").get<double>();
  return c;
}

inline nlohmann::ordered_json spk_to_json(const SpeakerEncoderConfig& c) {
  nlohmann::ordered_json j;
  j["n_layers"] = c.n_layers;
  j["d_model"] = c.d_model;
  j["n_heads"] = c.n_heads;
  j["n_mels"] = c.n_mels;
  j["out_dim"] = c.out_dim;
  return j;
}

inline SpeakerEncoderConfig spk_from_json(const nlohmann::json& j) {
  SpeakerEncoderConfig c;
  c.n_layers = j.at("n_layers").get<int64_t>();
  c.d_model = j.at("d_model").get<int64_t>();
  c.n_heads = j.at("n_heads").get<int64_t>();
  c.n_mels = j.at("n_mels").get<int64_t>();
  c.out_dim = j.at("out_dim").get<int64_t>();
  return c;
}

inline nlohmann::ordered_json m1_blob(const M1Config& cfg, const MelConfig& mel,
                                      const CharVocab& vocab, const LanguageTable& langs,
                                      uint64_t codebook_hash_value) {
  nlohmann::ordered_json j;
  j["m1"] = {{"n_layers", cfg.n_layers},       {"d_model", cfg.d_model},
             {"n_heads", cfg.n_heads},         {"ff_mult", cfg.ff_mult},
             {"char_vocab_size", cfg.char_vocab_size},
             {"sem_vocab_size", cfg.sem_vocab_size},
             {"n_languages", cfg.n_languages}, {"max_seq_len", cfg.max_seq_len},
             {"text_loss_weight", cfg.text_loss_weight},
             {"sem_loss_weight", cfg.sem_loss_weight},
             {"rope_base", cfg.rope_base}};
  j["spk"] = spk_to_json(cfg.spk);
  j["mel"] = mel_to_json(mel);
  j["vocab"] = vocab.to_cp;
  j["languages"] = langs.codes;
  j["codebook_hash"] = hash_hex(codebook_hash_value);
  return j;
}

inline nlohmann::ordered_json m2_blob(const FlowConfig& cfg, const MelConfig& mel,
                                      uint64_t codebook_hash_value) {
  nlohmann::ordered_json j;
  j["m2"] = {{"n_blocks", cfg.n_blocks},
             {"d_model", cfg.d_model},
             {"n_heads", cfg.n_heads},
             {"conv_kernel", cfg.conv_kernel},
             {"relpos_buckets", cfg.relpos_buckets},
             {"relpos_max_distance", cfg.relpos_max_distance},
             {"token_upsample", cfg.token_upsample},
             {"time_embed_dim", cfg.time_embed_dim},
             {"n_mels", cfg.n_mels},
             {"token_vocab", cfg.token_vocab}};
  j["spk"] = spk_to_json(cfg.spk);
  j["mel"] = mel_to_json(mel);
  j["codebook_hash"] = hash_hex(codebook_hash_value);
  return j;
}

struct M1Artifacts {
  M1Model model;
  MelConfig mel;
  CharVocab vocab;
  LanguageTable languages;
  std::string codebook_hash_hex;
};

struct M2Artifacts {
  FlowModel model;
  MelConfig mel;
  std::string codebook_hash_hex;
};

inline M1Artifacts m1_from_checkpoint(const Checkpoint& ck) {
  require(ck.kind == "m1", Err::kind_mismatch, "expected an m1 checkpoint");
  M1Artifacts a;
  const auto& j = ck.config;
  M1Config cfg;
  cfg.n_layers = j.at("m1").at("n_layers").get<int64_t>();
  cfg.d_model = j.at("m1").at("d_model").get<int64_t>();
  cfg.n_heads = j.at("m1").at("n_heads").get<int64_t>();
  cfg.ff_mult = j.at("m1").at("ff_mult").get<int64_t>();
  cfg.char_vocab_size = j.at("m1").at("char_vocab_size").get<int64_t>();
  cfg.sem_vocab_size = j.at("m1").at("sem_vocab_size").get<int64_t>();
  cfg.n_languages = j.at("m1").at("n_languages").get<int64_t>();
  cfg.max_seq_len = j.at("m1").at("max_seq_len").get<int64_t>();
  cfg.text_loss_weight = j.at("m1").at("text_loss_weight").get<double>();
  cfg.sem_loss_weight = j.at("m1").at("sem_loss_weight").get<double>();
  cfg.rope_base = j.at("m1").at("rope_base").get<double>();
  cfg.spk = spk_from_json(j.at("spk"));
  a.model = build_m1(cfg, 0);
  load_store_from_checkpoint(a.model.store, ck);
  a.mel = mel_from_json(j.at("mel"));
  for (uint32_t cp : j.at("vocab").get<std::vector<uint32_t>>()) {
    a.vocab.to_id[cp] = kNumReservedIds + static_cast<int64_t>(a.vocab.to_cp.size());
    a.vocab.to_cp.push_back(cp);
  }
  a.languages.codes = j.at("languages").get<std::vector<std::string>>();
  a.codebook_hash_hex = j.at("codebook_hash").get<std::string>();
  return a;
}

inline M2Artifacts m2_from_checkpoint(const Checkpoint& ck) {
  require(ck.kind == "m2", Err::kind_mismatch, "expected an m2 checkpoint");
  M2Artifacts a;
  const auto& j = ck.config;
  FlowConfig cfg;
  cfg.n_blocks = j.at("m2").at("n_blocks").get<int64_t>();
  cfg.d_model = j.at("m2").at("d_model").get<int64_t>();
  cfg.n_heads = j.at("m2").at("n_heads").get<int64_t>();
  cfg.conv_kernel = j.at("m2").at("conv_kernel").get<int64_t>();
  cfg.relpos_buckets = j.at("m2").at("relpos_buckets").get<int64_t>();
  cfg.relpos_max_distance = j.at("m2").at("relpos_max_distance").get<int64_t>();
  cfg.token_upsample = j.at("m2").at("token_upsample").get<int64_t>();
  cfg.time_embed_dim = j.at("m2").at("time_embed_dim").get<int64_t>();
  cfg.n_mels = j.at("m2").at("n_mels").get<int64_t>();
  cfg.token_vocab = j.at("m2").at("token_vocab").get<int64_t>();
  cfg.spk = spk_from_json(j.at("spk"));
  a.model = build_flow(cfg, 0);
  load_store_from_checkpoint(a.model.store, ck);
  a.mel = mel_from_json(j.at("mel"));
  a.codebook_hash_hex = j.at("codebook_hash").get<std::string>();
  return a;
}

inline void check_codebook_compatibility(const std::string& stored_hex, const Codebook& cb,
                                         const std::string& which) {
  std::string actual = hash_hex(codebook_hash(cb));
  require(stored_hex == actual, Err::hash_mismatch,
          which + " was trained against codebook " + stored_hex + " but the loaded codebook hashes to " +
              actual);
}

// =====================================================================
//  End-to-end synthesis and voice conversion
// =====================================================================

struct SynthesisOptions {
  int64_t euler_steps = 32;
  int gl_iters = 60;
  uint64_t seed = 0;
  SamplingConfig sampling;
};

inline std::vector<MelSpectrogram> reference_mels(const std::vector<std::string>& ref_paths,
                                                  const MelConfig& mel) {
  require(!ref_paths.empty(), Err::empty_input, "need at least one reference clip");
  require(ref_paths.size() <= 3, Err::bad_argument, "at most 3 reference clips");
  std::vector<MelSpectrogram> mels;
  for (const auto& p : ref_paths) {
    Waveform w = resample(load_wav(p), mel.sample_rate);
    mels.push_back(mel_spectrogram(w, mel));
  }
  return mels;
}

inline Waveform synthesize(const std::string& text, const std::string& lang,
                           const std::vector<std::string>& ref_paths, const M1Artifacts& m1,
                           const M2Artifacts& m2, const Codebook& cb,
                           const SynthesisOptions& opt) {
  check_codebook_compatibility(m1.codebook_hash_hex, cb, "m1 checkpoint");
  check_codebook_compatibility(m2.codebook_hash_hex, cb, "m2 checkpoint");
  require(m1.model.cfg.sem_vocab_size == cb.sem_vocab_size(), Err::dim_mismatch,
          "m1 semantic vocabulary does not match the codebook");

  TextTokenSeq text_seq = encode_text(text, lang, m1.vocab, m1.languages);
  std::vector<MelSpectrogram> refs = reference_mels(ref_paths, m1.mel);

  std::vector<Tensor> ref_frames;
  for (const auto& r : refs) ref_frames.push_back(r.frames);
  SpeakerEmbedding spk1;
  {
    ad::NoGradGuard ng;
    spk1 = m1.model.spk_enc.embed_reference_set_var(ref_frames)->val.v;
  }

  SamplingConfig sampling = opt.sampling;
  sampling.seed = opt.seed;
  SemanticTokenSeq tokens = generate_semantic(m1.model, text_seq.lang_id, spk1, text_seq.ids, sampling);
  require(!tokens.content_ids().empty(), Err::empty_input,
          "m1 produced no semantic tokens for this input");

  SpeakerEmbedding spk2;
  {
    ad::NoGradGuard ng;
    spk2 = m2.model.spk_enc.embed_reference_set_var(ref_frames)->val.v;
  }
  std::vector<int64_t> y_frames = upsample_tokens(tokens, m2.model.cfg.token_upsample);
  Rng rng(opt.seed);
  MelSpectrogram mel = euler_sample(m2.model, y_frames, spk2, opt.euler_steps, rng, m2.mel);
  return griffin_lim(mel, opt.gl_iters);
}

// Input speech -> semantic tokens -> mel under a different speaker's
// conditioning -> waveform.
inline Waveform voice_convert(const Waveform& src, const std::vector<std::string>& ref_paths,
                              const FrameEmbeddingProvider& provider, const Codebook& cb,
                              const M2Artifacts& m2, const SynthesisOptions& opt,
                              const std::string& src_path = "") {
  check_codebook_compatibility(m2.codebook_hash_hex, cb, "m2 checkpoint");
  Waveform at24 = resample(src, 24000);
  FrameEmbeddingSeq emb = extract_frame_embeddings(at24, provider, src_path);
  require(emb.frames.rows >= 1, Err::empty_input, "voice_convert: source too short");
  SemanticTokenSeq tokens = encode_tokens(emb, cb);

  std::vector<MelSpectrogram> refs = reference_mels(ref_paths, m2.mel);
  std::vector<Tensor> ref_frames;
  for (const auto& r : refs) ref_frames.push_back(r.frames);
  SpeakerEmbedding spk;
  {
    ad::NoGradGuard ng;
    spk = m2.model.spk_enc.embed_reference_set_var(ref_frames)->val.v;
  }
  std::vector<int64_t> y_frames = upsample_tokens(tokens, m2.model.cfg.token_upsample);
  Rng rng(opt.seed);
  MelSpectrogram mel = euler_sample(m2.model, y_frames, spk, opt.euler_steps, rng, m2.mel);
  return griffin_lim(mel, opt.gl_iters);
}

}  // namespace mahaflow
