// mahaflow: two-stage text-to-speech toolkit
//
// Subcommands cover the whole workflow: ingest a raw corpus into a
// manifest, fit the semantic codebook, train/finetune the two stages,
// synthesize or voice-convert audio, evaluate WER, and run gradient
// checks. Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "mahaflow/dataset.hpp"
#include "mahaflow/flow.hpp"
#include "mahaflow/m1.hpp"
#include "mahaflow/pipeline.hpp"
#include "mahaflow/runconfig.hpp"
#include "mahaflow/synth.hpp"
#include "mahaflow/trainer.hpp"
#include "mahaflow/wer.hpp"

namespace mf = mahaflow;

namespace {

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

mf::RunConfig load_config(const std::string& config_path, const std::vector<std::string>& sets) {
  mf::RunConfig cfg;
  if (!config_path.empty()) cfg.load_file(config_path);
  for (const std::string& kv : sets) {
    size_t eq = kv.find('=');
    mf::require(eq != std::string::npos, mf::Err::bad_argument, "--set expects key=value: " + kv);
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

void log_resolved_config(const mf::RunConfig& cfg) {
  std::cerr << "# resolved config\n" << cfg.dump();
}

mf::MelConfig mel_from_config(const mf::RunConfig& c) {
  mf::MelConfig m;
  m.sample_rate = static_cast<int>(c.integer("mel.sample_rate"));
  m.n_fft = static_cast<int>(c.integer("mel.n_fft"));
  m.hop = static_cast<int>(c.integer("mel.hop"));
  m.win = static_cast<int>(c.integer("mel.win"));
  m.n_mels = static_cast<int>(c.integer("mel.n_mels"));
  m.fmin = c.real("mel.fmin");
  m.fmax = c.real("mel.fmax");
  m.log_floor = c.real("mel.log_floor");
  m.validate();
  return m;
}

mf::SpeakerEncoderConfig spk_from_config(const mf::RunConfig& c, int n_mels) {
  mf::SpeakerEncoderConfig s;
  s.n_layers = c.integer("spk.n_layers");
  s.d_model = c.integer("spk.d_model");
  s.n_heads = c.integer("spk.n_heads");
  s.n_mels = n_mels;
  s.out_dim = c.integer("spk.out_dim");
  return s;
}

mf::TrainConfig train_from_config(const mf::RunConfig& c, const std::string& which) {
  mf::TrainConfig t;
  t.lr = c.real(which == "m1" ? "train.lr_m1" : "train.lr_m2");
  t.weight_decay = c.real("train.weight_decay");
  t.beta1 = c.real("train.beta1");
  t.beta2 = c.real("train.beta2");
  t.eps = c.real("train.eps");
  t.batch_items = c.integer("train.batch_items");
  t.max_steps = c.integer("train.max_steps");
  t.seed = static_cast<uint64_t>(c.integer("train.seed"));
  t.freeze = c.csv("train.freeze");
  t.min_short_sample_fraction = c.real("train.min_short_fraction");
  t.grad_clip_norm = c.real("train.grad_clip_norm");
  t.bucket_edges = c.csv_int("train.bucket_edges");
  t.checkpoint_every = c.integer("train.checkpoint_every");
  t.crop_seconds = c.real("train.crop_seconds");
  return t;
}

mf::PipelineConfig pipeline_from_config(const mf::RunConfig& c) {
  mf::PipelineConfig p;
  p.vad.frame_ms = c.real("pipeline.frame_ms");
  p.vad.rms_threshold = c.real("pipeline.rms_threshold");
  p.vad.hangover_frames = static_cast<int>(c.integer("pipeline.hangover_frames"));
  p.min_segment_s = c.real("pipeline.min_s");
  p.max_segment_s = c.real("pipeline.max_s");
  p.agreement_threshold = c.real("pipeline.agreement_threshold");
  p.quality.clip_ratio_max = c.real("pipeline.quality.clip_ratio_max");
  p.quality.speech_rms_floor = c.real("pipeline.quality.speech_rms_floor");
  p.quality.min_active_fraction = c.real("pipeline.quality.min_active_fraction");
  p.quality.snr_reference_db = c.real("pipeline.quality.snr_reference_db");
  p.quality.background_threshold = c.real("pipeline.quality.background_threshold");
  p.quality.music_threshold = c.real("pipeline.quality.music_threshold");
  p.languages.codes = c.csv("languages");
  std::string asr = c.str("pipeline.asr");
  mf::require(asr == "none", mf::Err::bad_argument,
              "pipeline.asr: no ASR backends are bundled; only 'none' is supported here "
              "(inject backends through the library API)");
  if (!c.str("artifacts.nukta").empty()) p.nukta = mf::load_nukta_map(c.str("artifacts.nukta"));
  return p;
}

std::unique_ptr<mf::FrameEmbeddingProvider> provider_from_config(const mf::RunConfig& c) {
  std::string p = c.str("tokenizer.provider");
  if (p == "mfcc") return std::make_unique<mf::MfccProvider>();
  if (p == "sidecar") return std::make_unique<mf::SidecarProvider>();
  mf::fail(mf::Err::bad_argument, "tokenizer.provider must be mfcc or sidecar, got " + p);
}

std::unique_ptr<mf::FrameEmbeddingProvider> provider_for_codebook(const mf::Codebook& cb) {
  if (cb.provider_id == mf::MfccProvider().id()) return std::make_unique<mf::MfccProvider>();
  return std::make_unique<mf::SidecarProvider>(cb.provider_id, cb.frame_rate);
}

mf::CharVocab vocab_for_training(const mf::RunConfig& cfg, const mf::Manifest& manifest) {
  if (!cfg.str("artifacts.vocab").empty()) return mf::load_vocab(cfg.str("artifacts.vocab"));
  std::vector<std::string> corpus;
  for (const auto& r : manifest) corpus.push_back(r.text);
  return mf::build_vocab(corpus, cfg.integer("vocab.cap"));
}

int run_train(const std::string& which, const std::string& manifest_path,
              const std::string& config_path, const std::vector<std::string>& sets,
              const std::string& out_path, const std::string& resume_path) {
  mf::RunConfig cfg = load_config(config_path, sets);
  log_resolved_config(cfg);
  mf::Manifest manifest = mf::load_manifest(manifest_path);
  mf::require(!manifest.empty(), mf::Err::empty_input, "manifest is empty");
  mf::MelConfig mel = mel_from_config(cfg);
  mf::require(!cfg.str("artifacts.codebook").empty(), mf::Err::bad_argument,
              "artifacts.codebook must point at a fitted codebook (run `tokenizer fit`)");
  mf::Codebook cb = mf::load_codebook(cfg.str("artifacts.codebook"));
  uint64_t cb_hash = mf::codebook_hash(cb);
  auto provider = provider_for_codebook(cb);
  mf::TrainConfig tcfg = train_from_config(cfg, which);

  if (which == "m1") {
    mf::LanguageTable langs{cfg.csv("languages")};
    mf::CharVocab vocab = vocab_for_training(cfg, manifest);
    mf::M1Config mcfg;
    mcfg.n_layers = cfg.integer("m1.n_layers");
    mcfg.d_model = cfg.integer("m1.d_model");
    mcfg.n_heads = cfg.integer("m1.n_heads");
    mcfg.ff_mult = cfg.integer("m1.ff_mult");
    mcfg.char_vocab_size = vocab.size();
    mcfg.sem_vocab_size = cb.sem_vocab_size();
    mcfg.n_languages = langs.size();
    mcfg.max_seq_len = cfg.integer("m1.max_seq_len");
    mcfg.text_loss_weight = cfg.real("m1.text_loss_weight");
    mcfg.sem_loss_weight = cfg.real("m1.sem_loss_weight");
    mcfg.rope_base = cfg.real("m1.rope_base");
    mcfg.spk = spk_from_config(cfg, mel.n_mels);

    mf::M1Model model = mf::build_m1(mcfg, tcfg.seed);
    mf::TrainerState st;
    st.rng = mf::Rng(tcfg.seed);
    if (!resume_path.empty()) {
      mf::Checkpoint ck = mf::load_checkpoint(resume_path, "m1");
      mf::load_store_from_checkpoint(model.store, ck);
      if (ck.has_opt) {
        st.opt.m = ck.opt_m;
        st.opt.v = ck.opt_v;
        st.opt.step = ck.opt_step;
      }
      if (!ck.rng_state.empty()) st.rng.load_state(ck.rng_state);
      st.step = ck.step;
    }
    auto dataset = mf::prepare_m1_dataset(manifest, vocab, langs, cb, *provider, mel, mcfg.max_seq_len);
    nlohmann::ordered_json blob = mf::m1_blob(mcfg, mel, vocab, langs, cb_hash);
    auto save = [&](const std::string& path) {
      mf::save_checkpoint(mf::checkpoint_from_store("m1", blob, model.store, &st.opt, &st.rng, st.step), path);
    };
    mf::StepHook hook;
    if (tcfg.checkpoint_every > 0)
      hook = [&](const mf::StepRecord& r) {
        if (r.step % tcfg.checkpoint_every == 0) save(out_path);
      };
    mf::train_m1(model, dataset, tcfg, st, &std::cout, hook);
    save(out_path);
  } else {
    mf::FlowConfig fcfg;
    fcfg.n_blocks = cfg.integer("m2.n_blocks");
    fcfg.d_model = cfg.integer("m2.d_model");
    fcfg.n_heads = cfg.integer("m2.n_heads");
    fcfg.conv_kernel = cfg.integer("m2.conv_kernel");
    fcfg.relpos_buckets = cfg.integer("m2.relpos_buckets");
    fcfg.relpos_max_distance = cfg.integer("m2.relpos_max_distance");
    fcfg.token_upsample = cfg.integer("m2.token_upsample");
    fcfg.time_embed_dim = cfg.integer("m2.time_embed_dim");
    fcfg.n_mels = mel.n_mels;
    fcfg.token_vocab = cb.k;
    fcfg.spk = spk_from_config(cfg, mel.n_mels);

    mf::FlowModel model = mf::build_flow(fcfg, tcfg.seed);
    mf::TrainerState st;
    st.rng = mf::Rng(tcfg.seed);
    if (!resume_path.empty()) {
      mf::Checkpoint ck = mf::load_checkpoint(resume_path, "m2");
      mf::load_store_from_checkpoint(model.store, ck);
      if (ck.has_opt) {
        st.opt.m = ck.opt_m;
        st.opt.v = ck.opt_v;
        st.opt.step = ck.opt_step;
      }
      if (!ck.rng_state.empty()) st.rng.load_state(ck.rng_state);
      st.step = ck.step;
    }
    auto dataset = mf::prepare_m2_dataset(manifest, cb, *provider, mel, tcfg.crop_seconds);
    nlohmann::ordered_json blob = mf::m2_blob(fcfg, mel, cb_hash);
    auto save = [&](const std::string& path) {
      mf::save_checkpoint(mf::checkpoint_from_store("m2", blob, model.store, &st.opt, &st.rng, st.step), path);
    };
    mf::StepHook hook;
    if (tcfg.checkpoint_every > 0)
      hook = [&](const mf::StepRecord& r) {
        if (r.step % tcfg.checkpoint_every == 0) save(out_path);
      };
    mf::train_m2(model, dataset, tcfg, st, &std::cout, hook);
    save(out_path);
  }
  std::cerr << "wrote " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mahaflow: desk-scale two-stage multilingual TTS toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_path, manifest_path, rejects_path, resume_path;
  std::vector<std::string> sets;

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Build a training manifest from raw audio");
  std::string in_dir;
  ingest->add_option("--in", in_dir, "Directory of X.wav + X.json pairs")->required();
  ingest->add_option("--out", out_path, "Manifest output path")->required();
  ingest->add_option("--rejects", rejects_path, "Rejection log output path");
  ingest->add_option("--config", config_path, "Config file");
  ingest->add_option("--set", sets, "Override config key=value");
  ingest->callback([&]() {
    mf::RunConfig cfg = load_config(config_path, sets);
    log_resolved_config(cfg);
    mf::PipelineConfig pcfg = pipeline_from_config(cfg);
    mf::IngestResult res = mf::build_manifest(in_dir, pcfg);
    if (cfg.boolean("pipeline.augment"))
      res.manifest = mf::augment_concat(res.manifest, pcfg.max_segment_s,
                                        static_cast<uint64_t>(cfg.integer("train.seed")));
    mf::save_manifest(res.manifest, out_path);
    if (!rejects_path.empty()) mf::save_rejections(res.rejections, rejects_path);
    std::cout << "records: " << res.manifest.size() << "\nrejections: " << res.rejections.size()
              << "\n";
  });

  // stats
  auto* stats = app.add_subcommand("stats", "Corpus composition statistics");
  stats->add_option("--manifest", manifest_path, "Manifest path")->required();
  stats->callback([&]() {
    mf::CorpusStats s = mf::corpus_stats(mf::load_manifest(manifest_path));
    std::cout << mf::format_corpus_stats(s);
  });

  // tokenizer fit | encode
  auto* tok = app.add_subcommand("tokenizer", "Semantic tokenizer");
  tok->require_subcommand(1);
  auto* tok_fit = tok->add_subcommand("fit", "Fit a k-means codebook over the manifest");
  int64_t k = 64;
  tok_fit->add_option("--manifest", manifest_path, "Manifest path")->required();
  tok_fit->add_option("--k", k, "Cluster count");
  tok_fit->add_option("--out", out_path, "Codebook output path")->required();
  tok_fit->add_option("--config", config_path, "Config file");
  tok_fit->add_option("--set", sets, "Override config key=value");
  tok_fit->callback([&]() {
    mf::RunConfig cfg = load_config(config_path, sets);
    log_resolved_config(cfg);
    auto provider = provider_from_config(cfg);
    mf::Manifest manifest = mf::load_manifest(manifest_path);
    mf::Tensor pooled = mf::pool_embeddings(manifest, *provider);
    mf::Codebook cb = mf::fit_codebook(pooled, k, cfg.integer("tokenizer.iters"),
                                       static_cast<uint64_t>(cfg.integer("tokenizer.seed")),
                                       provider->id(), provider->frame_rate());
    mf::save_codebook(cb, out_path);
    std::cout << "codebook: K=" << cb.k << " D=" << cb.d << " hash=" << mf::hash_hex(mf::codebook_hash(cb))
              << "\n";
  });
  auto* tok_enc = tok->add_subcommand("encode", "Encode one audio file to semantic tokens");
  std::string audio_path, codebook_path;
  tok_enc->add_option("--audio", audio_path, "Input wav")->required();
  tok_enc->add_option("--codebook", codebook_path, "Codebook path")->required();
  tok_enc->callback([&]() {
    mf::Codebook cb = mf::load_codebook(codebook_path);
    auto provider = provider_for_codebook(cb);
    mf::Waveform w = mf::resample(mf::load_wav(audio_path), 24000);
    mf::FrameEmbeddingSeq e = mf::extract_frame_embeddings(w, *provider, audio_path);
    mf::SemanticTokenSeq seq = mf::encode_tokens(e, cb);
    for (size_t i = 0; i < seq.ids.size(); ++i)
      std::cout << seq.ids[i] << (i + 1 < seq.ids.size() ? ' ' : '\n');
  });

  // train m1 | m2
  auto* train = app.add_subcommand("train", "Train a stage");
  train->require_subcommand(1);
  for (const std::string which : {"m1", "m2"}) {
    auto* sub = train->add_subcommand(which, "Train " + which);
    sub->add_option("--manifest", manifest_path, "Manifest path")->required();
    sub->add_option("--config", config_path, "Config file")->required();
    sub->add_option("--out", out_path, "Checkpoint output path")->required();
    sub->add_option("--resume", resume_path, "Resume from checkpoint");
    sub->add_option("--set", sets, "Override config key=value");
    sub->callback([&, which]() {
      run_train(which, manifest_path, config_path, sets, out_path, resume_path);
    });
  }

  // finetune
  auto* ft = app.add_subcommand("finetune", "Fine-tune m1 with frozen groups");
  std::string ckpt_path, freeze_arg = "heads";
  ft->add_option("--ckpt", ckpt_path, "Checkpoint to fine-tune")->required();
  ft->add_option("--manifest", manifest_path, "Manifest path")->required();
  ft->add_option("--freeze", freeze_arg, "Comma list of parameter groups, or 'heads'");
  ft->add_option("--out", out_path, "Checkpoint output path")->required();
  ft->add_option("--config", config_path, "Config file");
  ft->add_option("--set", sets, "Override config key=value");
  ft->callback([&]() {
    mf::RunConfig cfg = load_config(config_path, sets);
    log_resolved_config(cfg);
    mf::Checkpoint ck = mf::load_checkpoint(ckpt_path, "m1");
    mf::M1Artifacts art = mf::m1_from_checkpoint(ck);
    mf::require(!cfg.str("artifacts.codebook").empty(), mf::Err::bad_argument,
                "artifacts.codebook is required for finetuning");
    mf::Codebook cb = mf::load_codebook(cfg.str("artifacts.codebook"));
    mf::check_codebook_compatibility(art.codebook_hash_hex, cb, "m1 checkpoint");
    auto provider = provider_for_codebook(cb);
    mf::Manifest manifest = mf::load_manifest(manifest_path);
    auto dataset = mf::prepare_m1_dataset(manifest, art.vocab, art.languages, cb, *provider,
                                          art.mel, art.model.cfg.max_seq_len);
    mf::TrainConfig tcfg = train_from_config(cfg, "m1");
    tcfg.freeze = freeze_arg == "heads"
                      ? std::vector<std::string>{"m1.text_head", "m1.sem_head"}
                      : split_commas(freeze_arg);
    mf::TrainerState st;
    st.rng = mf::Rng(tcfg.seed);
    mf::finetune_m1(art.model, dataset, tcfg, st, &std::cout);
    mf::save_checkpoint(
        mf::checkpoint_from_store("m1", ck.config, art.model.store, &st.opt, &st.rng, st.step),
        out_path);
    std::cerr << "wrote " << out_path << "\n";
  });

  // synthesize
  auto* synth = app.add_subcommand("synthesize", "Text to waveform");
  std::string text, lang, refs_arg, m1_path, m2_path;
  int64_t steps = 32;
  uint64_t seed = 0;
  int gl_iters = 60;
  int64_t max_new_tokens = 512;
  synth->add_option("--text", text, "Input text")->required();
  synth->add_option("--lang", lang, "Language code")->required();
  synth->add_option("--refs", refs_arg, "Comma list of 1..3 reference wavs")->required();
  synth->add_option("--m1", m1_path, "M1 checkpoint")->required();
  synth->add_option("--m2", m2_path, "M2 checkpoint")->required();
  synth->add_option("--codebook", codebook_path, "Codebook path")->required();
  synth->add_option("--steps", steps, "Euler steps");
  synth->add_option("--seed", seed, "Sampling seed");
  synth->add_option("--gl-iters", gl_iters, "Griffin-Lim iterations");
  synth->add_option("--max-new-tokens", max_new_tokens, "Semantic token budget");
  synth->add_option("--out", out_path, "Output wav")->required();
  synth->callback([&]() {
    mf::M1Artifacts m1 = mf::m1_from_checkpoint(mf::load_checkpoint(m1_path, "m1"));
    mf::M2Artifacts m2 = mf::m2_from_checkpoint(mf::load_checkpoint(m2_path, "m2"));
    mf::Codebook cb = mf::load_codebook(codebook_path);
    mf::SynthesisOptions opt;
    opt.euler_steps = steps;
    opt.gl_iters = gl_iters;
    opt.seed = seed;
    opt.sampling.max_new_tokens = max_new_tokens;
    mf::Waveform w = mf::synthesize(text, lang, split_commas(refs_arg), m1, m2, cb, opt);
    mf::save_wav(w, out_path);
    std::cout << "wrote " << out_path << " (" << w.duration_s() << " s)\n";
  });

  // voice-convert
  auto* vc = app.add_subcommand("voice-convert", "Re-speak source audio with new references");
  std::string src_path;
  vc->add_option("--src", src_path, "Source wav")->required();
  vc->add_option("--refs", refs_arg, "Comma list of 1..3 reference wavs")->required();
  vc->add_option("--m2", m2_path, "M2 checkpoint")->required();
  vc->add_option("--codebook", codebook_path, "Codebook path")->required();
  vc->add_option("--steps", steps, "Euler steps");
  vc->add_option("--seed", seed, "Sampling seed");
  vc->add_option("--gl-iters", gl_iters, "Griffin-Lim iterations");
  vc->add_option("--out", out_path, "Output wav")->required();
  vc->callback([&]() {
    mf::M2Artifacts m2 = mf::m2_from_checkpoint(mf::load_checkpoint(m2_path, "m2"));
    mf::Codebook cb = mf::load_codebook(codebook_path);
    auto provider = provider_for_codebook(cb);
    mf::SynthesisOptions opt;
    opt.euler_steps = steps;
    opt.gl_iters = gl_iters;
    opt.seed = seed;
    mf::Waveform src = mf::load_wav(src_path);
    mf::Waveform w = mf::voice_convert(src, split_commas(refs_arg), *provider, cb, m2, opt, src_path);
    mf::save_wav(w, out_path);
    std::cout << "wrote " << out_path << " (" << w.duration_s() << " s)\n";
  });

  // eval wer | run
  auto* eval = app.add_subcommand("eval", "Evaluation harness");
  eval->require_subcommand(1);
  auto* eval_wer = eval->add_subcommand("wer", "WER between two line-aligned text files");
  std::string ref_file, hyp_file;
  eval_wer->add_option("--ref", ref_file, "Reference text file")->required();
  eval_wer->add_option("--hyp", hyp_file, "Hypothesis text file")->required();
  eval_wer->callback([&]() {
    std::ifstream rf(ref_file), hf(hyp_file);
    mf::require(rf.good(), mf::Err::missing_file, "cannot open " + ref_file);
    mf::require(hf.good(), mf::Err::missing_file, "cannot open " + hyp_file);
    mf::WerReport pooled;
    std::string r, h;
    while (std::getline(rf, r)) {
      if (!std::getline(hf, h)) h.clear();
      pooled.pool(mf::wer(r, h));
    }
    char buf[128];
    std::snprintf(buf, sizeof(buf), "wer %.4f\nS=%lld D=%lld I=%lld N=%lld\n", pooled.wer(),
                  static_cast<long long>(pooled.substitutions), static_cast<long long>(pooled.deletions),
                  static_cast<long long>(pooled.insertions), static_cast<long long>(pooled.ref_word_count));
    std::cout << buf;
  });

  auto* eval_run = eval->add_subcommand("run", "Synthesize + transcribe + score per language");
  std::string sentences_dir, transcriber = "echo";
  eval_run->add_option("--sentences", sentences_dir, "Directory of <lang>.txt sentence lists")->required();
  eval_run->add_option("--transcriber", transcriber,
                       "echo (returns the reference) or file:DIR (<lang>.hyp.txt line-aligned)");
  eval_run->add_option("--m1", m1_path, "M1 checkpoint (optional; enables real synthesis)");
  eval_run->add_option("--m2", m2_path, "M2 checkpoint");
  eval_run->add_option("--codebook", codebook_path, "Codebook path");
  eval_run->add_option("--refs", refs_arg, "Reference wavs for synthesis");
  eval_run->add_option("--seed", seed, "Sampling seed");
  eval_run->callback([&]() {
    namespace fs = std::filesystem;
    std::map<std::string, std::vector<std::string>> sentences;
    for (const auto& e : fs::directory_iterator(sentences_dir)) {
      if (!e.is_regular_file() || e.path().extension() != ".txt") continue;
      std::string stem = e.path().stem().string();
      if (stem.size() > 4 && stem.substr(stem.size() - 4) == ".hyp") continue;
      std::ifstream f(e.path());
      std::string line;
      while (std::getline(f, line))
        if (!line.empty()) sentences[stem].push_back(line);
    }
    mf::require(!sentences.empty(), mf::Err::empty_input, "no <lang>.txt files in " + sentences_dir);

    // synthesis path: real models when provided, silence otherwise
    std::optional<mf::M1Artifacts> m1;
    std::optional<mf::M2Artifacts> m2;
    std::optional<mf::Codebook> cb;
    if (!m1_path.empty()) {
      m1 = mf::m1_from_checkpoint(mf::load_checkpoint(m1_path, "m1"));
      m2 = mf::m2_from_checkpoint(mf::load_checkpoint(m2_path, "m2"));
      cb = mf::load_codebook(codebook_path);
    }
    std::string current_sentence;
    std::string current_lang;
    std::map<std::string, size_t> cursor;
    mf::SynthesizeFn synth_fn = [&](const std::string& lg, const std::string& s) {
      current_sentence = s;
      current_lang = lg;
      if (m1) {
        mf::SynthesisOptions opt;
        opt.seed = seed;
        return mf::synthesize(s, lg, split_commas(refs_arg), *m1, *m2, *cb, opt);
      }
      mf::Waveform silence;
      silence.samples.assign(2400, 0.0);
      return silence;
    };
    mf::TranscribeFn trans_fn;
    if (transcriber == "echo") {
      trans_fn = [&](const mf::Waveform&) { return current_sentence; };
    } else if (transcriber.rfind("file:", 0) == 0) {
      std::string dir = transcriber.substr(5);
      trans_fn = [&, dir](const mf::Waveform&) {
        std::ifstream f(dir + "/" + current_lang + ".hyp.txt");
        mf::require(f.good(), mf::Err::missing_file, "missing hypotheses for " + current_lang);
        std::string line;
        size_t want = cursor[current_lang]++;
        for (size_t i = 0; i <= want; ++i)
          if (!std::getline(f, line)) mf::fail(mf::Err::malformed_file, "hypothesis file too short");
        return line;
      };
    } else {
      mf::fail(mf::Err::bad_argument, "unknown transcriber: " + transcriber);
    }

    mf::EvalRunResult res = mf::eval_wer_run(sentences, synth_fn, trans_fn);
    std::map<std::string, std::map<std::string, double>> table;
    for (const auto& [lg, rep] : res.per_language) {
      table[lg]["mahaflow"] = rep.wer();
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%s: wer %.4f (S=%lld D=%lld I=%lld N=%lld)\n", lg.c_str(),
                    rep.wer(), static_cast<long long>(rep.substitutions),
                    static_cast<long long>(rep.deletions), static_cast<long long>(rep.insertions),
                    static_cast<long long>(rep.ref_word_count));
      std::cout << buf;
    }
    std::cout << mf::format_wer_table({"mahaflow"}, table);
    for (const auto& f : res.failures)
      std::cerr << "failed [" << f.language << "] " << f.sentence << ": " << f.reason << "\n";
  });

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gc->require_subcommand(1);
  for (const std::string which : {"m1", "m2", "spk"}) {
    auto* sub = gc->add_subcommand(which, "Check " + which + " gradients at desk dims");
    sub->callback([which]() {
      mf::GradCheckReport rep = which == "m1"   ? mf::gradcheck_m1()
                                : which == "m2" ? mf::gradcheck_m2()
                                                : mf::gradcheck_spk();
      for (const auto& g : rep.groups) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%-40s %.3e (%lld coords)\n", g.name.c_str(), g.max_rel_err,
                      static_cast<long long>(g.coords));
        std::cout << buf;
      }
      std::cout << "overall max relative error: " << rep.overall << "\n";
      mf::require(rep.overall < 1e-4, mf::Err::non_finite, "gradient check failed");
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 2;
  } catch (const mf::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
