#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mahaflow/common.hpp"

namespace mahaflow {

// One ingested utterance; the unit of training data.
struct ClipRecord {
  std::string audio_path;
  std::string source_id;
  double offset_s = 0.0;
  double duration_s = 0.0;
  std::string text;
  std::string language;
  std::string speaker_id;
  bool augmented = false;
};

using Manifest = std::vector<ClipRecord>;

inline nlohmann::ordered_json clip_to_json(const ClipRecord& r) {
  nlohmann::ordered_json j;
  j["audio_path"] = r.audio_path;
  j["source_id"] = r.source_id;
  j["offset_s"] = r.offset_s;
  j["duration_s"] = r.duration_s;
  j["text"] = r.text;
  j["language"] = r.language;
  j["speaker_id"] = r.speaker_id;
  j["augmented"] = r.augmented;
  return j;
}

inline ClipRecord clip_from_json(const nlohmann::json& j) {
  ClipRecord r;
  r.audio_path = j.at("audio_path").get<std::string>();
  r.source_id = j.at("source_id").get<std::string>();
  r.offset_s = j.at("offset_s").get<double>();
  r.duration_s = j.at("duration_s").get<double>();
  r.text = j.at("text").get<std::string>();
  r.language = j.at("language").get<std::string>();
  r.speaker_id = j.at("speaker_id").get<std::string>();
  r.augmented = j.value("augmented", false);
  return r;
}

// Line-delimited records, one JSON object per line.
inline void save_manifest(const Manifest& m, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  require(f.good(), Err::write_failed, "cannot write " + path);
  for (const auto& r : m) f << clip_to_json(r).dump() << "\n";
  require(f.good(), Err::write_failed, "short write: " + path);
}

inline Manifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), Err::missing_file, "cannot open " + path);
  Manifest m;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    require(!j.is_discarded(), Err::malformed_file,
            path + ": bad JSON on line " + std::to_string(lineno));
    m.push_back(clip_from_json(j));
  }
  return m;
}

// Rejection log entry: which stage dropped what and why.
struct Rejection {
  std::string stage;
  std::string reason;
  std::string path;
  double start_s = 0.0;
  double end_s = 0.0;
};

inline nlohmann::ordered_json rejection_to_json(const Rejection& r) {
  nlohmann::ordered_json j;
  j["stage"] = r.stage;
  j["reason"] = r.reason;
  j["path"] = r.path;
  j["start_s"] = r.start_s;
  j["end_s"] = r.end_s;
  return j;
}

inline void save_rejections(const std::vector<Rejection>& rs, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  require(f.good(), Err::write_failed, "cannot write " + path);
  for (const auto& r : rs) f << rejection_to_json(r).dump() << "\n";
  require(f.good(), Err::write_failed, "short write: " + path);
}

}  // namespace mahaflow
