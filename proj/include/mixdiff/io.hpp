#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mixdiff/config.hpp"
#include "mixdiff/sampler.hpp"
#include "mixdiff/scene.hpp"
#include "mixdiff/toyrooms.hpp"
#include "mixdiff/training.hpp"

namespace mixdiff {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

// Scenes. Empty slots are not written; loaders return only listed objects.
Json scene_to_json(const SceneLayout& scene, const LabelVocab& vocab);
SceneLayout scene_from_json(const Json& j, const LabelVocab& vocab);

void save_scene(const fs::path& path, const SceneLayout& scene, const LabelVocab& vocab,
                const std::string& config_hash = "");
// One JSON document, or one scene per line. Errors carry file and line.
std::vector<SceneLayout> load_scene_file(const fs::path& path, const LabelVocab& vocab);
// A file, or every *.json / *.ndjson file of a directory in name order.
std::vector<SceneLayout> load_scenes(const fs::path& path, const LabelVocab& vocab);

// Constraints: [{ "slot": int, "label"?: str, "pos"?: [3], "size"?: [3], "yaw_rad"?: float }].
MaskSpec constraints_from_json(const Json& j, const LabelVocab& vocab);
MaskSpec load_constraints(const fs::path& path, const LabelVocab& vocab);

struct Manifest {
  ToyRoomSpec spec;
  LabelVocab vocab;
  int n_slots = 0;
  NormStats stats;  // from the training split
  Eigen::VectorXd label_dist;
  std::uint64_t seed = 0;
  int count = 0;
  int skipped = 0;
  double split_ratio = 0.9;
  std::vector<std::string> train;  // scene file names relative to scenes/
  std::vector<std::string> test;
  std::string config_hash;
};

Json manifest_to_json(const Manifest& m);
Manifest manifest_from_json(const Json& j);

struct Dataset {
  Manifest manifest;
  std::vector<SceneLayout> train;  // padded to n_slots
  std::vector<SceneLayout> test;
};

// Writes manifest.json and scenes/scene_NNNNN.json under dir.
Manifest save_dataset(const fs::path& dir, const ToyDataset& ds, std::uint64_t seed, double split_ratio,
                      const std::string& config_hash);
Dataset load_dataset(const fs::path& dir);

Json run_config_to_json(const RunConfig& c);
// Keys absent from j keep the values of `base`; unknown keys are errors.
RunConfig run_config_from_json(const Json& j, const RunConfig& base = RunConfig{});
RunConfig load_run_config(const fs::path& path);
// FNV-1a 64 of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const RunConfig& c);

struct Checkpoint {
  RunConfig config;
  LabelVocab vocab;
  int n_slots = 0;
  NormStats stats;
  Eigen::VectorXd label_dist;
  Denoiser net;
  Adam adam;
};

void save_checkpoint(const fs::path& path, const Checkpoint& ck);
// Validates every tensor shape against the stored model config.
Checkpoint load_checkpoint(const fs::path& path);

Json read_json_file(const fs::path& path);
void write_text_file(const fs::path& path, const std::string& text);

}  // namespace mixdiff
