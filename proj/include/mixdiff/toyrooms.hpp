#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mixdiff/scene.hpp"

namespace mixdiff {

enum class ToyRoomType { Bedroom, Dining };

// Rule set of a procedural room family.
//   toy_dining:  one table near the middle of the room and 2, 4 or 6 chairs
//                (equally likely) placed symmetrically around it.
//   toy_bedroom: one bed against a wall, 0-2 nightstands beside it (equally
//                likely) and a wardrobe against some wall with probability
//                wardrobe_prob.
// Floors are rectangles or L-shapes whose bounding box sides are drawn from
// [min_side, max_side] metres, centred on the origin.
struct ToyRoomSpec {
  ToyRoomType type = ToyRoomType::Dining;
  double min_side = 3.0;
  double max_side = 8.0;
  double l_shape_prob = 0.5;
  double wardrobe_prob = 0.5;
  bool rotate_aug = false;  // random multiple of 90 degrees per scene

  static ToyRoomSpec named(const std::string& room_type);
  std::string name() const;
  LabelVocab vocab() const;
  int n_slots() const;
  // Expected share of every non-empty label among all objects.
  Eigen::VectorXd label_distribution() const;
  double mean_object_count() const;
  void validate() const;
};

struct ToyDataset {
  ToyRoomSpec spec;
  LabelVocab vocab;
  int n_slots = 0;
  std::vector<SceneLayout> scenes;  // padded to n_slots
  NormStats stats;
  Eigen::VectorXd label_dist;
  int skipped = 0;  // scenes dropped after exhausting placement attempts
};

// Scene i is drawn from Rng::stream(seed, i); object counts are drawn once
// per scene and geometry is retried up to 100 times.
ToyDataset generate(const ToyRoomSpec& spec, int count, std::uint64_t seed);

// The observed range of all position coordinates, and separately of all
// size coordinates, maps onto [-1, 1]; the angle pair is left as is.
NormStats compute_norm_stats(const std::vector<SceneLayout>& scenes, const LabelVocab& vocab);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Pure function of (n, seed, train_ratio).
Split split_indices(std::size_t n, std::uint64_t seed, double train_ratio);

}  // namespace mixdiff
