#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "mixdiff/geometry.hpp"

namespace mixdiff {

inline constexpr int kGeomDim = 8;
using GeomVec = Eigen::Matrix<double, kGeomDim, 1>;

// Ordered category names. The last name is always "empty"; one extra
// diffusion-only [MASK] state sits at index num_labels().
class LabelVocab {
 public:
  LabelVocab() = default;
  explicit LabelVocab(std::vector<std::string> names);

  int num_labels() const { return static_cast<int>(names_.size()); }
  int empty_index() const { return num_labels() - 1; }
  int mask_index() const { return num_labels(); }
  int num_states() const { return num_labels() + 1; }

  const std::string& name(int index) const;
  // Throws UnknownLabel.
  int index_of(std::string_view name) const;
  std::optional<int> find(std::string_view name) const;
  const std::vector<std::string>& names() const { return names_; }

  bool operator==(const LabelVocab&) const = default;

 private:
  std::vector<std::string> names_;
};

// One object slot. `size` holds half-extents; `angle` is (cos yaw, sin yaw)
// about the vertical z axis.
struct ObjectInstance {
  int label = 0;
  Vec3 pos = Vec3::Zero();
  Vec3 size = Vec3::Zero();
  Vec2 angle = Vec2::Zero();

  static ObjectInstance empty(int empty_label);
  static ObjectInstance make(int label, const Vec3& pos, const Vec3& size, double yaw);

  double yaw() const;
  bool operator==(const ObjectInstance&) const = default;
};

// Throws InvalidObject when `obj` breaks the slot invariants.
void validate_object(const ObjectInstance& obj, const LabelVocab& vocab);

// Per-coordinate affine normalization: encoded = (raw - offset) / scale.
struct NormStats {
  GeomVec offset = GeomVec::Zero();
  GeomVec scale = GeomVec::Ones();

  void validate() const;
  bool operator==(const NormStats&) const = default;
};

struct BoundarySample {
  Vec2 point;
  Vec2 normal;
};

// Simple polygon stored counter-clockwise, plus boundary points sampled
// uniformly by arc length with outward unit normals.
class FloorPlan {
 public:
  static constexpr int kDefaultSamples = 256;

  FloorPlan() = default;
  // Clockwise input is reversed. Throws InvalidFloor for degenerate or
  // self-intersecting polygons.
  explicit FloorPlan(Polygon polygon, int num_samples = kDefaultSamples);

  const Polygon& polygon() const { return polygon_; }
  const std::vector<BoundarySample>& boundary_samples() const { return samples_; }
  double area() const;
  double perimeter() const;

  bool operator==(const FloorPlan& other) const { return polygon_ == other.polygon_; }

 private:
  Polygon polygon_;
  std::vector<BoundarySample> samples_;
};

struct SceneLayout {
  FloorPlan floor;
  std::vector<ObjectInstance> objects;
  std::string room_type;

  int count_nonempty(int empty_label) const;
};

struct DecodeDiagnostics {
  int degenerate_angles = 0;
};

GeomVec encode_object(const ObjectInstance& obj, const NormStats& stats);

// Inverse of encode_object. The angle pair is projected back to the unit
// circle; a near-zero pair decodes to (1, 0) and bumps the diagnostics
// counter. Empty labels always decode to all-zero geometry.
ObjectInstance decode_object(const GeomVec& v, int label, const LabelVocab& vocab,
                             const NormStats& stats, DecodeDiagnostics* diag = nullptr);

// Stable partition: non-empty slots first, relative order kept.
SceneLayout canonicalize(const SceneLayout& scene, int empty_label);

// Appends empty slots up to n_slots. Throws InvalidInput when the scene
// already holds more objects.
SceneLayout pad_scene(const SceneLayout& scene, int n_slots, int empty_label);

// Plan-view footprint rectangle of an object, counter-clockwise.
Polygon footprint(const ObjectInstance& obj);

// Is `p` inside the floor polygon grown outward by `dilation` metres?
bool point_in_floor(const Vec2& p, const FloorPlan& floor, double dilation);

}  // namespace mixdiff
