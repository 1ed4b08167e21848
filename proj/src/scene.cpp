#include "mixdiff/scene.hpp"

#include <algorithm>
#include <cmath>

#include "mixdiff/errors.hpp"

namespace mixdiff {

namespace {

constexpr double kMinDecodedHalfExtent = 1e-3;

bool all_finite(const ObjectInstance& o) {
  return o.pos.allFinite() && o.size.allFinite() && o.angle.allFinite();
}

}  // namespace

LabelVocab::LabelVocab(std::vector<std::string> names) : names_(std::move(names)) {
  if (names_.size() < 2) throw InvalidInput("label vocabulary needs at least one label plus \"empty\"");
  if (names_.back() != "empty") throw InvalidInput("last label must be \"empty\"");
  for (std::size_t i = 0; i < names_.size(); ++i) {
    for (std::size_t j = i + 1; j < names_.size(); ++j) {
      if (names_[i] == names_[j]) throw InvalidInput("duplicate label \"" + names_[i] + "\"");
    }
  }
}

const std::string& LabelVocab::name(int index) const {
  if (index < 0 || index >= num_labels()) throw InvalidInput("label index out of range");
  return names_[static_cast<std::size_t>(index)];
}

std::optional<int> LabelVocab::find(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return static_cast<int>(i);
  }
  return std::nullopt;
}

int LabelVocab::index_of(std::string_view name) const {
  if (auto i = find(name)) return *i;
  throw UnknownLabel("\"" + std::string(name) + "\"");
}

ObjectInstance ObjectInstance::empty(int empty_label) {
  ObjectInstance o;
  o.label = empty_label;
  return o;
}

ObjectInstance ObjectInstance::make(int label, const Vec3& pos, const Vec3& size, double yaw) {
  ObjectInstance o;
  o.label = label;
  o.pos = pos;
  o.size = size;
  o.angle = Vec2(std::cos(yaw), std::sin(yaw));
  return o;
}

double ObjectInstance::yaw() const { return std::atan2(angle.y(), angle.x()); }

void validate_object(const ObjectInstance& obj, const LabelVocab& vocab) {
  if (obj.label < 0 || obj.label >= vocab.num_labels()) throw InvalidObject("label index out of range");
  if (!all_finite(obj)) throw InvalidObject("non-finite attribute");
  if (obj.label == vocab.empty_index()) {
    if (!obj.pos.isZero(0.0) || !obj.size.isZero(0.0) || !obj.angle.isZero(0.0)) {
      throw InvalidObject("empty slot must have zero geometry");
    }
    return;
  }
  if ((obj.size.array() <= 0.0).any()) throw InvalidObject("half-extents must be positive");
  if (std::abs(obj.angle.norm() - 1.0) > 1e-6) throw InvalidObject("angle pair must be unit length");
}

void NormStats::validate() const {
  if (!offset.allFinite() || !scale.allFinite() || (scale.array() <= 0.0).any()) {
    throw InvalidInput("normalization stats must be finite with positive scales");
  }
}

FloorPlan::FloorPlan(Polygon polygon, int num_samples) : polygon_(std::move(polygon)) {
  if (polygon_.size() >= 2 && polygon_.front() == polygon_.back()) polygon_.pop_back();
  for (const auto& v : polygon_) {
    if (!v.allFinite()) throw InvalidFloor("non-finite vertex");
  }
  if (!geom::is_simple(polygon_)) throw InvalidFloor("polygon is degenerate or self-intersecting");
  const double a = geom::signed_area(polygon_);
  if (std::abs(a) < 1e-9) throw InvalidFloor("polygon has zero area");
  if (a < 0.0) std::reverse(polygon_.begin(), polygon_.end());
  if (num_samples <= 0) throw InvalidFloor("need at least one boundary sample");

  const std::size_t n = polygon_.size();
  const double total = geom::perimeter(polygon_);
  const double step = total / num_samples;
  samples_.reserve(static_cast<std::size_t>(num_samples));
  std::size_t edge = 0;
  double edge_start = 0.0;
  double edge_len = (polygon_[1] - polygon_[0]).norm();
  for (int k = 0; k < num_samples; ++k) {
    const double s = (k + 0.5) * step;
    while (s > edge_start + edge_len && edge + 1 < n) {
      edge_start += edge_len;
      ++edge;
      edge_len = (polygon_[(edge + 1) % n] - polygon_[edge]).norm();
    }
    const Vec2& a0 = polygon_[edge];
    const Vec2 d = (polygon_[(edge + 1) % n] - a0) / edge_len;
    const double u = std::clamp(s - edge_start, 0.0, edge_len);
    samples_.push_back({a0 + u * d, Vec2(d.y(), -d.x())});
  }
}

double FloorPlan::area() const { return geom::polygon_area(polygon_); }
double FloorPlan::perimeter() const { return geom::perimeter(polygon_); }

int SceneLayout::count_nonempty(int empty_label) const {
  return static_cast<int>(std::count_if(objects.begin(), objects.end(),
                                        [&](const ObjectInstance& o) { return o.label != empty_label; }));
}

GeomVec encode_object(const ObjectInstance& obj, const NormStats& stats) {
  if (!all_finite(obj)) throw InvalidObject("non-finite attribute");
  GeomVec raw;
  raw << obj.pos, obj.size, obj.angle;
  return (raw - stats.offset).cwiseQuotient(stats.scale);
}

ObjectInstance decode_object(const GeomVec& v, int label, const LabelVocab& vocab,
                             const NormStats& stats, DecodeDiagnostics* diag) {
  if (label < 0 || label >= vocab.num_labels()) throw InvalidInput("decoded label out of range");
  if (label == vocab.empty_index()) return ObjectInstance::empty(label);
  const GeomVec raw = v.cwiseProduct(stats.scale) + stats.offset;
  ObjectInstance o;
  o.label = label;
  o.pos = raw.segment<3>(0);
  o.size = raw.segment<3>(3).cwiseMax(kMinDecodedHalfExtent);
  const Vec2 a = raw.segment<2>(6);
  const double norm = a.norm();
  if (!(norm >= 1e-8)) {
    o.angle = Vec2(1.0, 0.0);
    if (diag) ++diag->degenerate_angles;
  } else {
    o.angle = a / norm;
  }
  return o;
}

SceneLayout canonicalize(const SceneLayout& scene, int empty_label) {
  SceneLayout out = scene;
  std::stable_partition(out.objects.begin(), out.objects.end(),
                        [&](const ObjectInstance& o) { return o.label != empty_label; });
  return out;
}

bool point_in_floor(const Vec2& p, const FloorPlan& floor, double dilation) {
  if (dilation == 0.0) return geom::point_in_polygon(p, floor.polygon());
  const Polygon grown = geom::offset_polygon(floor.polygon(), dilation);
  return geom::point_in_polygon(p, grown);
}

SceneLayout pad_scene(const SceneLayout& scene, int n_slots, int empty_label) {
  if (static_cast<int>(scene.objects.size()) > n_slots) {
    throw InvalidInput("scene has " + std::to_string(scene.objects.size()) + " objects but only " +
                       std::to_string(n_slots) + " slots");
  }
  SceneLayout out = scene;
  out.objects.resize(static_cast<std::size_t>(n_slots), ObjectInstance::empty(empty_label));
  return out;
}

Polygon footprint(const ObjectInstance& obj) {
  return geom::oriented_rect(obj.pos.head<2>(), obj.size.x(), obj.size.y(), obj.angle.x(), obj.angle.y());
}

}  // namespace mixdiff
