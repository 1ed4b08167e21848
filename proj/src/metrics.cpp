#include "mixdiff/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "mixdiff/errors.hpp"
#include "mixdiff/geometry.hpp"

namespace mixdiff {

double kl_labels(const std::vector<SceneLayout>& scenes, const Eigen::VectorXd& ref_dist, const LabelVocab& vocab) {
  const int C = vocab.num_labels() - 1;
  if (ref_dist.size() != C) throw InvalidInput("reference distribution must cover every non-empty label");
  if ((ref_dist.array() < 0.0).any() || std::abs(ref_dist.sum() - 1.0) > 1e-9) {
    throw InvalidInput("reference distribution must be non-negative and sum to 1");
  }
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(C);
  for (const auto& s : scenes) {
    for (const auto& o : s.objects) {
      if (o.label >= 0 && o.label < C) counts(o.label) += 1.0;
    }
  }
  constexpr double kSmooth = 1e-10;
  Eigen::VectorXd p = counts.sum() > 0.0 ? Eigen::VectorXd(counts / counts.sum()) : Eigen::VectorXd::Zero(C);
  p.array() += kSmooth;
  p /= p.sum();
  Eigen::VectorXd q = ref_dist.array() + kSmooth;
  q /= q.sum();
  double kl = 0.0;
  for (int k = 0; k < C; ++k) kl += p(k) * std::log(p(k) / q(k));
  return std::max(kl, 0.0);
}

bool object_out_of_bounds(const ObjectInstance& obj, const Polygon& dilated_floor) {
  for (const auto& c : footprint(obj)) {
    if (!geom::point_in_polygon(c, dilated_floor)) return true;
  }
  return false;
}

double oob_pct(const std::vector<SceneLayout>& scenes, const LabelVocab& vocab, double dilation) {
  long total = 0, out = 0;
  for (const auto& s : scenes) {
    const Polygon grown = geom::offset_polygon(s.floor.polygon(), dilation);
    for (const auto& o : s.objects) {
      if (o.label == vocab.empty_index()) continue;
      ++total;
      if (object_out_of_bounds(o, grown)) ++out;
    }
  }
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(out) / static_cast<double>(total);
}

double box_iou(const ObjectInstance& a, const ObjectInstance& b) {
  const double area = geom::polygon_area(geom::clip_convex(footprint(a), footprint(b)));
  const double lo = std::max(a.pos.z() - a.size.z(), b.pos.z() - b.size.z());
  const double hi = std::min(a.pos.z() + a.size.z(), b.pos.z() + b.size.z());
  const double inter = area * std::max(0.0, hi - lo);
  const double va = 8.0 * a.size.prod();
  const double vb = 8.0 * b.size.prod();
  const double uni = va + vb - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double iou_pct(const SceneLayout& scene, const LabelVocab& vocab) {
  std::vector<const ObjectInstance*> objs;
  for (const auto& o : scene.objects) {
    if (o.label != vocab.empty_index()) objs.push_back(&o);
  }
  if (objs.size() < 2) return 0.0;
  double sum = 0.0;
  long pairs = 0;
  for (std::size_t i = 0; i < objs.size(); ++i) {
    for (std::size_t j = i + 1; j < objs.size(); ++j) {
      sum += box_iou(*objs[i], *objs[j]);
      ++pairs;
    }
  }
  return 100.0 * sum / static_cast<double>(pairs);
}

double mean_iou_pct(const std::vector<SceneLayout>& scenes, const LabelVocab& vocab) {
  double sum = 0.0;
  int n = 0;
  for (const auto& s : scenes) {
    if (s.count_nonempty(vocab.empty_index()) < 2) continue;
    sum += iou_pct(s, vocab);
    ++n;
  }
  return n == 0 ? 0.0 : sum / n;
}

DiversityStd diversity_std(const std::vector<SceneLayout>& scenes, const LabelVocab& vocab, bool in_boundary_only,
                           double dilation) {
  std::vector<Vec2> pos;
  std::vector<Vec3> size;
  for (const auto& s : scenes) {
    Polygon grown;
    if (in_boundary_only) grown = geom::offset_polygon(s.floor.polygon(), dilation);
    for (const auto& o : s.objects) {
      if (o.label == vocab.empty_index()) continue;
      if (in_boundary_only && object_out_of_bounds(o, grown)) continue;
      pos.push_back(o.pos.head<2>());
      size.push_back(o.size);
    }
  }
  if (pos.size() < 2) throw InsufficientData("diversity needs at least two objects, got " + std::to_string(pos.size()));
  const double n = static_cast<double>(pos.size());
  Vec2 pm = Vec2::Zero();
  Vec3 sm = Vec3::Zero();
  for (std::size_t i = 0; i < pos.size(); ++i) {
    pm += pos[i];
    sm += size[i];
  }
  pm /= n;
  sm /= n;
  Vec2 pv = Vec2::Zero();
  Vec3 sv = Vec3::Zero();
  for (std::size_t i = 0; i < pos.size(); ++i) {
    pv += (pos[i] - pm).cwiseAbs2();
    sv += (size[i] - sm).cwiseAbs2();
  }
  DiversityStd d;
  d.pos_std = (pv / n).cwiseSqrt().mean();
  d.size_std = (sv / n).cwiseSqrt().mean();
  return d;
}

double obj_count(const std::vector<SceneLayout>& scenes, const LabelVocab& vocab) {
  if (scenes.empty()) return 0.0;
  double total = 0.0;
  for (const auto& s : scenes) total += s.count_nonempty(vocab.empty_index());
  return total / static_cast<double>(scenes.size());
}

MetricsReport compute_metrics(const std::vector<SceneLayout>& scenes, const Eigen::VectorXd& ref_dist,
                              const LabelVocab& vocab) {
  MetricsReport r;
  r.n_scenes = static_cast<int>(scenes.size());
  r.kl_labels = kl_labels(scenes, ref_dist, vocab);
  r.obj_mean = obj_count(scenes, vocab);
  r.oob_pct = oob_pct(scenes, vocab);
  r.iou_pct = mean_iou_pct(scenes, vocab);
  try {
    const DiversityStd d = diversity_std(scenes, vocab, false);
    r.pos_std = d.pos_std;
    r.size_std = d.size_std;
    r.diversity_valid = true;
  } catch (const InsufficientData&) {
  }
  try {
    const DiversityStd d = diversity_std(scenes, vocab, true);
    r.pos_std_ib = d.pos_std;
    r.size_std_ib = d.size_std;
    r.diversity_ib_valid = true;
  } catch (const InsufficientData&) {
  }
  return r;
}

}  // namespace mixdiff
