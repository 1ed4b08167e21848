#pragma once

#include <vector>

#include <Eigen/Core>

#include "mixdiff/scene.hpp"

namespace mixdiff {

struct MetricsReport {
  int n_scenes = 0;
  double kl_labels = 0.0;
  double obj_mean = 0.0;
  double oob_pct = 0.0;
  double iou_pct = 0.0;
  double pos_std = 0.0;
  double pos_std_ib = 0.0;
  double size_std = 0.0;
  double size_std_ib = 0.0;
  // False when too few objects were available for the std fields, which
  // are then reported as 0.
  bool diversity_valid = false;
  bool diversity_ib_valid = false;
};

// KL(predicted label frequencies || ref_dist) over non-empty labels, with
// 1e-10 added to both sides before normalising.
double kl_labels(const std::vector<SceneLayout>& scenes, const Eigen::VectorXd& ref_dist, const LabelVocab& vocab);

// Percentage of non-empty objects with a footprint corner outside the floor
// grown by `dilation`. 0 when there are no objects.
double oob_pct(const std::vector<SceneLayout>& scenes, const LabelVocab& vocab, double dilation = 0.1);

bool object_out_of_bounds(const ObjectInstance& obj, const Polygon& dilated_floor);

// 3-D IoU of two oriented boxes that rotate about the vertical axis only.
double box_iou(const ObjectInstance& a, const ObjectInstance& b);

// Mean pairwise IoU over the non-empty objects of one scene, x100. 0 when
// the scene has fewer than two objects.
double iou_pct(const SceneLayout& scene, const LabelVocab& vocab);

// Mean of iou_pct over scenes holding at least two objects.
double mean_iou_pct(const std::vector<SceneLayout>& scenes, const LabelVocab& vocab);

struct DiversityStd {
  double pos_std = 0.0;
  double size_std = 0.0;
};

// Population std of planar centroids (mean of the two axes) and of sizes
// (mean of three axes), pooled over all scenes. Throws InsufficientData
// with fewer than two qualifying objects.
DiversityStd diversity_std(const std::vector<SceneLayout>& scenes, const LabelVocab& vocab, bool in_boundary_only,
                           double dilation = 0.1);

double obj_count(const std::vector<SceneLayout>& scenes, const LabelVocab& vocab);

MetricsReport compute_metrics(const std::vector<SceneLayout>& scenes, const Eigen::VectorXd& ref_dist,
                              const LabelVocab& vocab);

}  // namespace mixdiff
