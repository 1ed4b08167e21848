#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "mixdiff/continuous_schedule.hpp"
#include "mixdiff/denoiser.hpp"
#include "mixdiff/discrete_schedule.hpp"
#include "mixdiff/latent.hpp"
#include "mixdiff/scene.hpp"

namespace mixdiff {

class Rng;

// The two independent corruption processes that act on labels and geometry.
struct MixedSchedule {
  ContinuousSchedule continuous;
  DiscreteSchedule discrete;
  VarianceChoice variance = VarianceChoice::BetaTilde;

  int steps() const { return continuous.steps(); }
  // Throws InvalidSchedule when the two step counts differ.
  void validate() const;
};

// A canonicalised scene encoded for diffusion: clean labels z0 and
// normalised geometry x0 (N x 8).
struct EncodedScene {
  std::vector<int> z0;
  RowMatrix x0;
  const FloorPlan* floor = nullptr;

  int n_slots() const { return static_cast<int>(z0.size()); }
};

EncodedScene encode_scene(const SceneLayout& scene, const LabelVocab& vocab, const NormStats& stats);

struct Corruption {
  LatentScene latent;
  RowMatrix eps;  // Gaussian draws used for x_t, N x 8
};

// Samples (z_t, x_t) for every slot. Labels and geometry draw from two
// separate streams split off `rng`.
Corruption corrupt_scene(const EncodedScene& scene, int t, Rng& rng, const MixedSchedule& sched);

struct SlotPosterior {
  Eigen::VectorXd labels;  // categorical over S states
  Eigen::VectorXd mean;    // 8
  double var = 0.0;
};

std::vector<SlotPosterior> mixed_posterior(const LatentScene& latent, const EncodedScene& scene0,
                                           const MixedSchedule& sched);

// Log density of (z, x) under one slot's factorised posterior.
double mixed_posterior_log_density(const SlotPosterior& post, int z, const Eigen::VectorXd& x);

struct MixedLossReport {
  double l_ddpm = 0.0;
  double l_d3pm_vb = 0.0;
  double l_d3pm_aux = 0.0;
  double lambda = 0.0;
  double total = 0.0;
};

struct MixedLoss {
  MixedLossReport report;
  RowMatrix dlogits;  // d total / d logits, B * N x K
  RowMatrix deps;     // d total / d eps_hat, B * N x 8
};

struct LossItem {
  const EncodedScene* scene0 = nullptr;
  const Corruption* corruption = nullptr;
};

// Sum over slots, mean over the batch. Rows of logits / eps_hat follow the
// item order, N rows per item.
MixedLoss mixed_loss(std::span<const LossItem> items, const RowMatrix& logits, const RowMatrix& eps_hat,
                     double lambda, const MixedSchedule& sched);

MixedLossReport mixed_loss(const EncodedScene& scene0, const Corruption& corruption, const DenoiserOutput& out,
                           double lambda, const MixedSchedule& sched);

struct GaussianParams {
  double mean = 0.0;
  double var = 1.0;
};

struct KlComparison {
  double joint_kl = 0.0;
  double sum_kl = 0.0;
};

double kl_categorical(const Eigen::VectorXd& p, const Eigen::VectorXd& q);
double kl_gaussian(const GaussianParams& p, const GaussianParams& q);

// joint_kl integrates the product densities numerically (composite Simpson
// on `points` nodes over +-12 sigma of p); sum_kl adds the closed forms.
KlComparison kl_factorization_check(const Eigen::VectorXd& p_disc, const GaussianParams& p_cont,
                                    const Eigen::VectorXd& q_disc, const GaussianParams& q_cont,
                                    int points = 10001);

}  // namespace mixdiff
