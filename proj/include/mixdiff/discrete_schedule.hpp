#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

namespace mixdiff {

// Per-step masses of one mask-and-replace transition: `keep` stays on the
// current state on top of the uniform share, every non-mask state receives
// `uniform`, and `mask` moves to [MASK]. keep + K * uniform + mask == 1.
struct TransitionRates {
  double keep = 1.0;
  double uniform = 0.0;
  double mask = 0.0;
};

struct MaskReplaceParams {
  double keep_start = 0.99999;
  double keep_end = 9e-6;
  double mask_start = 9e-6;
  double mask_end = 0.99999;
};

// Column-stochastic transition matrices over S = K + 1 states, where state K
// is the absorbing [MASK]; [Q_t](m, n) = q(z_t = m | z_{t-1} = n).
class DiscreteSchedule {
 public:
  DiscreteSchedule() = default;

  // Cumulative keep and mask masses ramp linearly between the given
  // endpoints over t = 1..T; per-step rates follow from consecutive ratios.
  // Throws InvalidSchedule when a step would need negative uniform mass.
  static DiscreteSchedule mask_replace(int T, int K, const MaskReplaceParams& p);
  // Explicit per-step rates (test fixtures, alternative ramps).
  static DiscreteSchedule from_rates(int K, std::vector<TransitionRates> rates);

  int steps() const { return static_cast<int>(rates_.size()); }
  int num_classes() const { return K_; }
  int num_states() const { return K_ + 1; }
  int mask_state() const { return K_; }

  const TransitionRates& rates(int t) const;
  const Eigen::MatrixXd& Q(int t) const;
  // Q_bar(0) is the identity.
  const Eigen::MatrixXd& Q_bar(int t) const;

  // Average of Q_bar(T) columns over the non-mask states.
  Eigen::VectorXd prior() const;

  void check_step(int t) const;

 private:
  void build();

  int K_ = 0;
  std::vector<TransitionRates> rates_;
  std::vector<Eigen::MatrixXd> Q_;
  std::vector<Eigen::MatrixXd> Q_bar_;  // index 0 holds the identity
};

// Inverse-CDF draw; the first index whose cumulative mass exceeds u wins.
int sample_categorical(std::span<const double> probs, double u);
int sample_categorical(const Eigen::VectorXd& probs, double u);

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);
Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits);

// z_t ~ Cat(Q_bar_t e_{z0}). Throws InvalidInput for z0 == [MASK].
int q_sample_discrete(int z0, int t, double u, const DiscreteSchedule& sched);

// q(z_{t-1} | z_t, z_0) for 2 <= t <= T. Throws UnreachableState when
// Q_bar_t(zt, z0) == 0.
Eigen::VectorXd q_posterior_discrete(int zt, int z0, int t, const DiscreteSchedule& sched);

// p(z_{t-1} | z_t) built by marginalising the posterior over the predicted
// clean state. Clean states that cannot reach zt carry no posterior and are
// skipped.
Eigen::VectorXd reverse_discrete(int zt, const Eigen::VectorXd& logits_z0, int t,
                                 const DiscreteSchedule& sched);

// KL(q(z_{t-1} | z_t, z_0) || p(z_{t-1} | z_t)) for t >= 2, and
// -log p(z_0 | z_1) at t = 1. When `grad` is given it receives the
// derivative with respect to the logits.
double loss_vb_discrete(int z0, int zt, int t, const Eigen::VectorXd& logits_z0,
                        const DiscreteSchedule& sched, Eigen::VectorXd* grad = nullptr);

// -log softmax(logits)[z0]
double loss_aux_discrete(int z0, const Eigen::VectorXd& logits_z0, Eigen::VectorXd* grad = nullptr);

}  // namespace mixdiff
