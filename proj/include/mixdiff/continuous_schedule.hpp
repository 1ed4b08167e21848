#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace mixdiff {

enum class VarianceChoice { BetaTilde, Beta };

VarianceChoice parse_variance_choice(const std::string& s);
std::string to_string(VarianceChoice v);

struct GaussianPosterior {
  Eigen::VectorXd mean;
  double var = 0.0;
};

// Gaussian corruption tables for steps t = 1..T. Storage is 0-based: the
// accessors take the 1-based step and subtract one internally. All tables
// are kept in double precision.
class ContinuousSchedule {
 public:
  ContinuousSchedule() = default;

  // Linear beta ramp from beta1 (t = 1) to betaT (t = T). Throws
  // InvalidSchedule.
  static ContinuousSchedule linear(int T, double beta1, double betaT);
  // Arbitrary beta table, one entry per step.
  static ContinuousSchedule from_betas(std::vector<double> betas);

  int steps() const { return static_cast<int>(beta_.size()); }
  double beta(int t) const { return beta_[index(t)]; }
  double alpha(int t) const { return alpha_[index(t)]; }
  // alpha_bar(0) == 1.
  double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bar_[index(t)]; }
  double beta_tilde(int t) const { return beta_tilde_[index(t)]; }

  double beta1() const { return beta_.front(); }
  double betaT() const { return beta_.back(); }

  // Throws StepOutOfRange unless 1 <= t <= T.
  void check_step(int t) const;

 private:
  std::size_t index(int t) const;
  void fill_tables();

  std::vector<double> beta_;
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;
  std::vector<double> beta_tilde_;
};

// sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
Eigen::VectorXd q_sample(const Eigen::VectorXd& x0, int t, const Eigen::VectorXd& eps,
                         const ContinuousSchedule& sched);

GaussianPosterior q_posterior(const Eigen::VectorXd& x0, const Eigen::VectorXd& xt, int t,
                              const ContinuousSchedule& sched);

Eigen::VectorXd predict_x0_from_eps(const Eigen::VectorXd& xt, int t, const Eigen::VectorXd& eps_hat,
                                    const ContinuousSchedule& sched);

// Mean of p(x_{t-1} | x_t) under the eps parameterization.
Eigen::VectorXd reverse_mean(const Eigen::VectorXd& xt, const Eigen::VectorXd& eps_hat, int t,
                             const ContinuousSchedule& sched);

double reverse_sigma(int t, const ContinuousSchedule& sched, VarianceChoice choice);

// One ancestral step. The noise term is dropped at t = 1.
Eigen::VectorXd reverse_step(const Eigen::VectorXd& xt, const Eigen::VectorXd& eps_hat, int t,
                             const Eigen::VectorXd& noise, const ContinuousSchedule& sched,
                             VarianceChoice choice = VarianceChoice::BetaTilde);

// Squared L2 distance, summed over every coordinate of the inputs.
double loss_simple(const Eigen::MatrixXd& eps, const Eigen::MatrixXd& eps_hat);

}  // namespace mixdiff
