#include "mixdiff/continuous_schedule.hpp"

#include <cmath>
#include <string>

#include "mixdiff/errors.hpp"

namespace mixdiff {

VarianceChoice parse_variance_choice(const std::string& s) {
  if (s == "beta_tilde") return VarianceChoice::BetaTilde;
  if (s == "beta") return VarianceChoice::Beta;
  throw InvalidInput("variance_choice must be beta_tilde or beta, got \"" + s + "\"");
}

std::string to_string(VarianceChoice v) { return v == VarianceChoice::Beta ? "beta" : "beta_tilde"; }

ContinuousSchedule ContinuousSchedule::linear(int T, double beta1, double betaT) {
  if (T < 1) throw InvalidSchedule("T must be >= 1");
  if (!(beta1 > 0.0 && beta1 <= betaT && betaT < 1.0)) {
    throw InvalidSchedule("need 0 < beta1 <= betaT < 1");
  }
  std::vector<double> betas(static_cast<std::size_t>(T));
  for (int i = 0; i < T; ++i) {
    betas[static_cast<std::size_t>(i)] =
        T == 1 ? beta1 : beta1 + (betaT - beta1) * static_cast<double>(i) / (T - 1);
  }
  return from_betas(std::move(betas));
}

ContinuousSchedule ContinuousSchedule::from_betas(std::vector<double> betas) {
  if (betas.empty()) throw InvalidSchedule("empty beta table");
  for (double b : betas) {
    if (!(b > 0.0 && b < 1.0)) throw InvalidSchedule("beta outside (0, 1)");
  }
  ContinuousSchedule s;
  s.beta_ = std::move(betas);
  s.fill_tables();
  return s;
}

void ContinuousSchedule::fill_tables() {
  const std::size_t T = beta_.size();
  alpha_.resize(T);
  alpha_bar_.resize(T);
  beta_tilde_.resize(T);
  double prod = 1.0;
  for (std::size_t i = 0; i < T; ++i) {
    alpha_[i] = 1.0 - beta_[i];
    const double prev = prod;
    prod *= alpha_[i];
    alpha_bar_[i] = prod;
    beta_tilde_[i] = i == 0 ? 0.0 : (1.0 - prev) / (1.0 - prod) * beta_[i];
  }
}

void ContinuousSchedule::check_step(int t) const {
  if (t < 1 || t > steps()) {
    throw StepOutOfRange("t = " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
  }
}

std::size_t ContinuousSchedule::index(int t) const {
  check_step(t);
  return static_cast<std::size_t>(t - 1);
}

Eigen::VectorXd q_sample(const Eigen::VectorXd& x0, int t, const Eigen::VectorXd& eps,
                         const ContinuousSchedule& sched) {
  sched.check_step(t);
  const double ab = sched.alpha_bar(t);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

GaussianPosterior q_posterior(const Eigen::VectorXd& x0, const Eigen::VectorXd& xt, int t,
                              const ContinuousSchedule& sched) {
  sched.check_step(t);
  const double ab = sched.alpha_bar(t);
  const double ab_prev = sched.alpha_bar(t - 1);
  const double c0 = std::sqrt(ab_prev) * sched.beta(t) / (1.0 - ab);
  const double ct = std::sqrt(sched.alpha(t)) * (1.0 - ab_prev) / (1.0 - ab);
  return {c0 * x0 + ct * xt, sched.beta_tilde(t)};
}

Eigen::VectorXd predict_x0_from_eps(const Eigen::VectorXd& xt, int t, const Eigen::VectorXd& eps_hat,
                                    const ContinuousSchedule& sched) {
  const double ab = sched.alpha_bar(t);
  return (xt - std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(ab);
}

Eigen::VectorXd reverse_mean(const Eigen::VectorXd& xt, const Eigen::VectorXd& eps_hat, int t,
                             const ContinuousSchedule& sched) {
  const double ab = sched.alpha_bar(t);
  return (xt - sched.beta(t) / std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(sched.alpha(t));
}

double reverse_sigma(int t, const ContinuousSchedule& sched, VarianceChoice choice) {
  sched.check_step(t);
  if (t == 1) return 0.0;
  return std::sqrt(choice == VarianceChoice::Beta ? sched.beta(t) : sched.beta_tilde(t));
}

Eigen::VectorXd reverse_step(const Eigen::VectorXd& xt, const Eigen::VectorXd& eps_hat, int t,
                             const Eigen::VectorXd& noise, const ContinuousSchedule& sched,
                             VarianceChoice choice) {
  Eigen::VectorXd mean = reverse_mean(xt, eps_hat, t, sched);
  const double sigma = reverse_sigma(t, sched, choice);
  if (sigma == 0.0) return mean;
  return mean + sigma * noise;
}

double loss_simple(const Eigen::MatrixXd& eps, const Eigen::MatrixXd& eps_hat) {
  if (eps.rows() != eps_hat.rows() || eps.cols() != eps_hat.cols()) {
    throw InvalidInput("loss_simple: shape mismatch");
  }
  return (eps - eps_hat).squaredNorm();
}

}  // namespace mixdiff
