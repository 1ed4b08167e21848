#include "mixdiff/discrete_schedule.hpp"

#include <cmath>
#include <string>

#include "mixdiff/errors.hpp"

namespace mixdiff {

namespace {

// Uniform masses this close to zero are rounding residue of the ramps.
constexpr double kMassTolerance = 1e-15;

double ramp(double start, double end, int t, int T) {
  if (T == 1) return start;
  return start + (end - start) * static_cast<double>(t - 1) / (T - 1);
}

}  // namespace

DiscreteSchedule DiscreteSchedule::mask_replace(int T, int K, const MaskReplaceParams& p) {
  if (T < 1) throw InvalidSchedule("T must be >= 1");
  if (K < 1) throw InvalidSchedule("K must be >= 1");
  for (double v : {p.keep_start, p.keep_end, p.mask_start, p.mask_end}) {
    if (!(v > 0.0 && v < 1.0)) throw InvalidSchedule("ramp endpoints must lie in (0, 1)");
  }
  std::vector<TransitionRates> rates(static_cast<std::size_t>(T));
  double keep_prev = 1.0;
  double mask_prev = 0.0;
  for (int t = 1; t <= T; ++t) {
    const double keep_cum = ramp(p.keep_start, p.keep_end, t, T);
    const double mask_cum = ramp(p.mask_start, p.mask_end, t, T);
    TransitionRates r;
    r.keep = keep_cum / keep_prev;
    r.mask = 1.0 - (1.0 - mask_cum) / (1.0 - mask_prev);
    r.uniform = (1.0 - r.keep - r.mask) / K;
    if (r.uniform < 0.0 && r.uniform > -kMassTolerance) r.uniform = 0.0;
    if (r.uniform < 0.0 || r.keep < 0.0 || r.keep > 1.0 || r.mask < 0.0 || r.mask > 1.0) {
      throw InvalidSchedule("step " + std::to_string(t) + " needs negative transition mass (uniform = " +
                            std::to_string(r.uniform) + ")");
    }
    rates[static_cast<std::size_t>(t - 1)] = r;
    keep_prev = keep_cum;
    mask_prev = mask_cum;
  }
  return from_rates(K, std::move(rates));
}

DiscreteSchedule DiscreteSchedule::from_rates(int K, std::vector<TransitionRates> rates) {
  if (K < 1) throw InvalidSchedule("K must be >= 1");
  if (rates.empty()) throw InvalidSchedule("empty rate table");
  for (const auto& r : rates) {
    if (r.keep < 0.0 || r.uniform < 0.0 || r.mask < 0.0) throw InvalidSchedule("negative transition mass");
    if (std::abs(r.keep + K * r.uniform + r.mask - 1.0) > 1e-12) {
      throw InvalidSchedule("transition masses must sum to one");
    }
  }
  DiscreteSchedule s;
  s.K_ = K;
  s.rates_ = std::move(rates);
  s.build();
  return s;
}

void DiscreteSchedule::build() {
  const int S = num_states();
  Q_.clear();
  Q_bar_.clear();
  Q_bar_.push_back(Eigen::MatrixXd::Identity(S, S));
  for (const auto& r : rates_) {
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(S, S);
    for (int n = 0; n < K_; ++n) {
      for (int m = 0; m < K_; ++m) q(m, n) = r.uniform;
      q(n, n) += r.keep;
      q(K_, n) = r.mask;
    }
    q(K_, K_) = 1.0;
    Q_bar_.push_back(q * Q_bar_.back());
    Q_.push_back(std::move(q));
  }
}

void DiscreteSchedule::check_step(int t) const {
  if (t < 1 || t > steps()) {
    throw StepOutOfRange("t = " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
  }
}

const TransitionRates& DiscreteSchedule::rates(int t) const {
  check_step(t);
  return rates_[static_cast<std::size_t>(t - 1)];
}

const Eigen::MatrixXd& DiscreteSchedule::Q(int t) const {
  check_step(t);
  return Q_[static_cast<std::size_t>(t - 1)];
}

const Eigen::MatrixXd& DiscreteSchedule::Q_bar(int t) const {
  if (t != 0) check_step(t);
  return Q_bar_[static_cast<std::size_t>(t)];
}

Eigen::VectorXd DiscreteSchedule::prior() const {
  const Eigen::MatrixXd& qb = Q_bar_.back();
  Eigen::VectorXd p = qb.leftCols(K_).rowwise().sum() / K_;
  return p / p.sum();
}

int sample_categorical(std::span<const double> probs, double u) {
  double acc = 0.0;
  int last_positive = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] > 0.0) last_positive = static_cast<int>(i);
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  // u landed in the rounding gap above the accumulated mass.
  return last_positive;
}

int sample_categorical(const Eigen::VectorXd& probs, double u) {
  return sample_categorical(std::span<const double>(probs.data(), static_cast<std::size_t>(probs.size())), u);
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - m).exp();
  return e / e.sum();
}

Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return logits.array() - lse;
}

int q_sample_discrete(int z0, int t, double u, const DiscreteSchedule& sched) {
  if (z0 < 0 || z0 >= sched.num_classes()) throw InvalidInput("z0 must be a non-mask state");
  const Eigen::MatrixXd& qb = sched.Q_bar(t);
  return sample_categorical(Eigen::VectorXd(qb.col(z0)), u);
}

Eigen::VectorXd q_posterior_discrete(int zt, int z0, int t, const DiscreteSchedule& sched) {
  if (t < 2 || t > sched.steps()) throw StepOutOfRange("posterior needs 2 <= t <= T");
  if (zt < 0 || zt >= sched.num_states() || z0 < 0 || z0 >= sched.num_states()) {
    throw InvalidInput("state index out of range");
  }
  const double denom = sched.Q_bar(t)(zt, z0);
  if (!(denom > 0.0)) {
    throw UnreachableState("z_t = " + std::to_string(zt) + " unreachable from z_0 = " + std::to_string(z0) +
                           " at t = " + std::to_string(t));
  }
  const Eigen::MatrixXd& q = sched.Q(t);
  const Eigen::MatrixXd& qb_prev = sched.Q_bar(t - 1);
  return q.row(zt).transpose().cwiseProduct(qb_prev.col(z0)) / denom;
}

namespace {

struct Marginal {
  Eigen::MatrixXd posteriors;  // K x S, zero rows for unreachable clean states
  Eigen::VectorXd reachable;   // K
  Eigen::VectorXd probs;       // softmax(logits)
  Eigen::VectorXd weights;     // S, unnormalised
  double total = 0.0;
};

Marginal marginalise(int zt, const Eigen::VectorXd& logits, int t, const DiscreteSchedule& sched) {
  const int K = sched.num_classes();
  const int S = sched.num_states();
  if (logits.size() != K) throw InvalidInput("expected one logit per non-mask state");
  Marginal m;
  m.posteriors = Eigen::MatrixXd::Zero(K, S);
  m.reachable = Eigen::VectorXd::Zero(K);
  m.probs = softmax(logits);
  const Eigen::MatrixXd& qb = sched.Q_bar(t);
  for (int k = 0; k < K; ++k) {
    if (!(qb(zt, k) > 0.0)) continue;
    m.posteriors.row(k) = q_posterior_discrete(zt, k, t, sched).transpose();
    m.reachable(k) = 1.0;
  }
  m.weights = m.posteriors.transpose() * m.probs;
  m.total = m.reachable.dot(m.probs);
  if (!(m.total > 0.0)) {
    throw UnreachableState("no predicted clean state can reach z_t = " + std::to_string(zt));
  }
  return m;
}

}  // namespace

Eigen::VectorXd reverse_discrete(int zt, const Eigen::VectorXd& logits_z0, int t, const DiscreteSchedule& sched) {
  if (t < 2 || t > sched.steps()) throw StepOutOfRange("reverse step needs 2 <= t <= T");
  const Marginal m = marginalise(zt, logits_z0, t, sched);
  return m.weights / m.total;
}

double loss_aux_discrete(int z0, const Eigen::VectorXd& logits_z0, Eigen::VectorXd* grad) {
  if (z0 < 0 || z0 >= logits_z0.size()) throw InvalidInput("z0 must be a non-mask state");
  const Eigen::VectorXd ls = log_softmax(logits_z0);
  if (grad) {
    *grad = ls.array().exp();
    (*grad)(z0) -= 1.0;
  }
  return -ls(z0);
}

double loss_vb_discrete(int z0, int zt, int t, const Eigen::VectorXd& logits_z0, const DiscreteSchedule& sched,
                        Eigen::VectorXd* grad) {
  sched.check_step(t);
  if (t == 1) return loss_aux_discrete(z0, logits_z0, grad);

  const Eigen::VectorXd q = q_posterior_discrete(zt, z0, t, sched);
  const Marginal m = marginalise(zt, logits_z0, t, sched);
  const int S = sched.num_states();
  double kl = 0.0;
  Eigen::VectorXd dkl_dw = Eigen::VectorXd::Zero(S);
  for (int j = 0; j < S; ++j) {
    if (q(j) <= 0.0) continue;
    const double w = std::max(m.weights(j), 1e-300);
    kl += q(j) * (std::log(q(j)) - std::log(w / m.total));
    dkl_dw(j) = -q(j) / w;
  }
  if (grad) {
    // dKL/ds_k through both the weights and the normaliser, then softmax.
    const Eigen::VectorXd g = m.posteriors * dkl_dw + m.reachable * (q.sum() / m.total);
    const double sg = m.probs.dot(g);
    *grad = m.probs.cwiseProduct((g.array() - sg).matrix());
  }
  return kl;
}

}  // namespace mixdiff
