#include "mixdiff/mixed_diffusion.hpp"

#include <cmath>
#include <numbers>

#include "mixdiff/errors.hpp"
#include "mixdiff/rng.hpp"

namespace mixdiff {

void MixedSchedule::validate() const {
  if (continuous.steps() != discrete.steps()) {
    throw InvalidSchedule("continuous and discrete schedules need the same step count");
  }
}

EncodedScene encode_scene(const SceneLayout& scene, const LabelVocab& vocab, const NormStats& stats) {
  const SceneLayout canon = canonicalize(scene, vocab.empty_index());
  EncodedScene e;
  const auto n = static_cast<Eigen::Index>(canon.objects.size());
  e.x0.resize(n, kGeomDim);
  for (Eigen::Index i = 0; i < n; ++i) {
    const ObjectInstance& o = canon.objects[static_cast<std::size_t>(i)];
    validate_object(o, vocab);
    e.z0.push_back(o.label);
    e.x0.row(i) = encode_object(o, stats).transpose();
  }
  e.floor = &scene.floor;
  return e;
}

Corruption corrupt_scene(const EncodedScene& scene, int t, Rng& rng, const MixedSchedule& sched) {
  sched.continuous.check_step(t);
  Rng label_rng(rng.next_u64());
  Rng geom_rng(rng.next_u64());
  const int N = scene.n_slots();
  Corruption c;
  c.latent.t = t;
  c.latent.z.resize(static_cast<std::size_t>(N));
  c.latent.x.resize(N, kGeomDim);
  c.eps.resize(N, kGeomDim);
  const double ab = sched.continuous.alpha_bar(t);
  const double sa = std::sqrt(ab);
  const double sn = std::sqrt(1.0 - ab);
  for (int i = 0; i < N; ++i) {
    c.latent.z[static_cast<std::size_t>(i)] =
        q_sample_discrete(scene.z0[static_cast<std::size_t>(i)], t, label_rng.uniform(), sched.discrete);
    for (int j = 0; j < kGeomDim; ++j) c.eps(i, j) = geom_rng.normal();
    c.latent.x.row(i) = sa * scene.x0.row(i) + sn * c.eps.row(i);
  }
  return c;
}

std::vector<SlotPosterior> mixed_posterior(const LatentScene& latent, const EncodedScene& scene0,
                                           const MixedSchedule& sched) {
  const int N = scene0.n_slots();
  std::vector<SlotPosterior> out(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) {
    auto& p = out[static_cast<std::size_t>(i)];
    p.labels = q_posterior_discrete(latent.z[static_cast<std::size_t>(i)], scene0.z0[static_cast<std::size_t>(i)],
                                    latent.t, sched.discrete);
    const GaussianPosterior g = q_posterior(scene0.x0.row(i).transpose(), latent.x.row(i).transpose(), latent.t,
                                            sched.continuous);
    p.mean = g.mean;
    p.var = g.var;
  }
  return out;
}

double mixed_posterior_log_density(const SlotPosterior& post, int z, const Eigen::VectorXd& x) {
  const double lp = std::log(post.labels(z));
  const double d = static_cast<double>(x.size());
  const double lg = -0.5 * d * std::log(2.0 * std::numbers::pi * post.var) -
                    0.5 * (x - post.mean).squaredNorm() / post.var;
  return lp + lg;
}

MixedLoss mixed_loss(std::span<const LossItem> items, const RowMatrix& logits, const RowMatrix& eps_hat,
                     double lambda, const MixedSchedule& sched) {
  if (items.empty()) throw InvalidInput("mixed_loss: empty batch");
  const int N = items.front().scene0->n_slots();
  const auto B = static_cast<Eigen::Index>(items.size());
  const int K = sched.discrete.num_classes();
  if (logits.rows() != B * N || logits.cols() != K || eps_hat.rows() != B * N || eps_hat.cols() != kGeomDim) {
    throw InvalidInput("mixed_loss: output shapes do not match the batch");
  }
  MixedLoss res;
  res.dlogits = RowMatrix::Zero(B * N, K);
  res.deps = RowMatrix::Zero(B * N, kGeomDim);
  const double inv_b = 1.0 / static_cast<double>(B);
  double ddpm = 0.0, vb = 0.0, aux = 0.0;
  Eigen::VectorXd g_vb, g_aux;
  for (Eigen::Index b = 0; b < B; ++b) {
    const LossItem& item = items[static_cast<std::size_t>(b)];
    if (item.scene0->n_slots() != N) throw InvalidInput("mixed_loss: scenes need equal slot counts");
    const LatentScene& lat = item.corruption->latent;
    for (int i = 0; i < N; ++i) {
      const Eigen::Index r = b * N + i;
      const auto diff = eps_hat.row(r) - item.corruption->eps.row(i);
      ddpm += diff.squaredNorm();
      res.deps.row(r) = 2.0 * inv_b * diff;

      const Eigen::VectorXd l = logits.row(r).transpose();
      const int z0 = item.scene0->z0[static_cast<std::size_t>(i)];
      vb += loss_vb_discrete(z0, lat.z[static_cast<std::size_t>(i)], lat.t, l, sched.discrete, &g_vb);
      aux += loss_aux_discrete(z0, l, &g_aux);
      res.dlogits.row(r) = inv_b * (g_vb + lambda * g_aux).transpose();
    }
  }
  auto& rep = res.report;
  rep.l_ddpm = ddpm * inv_b;
  rep.l_d3pm_vb = vb * inv_b;
  rep.l_d3pm_aux = aux * inv_b;
  rep.lambda = lambda;
  rep.total = rep.l_ddpm + rep.l_d3pm_vb + lambda * rep.l_d3pm_aux;
  return res;
}

MixedLossReport mixed_loss(const EncodedScene& scene0, const Corruption& corruption, const DenoiserOutput& out,
                           double lambda, const MixedSchedule& sched) {
  const LossItem item{&scene0, &corruption};
  return mixed_loss(std::span<const LossItem>(&item, 1), out.logits_z0, out.eps_hat, lambda, sched).report;
}

double kl_categorical(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) > 0.0) kl += p(i) * std::log(p(i) / q(i));
  }
  return kl;
}

double kl_gaussian(const GaussianParams& p, const GaussianParams& q) {
  return 0.5 * (std::log(q.var / p.var) + (p.var + (p.mean - q.mean) * (p.mean - q.mean)) / q.var - 1.0);
}

KlComparison kl_factorization_check(const Eigen::VectorXd& p_disc, const GaussianParams& p_cont,
                                    const Eigen::VectorXd& q_disc, const GaussianParams& q_cont, int points) {
  if (p_disc.size() != q_disc.size()) throw InvalidInput("categorical sizes differ");
  if (points < 3) throw InvalidInput("need at least three quadrature points");
  if (points % 2 == 0) ++points;
  auto log_normal = [](double x, const GaussianParams& g) {
    return -0.5 * std::log(2.0 * std::numbers::pi * g.var) - 0.5 * (x - g.mean) * (x - g.mean) / g.var;
  };
  const double sd = std::sqrt(p_cont.var);
  const double lo = p_cont.mean - 12.0 * sd;
  const double h = 24.0 * sd / (points - 1);
  double joint = 0.0;
  for (int n = 0; n < points; ++n) {
    const double x = lo + n * h;
    const double w = (n == 0 || n == points - 1) ? 1.0 : (n % 2 == 1 ? 4.0 : 2.0);
    const double lp = log_normal(x, p_cont);
    const double lq = log_normal(x, q_cont);
    const double px = std::exp(lp);
    double inner = 0.0;
    for (Eigen::Index z = 0; z < p_disc.size(); ++z) {
      if (p_disc(z) <= 0.0) continue;
      const double pj = p_disc(z) * px;
      inner += pj * (std::log(p_disc(z)) + lp - std::log(q_disc(z)) - lq);
    }
    joint += w * inner;
  }
  joint *= h / 3.0;
  return {joint, kl_categorical(p_disc, q_disc) + kl_gaussian(p_cont, q_cont)};
}

}  // namespace mixdiff
