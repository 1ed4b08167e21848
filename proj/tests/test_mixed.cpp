#include <doctest.h>

#include <cmath>
#include <numbers>

#include "mixdiff/errors.hpp"
#include "mixdiff/mixed_diffusion.hpp"
#include "mixdiff/rng.hpp"

using namespace mixdiff;

namespace {

LabelVocab vocab() { return LabelVocab({"a", "b", "c", "empty"}); }

SceneLayout toy_scene(Rng& rng, int N) {
  SceneLayout s;
  s.floor = FloorPlan(Polygon{{-3, -3}, {3, -3}, {3, 3}, {-3, 3}});
  const int n_obj = rng.uniform_int(1, N);
  for (int i = 0; i < N; ++i) {
    if (i < n_obj) {
      s.objects.push_back(ObjectInstance::make(rng.uniform_int(0, 2), Vec3(rng.uniform(-2, 2), rng.uniform(-2, 2), 0.5),
                                               Vec3(rng.uniform(0.2, 1), rng.uniform(0.2, 1), 0.5), rng.uniform(-3, 3)));
    } else {
      s.objects.push_back(ObjectInstance::empty(3));
    }
  }
  return s;
}

MixedSchedule default_sched(int T, int K) {
  MixedSchedule m;
  m.continuous = ContinuousSchedule::linear(T, 1e-4 * 1000 / T, 0.02 * 1000 / T);
  m.discrete = DiscreteSchedule::mask_replace(T, K, MaskReplaceParams{});
  return m;
}

}  // namespace

TEST_CASE("schedule step counts must agree") {
  MixedSchedule m;
  m.continuous = ContinuousSchedule::linear(10, 1e-4, 0.02);
  m.discrete = DiscreteSchedule::mask_replace(12, 3, MaskReplaceParams{});
  CHECK_THROWS_AS(m.validate(), InvalidSchedule);
}

TEST_CASE("encode scene canonicalises") {
  Rng rng(1);
  SceneLayout s = toy_scene(rng, 5);
  s.objects[4] = ObjectInstance::empty(3);
  std::swap(s.objects[0], s.objects[4]);
  const EncodedScene e = encode_scene(s, vocab(), NormStats{});
  CHECK(e.n_slots() == 5);
  CHECK(e.z0.back() == 3);
  CHECK(e.floor == &s.floor);
}

TEST_CASE("corruption under an identity label schedule") {
  Rng rng(2);
  const SceneLayout s = toy_scene(rng, 6);
  const EncodedScene e = encode_scene(s, vocab(), NormStats{});
  MixedSchedule m;
  m.continuous = ContinuousSchedule::linear(20, 1e-4, 0.02);
  m.discrete = DiscreteSchedule::from_rates(4, std::vector<TransitionRates>(20, TransitionRates{}));
  for (int t : {1, 10, 20}) {
    const Corruption c = corrupt_scene(e, t, rng, m);
    CHECK(c.latent.t == t);
    CHECK(c.latent.z == e.z0);
    const double ab = m.continuous.alpha_bar(t);
    CHECK((c.latent.x - std::sqrt(ab) * e.x0 - std::sqrt(1 - ab) * c.eps).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("mask fraction at T") {
  const auto m = default_sched(1000, 4);
  Rng rng(3);
  const SceneLayout s = toy_scene(rng, 10);
  const EncodedScene e = encode_scene(s, vocab(), NormStats{});
  long masked = 0, total = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    const Corruption c = corrupt_scene(e, 1000, rng, m);
    for (int z : c.latent.z) {
      masked += z == 4;
      ++total;
    }
  }
  const double p = m.discrete.Q_bar(1000)(4, 0);
  CHECK(std::abs(static_cast<double>(masked) / total - p) <= 3.0 * std::sqrt(p * (1 - p) / total) + 1.0 / total);
}

TEST_CASE("label and geometry corruption are independent") {
  const auto m = default_sched(100, 4);
  int t_half = 1;
  while (m.discrete.Q_bar(t_half)(4, 0) < 0.5) ++t_half;
  SceneLayout s;
  s.floor = FloorPlan(Polygon{{-3, -3}, {3, -3}, {3, 3}, {-3, 3}});
  s.objects = {ObjectInstance::make(0, Vec3(1, 0, 0.5), Vec3(0.5, 0.5, 0.5), 0.2)};
  const EncodedScene e = encode_scene(s, vocab(), NormStats{});
  Rng rng(4);
  const int n = 100000;
  std::vector<double> mk(n);
  std::vector<Eigen::Matrix<double, 8, 1>> xs(n);
  for (int i = 0; i < n; ++i) {
    const Corruption c = corrupt_scene(e, t_half, rng, m);
    mk[static_cast<std::size_t>(i)] = c.latent.z[0] == 4 ? 1.0 : 0.0;
    xs[static_cast<std::size_t>(i)] = c.latent.x.row(0).transpose();
  }
  for (int j = 0; j < 8; ++j) {
    double sm = 0, sx = 0, smm = 0, sxx = 0, smx = 0;
    for (int i = 0; i < n; ++i) {
      const double a = mk[static_cast<std::size_t>(i)], b = xs[static_cast<std::size_t>(i)](j);
      sm += a;
      sx += b;
      smm += a * a;
      sxx += b * b;
      smx += a * b;
    }
    const double cov = smx / n - sm / n * sx / n;
    const double corr = cov / std::sqrt((smm / n - sm * sm / n / n) * (sxx / n - sx * sx / n / n));
    CHECK(std::abs(corr) < 3.0 / std::sqrt(static_cast<double>(n)));
  }
}

TEST_CASE("factorised posterior") {
  Rng rng(5);
  const auto m = default_sched(50, 4);
  const SceneLayout s = toy_scene(rng, 4);
  const EncodedScene e = encode_scene(s, vocab(), NormStats{});
  const Corruption c = corrupt_scene(e, 20, rng, m);
  const auto post = mixed_posterior(c.latent, e, m);
  REQUIRE(post.size() == 4);
  for (int i = 0; i < 4; ++i) {
    const auto& p = post[static_cast<std::size_t>(i)];
    CHECK((p.labels - q_posterior_discrete(c.latent.z[static_cast<std::size_t>(i)], e.z0[static_cast<std::size_t>(i)], 20, m.discrete)).norm() == 0.0);
    const GaussianPosterior g = q_posterior(e.x0.row(i).transpose(), c.latent.x.row(i).transpose(), 20, m.continuous);
    CHECK((p.mean - g.mean).norm() == 0.0);
    CHECK(p.var == g.var);
    // joint log density at sampled points equals the sum of factor log densities
    for (int k = 0; k < 5; ++k) {
      const int z = sample_categorical(p.labels, rng.uniform());
      Eigen::VectorXd x(8);
      for (int j = 0; j < 8; ++j) x(j) = p.mean(j) + std::sqrt(p.var) * rng.normal();
      double lg = 0.0;
      for (int j = 0; j < 8; ++j) {
        lg += -0.5 * std::log(2 * std::numbers::pi * p.var) - 0.5 * (x(j) - p.mean(j)) * (x(j) - p.mean(j)) / p.var;
      }
      CHECK(std::abs(mixed_posterior_log_density(p, z, x) - (std::log(p.labels(z)) + lg)) < 1e-10);
    }
  }

  MixedSchedule id;
  id.continuous = ContinuousSchedule::linear(10, 1e-4, 0.02);
  id.discrete = DiscreteSchedule::from_rates(4, std::vector<TransitionRates>(10, TransitionRates{}));
  const Corruption c2 = corrupt_scene(e, 5, rng, id);
  for (const auto& p : mixed_posterior(c2.latent, e, id)) CHECK(p.labels.maxCoeff() == 1.0);
}

TEST_CASE("mixed loss") {
  Rng rng(6);
  const auto m = default_sched(40, 4);
  const int N = 5;
  std::vector<SceneLayout> scenes;
  std::vector<EncodedScene> enc;
  std::vector<Corruption> cor;
  for (int b = 0; b < 3; ++b) scenes.push_back(toy_scene(rng, N));
  for (const auto& s : scenes) enc.push_back(encode_scene(s, vocab(), NormStats{}));
  for (const auto& e : enc) cor.push_back(corrupt_scene(e, rng.uniform_int(1, 40), rng, m));

  SUBCASE("perfect predictions") {
    for (std::size_t b = 0; b < 3; ++b) {
      DenoiserOutput out;
      out.eps_hat = cor[b].eps;
      out.logits_z0 = RowMatrix::Constant(N, 4, -25.0);
      for (int i = 0; i < N; ++i) out.logits_z0(i, enc[b].z0[static_cast<std::size_t>(i)]) = 25.0;
      const MixedLossReport r = mixed_loss(enc[b], cor[b], out, 0.05, m);
      CHECK(r.l_ddpm == 0.0);
      CHECK(r.l_d3pm_vb < 1e-9);
      CHECK(r.l_d3pm_aux < 1e-9);
    }
  }

  RowMatrix logits(3 * N, 4), eps_hat(3 * N, 8);
  for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < eps_hat.size(); ++i) eps_hat.data()[i] = rng.normal();
  std::vector<LossItem> items;
  for (std::size_t b = 0; b < 3; ++b) items.push_back({&enc[b], &cor[b]});

  SUBCASE("independent summation") {
    double ddpm = 0, vb = 0, aux = 0;
    for (int b = 0; b < 3; ++b) {
      for (int i = 0; i < N; ++i) {
        const int r = b * N + i;
        for (int j = 0; j < 8; ++j) ddpm += std::pow(eps_hat(r, j) - cor[static_cast<std::size_t>(b)].eps(i, j), 2);
        const Eigen::VectorXd l = logits.row(r).transpose();
        const int z0 = enc[static_cast<std::size_t>(b)].z0[static_cast<std::size_t>(i)];
        const int zt = cor[static_cast<std::size_t>(b)].latent.z[static_cast<std::size_t>(i)];
        const int t = cor[static_cast<std::size_t>(b)].latent.t;
        double lse = 0;
        for (int k = 0; k < 4; ++k) lse += std::exp(l(k));
        aux += std::log(lse) - l(z0);
        if (t == 1) {
          vb += std::log(lse) - l(z0);
        } else {
          const Eigen::VectorXd q = q_posterior_discrete(zt, z0, t, m.discrete);
          const Eigen::VectorXd p = reverse_discrete(zt, l, t, m.discrete);
          for (int k = 0; k < 5; ++k) if (q(k) > 0) vb += q(k) * std::log(q(k) / p(k));
        }
      }
    }
    const MixedLoss res = mixed_loss(items, logits, eps_hat, 0.05, m);
    CHECK(res.report.l_ddpm == doctest::Approx(ddpm / 3).epsilon(1e-12));
    CHECK(res.report.l_d3pm_vb == doctest::Approx(vb / 3).epsilon(1e-10));
    CHECK(res.report.l_d3pm_aux == doctest::Approx(aux / 3).epsilon(1e-12));
    CHECK(res.report.total == res.report.l_ddpm + res.report.l_d3pm_vb + 0.05 * res.report.l_d3pm_aux);
    const MixedLoss r0 = mixed_loss(items, logits, eps_hat, 0.0, m);
    CHECK(r0.report.total == r0.report.l_ddpm + r0.report.l_d3pm_vb);
    CHECK((res.deps - 2.0 * (eps_hat - [&] {
             RowMatrix e(3 * N, 8);
             for (int b = 0; b < 3; ++b) e.middleRows(b * N, N) = cor[static_cast<std::size_t>(b)].eps;
             return e;
           }()) / 3.0).cwiseAbs().maxCoeff() < 1e-14);
  }

  SUBCASE("gradient against finite differences") {
    const MixedLoss res = mixed_loss(items, logits, eps_hat, 0.05, m);
    for (int trial = 0; trial < 20; ++trial) {
      const int r = rng.uniform_int(0, 3 * N - 1), k = rng.uniform_int(0, 3);
      RowMatrix lp = logits, lm = logits;
      lp(r, k) += 1e-6;
      lm(r, k) -= 1e-6;
      const double fd = (mixed_loss(items, lp, eps_hat, 0.05, m).report.total -
                         mixed_loss(items, lm, eps_hat, 0.05, m).report.total) / 2e-6;
      CHECK(res.dlogits(r, k) == doctest::Approx(fd).epsilon(1e-5).scale(1e-6));
    }
  }
}

TEST_CASE("KL factorisation") {
  Eigen::Vector4d p(0.1, 0.2, 0.3, 0.4);
  const GaussianParams g{0.3, 2.0};
  const KlComparison same = kl_factorization_check(p, g, p, g, 10000);
  CHECK(std::abs(same.joint_kl) < 1e-12);
  CHECK(same.sum_kl == 0.0);

  Eigen::Vector4d q(0.25, 0.25, 0.25, 0.25);
  const KlComparison half = kl_factorization_check(p, g, q, g, 10000);
  CHECK(std::abs(half.joint_kl - kl_categorical(p, q)) < 1e-9);

  Rng rng(7);
  for (int i = 0; i < 100; ++i) {
    Eigen::Vector4d a, b;
    for (int k = 0; k < 4; ++k) {
      a(k) = rng.uniform(0.05, 1);
      b(k) = rng.uniform(0.05, 1);
    }
    a /= a.sum();
    b /= b.sum();
    const GaussianParams gp{rng.normal(), rng.uniform(0.2, 3)}, gq{rng.normal(), rng.uniform(0.2, 3)};
    const KlComparison r = kl_factorization_check(a, gp, b, gq, 10000);
    CHECK(std::abs(r.joint_kl - r.sum_kl) < 1e-6);
  }
  // closed-form Gaussian KL against direct numeric integration
  const GaussianParams a{0.5, 0.7}, b{-0.2, 1.9};
  double num = 0.0;
  const int G = 200001;
  const double lo = -12, hi = 12, h = (hi - lo) / (G - 1);
  for (int n = 0; n < G; ++n) {
    const double x = lo + n * h;
    const double la = -0.5 * std::log(2 * std::numbers::pi * a.var) - 0.5 * (x - a.mean) * (x - a.mean) / a.var;
    const double lb = -0.5 * std::log(2 * std::numbers::pi * b.var) - 0.5 * (x - b.mean) * (x - b.mean) / b.var;
    num += std::exp(la) * (la - lb) * h;
  }
  CHECK(kl_gaussian(a, b) == doctest::Approx(num).epsilon(1e-8));
}
