#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "mixdiff/errors.hpp"
#include "mixdiff/rng.hpp"
#include "mixdiff/toyrooms.hpp"
#include "mixdiff/training.hpp"

using namespace mixdiff;

namespace {

MixedSchedule toy_sched(int T = 200) {
  MixedSchedule m;
  m.continuous = ContinuousSchedule::linear(T, 1e-4 * 1000.0 / T, 0.02 * 1000.0 / T);
  m.discrete = DiscreteSchedule::mask_replace(T, 3, MaskReplaceParams{});
  return m;
}

struct Data {
  ToyDataset ds;
  std::vector<EncodedScene> enc;
};

Data toy_data(int count, std::uint64_t seed) {
  Data d{generate(ToyRoomSpec::named("toy_dining"), count, seed), {}};
  for (const auto& s : d.ds.scenes) d.enc.push_back(encode_scene(s, d.ds.vocab, d.ds.stats));
  return d;
}

bool params_equal(const Denoiser& a, const Denoiser& b) {
  for (std::size_t i = 0; i < a.params().count(); ++i) {
    if (a.params().value(i) != b.params().value(i)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("adam update against a hand computation") {
  ad::ParamStore p;
  p.add("w", RowMatrix::Constant(1, 2, 1.0));
  AdamConfig cfg;
  cfg.lr = 0.1;
  Adam opt(cfg, p);
  ad::Gradients g{RowMatrix(1, 2)};
  g[0] << 0.5, -2.0;
  opt.step(p, g);
  // first step: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps)
  CHECK(p.value(0)(0, 0) == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
  CHECK(p.value(0)(0, 1) == doctest::Approx(1.0 + 0.1 * 2.0 / (2.0 + 1e-8)).epsilon(1e-14));
  opt.step(p, g);
  CHECK(opt.steps() == 2);

  cfg.decay_interval = 10;
  Adam d(cfg, p);
  CHECK(d.current_lr() == 0.1);
  d.set_steps(25);
  CHECK(d.current_lr() == doctest::Approx(0.025));
  cfg.lr = -1;
  CHECK_THROWS_AS(Adam(cfg, p), InvalidInput);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const Data d = toy_data(8, 1);
  Denoiser net(DenoiserConfig{}, 3, d.ds.n_slots, 2);
  const Denoiser before = net;
  AdamConfig cfg;
  cfg.lr = 0.0;
  Adam opt(cfg, net.params());
  const auto sched = toy_sched();
  std::vector<const EncodedScene*> batch;
  for (const auto& e : d.enc) batch.push_back(&e);
  Rng rng(3);
  for (int i = 0; i < 3; ++i) {
    const MixedLossReport r = train_step(batch, net, opt, rng, sched, 0.05);
    CHECK(std::isfinite(r.total));
  }
  CHECK(params_equal(net, before));
}

TEST_CASE("training is reproducible and additive") {
  const Data d = toy_data(40, 4);
  const auto sched = toy_sched();
  TrainOptions opts;
  opts.batch_size = 16;
  opts.max_steps = 12;
  opts.seed = 5;
  std::vector<MixedLossReport> runs[2];
  Denoiser nets[2];
  for (int r = 0; r < 2; ++r) {
    nets[r] = Denoiser(DenoiserConfig{}, 3, d.ds.n_slots, 6);
    AdamConfig cfg;
    cfg.lr = 1e-3;
    Adam opt(cfg, nets[r].params());
    Trainer tr(nets[r], opt, sched, opts, d.enc);
    tr.run([&](long, const MixedLossReport& rep) { runs[r].push_back(rep); });
  }
  REQUIRE(runs[0].size() == 12);
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(runs[0][i].total == runs[1][i].total);
    CHECK(runs[0][i].total == runs[0][i].l_ddpm + runs[0][i].l_d3pm_vb + 0.05 * runs[0][i].l_d3pm_aux);
  }
  CHECK(params_equal(nets[0], nets[1]));
}

TEST_CASE("resuming continues the same run") {
  const Data d = toy_data(30, 7);
  const auto sched = toy_sched();
  TrainOptions opts;
  opts.batch_size = 8;
  opts.max_steps = 10;
  opts.seed = 8;
  AdamConfig cfg;
  cfg.lr = 1e-3;

  Denoiser straight(DenoiserConfig{}, 3, d.ds.n_slots, 9);
  Adam opt_s(cfg, straight.params());
  Trainer ts(straight, opt_s, sched, opts, d.enc);
  ts.run(nullptr);

  TrainOptions half = opts;
  half.max_steps = 6;
  Denoiser first(DenoiserConfig{}, 3, d.ds.n_slots, 9);
  Adam opt_f(cfg, first.params());
  Trainer tf(first, opt_f, sched, half, d.enc);
  tf.run(nullptr);
  Denoiser resumed = first;
  Adam opt_r = opt_f;
  Trainer tr(resumed, opt_r, sched, opts, d.enc);
  tr.run(nullptr);
  CHECK(opt_r.steps() == 10);
  CHECK(params_equal(resumed, straight));
}

TEST_CASE("divergence is reported before the update") {
  const Data d = toy_data(4, 14);
  Denoiser net(DenoiserConfig{}, 3, d.ds.n_slots, 15);
  net.params().value("head_geo.2.b")(0, 0) = std::numeric_limits<double>::infinity();
  const Denoiser before = net;
  Adam opt(AdamConfig{}, net.params());
  std::vector<const EncodedScene*> batch{&d.enc[0]};
  Rng rng(16);
  CHECK_THROWS_AS(train_step(batch, net, opt, rng, toy_sched(), 0.05), TrainingDiverged);
  CHECK(opt.steps() == 0);
  CHECK(net.params().value(0) == before.params().value(0));
}

TEST_CASE("overfitting a single scene") {
  const Data d = toy_data(1, 17);
  const auto sched = toy_sched();
  Denoiser net(DenoiserConfig{}, 3, d.ds.n_slots, 18);
  AdamConfig cfg;
  cfg.lr = 1e-3;
  Adam opt(cfg, net.params());
  std::vector<const EncodedScene*> batch(16, &d.enc[0]);
  double at10 = 0.0;
  std::vector<double> totals;
  for (int s = 0; s < 2000; ++s) {
    Rng rng = Rng::stream(19, static_cast<std::uint64_t>(s));
    const MixedLossReport r = train_step(batch, net, opt, rng, sched, 0.05);
    if (s == 10) at10 = r.total;
    totals.push_back(r.total);
  }
  // t is random per step, so the end of the run is summarised over its last 100 steps
  const double tail = std::accumulate(totals.end() - 100, totals.end(), 0.0) / 100.0;
  INFO("step-10 total ", at10, " final mean ", tail);
  CHECK(tail * 10.0 <= at10);
}
