#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "mixdiff/errors.hpp"
#include "mixdiff/rng.hpp"
#include "mixdiff/sampler.hpp"
#include "mixdiff/toyrooms.hpp"

using namespace mixdiff;

namespace {

struct Fixture {
  ToyDataset ds = generate(ToyRoomSpec::named("toy_dining"), 6, 1);
  MixedSchedule sched;
  Denoiser net;
  SamplingContext ctx;

  explicit Fixture(int T = 40) {
    sched.continuous = ContinuousSchedule::linear(T, 1e-4 * 1000.0 / T, std::min(0.5, 0.02 * 1000.0 / T));
    sched.discrete = DiscreteSchedule::mask_replace(T, 3, MaskReplaceParams{});
    net = Denoiser(DenoiserConfig{}, 3, ds.n_slots, 2);
    ctx = {&sched, &ds.vocab, &ds.stats};
  }
};

std::vector<ObjectInstance> nonempty(const SceneLayout& s, int empty) {
  std::vector<ObjectInstance> out;
  for (const auto& o : s.objects) {
    if (o.label != empty) out.push_back(o);
  }
  return out;
}

void check_constraints(const SceneLayout& out, const MaskSpec& mask) {
  for (std::size_t i = 0; i < mask.slots.size(); ++i) {
    const SlotMask& m = mask.slots[i];
    const ObjectInstance& o = out.objects[i];
    if (m.label) CHECK(o.label == *m.label);
    GeomVec g;
    g << o.pos, o.size, o.angle;
    for (int j = 0; j < kGeomDim; ++j) {
      if (m.geom_known[static_cast<std::size_t>(j)]) CHECK(std::abs(g(j) - m.geom(j)) <= 1e-6);
    }
  }
}

}  // namespace

TEST_CASE("mask validation") {
  Fixture f;
  const auto& v = f.ds.vocab;
  MaskSpec m = MaskSpec::labels({0, 7});
  CHECK_THROWS_AS(m.validate(v, 8), InvalidInput);
  m = MaskSpec::completion({ObjectInstance::make(0, Vec3(0, 0, 0.3), Vec3(0.5, 0.5, 0.3), 0.0)});
  CHECK_NOTHROW(m.validate(v, 8));
  m.slots[0].geom(3) = -0.1;
  CHECK_THROWS_AS(m.validate(v, 8), InvalidInput);
  m = MaskSpec::completion({ObjectInstance::make(0, Vec3(0, 0, 0.3), Vec3(0.5, 0.5, 0.3), 0.0)});
  m.slots[0].geom_known[7] = false;
  CHECK_THROWS_AS(m.validate(v, 8), InvalidInput);
  m.slots[0].geom_known[7] = true;
  m.slots[0].geom(6) = 2.0;
  CHECK_THROWS_AS(m.validate(v, 8), InvalidInput);
  SlotMask e;
  e.label = v.empty_index();
  e.geom_known[0] = true;
  e.geom(0) = 1.0;
  CHECK_THROWS_AS(MaskSpec{{e}}.validate(v, 8), InvalidInput);
  CHECK_THROWS_AS(MaskSpec::labels(std::vector<int>(9, 0)).validate(v, 8), InvalidInput);
  CHECK(MaskSpec{}.empty());
  CHECK(MaskSpec{{SlotMask{}}}.empty());
}

TEST_CASE("trajectory endpoints and an identity label schedule") {
  Fixture f;
  const auto objs = nonempty(f.ds.scenes[0], f.ds.vocab.empty_index());
  const MaskSpec m = MaskSpec::completion(objs);
  Rng rng(3);
  const Trajectory tr = precompute_trajectory(m, f.ds.n_slots, f.ctx, rng);
  REQUIRE(tr.z.size() == 41);
  for (std::size_t i = 0; i < objs.size(); ++i) {
    CHECK(tr.z[0][i] == objs[i].label);
    GeomVec raw;
    raw << objs[i].pos, objs[i].size, objs[i].angle;
    const GeomVec enc = (raw - f.ds.stats.offset).cwiseQuotient(f.ds.stats.scale);
    CHECK(tr.x[0].row(static_cast<Eigen::Index>(i)) == enc.transpose());
  }
  for (std::size_t i = objs.size(); i < 8; ++i) CHECK(tr.z[40][i] == -1);
  // recorded eps reproduce each one-step transition
  for (int t = 1; t <= 40; ++t) {
    const auto ti = static_cast<std::size_t>(t);
    const RowMatrix expect = std::sqrt(f.sched.continuous.alpha(t)) * tr.x[ti - 1].topRows(static_cast<Eigen::Index>(objs.size())) +
                             std::sqrt(f.sched.continuous.beta(t)) * tr.eps[ti].topRows(static_cast<Eigen::Index>(objs.size()));
    CHECK((tr.x[ti].topRows(static_cast<Eigen::Index>(objs.size())) - expect).cwiseAbs().maxCoeff() < 1e-15);
  }

  MixedSchedule id = f.sched;
  id.discrete = DiscreteSchedule::from_rates(3, std::vector<TransitionRates>(40, TransitionRates{}));
  const SamplingContext ctx{&id, &f.ds.vocab, &f.ds.stats};
  const Trajectory ti = precompute_trajectory(m, f.ds.n_slots, ctx, rng);
  for (int t = 0; t <= 40; ++t) {
    for (std::size_t i = 0; i < objs.size(); ++i) CHECK(ti.z[static_cast<std::size_t>(t)][i] == objs[i].label);
  }
}

TEST_CASE("trajectory marginals over reruns") {
  Fixture f(20);
  const MaskSpec m = MaskSpec::labels({1});
  const int reps = 10000;
  std::vector<std::vector<int>> counts(21, std::vector<int>(4, 0));
  Rng rng(4);
  for (int r = 0; r < reps; ++r) {
    const Trajectory tr = precompute_trajectory(m, 8, f.ctx, rng);
    for (int t = 0; t <= 20; ++t) ++counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(tr.z[static_cast<std::size_t>(t)][0])];
  }
  for (int t : {1, 5, 10, 15, 20}) {
    for (int s = 0; s < 4; ++s) {
      const double p = f.sched.discrete.Q_bar(t)(s, 1);
      const double freq = static_cast<double>(counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(s)]) / reps;
      CHECK(std::abs(freq - p) <= 3.0 * std::sqrt(p * (1 - p) / reps) + 1e-12);
    }
  }
}

TEST_CASE("sampling determinism and batching independence") {
  Fixture f;
  const FloorPlan& floor = f.ds.scenes[0].floor;
  Rng a(5), b(5);
  const SceneLayout s1 = sample_scene(f.net, floor, 8, f.ctx, a);
  const SceneLayout s2 = sample_scene(f.net, floor, 8, f.ctx, b);
  CHECK(s1.objects == s2.objects);
  CHECK(s1.objects.size() == 8);
  for (const auto& o : s1.objects) CHECK_NOTHROW(validate_object(o, f.ds.vocab));
  CHECK(a.next_u64() == b.next_u64());

  std::vector<const FloorPlan*> floors;
  for (const auto& s : f.ds.scenes) floors.push_back(&s.floor);
  const auto one = sample_many(f.net, floors, 8, f.ctx, 6, 1, nullptr, "", 1);
  const auto big = sample_many(f.net, floors, 8, f.ctx, 6, 1, nullptr, "", 64);
  const auto two = sample_many(f.net, floors, 8, f.ctx, 6, 1, nullptr, "", 2);
  const auto thr = sample_many(f.net, floors, 8, f.ctx, 6, 3, nullptr, "", 2);
  for (std::size_t i = 0; i < floors.size(); ++i) {
    CHECK(two[i].objects == thr[i].objects);
    REQUIRE(one[i].objects.size() == big[i].objects.size());
    for (std::size_t j = 0; j < one[i].objects.size(); ++j) {
      const ObjectInstance& a = one[i].objects[j];
      const ObjectInstance& b = big[i].objects[j];
      CHECK(a.label == b.label);
      CHECK((a.pos - b.pos).norm() <= 1e-9 * (1.0 + a.pos.norm()));
      CHECK((a.size - b.size).norm() <= 1e-9 * (1.0 + a.size.norm()));
    }
  }
  Rng c = Rng::stream(6, 2);
  CHECK(sample_scene(f.net, *floors[2], 8, f.ctx, c).objects == one[2].objects);
}

TEST_CASE("oracle denoiser inverts a recorded corruption") {
  Fixture f(200);
  const std::size_t B = f.ds.scenes.size();
  std::vector<EncodedScene> enc;
  std::vector<const FloorPlan*> floors;
  for (const auto& s : f.ds.scenes) {
    enc.push_back(encode_scene(s, f.ds.vocab, f.ds.stats));
    floors.push_back(&s.floor);
  }
  const auto& cs = f.sched.continuous;
  const Predictor oracle = [&](const DenoiserBatch& batch) {
    DenoiserOutput out;
    const int N = batch.n_slots;
    out.logits_z0 = RowMatrix::Zero(batch.x.rows(), 3);
    out.eps_hat = RowMatrix(batch.x.rows(), 8);
    for (int b = 0; b < batch.size(); ++b) {
      const int t = batch.t[static_cast<std::size_t>(b)];
      const double ab = cs.alpha_bar(t);
      for (int i = 0; i < N; ++i) {
        const Eigen::Index r = b * N + i;
        out.logits_z0(r, enc[static_cast<std::size_t>(b)].z0[static_cast<std::size_t>(i)]) = 30.0;
        out.eps_hat.row(r) = (batch.x.row(r) - std::sqrt(ab) * enc[static_cast<std::size_t>(b)].x0.row(i)) / std::sqrt(1 - ab);
      }
    }
    return out;
  };
  std::vector<Rng> rngs;
  for (std::size_t b = 0; b < B; ++b) rngs.push_back(Rng::stream(7, b));
  const auto out = sample_batch(oracle, floors, 8, f.ctx, rngs);
  for (std::size_t b = 0; b < B; ++b) {
    const SceneLayout& src = f.ds.scenes[b];
    for (std::size_t i = 0; i < 8; ++i) {
      const ObjectInstance& o = out[b].objects[i];
      const ObjectInstance& e = src.objects[i];
      CHECK(o.label == e.label);
      CHECK((o.pos - e.pos).cwiseAbs().maxCoeff() < 1e-4);
      CHECK((o.size - e.size).cwiseAbs().maxCoeff() < 1e-4);
      CHECK((o.angle - e.angle).cwiseAbs().maxCoeff() < 1e-4);
    }
  }
}

TEST_CASE("an empty mask consumes randomness like the free sampler") {
  Fixture f;
  const FloorPlan& floor = f.ds.scenes[1].floor;
  Rng a(8), b(8), c(8);
  const SceneLayout free = sample_scene(f.net, floor, 8, f.ctx, a);
  const SceneLayout none = sample_with_constraints(f.net, floor, 8, MaskSpec{}, f.ctx, b);
  MaskSpec unconstrained;
  unconstrained.slots.resize(3);
  const SceneLayout blank = sample_with_constraints(f.net, floor, 8, unconstrained, f.ctx, c);
  CHECK(free.objects == none.objects);
  CHECK(free.objects == blank.objects);
}

TEST_CASE("full completion returns the constraint scene") {
  Fixture f;
  const SceneLayout& src = f.ds.scenes[2];
  const MaskSpec m = MaskSpec::completion(src.objects);
  Rng rng(9);
  const SceneLayout out = sample_with_constraints(f.net, src.floor, 8, m, f.ctx, rng);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(out.objects[i].label == src.objects[i].label);
    CHECK((out.objects[i].pos - src.objects[i].pos).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((out.objects[i].size - src.objects[i].size).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((out.objects[i].angle - src.objects[i].angle).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("partial constraints hold exactly") {
  Fixture f;
  const int empty = f.ds.vocab.empty_index();
  for (std::size_t k = 0; k < f.ds.scenes.size(); ++k) {
    const SceneLayout& src = f.ds.scenes[k];
    const auto objs = nonempty(src, empty);
    for (std::size_t M : {std::size_t{1}, std::size_t{3}}) {
      const MaskSpec m = MaskSpec::completion({objs.begin(), objs.begin() + static_cast<std::ptrdiff_t>(std::min(M, objs.size()))});
      Rng rng = Rng::stream(10, k * 10 + M);
      check_constraints(sample_with_constraints(f.net, src.floor, 8, m, f.ctx, rng), m);
    }
    const MaskSpec arr = MaskSpec::arrangement(objs, 8, empty);
    Rng rng = Rng::stream(11, k);
    check_constraints(sample_with_constraints(f.net, src.floor, 8, arr, f.ctx, rng), arr);
  }
}

TEST_CASE("arrangement varies positions across seeds") {
  Fixture f;
  const SceneLayout& src = f.ds.scenes[3];
  const auto objs = nonempty(src, f.ds.vocab.empty_index());
  const MaskSpec arr = MaskSpec::arrangement(objs, 8, f.ds.vocab.empty_index());
  std::set<std::vector<double>> outcomes;
  for (std::uint64_t s = 0; s < 10; ++s) {
    Rng rng(100 + s);
    const SceneLayout out = sample_with_constraints(f.net, src.floor, 8, arr, f.ctx, rng);
    check_constraints(out, arr);
    std::vector<double> key;
    for (std::size_t i = 0; i < objs.size(); ++i) {
      key.push_back(out.objects[i].pos.x());
      key.push_back(out.objects[i].pos.y());
      key.push_back(out.objects[i].angle.x());
    }
    outcomes.insert(key);
  }
  CHECK(outcomes.size() >= 2);
}
