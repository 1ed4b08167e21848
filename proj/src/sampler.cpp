#include "mixdiff/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <thread>

#include "mixdiff/errors.hpp"
#include "mixdiff/rng.hpp"

namespace mixdiff {

bool SlotMask::constrained() const {
  return label.has_value() || std::any_of(geom_known.begin(), geom_known.end(), [](bool b) { return b; });
}

bool MaskSpec::empty() const {
  return std::none_of(slots.begin(), slots.end(), [](const SlotMask& s) { return s.constrained(); });
}

MaskSpec MaskSpec::completion(const std::vector<ObjectInstance>& objs) {
  MaskSpec m;
  for (const auto& o : objs) {
    SlotMask s;
    s.label = o.label;
    s.geom_known.fill(true);
    s.geom << o.pos, o.size, o.angle;
    m.slots.push_back(s);
  }
  return m;
}

MaskSpec MaskSpec::arrangement(const std::vector<ObjectInstance>& objs, int n_slots, int empty_label) {
  MaskSpec m;
  for (const auto& o : objs) {
    SlotMask s;
    s.label = o.label;
    for (int j = 3; j < 6; ++j) s.geom_known[static_cast<std::size_t>(j)] = true;
    s.geom.segment<3>(3) = o.size;
    m.slots.push_back(s);
  }
  while (static_cast<int>(m.slots.size()) < n_slots) {
    SlotMask s;
    s.label = empty_label;
    m.slots.push_back(s);
  }
  return m;
}

MaskSpec MaskSpec::labels(const std::vector<int>& labels) {
  MaskSpec m;
  for (int l : labels) {
    SlotMask s;
    s.label = l;
    m.slots.push_back(s);
  }
  return m;
}

void MaskSpec::validate(const LabelVocab& vocab, int n_slots) const {
  if (static_cast<int>(slots.size()) > n_slots) throw InvalidInput("constraints address more slots than available");
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const SlotMask& s = slots[i];
    const std::string where = "slot " + std::to_string(i) + ": ";
    if (s.label && (*s.label < 0 || *s.label >= vocab.num_labels())) {
      throw InvalidInput(where + "constrained label out of range");
    }
    if (!s.geom.allFinite()) throw InvalidInput(where + "non-finite constraint");
    const bool is_empty = s.label && *s.label == vocab.empty_index();
    for (int j = 0; j < kGeomDim; ++j) {
      if (is_empty && s.geom_known[static_cast<std::size_t>(j)] && s.geom(j) != 0.0) {
        throw InvalidInput(where + "empty slots have zero geometry");
      }
    }
    if (!is_empty) {
      for (int j = 3; j < 6; ++j) {
        if (s.geom_known[static_cast<std::size_t>(j)] && !(s.geom(j) > 0.0)) {
          throw InvalidInput(where + "half-extents must be positive");
        }
      }
      if (s.geom_known[6] != s.geom_known[7]) throw InvalidInput(where + "angle pair must be pinned together");
      if (s.geom_known[6] && std::abs(s.geom.segment<2>(6).norm() - 1.0) > 1e-6) {
        throw InvalidInput(where + "angle pair must be unit length");
      }
    }
  }
}

Trajectory precompute_trajectory(const MaskSpec& mask, int n_slots, const SamplingContext& ctx, Rng& rng) {
  const MixedSchedule& sched = *ctx.sched;
  const int T = sched.steps();
  mask.validate(*ctx.vocab, n_slots);
  Trajectory tr;
  tr.z.assign(static_cast<std::size_t>(T + 1), std::vector<int>(static_cast<std::size_t>(n_slots), -1));
  tr.x.assign(static_cast<std::size_t>(T + 1), RowMatrix::Zero(n_slots, kGeomDim));
  tr.eps.assign(static_cast<std::size_t>(T + 1), RowMatrix::Zero(n_slots, kGeomDim));
  for (std::size_t i = 0; i < mask.slots.size(); ++i) {
    const SlotMask& s = mask.slots[i];
    const auto r = static_cast<Eigen::Index>(i);
    if (s.label) tr.z[0][i] = *s.label;
    const GeomVec enc = (s.geom - ctx.stats->offset).cwiseQuotient(ctx.stats->scale);
    for (int j = 0; j < kGeomDim; ++j) {
      if (s.geom_known[static_cast<std::size_t>(j)]) tr.x[0](r, j) = enc(j);
    }
  }
  for (int t = 1; t <= T; ++t) {
    const auto ti = static_cast<std::size_t>(t);
    const Eigen::MatrixXd& q = sched.discrete.Q(t);
    const double sa = std::sqrt(sched.continuous.alpha(t));
    const double sb = std::sqrt(sched.continuous.beta(t));
    for (std::size_t i = 0; i < mask.slots.size(); ++i) {
      const SlotMask& s = mask.slots[i];
      const auto r = static_cast<Eigen::Index>(i);
      if (s.label) {
        tr.z[ti][i] = sample_categorical(Eigen::VectorXd(q.col(tr.z[ti - 1][i])), rng.uniform());
      }
      for (int j = 0; j < kGeomDim; ++j) {
        if (!s.geom_known[static_cast<std::size_t>(j)]) continue;
        const double e = rng.normal();
        tr.eps[ti](r, j) = e;
        tr.x[ti](r, j) = sa * tr.x[ti - 1](r, j) + sb * e;
      }
    }
  }
  return tr;
}

Predictor make_predictor(const Denoiser& net, const std::vector<const FloorPlan*>& floors) {
  auto feats = std::make_shared<RowMatrix>(net.encode_floors(floors));
  return [&net, feats](const DenoiserBatch& batch) { return net.forward_batch(batch, feats.get()); };
}

namespace {

void apply_mask(const MaskSpec& mask, const Trajectory& tr, int t, std::vector<int>& z, RowMatrix& x,
                Eigen::Index row0) {
  const auto ti = static_cast<std::size_t>(t);
  for (std::size_t i = 0; i < mask.slots.size(); ++i) {
    const SlotMask& s = mask.slots[i];
    const Eigen::Index r = row0 + static_cast<Eigen::Index>(i);
    if (s.label) z[static_cast<std::size_t>(r)] = tr.z[ti][i];
    for (int j = 0; j < kGeomDim; ++j) {
      if (s.geom_known[static_cast<std::size_t>(j)]) x(r, j) = tr.x[ti](static_cast<Eigen::Index>(i), j);
    }
  }
}

}  // namespace

std::vector<SceneLayout> sample_batch(const Predictor& predict, const std::vector<const FloorPlan*>& floors,
                                      int n_slots, const SamplingContext& ctx, std::vector<Rng>& rngs,
                                      const std::vector<const MaskSpec*>& masks, const std::string& room_type) {
  const MixedSchedule& sched = *ctx.sched;
  const int T = sched.steps();
  const int B = static_cast<int>(floors.size());
  const int N = n_slots;
  const int K = sched.discrete.num_classes();
  if (static_cast<int>(rngs.size()) != B) throw InvalidInput("one random stream per scene required");
  if (!masks.empty() && static_cast<int>(masks.size()) != B) throw InvalidInput("one mask entry per scene required");
  if (K != ctx.vocab->num_labels()) throw InvalidInput("schedule and vocabulary disagree on the label count");

  // Trajectory streams are split off first so constrained and free runs
  // consume the scene streams identically.
  std::vector<std::optional<Trajectory>> traj(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    Rng traj_rng(rngs[static_cast<std::size_t>(b)].next_u64());
    const MaskSpec* m = masks.empty() ? nullptr : masks[static_cast<std::size_t>(b)];
    if (m && !m->empty()) traj[static_cast<std::size_t>(b)] = precompute_trajectory(*m, N, ctx, traj_rng);
  }

  DenoiserBatch batch;
  batch.n_slots = N;
  batch.t.assign(static_cast<std::size_t>(B), T);
  batch.z.assign(static_cast<std::size_t>(B * N), sched.discrete.mask_state());
  batch.x.resize(B * N, kGeomDim);
  batch.floors = floors;
  const Eigen::VectorXd prior = sched.discrete.prior();
  for (int b = 0; b < B; ++b) {
    Rng& rng = rngs[static_cast<std::size_t>(b)];
    for (int i = 0; i < N; ++i) {
      batch.z[static_cast<std::size_t>(b * N + i)] = sample_categorical(prior, rng.uniform());
      for (int j = 0; j < kGeomDim; ++j) batch.x(b * N + i, j) = rng.normal();
    }
    if (traj[static_cast<std::size_t>(b)]) {
      apply_mask(*masks[static_cast<std::size_t>(b)], *traj[static_cast<std::size_t>(b)], T, batch.z, batch.x, b * N);
    }
  }

  Eigen::VectorXd noise(kGeomDim);
  for (int t = T; t >= 1; --t) {
    std::fill(batch.t.begin(), batch.t.end(), t);
    const DenoiserOutput out = predict(batch);
    for (int b = 0; b < B; ++b) {
      Rng& rng = rngs[static_cast<std::size_t>(b)];
      for (int i = 0; i < N; ++i) {
        const Eigen::Index r = b * N + i;
        const auto ri = static_cast<std::size_t>(r);
        const Eigen::VectorXd logits = out.logits_z0.row(r).transpose();
        const double u = rng.uniform();
        if (t >= 2) {
          batch.z[ri] = sample_categorical(reverse_discrete(batch.z[ri], logits, t, sched.discrete), u);
        } else {
          batch.z[ri] = sample_categorical(softmax(logits), u);
        }
        for (int j = 0; j < kGeomDim; ++j) noise(j) = rng.normal();
        const Eigen::VectorXd xt = batch.x.row(r).transpose();
        batch.x.row(r) = reverse_step(xt, out.eps_hat.row(r).transpose(), t, noise, sched.continuous,
                                      sched.variance)
                             .transpose();
      }
      if (traj[static_cast<std::size_t>(b)]) {
        apply_mask(*masks[static_cast<std::size_t>(b)], *traj[static_cast<std::size_t>(b)], t - 1, batch.z, batch.x,
                   b * N);
      }
    }
  }

  std::vector<SceneLayout> scenes;
  scenes.reserve(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    SceneLayout s;
    s.floor = *floors[static_cast<std::size_t>(b)];
    s.room_type = room_type;
    for (int i = 0; i < N; ++i) {
      const Eigen::Index r = b * N + i;
      const GeomVec v = batch.x.row(r).transpose();
      s.objects.push_back(decode_object(v, batch.z[static_cast<std::size_t>(r)], *ctx.vocab, *ctx.stats));
    }
    scenes.push_back(canonicalize(s, ctx.vocab->empty_index()));
  }
  return scenes;
}

SceneLayout sample_with_constraints(const Denoiser& net, const FloorPlan& floor, int n_slots, const MaskSpec& mask,
                                    const SamplingContext& ctx, Rng& rng, const std::string& room_type) {
  const std::vector<const FloorPlan*> floors{&floor};
  std::vector<Rng> rngs{rng};
  auto out = sample_batch(make_predictor(net, floors), floors, n_slots, ctx, rngs, {&mask}, room_type);
  rng = rngs.front();
  return out.front();
}

SceneLayout sample_scene(const Denoiser& net, const FloorPlan& floor, int n_slots, const SamplingContext& ctx,
                         Rng& rng, const std::string& room_type) {
  const std::vector<const FloorPlan*> floors{&floor};
  std::vector<Rng> rngs{rng};
  auto out = sample_batch(make_predictor(net, floors), floors, n_slots, ctx, rngs, {}, room_type);
  rng = rngs.front();
  return out.front();
}

std::vector<SceneLayout> sample_many(const Denoiser& net, const std::vector<const FloorPlan*>& floors, int n_slots,
                                     const SamplingContext& ctx, std::uint64_t seed, int threads,
                                     const MaskSpec* mask, const std::string& room_type, int max_batch) {
  const int n = static_cast<int>(floors.size());
  std::vector<SceneLayout> out(static_cast<std::size_t>(n));
  if (n == 0) return out;
  const int per = std::max(1, max_batch);
  std::vector<std::pair<int, int>> chunks;
  for (int lo = 0; lo < n; lo += per) chunks.emplace_back(lo, std::min(n, lo + per));
  auto run = [&](std::size_t c) {
    const auto [lo, hi] = chunks[c];
    std::vector<const FloorPlan*> f(floors.begin() + lo, floors.begin() + hi);
    std::vector<Rng> rngs;
    std::vector<const MaskSpec*> masks;
    for (int i = lo; i < hi; ++i) {
      rngs.push_back(Rng::stream(seed, static_cast<std::uint64_t>(i)));
      if (mask) masks.push_back(mask);
    }
    auto res = sample_batch(make_predictor(net, f), f, n_slots, ctx, rngs, masks, room_type);
    for (int i = lo; i < hi; ++i) out[static_cast<std::size_t>(i)] = std::move(res[static_cast<std::size_t>(i - lo)]);
  };
  const int workers = std::clamp(threads, 1, static_cast<int>(chunks.size()));
  if (workers == 1) {
    for (std::size_t c = 0; c < chunks.size(); ++c) run(c);
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t c = static_cast<std::size_t>(w); c < chunks.size(); c += static_cast<std::size_t>(workers)) run(c);
      });
    }
  }
  return out;
}

}  // namespace mixdiff
