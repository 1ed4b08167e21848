#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mixdiff/denoiser.hpp"
#include "mixdiff/mixed_diffusion.hpp"
#include "mixdiff/scene.hpp"

namespace mixdiff {

class Rng;

// Known values for one slot. Geometry is given in raw units (metres, unit
// angle pair) and only the coordinates flagged in geom_known are pinned.
struct SlotMask {
  std::optional<int> label;
  std::array<bool, kGeomDim> geom_known{};
  GeomVec geom = GeomVec::Zero();

  bool constrained() const;
};

struct MaskSpec {
  std::vector<SlotMask> slots;  // index = slot; missing slots are free

  bool empty() const;
  // Every attribute of the first objs.size() slots.
  static MaskSpec completion(const std::vector<ObjectInstance>& objs);
  // Labels and sizes of the listed objects; the remaining slots up to
  // n_slots are pinned to the empty label.
  static MaskSpec arrangement(const std::vector<ObjectInstance>& objs, int n_slots, int empty_label);
  // Labels only.
  static MaskSpec labels(const std::vector<int>& labels);

  // Throws InvalidInput when a pinned value breaks the object invariants.
  void validate(const LabelVocab& vocab, int n_slots) const;
};

// Forward-corrupted copies of the pinned values for t = 0..T, produced by
// running the one-step kernels. z[t][slot] is -1 for free slots.
struct Trajectory {
  std::vector<std::vector<int>> z;
  std::vector<RowMatrix> x;    // [t] N x 8, encoded
  std::vector<RowMatrix> eps;  // [t] N x 8, Gaussian draws of step t (eps[0] unused)
};

struct SamplingContext {
  const MixedSchedule* sched = nullptr;
  const LabelVocab* vocab = nullptr;
  const NormStats* stats = nullptr;
};

Trajectory precompute_trajectory(const MaskSpec& mask, int n_slots, const SamplingContext& ctx, Rng& rng);

// Any function mapping a batch of latents to denoiser outputs. Batches
// passed by the sampler keep the floor order given to sample_batch.
using Predictor = std::function<DenoiserOutput(const DenoiserBatch&)>;

// Wraps a network, computing the floor features once.
Predictor make_predictor(const Denoiser& net, const std::vector<const FloorPlan*>& floors);

// Reverse chain for several scenes in lockstep. Each scene consumes only
// its own stream, so batching changes outputs at rounding level at most
// (matrix products of different heights round differently).
// `masks` is either empty or holds one (possibly null) entry per floor.
std::vector<SceneLayout> sample_batch(const Predictor& predict, const std::vector<const FloorPlan*>& floors,
                                      int n_slots, const SamplingContext& ctx, std::vector<Rng>& rngs,
                                      const std::vector<const MaskSpec*>& masks = {},
                                      const std::string& room_type = "");

SceneLayout sample_scene(const Denoiser& net, const FloorPlan& floor, int n_slots, const SamplingContext& ctx,
                         Rng& rng, const std::string& room_type = "");

SceneLayout sample_with_constraints(const Denoiser& net, const FloorPlan& floor, int n_slots,
                                    const MaskSpec& mask, const SamplingContext& ctx, Rng& rng,
                                    const std::string& room_type = "");

// Samples many floors using `threads` workers; scene i uses
// Rng::stream(seed, i). Chunks of max_batch are fixed by position, so the
// thread count never changes the output.
std::vector<SceneLayout> sample_many(const Denoiser& net, const std::vector<const FloorPlan*>& floors,
                                     int n_slots, const SamplingContext& ctx, std::uint64_t seed, int threads,
                                     const MaskSpec* mask = nullptr, const std::string& room_type = "",
                                     int max_batch = 64);

}  // namespace mixdiff
