#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mixdiff/autodiff.hpp"
#include "mixdiff/latent.hpp"
#include "mixdiff/scene.hpp"

namespace mixdiff {

class Rng;

struct DenoiserConfig {
  int n_blocks = 2;
  int d_model = 64;
  int n_heads = 4;
  int d_ff = 128;
  int d_floor_feat = 32;
  int d_index_embed = 16;
  double dropout = 0.1;
  // Hidden widths of the geometry encoder MLP and the geometry head.
  std::vector<int> geo_hidden = {64, 128};
  // Per-point PointNet widths before max pooling.
  std::vector<int> pointnet_hidden = {32, 32, 64};

  // Full-size network: 8 blocks of width 512.
  static DenoiserConfig full_size();
  void validate() const;
  bool operator==(const DenoiserConfig&) const = default;
};

struct DenoiserOutput {
  RowMatrix logits_z0;  // N x K
  RowMatrix eps_hat;    // N x 8
};

// Inputs for a batch of B scenes sharing the slot count N.
struct DenoiserBatch {
  int n_slots = 0;
  std::vector<int> t;                     // B
  std::vector<int> z;                     // B * N
  RowMatrix x;                            // B * N x 8
  std::vector<const FloorPlan*> floors;   // B; unused when floor features are supplied

  int size() const { return static_cast<int>(t.size()); }
  void append(const LatentScene& latent, const FloorPlan* floor);
};

// Point-set encoder for the floor plan; four input channels per boundary
// sample: position and outward normal.
RowMatrix floor_point_features(const FloorPlan& floor);

RowMatrix sinusoidal_time_embedding(int t, int dim);

// Time-conditioned set transformer predicting clean-label logits and the
// Gaussian noise for every slot.
class Denoiser {
 public:
  Denoiser() = default;
  Denoiser(DenoiserConfig cfg, int num_classes, int n_slots, std::uint64_t seed);

  const DenoiserConfig& config() const { return cfg_; }
  int num_classes() const { return K_; }
  int num_states() const { return K_ + 1; }
  int n_slots() const { return N_; }

  ad::ParamStore& params() { return params_; }
  const ad::ParamStore& params() const { return params_; }

  // Closed-form parameter count for a configuration.
  static std::size_t parameter_count(const DenoiserConfig& cfg, int num_classes, int n_slots);

  // Evaluation-mode single-scene pass (no dropout, no gradient tape).
  DenoiserOutput forward(const LatentScene& latent, const FloorPlan& floor) const;
  // Evaluation-mode batch pass. `floor_feats` (B x d_floor_feat) skips the
  // PointNet when the floors do not change between calls.
  DenoiserOutput forward_batch(const DenoiserBatch& batch, const RowMatrix* floor_feats = nullptr) const;

  RowMatrix encode_objects(const LatentScene& latent) const;
  RowMatrix encode_floor(const FloorPlan& floor) const;  // 1 x d_floor_feat
  RowMatrix encode_floors(const std::vector<const FloorPlan*>& floors) const;
  RowMatrix build_condition(const RowMatrix& floor_feat, int n_slots) const;

  struct Graph {
    ad::Var logits;
    ad::Var eps_hat;
  };
  // Records the full network on `tape`. Dropout is active iff rng != null.
  Graph build(ad::Tape& tape, const DenoiserBatch& batch, Rng* dropout_rng,
              const RowMatrix* floor_feats = nullptr) const;

 private:
  struct Linear {
    int w = -1;
    int b = -1;
  };
  struct Block {
    Linear ada1_scale, ada1_shift, self_q, self_k, self_v, self_o;
    Linear ada2_scale, ada2_shift, cross_q, cross_k, cross_v, cross_o;
    int ln3_gain = -1, ln3_bias = -1;
    Linear ff0, ff1;
  };

  Linear add_linear(const std::string& name, int in, int out, Rng& rng, double init_scale = 1.0);
  ad::Var apply(ad::Tape& tape, const Linear& l, ad::Var x) const;
  ad::Var mlp(ad::Tape& tape, const std::vector<Linear>& layers, ad::Var x) const;
  ad::Var floor_graph(ad::Tape& tape, const std::vector<const FloorPlan*>& floors) const;
  ad::Var object_graph(ad::Tape& tape, const std::vector<int>& z, const RowMatrix& x) const;

  DenoiserConfig cfg_;
  int K_ = 0;
  int N_ = 0;
  ad::ParamStore params_;
  int sem_embed_ = -1;
  int index_embed_ = -1;
  std::vector<Linear> geo_mlp_;
  std::vector<Linear> pointnet_;
  Linear floor_out_;
  Linear time_mlp_;
  std::vector<Block> blocks_;
  int final_gain_ = -1, final_bias_ = -1;
  Linear head_label_;
  std::vector<Linear> head_geo_;
};

// One recorded training evaluation. backward() may be called once, after
// forward().
class DenoiserPass {
 public:
  explicit DenoiserPass(const Denoiser& net) : net_(&net) {}

  void forward(const DenoiserBatch& batch, Rng* dropout_rng);
  const RowMatrix& logits() const;
  const RowMatrix& eps_hat() const;
  // Throws InvalidState when no forward pass is pending.
  void backward(const RowMatrix& dlogits, const RowMatrix& deps, ad::Gradients& grads);

 private:
  const Denoiser* net_;
  std::optional<ad::Tape> tape_;
  Denoiser::Graph graph_;
  bool pending_ = false;
};

}  // namespace mixdiff
