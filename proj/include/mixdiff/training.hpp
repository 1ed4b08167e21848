#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mixdiff/autodiff.hpp"
#include "mixdiff/denoiser.hpp"
#include "mixdiff/mixed_diffusion.hpp"

namespace mixdiff {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // lr is multiplied by decay_factor every decay_interval steps; 0 disables.
  double decay_factor = 0.5;
  long decay_interval = 0;
};

class Adam {
 public:
  Adam() = default;
  Adam(AdamConfig cfg, const ad::ParamStore& params);

  void step(ad::ParamStore& params, const ad::Gradients& grads);
  double current_lr() const;
  long steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

  // Exposed for checkpointing.
  std::vector<RowMatrix>& first_moments() { return m_; }
  std::vector<RowMatrix>& second_moments() { return v_; }
  const std::vector<RowMatrix>& first_moments() const { return m_; }
  const std::vector<RowMatrix>& second_moments() const { return v_; }
  void set_steps(long t) { t_ = t; }

 private:
  AdamConfig cfg_;
  std::vector<RowMatrix> m_;
  std::vector<RowMatrix> v_;
  long t_ = 0;
};

// One optimisation step on a batch: t ~ U{1..T} per scene, joint corruption,
// denoiser pass, mixed loss, backward and Adam update. The batch is split
// into `threads` contiguous chunks evaluated concurrently. Throws
// TrainingDiverged on a non-finite loss, before touching the parameters.
MixedLossReport train_step(std::span<const EncodedScene* const> batch, Denoiser& net, Adam& opt, Rng& rng,
                           const MixedSchedule& sched, double lambda, int threads = 1);

// Loss and parameter gradient of one batch without updating anything.
// Dropout is off, so the result is a deterministic function of the
// parameters given `rng`.
MixedLossReport loss_and_gradient(std::span<const EncodedScene* const> batch, const Denoiser& net, Rng& rng,
                                  const MixedSchedule& sched, double lambda, ad::Gradients& grads,
                                  bool dropout = false);

struct TrainOptions {
  int batch_size = 64;
  long max_steps = 1000;
  double lambda = 0.05;
  std::uint64_t seed = 0;
  int threads = 1;
};

// Epoch-shuffled minibatch loop. The data order and every random draw of
// step s are pure functions of (seed, s), so resuming from a checkpoint at
// step s continues the exact same run.
class Trainer {
 public:
  Trainer(Denoiser& net, Adam& opt, const MixedSchedule& sched, TrainOptions opts,
          std::vector<EncodedScene> data);

  MixedLossReport step();
  long step_count() const { return opt_->steps(); }
  long steps_per_epoch() const;
  void run(const std::function<void(long step, const MixedLossReport&)>& on_step);

 private:
  std::vector<std::size_t> epoch_order(long epoch) const;

  Denoiser* net_;
  Adam* opt_;
  const MixedSchedule* sched_;
  TrainOptions opts_;
  std::vector<EncodedScene> data_;
  long cached_epoch_ = -1;
  std::vector<std::size_t> order_;
};

}  // namespace mixdiff
