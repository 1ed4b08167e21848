#pragma once

#include <cstdint>
#include <string>

#include "mixdiff/denoiser.hpp"
#include "mixdiff/mixed_diffusion.hpp"
#include "mixdiff/training.hpp"

namespace mixdiff {

// Every tunable of a run. Serialised as one flat JSON object; see README.
struct RunConfig {
  // dataset
  std::string room_type = "toy_dining";
  int count = 2000;
  double split_ratio = 0.9;
  bool rotate_aug = false;
  std::string data_dir = "data";

  // schedules
  int diffusion_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::string variance = "beta_tilde";
  double keep_start = 0.99999;
  double keep_end = 9e-6;
  double mask_start = 9e-6;
  double mask_end = 0.99999;

  DenoiserConfig model;

  // training
  int batch_size = 64;
  long max_steps = 1000;
  double lr = 2e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double lr_decay = 0.5;
  long lr_decay_interval = 0;
  double lambda = 0.05;
  long checkpoint_every = 0;
  long log_every = 1;

  // sampling
  int num_samples = 16;

  std::uint64_t seed = 0;
  int threads = 1;

  MixedSchedule schedule(int num_classes) const;
  AdamConfig adam() const;
  void validate() const;
};

}  // namespace mixdiff
