#pragma once

#include <vector>

#include "mixdiff/autodiff.hpp"

namespace mixdiff {

// (z_t, x_t) for every object slot at diffusion step t.
struct LatentScene {
  int t = 0;
  std::vector<int> z;  // N state indices, [MASK] allowed
  RowMatrix x;         // N x 8
};

}  // namespace mixdiff
