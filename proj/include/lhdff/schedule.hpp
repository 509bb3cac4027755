#pragma once

#include <cstdint>

namespace lhdff {

struct LrSchedule {
  double base_lr = 5e-4;
  int warmup_epochs = 5;
  int decay_every = 10;
  double decay_factor = 0.1;
};

// Per-step linear warmup to base_lr over the warmup epochs, then a plateau at
// base_lr with step decays anchored at epoch multiples of decay_every
// (epochs 10, 20, ... under the defaults; 0-based epochs).
double lr_at(const LrSchedule& sched, int epoch, int64_t step_within_epoch,
             int64_t steps_per_epoch);

}  // namespace lhdff
