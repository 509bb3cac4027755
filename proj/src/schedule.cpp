#include "lhdff/schedule.hpp"

#include <cmath>

#include "lhdff/common.hpp"

namespace lhdff {

double lr_at(const LrSchedule& sched, int epoch, int64_t step_within_epoch,
             int64_t steps_per_epoch) {
  require<ConfigError>(epoch >= 0 && step_within_epoch >= 0 && steps_per_epoch >= 1 &&
                           step_within_epoch < steps_per_epoch,
                       "lr_at: invalid step indices");
  if (epoch < sched.warmup_epochs) {
    int64_t global_step = static_cast<int64_t>(epoch) * steps_per_epoch + step_within_epoch;
    int64_t warmup_steps = static_cast<int64_t>(sched.warmup_epochs) * steps_per_epoch;
    return sched.base_lr * static_cast<double>(global_step + 1) /
           static_cast<double>(warmup_steps);
  }
  int decays = epoch / sched.decay_every;
  return sched.base_lr * std::pow(sched.decay_factor, decays);
}

}  // namespace lhdff
