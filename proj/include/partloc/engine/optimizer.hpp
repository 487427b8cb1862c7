#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "partloc/engine/tape.hpp"

namespace partloc::engine {

/// Piecewise-constant learning rate: stage i applies while
/// step < threshold_i; past the last threshold the last rate persists.
class LearningRateSchedule {
 public:
  struct Stage {
    std::int64_t until_step;
    double rate;
  };

  LearningRateSchedule() = default;
  explicit LearningRateSchedule(std::vector<Stage> stages);

  /// (10k, 5e-3), (80% of total, 2e-3), (total, 1e-3). Short runs compress
  /// the first boundary to half the budget so the thresholds stay increasing.
  static LearningRateSchedule standard(std::int64_t total_steps);

  double rate_at(std::int64_t step) const;
  const std::vector<Stage>& stages() const { return stages_; }

 private:
  std::vector<Stage> stages_;
};

template <typename T>
struct NamedParam {
  std::string name;
  Var<T> var;
};

/// Heavy-ball SGD: v <- m v + g, w <- w - lr(step) v.
template <typename T>
class SgdOptimizer {
 public:
  SgdOptimizer(LearningRateSchedule schedule, double momentum = 0.9);

  /// Applies one update to every trainable parameter, then clears gradients.
  void step(std::span<const NamedParam<T>> params);

  std::int64_t global_step() const { return step_; }
  void set_global_step(std::int64_t step) { step_ = step; }
  double momentum() const { return momentum_; }
  const LearningRateSchedule& schedule() const { return schedule_; }
  const std::map<std::string, std::vector<T>>& velocity() const { return velocity_; }

 private:
  LearningRateSchedule schedule_;
  double momentum_;
  std::map<std::string, std::vector<T>> velocity_;
  std::int64_t step_ = 0;
};

}  // namespace partloc::engine
