#include "partloc/engine/optimizer.hpp"

#include <algorithm>

namespace partloc::engine {

LearningRateSchedule::LearningRateSchedule(std::vector<Stage> stages)
    : stages_(std::move(stages)) {
  if (stages_.empty()) throw ConfigError("learning-rate schedule needs at least one stage");
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    if (!(stages_[i].rate >= 0.0)) {
      throw ConfigError("learning-rate schedule: rates must be non-negative");
    }
    if (i > 0 && stages_[i].until_step <= stages_[i - 1].until_step) {
      throw ConfigError("learning-rate schedule: step thresholds must be strictly increasing");
    }
  }
}

LearningRateSchedule LearningRateSchedule::standard(std::int64_t total_steps) {
  const std::int64_t total = std::max<std::int64_t>(total_steps, 3);
  const std::int64_t late = std::max<std::int64_t>(total * 8 / 10, 2);
  const std::int64_t early = std::min<std::int64_t>(10000, std::max<std::int64_t>(1, total / 2));
  std::vector<Stage> stages{{std::min(early, late - 1), 5e-3}, {late, 2e-3}, {total, 1e-3}};
  if (late >= total) stages.pop_back();
  return LearningRateSchedule(std::move(stages));
}

double LearningRateSchedule::rate_at(std::int64_t step) const {
  for (const auto& stage : stages_) {
    if (step < stage.until_step) return stage.rate;
  }
  return stages_.back().rate;
}

template <typename T>
SgdOptimizer<T>::SgdOptimizer(LearningRateSchedule schedule, double momentum)
    : schedule_(std::move(schedule)), momentum_(momentum) {
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError("momentum must lie in [0, 1)");
  }
}

template <typename T>
void SgdOptimizer<T>::step(std::span<const NamedParam<T>> params) {
  for (const auto& p : params) {
    if (p.var->requires_grad && !p.var->tensor.has_grad()) {
      throw OptimizerError("parameter '" + p.name + "' has no gradient; run backward first");
    }
  }
  const T rate = static_cast<T>(schedule_.rate_at(step_));
  const T m = static_cast<T>(momentum_);
  for (const auto& p : params) {
    if (!p.var->requires_grad) continue;
    auto& tensor = p.var->tensor;
    auto& v = velocity_[p.name];
    if (v.size() != tensor.size()) v.assign(tensor.size(), T{0});
    auto w = tensor.data();
    auto g = tensor.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = m * v[i] + g[i];
      w[i] -= rate * v[i];
    }
    tensor.clear_grad();
  }
  ++step_;
}

template class SgdOptimizer<float>;
template class SgdOptimizer<double>;

}  // namespace partloc::engine
