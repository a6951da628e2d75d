#pragma once

#include <vector>

#include "pfsgd/errors.hpp"

namespace pfsgd {

/// Uniform partition 0 = t_0 < t_1 < ... < t_N = T.
class TimeGrid {
 public:
  TimeGrid(double horizon, int steps) : horizon_(horizon), steps_(steps) {
    if (steps < 1) {
      throw ConfigError("TimeGrid: step count must be >= 1");
    }
    if (!(horizon > 0.0)) {
      throw ConfigError("TimeGrid: horizon must be positive");
    }
    dt_ = horizon / steps;
    nodes_.resize(static_cast<std::size_t>(steps) + 1);
    for (int i = 0; i <= steps; ++i) {
      nodes_[static_cast<std::size_t>(i)] = horizon * static_cast<double>(i) / steps;
    }
  }

  double horizon() const { return horizon_; }
  int steps() const { return steps_; }
  double dt() const { return dt_; }
  double node(int i) const { return nodes_.at(static_cast<std::size_t>(i)); }
  const std::vector<double>& nodes() const { return nodes_; }

 private:
  double horizon_;
  int steps_;
  double dt_;
  std::vector<double> nodes_;
};

}  // namespace pfsgd
