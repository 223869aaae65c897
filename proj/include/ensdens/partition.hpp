#pragma once

#include <limits>
#include <string>
#include <vector>

#include "ensdens/mixture.hpp"

namespace ensdens {

struct Mode {
  Vector location;
  double log_density = 0.0;
  int basin_size = 0;
};

/// Cluster assignment. Labels are 1-based and index `modes` (label l is
/// modes[l - 1]).
struct Partition {
  std::vector<int> labels;
  std::vector<Mode> modes;
  std::string method_tag;
  double merge_tol = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> warnings;

  int k_hat() const { return static_cast<int>(modes.size()); }
};

}  // namespace ensdens
