#pragma once

// Brute-force references for the metric tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

namespace testing {

/// All-pairs HD95 of one B-scan with a linearly interpolated 95th percentile.
inline double brute_hd95_curve(const Eigen::RowVectorXd& pred, const Eigen::RowVectorXd& gt, double dz,
                               double dx) {
  const Eigen::Index n = pred.size();
  std::vector<double> all;
  const auto directed = [&](const Eigen::RowVectorXd& from, const Eigen::RowVectorXd& to) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < n; ++j) {
        const double ddx = static_cast<double>(i) * dx - static_cast<double>(j) * dx;
        const double ddz = from(i) * dz - to(j) * dz;
        best = std::min(best, std::sqrt(ddx * ddx + ddz * ddz));
      }
      all.push_back(best);
    }
  };
  directed(pred, gt);
  directed(gt, pred);
  std::sort(all.begin(), all.end());
  const double h = 0.95 * static_cast<double>(all.size() - 1);
  const auto lo = static_cast<std::size_t>(h);
  const auto hi = std::min(lo + 1, all.size() - 1);
  return all[lo] + (h - static_cast<double>(lo)) * (all[hi] - all[lo]);
}

}  // namespace testing
