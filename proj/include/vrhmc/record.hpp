#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vrhmc/potential.hpp"

namespace vrhmc {

/// One recorded iterate. Row k describes x_k: `queries` is the cumulative
/// component-gradient count spent to reach it, `grad_err_sq` and `q_k` refer to
/// the step taken from x_k (absent on the final row or when disabled).
struct RecordRow {
  std::uint64_t iter = 0;
  std::uint64_t queries = 0;
  double potential = 0.0;
  std::optional<double> grad_err_sq;
  std::optional<double> q_k;
  std::optional<double> running_mean_potential;
  std::optional<double> extra;
};

/// Diagnostics of one chain.
struct RunRecord {
  std::vector<RecordRow> rows;
  /// Positions (and momenta) at recorded rows, when sample retention is on.
  std::vector<Vector> positions;
  std::vector<Vector> momenta;

  std::uint64_t burn_in = 0;
  std::uint64_t iterations = 0;
  std::uint64_t total_queries = 0;

  /// Post-burn-in averages over recorded rows.
  std::size_t post_burn_in_rows = 0;
  double mean_potential = 0.0;
  Vector mean;
  Matrix covariance;

  double wall_seconds = 0.0;
};

}  // namespace vrhmc
