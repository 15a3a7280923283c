#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "simplexts/composition.hpp"

namespace simplexts {

/// Wide-format abundance data: one row per time point, one column per
/// species, non-negative counts (or proportions) with positive row totals.
struct AbundanceTable {
  std::vector<std::string> times;
  std::vector<std::string> species;
  Eigen::MatrixXd counts;  // n x d

  int rows() const { return static_cast<int>(counts.rows()); }
  int cols() const { return static_cast<int>(counts.cols()); }
};

/// Parses a wide-format CSV (UTF-8, comma-separated, header row). The time
/// column must be an integer or an ISO date, strictly increasing with no
/// duplicates. Cells must be non-negative numbers.
AbundanceTable load_csv(const std::string& path, const std::string& time_column,
                        const std::vector<std::string>& species_columns);

struct ZeroStrategy {
  enum class Kind { Reject, AdditiveEpsilon };
  Kind kind = Kind::Reject;
  double epsilon = 0.5;

  static ZeroStrategy reject() { return {}; }
  static ZeroStrategy additive(double eps = 0.5) {
    return {Kind::AdditiveEpsilon, eps};
  }
};

/// Row-normalizes counts into compositions. Under AdditiveEpsilon, when any
/// zero is present in the table, epsilon is added to every count first (the
/// usual continuity correction); under Reject a zero cell is an error.
std::vector<Composition> to_compositions(const AbundanceTable& table,
                                         const ZeroStrategy& strategy = ZeroStrategy::reject());

/// Reorders columns so the named species is last (the reference species of
/// the log-ratio transform). Relative order of the others is preserved.
AbundanceTable select_reference(const AbundanceTable& table, const std::string& species_name);

}  // namespace simplexts
