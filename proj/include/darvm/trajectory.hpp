#pragma once

#include <optional>
#include <string>
#include <vector>

#include "darvm/types.hpp"

namespace darvm {

// One stream decision; label is present exactly when the observation was
// queried.
struct QueryDecision {
  int seq = 0;
  int true_label = -1;
  double eta = 0.0;
  double q = 0.0;
  bool queried = false;
  std::optional<int> label;
};

// Ordered record of a whole stream pass: decisions, refit positions, and the
// test macro-F1 after each presented observation.
struct QueryTrajectory {
  std::vector<QueryDecision> decisions;
  std::vector<int> refit_points;  // seq ids where the model was re-estimated
  std::vector<double> f1_curve;   // one entry per presented observation
  double initial_f1 = 0.0;        // before the stream starts
  // Labels consumed to initialize the model, charged outside the query
  // counts (the dashed-bar accounting).
  std::vector<std::pair<int, int>> init_labels;  // (seq, class)
  std::uint64_t seed = 0;
  std::optional<std::string> error;

  int queried_count() const {
    int n = 0;
    for (const auto& d : decisions) n += d.queried ? 1 : 0;
    return n;
  }

  double queried_fraction() const {
    return decisions.empty()
               ? 0.0
               : static_cast<double>(queried_count()) / decisions.size();
  }
};

}  // namespace darvm
