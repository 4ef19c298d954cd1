#pragma once

#include <algorithm>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "darvm/types.hpp"

namespace darvm {

// Ordered class identifiers plus the groups merged into one category when
// computing predictive entropy (e.g. the two healthy states).
struct LabelSpace {
  std::vector<std::string> classes;
  std::vector<std::vector<int>> merge_groups;

  int num_classes() const { return static_cast<int>(classes.size()); }

  int index_of(const std::string& name) const {
    for (std::size_t i = 0; i < classes.size(); ++i)
      if (classes[i] == name) return static_cast<int>(i);
    return -1;
  }

  void validate() const {
    std::unordered_set<std::string> seen(classes.begin(), classes.end());
    if (seen.size() != classes.size())
      throw std::invalid_argument("LabelSpace: duplicate class identifiers");
    std::unordered_set<int> grouped;
    for (const auto& group : merge_groups) {
      for (int c : group) {
        if (c < 0 || c >= num_classes())
          throw std::invalid_argument("LabelSpace: merge group out of range");
        if (!grouped.insert(c).second)
          throw std::invalid_argument("LabelSpace: overlapping merge groups");
      }
    }
  }

  // Category count after merging.
  int num_merged() const {
    int removed = 0;
    for (const auto& group : merge_groups)
      removed += static_cast<int>(group.size()) - 1;
    return num_classes() - removed;
  }
};

struct Observation {
  Vec features;
  std::optional<int> label;
  std::optional<double> temperature;
  int seq = 0;
};

// Columnar container; observation i is row i of `features` with parallel
// label/temperature/seq entries.
struct Dataset {
  std::string domain_id;
  Mat features;  // n x d
  std::vector<std::optional<int>> labels;
  std::vector<std::optional<double>> temperatures;
  std::vector<int> seq;
  LabelSpace label_space;

  int size() const { return static_cast<int>(features.rows()); }
  int dim() const { return static_cast<int>(features.cols()); }

  Observation observation(int i) const {
    return Observation{features.row(i).transpose(), labels[i], temperatures[i],
                       seq[i]};
  }

  void append(const Observation& obs) {
    const int n = size();
    if (n == 0 && features.cols() == 0) {
      features.resize(0, obs.features.size());
    }
    if (obs.features.size() != features.cols())
      throw std::invalid_argument("Dataset::append: dimension mismatch");
    features.conservativeResize(n + 1, Eigen::NoChange);
    features.row(n) = obs.features.transpose();
    labels.push_back(obs.label);
    temperatures.push_back(obs.temperature);
    seq.push_back(obs.seq);
  }

  Dataset subset(const std::vector<int>& rows) const {
    Dataset out;
    out.domain_id = domain_id;
    out.label_space = label_space;
    out.features.resize(rows.size(), dim());
    out.labels.reserve(rows.size());
    out.temperatures.reserve(rows.size());
    out.seq.reserve(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      out.features.row(k) = features.row(rows[k]);
      out.labels.push_back(labels[rows[k]]);
      out.temperatures.push_back(temperatures[rows[k]]);
      out.seq.push_back(seq[rows[k]]);
    }
    return out;
  }

  // Rows whose label matches any of `class_ids`.
  std::vector<int> rows_with_labels(const std::vector<int>& class_ids) const {
    std::vector<int> rows;
    for (int i = 0; i < size(); ++i)
      if (labels[i] &&
          std::find(class_ids.begin(), class_ids.end(), *labels[i]) !=
              class_ids.end())
        rows.push_back(i);
    return rows;
  }

  std::vector<int> class_counts() const {
    std::vector<int> counts(label_space.num_classes(), 0);
    for (const auto& l : labels)
      if (l) counts[*l]++;
    return counts;
  }

  void validate() const {
    label_space.validate();
    if (!features.allFinite())
      throw std::invalid_argument("Dataset: non-finite feature values");
    for (const auto& l : labels)
      if (l && (*l < 0 || *l >= label_space.num_classes()))
        throw std::invalid_argument("Dataset: label outside label space");
  }
};

struct LoadSchema {
  std::vector<std::string> feature_columns;  // empty: every f-prefixed column
  std::string label_column = "label";
  std::string temp_column = "temp";
  std::optional<LabelSpace> expected_labels;  // when set, unknown labels fail
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

// Reads a delimited text file with a header row. Feature columns are f1..fd,
// `label` may be blank (unlabelled observation), `temp` is optional.
inline Dataset load_dataset(const std::string& path,
                            const LoadSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_dataset: cannot open " + path);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("load_dataset: empty file " + path);
  const auto header = detail::split_csv_line(detail::trim(line));

  std::vector<int> feature_cols;
  int label_col = -1, temp_col = -1;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string name = detail::trim(header[c]);
    if (name == schema.label_column) {
      label_col = static_cast<int>(c);
    } else if (name == schema.temp_column) {
      temp_col = static_cast<int>(c);
    } else if (!schema.feature_columns.empty()) {
      if (std::find(schema.feature_columns.begin(),
                    schema.feature_columns.end(),
                    name) != schema.feature_columns.end())
        feature_cols.push_back(static_cast<int>(c));
    } else if (!name.empty() && name[0] == 'f') {
      feature_cols.push_back(static_cast<int>(c));
    }
  }
  if (feature_cols.empty())
    throw std::runtime_error("load_dataset: no feature columns in " + path);

  Dataset ds;
  ds.domain_id = path;
  if (schema.expected_labels) ds.label_space = *schema.expected_labels;
  const int d = static_cast<int>(feature_cols.size());
  std::vector<Vec> rows;
  int row_index = 0;
  while (std::getline(in, line)) {
    ++row_index;
    const std::string trimmed = detail::trim(line);
    if (trimmed.empty()) continue;
    const auto cells = detail::split_csv_line(trimmed);
    Vec feat(d);
    for (int k = 0; k < d; ++k) {
      if (feature_cols[k] >= static_cast<int>(cells.size()))
        throw std::runtime_error("load_dataset: row " +
                                 std::to_string(row_index) + ": missing cell");
      const std::string cell = detail::trim(cells[feature_cols[k]]);
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (cell.empty() || end != cell.c_str() + cell.size() ||
          !std::isfinite(v))
        throw std::runtime_error("load_dataset: row " +
                                 std::to_string(row_index) +
                                 ": non-numeric feature '" + cell + "'");
      feat[k] = v;
    }
    std::optional<int> label;
    if (label_col >= 0 && label_col < static_cast<int>(cells.size())) {
      const std::string cell = detail::trim(cells[label_col]);
      if (!cell.empty()) {
        int idx = ds.label_space.index_of(cell);
        if (idx < 0) {
          if (schema.expected_labels)
            throw std::runtime_error("load_dataset: row " +
                                     std::to_string(row_index) +
                                     ": unknown label '" + cell + "'");
          ds.label_space.classes.push_back(cell);
          idx = ds.label_space.num_classes() - 1;
        }
        label = idx;
      }
    }
    std::optional<double> temp;
    if (temp_col >= 0 && temp_col < static_cast<int>(cells.size())) {
      const std::string cell = detail::trim(cells[temp_col]);
      if (!cell.empty()) temp = std::strtod(cell.c_str(), nullptr);
    }
    rows.push_back(std::move(feat));
    ds.labels.push_back(label);
    ds.temperatures.push_back(temp);
  }
  ds.features.resize(rows.size(), d);
  for (std::size_t i = 0; i < rows.size(); ++i)
    ds.features.row(i) = rows[i].transpose();
  ds.seq.resize(rows.size());
  std::iota(ds.seq.begin(), ds.seq.end(), 0);
  ds.validate();
  return ds;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_dataset: cannot write " + path);
  for (int k = 0; k < ds.dim(); ++k) out << "f" << (k + 1) << ",";
  out << "label,temp\n";
  for (int i = 0; i < ds.size(); ++i) {
    for (int k = 0; k < ds.dim(); ++k)
      out << detail::format_double(ds.features(i, k)) << ",";
    if (ds.labels[i]) out << ds.label_space.classes[*ds.labels[i]];
    out << ",";
    if (ds.temperatures[i]) out << detail::format_double(*ds.temperatures[i]);
    out << "\n";
  }
}

struct SplitPolicy {
  bool singleton_to_train = true;  // classes with one member go to train
};

// Per-class proportional split; within each class the assignment is a seeded
// shuffle. Unlabelled observations are split at the same ratio.
inline std::pair<Dataset, Dataset> stratified_split(
    const Dataset& ds, double ratio, Rng& rng,
    const SplitPolicy& policy = {}) {
  if (ds.size() == 0)
    throw std::invalid_argument("stratified_split: empty dataset");
  if (ratio <= 0.0 || ratio >= 1.0)
    throw std::invalid_argument("stratified_split: ratio must be in (0,1)");

  std::vector<std::vector<int>> buckets(ds.label_space.num_classes() + 1);
  for (int i = 0; i < ds.size(); ++i) {
    const int b = ds.labels[i] ? *ds.labels[i] : ds.label_space.num_classes();
    buckets[b].push_back(i);
  }
  std::vector<int> train_rows, test_rows;
  for (auto& bucket : buckets) {
    if (bucket.empty()) continue;
    if (bucket.size() == 1) {
      if (!policy.singleton_to_train)
        throw std::runtime_error("stratified_split: singleton class");
      train_rows.push_back(bucket[0]);
      continue;
    }
    std::shuffle(bucket.begin(), bucket.end(), rng);
    const int n_train = std::clamp(
        static_cast<int>(std::lround(ratio * bucket.size())), 1,
        static_cast<int>(bucket.size()) - 1);
    train_rows.insert(train_rows.end(), bucket.begin(),
                      bucket.begin() + n_train);
    test_rows.insert(test_rows.end(), bucket.begin() + n_train, bucket.end());
  }
  std::sort(train_rows.begin(), train_rows.end());
  std::sort(test_rows.begin(), test_rows.end());
  return {ds.subset(train_rows), ds.subset(test_rows)};
}

// One stream phase: take `count` observations matching the class filter and
// optional temperature window.
struct StreamPhase {
  std::string name;
  std::vector<int> classes;
  std::optional<Interval> temp_range;
  bool temp_hi_exclusive = false;    // half-open window [lo, hi)
  bool include_missing_temp = false; // rows without a temperature still match
  int count = 0;

  bool matches(const Dataset& ds, int row) const {
    if (!ds.labels[row]) return false;
    if (std::find(classes.begin(), classes.end(), *ds.labels[row]) ==
        classes.end())
      return false;
    if (temp_range) {
      if (!ds.temperatures[row]) return include_missing_temp;
      const double temp = *ds.temperatures[row];
      if (temp < temp_range->lo) return false;
      if (temp_hi_exclusive ? temp >= temp_range->hi : temp > temp_range->hi)
        return false;
    }
    return true;
  }
};

struct StreamPlan {
  std::vector<StreamPhase> phases;
};

// Orders the training observations phase by phase; within a phase the order
// is a seeded shuffle. The phases must jointly cover every observation.
inline std::vector<Observation> order_stream(const Dataset& train,
                                             const StreamPlan& plan,
                                             Rng& rng) {
  std::vector<bool> taken(train.size(), false);
  std::vector<Observation> stream;
  stream.reserve(train.size());
  for (const auto& phase : plan.phases) {
    std::vector<int> candidates;
    for (int i = 0; i < train.size(); ++i)
      if (!taken[i] && phase.matches(train, i)) candidates.push_back(i);
    if (candidates.empty())
      throw std::runtime_error("order_stream: phase '" + phase.name +
                               "' matches no observations");
    if (static_cast<int>(candidates.size()) < phase.count)
      throw std::runtime_error("order_stream: phase '" + phase.name +
                               "' needs " + std::to_string(phase.count) +
                               " observations, only " +
                               std::to_string(candidates.size()) + " remain");
    std::shuffle(candidates.begin(), candidates.end(), rng);
    for (int k = 0; k < phase.count; ++k) {
      taken[candidates[k]] = true;
      stream.push_back(train.observation(candidates[k]));
    }
  }
  const int missed =
      static_cast<int>(std::count(taken.begin(), taken.end(), false));
  if (missed > 0)
    throw std::runtime_error("order_stream: plan leaves " +
                             std::to_string(missed) +
                             " observations uncovered");
  return stream;
}

// First n_initial stream-ordered normal-condition observations inside the
// temperature window; these seed the NCA statistics and the initial
// labelled target set.
inline Dataset select_normal_condition(
    const std::vector<Observation>& stream, const Dataset& reference,
    const std::vector<int>& normal_classes, int n_initial,
    std::optional<Interval> temp_window = std::nullopt) {
  Dataset out;
  out.domain_id = reference.domain_id;
  out.label_space = reference.label_space;
  out.features.resize(0, reference.dim());
  for (const auto& obs : stream) {
    if (static_cast<int>(out.seq.size()) == n_initial) break;
    if (!obs.label) continue;
    if (std::find(normal_classes.begin(), normal_classes.end(), *obs.label) ==
        normal_classes.end())
      continue;
    if (temp_window) {
      if (!obs.temperature || !temp_window->contains(*obs.temperature))
        continue;
    }
    out.append(obs);
  }
  if (static_cast<int>(out.seq.size()) < n_initial)
    throw std::runtime_error(
        "select_normal_condition: only " + std::to_string(out.seq.size()) +
        " matching observations, need " + std::to_string(n_initial));
  return out;
}

// Stream with the given positions (by seq id) removed.
inline std::vector<Observation> remove_from_stream(
    const std::vector<Observation>& stream, const std::vector<int>& seqs) {
  std::unordered_set<int> drop(seqs.begin(), seqs.end());
  std::vector<Observation> out;
  out.reserve(stream.size());
  for (const auto& obs : stream)
    if (!drop.count(obs.seq)) out.push_back(obs);
  return out;
}

}  // namespace darvm
