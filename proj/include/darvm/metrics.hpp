#pragma once

#include <functional>
#include <string>
#include <vector>

#include "darvm/dataset.hpp"
#include "darvm/trajectory.hpp"

namespace darvm {

struct F1Report {
  Vec precision, recall, f1;  // per class
  double macro_f1 = 0.0;      // mean over classes present in the truth
  Mat confusion;              // rows = truth, cols = prediction
};

// Per-class F1 with the 0/0 convention: a class present in the truth but
// never correctly predicted scores zero; classes absent from the truth are
// excluded from the macro mean.
inline F1Report macro_f1(const std::vector<int>& pred,
                         const std::vector<int>& truth,
                         const LabelSpace& space) {
  if (pred.size() != truth.size())
    throw std::invalid_argument("macro_f1: length mismatch");
  if (pred.empty()) throw std::invalid_argument("macro_f1: empty input");
  const int num_classes = space.num_classes();
  F1Report report;
  report.confusion = Mat::Zero(num_classes, num_classes);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= num_classes || pred[i] < 0 ||
        pred[i] >= num_classes)
      throw std::invalid_argument("macro_f1: label outside label space");
    report.confusion(truth[i], pred[i]) += 1.0;
  }
  report.precision = Vec::Zero(num_classes);
  report.recall = Vec::Zero(num_classes);
  report.f1 = Vec::Zero(num_classes);
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < num_classes; ++c) {
    const double tp = report.confusion(c, c);
    const double truth_count = report.confusion.row(c).sum();
    const double pred_count = report.confusion.col(c).sum();
    report.precision[c] = pred_count > 0 ? tp / pred_count : 0.0;
    report.recall[c] = truth_count > 0 ? tp / truth_count : 0.0;
    const double pr = report.precision[c] + report.recall[c];
    report.f1[c] = pr > 0 ? 2.0 * report.precision[c] * report.recall[c] / pr
                          : 0.0;
    if (truth_count > 0) {
      sum += report.f1[c];
      ++present;
    }
  }
  report.macro_f1 = present > 0 ? sum / present : 0.0;
  return report;
}

// Mean zero-one loss of argmax predictions over a labelled set.
inline double empirical_risk(
    const std::function<int(const Vec&)>& predict, const Dataset& labelled) {
  if (labelled.size() == 0)
    throw std::invalid_argument("empirical_risk: empty dataset");
  int wrong = 0, total = 0;
  for (int i = 0; i < labelled.size(); ++i) {
    if (!labelled.labels[i]) continue;
    ++total;
    if (predict(labelled.features.row(i).transpose()) != *labelled.labels[i])
      ++wrong;
  }
  if (total == 0)
    throw std::invalid_argument("empirical_risk: no labelled rows");
  return static_cast<double>(wrong) / total;
}

inline bool negative_transfer(double risk_transfer, double risk_target_only) {
  return risk_transfer > risk_target_only;
}

struct JmmdResult {
  double value = 0.0;  // clamped at zero
  double raw = 0.0;    // unbiased estimate, may be slightly negative
  double marginal = 0.0;
  std::vector<double> per_class;  // aligned with the shared label space
  std::vector<std::string> warnings;
};

namespace detail {

// Unbiased U-statistic estimate of the squared MMD with a Gaussian kernel.
inline double mmd_sq_unbiased(const Mat& x, const Mat& y, double gamma) {
  const int m = static_cast<int>(x.rows());
  const int n = static_cast<int>(y.rows());
  auto ksum_offdiag = [gamma](const Mat& a) {
    Mat sq = -2.0 * (a * a.transpose());
    sq.colwise() += a.rowwise().squaredNorm();
    sq.rowwise() += a.rowwise().squaredNorm().transpose();
    const Mat k = (-gamma * sq.array()).exp().matrix();
    return k.sum() - k.diagonal().sum();
  };
  Mat cross_sq = -2.0 * (x * y.transpose());
  cross_sq.colwise() += x.rowwise().squaredNorm();
  cross_sq.rowwise() += y.rowwise().squaredNorm().transpose();
  const double cross = (-gamma * cross_sq.array()).exp().sum();
  return ksum_offdiag(x) / (static_cast<double>(m) * (m - 1)) +
         ksum_offdiag(y) / (static_cast<double>(n) * (n - 1)) -
         2.0 * cross / (static_cast<double>(m) * n);
}

inline double median_pairwise_distance(const Mat& pooled) {
  std::vector<double> dists;
  const int n = static_cast<int>(pooled.rows());
  dists.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      dists.push_back((pooled.row(i) - pooled.row(j)).norm());
  if (dists.empty()) return 1.0;
  std::nth_element(dists.begin(), dists.begin() + dists.size() / 2,
                   dists.end());
  const double med = dists[dists.size() / 2];
  return med > 0 ? med : 1.0;
}

}  // namespace detail

enum class JmmdBandwidth { median_heuristic, fixed };

// Joint divergence: squared marginal MMD plus the sum of per-class squared
// MMDs over the classes shared by both datasets. The Gaussian kernel width
// comes from the median heuristic on the pooled sample unless fixed.
inline JmmdResult jmmd(const Dataset& source, const Dataset& target_mapped,
                       JmmdBandwidth mode = JmmdBandwidth::median_heuristic,
                       double fixed_gamma = 1.0) {
  if (source.dim() != target_mapped.dim())
    throw std::invalid_argument("jmmd: dimension mismatch");
  JmmdResult result;
  double gamma = fixed_gamma;
  if (mode == JmmdBandwidth::median_heuristic) {
    Mat pooled(source.size() + target_mapped.size(), source.dim());
    pooled.topRows(source.size()) = source.features;
    pooled.bottomRows(target_mapped.size()) = target_mapped.features;
    const double sigma = detail::median_pairwise_distance(pooled);
    gamma = 1.0 / (2.0 * sigma * sigma);
  }
  result.raw =
      detail::mmd_sq_unbiased(source.features, target_mapped.features, gamma);
  result.marginal = result.raw;

  const int num_classes = source.label_space.num_classes();
  result.per_class.assign(num_classes, 0.0);
  bool any_shared = false;
  for (int c = 0; c < num_classes; ++c) {
    const auto rows_s = source.rows_with_labels({c});
    // Shared classes are matched by name so differing spaces stay honest.
    const int c_t = target_mapped.label_space.index_of(
        source.label_space.classes[c]);
    const auto rows_t =
        c_t >= 0 ? target_mapped.rows_with_labels({c_t}) : std::vector<int>{};
    if (rows_s.empty() || rows_t.empty()) continue;
    any_shared = true;
    if (rows_s.size() < 2 || rows_t.size() < 2) {
      result.warnings.push_back("class '" + source.label_space.classes[c] +
                                "' has fewer than 2 members on one side; "
                                "term skipped");
      continue;
    }
    const double term = detail::mmd_sq_unbiased(
        source.subset(rows_s).features, target_mapped.subset(rows_t).features,
        gamma);
    result.per_class[c] = term;
    result.raw += term;
  }
  if (!any_shared)
    throw std::invalid_argument("jmmd: no shared labelled classes");
  result.value = std::max(0.0, result.raw);
  return result;
}

struct RepeatSummary {
  Vec mean_curve, p10_curve, p90_curve;
  // Per-class queried counts over repeats: mean with percentile whiskers.
  Vec query_mean, query_p10, query_p90;
};

// Nearest-rank percentile: the ceil(p*n)-th smallest value.
inline double nearest_rank_percentile(std::vector<double> values, double p) {
  if (values.empty())
    throw std::invalid_argument("percentile: empty sample");
  std::sort(values.begin(), values.end());
  const int n = static_cast<int>(values.size());
  int rank = static_cast<int>(std::ceil(p * n));
  rank = std::clamp(rank, 1, n);
  return values[rank - 1];
}

// Pointwise mean and 10th/90th percentile curves over repeats, plus
// per-class queried-count statistics.
inline RepeatSummary aggregate_repeats(
    const std::vector<QueryTrajectory>& trajectories, int num_classes) {
  if (trajectories.empty())
    throw std::invalid_argument("aggregate_repeats: no trajectories");
  const std::size_t len = trajectories[0].f1_curve.size();
  for (const auto& t : trajectories)
    if (t.f1_curve.size() != len)
      throw std::invalid_argument("aggregate_repeats: mismatched lengths");

  RepeatSummary summary;
  summary.mean_curve.resize(len);
  summary.p10_curve.resize(len);
  summary.p90_curve.resize(len);
  std::vector<double> column(trajectories.size());
  for (std::size_t i = 0; i < len; ++i) {
    double sum = 0.0;
    for (std::size_t r = 0; r < trajectories.size(); ++r) {
      column[r] = trajectories[r].f1_curve[i];
      sum += column[r];
    }
    summary.mean_curve[i] = sum / trajectories.size();
    summary.p10_curve[i] = nearest_rank_percentile(column, 0.10);
    summary.p90_curve[i] = nearest_rank_percentile(column, 0.90);
  }

  summary.query_mean = Vec::Zero(num_classes);
  summary.query_p10 = Vec::Zero(num_classes);
  summary.query_p90 = Vec::Zero(num_classes);
  std::vector<std::vector<double>> counts(
      num_classes, std::vector<double>(trajectories.size(), 0.0));
  for (std::size_t r = 0; r < trajectories.size(); ++r)
    for (const auto& d : trajectories[r].decisions)
      if (d.queried && d.label && *d.label >= 0 && *d.label < num_classes)
        counts[*d.label][r] += 1.0;
  for (int c = 0; c < num_classes; ++c) {
    double sum = 0.0;
    for (double v : counts[c]) sum += v;
    summary.query_mean[c] = sum / trajectories.size();
    summary.query_p10[c] = nearest_rank_percentile(counts[c], 0.10);
    summary.query_p90[c] = nearest_rank_percentile(counts[c], 0.90);
  }
  return summary;
}

}  // namespace darvm
