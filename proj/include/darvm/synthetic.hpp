#pragma once

#include <string>
#include <tuple>
#include <vector>

#include "darvm/dataset.hpp"
#include "darvm/mapping.hpp"

namespace darvm {

// One class-conditional Gaussian cluster in the source feature space.
struct ClusterSpec {
  std::string name;
  Vec mean;
  Mat cov;
  int count_source = 0;
  int count_target = 0;
  Interval temp_range{20.0, 30.0};
};

struct SyntheticSpec {
  int d = 2;
  std::vector<ClusterSpec> clusters;
  MappingParams truth;  // ground-truth target-to-source mapping
  std::vector<std::vector<std::string>> merge_groups;
  std::uint64_t seed = 0;

  void validate() const {
    if (d < 1) throw std::invalid_argument("SyntheticSpec: d must be >= 1");
    if ((truth.s.array() <= 0.0).any())
      throw std::invalid_argument("SyntheticSpec: scale must be positive");
    if ((truth.theta.array().abs() >= M_PI / 4.0).any())
      throw std::invalid_argument("SyntheticSpec: rotation outside (-pi/4, pi/4)");
    for (const auto& c : clusters) {
      if (c.count_source < 0 || c.count_target < 0)
        throw std::invalid_argument("SyntheticSpec: negative count");
      if (c.mean.size() != d || c.cov.rows() != d || c.cov.cols() != d)
        throw std::invalid_argument("SyntheticSpec: cluster dimension mismatch");
    }
  }
};

namespace detail {

inline Mat sample_mvn(const Vec& mean, const Mat& cov, int n, Rng& rng) {
  Eigen::LLT<Mat> llt(cov);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("generate_population: singular covariance");
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat z(n, mean.size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < mean.size(); ++j) z(i, j) = normal(rng);
  Mat out = z * llt.matrixL().transpose();
  out.rowwise() += mean.transpose();
  return out;
}

}  // namespace detail

// Samples the source from the class-conditional Gaussians and produces the
// target by pushing source-distribution draws through the inverse of the
// ground-truth mapping, so applying the truth to the target recovers the
// source geometry.
inline std::tuple<Dataset, Dataset, MappingParams> generate_population(
    const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);

  LabelSpace space;
  for (const auto& c : spec.clusters) space.classes.push_back(c.name);
  for (const auto& group : spec.merge_groups) {
    std::vector<int> ids;
    for (const auto& name : group) {
      const int idx = space.index_of(name);
      if (idx < 0)
        throw std::invalid_argument("SyntheticSpec: merge group names unknown class");
      ids.push_back(idx);
    }
    space.merge_groups.push_back(ids);
  }
  space.validate();

  auto build = [&](bool target) {
    Dataset ds;
    ds.domain_id = target ? "target" : "source";
    ds.label_space = space;
    int total = 0;
    for (const auto& c : spec.clusters)
      total += target ? c.count_target : c.count_source;
    ds.features.resize(total, spec.d);
    int at = 0;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (std::size_t k = 0; k < spec.clusters.size(); ++k) {
      const auto& c = spec.clusters[k];
      const int n = target ? c.count_target : c.count_source;
      if (n == 0) continue;
      Mat pts = detail::sample_mvn(c.mean, c.cov, n, rng);
      ds.features.middleRows(at, n) = pts;
      for (int i = 0; i < n; ++i) {
        ds.labels.push_back(static_cast<int>(k));
        ds.temperatures.push_back(c.temp_range.lo +
                                  (c.temp_range.hi - c.temp_range.lo) *
                                      unif(rng));
        ds.seq.push_back(at + i);
      }
      at += n;
    }
    return ds;
  };

  Dataset source = build(false);
  Dataset target = build(true);
  target.features = inverse_mapping(target.features, spec.truth);
  source.validate();
  target.validate();
  return {source, target, spec.truth};
}

// Five-class default in d=2: the healthy-ambient cluster largest, freezing
// offset positive in both features, damage clusters offset negative with
// increasing severity. Counts mirror the imbalance of a monitored-structure
// dataset. The exact means and covariances are configuration, not claims.
inline SyntheticSpec default_synthetic_spec() {
  SyntheticSpec spec;
  spec.d = 2;
  auto cluster = [](std::string name, double m0, double m1, double sd,
                    int n_src, int n_tgt, Interval temps) {
    ClusterSpec c;
    c.name = std::move(name);
    c.mean = Vec{{m0, m1}};
    c.cov = sd * sd * Mat::Identity(2, 2);
    c.count_source = n_src;
    c.count_target = n_tgt;
    c.temp_range = temps;
    return c;
  };
  auto band = [](std::string name, double m0, double m1, double major,
                 double cross, int n_src, int n_tgt, Interval temps) {
    ClusterSpec c;
    c.name = std::move(name);
    c.mean = Vec{{m0, m1}};
    c.cov = Mat(2, 2);
    c.cov << major, cross, cross, major;
    c.count_source = n_src;
    c.count_target = n_tgt;
    c.temp_range = temps;
    return c;
  };
  // Healthy data form a long temperature-driven band along the diagonal;
  // damage clusters sit tight, well separated, and off the band axis so the
  // healthy tail does not run into them.
  spec.clusters = {
      band("ambient", 0.0, 0.0, 0.45, 0.40, 179, 260, {1.0, 31.0}),
      band("freezing", 1.5, 1.8, 0.30, 0.24, 138, 110, {-15.0, -1.0}),
      cluster("damage1", -2.5, -1.0, 0.28, 19, 24, {23.0, 31.0}),
      cluster("damage2", -3.8, -2.1, 0.28, 10, 18, {23.0, 31.0}),
      cluster("damage3", -2.7, -3.2, 0.28, 10, 24, {23.0, 31.0}),
  };
  spec.truth.s = Vec{{1.3, 0.8}};
  spec.truth.t = Vec{{0.5, -0.4}};
  spec.truth.theta = Vec{{0.3}};
  spec.merge_groups = {{"ambient", "freezing"}};
  spec.seed = 42;
  return spec;
}

// The presentation pattern: changing-temperature normal data, ambient normal
// data, then a damage scenario progressing minor to severe, twice over. A
// class listed in several scenarios has its observations split across them.
struct StreamPlanSpec {
  std::vector<std::string> normal_classes = {"ambient", "freezing"};
  std::vector<std::vector<std::string>> scenarios = {{"damage1", "damage2"},
                                                     {"damage1", "damage3"}};
  double ambient_threshold = 23.0;
};

inline StreamPlan build_two_cycle_plan(const Dataset& train,
                                       const StreamPlanSpec& plan_spec) {
  const auto& space = train.label_space;
  std::vector<int> normal_ids;
  for (const auto& name : plan_spec.normal_classes) {
    const int idx = space.index_of(name);
    if (idx < 0)
      throw std::invalid_argument("build_two_cycle_plan: unknown class " + name);
    normal_ids.push_back(idx);
  }

  int n_changing = 0, n_ambient = 0;
  for (int i = 0; i < train.size(); ++i) {
    if (!train.labels[i]) continue;
    if (std::find(normal_ids.begin(), normal_ids.end(), *train.labels[i]) ==
        normal_ids.end())
      continue;
    const bool warm = train.temperatures[i] &&
                      *train.temperatures[i] >= plan_spec.ambient_threshold;
    (warm ? n_ambient : n_changing)++;
  }

  // Scenario multiplicity per class, to split shared damage classes.
  std::vector<int> uses(space.num_classes(), 0);
  for (const auto& scenario : plan_spec.scenarios)
    for (const auto& name : scenario) {
      const int idx = space.index_of(name);
      if (idx < 0)
        throw std::invalid_argument("build_two_cycle_plan: unknown class " +
                                    name);
      uses[idx]++;
    }
  const auto counts = train.class_counts();
  std::vector<int> remaining = counts;

  StreamPlan plan;
  const int cycles = static_cast<int>(plan_spec.scenarios.size());
  int changing_left = n_changing, ambient_left = n_ambient;
  for (int cycle = 0; cycle < cycles; ++cycle) {
    const int take_changing =
        (cycle + 1 == cycles) ? changing_left
                              : (n_changing + cycles - 1) / cycles;
    const int take_ambient =
        (cycle + 1 == cycles) ? ambient_left : (n_ambient + cycles - 1) / cycles;
    if (take_changing > 0) {
      StreamPhase phase;
      phase.name = "nc-changing-" + std::to_string(cycle + 1);
      phase.classes = normal_ids;
      phase.temp_range = Interval{kNegInf, plan_spec.ambient_threshold};
      phase.temp_hi_exclusive = true;
      phase.include_missing_temp = true;
      phase.count = take_changing;
      plan.phases.push_back(phase);
      changing_left -= take_changing;
    }
    if (take_ambient > 0) {
      StreamPhase phase;
      phase.name = "nc-ambient-" + std::to_string(cycle + 1);
      phase.classes = normal_ids;
      phase.temp_range = Interval{plan_spec.ambient_threshold, kInf};
      phase.count = take_ambient;
      plan.phases.push_back(phase);
      ambient_left -= take_ambient;
    }
    for (const auto& name : plan_spec.scenarios[cycle]) {
      const int idx = space.index_of(name);
      const int share = counts[idx] / uses[idx];
      const int take = (remaining[idx] - share < share) ? remaining[idx] : share;
      if (take == 0) continue;
      StreamPhase phase;
      phase.name = name + "-" + std::to_string(cycle + 1);
      phase.classes = {idx};
      phase.count = take;
      plan.phases.push_back(phase);
      remaining[idx] -= take;
    }
  }
  return plan;
}

}  // namespace darvm
