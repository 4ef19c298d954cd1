#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "darvm/active.hpp"
#include "darvm/synthetic.hpp"

namespace darvm {

struct DataConfig {
  std::string mode = "synthetic";  // "synthetic" | "files"
  SyntheticSpec synthetic = default_synthetic_spec();
  std::string source_path, target_path;
  std::vector<std::vector<std::string>> merge_groups = {
      {"ambient", "freezing"}};
};

// Every experiment knob in one document: data source, split, priors, kernel,
// sampler, strategies, and the master seed everything derives from.
struct ExperimentConfig {
  DataConfig data;
  double split_ratio = 0.8;
  int repeats = 1;
  int n_initial = 70;
  std::optional<Interval> temp_window;
  double sigma_s = 0.1, sigma_t = 0.1, sigma_theta = 0.1;
  Interval s_bounds{0.0, kInf};
  Interval theta_bounds{-M_PI / 4.0, M_PI / 4.0};
  std::optional<double> kernel_bandwidth;  // absent: 1/d
  GammaHyper hyper;
  SamplerConfig sampler = {.warmup = 200, .draws = 200, .chains = 1,
                           .target_accept = 0.8, .max_depth = 10, .seed = 0,
                           .sample_precisions = false};
  int refit_interval = 1;
  std::optional<int> budget;
  int init_damage_labels = 3;
  double em_tol = 1e-4;
  int em_max_iter = 200;
  double prune_threshold = 1e-5;
  StreamPlanSpec stream;
  std::vector<std::string> strategies = {"da_rvm", "target_only", "random"};
  std::string output_dir = "runs/out";
  std::uint64_t master_seed = 1;
  int workers = 1;

  void validate() const {
    if (repeats < 1) throw std::invalid_argument("config: repeats must be >= 1");
    if (split_ratio <= 0.0 || split_ratio >= 1.0)
      throw std::invalid_argument("config: split_ratio in (0,1)");
    if (n_initial < 2)
      throw std::invalid_argument("config: n_initial must be >= 2");
    if (sigma_s <= 0 || sigma_t <= 0 || sigma_theta <= 0)
      throw std::invalid_argument("config: prior sigmas must be positive");
    if (workers < 1) throw std::invalid_argument("config: workers must be >= 1");
    hyper.validate();
    sampler.validate();
    if (data.mode != "synthetic" && data.mode != "files")
      throw std::invalid_argument("config: data.mode must be synthetic|files");
    for (const auto& s : strategies)
      if (s != "da_rvm" && s != "target_only" && s != "random")
        throw std::invalid_argument("config: unknown strategy '" + s + "'");
  }
};

namespace cfg_detail {

inline double interval_end(const nlohmann::json& j, double fallback) {
  return j.is_null() ? fallback : j.get<double>();
}

inline Interval interval_from_json(const nlohmann::json& j) {
  Interval out;
  out.lo = interval_end(j.at(0), kNegInf);
  out.hi = interval_end(j.at(1), kInf);
  return out;
}

inline nlohmann::json interval_to_json(const Interval& v) {
  nlohmann::json j = nlohmann::json::array();
  j.push_back(std::isfinite(v.lo) ? nlohmann::json(v.lo) : nlohmann::json());
  j.push_back(std::isfinite(v.hi) ? nlohmann::json(v.hi) : nlohmann::json());
  return j;
}

inline SyntheticSpec synthetic_from_json(const nlohmann::json& j) {
  SyntheticSpec spec = default_synthetic_spec();
  if (j.contains("d")) spec.d = j.at("d").get<int>();
  if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("clusters")) {
    spec.clusters.clear();
    for (const auto& cj : j.at("clusters")) {
      ClusterSpec c;
      c.name = cj.at("name").get<std::string>();
      const auto mean = cj.at("mean").get<std::vector<double>>();
      c.mean = Eigen::Map<const Vec>(mean.data(), mean.size());
      if (cj.contains("cov")) {
        const auto rows = cj.at("cov").get<std::vector<std::vector<double>>>();
        c.cov.resize(rows.size(), rows.size());
        for (std::size_t r = 0; r < rows.size(); ++r)
          for (std::size_t k = 0; k < rows.size(); ++k) c.cov(r, k) = rows[r][k];
      } else {
        const auto sd = cj.at("std").get<std::vector<double>>();
        c.cov = Mat::Zero(sd.size(), sd.size());
        for (std::size_t k = 0; k < sd.size(); ++k) c.cov(k, k) = sd[k] * sd[k];
      }
      c.count_source = cj.at("count_source").get<int>();
      c.count_target = cj.at("count_target").get<int>();
      if (cj.contains("temp_range"))
        c.temp_range = interval_from_json(cj.at("temp_range"));
      spec.clusters.push_back(std::move(c));
    }
  }
  if (j.contains("mapping")) {
    const auto& mj = j.at("mapping");
    const auto s = mj.at("s").get<std::vector<double>>();
    const auto t = mj.at("t").get<std::vector<double>>();
    const auto theta = mj.at("theta").get<std::vector<double>>();
    spec.truth.s = Eigen::Map<const Vec>(s.data(), s.size());
    spec.truth.t = Eigen::Map<const Vec>(t.data(), t.size());
    spec.truth.theta = Eigen::Map<const Vec>(theta.data(), theta.size());
  }
  if (j.contains("merge_groups"))
    spec.merge_groups =
        j.at("merge_groups").get<std::vector<std::vector<std::string>>>();
  return spec;
}

inline nlohmann::json synthetic_to_json(const SyntheticSpec& spec) {
  nlohmann::json j;
  j["d"] = spec.d;
  j["seed"] = spec.seed;
  nlohmann::json clusters = nlohmann::json::array();
  for (const auto& c : spec.clusters) {
    nlohmann::json cj;
    cj["name"] = c.name;
    cj["mean"] = std::vector<double>(c.mean.data(), c.mean.data() + c.mean.size());
    nlohmann::json cov = nlohmann::json::array();
    for (int r = 0; r < c.cov.rows(); ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (int k = 0; k < c.cov.cols(); ++k) row.push_back(c.cov(r, k));
      cov.push_back(std::move(row));
    }
    cj["cov"] = std::move(cov);
    cj["count_source"] = c.count_source;
    cj["count_target"] = c.count_target;
    cj["temp_range"] = interval_to_json(c.temp_range);
    clusters.push_back(std::move(cj));
  }
  j["clusters"] = std::move(clusters);
  j["mapping"] = {
      {"s", std::vector<double>(spec.truth.s.data(),
                                spec.truth.s.data() + spec.truth.s.size())},
      {"t", std::vector<double>(spec.truth.t.data(),
                                spec.truth.t.data() + spec.truth.t.size())},
      {"theta",
       std::vector<double>(spec.truth.theta.data(),
                           spec.truth.theta.data() + spec.truth.theta.size())}};
  j["merge_groups"] = spec.merge_groups;
  return j;
}

}  // namespace cfg_detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  if (j.contains("data")) {
    const auto& dj = j.at("data");
    if (dj.contains("mode")) cfg.data.mode = dj.at("mode").get<std::string>();
    if (dj.contains("synthetic"))
      cfg.data.synthetic = cfg_detail::synthetic_from_json(dj.at("synthetic"));
    if (dj.contains("source")) cfg.data.source_path = dj.at("source");
    if (dj.contains("target")) cfg.data.target_path = dj.at("target");
    if (dj.contains("merge_groups"))
      cfg.data.merge_groups =
          dj.at("merge_groups").get<std::vector<std::vector<std::string>>>();
  }
  auto get = [&j](const char* key, auto fallback) {
    using T = decltype(fallback);
    return j.contains(key) ? j.at(key).get<T>() : fallback;
  };
  cfg.split_ratio = get("split_ratio", cfg.split_ratio);
  cfg.repeats = get("repeats", cfg.repeats);
  cfg.n_initial = get("n_initial", cfg.n_initial);
  if (j.contains("temp_window") && !j.at("temp_window").is_null())
    cfg.temp_window = cfg_detail::interval_from_json(j.at("temp_window"));
  if (j.contains("prior")) {
    const auto& pj = j.at("prior");
    cfg.sigma_s = pj.value("sigma_s", cfg.sigma_s);
    cfg.sigma_t = pj.value("sigma_t", cfg.sigma_t);
    cfg.sigma_theta = pj.value("sigma_theta", cfg.sigma_theta);
    if (pj.contains("s_bounds"))
      cfg.s_bounds = cfg_detail::interval_from_json(pj.at("s_bounds"));
    if (pj.contains("theta_bounds"))
      cfg.theta_bounds = cfg_detail::interval_from_json(pj.at("theta_bounds"));
  }
  if (j.contains("kernel") && j.at("kernel").contains("bandwidth") &&
      !j.at("kernel").at("bandwidth").is_null())
    cfg.kernel_bandwidth = j.at("kernel").at("bandwidth").get<double>();
  if (j.contains("gamma_hyper")) {
    cfg.hyper.a = j.at("gamma_hyper").value("a", cfg.hyper.a);
    cfg.hyper.b = j.at("gamma_hyper").value("b", cfg.hyper.b);
  }
  if (j.contains("sampler")) {
    const auto& sj = j.at("sampler");
    cfg.sampler.warmup = sj.value("warmup", cfg.sampler.warmup);
    cfg.sampler.draws = sj.value("draws", cfg.sampler.draws);
    cfg.sampler.chains = sj.value("chains", cfg.sampler.chains);
    cfg.sampler.target_accept =
        sj.value("target_accept", cfg.sampler.target_accept);
    cfg.sampler.max_depth = sj.value("max_depth", cfg.sampler.max_depth);
    cfg.sampler.sample_precisions =
        sj.value("sample_precisions", cfg.sampler.sample_precisions);
  }
  if (j.contains("active")) {
    const auto& aj = j.at("active");
    cfg.refit_interval = aj.value("refit_interval", cfg.refit_interval);
    if (aj.contains("budget") && !aj.at("budget").is_null())
      cfg.budget = aj.at("budget").get<int>();
    cfg.init_damage_labels =
        aj.value("init_damage_labels", cfg.init_damage_labels);
  }
  if (j.contains("em")) {
    cfg.em_tol = j.at("em").value("tol", cfg.em_tol);
    cfg.em_max_iter = j.at("em").value("max_iter", cfg.em_max_iter);
    cfg.prune_threshold =
        j.at("em").value("prune_threshold", cfg.prune_threshold);
  }
  if (j.contains("stream")) {
    const auto& sj = j.at("stream");
    if (sj.contains("normal_classes"))
      cfg.stream.normal_classes =
          sj.at("normal_classes").get<std::vector<std::string>>();
    if (sj.contains("scenarios"))
      cfg.stream.scenarios =
          sj.at("scenarios").get<std::vector<std::vector<std::string>>>();
    cfg.stream.ambient_threshold =
        sj.value("ambient_threshold", cfg.stream.ambient_threshold);
  }
  if (j.contains("strategies"))
    cfg.strategies = j.at("strategies").get<std::vector<std::string>>();
  cfg.output_dir = get("output", cfg.output_dir);
  cfg.master_seed = get("seed", cfg.master_seed);
  cfg.workers = get("workers", cfg.workers);
  cfg.validate();
  return cfg;
}

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["data"]["mode"] = cfg.data.mode;
  if (cfg.data.mode == "synthetic")
    j["data"]["synthetic"] = cfg_detail::synthetic_to_json(cfg.data.synthetic);
  else {
    j["data"]["source"] = cfg.data.source_path;
    j["data"]["target"] = cfg.data.target_path;
    j["data"]["merge_groups"] = cfg.data.merge_groups;
  }
  j["split_ratio"] = cfg.split_ratio;
  j["repeats"] = cfg.repeats;
  j["n_initial"] = cfg.n_initial;
  j["temp_window"] = cfg.temp_window
                         ? cfg_detail::interval_to_json(*cfg.temp_window)
                         : nlohmann::json();
  j["prior"] = {{"sigma_s", cfg.sigma_s},
                {"sigma_t", cfg.sigma_t},
                {"sigma_theta", cfg.sigma_theta},
                {"s_bounds", cfg_detail::interval_to_json(cfg.s_bounds)},
                {"theta_bounds",
                 cfg_detail::interval_to_json(cfg.theta_bounds)}};
  j["kernel"]["bandwidth"] = cfg.kernel_bandwidth
                                 ? nlohmann::json(*cfg.kernel_bandwidth)
                                 : nlohmann::json();
  j["gamma_hyper"] = {{"a", cfg.hyper.a}, {"b", cfg.hyper.b}};
  j["sampler"] = {{"warmup", cfg.sampler.warmup},
                  {"draws", cfg.sampler.draws},
                  {"chains", cfg.sampler.chains},
                  {"target_accept", cfg.sampler.target_accept},
                  {"max_depth", cfg.sampler.max_depth},
                  {"sample_precisions", cfg.sampler.sample_precisions}};
  j["active"] = {{"refit_interval", cfg.refit_interval},
                 {"budget", cfg.budget ? nlohmann::json(*cfg.budget)
                                       : nlohmann::json()},
                 {"init_damage_labels", cfg.init_damage_labels}};
  j["em"] = {{"tol", cfg.em_tol},
             {"max_iter", cfg.em_max_iter},
             {"prune_threshold", cfg.prune_threshold}};
  j["stream"] = {{"normal_classes", cfg.stream.normal_classes},
                 {"scenarios", cfg.stream.scenarios},
                 {"ambient_threshold", cfg.stream.ambient_threshold}};
  j["strategies"] = cfg.strategies;
  j["output"] = cfg.output_dir;
  j["seed"] = cfg.master_seed;
  j["workers"] = cfg.workers;
  return j;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_config: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return config_from_json(j);
}

}  // namespace darvm
