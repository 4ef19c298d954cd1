#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <thread>

#include "darvm/config.hpp"

namespace darvm {

// Per-coordinate posterior summary used for the structured export.
struct ParamSummary {
  std::string name;
  double mean = 0, sd = 0, q10 = 0, q50 = 0, q90 = 0;
};

inline std::vector<ParamSummary> summarize_posterior(const PosteriorSet& post) {
  if (post.draws.empty())
    throw std::invalid_argument("summarize_posterior: empty posterior");
  const auto& first = post.draws[0];
  const int d = first.mapping.dim();
  const int m = static_cast<int>(first.mapping.theta.size());
  const int num_classes = static_cast<int>(first.weights.rows());
  const int n_r = static_cast<int>(first.weights.cols());

  std::vector<std::pair<std::string, std::function<double(const ModelState&)>>>
      coords;
  for (int i = 0; i < d; ++i)
    coords.emplace_back("s[" + std::to_string(i) + "]",
                        [i](const ModelState& st) { return st.mapping.s[i]; });
  for (int i = 0; i < d; ++i)
    coords.emplace_back("t[" + std::to_string(i) + "]",
                        [i](const ModelState& st) { return st.mapping.t[i]; });
  for (int i = 0; i < m; ++i)
    coords.emplace_back(
        "theta[" + std::to_string(i) + "]",
        [i](const ModelState& st) { return st.mapping.theta[i]; });
  for (int c = 0; c < num_classes; ++c)
    for (int j = 0; j < n_r; ++j) {
      coords.emplace_back(
          "w[" + std::to_string(c) + "][" + std::to_string(j) + "]",
          [c, j](const ModelState& st) { return st.weights(c, j); });
    }
  for (int c = 0; c < num_classes; ++c)
    for (int j = 0; j < n_r; ++j)
      coords.emplace_back(
          "alpha[" + std::to_string(c) + "][" + std::to_string(j) + "]",
          [c, j](const ModelState& st) { return st.precisions(c, j); });

  std::vector<ParamSummary> out;
  out.reserve(coords.size());
  std::vector<double> values(post.draws.size());
  for (const auto& [name, pick] : coords) {
    for (std::size_t i = 0; i < post.draws.size(); ++i)
      values[i] = pick(post.draws[i]);
    ParamSummary s;
    s.name = name;
    double sum = 0;
    for (double v : values) sum += v;
    s.mean = sum / values.size();
    double var = 0;
    for (double v : values) var += (v - s.mean) * (v - s.mean);
    s.sd = values.size() > 1 ? std::sqrt(var / (values.size() - 1)) : 0.0;
    s.q10 = nearest_rank_percentile(values, 0.10);
    s.q50 = nearest_rank_percentile(values, 0.50);
    s.q90 = nearest_rank_percentile(values, 0.90);
    out.push_back(std::move(s));
  }
  return out;
}

struct RepeatOutput {
  int repeat = 0;
  std::uint64_t seed = 0;
  std::map<std::string, QueryTrajectory> trajectories;
  double jmmd_nca_raw = 0, jmmd_nca = 0;
  double jmmd_post_raw = 0, jmmd_post = 0;
  std::optional<MappingParams> expected;
  std::map<std::string, double> final_f1;
  double risk_da = -1, risk_target_only = -1;
  std::optional<bool> negative_transfer_flag;
  std::vector<ParamSummary> posterior_summary;
  SamplerDiagnostics final_diagnostics;
  std::string error;
};

namespace exp_detail {

inline std::vector<int> class_ids(const LabelSpace& space,
                                  const std::vector<std::string>& names) {
  std::vector<int> ids;
  for (const auto& name : names) {
    const int idx = space.index_of(name);
    if (idx < 0) throw std::invalid_argument("unknown class '" + name + "'");
    ids.push_back(idx);
  }
  return ids;
}

inline Dataset filter_rows(const Dataset& ds, const std::vector<int>& classes,
                           const std::optional<Interval>& window) {
  std::vector<int> rows;
  for (int i = 0; i < ds.size(); ++i) {
    if (!ds.labels[i]) continue;
    if (std::find(classes.begin(), classes.end(), *ds.labels[i]) ==
        classes.end())
      continue;
    if (window) {
      if (!ds.temperatures[i] || !window->contains(*ds.temperatures[i]))
        continue;
    }
    rows.push_back(i);
  }
  return ds.subset(rows);
}

inline std::vector<int> truth_labels(const Dataset& ds) {
  std::vector<int> out;
  out.reserve(ds.size());
  for (const auto& l : ds.labels) out.push_back(*l);
  return out;
}

inline double plugin_macro_f1(const RvmModel& model, const Mat& features,
                              const Dataset& test) {
  const Mat probs = predict_proba_matrix(model, features);
  return macro_f1(detail::argmax_rows(probs), truth_labels(test),
                  test.label_space)
      .macro_f1;
}

// Constant-curve pseudo-trajectory for the static baselines.
inline QueryTrajectory constant_trajectory(
    const std::vector<Observation>& stream, double f1) {
  QueryTrajectory traj;
  traj.initial_f1 = f1;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& obs : stream) {
    QueryDecision d;
    d.seq = obs.seq;
    d.true_label = obs.label.value_or(-1);
    d.eta = nan;
    d.q = nan;
    d.queried = false;
    traj.decisions.push_back(d);
    traj.f1_curve.push_back(f1);
  }
  return traj;
}

}  // namespace exp_detail

// One full repeat: split, stream ordering, NCA priming, every enabled
// strategy, the two static baselines, and the JMMD diagnostics.
inline RepeatOutput run_repeat(const ExperimentConfig& cfg,
                               const Dataset& source, const Dataset& target,
                               const RvmModel& em_model, int repeat_index) {
  RepeatOutput out;
  out.repeat = repeat_index;
  out.seed = derive_seed(cfg.master_seed, 1000 + repeat_index);

  const auto& space = source.label_space;
  const auto normal_ids =
      exp_detail::class_ids(space, cfg.stream.normal_classes);

  Rng split_rng(derive_seed(out.seed, 0));
  auto [train, test] = stratified_split(target, cfg.split_ratio, split_rng);

  Rng stream_rng(derive_seed(out.seed, 1));
  const StreamPlan plan = build_two_cycle_plan(train, cfg.stream);
  const auto full_stream = order_stream(train, plan, stream_rng);

  const Dataset initial = select_normal_condition(
      full_stream, train, normal_ids, cfg.n_initial, cfg.temp_window);
  const auto stream = remove_from_stream(full_stream, initial.seq);

  // NCA priming from the normal-condition subsets of both domains.
  const Dataset source_nc =
      exp_detail::filter_rows(source, normal_ids, cfg.temp_window);
  const NormalStats stats_s = normal_stats(source_nc.features);
  const NormalStats stats_t = normal_stats(initial.features);
  const auto [mu_s, mu_t] = nca_prior_means(stats_s, stats_t);
  const MappingPrior prior =
      MappingPrior::make(mu_s, mu_t, target.dim(), cfg.sigma_s, cfg.sigma_t,
                         cfg.sigma_theta, cfg.s_bounds, cfg.theta_bounds);

  ActiveConfig active_cfg;
  active_cfg.sampler = cfg.sampler;
  active_cfg.kernel = em_model.kernel;
  active_cfg.hyper = cfg.hyper;
  active_cfg.refit_interval = cfg.refit_interval;
  active_cfg.budget = cfg.budget;
  active_cfg.em_tol = cfg.em_tol;
  active_cfg.em_max_iter = cfg.em_max_iter;
  active_cfg.prune_threshold = cfg.prune_threshold;

  const LabelOracle oracle = [](const Observation& obs) { return obs.label; };

  // Static baselines: raw source classifier and the NCA-mapped one.
  const double source_only_f1 =
      exp_detail::plugin_macro_f1(em_model, test.features, test);
  const Mat test_nca = nca_transform(test.features, stats_s, stats_t);
  const double nca_only_f1 =
      exp_detail::plugin_macro_f1(em_model, test_nca, test);
  out.trajectories["source_only"] =
      exp_detail::constant_trajectory(stream, source_only_f1);
  out.trajectories["nca_only"] =
      exp_detail::constant_trajectory(stream, nca_only_f1);
  out.final_f1["source_only"] = source_only_f1;
  out.final_f1["nca_only"] = nca_only_f1;

  // JMMD of the NCA-mapped target training data against the source.
  {
    Dataset mapped = train;
    mapped.features = nca_transform(train.features, stats_s, stats_t);
    const JmmdResult res = jmmd(source, mapped);
    out.jmmd_nca_raw = res.raw;
    out.jmmd_nca = res.value;
  }

  const bool want_da = std::find(cfg.strategies.begin(), cfg.strategies.end(),
                                 "da_rvm") != cfg.strategies.end();
  const bool want_target_only =
      std::find(cfg.strategies.begin(), cfg.strategies.end(),
                "target_only") != cfg.strategies.end();
  const bool want_random = std::find(cfg.strategies.begin(),
                                     cfg.strategies.end(),
                                     "random") != cfg.strategies.end();

  DaRvmContext da_ctx;
  da_ctx.source = &source;
  da_ctx.em_model = &em_model;
  da_ctx.prior = prior;
  da_ctx.target_labelled = initial;
  da_ctx.target_test = &test;

  if (want_da || want_random) {
    Rng query_rng(derive_seed(out.seed, 2));
    PosteriorSet final_post;
    QueryTrajectory traj =
        run_stream(da_ctx, stream, oracle, active_cfg, query_rng,
                   derive_seed(out.seed, 3), &final_post);
    if (traj.error) out.error = *traj.error;
    if (!traj.f1_curve.empty())
      out.final_f1["da_rvm"] = traj.f1_curve.back();

    // Final posterior artifacts for the manifest and the report stage.
    if (!traj.error) {
      out.expected = expected_mapping(final_post);
      out.posterior_summary = summarize_posterior(final_post);
      out.final_diagnostics = final_post.diagnostics;

      Dataset mapped = train;
      mapped.features = apply_mapping(train.features, *out.expected);
      const JmmdResult res = jmmd(source, mapped);
      out.jmmd_post_raw = res.raw;
      out.jmmd_post = res.value;

      const Mat probs = posterior_predictive_matrix(
          final_post, test.features, Domain::target, em_model.kernel,
          em_model.relevance_vectors);
      const auto pred = detail::argmax_rows(probs);
      const auto truth = exp_detail::truth_labels(test);
      int wrong = 0;
      for (std::size_t i = 0; i < pred.size(); ++i)
        wrong += pred[i] != truth[i] ? 1 : 0;
      out.risk_da = static_cast<double>(wrong) / pred.size();
    }
    if (want_da) out.trajectories["da_rvm"] = traj;

    if (want_random && !traj.error) {
      Rng random_rng(derive_seed(out.seed, 5));
      QueryTrajectory rand_traj =
          run_random(da_ctx, stream, oracle, traj.queried_count(), active_cfg,
                     random_rng, derive_seed(out.seed, 6));
      if (rand_traj.error && out.error.empty()) out.error = *rand_traj.error;
      if (!rand_traj.f1_curve.empty())
        out.final_f1["random"] = rand_traj.f1_curve.back();
      out.trajectories["random"] = std::move(rand_traj);
    }
  }

  if (want_target_only) {
    // Seed the conventional learner with the initial normal-condition data
    // plus a few random samples of the first damage scenario, which a
    // multi-class RVM needs before damage arrives.
    const int first_damage =
        space.index_of(cfg.stream.scenarios.at(0).at(0));
    if (first_damage < 0)
      throw std::invalid_argument("run_repeat: unknown first damage class");
    std::vector<int> damage_positions;
    for (std::size_t i = 0; i < stream.size(); ++i)
      if (stream[i].label && *stream[i].label == first_damage)
        damage_positions.push_back(static_cast<int>(i));
    if (static_cast<int>(damage_positions.size()) < cfg.init_damage_labels)
      throw std::runtime_error(
          "run_repeat: not enough first-damage observations to seed the "
          "target-only model");
    Rng init_rng(derive_seed(out.seed, 7));
    std::shuffle(damage_positions.begin(), damage_positions.end(), init_rng);
    damage_positions.resize(cfg.init_damage_labels);

    TargetOnlyContext ctx;
    ctx.initial_labelled = initial;
    ctx.target_test = &test;
    std::vector<int> drop_seqs;
    for (int pos : damage_positions) {
      ctx.initial_labelled.append(stream[pos]);
      ctx.init_labels.emplace_back(stream[pos].seq, first_damage);
      drop_seqs.push_back(stream[pos].seq);
    }
    const auto to_stream = remove_from_stream(stream, drop_seqs);

    Rng query_rng(derive_seed(out.seed, 8));
    QueryTrajectory traj =
        run_target_only(ctx, to_stream, oracle, active_cfg, query_rng);
    if (traj.error && out.error.empty()) out.error = *traj.error;
    if (!traj.f1_curve.empty())
      out.final_f1["target_only"] = traj.f1_curve.back();
    // Final plug-in risk of the target-only model.
    if (!traj.error) {
      Dataset final_labelled = ctx.initial_labelled;
      for (const auto& d : traj.decisions)
        if (d.queried) {
          for (const auto& obs : to_stream)
            if (obs.seq == d.seq) {
              Observation o = obs;
              o.label = d.label;
              final_labelled.append(o);
              break;
            }
        }
      auto [sub, class_map] = detail::restrict_to_observed(final_labelled);
      const RvmModel final_model =
          prune(fit_em(sub, em_model.kernel, cfg.hyper, cfg.em_tol,
                       cfg.em_max_iter),
                cfg.prune_threshold);
      const Mat sub_probs = predict_proba_matrix(final_model, test.features);
      const Mat probs = detail::expand_probs(sub_probs, class_map,
                                             space.num_classes());
      const auto pred = detail::argmax_rows(probs);
      const auto truth = exp_detail::truth_labels(test);
      int wrong = 0;
      for (std::size_t i = 0; i < pred.size(); ++i)
        wrong += pred[i] != truth[i] ? 1 : 0;
      out.risk_target_only = static_cast<double>(wrong) / pred.size();
    }
    out.trajectories["target_only"] = std::move(traj);
  }

  if (out.risk_da >= 0 && out.risk_target_only >= 0)
    out.negative_transfer_flag =
        negative_transfer(out.risk_da, out.risk_target_only);
  return out;
}

namespace exp_detail {

inline void write_trajectory_csv(const QueryTrajectory& traj,
                                 const LabelSpace& space,
                                 const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "seq,true_class,eta,q,queried,macro_f1\n";
  for (std::size_t i = 0; i < traj.decisions.size(); ++i) {
    const auto& d = traj.decisions[i];
    out << d.seq << ","
        << (d.true_label >= 0 ? space.classes[d.true_label] : "") << ","
        << detail::format_double(d.eta) << "," << detail::format_double(d.q)
        << "," << (d.queried ? 1 : 0) << ",";
    if (i < traj.f1_curve.size())
      out << detail::format_double(traj.f1_curve[i]);
    out << "\n";
  }
}

inline QueryTrajectory read_trajectory_csv(const std::string& path,
                                           const LabelSpace& space) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  std::getline(in, line);  // header
  QueryTrajectory traj;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    QueryDecision d;
    d.seq = std::stoi(cells.at(0));
    d.true_label = space.index_of(detail::trim(cells.at(1)));
    d.eta = std::strtod(cells.at(2).c_str(), nullptr);
    d.q = std::strtod(cells.at(3).c_str(), nullptr);
    d.queried = cells.at(4) == "1";
    if (d.queried) d.label = d.true_label;
    traj.decisions.push_back(d);
    if (cells.size() > 5 && !detail::trim(cells.at(5)).empty())
      traj.f1_curve.push_back(std::strtod(cells.at(5).c_str(), nullptr));
  }
  return traj;
}

inline void write_summary_curve(const RepeatSummary& summary,
                                const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "index,mean,p10,p90\n";
  for (int i = 0; i < summary.mean_curve.size(); ++i)
    out << i << "," << detail::format_double(summary.mean_curve[i]) << ","
        << detail::format_double(summary.p10_curve[i]) << ","
        << detail::format_double(summary.p90_curve[i]) << "\n";
}

inline void write_query_counts(const RepeatSummary& summary,
                               const LabelSpace& space, double init_mean,
                               int init_class, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "class,mean,p10,p90,init_mean\n";
  for (int c = 0; c < space.num_classes(); ++c)
    out << space.classes[c] << ","
        << detail::format_double(summary.query_mean[c]) << ","
        << detail::format_double(summary.query_p10[c]) << ","
        << detail::format_double(summary.query_p90[c]) << ","
        << detail::format_double(c == init_class ? init_mean : 0.0) << "\n";
}

inline nlohmann::json mapping_to_json(const MappingParams& p) {
  auto vec = [](const Vec& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
  };
  return {{"s", vec(p.s)}, {"t", vec(p.t)}, {"theta", vec(p.theta)}};
}

inline MappingParams mapping_from_json(const nlohmann::json& j) {
  MappingParams p;
  const auto s = j.at("s").get<std::vector<double>>();
  const auto t = j.at("t").get<std::vector<double>>();
  const auto theta = j.at("theta").get<std::vector<double>>();
  p.s = Eigen::Map<const Vec>(s.data(), s.size());
  p.t = Eigen::Map<const Vec>(t.data(), t.size());
  p.theta = Eigen::Map<const Vec>(theta.data(), theta.size());
  return p;
}

}  // namespace exp_detail

struct RunResult {
  std::vector<RepeatOutput> repeats;
  int failures = 0;
  std::filesystem::path dir;
};

// Resolves the datasets named by the config: generated synthetic population
// or ingested files sharing the source label space.
inline std::tuple<Dataset, Dataset, std::optional<MappingParams>>
resolve_datasets(const ExperimentConfig& cfg) {
  if (cfg.data.mode == "synthetic") {
    auto [source, target, truth] = generate_population(cfg.data.synthetic);
    return {std::move(source), std::move(target), truth};
  }
  LoadSchema schema;
  Dataset source = load_dataset(cfg.data.source_path, schema);
  for (const auto& group : cfg.data.merge_groups) {
    std::vector<int> ids;
    for (const auto& name : group) {
      const int idx = source.label_space.index_of(name);
      if (idx >= 0) ids.push_back(idx);
    }
    if (ids.size() >= 2) source.label_space.merge_groups.push_back(ids);
  }
  source.label_space.validate();
  LoadSchema target_schema;
  target_schema.expected_labels = source.label_space;
  Dataset target = load_dataset(cfg.data.target_path, target_schema);
  return {std::move(source), std::move(target), std::nullopt};
}

inline RunResult run_experiment(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  cfg.validate();
  RunResult result;
  result.dir = cfg.output_dir;
  fs::create_directories(result.dir);

  auto [source, target, truth] = resolve_datasets(cfg);
  fs::create_directories(result.dir / "data");
  save_dataset(source, (result.dir / "data" / "source.csv").string());
  save_dataset(target, (result.dir / "data" / "target.csv").string());
  if (truth) {
    std::ofstream out(result.dir / "data" / "truth.json");
    out << exp_detail::mapping_to_json(*truth).dump(2) << "\n";
  }
  {
    std::ofstream out(result.dir / "config.json");
    out << config_to_json(cfg).dump(2) << "\n";
  }

  const KernelSpec kernel =
      cfg.kernel_bandwidth ? KernelSpec{*cfg.kernel_bandwidth}
                           : KernelSpec::for_dim(source.dim());
  const RvmModel em_model =
      prune(fit_em(source, kernel, cfg.hyper, cfg.em_tol, cfg.em_max_iter),
            cfg.prune_threshold);
  save_model(em_model, (result.dir / "source_model.json").string());

  result.repeats.resize(cfg.repeats);
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      const int r = next.fetch_add(1);
      if (r >= cfg.repeats) return;
      try {
        result.repeats[r] = run_repeat(cfg, source, target, em_model, r);
      } catch (const std::exception& e) {
        result.repeats[r].repeat = r;
        result.repeats[r].seed = derive_seed(cfg.master_seed, 1000 + r);
        result.repeats[r].error = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  const int n_workers = std::min(cfg.workers, cfg.repeats);
  for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  // Strategy files: one subdirectory per strategy, one file per repeat, one
  // aggregate per strategy.
  std::vector<std::string> all_strategies = cfg.strategies;
  all_strategies.push_back("source_only");
  all_strategies.push_back("nca_only");
  const auto& space = source.label_space;
  for (const auto& strategy : all_strategies) {
    const fs::path dir = result.dir / strategy;
    fs::create_directories(dir);
    std::vector<QueryTrajectory> good;
    double init_mean = 0.0;
    int counted = 0;
    for (const auto& rep : result.repeats) {
      const auto it = rep.trajectories.find(strategy);
      if (it == rep.trajectories.end()) continue;
      char name[32];
      std::snprintf(name, sizeof(name), "repeat_%03d.csv", rep.repeat);
      exp_detail::write_trajectory_csv(it->second, space,
                                       (dir / name).string());
      if (!it->second.error) {
        good.push_back(it->second);
        init_mean += static_cast<double>(it->second.init_labels.size());
        ++counted;
      }
    }
    if (good.empty()) continue;
    init_mean /= counted;
    const RepeatSummary summary =
        aggregate_repeats(good, space.num_classes());
    exp_detail::write_summary_curve(summary,
                                    (dir / "aggregate.csv").string());
    const int first_damage =
        strategy == "target_only" && !cfg.stream.scenarios.empty()
            ? space.index_of(cfg.stream.scenarios[0][0])
            : -1;
    exp_detail::write_query_counts(summary, space, init_mean, first_damage,
                                   (dir / "query_counts.csv").string());

    nlohmann::json sj;
    std::vector<double> finals, fractions;
    for (const auto& t : good) {
      if (!t.f1_curve.empty()) finals.push_back(t.f1_curve.back());
      fractions.push_back(t.queried_fraction());
    }
    double final_mean = 0, frac_mean = 0;
    for (double v : finals) final_mean += v;
    for (double v : fractions) frac_mean += v;
    sj["repeats"] = static_cast<int>(good.size());
    sj["final_f1_mean"] = finals.empty() ? 0.0 : final_mean / finals.size();
    sj["final_f1_p10"] =
        finals.empty() ? 0.0 : nearest_rank_percentile(finals, 0.10);
    sj["final_f1_p90"] =
        finals.empty() ? 0.0 : nearest_rank_percentile(finals, 0.90);
    sj["queried_fraction_mean"] =
        fractions.empty() ? 0.0 : frac_mean / fractions.size();
    sj["init_labels_mean"] = init_mean;
    std::ofstream out(dir / "summary.json");
    out << sj.dump(2) << "\n";
  }

  // Manifest: per-repeat diagnostics the report stage needs.
  nlohmann::json manifest;
  manifest["repeats"] = nlohmann::json::array();
  for (const auto& rep : result.repeats) {
    nlohmann::json rj;
    rj["repeat"] = rep.repeat;
    rj["seed"] = rep.seed;
    rj["jmmd_nca"] = rep.jmmd_nca;
    rj["jmmd_nca_raw"] = rep.jmmd_nca_raw;
    rj["jmmd_posterior"] = rep.jmmd_post;
    rj["jmmd_posterior_raw"] = rep.jmmd_post_raw;
    if (rep.expected)
      rj["expected_mapping"] = exp_detail::mapping_to_json(*rep.expected);
    rj["final_f1"] = rep.final_f1;
    if (rep.risk_da >= 0) rj["risk_da_rvm"] = rep.risk_da;
    if (rep.risk_target_only >= 0)
      rj["risk_target_only"] = rep.risk_target_only;
    if (rep.negative_transfer_flag)
      rj["negative_transfer"] = *rep.negative_transfer_flag;
    if (!rep.error.empty()) rj["error"] = rep.error;
    rj["divergences"] = rep.final_diagnostics.divergences;
    rj["mean_accept"] = rep.final_diagnostics.mean_accept;
    manifest["repeats"].push_back(std::move(rj));
    if (!rep.error.empty()) ++result.failures;
  }
  {
    std::ofstream out(result.dir / "manifest.json");
    out << manifest.dump(2) << "\n";
  }

  // Posterior summaries per repeat (DA strategies only).
  for (const auto& rep : result.repeats) {
    if (rep.posterior_summary.empty()) continue;
    nlohmann::json pj;
    pj["diagnostics"] = {{"divergences", rep.final_diagnostics.divergences},
                         {"mean_accept", rep.final_diagnostics.mean_accept},
                         {"step_size", rep.final_diagnostics.step_size}};
    nlohmann::json params = nlohmann::json::array();
    for (const auto& p : rep.posterior_summary)
      params.push_back({{"name", p.name},
                        {"mean", p.mean},
                        {"sd", p.sd},
                        {"q10", p.q10},
                        {"q50", p.q50},
                        {"q90", p.q90}});
    pj["params"] = std::move(params);
    char name[48];
    std::snprintf(name, sizeof(name), "posterior_%03d.json", rep.repeat);
    std::ofstream out(result.dir / "da_rvm" / name);
    if (out) out << pj.dump(2) << "\n";
  }
  return result;
}

// Emits figure-ready tables from a completed run directory: aggregate F1
// curves, per-class query-count bars, and the feature dumps for the best and
// worst repeats ranked by the stored NCA JMMD values.
inline void write_report(const std::string& run_dir) {
  namespace fs = std::filesystem;
  const fs::path dir(run_dir);
  if (!fs::exists(dir / "manifest.json"))
    throw std::runtime_error("write_report: missing manifest in " + run_dir);
  nlohmann::json manifest;
  {
    std::ifstream in(dir / "manifest.json");
    in >> manifest;
  }
  ExperimentConfig cfg;
  {
    std::ifstream in(dir / "config.json");
    if (!in) throw std::runtime_error("write_report: missing config.json");
    nlohmann::json j;
    in >> j;
    cfg = config_from_json(j);
  }
  LoadSchema schema;
  Dataset source = load_dataset((dir / "data" / "source.csv").string(), schema);
  LoadSchema target_schema;
  target_schema.expected_labels = source.label_space;
  Dataset target =
      load_dataset((dir / "data" / "target.csv").string(), target_schema);

  const fs::path report = dir / "report";
  fs::create_directories(report);

  std::vector<std::string> all_strategies = cfg.strategies;
  all_strategies.push_back("source_only");
  all_strategies.push_back("nca_only");
  for (const auto& strategy : all_strategies) {
    const fs::path sdir = dir / strategy;
    if (!fs::exists(sdir)) continue;
    std::vector<QueryTrajectory> trajs;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(sdir))
      if (entry.path().filename().string().rfind("repeat_", 0) == 0)
        files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      QueryTrajectory t =
          exp_detail::read_trajectory_csv(f.string(), source.label_space);
      if (t.f1_curve.size() == t.decisions.size() && !t.decisions.empty())
        trajs.push_back(std::move(t));
    }
    if (trajs.empty()) continue;
    const RepeatSummary summary =
        aggregate_repeats(trajs, source.label_space.num_classes());
    exp_detail::write_summary_curve(
        summary, (report / ("curve_" + strategy + ".csv")).string());
    exp_detail::write_query_counts(
        summary, source.label_space, 0.0, -1,
        (report / ("query_counts_" + strategy + ".csv")).string());
  }

  // Best/worst repeats by stored NCA JMMD.
  int best = -1, worst = -1;
  double best_v = kInf, worst_v = kNegInf;
  for (const auto& rj : manifest.at("repeats")) {
    if (rj.contains("error") || !rj.contains("expected_mapping")) continue;
    const double v = rj.at("jmmd_nca").get<double>();
    if (v < best_v) {
      best_v = v;
      best = rj.at("repeat").get<int>();
    }
    if (v > worst_v) {
      worst_v = v;
      worst = rj.at("repeat").get<int>();
    }
  }
  nlohmann::json rep_json;
  rep_json["best_repeat"] = best;
  rep_json["worst_repeat"] = worst;
  rep_json["best_jmmd"] = best < 0 ? nlohmann::json() : nlohmann::json(best_v);
  rep_json["worst_jmmd"] =
      worst < 0 ? nlohmann::json() : nlohmann::json(worst_v);
  {
    std::ofstream out(report / "report.json");
    out << rep_json.dump(2) << "\n";
  }

  auto dump_features = [&](int repeat_id, const std::string& name) {
    if (repeat_id < 0) return;
    const auto& rj = manifest.at("repeats").at(repeat_id);
    const MappingParams mapping =
        exp_detail::mapping_from_json(rj.at("expected_mapping"));
    Rng split_rng(derive_seed(rj.at("seed").get<std::uint64_t>(), 0));
    auto [train, test] = stratified_split(target, cfg.split_ratio, split_rng);
    std::ofstream out(report / name);
    out << "set,class";
    for (int k = 0; k < target.dim(); ++k) out << ",f" << (k + 1);
    out << "\n";
    auto write_rows = [&](const Dataset& ds, const char* tag) {
      const Mat mapped = apply_mapping(ds.features, mapping);
      for (int i = 0; i < ds.size(); ++i) {
        out << tag << ","
            << (ds.labels[i] ? ds.label_space.classes[*ds.labels[i]] : "");
        for (int k = 0; k < mapped.cols(); ++k)
          out << "," << detail::format_double(mapped(i, k));
        out << "\n";
      }
    };
    write_rows(train, "train");
    write_rows(test, "test");
  };
  dump_features(best, "features_best.csv");
  dump_features(worst, "features_worst.csv");

  // Source features for the shared scatter view.
  {
    std::ofstream out(report / "source_features.csv");
    out << "class";
    for (int k = 0; k < source.dim(); ++k) out << ",f" << (k + 1);
    out << "\n";
    for (int i = 0; i < source.size(); ++i) {
      out << (source.labels[i] ? source.label_space.classes[*source.labels[i]]
                               : "");
      for (int k = 0; k < source.dim(); ++k)
        out << "," << detail::format_double(source.features(i, k));
      out << "\n";
    }
  }
}

}  // namespace darvm
