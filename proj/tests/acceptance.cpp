// Acceptance suite: runs every acceptance criterion end to end and prints
// one pass/fail line per criterion. Returns the number of failures.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "darvm/darvm.hpp"

namespace fs = std::filesystem;
using namespace darvm;

namespace {

struct Check {
  bool ok = true;
  std::ostringstream detail;

  void require(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      detail << (detail.str().empty() ? "" : "; ") << what;
    }
  }
};

int g_failures = 0;

void criterion(int id, const std::string& name,
               const std::function<void(Check&)>& body) {
  Check check;
  const auto start = std::chrono::steady_clock::now();
  try {
    body(check);
  } catch (const std::exception& e) {
    check.require(false, std::string("exception: ") + e.what());
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  std::ostringstream line;
  line << (check.ok ? "[PASS]" : "[FAIL]") << " criterion " << id << ": "
       << name << " (" << std::fixed << std::setprecision(1) << secs << "s";
  if (!check.ok) line << "; " << check.detail.str();
  line << ")";
  std::cout << line.str() << std::endl;
  if (!check.ok) ++g_failures;
}

MappingParams random_mapping(int d, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  MappingParams p;
  p.s.resize(d);
  p.t.resize(d);
  p.theta.resize(num_rotation_angles(d));
  for (int i = 0; i < d; ++i) {
    p.s[i] = 0.5 + unif(rng);
    p.t[i] = 2.0 * unif(rng) - 1.0;
  }
  for (int i = 0; i < p.theta.size(); ++i)
    p.theta[i] = (unif(rng) - 0.5) * M_PI / 2.0 * 0.9;
  return p;
}

// Shared experiment configuration for the stream criteria.
ExperimentConfig stream_config(const std::string& outdir) {
  ExperimentConfig cfg;
  cfg.repeats = 20;
  cfg.sampler.warmup = 100;
  cfg.sampler.draws = 100;
  cfg.sampler.sample_precisions = false;
  cfg.output_dir = outdir;
  cfg.master_seed = 20250810;
  cfg.workers = 2;
  return cfg;
}

struct RepeatSetup {
  Dataset train, test, initial;
  std::vector<Observation> stream;
  MappingPrior prior;
  NormalStats stats_s, stats_t;
};

RepeatSetup prepare_repeat(const ExperimentConfig& cfg, const Dataset& source,
                           const Dataset& target, std::uint64_t seed,
                           double sigma_s, double sigma_t, double sigma_theta) {
  RepeatSetup setup;
  Rng split_rng(derive_seed(seed, 0));
  std::tie(setup.train, setup.test) =
      stratified_split(target, cfg.split_ratio, split_rng);
  Rng stream_rng(derive_seed(seed, 1));
  const StreamPlan plan = build_two_cycle_plan(setup.train, cfg.stream);
  const auto full = order_stream(setup.train, plan, stream_rng);
  setup.initial =
      select_normal_condition(full, setup.train, {0, 1}, cfg.n_initial);
  setup.stream = remove_from_stream(full, setup.initial.seq);
  const Dataset source_nc = source.subset(source.rows_with_labels({0, 1}));
  setup.stats_s = normal_stats(source_nc.features);
  setup.stats_t = normal_stats(setup.initial.features);
  const auto [mu_s, mu_t] = nca_prior_means(setup.stats_s, setup.stats_t);
  setup.prior = MappingPrior::make(mu_s, mu_t, target.dim(), sigma_s, sigma_t,
                                   sigma_theta);
  return setup;
}

double posterior_macro_f1(const PosteriorSet& post, const Dataset& test,
                          const RvmModel& em) {
  const Mat probs =
      posterior_predictive_matrix(post, test.features, Domain::target,
                                  em.kernel, em.relevance_vectors);
  std::vector<int> pred = detail::argmax_rows(probs), truth;
  for (const auto& l : test.labels) truth.push_back(*l);
  return macro_f1(pred, truth, test.label_space).macro_f1;
}

}  // namespace

int main() {
  std::cout << "DA-RVM acceptance suite" << std::endl;

  // ---------------------------------------------------------------- 1
  criterion(1, "numerical keystones", [](Check& check) {
    Rng rng(11);
    for (int d = 2; d <= 5; ++d)
      for (int trial = 0; trial < 25; ++trial) {
        const MappingParams p = random_mapping(d, rng);
        const Mat rot = assemble_rotation(p.theta, d);
        const double ortho =
            (rot.transpose() * rot - Mat::Identity(d, d)).cwiseAbs().maxCoeff();
        check.require(ortho < 1e-10, "orthogonality " + std::to_string(ortho));
        check.require(std::abs(rot.determinant() - 1.0) < 1e-10,
                      "determinant off by " +
                          std::to_string(rot.determinant() - 1.0));
      }

    // Gradient of the joint against central finite differences.
    LabelSpace space;
    space.classes = {"a", "b", "c"};
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_int_distribution<int> pick(0, 2);
    Dataset source, target;
    source.label_space = target.label_space = space;
    source.features.resize(20, 2);
    for (int i = 0; i < 20; ++i) {
      source.features(i, 0) = normal(rng);
      source.features(i, 1) = normal(rng);
      source.labels.push_back(pick(rng));
      source.temperatures.push_back(std::nullopt);
      source.seq.push_back(i);
    }
    target.features.resize(8, 2);
    for (int i = 0; i < 8; ++i) {
      target.features(i, 0) = normal(rng);
      target.features(i, 1) = normal(rng);
      target.labels.push_back(pick(rng));
      target.temperatures.push_back(std::nullopt);
      target.seq.push_back(i);
    }
    const MappingPrior prior = MappingPrior::make(
        Vec::Constant(2, 1.1), Vec::Constant(2, 0.2), 2, 0.3, 0.5, 0.2);
    const JointModel model(source, target, prior, GammaHyper{},
                           KernelSpec{0.5}, source.features.topRows(10), true);
    std::normal_distribution<double> z_draw(0.0, 0.4);
    for (int trial = 0; trial < 20; ++trial) {
      Vec z(model.dim());
      for (int i = 0; i < z.size(); ++i) z[i] = z_draw(rng);
      Vec grad;
      model.log_density(z, &grad);
      for (int i = 0; i < z.size(); ++i) {
        const double h = 1e-5 * std::max(1.0, std::abs(z[i]));
        Vec zp = z, zm = z;
        zp[i] += h;
        zm[i] -= h;
        const double fd =
            (model.log_density(zp) - model.log_density(zm)) / (2.0 * h);
        const double rel =
            std::abs(grad[i] - fd) / std::max(1.0, std::abs(fd));
        check.require(rel < 1e-5,
                      "grad coord " + std::to_string(i) + " rel err " +
                          std::to_string(rel));
      }
    }

    // Truncated-normal density integrates to one per component type.
    auto integrate = [](double mu, double sigma, double lo, double hi) {
      const double a = std::isfinite(lo) ? lo : mu - 12.0 * sigma;
      const double b = std::isfinite(hi) ? hi : mu + 12.0 * sigma;
      const int n = 40000;
      const double h = (b - a) / n;
      double acc = 0.0;
      for (int i = 0; i <= n; ++i) {
        const double x = a + h * i;
        const double f = std::exp(log_truncnorm_pdf(x, mu, sigma, lo, hi));
        acc += (i == 0 || i == n) ? f : (i % 2 == 1 ? 4.0 * f : 2.0 * f);
      }
      return acc * h / 3.0;
    };
    for (const auto& [mu, sigma, lo, hi] :
         {std::tuple{1.1, 0.1, 0.0, kInf},
          std::tuple{0.0, 0.1, -M_PI / 4, M_PI / 4},
          std::tuple{0.4, 1.5, 0.0, 1.0}}) {
      const double mass = integrate(mu, sigma, lo, hi);
      check.require(std::abs(mass - 1.0) < 1e-6,
                    "quadrature mass " + std::to_string(mass));
    }
  });

  // ---------------------------------------------------------------- 2
  criterion(2, "alignment map is exactly representable", [](Check& check) {
    Rng rng(22);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
      NormalStats src, tgt;
      src.mean = Vec{{normal(rng), normal(rng)}};
      src.std =
          Vec{{0.4 + std::abs(normal(rng)), 0.4 + std::abs(normal(rng))}};
      tgt.mean = Vec{{normal(rng), normal(rng)}};
      tgt.std =
          Vec{{0.4 + std::abs(normal(rng)), 0.4 + std::abs(normal(rng))}};
      const auto [mu_s, mu_t] = nca_prior_means(src, tgt);
      MappingParams p;
      p.s = mu_s;
      p.t = mu_t;
      p.theta = Vec::Zero(1);
      Mat x(16, 2);
      for (int i = 0; i < x.size(); ++i) x.data()[i] = 3.0 * normal(rng);
      const double gap =
          (apply_mapping(x, p) - nca_transform(x, src, tgt)).cwiseAbs().maxCoeff();
      check.require(gap < 1e-12, "identity gap " + std::to_string(gap));
    }
  });

  // ---------------------------------------------------------------- 3
  criterion(3, "prior recovery", [](Check& check) {
    const MappingPrior prior = MappingPrior::make(
        Vec::Constant(2, 1.3), Vec::Constant(2, -0.4), 2, 0.2, 0.3, 0.15);
    const JointModel model(prior, 2);
    ModelState init;
    init.mapping.s = prior.mu_s;
    init.mapping.t = prior.mu_t;
    init.mapping.theta = prior.mu_theta;
    init.weights.resize(0, 0);
    init.precisions.resize(0, 0);
    SamplerConfig cfg;
    cfg.warmup = 1000;
    cfg.draws = 1000;
    cfg.seed = 33;
    const PosteriorSet post = sample_posterior(cfg, model, init);
    check.require(static_cast<int>(post.draws.size()) == 1000,
                  "draw count");

    auto recover = [&](const std::string& name, auto pick, double expected) {
      std::vector<double> xs;
      for (const auto& d : post.draws) xs.push_back(pick(d));
      double mean = 0;
      for (double v : xs) mean += v;
      mean /= xs.size();
      double var = 0;
      for (double v : xs) var += (v - mean) * (v - mean);
      var /= xs.size() - 1;
      const double mc_se = std::sqrt(var / effective_sample_size(xs));
      check.require(std::abs(mean - expected) < 3.0 * mc_se,
                    name + " mean " + std::to_string(mean) + " vs " +
                        std::to_string(expected) + " (3 mc-se " +
                        std::to_string(3.0 * mc_se) + ")");
    };
    for (int i = 0; i < 2; ++i) {
      recover("s[" + std::to_string(i) + "]",
              [i](const ModelState& d) { return d.mapping.s[i]; },
              truncnorm_mean(1.3, 0.2, 0.0, kInf));
      recover("t[" + std::to_string(i) + "]",
              [i](const ModelState& d) { return d.mapping.t[i]; }, -0.4);
    }
    recover("theta[0]",
            [](const ModelState& d) { return d.mapping.theta[0]; },
            truncnorm_mean(0.0, 0.15, -M_PI / 4, M_PI / 4));
  });

  // Shared data for the stream criteria.
  const std::string run_dir = "/tmp/darvm_acceptance_run";
  ExperimentConfig shared_cfg = stream_config(run_dir);
  auto [source, target, truth_opt] = resolve_datasets(shared_cfg);
  const MappingParams truth = *truth_opt;
  const KernelSpec kernel = KernelSpec::for_dim(source.dim());
  const RvmModel em_model =
      prune(fit_em(source, kernel, shared_cfg.hyper, shared_cfg.em_tol,
                   shared_cfg.em_max_iter),
            shared_cfg.prune_threshold);

  // ---------------------------------------------------------------- 4
  criterion(4, "mapping recovery with full target labels", [&](Check& check) {
    ExperimentConfig cfg = shared_cfg;
    cfg.sigma_s = 1.0;
    cfg.sigma_t = 1.0;
    cfg.sigma_theta = 0.5;
    const auto setup = prepare_repeat(cfg, source, target,
                                      derive_seed(cfg.master_seed, 444),
                                      cfg.sigma_s, cfg.sigma_t,
                                      cfg.sigma_theta);
    const JointModel model(source, setup.train, setup.prior, cfg.hyper,
                           em_model.kernel, em_model.relevance_vectors, true);
    ModelState init;
    init.mapping.s = setup.prior.mu_s;
    init.mapping.t = setup.prior.mu_t;
    init.mapping.theta = setup.prior.mu_theta;
    init.weights = em_model.weights;
    init.precisions = em_model.precisions;
    SamplerConfig sampler;
    sampler.warmup = 800;
    sampler.draws = 800;
    sampler.seed = derive_seed(cfg.master_seed, 445);
    const PosteriorSet post = sample_posterior(sampler, model, init);

    const MappingParams expected = expected_mapping(post);
    auto component = [&](const std::string& name, auto pick, double truth_v) {
      std::vector<double> xs;
      for (const auto& d : post.draws) xs.push_back(pick(d));
      double mean = 0;
      for (double v : xs) mean += v;
      mean /= xs.size();
      double var = 0;
      for (double v : xs) var += (v - mean) * (v - mean);
      var /= xs.size() - 1;
      const double sd = std::sqrt(var);
      check.require(std::abs(mean - truth_v) < 2.0 * sd,
                    name + " mean " + std::to_string(mean) + " truth " +
                        std::to_string(truth_v) + " sd " + std::to_string(sd));
    };
    component("s[0]", [](const ModelState& d) { return d.mapping.s[0]; },
              truth.s[0]);
    component("s[1]", [](const ModelState& d) { return d.mapping.s[1]; },
              truth.s[1]);
    component("t[0]", [](const ModelState& d) { return d.mapping.t[0]; },
              truth.t[0]);
    component("t[1]", [](const ModelState& d) { return d.mapping.t[1]; },
              truth.t[1]);
    component("theta[0]",
              [](const ModelState& d) { return d.mapping.theta[0]; },
              truth.theta[0]);

    const double f1 = posterior_macro_f1(post, setup.test, em_model);
    check.require(f1 >= 0.95, "macro F1 " + std::to_string(f1));
    (void)expected;
  });

  // Shared 20-repeat experiment for criteria 5-7 and 9.
  fs::remove_all(run_dir);
  const RunResult run = run_experiment(shared_cfg);
  write_report(run_dir);

  // ---------------------------------------------------------------- 5
  criterion(5, "extrapolation to unobserved classes", [&](Check& check) {
    check.require(run.failures == 0,
                  std::to_string(run.failures) + " failed repeats");
    std::vector<double> diffs;
    for (int r = 0; r < shared_cfg.repeats; ++r) {
      const auto setup = prepare_repeat(
          shared_cfg, source, target,
          derive_seed(shared_cfg.master_seed, 1000 + r), shared_cfg.sigma_s,
          shared_cfg.sigma_t, shared_cfg.sigma_theta);
      // Labels restricted to healthy plus the first damage class.
      const auto rows = setup.train.rows_with_labels({0, 1, 2});
      const Dataset restricted = setup.train.subset(rows);

      const JointModel model(source, restricted, setup.prior,
                             shared_cfg.hyper, em_model.kernel,
                             em_model.relevance_vectors, false,
                             em_model.precisions);
      ModelState init;
      init.mapping.s = setup.prior.mu_s;
      init.mapping.t = setup.prior.mu_t;
      init.mapping.theta = setup.prior.mu_theta;
      init.weights = em_model.weights;
      init.precisions = em_model.precisions;
      SamplerConfig sampler = shared_cfg.sampler;
      sampler.warmup = 150;
      sampler.draws = 150;
      sampler.seed = derive_seed(shared_cfg.master_seed, 5000 + r);
      const PosteriorSet post = sample_posterior(sampler, model, init);
      const double f1_da = posterior_macro_f1(post, setup.test, em_model);

      auto [sub, class_map] = detail::restrict_to_observed(restricted);
      const RvmModel to_model =
          prune(fit_em(sub, em_model.kernel, shared_cfg.hyper,
                       shared_cfg.em_tol, shared_cfg.em_max_iter),
                shared_cfg.prune_threshold);
      const double f1_to =
          detail::plugin_test_f1(to_model, class_map, setup.test);
      diffs.push_back(f1_da - f1_to);
    }
    double mean_diff = 0;
    for (double d : diffs) mean_diff += d;
    mean_diff /= diffs.size();

    // Percentile bootstrap of the paired mean difference.
    Rng boot_rng(777);
    std::uniform_int_distribution<int> pick(0,
                                            static_cast<int>(diffs.size()) - 1);
    std::vector<double> boot(2000);
    for (auto& b : boot) {
      double acc = 0;
      for (std::size_t i = 0; i < diffs.size(); ++i)
        acc += diffs[pick(boot_rng)];
      b = acc / diffs.size();
    }
    std::sort(boot.begin(), boot.end());
    const double lower = boot[static_cast<int>(0.025 * boot.size())];
    check.require(mean_diff > 0,
                  "mean diff " + std::to_string(mean_diff));
    check.require(lower > 0, "bootstrap 2.5% bound " + std::to_string(lower));
  });

  // ---------------------------------------------------------------- 6
  criterion(6, "query efficiency against target-only", [&](Check& check) {
    double frac_da = 0, frac_to = 0, f1_da = 0, f1_to = 0;
    int n = 0;
    for (const auto& rep : run.repeats) {
      if (!rep.error.empty()) continue;
      const auto& da = rep.trajectories.at("da_rvm");
      const auto& to = rep.trajectories.at("target_only");
      frac_da += da.queried_fraction();
      frac_to += to.queried_fraction();
      f1_da += da.f1_curve.back();
      f1_to += to.f1_curve.back();
      ++n;
    }
    check.require(n >= 20, "only " + std::to_string(n) + " clean repeats");
    frac_da /= n;
    frac_to /= n;
    f1_da /= n;
    f1_to /= n;
    check.require(std::abs(f1_da - f1_to) <= 0.05,
                  "final F1 not matched: " + std::to_string(f1_da) + " vs " +
                      std::to_string(f1_to));
    check.require(frac_da <= 0.6 * frac_to,
                  "queried fraction " + std::to_string(frac_da) + " vs 0.6 * " +
                      std::to_string(frac_to));
  });

  // ---------------------------------------------------------------- 7
  criterion(7, "active sampling beats matched-count random", [&](Check& check) {
    std::vector<QueryTrajectory> active, random;
    for (const auto& rep : run.repeats) {
      if (!rep.error.empty()) continue;
      active.push_back(rep.trajectories.at("da_rvm"));
      random.push_back(rep.trajectories.at("random"));
    }
    check.require(static_cast<int>(active.size()) >= 20, "clean repeats");
    const RepeatSummary sa =
        aggregate_repeats(active, source.label_space.num_classes());
    const RepeatSummary sr =
        aggregate_repeats(random, source.label_space.num_classes());
    bool strict = false;
    double worst = 0.0;
    for (int i = 0; i < sa.mean_curve.size(); ++i) {
      worst = std::max(worst, sr.mean_curve[i] - sa.mean_curve[i]);
      if (sr.mean_curve[i] < sa.mean_curve[i]) strict = true;
    }
    check.require(worst <= 0.02,
                  "random exceeds active by " + std::to_string(worst));
    check.require(strict, "no index with strict active advantage");
  });

  // ---------------------------------------------------------------- 8
  criterion(8, "sampling-rule invariants", [&](Check& check) {
    check.require(info_efficiency(Vec::Constant(4, 0.25)) == 1.0,
                  "uniform eta");
    check.require(info_efficiency(Vec{{1.0, 0.0, 0.0, 0.0}}) == 0.0,
                  "one-hot eta");
    Rng rng(88);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int trial = 0; trial < 500; ++trial) {
      Vec p(4);
      for (int i = 0; i < 4; ++i) p[i] = unif(rng) + 1e-3;
      p /= p.sum();
      const double eta = info_efficiency(p);
      check.require(eta >= 0.0 && eta <= 1.0, "eta out of range");
    }
    int queried = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) queried += decide_query(0.3, rng).second;
    const double sigma = std::sqrt(0.3 * 0.7 / n);
    check.require(std::abs(queried / static_cast<double>(n) - 0.3) <
                      3.0 * sigma,
                  "query rate " + std::to_string(queried / 10000.0));

    Vec far(2);
    far << 1e3, -1e3;
    const Vec probs = predict_proba(em_model, far);
    double h = 0.0;
    for (int c = 0; c < probs.size(); ++c)
      if (probs[c] > 0) h -= probs[c] * std::log(probs[c]);
    check.require(
        h >= std::log(static_cast<double>(probs.size())) - 1e-6,
        "far-field entropy " + std::to_string(h));
  });

  // ---------------------------------------------------------------- 9
  criterion(9, "joint divergence diagnostics", [&](Check& check) {
    const JmmdResult self = jmmd(source, source);
    check.require(self.value <= 1e-12, "self jmmd " + std::to_string(self.value));

    for (int r = 0; r < 20; ++r) {
      SyntheticSpec spec = default_synthetic_spec();
      spec.seed = 9000 + r;
      auto [src, tgt, map_truth] = generate_population(spec);
      Dataset aligned = tgt;
      aligned.features = apply_mapping(tgt.features, map_truth);
      const double misaligned = jmmd(src, tgt).value;
      const double corrected = jmmd(src, aligned).value;
      check.require(corrected < misaligned,
                    "repeat " + std::to_string(r) + ": " +
                        std::to_string(corrected) + " !< " +
                        std::to_string(misaligned));
    }

    // Best/worst selection equals the argmin/argmax of the stored values.
    nlohmann::json manifest, report;
    {
      std::ifstream in(fs::path(run_dir) / "manifest.json");
      in >> manifest;
    }
    {
      std::ifstream in(fs::path(run_dir) / "report" / "report.json");
      in >> report;
    }
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
    check.require(report.at("best_repeat").get<int>() == best,
                  "best repeat mismatch");
    check.require(report.at("worst_repeat").get<int>() == worst,
                  "worst repeat mismatch");
  });

  // ---------------------------------------------------------------- 10
  criterion(10, "end-to-end determinism", [](Check& check) {
    ExperimentConfig cfg;
    auto& clusters = cfg.data.synthetic.clusters;
    clusters[0].count_source = 40;
    clusters[0].count_target = 40;
    clusters[1].count_source = 30;
    clusters[1].count_target = 20;
    clusters[2].count_source = 10;
    clusters[2].count_target = 10;
    clusters[3].count_source = 8;
    clusters[3].count_target = 8;
    clusters[4].count_source = 8;
    clusters[4].count_target = 8;
    cfg.data.synthetic.seed = 5150;
    cfg.repeats = 2;
    cfg.n_initial = 14;
    cfg.sampler.warmup = 60;
    cfg.sampler.draws = 60;
    cfg.sampler.sample_precisions = false;
    cfg.master_seed = 31415;
    cfg.workers = 2;
    const fs::path dir_a = "/tmp/darvm_acc_det";
    const fs::path dir_b = "/tmp/darvm_acc_det_prev";
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
    cfg.output_dir = dir_a.string();
    const RunResult first = run_experiment(cfg);
    check.require(first.failures == 0, "first run failures");
    fs::rename(dir_a, dir_b);
    const RunResult second = run_experiment(cfg);
    check.require(second.failures == 0, "second run failures");

    std::map<std::string, std::string> tree_a, tree_b;
    auto read_tree = [](const fs::path& root,
                        std::map<std::string, std::string>& out) {
      for (const auto& entry : fs::recursive_directory_iterator(root))
        if (entry.is_regular_file()) {
          std::ifstream in(entry.path(), std::ios::binary);
          std::stringstream ss;
          ss << in.rdbuf();
          out[fs::relative(entry.path(), root).string()] = ss.str();
        }
    };
    read_tree(dir_a, tree_a);
    read_tree(dir_b, tree_b);
    check.require(tree_a.size() == tree_b.size(), "tree sizes differ");
    for (const auto& [rel, text] : tree_a) {
      const auto it = tree_b.find(rel);
      if (it == tree_b.end() || it->second != text) {
        check.require(false, "file differs: " + rel);
        break;
      }
    }
  });

  // ---------------------------------------------------------------- 11
  {
    const char* src_path = std::getenv("DARVM_BRIDGE_SOURCE");
    const char* tgt_path = std::getenv("DARVM_BRIDGE_TARGET");
    if (src_path && tgt_path) {
      criterion(11, "bridge-dataset extension", [&](Check& check) {
        ExperimentConfig cfg = stream_config("/tmp/darvm_bridge_run");
        cfg.data.mode = "files";
        cfg.data.source_path = src_path;
        cfg.data.target_path = tgt_path;
        cfg.repeats = 100;
        fs::remove_all(cfg.output_dir);
        const RunResult result = run_experiment(cfg);
        check.require(result.failures == 0, "failed repeats");
        double f1_da = 0, f1_to = 0;
        int n = 0;
        for (const auto& rep : result.repeats) {
          if (!rep.error.empty()) continue;
          f1_da += rep.trajectories.at("da_rvm").f1_curve.back();
          f1_to += rep.trajectories.at("target_only").f1_curve.back();
          ++n;
        }
        check.require(std::abs(f1_da / n - f1_to / n) <= 0.1,
                      "final means differ by more than 0.1");
      });
    } else {
      std::cout << "[SKIP] criterion 11: bridge-dataset extension (set "
                   "DARVM_BRIDGE_SOURCE / DARVM_BRIDGE_TARGET to enable; "
                   "optional, not required for suite pass)"
                << std::endl;
    }
  }

  std::cout << (g_failures == 0 ? "ALL CRITERIA PASSED"
                                : std::to_string(g_failures) +
                                      " CRITERIA FAILED")
            << std::endl;
  return g_failures;
}
