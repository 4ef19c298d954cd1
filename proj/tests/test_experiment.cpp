#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "darvm/experiment.hpp"

using namespace darvm;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

// A configuration small enough for fast end-to-end runs.
ExperimentConfig tiny_config(const std::string& outdir) {
  ExperimentConfig cfg;
  auto& clusters = cfg.data.synthetic.clusters;
  clusters[0].count_source = 40;
  clusters[0].count_target = 36;
  clusters[1].count_source = 30;
  clusters[1].count_target = 18;
  clusters[2].count_source = 10;
  clusters[2].count_target = 8;
  clusters[3].count_source = 8;
  clusters[3].count_target = 6;
  clusters[4].count_source = 8;
  clusters[4].count_target = 6;
  cfg.data.synthetic.seed = 77;
  cfg.repeats = 2;
  cfg.n_initial = 16;
  cfg.sampler.warmup = 50;
  cfg.sampler.draws = 50;
  cfg.sampler.sample_precisions = false;
  cfg.output_dir = outdir;
  cfg.master_seed = 2718;
  cfg.workers = 2;
  return cfg;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> tree_contents(const fs::path& root) {
  std::map<std::string, std::string> contents;
  for (const auto& entry : fs::recursive_directory_iterator(root))
    if (entry.is_regular_file())
      contents[fs::relative(entry.path(), root).string()] =
          slurp(entry.path());
  return contents;
}

int count_lines(const std::string& text) {
  return static_cast<int>(std::count(text.begin(), text.end(), '\n'));
}

}  // namespace

TEST_CASE("config round trips through json", "[experiment]") {
  ExperimentConfig cfg = tiny_config("/tmp/darvm_cfg_roundtrip");
  cfg.temp_window = Interval{23.0, kInf};
  cfg.budget = 40;
  const nlohmann::json j = config_to_json(cfg);
  const ExperimentConfig back = config_from_json(j);
  REQUIRE(back.repeats == cfg.repeats);
  REQUIRE(back.n_initial == cfg.n_initial);
  REQUIRE(back.master_seed == cfg.master_seed);
  REQUIRE(back.temp_window.has_value());
  REQUIRE(back.temp_window->lo == 23.0);
  REQUIRE(back.temp_window->hi == kInf);
  REQUIRE(back.budget == cfg.budget);
  REQUIRE(back.sampler.warmup == cfg.sampler.warmup);
  REQUIRE(back.data.synthetic.clusters[0].count_source == 40);
  REQUIRE(back.stream.scenarios == cfg.stream.scenarios);
}

TEST_CASE("invalid configurations are rejected", "[experiment]") {
  ExperimentConfig cfg = tiny_config("/tmp/darvm_cfg_bad");
  cfg.repeats = 0;
  REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_config("/tmp/darvm_cfg_bad");
  cfg.strategies = {"mystery"};
  REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_config("/tmp/darvm_cfg_bad");
  cfg.split_ratio = 1.5;
  REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("experiment run produces the expected tree and is deterministic",
          "[experiment]") {
  const fs::path dir_a = "/tmp/darvm_run_a";
  const fs::path dir_b = "/tmp/darvm_run_b";
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);

  const RunResult first = run_experiment(tiny_config(dir_a.string()));
  REQUIRE(first.failures == 0);
  REQUIRE(static_cast<int>(first.repeats.size()) == 2);

  // Expected artifacts.
  for (const char* name :
       {"config.json", "manifest.json", "source_model.json",
        "data/source.csv", "data/target.csv", "data/truth.json",
        "da_rvm/repeat_000.csv", "da_rvm/repeat_001.csv",
        "da_rvm/aggregate.csv", "da_rvm/summary.json",
        "da_rvm/query_counts.csv", "da_rvm/posterior_000.json",
        "target_only/repeat_000.csv", "random/repeat_000.csv",
        "source_only/aggregate.csv", "nca_only/aggregate.csv"})
    REQUIRE(fs::exists(dir_a / name));

  // The static baseline curve is constant.
  const std::string nca_csv = slurp(dir_a / "nca_only" / "repeat_000.csv");
  std::stringstream ss(nca_csv);
  std::string line;
  std::getline(ss, line);
  std::set<std::string> f1_values;
  while (std::getline(ss, line)) {
    const auto pos = line.rfind(',');
    f1_values.insert(line.substr(pos + 1));
  }
  REQUIRE(f1_values.size() == 1);

  // Second run with the identical config is byte-identical: move the first
  // tree aside and rerun into the same path.
  fs::rename(dir_a, dir_b);
  const RunResult second = run_experiment(tiny_config(dir_a.string()));
  REQUIRE(second.failures == 0);
  const auto tree_a = tree_contents(dir_a);
  const auto tree_b = tree_contents(dir_b);
  REQUIRE(tree_a.size() == tree_b.size());
  for (const auto& [rel, text] : tree_a) {
    INFO(rel);
    REQUIRE(tree_b.count(rel) == 1);
    REQUIRE(text == tree_b.at(rel));
  }

  // Every queried label is charged exactly once in the per-class counts.
  for (const char* strategy : {"da_rvm", "target_only", "random"}) {
    double total_counted = 0.0;
    {
      std::stringstream qss(
          slurp(dir_a / strategy / "query_counts.csv"));
      std::string qline;
      std::getline(qss, qline);
      while (std::getline(qss, qline)) {
        const auto cells = detail::split_csv_line(qline);
        total_counted += std::strtod(cells.at(1).c_str(), nullptr);
      }
    }
    double total_queried = 0.0;
    int reps = 0;
    for (const auto& rep : first.repeats) {
      const auto it = rep.trajectories.find(strategy);
      if (it == rep.trajectories.end() || it->second.error) continue;
      total_queried += it->second.queried_count();
      ++reps;
    }
    REQUIRE(total_counted * reps == Approx(total_queried).margin(1e-9));
  }
}

TEST_CASE("report emits figure-ready tables", "[experiment]") {
  const fs::path dir = "/tmp/darvm_run_report";
  fs::remove_all(dir);
  ExperimentConfig cfg = tiny_config(dir.string());
  const RunResult result = run_experiment(cfg);
  REQUIRE(result.failures == 0);
  write_report(dir.string());

  for (const char* name :
       {"report/report.json", "report/curve_da_rvm.csv",
        "report/curve_target_only.csv", "report/curve_random.csv",
        "report/curve_source_only.csv", "report/curve_nca_only.csv",
        "report/query_counts_da_rvm.csv", "report/features_best.csv",
        "report/features_worst.csv", "report/source_features.csv"})
    REQUIRE(fs::exists(dir / name));

  // Best/worst repeats are the argmin/argmax of the stored values.
  nlohmann::json manifest, report;
  {
    std::ifstream in(dir / "manifest.json");
    in >> manifest;
  }
  {
    std::ifstream in(dir / "report" / "report.json");
    in >> report;
  }
  double best_v = kInf, worst_v = kNegInf;
  int best = -1, worst = -1;
  for (const auto& rj : manifest.at("repeats")) {
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
  REQUIRE(report.at("best_repeat").get<int>() == best);
  REQUIRE(report.at("worst_repeat").get<int>() == worst);

  // Feature dumps cover the whole target: train plus test rows.
  const int rows = count_lines(slurp(dir / "report" / "features_best.csv")) - 1;
  REQUIRE(rows == 36 + 18 + 8 + 6 + 6);

  // The aggregate curve recomputed by the report matches the run's own.
  REQUIRE(slurp(dir / "report" / "curve_da_rvm.csv") ==
          slurp(dir / "da_rvm" / "aggregate.csv"));
}

TEST_CASE("trajectory csv round trip", "[experiment]") {
  const fs::path dir = "/tmp/darvm_traj_rt";
  fs::create_directories(dir);
  LabelSpace space;
  space.classes = {"a", "b"};
  QueryTrajectory traj;
  for (int i = 0; i < 5; ++i) {
    QueryDecision d;
    d.seq = 10 + i;
    d.true_label = i % 2;
    d.eta = 0.1 * i;
    d.q = 0.05 * i;
    d.queried = i == 2;
    if (d.queried) d.label = d.true_label;
    traj.decisions.push_back(d);
    traj.f1_curve.push_back(0.5 + 0.01 * i);
  }
  const std::string path = (dir / "traj.csv").string();
  exp_detail::write_trajectory_csv(traj, space, path);
  const QueryTrajectory back = exp_detail::read_trajectory_csv(path, space);
  REQUIRE(back.decisions.size() == traj.decisions.size());
  for (std::size_t i = 0; i < traj.decisions.size(); ++i) {
    REQUIRE(back.decisions[i].seq == traj.decisions[i].seq);
    REQUIRE(back.decisions[i].true_label == traj.decisions[i].true_label);
    REQUIRE(back.decisions[i].eta == traj.decisions[i].eta);
    REQUIRE(back.decisions[i].q == traj.decisions[i].q);
    REQUIRE(back.decisions[i].queried == traj.decisions[i].queried);
  }
  REQUIRE(back.f1_curve == traj.f1_curve);
}

TEST_CASE("file-mode datasets reuse the source label space", "[experiment]") {
  const fs::path dir = "/tmp/darvm_files_mode";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto gen_cfg = tiny_config((dir / "gen").string());
  auto [source, target, truth] = generate_population(gen_cfg.data.synthetic);
  save_dataset(source, (dir / "source.csv").string());
  save_dataset(target, (dir / "target.csv").string());

  ExperimentConfig cfg = tiny_config((dir / "run").string());
  cfg.data.mode = "files";
  cfg.data.source_path = (dir / "source.csv").string();
  cfg.data.target_path = (dir / "target.csv").string();
  auto [src, tgt, no_truth] = resolve_datasets(cfg);
  REQUIRE_FALSE(no_truth.has_value());
  REQUIRE(src.label_space.classes == source.label_space.classes);
  REQUIRE(tgt.label_space.classes == source.label_space.classes);
  REQUIRE(src.label_space.merge_groups ==
          std::vector<std::vector<int>>{{0, 1}});
  REQUIRE(tgt.size() == target.size());
}
