#pragma once

#include <functional>
#include <numeric>
#include <utility>
#include <vector>

#include "darvm/metrics.hpp"
#include "darvm/nuts.hpp"
#include "darvm/trajectory.hpp"

namespace darvm {

// Shannon entropy in nats, with 0 log 0 = 0.
inline double entropy(const Vec& p) {
  if ((p.array() < -1e-12).any() || std::abs(p.sum() - 1.0) > 1e-8)
    throw std::invalid_argument("entropy: invalid distribution");
  double h = 0.0;
  for (int i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
  return std::max(0.0, h);
}

// Sums the probabilities of each merge group; ungrouped classes pass
// through in order, with a group emitted at its first member's position.
inline Vec merge_probs(const Vec& p, const LabelSpace& space) {
  space.validate();
  if (p.size() != space.num_classes())
    throw std::invalid_argument("merge_probs: distribution length mismatch");
  std::vector<int> group_of(space.num_classes(), -1);
  for (std::size_t g = 0; g < space.merge_groups.size(); ++g)
    for (int c : space.merge_groups[g]) group_of[c] = static_cast<int>(g);
  Vec merged(space.num_merged());
  std::vector<bool> emitted(space.merge_groups.size(), false);
  int at = 0;
  for (int c = 0; c < space.num_classes(); ++c) {
    if (group_of[c] < 0) {
      merged[at++] = p[c];
      continue;
    }
    if (emitted[group_of[c]]) continue;
    double sum = 0.0;
    for (int member : space.merge_groups[group_of[c]]) sum += p[member];
    merged[at++] = sum;
    emitted[group_of[c]] = true;
  }
  return merged;
}

// Entropy normalized by its maximum over the merged categories; doubles as
// the query probability.
inline double info_efficiency(const Vec& p_merged) {
  const int c_eff = static_cast<int>(p_merged.size());
  if (c_eff < 2)
    throw std::invalid_argument("info_efficiency: need >= 2 categories");
  return std::clamp(entropy(p_merged) / std::log(static_cast<double>(c_eff)),
                    0.0, 1.0);
}

inline std::pair<double, bool> decide_query(double eta, Rng& rng) {
  if (eta < 0.0 || eta > 1.0)
    throw std::invalid_argument("decide_query: eta outside [0,1]");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double q = unif(rng);
  return {q, q < eta};
}

using LabelOracle = std::function<std::optional<int>(const Observation&)>;

struct ActiveConfig {
  SamplerConfig sampler;
  KernelSpec kernel;
  GammaHyper hyper;
  int refit_interval = 1;  // refit after this many accepted queries
  std::optional<int> budget;
  double em_tol = 1e-4;
  int em_max_iter = 200;
  double prune_threshold = 1e-5;
};

// Everything a DA-RVM stream pass needs: the labelled source, the pruned EM
// fit that fixes the relevance vectors, the NCA-primed prior, the initial
// labelled target data, and the held-out test set.
struct DaRvmContext {
  const Dataset* source = nullptr;
  const RvmModel* em_model = nullptr;
  MappingPrior prior;
  Dataset target_labelled;
  const Dataset* target_test = nullptr;
};

namespace detail {

inline ModelState initial_state(const DaRvmContext& ctx) {
  ModelState state;
  state.mapping.s = ctx.prior.mu_s;
  state.mapping.t = ctx.prior.mu_t;
  state.mapping.theta = ctx.prior.mu_theta;
  state.weights = ctx.em_model->weights;
  state.precisions = ctx.em_model->precisions;
  return state;
}

inline ModelState posterior_mean_state(const PosteriorSet& post) {
  ModelState mean = post.draws[0];
  for (std::size_t i = 1; i < post.draws.size(); ++i) {
    mean.mapping.s += post.draws[i].mapping.s;
    mean.mapping.t += post.draws[i].mapping.t;
    mean.mapping.theta += post.draws[i].mapping.theta;
    mean.weights += post.draws[i].weights;
    mean.precisions += post.draws[i].precisions;
  }
  const double n = static_cast<double>(post.draws.size());
  mean.mapping.s /= n;
  mean.mapping.t /= n;
  mean.mapping.theta /= n;
  mean.weights /= n;
  mean.precisions /= n;
  return mean;
}

inline std::vector<int> argmax_rows(const Mat& probs) {
  std::vector<int> out(probs.rows());
  for (int i = 0; i < probs.rows(); ++i) {
    int best = 0;
    probs.row(i).maxCoeff(&best);
    out[i] = best;
  }
  return out;
}

inline double test_macro_f1(const PosteriorSet& post,
                            const DaRvmContext& ctx) {
  const Mat probs = posterior_predictive_matrix(
      post, ctx.target_test->features, Domain::target,
      ctx.em_model->kernel, ctx.em_model->relevance_vectors);
  std::vector<int> truth;
  truth.reserve(ctx.target_test->size());
  for (const auto& l : ctx.target_test->labels) truth.push_back(*l);
  return macro_f1(argmax_rows(probs), truth, ctx.target_test->label_space)
      .macro_f1;
}

}  // namespace detail

// The observe-query-refit loop of the DA-RVM: posterior predictive entropy
// on merged healthy probabilities drives a stochastic query rule; every
// accepted label triggers a posterior refit warm-started at the previous
// posterior means.
inline QueryTrajectory run_stream(const DaRvmContext& ctx,
                                  const std::vector<Observation>& stream,
                                  const LabelOracle& oracle,
                                  const ActiveConfig& cfg, Rng& query_rng,
                                  std::uint64_t refit_seed_base,
                                  PosteriorSet* final_posterior = nullptr) {
  QueryTrajectory traj;
  traj.seed = refit_seed_base;
  const LabelSpace& space = ctx.source->label_space;

  Dataset labelled = ctx.target_labelled;
  JointModel model(*ctx.source, labelled, ctx.prior, cfg.hyper,
                   ctx.em_model->kernel, ctx.em_model->relevance_vectors,
                   cfg.sampler.sample_precisions, ctx.em_model->precisions);
  SamplerConfig sampler_cfg = cfg.sampler;
  sampler_cfg.seed = derive_seed(refit_seed_base, 0);
  PosteriorSet post =
      sample_posterior(sampler_cfg, model, detail::initial_state(ctx));
  traj.initial_f1 = detail::test_macro_f1(post, ctx);

  double current_f1 = traj.initial_f1;
  int pending = 0;
  int refits = 0;
  int budget_left = cfg.budget.value_or(-1);
  for (const auto& obs : stream) {
    QueryDecision decision;
    decision.seq = obs.seq;
    decision.true_label = obs.label.value_or(-1);
    if (cfg.budget && budget_left <= 0) {
      decision.eta = 0.0;
    } else {
      const Vec p = posterior_predictive(
          post, obs.features, Domain::target, ctx.em_model->kernel,
          ctx.em_model->relevance_vectors);
      decision.eta = info_efficiency(merge_probs(p, space));
    }
    auto [q, queried] = decide_query(decision.eta, query_rng);
    decision.q = q;
    decision.queried = queried;
    if (queried) {
      const auto label = oracle(obs);
      if (!label) {
        traj.error = "oracle failure at seq " + std::to_string(obs.seq);
        traj.decisions.push_back(decision);
        break;
      }
      decision.label = *label;
      Observation labelled_obs = obs;
      labelled_obs.label = *label;
      labelled.append(labelled_obs);
      if (cfg.budget) --budget_left;
      if (++pending >= cfg.refit_interval) {
        try {
          model.set_target(labelled);
          sampler_cfg.seed = derive_seed(refit_seed_base, ++refits);
          // Warm restart: previous means, adapted mass and step, short
          // re-adaptation.
          sampler_cfg.init_inv_mass = post.diagnostics.inv_mass;
          sampler_cfg.init_step = post.diagnostics.step_size;
          sampler_cfg.warmup = std::max(25, cfg.sampler.warmup / 3);
          post = sample_posterior(sampler_cfg, model,
                                  detail::posterior_mean_state(post));
        } catch (const std::exception& e) {
          traj.error = std::string("refit failure at seq ") +
                       std::to_string(obs.seq) + ": " + e.what();
          traj.decisions.push_back(decision);
          break;
        }
        traj.refit_points.push_back(obs.seq);
        current_f1 = detail::test_macro_f1(post, ctx);
        pending = 0;
      }
    }
    traj.decisions.push_back(decision);
    traj.f1_curve.push_back(current_f1);
  }
  if (final_posterior) *final_posterior = std::move(post);
  return traj;
}

struct TargetOnlyContext {
  Dataset initial_labelled;  // normal-condition data plus the damage seeds
  const Dataset* target_test = nullptr;
  std::vector<std::pair<int, int>> init_labels;  // (seq, class) damage seeds
};

namespace detail {

// Restriction of a dataset to the classes actually observed; returns the
// sub-dataset plus the map from restricted to full class indices.
inline std::pair<Dataset, std::vector<int>> restrict_to_observed(
    const Dataset& ds) {
  std::vector<bool> seen(ds.label_space.num_classes(), false);
  for (const auto& l : ds.labels)
    if (l) seen[*l] = true;
  std::vector<int> class_map;
  std::vector<int> full_to_sub(ds.label_space.num_classes(), -1);
  LabelSpace sub_space;
  for (int c = 0; c < ds.label_space.num_classes(); ++c) {
    if (!seen[c]) continue;
    full_to_sub[c] = static_cast<int>(class_map.size());
    class_map.push_back(c);
    sub_space.classes.push_back(ds.label_space.classes[c]);
  }
  for (const auto& group : ds.label_space.merge_groups) {
    std::vector<int> members;
    for (int c : group)
      if (full_to_sub[c] >= 0) members.push_back(full_to_sub[c]);
    if (members.size() >= 2) sub_space.merge_groups.push_back(members);
  }
  Dataset sub = ds;
  sub.label_space = sub_space;
  for (auto& l : sub.labels)
    if (l) l = full_to_sub[*l];
  return {std::move(sub), std::move(class_map)};
}

// Expands predictions over observed classes back to the full label space;
// unobserved classes get zero probability.
inline Mat expand_probs(const Mat& sub_probs, const std::vector<int>& map,
                        int num_classes) {
  Mat full = Mat::Zero(sub_probs.rows(), num_classes);
  for (int j = 0; j < sub_probs.cols(); ++j)
    full.col(map[j]) = sub_probs.col(j);
  return full;
}

inline double plugin_test_f1(const RvmModel& model,
                             const std::vector<int>& class_map,
                             const Dataset& test) {
  const Mat sub = predict_proba_matrix(model, test.features);
  const Mat probs =
      expand_probs(sub, class_map, test.label_space.num_classes());
  std::vector<int> truth;
  truth.reserve(test.size());
  for (const auto& l : test.labels) truth.push_back(*l);
  return macro_f1(argmax_rows(probs), truth, test.label_space).macro_f1;
}

}  // namespace detail

// Conventional active learning without transfer: an EM-fit RVM over the
// labelled target data alone drives the same query rule. Prediction support
// is limited to the classes observed so far.
inline QueryTrajectory run_target_only(const TargetOnlyContext& ctx,
                                       const std::vector<Observation>& stream,
                                       const LabelOracle& oracle,
                                       const ActiveConfig& cfg,
                                       Rng& query_rng) {
  QueryTrajectory traj;
  traj.init_labels = ctx.init_labels;
  const LabelSpace& space = ctx.initial_labelled.label_space;

  Dataset labelled = ctx.initial_labelled;
  auto refit = [&cfg](const Dataset& data) {
    auto [sub, class_map] = detail::restrict_to_observed(data);
    RvmModel model = prune(fit_em(sub, cfg.kernel, cfg.hyper, cfg.em_tol,
                                  cfg.em_max_iter),
                           cfg.prune_threshold);
    return std::make_pair(std::move(model), std::move(class_map));
  };
  auto [model, class_map] = refit(labelled);
  traj.initial_f1 = detail::plugin_test_f1(model, class_map, *ctx.target_test);

  double current_f1 = traj.initial_f1;
  int pending = 0;
  int budget_left = cfg.budget.value_or(-1);
  for (const auto& obs : stream) {
    QueryDecision decision;
    decision.seq = obs.seq;
    decision.true_label = obs.label.value_or(-1);
    if (cfg.budget && budget_left <= 0) {
      decision.eta = 0.0;
    } else {
      const Vec p = predict_proba(model, obs.features);
      decision.eta = info_efficiency(merge_probs(p, model.label_space));
    }
    auto [q, queried] = decide_query(decision.eta, query_rng);
    decision.q = q;
    decision.queried = queried;
    if (queried) {
      const auto label = oracle(obs);
      if (!label) {
        traj.error = "oracle failure at seq " + std::to_string(obs.seq);
        traj.decisions.push_back(decision);
        break;
      }
      decision.label = *label;
      Observation labelled_obs = obs;
      labelled_obs.label = *label;
      labelled.append(labelled_obs);
      if (cfg.budget) --budget_left;
      if (++pending >= cfg.refit_interval) {
        try {
          std::tie(model, class_map) = refit(labelled);
        } catch (const std::exception& e) {
          traj.error = std::string("refit failure at seq ") +
                       std::to_string(obs.seq) + ": " + e.what();
          traj.decisions.push_back(decision);
          break;
        }
        traj.refit_points.push_back(obs.seq);
        current_f1 =
            detail::plugin_test_f1(model, class_map, *ctx.target_test);
        pending = 0;
      }
    }
    traj.decisions.push_back(decision);
    traj.f1_curve.push_back(current_f1);
  }
  (void)space;
  return traj;
}

// Matched-count random baseline for the DA-RVM: the same refit machinery,
// with query positions drawn uniformly without replacement. Entropy is not
// consulted, so eta and q are recorded as NaN.
inline QueryTrajectory run_random(const DaRvmContext& ctx,
                                  const std::vector<Observation>& stream,
                                  const LabelOracle& oracle, int query_count,
                                  const ActiveConfig& cfg, Rng& rng,
                                  std::uint64_t refit_seed_base) {
  if (query_count > static_cast<int>(stream.size()))
    throw std::invalid_argument("run_random: query_count exceeds stream");
  QueryTrajectory traj;
  traj.seed = refit_seed_base;

  std::vector<int> positions(stream.size());
  std::iota(positions.begin(), positions.end(), 0);
  std::shuffle(positions.begin(), positions.end(), rng);
  std::vector<bool> chosen(stream.size(), false);
  for (int k = 0; k < query_count; ++k) chosen[positions[k]] = true;

  Dataset labelled = ctx.target_labelled;
  JointModel model(*ctx.source, labelled, ctx.prior, cfg.hyper,
                   ctx.em_model->kernel, ctx.em_model->relevance_vectors,
                   cfg.sampler.sample_precisions, ctx.em_model->precisions);
  SamplerConfig sampler_cfg = cfg.sampler;
  sampler_cfg.seed = derive_seed(refit_seed_base, 0);
  PosteriorSet post =
      sample_posterior(sampler_cfg, model, detail::initial_state(ctx));
  traj.initial_f1 = detail::test_macro_f1(post, ctx);

  double current_f1 = traj.initial_f1;
  int refits = 0;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t i = 0; i < stream.size(); ++i) {
    const auto& obs = stream[i];
    QueryDecision decision;
    decision.seq = obs.seq;
    decision.true_label = obs.label.value_or(-1);
    decision.eta = nan;
    decision.q = nan;
    decision.queried = chosen[i];
    if (decision.queried) {
      const auto label = oracle(obs);
      if (!label) {
        traj.error = "oracle failure at seq " + std::to_string(obs.seq);
        traj.decisions.push_back(decision);
        break;
      }
      decision.label = *label;
      Observation labelled_obs = obs;
      labelled_obs.label = *label;
      labelled.append(labelled_obs);
      try {
        model.set_target(labelled);
        sampler_cfg.seed = derive_seed(refit_seed_base, ++refits);
        sampler_cfg.init_inv_mass = post.diagnostics.inv_mass;
        sampler_cfg.init_step = post.diagnostics.step_size;
        sampler_cfg.warmup = std::max(25, cfg.sampler.warmup / 3);
        post = sample_posterior(sampler_cfg, model,
                                detail::posterior_mean_state(post));
      } catch (const std::exception& e) {
        traj.error = std::string("refit failure at seq ") +
                     std::to_string(obs.seq) + ": " + e.what();
        traj.decisions.push_back(decision);
        break;
      }
      traj.refit_points.push_back(obs.seq);
      current_f1 = detail::test_macro_f1(post, ctx);
    }
    traj.decisions.push_back(decision);
    traj.f1_curve.push_back(current_f1);
  }
  return traj;
}

}  // namespace darvm
