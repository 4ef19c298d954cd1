#pragma once

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "darvm/inference.hpp"

namespace darvm {
namespace nuts {

// Dynamic Hamiltonian Monte Carlo with no-U-turn termination and multinomial
// trajectory sampling, with dual-averaged step size and diagonal mass-matrix
// adaptation during warmup. The target is any callable
// double(const Vec& z, Vec& grad).

struct Point {
  Vec z, r, grad;
  double logp = 0.0;  // position log density, excluding kinetic term
};

struct Tree {
  Point bk, fw;
  Vec z_prop;
  double log_weight = kNegInf;
  double sum_accept = 0.0;
  int n_leaves = 0;
  bool turned = false;
  bool divergent = false;
};

inline double kinetic(const Vec& r, const Vec& inv_mass) {
  return 0.5 * r.dot(inv_mass.cwiseProduct(r));
}

template <class Target>
Point leapfrog(const Target& target, const Point& from, double step,
               const Vec& inv_mass) {
  Point next;
  next.r = from.r + 0.5 * step * from.grad;
  next.z = from.z + step * inv_mass.cwiseProduct(next.r);
  next.grad.resize(from.z.size());
  next.logp = target(next.z, next.grad);
  next.r += 0.5 * step * next.grad;
  return next;
}

inline bool uturn(const Point& bk, const Point& fw, const Vec& inv_mass) {
  const Vec diff = inv_mass.cwiseProduct(fw.z - bk.z);
  return fw.r.dot(diff) < 0.0 || bk.r.dot(diff) < 0.0;
}

// Energy drop beyond which a leapfrog step counts as divergent.
inline constexpr double kDivergenceCap = 1000.0;

template <class Target>
Tree build_tree(const Target& target, const Point& edge, double step,
                int depth, bool forward, double h0, const Vec& inv_mass,
                Rng& rng, std::uniform_real_distribution<double>& unif) {
  if (depth == 0) {
    Point leaf =
        leapfrog(target, edge, forward ? step : -step, inv_mass);
    Tree tree;
    const double h = leaf.logp - kinetic(leaf.r, inv_mass);
    tree.n_leaves = 1;
    if (!std::isfinite(h) || h0 - h > kDivergenceCap) {
      tree.divergent = true;
      tree.sum_accept = 0.0;
      tree.log_weight = kNegInf;
      tree.bk = tree.fw = leaf;
      tree.z_prop = leaf.z;
      return tree;
    }
    tree.log_weight = h - h0;
    tree.sum_accept = std::min(1.0, std::exp(h - h0));
    tree.z_prop = leaf.z;
    tree.bk = leaf;
    tree.fw = std::move(leaf);
    return tree;
  }

  Tree first = build_tree(target, edge, step, depth - 1, forward, h0,
                          inv_mass, rng, unif);
  if (first.divergent || first.turned) return first;
  const Point& inner_edge = forward ? first.fw : first.bk;
  Tree second = build_tree(target, inner_edge, step, depth - 1, forward, h0,
                           inv_mass, rng, unif);

  Tree tree;
  tree.n_leaves = first.n_leaves + second.n_leaves;
  tree.sum_accept = first.sum_accept + second.sum_accept;
  tree.divergent = second.divergent;
  if (tree.divergent) {
    tree.turned = false;
    tree.log_weight = kNegInf;
    tree.bk = std::move(first.bk);
    tree.fw = std::move(first.fw);
    tree.z_prop = std::move(first.z_prop);
    return tree;
  }
  tree.bk = forward ? std::move(first.bk) : std::move(second.bk);
  tree.fw = forward ? std::move(second.fw) : std::move(first.fw);
  tree.log_weight = log_sum_exp(Vec{{first.log_weight, second.log_weight}});
  // Multinomial sampling within the subtree.
  const double p_second = std::exp(second.log_weight - tree.log_weight);
  tree.z_prop = (unif(rng) < p_second) ? std::move(second.z_prop)
                                       : std::move(first.z_prop);
  tree.turned = second.turned || uturn(tree.bk, tree.fw, inv_mass);
  return tree;
}

struct TransitionStats {
  double accept_stat = 0.0;
  bool divergent = false;
  int depth = 0;
};

template <class Target>
Point transition(const Target& target, Point current, double step,
                 int max_depth, const Vec& inv_mass, Rng& rng,
                 TransitionStats& stats) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int n = static_cast<int>(current.z.size());
  current.r.resize(n);
  for (int i = 0; i < n; ++i)
    current.r[i] = normal(rng) / std::sqrt(inv_mass[i]);
  const double h0 = current.logp - kinetic(current.r, inv_mass);

  Tree accum;
  accum.bk = current;
  accum.fw = current;
  accum.z_prop = current.z;
  accum.log_weight = 0.0;  // relative to h0
  accum.n_leaves = 1;
  accum.sum_accept = 1.0;

  double sum_accept = 0.0;
  int n_accept = 0;
  int depth = 0;
  for (; depth < max_depth; ++depth) {
    const bool forward = unif(rng) < 0.5;
    const Point& edge = forward ? accum.fw : accum.bk;
    Tree next = build_tree(target, edge, step, depth, forward, h0, inv_mass,
                           rng, unif);
    sum_accept += next.sum_accept;
    n_accept += next.n_leaves;
    if (next.divergent) {
      stats.divergent = true;
      break;
    }
    if (next.turned) break;
    // Biased progressive sampling favouring the fresh subtree.
    const double p_new =
        std::min(1.0, std::exp(next.log_weight - accum.log_weight));
    if (unif(rng) < p_new) accum.z_prop = next.z_prop;
    accum.log_weight =
        log_sum_exp(Vec{{accum.log_weight, next.log_weight}});
    if (forward)
      accum.fw = std::move(next.fw);
    else
      accum.bk = std::move(next.bk);
    if (uturn(accum.bk, accum.fw, inv_mass)) {
      ++depth;
      break;
    }
  }
  stats.accept_stat = n_accept > 0 ? sum_accept / n_accept : 0.0;
  stats.depth = depth;

  Point out;
  out.z = std::move(accum.z_prop);
  out.grad.resize(n);
  out.logp = target(out.z, out.grad);
  return out;
}

template <class Target>
double find_reasonable_step(const Target& target, const Point& start,
                            const Vec& inv_mass, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Point p = start;
  p.r.resize(start.z.size());
  for (int i = 0; i < p.r.size(); ++i)
    p.r[i] = normal(rng) / std::sqrt(inv_mass[i]);
  const double h0 = p.logp - kinetic(p.r, inv_mass);
  double step = 1.0;
  Point moved = leapfrog(target, p, step, inv_mass);
  double h1 = moved.logp - kinetic(moved.r, inv_mass);
  while (!std::isfinite(h1) && step > 1e-10) {
    step *= 0.5;
    moved = leapfrog(target, p, step, inv_mass);
    h1 = moved.logp - kinetic(moved.r, inv_mass);
  }
  const double dir = (h1 - h0 > std::log(0.5)) ? 1.0 : -1.0;
  for (int i = 0; i < 50; ++i) {
    step *= std::pow(2.0, dir);
    moved = leapfrog(target, p, step, inv_mass);
    h1 = moved.logp - kinetic(moved.r, inv_mass);
    const double gap = std::isfinite(h1) ? h1 - h0 : kNegInf;
    if (dir > 0 ? gap <= std::log(0.5) : gap >= std::log(0.5)) break;
  }
  return std::clamp(step, 1e-10, 1e3);
}

// Nesterov dual averaging on log step size.
struct DualAveraging {
  double mu = 0.0;
  double log_step = 0.0;
  double log_step_avg = 0.0;
  double h_sum = 0.0;
  int iter = 0;
  double target_accept = 0.8;
  static constexpr double kGamma = 0.05;
  static constexpr double kT0 = 10.0;
  static constexpr double kKappa = 0.75;

  void restart(double step) {
    mu = std::log(10.0 * step);
    log_step = std::log(step);
    log_step_avg = std::log(step);
    h_sum = 0.0;
    iter = 0;
  }

  void update(double accept_stat) {
    ++iter;
    const double eta = 1.0 / (iter + kT0);
    h_sum = (1.0 - eta) * h_sum + eta * (target_accept - accept_stat);
    log_step = mu - std::sqrt(static_cast<double>(iter)) / kGamma * h_sum;
    const double weight = std::pow(static_cast<double>(iter), -kKappa);
    log_step_avg = weight * log_step + (1.0 - weight) * log_step_avg;
  }
};

// Running moments for the diagonal mass-matrix windows.
struct Welford {
  Vec mean, m2;
  int count = 0;

  void reset(int dim) {
    mean = Vec::Zero(dim);
    m2 = Vec::Zero(dim);
    count = 0;
  }

  void add(const Vec& x) {
    ++count;
    const Vec delta = x - mean;
    mean += delta / count;
    m2 += delta.cwiseProduct(x - mean);
  }

  // Regularized variance estimate as used for mass adaptation.
  Vec variance() const {
    Vec var = m2 / std::max(1, count - 1);
    const double shrink = static_cast<double>(count) / (count + 5.0);
    return (var.array() * shrink + 1e-3 * (1.0 - shrink)).matrix();
  }
};

struct ChainResult {
  std::vector<Vec> draws;
  int divergences = 0;
  double sum_accept = 0.0;
  double step_size = 0.0;
  Vec inv_mass;
};

template <class Target>
ChainResult run_chain(const Target& target, const Vec& z0, int warmup,
                      int n_draws, double target_accept, int max_depth,
                      Rng& rng, const Vec& init_inv_mass = Vec(),
                      double init_step = 0.0) {
  const int dim = static_cast<int>(z0.size());
  Point current;
  current.z = z0;
  current.grad.resize(dim);
  current.logp = target(current.z, current.grad);
  if (!std::isfinite(current.logp))
    throw std::runtime_error("sampler: non-finite log density at init");

  Vec inv_mass =
      init_inv_mass.size() == dim ? init_inv_mass : Vec::Ones(dim);
  DualAveraging da;
  da.target_accept = target_accept;
  double step = init_step > 0.0
                    ? init_step
                    : find_reasonable_step(target, current, inv_mass, rng);
  da.restart(step);

  // Stan-style warmup windows: step-size-only buffers around doubling
  // variance-estimation windows.
  const int init_buffer = std::min(warmup, std::max(5, warmup * 75 / 1000));
  const int term_buffer = std::max(5, warmup * 100 / 1000);
  int window = std::max(10, warmup * 25 / 1000);
  int window_end = std::min(init_buffer + window, warmup - term_buffer);
  Welford welford;
  welford.reset(dim);

  ChainResult result;
  result.draws.reserve(n_draws);
  for (int it = 0; it < warmup; ++it) {
    TransitionStats stats;
    current = transition(target, std::move(current), step, max_depth,
                         inv_mass, rng, stats);
    da.update(stats.accept_stat);
    step = std::exp(da.log_step);
    const bool in_window = it >= init_buffer && it < warmup - term_buffer;
    if (in_window) {
      welford.add(current.z);
      if (it + 1 == window_end) {
        if (welford.count >= 10) inv_mass = welford.variance();
        welford.reset(dim);
        step = find_reasonable_step(target, current, inv_mass, rng);
        da.restart(step);
        window *= 2;
        window_end = it + 1 + window;
        if (window_end + window * 2 > warmup - term_buffer)
          window_end = warmup - term_buffer;
      }
    }
  }
  step = std::exp(da.log_step_avg);
  result.step_size = step;
  result.inv_mass = inv_mass;

  for (int it = 0; it < n_draws; ++it) {
    TransitionStats stats;
    current = transition(target, std::move(current), step, max_depth,
                         inv_mass, rng, stats);
    if (stats.divergent) ++result.divergences;
    result.sum_accept += stats.accept_stat;
    result.draws.push_back(current.z);
  }
  return result;
}

}  // namespace nuts

// Split-Rhat over retained draws, one value per coordinate.
inline Vec split_rhat(const std::vector<std::vector<Vec>>& chains) {
  const int dim = static_cast<int>(chains[0][0].size());
  std::vector<std::vector<const Vec*>> halves;
  for (const auto& chain : chains) {
    const int half = static_cast<int>(chain.size()) / 2;
    if (half < 2) continue;
    std::vector<const Vec*> first, second;
    for (int i = 0; i < half; ++i) first.push_back(&chain[i]);
    for (int i = half; i < 2 * half; ++i) second.push_back(&chain[i]);
    halves.push_back(std::move(first));
    halves.push_back(std::move(second));
  }
  Vec rhat = Vec::Ones(dim);
  if (halves.size() < 2) return rhat;
  const int m = static_cast<int>(halves.size());
  const int n = static_cast<int>(halves[0].size());
  for (int k = 0; k < dim; ++k) {
    Vec means(m), vars(m);
    for (int c = 0; c < m; ++c) {
      double mean = 0.0;
      for (const Vec* v : halves[c]) mean += (*v)[k];
      mean /= n;
      double var = 0.0;
      for (const Vec* v : halves[c]) var += ((*v)[k] - mean) * ((*v)[k] - mean);
      vars[c] = var / (n - 1);
      means[c] = mean;
    }
    const double mean_all = means.mean();
    const double b = n * (means.array() - mean_all).square().sum() / (m - 1);
    const double w = vars.mean();
    if (w <= 0) continue;
    rhat[k] = std::sqrt(((n - 1.0) / n * w + b / n) / w);
  }
  return rhat;
}

// Effective sample size via Geyer's initial positive sequence.
inline double effective_sample_size(const std::vector<double>& x) {
  const int n = static_cast<int>(x.size());
  if (n < 4) return static_cast<double>(n);
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  if (var <= 0) return static_cast<double>(n);
  const int max_lag = std::min(n - 2, 1000);
  std::vector<double> rho(max_lag + 1, 0.0);
  for (int lag = 0; lag <= max_lag; ++lag) {
    double acc = 0.0;
    for (int i = 0; i + lag < n; ++i) acc += (x[i] - mean) * (x[i + lag] - mean);
    rho[lag] = acc / (n * var);
  }
  double sum = 0.0;
  for (int k = 1; k + 1 <= max_lag; k += 2) {
    const double pair = rho[k] + rho[k + 1];
    if (pair < 0) break;
    sum += pair;
  }
  const double ess = n / (1.0 + 2.0 * sum);
  return std::clamp(ess, 1.0, static_cast<double>(n));
}

// Joint posterior sampling: dynamic HMC over the unconstrained coordinates,
// initialized from the given state (mapping at prior means, classifier block
// at the EM estimates).
inline PosteriorSet sample_posterior(const SamplerConfig& config,
                                     const JointModel& model,
                                     const ModelState& init) {
  config.validate();
  const Vec z0 = model.to_unconstrained(init);
  auto target = [&model](const Vec& z, Vec& grad) {
    return model.log_density(z, &grad);
  };

  // Fresh runs start from a prior/curvature preconditioner; warm restarts
  // reuse the mass and step the caller carried over.
  Vec init_inv_mass = config.init_inv_mass.size() == model.dim()
                          ? config.init_inv_mass
                          : model.preconditioner(init);

  PosteriorSet post;
  std::vector<std::vector<Vec>> chain_draws;
  double sum_accept = 0.0;
  for (int c = 0; c < config.chains; ++c) {
    Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(c)));
    nuts::ChainResult chain = nuts::run_chain(
        target, z0, config.warmup, config.draws, config.target_accept,
        config.max_depth, rng, init_inv_mass, config.init_step);
    post.diagnostics.divergences += chain.divergences;
    sum_accept += chain.sum_accept;
    post.diagnostics.step_size = chain.step_size;
    post.diagnostics.inv_mass = std::move(chain.inv_mass);
    chain_draws.push_back(std::move(chain.draws));
  }
  post.diagnostics.mean_accept =
      sum_accept / (static_cast<double>(config.chains) * config.draws);
  if (config.chains > 1) post.diagnostics.split_rhat = split_rhat(chain_draws);

  const int total = config.chains * config.draws;
  if (post.diagnostics.divergences > total / 10)
    post.diagnostics.warnings.push_back(
        "more than 10% divergent transitions (" +
        std::to_string(post.diagnostics.divergences) + " of " +
        std::to_string(total) + ")");

  post.draws.reserve(total);
  for (const auto& chain : chain_draws)
    for (const auto& z : chain) post.draws.push_back(model.from_unconstrained(z));
  return post;
}

// Componentwise posterior mean of the constrained mapping parameters.
inline MappingParams expected_mapping(const PosteriorSet& post) {
  if (post.draws.empty())
    throw std::invalid_argument("expected_mapping: empty posterior");
  MappingParams mean = post.draws[0].mapping;
  for (std::size_t i = 1; i < post.draws.size(); ++i) {
    mean.s += post.draws[i].mapping.s;
    mean.t += post.draws[i].mapping.t;
    mean.theta += post.draws[i].mapping.theta;
  }
  const double n = static_cast<double>(post.draws.size());
  mean.s /= n;
  mean.t /= n;
  mean.theta /= n;
  return mean;
}

enum class Domain { source, target };

// Monte-Carlo posterior predictive: average over draws of the softmax class
// probabilities, with target features passed through each draw's mapping.
inline Vec posterior_predictive(const PosteriorSet& post, const Vec& x,
                                Domain domain, const KernelSpec& kernel,
                                const Mat& rv) {
  if (post.draws.empty())
    throw std::invalid_argument("posterior_predictive: empty posterior");
  const int num_classes = static_cast<int>(post.draws[0].weights.rows());
  Vec mean = Vec::Zero(num_classes);
  for (const auto& draw : post.draws) {
    const Vec mapped = domain == Domain::target
                           ? apply_mapping_row(x, draw.mapping)
                           : x;
    const Vec k = kernel_row(mapped, rv, kernel);
    mean += softmax(draw.weights * k);
  }
  return mean / static_cast<double>(post.draws.size());
}

// Batched version over the rows of x.
inline Mat posterior_predictive_matrix(const PosteriorSet& post, const Mat& x,
                                       Domain domain, const KernelSpec& kernel,
                                       const Mat& rv) {
  if (post.draws.empty())
    throw std::invalid_argument("posterior_predictive: empty posterior");
  const int num_classes = static_cast<int>(post.draws[0].weights.rows());
  Mat mean = Mat::Zero(x.rows(), num_classes);
  for (const auto& draw : post.draws) {
    const Mat mapped =
        domain == Domain::target ? apply_mapping(x, draw.mapping) : x;
    const Mat k = kernel_matrix(mapped, rv, kernel);
    Mat gamma = k * draw.weights.transpose();
    for (int i = 0; i < gamma.rows(); ++i)
      mean.row(i) += softmax(gamma.row(i).transpose()).transpose();
  }
  return mean / static_cast<double>(post.draws.size());
}

}  // namespace darvm
