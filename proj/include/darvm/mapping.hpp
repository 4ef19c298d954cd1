#pragma once

#include <utility>
#include <vector>

#include "darvm/types.hpp"

namespace darvm {

// Target-to-source affine transform decomposed into a per-feature scale s,
// a translation t, and a product of Givens rotations parameterized by the
// angles theta, one per feature pair (i,j) with i < j.
struct MappingParams {
  Vec s;      // length d, strictly positive
  Vec t;      // length d
  Vec theta;  // length d*(d-1)/2, radians

  int dim() const { return static_cast<int>(s.size()); }
};

inline int num_rotation_angles(int d) { return d * (d - 1) / 2; }

// Feature index pairs in lexicographic order; fixes the composition order of
// the Givens factors, which matters for d >= 3.
inline std::vector<std::pair<int, int>> rotation_index_pairs(int d) {
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(num_rotation_angles(d));
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) pairs.emplace_back(i, j);
  return pairs;
}

inline Mat givens_rotation(int d, int i, int j, double angle) {
  Mat g = Mat::Identity(d, d);
  const double c = std::cos(angle), s = std::sin(angle);
  g(i, i) = c;
  g(j, j) = c;
  g(i, j) = -s;
  g(j, i) = s;
  return g;
}

inline Mat assemble_rotation(const Vec& theta, int d) {
  const auto pairs = rotation_index_pairs(d);
  if (theta.size() != static_cast<int>(pairs.size()))
    throw std::invalid_argument("assemble_rotation: expected " +
                                std::to_string(pairs.size()) + " angles, got " +
                                std::to_string(theta.size()));
  Mat rot = Mat::Identity(d, d);
  for (std::size_t k = 0; k < pairs.size(); ++k)
    rot = rot * givens_rotation(d, pairs[k].first, pairs[k].second, theta[k]);
  return rot;
}

// d(rotation)/d(theta_k) for every k, via prefix/suffix partial products.
inline std::vector<Mat> rotation_derivatives(const Vec& theta, int d) {
  const auto pairs = rotation_index_pairs(d);
  const int m = static_cast<int>(pairs.size());
  if (theta.size() != m)
    throw std::invalid_argument("rotation_derivatives: wrong theta length");
  std::vector<Mat> factors(m);
  for (int k = 0; k < m; ++k)
    factors[k] = givens_rotation(d, pairs[k].first, pairs[k].second, theta[k]);
  std::vector<Mat> prefix(m + 1), suffix(m + 1);
  prefix[0] = Mat::Identity(d, d);
  for (int k = 0; k < m; ++k) prefix[k + 1] = prefix[k] * factors[k];
  suffix[m] = Mat::Identity(d, d);
  for (int k = m - 1; k >= 0; --k) suffix[k] = factors[k] * suffix[k + 1];

  std::vector<Mat> derivs(m);
  for (int k = 0; k < m; ++k) {
    const auto [i, j] = pairs[k];
    Mat dg = Mat::Zero(d, d);
    const double c = std::cos(theta[k]), s = std::sin(theta[k]);
    dg(i, i) = -s;
    dg(j, j) = -s;
    dg(i, j) = -c;
    dg(j, i) = c;
    derivs[k] = prefix[k] * dg * suffix[k + 1];
  }
  return derivs;
}

// Rows of x are rotated, scaled per feature, then translated. Translation is
// a per-row vector addition: the diagonal-matrix reading is dimensionally
// inconsistent with an n-by-d data matrix and the NCA correspondence forces
// the broadcast form.
inline Mat apply_mapping(const Mat& x, const MappingParams& params) {
  const int d = params.dim();
  if (x.cols() != d)
    throw std::invalid_argument("apply_mapping: feature dimension mismatch");
  const Mat rot = assemble_rotation(params.theta, d);
  Mat out = (x * rot.transpose()) * params.s.asDiagonal();
  out.rowwise() += params.t.transpose();
  return out;
}

inline Vec apply_mapping_row(const Vec& x, const MappingParams& params) {
  const Mat rot = assemble_rotation(params.theta, params.dim());
  return params.s.cwiseProduct(rot * x) + params.t;
}

// Analytic inverse of apply_mapping; valid whenever all scales are non-zero.
inline Mat inverse_mapping(const Mat& xhat, const MappingParams& params) {
  const int d = params.dim();
  const Mat rot = assemble_rotation(params.theta, d);
  Mat centered = xhat.rowwise() - params.t.transpose();
  return (centered * params.s.cwiseInverse().asDiagonal()) * rot;
}

// Per-feature mean and standard deviation of normal-condition data.
struct NormalStats {
  Vec mean;
  Vec std;
};

inline NormalStats normal_stats(const Mat& x) {
  if (x.rows() < 2) throw std::invalid_argument("normal_stats: need >= 2 rows");
  NormalStats st;
  st.mean = x.colwise().mean();
  Mat centered = x.rowwise() - st.mean.transpose();
  st.std = (centered.array().square().colwise().sum() / (x.rows() - 1))
               .sqrt()
               .matrix();
  if ((st.std.array() <= 0.0).any())
    throw std::invalid_argument("normal_stats: zero standard deviation");
  return st;
}

inline Mat standardize_source(const Mat& x, const NormalStats& stats) {
  if ((stats.std.array() == 0.0).any())
    throw std::invalid_argument("standardize_source: zero std");
  Mat centered = x.rowwise() - stats.mean.transpose();
  return centered * stats.std.cwiseInverse().asDiagonal();
}

// Normal-condition alignment: rescale target features so the statistics of
// the undamaged-state data match the source.
inline Mat nca_transform(const Mat& x_t, const NormalStats& source_stats,
                         const NormalStats& target_stats) {
  if ((target_stats.std.array() == 0.0).any())
    throw std::invalid_argument("nca_transform: zero target std");
  Mat centered = x_t.rowwise() - target_stats.mean.transpose();
  Mat scaled = centered * (source_stats.std.cwiseQuotient(target_stats.std))
                              .asDiagonal();
  return scaled.rowwise() + source_stats.mean.transpose();
}

// The NCA map expressed in the mapping family: scale sigma_s/sigma_t,
// translation mu_s - mu_t .* (sigma_s/sigma_t), zero rotation.
inline std::pair<Vec, Vec> nca_prior_means(const NormalStats& source_stats,
                                           const NormalStats& target_stats) {
  if ((target_stats.std.array() == 0.0).any())
    throw std::invalid_argument("nca_prior_means: zero target std");
  Vec mu_s = source_stats.std.cwiseQuotient(target_stats.std);
  Vec mu_t = source_stats.mean - target_stats.mean.cwiseProduct(mu_s);
  return {mu_s, mu_t};
}

// Prior over the mapping: truncated normals on scale and rotation, normals
// on translation. Means are per component; the NCA means feed mu_s and mu_t.
struct MappingPrior {
  Vec mu_s, sigma_s;
  Vec mu_t, sigma_t;
  Vec mu_theta, sigma_theta;
  Interval s_bounds{0.0, kInf};
  Interval theta_bounds{-M_PI / 4.0, M_PI / 4.0};

  static MappingPrior make(Vec mu_s, Vec mu_t, int d, double sigma_s,
                           double sigma_t, double sigma_theta,
                           Interval s_bounds = {0.0, kInf},
                           Interval theta_bounds = {-M_PI / 4.0, M_PI / 4.0}) {
    MappingPrior prior;
    const int m = num_rotation_angles(d);
    prior.mu_s = std::move(mu_s);
    prior.mu_t = std::move(mu_t);
    prior.mu_theta = Vec::Zero(m);
    prior.sigma_s = Vec::Constant(d, sigma_s);
    prior.sigma_t = Vec::Constant(d, sigma_t);
    prior.sigma_theta = Vec::Constant(m, sigma_theta);
    prior.s_bounds = s_bounds;
    prior.theta_bounds = theta_bounds;
    if (sigma_s <= 0 || sigma_t <= 0 || sigma_theta <= 0)
      throw std::invalid_argument("MappingPrior: sigmas must be positive");
    return prior;
  }
};

// Log density of a normal truncated to [lo, hi] (closed at the bounds).
inline double log_truncnorm_pdf(double x, double mu, double sigma, double lo,
                                double hi) {
  if (x < lo || x > hi) return kNegInf;
  const double alpha = (lo - mu) / sigma;
  const double beta = (hi - mu) / sigma;
  double z;
  if (alpha > 0.0) {
    z = normal_cdf(-alpha) - normal_cdf(-beta);
  } else {
    z = normal_cdf(beta) - normal_cdf(alpha);
  }
  return log_normal_pdf(x, mu, sigma) - std::log(z);
}

// Closed-form mean of a truncated normal, used as a sampling oracle.
inline double truncnorm_mean(double mu, double sigma, double lo, double hi) {
  const double alpha = (lo - mu) / sigma;
  const double beta = (hi - mu) / sigma;
  auto phi = [](double z) {
    return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
  };
  const double z = normal_cdf(beta) - normal_cdf(alpha);
  return mu + sigma * (phi(alpha) - phi(beta)) / z;
}

inline double log_prior(const MappingParams& params,
                        const MappingPrior& prior) {
  double lp = 0.0;
  for (int i = 0; i < params.s.size(); ++i)
    lp += log_truncnorm_pdf(params.s[i], prior.mu_s[i], prior.sigma_s[i],
                            prior.s_bounds.lo, prior.s_bounds.hi);
  for (int i = 0; i < params.t.size(); ++i)
    lp += log_normal_pdf(params.t[i], prior.mu_t[i], prior.sigma_t[i]);
  for (int i = 0; i < params.theta.size(); ++i)
    lp += log_truncnorm_pdf(params.theta[i], prior.mu_theta[i],
                            prior.sigma_theta[i], prior.theta_bounds.lo,
                            prior.theta_bounds.hi);
  return lp;
}

struct MappingGrad {
  Vec s, t, theta;
};

// Gradient of log_prior in the constrained space; the truncation normalizer
// does not depend on the parameter, so each term is Gaussian.
inline MappingGrad log_prior_grad(const MappingParams& params,
                                  const MappingPrior& prior) {
  MappingGrad g;
  g.s = -(params.s - prior.mu_s).cwiseQuotient(prior.sigma_s.cwiseAbs2());
  g.t = -(params.t - prior.mu_t).cwiseQuotient(prior.sigma_t.cwiseAbs2());
  g.theta = -(params.theta - prior.mu_theta)
                 .cwiseQuotient(prior.sigma_theta.cwiseAbs2());
  return g;
}

}  // namespace darvm
