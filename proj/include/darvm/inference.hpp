#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "darvm/mapping.hpp"
#include "darvm/rvm.hpp"

namespace darvm {

// Latent state of the joint model: the affine mapping plus the classifier
// weights and their precisions.
struct ModelState {
  MappingParams mapping;
  Mat weights;     // C x n_r
  Mat precisions;  // C x n_r
};

struct SamplerConfig {
  int warmup = 1000;
  int draws = 1000;
  int chains = 1;
  double target_accept = 0.8;
  int max_depth = 10;
  std::uint64_t seed = 0;
  bool sample_precisions = true;
  // Optional warm-start for the adaptation: a previous run's mass matrix and
  // step size (empty / zero means start fresh).
  Vec init_inv_mass;
  double init_step = 0.0;

  void validate() const {
    if (warmup < 1 || draws < 1 || chains < 1 || max_depth < 1)
      throw std::invalid_argument("SamplerConfig: counts must be >= 1");
    if (target_accept <= 0.0 || target_accept >= 1.0)
      throw std::invalid_argument("SamplerConfig: target_accept in (0,1)");
  }
};

struct SamplerDiagnostics {
  int divergences = 0;
  double mean_accept = 0.0;
  double step_size = 0.0;
  Vec inv_mass;    // adapted diagonal inverse mass (last chain)
  Vec split_rhat;  // per unconstrained coordinate; empty for one chain
  std::vector<std::string> warnings;
};

struct PosteriorSet {
  std::vector<ModelState> draws;
  SamplerDiagnostics diagnostics;
};

namespace transform {

// Smooth bijections from the real line onto each constrained support, with
// the log-Jacobian terms the sampler needs.
struct CoordMap {
  double value;        // constrained value
  double dvalue_dz;    // d value / d z
  double log_jac;      // log |d value / d z|
  double dlogjac_dz;   // d log_jac / d z
};

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline CoordMap constrain(double z, const Interval& bounds) {
  CoordMap out;
  const bool lo_fin = std::isfinite(bounds.lo);
  const bool hi_fin = std::isfinite(bounds.hi);
  if (!lo_fin && !hi_fin) {
    out = {z, 1.0, 0.0, 0.0};
  } else if (lo_fin && !hi_fin) {
    const double e = std::exp(z);
    out = {bounds.lo + e, e, z, 1.0};
  } else if (!lo_fin && hi_fin) {
    const double e = std::exp(z);
    out = {bounds.hi - e, -e, z, 1.0};
  } else {
    const double sig = sigmoid(z);
    const double width = bounds.hi - bounds.lo;
    out.value = bounds.lo + width * sig;
    out.dvalue_dz = width * sig * (1.0 - sig);
    out.log_jac = std::log(width) + std::log(sig) + std::log1p(-sig);
    out.dlogjac_dz = 1.0 - 2.0 * sig;
  }
  return out;
}

inline double unconstrain(double v, const Interval& bounds) {
  const bool lo_fin = std::isfinite(bounds.lo);
  const bool hi_fin = std::isfinite(bounds.hi);
  if (!lo_fin && !hi_fin) return v;
  if (lo_fin && !hi_fin) return std::log(v - bounds.lo);
  if (!lo_fin && hi_fin) return std::log(bounds.hi - v);
  const double p = (v - bounds.lo) / (bounds.hi - bounds.lo);
  return std::log(p) - std::log1p(-p);
}

}  // namespace transform

// Joint density of the model: mapping prior, weight and precision priors,
// and categorical likelihoods of the source labels and of the target labels
// after the target features pass through the mapping. The source kernel
// matrix is fixed by the relevance vectors and precomputed once.
class JointModel {
 public:
  JointModel(const Dataset& source, const Dataset& target_labelled,
             MappingPrior prior, GammaHyper hyper, KernelSpec kernel,
             Mat relevance_vectors, bool sample_precisions = true,
             Mat frozen_precisions = Mat())
      : prior_(std::move(prior)),
        hyper_(std::move(hyper)),
        kernel_(kernel),
        rv_(std::move(relevance_vectors)),
        sample_precisions_(sample_precisions),
        frozen_precisions_(std::move(frozen_precisions)),
        d_(static_cast<int>(rv_.cols())),
        m_(num_rotation_angles(static_cast<int>(rv_.cols()))),
        n_r_(static_cast<int>(rv_.rows())),
        num_classes_(source.label_space.num_classes()) {
    hyper_.validate();
    set_source(source);
    set_target(target_labelled);
    if (num_classes_ == 0 && n_r_ > 0)
      throw std::invalid_argument("JointModel: relevance vectors without classes");
  }

  // Prior-only construction over the mapping alone (no classifier block).
  JointModel(MappingPrior prior, int d)
      : prior_(std::move(prior)),
        kernel_{1.0},
        rv_(Mat(0, d)),
        sample_precisions_(false),
        frozen_precisions_(Mat(0, 0)),
        d_(d),
        m_(num_rotation_angles(d)),
        n_r_(0),
        num_classes_(0) {
    x_target_.resize(0, d);
  }

  int dim() const {
    return 2 * d_ + m_ + (sample_precisions_ ? 2 : 1) * num_classes_ * n_r_;
  }

  // Heuristic diagonal inverse mass from the prior scales and the likelihood
  // curvature at the initial state; warmup adaptation refines it.
  Vec preconditioner(const ModelState& init) const {
    Vec inv_mass = Vec::Ones(dim());
    const Vec z = to_unconstrained(init);
    int at = 0;
    for (int i = 0; i < d_; ++i) {
      const auto map = transform::constrain(z[at], prior_.s_bounds);
      const double dv = std::max(std::abs(map.dvalue_dz), 1e-3);
      inv_mass[at++] = std::pow(prior_.sigma_s[i] / dv, 2);
    }
    for (int i = 0; i < d_; ++i)
      inv_mass[at++] = prior_.sigma_t[i] * prior_.sigma_t[i];
    for (int i = 0; i < m_; ++i) {
      const auto map = transform::constrain(z[at], prior_.theta_bounds);
      const double dv = std::max(std::abs(map.dvalue_dz), 1e-3);
      inv_mass[at++] = std::pow(prior_.sigma_theta[i] / dv, 2);
    }
    if (n_r_ > 0) {
      Vec curvature = Vec::Zero(n_r_);
      if (k_source_.rows() > 0)
        curvature = 0.25 * k_source_.array().square().colwise().sum();
      if (sample_precisions_) {
        // xi coordinates: unit prior variance, likelihood curvature scaled
        // by 1/alpha.
        for (int c = 0; c < num_classes_; ++c)
          for (int j = 0; j < n_r_; ++j)
            inv_mass[at++] =
                1.0 / (1.0 + curvature[j] / init.precisions(c, j));
        for (int c = 0; c < num_classes_; ++c)
          for (int j = 0; j < n_r_; ++j) inv_mass[at++] = 0.5;
      } else {
        for (int c = 0; c < num_classes_; ++c)
          for (int j = 0; j < n_r_; ++j)
            inv_mass[at++] =
                1.0 / (init.precisions(c, j) + curvature[j] + 1.0);
      }
    }
    return inv_mass.cwiseMax(1e-6).cwiseMin(1e2);
  }
  int num_classes() const { return num_classes_; }
  int num_vectors() const { return n_r_; }
  int feature_dim() const { return d_; }
  const Mat& relevance_vectors() const { return rv_; }
  const KernelSpec& kernel() const { return kernel_; }
  const MappingPrior& prior() const { return prior_; }
  bool samples_precisions() const { return sample_precisions_; }

  void set_target(const Dataset& target_labelled) {
    const int n = target_labelled.size();
    x_target_.resize(n, d_);
    y_target_.resize(n);
    for (int i = 0; i < n; ++i) {
      if (!target_labelled.labels[i])
        throw std::invalid_argument("JointModel: unlabelled target row");
      x_target_.row(i) = target_labelled.features.row(i);
      y_target_[i] = *target_labelled.labels[i];
    }
  }

  // Log joint in the constrained space; -inf signals out of support.
  double log_joint(const ModelState& state) const {
    double lp = log_prior(state.mapping, prior_);
    if (!std::isfinite(lp)) return kNegInf;
    if (n_r_ > 0) {
      if ((state.precisions.array() <= 0.0).any()) return kNegInf;
      lp += weight_prior(state.weights, state.precisions);
      lp += precision_prior(state.precisions);
      lp += likelihood(state);
    }
    return lp;
  }

  // Log density over the unconstrained coordinates, including the Jacobian
  // of the constraining transforms; optionally fills the analytic gradient.
  double log_density(const Vec& z, Vec* grad = nullptr) const;

  // When the precisions are sampled, the weights use the non-centered
  // coordinates xi = w * sqrt(alpha): the weight prior becomes a unit
  // normal, which removes the weight/precision funnel for coordinates the
  // data barely pin down. With frozen precisions the weights stay raw.
  Vec to_unconstrained(const ModelState& state) const {
    Vec z(dim());
    int at = 0;
    for (int i = 0; i < d_; ++i)
      z[at++] = transform::unconstrain(state.mapping.s[i], prior_.s_bounds);
    for (int i = 0; i < d_; ++i) z[at++] = state.mapping.t[i];
    for (int i = 0; i < m_; ++i)
      z[at++] =
          transform::unconstrain(state.mapping.theta[i], prior_.theta_bounds);
    for (int c = 0; c < num_classes_; ++c)
      for (int j = 0; j < n_r_; ++j)
        z[at++] = sample_precisions_
                      ? state.weights(c, j) * std::sqrt(state.precisions(c, j))
                      : state.weights(c, j);
    if (sample_precisions_)
      for (int c = 0; c < num_classes_; ++c)
        for (int j = 0; j < n_r_; ++j)
          z[at++] = std::log(state.precisions(c, j));
    return z;
  }

  ModelState from_unconstrained(const Vec& z) const {
    ModelState state;
    int at = 0;
    state.mapping.s.resize(d_);
    for (int i = 0; i < d_; ++i)
      state.mapping.s[i] = transform::constrain(z[at++], prior_.s_bounds).value;
    state.mapping.t.resize(d_);
    for (int i = 0; i < d_; ++i) state.mapping.t[i] = z[at++];
    state.mapping.theta.resize(m_);
    for (int i = 0; i < m_; ++i)
      state.mapping.theta[i] =
          transform::constrain(z[at++], prior_.theta_bounds).value;
    state.weights.resize(num_classes_, n_r_);
    for (int c = 0; c < num_classes_; ++c)
      for (int j = 0; j < n_r_; ++j) state.weights(c, j) = z[at++];
    if (sample_precisions_) {
      state.precisions.resize(num_classes_, n_r_);
      for (int c = 0; c < num_classes_; ++c)
        for (int j = 0; j < n_r_; ++j)
          state.precisions(c, j) = std::exp(z[at++]);
      state.weights.array() /= state.precisions.array().sqrt();
    } else {
      state.precisions = frozen_precisions_;
    }
    return state;
  }

 private:
  void set_source(const Dataset& source) {
    if (source.size() > 0 && n_r_ > 0) {
      k_source_ = kernel_matrix(source.features, rv_, kernel_);
      y_source_.resize(source.size());
      for (int i = 0; i < source.size(); ++i) {
        if (!source.labels[i])
          throw std::invalid_argument("JointModel: unlabelled source row");
        y_source_[i] = *source.labels[i];
      }
    } else {
      k_source_.resize(0, n_r_);
    }
  }

  double weight_prior(const Mat& w, const Mat& a) const {
    return 0.5 * a.array().log().sum() -
           0.5 * (a.array() * w.array().square()).sum() -
           0.5 * w.size() * std::log(2.0 * M_PI);
  }

  double precision_prior(const Mat& a) const {
    const double norm = hyper_.a * std::log(hyper_.b) - std::lgamma(hyper_.a);
    return a.size() * norm + (hyper_.a - 1.0) * a.array().log().sum() -
           hyper_.b * a.sum();
  }

  // Categorical log-likelihood of a block of kernelized rows.
  static double block_log_lik(const Mat& k, const Mat& w,
                              const std::vector<int>& y) {
    const Mat gamma = k * w.transpose();
    double ll = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const Vec row = gamma.row(i).transpose();
      ll += row[y[i]] - log_sum_exp(row);
    }
    return ll;
  }

  double likelihood(const ModelState& state) const {
    double ll = 0.0;
    if (k_source_.rows() > 0)
      ll += block_log_lik(k_source_, state.weights, y_source_);
    if (x_target_.rows() > 0) {
      const Mat mapped = apply_mapping(x_target_, state.mapping);
      const Mat k_t = kernel_matrix(mapped, rv_, kernel_);
      ll += block_log_lik(k_t, state.weights, y_target_);
    }
    return ll;
  }

  MappingPrior prior_;
  GammaHyper hyper_;
  KernelSpec kernel_;
  Mat rv_;
  bool sample_precisions_;
  Mat frozen_precisions_;
  int d_, m_, n_r_, num_classes_;
  Mat k_source_;
  std::vector<int> y_source_;
  Mat x_target_;
  std::vector<int> y_target_;
};

inline double JointModel::log_density(const Vec& z, Vec* grad) const {
  if (z.size() != dim())
    throw std::invalid_argument("log_density: dimension mismatch");
  int at = 0;
  std::vector<transform::CoordMap> s_map(d_), theta_map(m_);
  MappingParams mapping;
  mapping.s.resize(d_);
  mapping.t.resize(d_);
  mapping.theta.resize(m_);
  double log_jac = 0.0;
  for (int i = 0; i < d_; ++i) {
    s_map[i] = transform::constrain(z[at++], prior_.s_bounds);
    mapping.s[i] = s_map[i].value;
    log_jac += s_map[i].log_jac;
  }
  for (int i = 0; i < d_; ++i) mapping.t[i] = z[at++];
  for (int i = 0; i < m_; ++i) {
    theta_map[i] = transform::constrain(z[at++], prior_.theta_bounds);
    mapping.theta[i] = theta_map[i].value;
    log_jac += theta_map[i].log_jac;
  }
  Mat w(num_classes_, n_r_), a(num_classes_, n_r_);
  Mat xi(num_classes_, n_r_);
  for (int c = 0; c < num_classes_; ++c)
    for (int j = 0; j < n_r_; ++j) xi(c, j) = z[at++];
  if (sample_precisions_) {
    for (int c = 0; c < num_classes_; ++c)
      for (int j = 0; j < n_r_; ++j) a(c, j) = std::exp(z[at++]);
    w = xi.cwiseQuotient(a.cwiseSqrt());
  } else {
    a = frozen_precisions_;
    w = xi;
  }

  // Prior terms and their constrained-space gradients.
  double lp = 0.0;
  MappingGrad g{Vec::Zero(d_), Vec::Zero(d_), Vec::Zero(m_)};
  for (int i = 0; i < d_; ++i) {
    lp += log_truncnorm_pdf(mapping.s[i], prior_.mu_s[i], prior_.sigma_s[i],
                            prior_.s_bounds.lo, prior_.s_bounds.hi);
    g.s[i] = -(mapping.s[i] - prior_.mu_s[i]) /
             (prior_.sigma_s[i] * prior_.sigma_s[i]);
    lp += log_normal_pdf(mapping.t[i], prior_.mu_t[i], prior_.sigma_t[i]);
    g.t[i] = -(mapping.t[i] - prior_.mu_t[i]) /
             (prior_.sigma_t[i] * prior_.sigma_t[i]);
  }
  for (int i = 0; i < m_; ++i) {
    lp += log_truncnorm_pdf(mapping.theta[i], prior_.mu_theta[i],
                            prior_.sigma_theta[i], prior_.theta_bounds.lo,
                            prior_.theta_bounds.hi);
    g.theta[i] = -(mapping.theta[i] - prior_.mu_theta[i]) /
                 (prior_.sigma_theta[i] * prior_.sigma_theta[i]);
  }

  // Likelihood gradients accumulate with respect to the raw weights; the
  // chain rule into the sampling coordinates happens at the end.
  Mat g_w = Mat::Zero(num_classes_, n_r_);
  if (n_r_ > 0) {
    if (sample_precisions_) {
      // Non-centered: unit-normal prior on xi, Gamma prior and log-Jacobian
      // on alpha (the determinant of (xi,u) -> (w,alpha) adds u/2 on top of
      // the u/2 from the weight prior).
      lp += -0.5 * xi.array().square().sum() -
            0.5 * xi.size() * std::log(2.0 * M_PI);
      lp += precision_prior(a);
      log_jac += a.array().log().sum();
    } else {
      lp += weight_prior(w, a);
      lp += precision_prior(a);
      g_w -= (a.array() * w.array()).matrix();
    }

    if (k_source_.rows() > 0) {
      Mat gamma = k_source_ * w.transpose();
      for (int i = 0; i < gamma.rows(); ++i) {
        const Vec row = gamma.row(i).transpose();
        const double lse = log_sum_exp(row);
        lp += row[y_source_[i]] - lse;
        Vec p = (row.array() - lse).exp().matrix();
        p[y_source_[i]] -= 1.0;
        g_w.noalias() -= p * k_source_.row(i);
      }
    }

    if (x_target_.rows() > 0) {
      const Mat rot = assemble_rotation(mapping.theta, d_);
      const Mat rotated = x_target_ * rot.transpose();  // rows = (rot x_j)'
      Mat mapped = rotated * mapping.s.asDiagonal();
      mapped.rowwise() += mapping.t.transpose();
      const Mat k_t = kernel_matrix(mapped, rv_, kernel_);
      const int n_t = static_cast<int>(x_target_.rows());
      Mat resid(n_t, num_classes_);  // one-hot minus softmax
      Mat gamma = k_t * w.transpose();
      for (int i = 0; i < n_t; ++i) {
        const Vec row = gamma.row(i).transpose();
        const double lse = log_sum_exp(row);
        lp += row[y_target_[i]] - lse;
        Vec p = (row.array() - lse).exp().matrix();
        resid.row(i) = -p.transpose();
        resid(i, y_target_[i]) += 1.0;
      }
      g_w.noalias() += resid.transpose() * k_t;

      // dL/dK_t flows into the mapping parameters.
      const Mat dl_dk = resid * w;  // n_t x n_r
      const Mat e =
          (-2.0 * kernel_.bandwidth) * dl_dk.cwiseProduct(k_t);
      const Vec row_sums = e.rowwise().sum();
      Mat v = row_sums.asDiagonal() * mapped - e * rv_;  // dL/d mapped
      g.t += v.colwise().sum().transpose();
      g.s += v.cwiseProduct(rotated).colwise().sum().transpose();
      if (m_ > 0) {
        const auto d_rot = rotation_derivatives(mapping.theta, d_);
        const Mat v_scaled = v * mapping.s.asDiagonal();
        for (int l = 0; l < m_; ++l)
          g.theta[l] +=
              v_scaled.cwiseProduct(x_target_ * d_rot[l].transpose()).sum();
      }
    }
  }

  if (!std::isfinite(lp)) {
    if (grad) grad->setZero(dim());
    return kNegInf;
  }

  if (grad) {
    grad->resize(dim());
    int gi = 0;
    for (int i = 0; i < d_; ++i)
      (*grad)[gi++] = g.s[i] * s_map[i].dvalue_dz + s_map[i].dlogjac_dz;
    for (int i = 0; i < d_; ++i) (*grad)[gi++] = g.t[i];
    for (int i = 0; i < m_; ++i)
      (*grad)[gi++] =
          g.theta[i] * theta_map[i].dvalue_dz + theta_map[i].dlogjac_dz;
    if (sample_precisions_) {
      for (int c = 0; c < num_classes_; ++c)
        for (int j = 0; j < n_r_; ++j)
          (*grad)[gi++] = -xi(c, j) + g_w(c, j) / std::sqrt(a(c, j));
      // d/du of the Gamma term plus its Jacobians is a - b*alpha; the
      // likelihood contributes through w = xi * exp(-u/2).
      for (int c = 0; c < num_classes_; ++c)
        for (int j = 0; j < n_r_; ++j)
          (*grad)[gi++] = hyper_.a - hyper_.b * a(c, j) -
                          0.5 * w(c, j) * g_w(c, j);
    } else {
      for (int c = 0; c < num_classes_; ++c)
        for (int j = 0; j < n_r_; ++j) (*grad)[gi++] = g_w(c, j);
    }
  }
  return lp + log_jac;
}

}  // namespace darvm
