#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "darvm/dataset.hpp"

namespace darvm {

struct KernelSpec {
  double bandwidth = 1.0;  // multiplies the squared distance directly

  static KernelSpec for_dim(int d) { return KernelSpec{1.0 / d}; }
};

// K[i,j] = exp(-bandwidth * ||x_i - rv_j||^2)
inline Mat kernel_matrix(const Mat& x, const Mat& rv, const KernelSpec& kernel) {
  if (x.cols() != rv.cols())
    throw std::invalid_argument("kernel_matrix: dimension mismatch");
  Mat sq = -2.0 * (x * rv.transpose());
  sq.colwise() += x.rowwise().squaredNorm();
  sq.rowwise() += rv.rowwise().squaredNorm().transpose();
  return (-kernel.bandwidth * sq.array()).exp().min(1.0).matrix();
}

inline Vec kernel_row(const Vec& x, const Mat& rv, const KernelSpec& kernel) {
  if (x.size() != rv.cols())
    throw std::invalid_argument("kernel_row: dimension mismatch");
  return (-kernel.bandwidth *
          (rv.rowwise() - x.transpose()).rowwise().squaredNorm().array())
      .exp()
      .matrix();
}

struct GammaHyper {
  double a = 1e-4;  // shape
  double b = 1e-4;  // rate

  void validate() const {
    if (a <= 0 || b <= 0)
      throw std::invalid_argument("GammaHyper: parameters must be positive");
  }
};

// Multiclass RVM with relevance vectors restricted to source samples.
struct RvmModel {
  Mat relevance_vectors;  // n_r x d
  Mat weights;            // C x n_r
  Mat precisions;         // C x n_r, positive
  KernelSpec kernel;
  LabelSpace label_space;
  std::vector<int> active_index;  // original source row of each vector

  int num_classes() const { return static_cast<int>(weights.rows()); }
  int num_vectors() const { return static_cast<int>(weights.cols()); }
  int dim() const { return static_cast<int>(relevance_vectors.cols()); }
};

inline Vec logits(const RvmModel& model, const Vec& k_row) {
  if (k_row.size() != model.num_vectors())
    throw std::invalid_argument("logits: kernel row length mismatch");
  return model.weights * k_row;
}

inline Vec predict_proba(const RvmModel& model, const Vec& x) {
  if (!x.allFinite())
    throw std::invalid_argument("predict_proba: non-finite features");
  return softmax(logits(model, kernel_row(x, model.relevance_vectors,
                                          model.kernel)));
}

inline Mat predict_proba_matrix(const RvmModel& model, const Mat& x) {
  const Mat k = kernel_matrix(x, model.relevance_vectors, model.kernel);
  Mat gamma = k * model.weights.transpose();
  Mat probs(gamma.rows(), gamma.cols());
  for (int i = 0; i < gamma.rows(); ++i)
    probs.row(i) = softmax(gamma.row(i).transpose()).transpose();
  return probs;
}

struct EmTrace {
  std::vector<double> objectives;
  // First objective index of each working-set phase; the EM ascent guarantee
  // holds within a phase (admitting a column charges its prior cost).
  std::vector<int> phase_starts;
  int iterations = 0;
  bool converged = false;
};

namespace detail {

inline double categorical_log_lik(const Mat& gamma,
                                  const std::vector<int>& y) {
  double ll = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const Vec row = gamma.row(i).transpose();
    ll += row[y[i]] - log_sum_exp(row);
  }
  return ll;
}

// Log marginal prior of a weight with its precision integrated out: a
// Student-t with 2a degrees of freedom and scale^2 = b/a. This is the
// objective EM ascends.
inline double log_marginal_weight_prior(double w, const GammaHyper& hyper) {
  return std::lgamma(hyper.a + 0.5) - std::lgamma(hyper.a) -
         0.5 * std::log(2.0 * M_PI * hyper.b) -
         (hyper.a + 0.5) * std::log1p(w * w / (2.0 * hyper.b));
}

}  // namespace detail

// Sparse EM fit on fully-labelled data. Relevance vectors enter a working
// set greedily, scored by the softmax log-likelihood gradient; within the
// working set the fit alternates damped-Newton MAP weight updates with the
// posterior-mean precision re-estimation alpha <- (1 + 2a) / (w^2 + 2b).
// Running the precision update jointly over all columns collapses every
// weight on correlated kernel bases, so selection is constructive: columns
// outside the working set keep weight exactly zero and the cap precision.
inline RvmModel fit_em(const Dataset& source, const KernelSpec& kernel,
                       const GammaHyper& hyper, double tol = 1e-4,
                       int max_iter = 200, EmTrace* trace = nullptr) {
  hyper.validate();
  const int n = source.size();
  const int num_classes = source.label_space.num_classes();
  if (n == 0) throw std::invalid_argument("fit_em: empty dataset");
  std::vector<int> y(n);
  std::vector<bool> present(num_classes, false);
  for (int i = 0; i < n; ++i) {
    if (!source.labels[i])
      throw std::invalid_argument("fit_em: unlabelled observation");
    y[i] = *source.labels[i];
    present[y[i]] = true;
  }
  if (std::count(present.begin(), present.end(), true) < 2)
    throw std::invalid_argument("fit_em: need at least two classes");

  const Mat k = kernel_matrix(source.features, source.features, kernel);
  const double alpha_cap = (1.0 + 2.0 * hyper.a) / (2.0 * hyper.b);

  std::vector<int> active;
  Mat w_active(num_classes, 0);  // weights of the working set
  Mat a_active(num_classes, 0);
  Mat gamma = Mat::Zero(n, num_classes);

  auto probs_of = [&](const Mat& g) {
    Mat p(n, num_classes);
    for (int i = 0; i < n; ++i)
      p.row(i) = softmax(g.row(i).transpose()).transpose();
    return p;
  };
  auto log_lik = [&](const Mat& g) {
    return detail::categorical_log_lik(g, y);
  };
  // Objective over all n columns; inactive weights sit exactly at zero.
  auto marginal_objective = [&]() {
    double obj = log_lik(gamma) +
                 static_cast<double>(num_classes) * n *
                     detail::log_marginal_weight_prior(0.0, hyper);
    for (int c = 0; c < num_classes; ++c)
      for (std::size_t j = 0; j < active.size(); ++j)
        obj += detail::log_marginal_weight_prior(w_active(c, j), hyper) -
               detail::log_marginal_weight_prior(0.0, hyper);
    return obj;
  };

  if (trace) trace->objectives.push_back(marginal_objective());

  // Inner EM on the working set: damped Newton per class to the MAP, then
  // the precision update, until the weights settle.
  int total_iters = 0;
  bool converged = true;
  auto refit_active = [&]() {
    const int m = static_cast<int>(active.size());
    Mat k_act(n, m);
    for (int j = 0; j < m; ++j) k_act.col(j) = k.col(active[j]);
    auto penalized = [&](const Mat& weights, const Mat& g) {
      return log_lik(g) -
             0.5 * (a_active.array() * weights.array().square()).sum();
    };
    converged = false;
    for (int iter = 0; iter < max_iter; ++iter) {
      const Mat w_before = w_active;
      for (int cycle = 0; cycle < 50; ++cycle) {
        double max_move = 0.0;
        for (int c = 0; c < num_classes; ++c) {
          const Mat p = probs_of(gamma);
          Vec resid(n);
          for (int i = 0; i < n; ++i)
            resid[i] = (y[i] == c ? 1.0 : 0.0) - p(i, c);
          Vec grad =
              k_act.transpose() * resid -
              a_active.row(c).transpose().cwiseProduct(
                  w_active.row(c).transpose());
          Vec d = p.col(c).cwiseProduct((1.0 - p.col(c).array()).matrix());
          Mat hess = k_act.transpose() * d.asDiagonal() * k_act;
          hess.diagonal() += a_active.row(c).transpose();
          Vec step = hess.ldlt().solve(grad);
          const double before = penalized(w_active, gamma);
          const Vec k_step = k_act * step;
          double scale = 1.0;
          for (int half = 0; half < 30; ++half) {
            Mat w_try = w_active;
            w_try.row(c) += scale * step.transpose();
            Mat gamma_try = gamma;
            gamma_try.col(c) += scale * k_step;
            const double after = penalized(w_try, gamma_try);
            if (std::isfinite(after) && after >= before) {
              w_active = std::move(w_try);
              gamma = std::move(gamma_try);
              max_move =
                  std::max(max_move, scale * step.cwiseAbs().maxCoeff());
              break;
            }
            scale *= 0.5;
          }
        }
        if (max_move < 1e-7 * std::max(1.0, w_active.cwiseAbs().maxCoeff()))
          break;
      }
      a_active = ((1.0 + 2.0 * hyper.a) /
                  (w_active.array().square() + 2.0 * hyper.b))
                     .matrix();
      const double obj = marginal_objective();
      if (!std::isfinite(obj))
        throw std::runtime_error("fit_em: non-finite objective");
      if (trace) trace->objectives.push_back(obj);
      ++total_iters;
      const double w_scale = std::max(w_active.cwiseAbs().maxCoeff(), 1e-12);
      const double delta =
          m == 0 ? 0.0
                 : (w_active - w_before).cwiseAbs().maxCoeff() / w_scale;
      if (delta < tol) {
        converged = true;
        break;
      }
    }
  };

  // Greedy growth: admit the column with the largest likelihood gradient,
  // keep it if the fit still improves materially after the inner EM has had
  // its say (the precision update shrinks spurious contributions away, so
  // stale columns stop paying their way and growth terminates).
  const double gain_tol = 0.05;
  std::vector<bool> tried(n, false);
  double current_ll = log_lik(gamma);
  int rejections = 0;
  for (int round = 0; round < n && rejections < 3; ++round) {
    const Mat p = probs_of(gamma);
    Mat resid = -p;
    for (int i = 0; i < n; ++i) resid(i, y[i]) += 1.0;
    const Mat score = resid.transpose() * k;  // C x n likelihood gradients
    int best = -1;
    double best_score = 0.0;
    for (int j = 0; j < n; ++j) {
      if (tried[j]) continue;
      const double s = score.col(j).cwiseAbs().maxCoeff();
      if (s > best_score) {
        best_score = s;
        best = j;
      }
    }
    if (best < 0) break;
    tried[best] = true;

    const auto saved_active = active;
    const Mat saved_w = w_active, saved_a = a_active, saved_gamma = gamma;
    active.push_back(best);
    w_active.conservativeResize(Eigen::NoChange, active.size());
    w_active.col(active.size() - 1).setZero();
    a_active.conservativeResize(Eigen::NoChange, active.size());
    a_active.col(active.size() - 1).setOnes();
    const std::size_t trace_mark = trace ? trace->objectives.size() : 0;
    if (trace) trace->phase_starts.push_back(static_cast<int>(trace_mark));
    refit_active();
    const double new_ll = log_lik(gamma);
    // A classifier needs at least one relevance vector; greedy gains are not
    // monotone, so allow a few rejected candidates before stopping.
    if (new_ll - current_ll < gain_tol && active.size() > 1) {
      active = saved_active;
      w_active = saved_w;
      a_active = saved_a;
      gamma = saved_gamma;
      if (trace) {
        trace->objectives.resize(trace_mark);
        trace->phase_starts.pop_back();
      }
      ++rejections;
      continue;
    }
    rejections = 0;
    current_ll = new_ll;
  }

  if (trace) {
    trace->iterations = total_iters;
    trace->converged = converged;
  }

  RvmModel model;
  model.relevance_vectors = source.features;
  model.weights = Mat::Zero(num_classes, n);
  model.precisions = Mat::Constant(num_classes, n, alpha_cap);
  for (std::size_t j = 0; j < active.size(); ++j) {
    model.weights.col(active[j]) = w_active.col(j);
    model.precisions.col(active[j]) = a_active.col(j);
  }
  model.kernel = kernel;
  model.label_space = source.label_space;
  model.active_index.resize(n);
  std::iota(model.active_index.begin(), model.active_index.end(), 0);
  return model;
}

// Drops relevance vectors whose largest absolute weight across classes falls
// below the threshold.
inline RvmModel prune(const RvmModel& model, double threshold = 1e-5) {
  if (threshold < 0) throw std::invalid_argument("prune: negative threshold");
  std::vector<int> keep;
  for (int j = 0; j < model.num_vectors(); ++j)
    if (model.weights.col(j).cwiseAbs().maxCoeff() >= threshold)
      keep.push_back(j);
  if (keep.empty())
    throw std::runtime_error("prune: all relevance vectors removed");
  RvmModel out;
  out.kernel = model.kernel;
  out.label_space = model.label_space;
  out.relevance_vectors.resize(keep.size(), model.dim());
  out.weights.resize(model.num_classes(), keep.size());
  out.precisions.resize(model.num_classes(), keep.size());
  out.active_index.reserve(keep.size());
  for (std::size_t k = 0; k < keep.size(); ++k) {
    out.relevance_vectors.row(k) = model.relevance_vectors.row(keep[k]);
    out.weights.col(k) = model.weights.col(keep[k]);
    out.precisions.col(k) = model.precisions.col(keep[k]);
    out.active_index.push_back(model.active_index[keep[k]]);
  }
  return out;
}

namespace detail {

inline nlohmann::json matrix_to_json(const Mat& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Mat matrix_from_json(const nlohmann::json& j) {
  const int rows = static_cast<int>(j.size());
  const int cols = rows == 0 ? 0 : static_cast<int>(j[0].size());
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  return m;
}

}  // namespace detail

inline nlohmann::json model_to_json(const RvmModel& model) {
  nlohmann::json j;
  j["kernel"] = {{"kind", "gaussian"}, {"bandwidth", model.kernel.bandwidth}};
  j["label_space"] = {{"classes", model.label_space.classes},
                      {"merge_groups", model.label_space.merge_groups}};
  j["relevance_vectors"] = detail::matrix_to_json(model.relevance_vectors);
  j["weights"] = detail::matrix_to_json(model.weights);
  j["precisions"] = detail::matrix_to_json(model.precisions);
  j["active_index"] = model.active_index;
  return j;
}

inline RvmModel model_from_json(const nlohmann::json& j) {
  RvmModel model;
  model.kernel.bandwidth = j.at("kernel").at("bandwidth").get<double>();
  model.label_space.classes =
      j.at("label_space").at("classes").get<std::vector<std::string>>();
  model.label_space.merge_groups = j.at("label_space")
                                       .at("merge_groups")
                                       .get<std::vector<std::vector<int>>>();
  model.relevance_vectors =
      detail::matrix_from_json(j.at("relevance_vectors"));
  model.weights = detail::matrix_from_json(j.at("weights"));
  model.precisions = detail::matrix_from_json(j.at("precisions"));
  model.active_index = j.at("active_index").get<std::vector<int>>();
  return model;
}

inline void save_model(const RvmModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_model: cannot write " + path);
  out << model_to_json(model).dump(2) << "\n";
}

inline RvmModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_model: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return model_from_json(j);
}

}  // namespace darvm
