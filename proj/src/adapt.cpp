#include "mokd/adapt.hpp"

#include "mokd/error.hpp"

#include <cmath>

namespace mokd {

namespace {

struct Transformed {
  Matrix v;       // theta applied, before normalisation
  Vector norms;   // row norms of v
  Matrix z;       // output rows
};

Transformed forward(const LinearHead& head, const Matrix& u, bool normalize) {
  check_embeddings(u);
  if (u.cols() != head.dim() || head.theta.cols() != head.dim()) {
    throw InvalidArgument("embedding dimension " + std::to_string(u.cols()) +
                          " does not match head dimension " + std::to_string(head.dim()));
  }
  Transformed t;
  t.v = u * head.theta.transpose();
  t.norms = t.v.rowwise().norm();
  t.z = t.v;
  if (normalize) {
    for (Eigen::Index i = 0; i < t.z.rows(); ++i) {
      if (t.norms(i) > 0.0) t.z.row(i) /= t.norms(i);
    }
  }
  return t;
}

// Pull a gradient with respect to Z back to theta.
Matrix backward(const Transformed& t, const Matrix& u, Matrix grad_z, bool normalize) {
  if (normalize) {
    for (Eigen::Index i = 0; i < grad_z.rows(); ++i) {
      const double n = t.norms(i);
      if (n > 0.0) {
        const double proj = t.z.row(i).dot(grad_z.row(i));
        grad_z.row(i) = (grad_z.row(i) - proj * t.z.row(i)) / n;
      } else {
        grad_z.row(i).setZero();
      }
    }
  }
  return grad_z.transpose() * u;
}

void check_mokd_inputs(const Matrix& z, const Labels& labels, double sigma_zy, double sigma_zz,
                       double gamma, KernelFamily family) {
  check_embeddings(z);
  if (z.rows() < 4) {
    throw InvalidArgument("insufficient samples for unbiased estimator (need m >= 4, got m=" +
                          std::to_string(z.rows()) + ")");
  }
  if (static_cast<Eigen::Index>(labels.size()) != z.rows()) {
    throw InvalidArgument("label count does not match sample count");
  }
  if (family == KernelFamily::CosineLinear) {
    throw InvalidArgument("the MOKD objective needs a radial kernel (gaussian or imq)");
  }
  KernelSpec{family, sigma_zy}.validate();
  if (gamma != 0.0) KernelSpec{family, sigma_zz}.validate();
  if (!(gamma >= 0.0)) throw InvalidArgument("gamma must be non-negative");
}

// Loss and d loss / d Z for the MOKD objective at fixed bandwidths.
double mokd_objective(const Matrix& z, const Labels& labels, double sigma_zy, double sigma_zz,
                      double gamma, KernelFamily family, Matrix* grad_z) {
  check_mokd_inputs(z, labels, sigma_zy, sigma_zz, gamma, family);
  const Eigen::Index m = z.rows();
  const Matrix lt = label_kernel_matrix(labels, 1.0, 0.0, true).data;
  const Matrix d2 = pairwise_sq_distances(z);

  const Matrix k_zy = radial_gram(family, sigma_zy, d2, true);
  double loss = -hsic_unbiased(k_zy, lt);
  Matrix k_zz;
  if (gamma != 0.0) {
    k_zz = radial_gram(family, sigma_zz, d2, true);
    loss += gamma * hsic_unbiased(k_zz, k_zz);
  }
  if (grad_z == nullptr) return loss;

  // W[i,j] = d loss / d r2_ij, summed over both HSIC terms.
  const Matrix g_zy = hsic_kernel_gradient(lt);
  Matrix g_zz;
  if (gamma != 0.0) g_zz = 2.0 * hsic_kernel_gradient(k_zz);
  Matrix w = Matrix::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      if (i == j) continue;
      double v = -g_zy(i, j) * radial_derivative(family, sigma_zy, d2(i, j));
      if (gamma != 0.0) v += gamma * g_zz(i, j) * radial_derivative(family, sigma_zz, d2(i, j));
      w(i, j) = v;
    }
  }
  const Vector w1 = w.rowwise().sum();
  *grad_z = 4.0 * (w1.asDiagonal() * z - w * z);
  return loss;
}

double ncc_objective(const Matrix& z, const Labels& labels, Matrix* grad_z) {
  check_embeddings(z);
  if (static_cast<Eigen::Index>(labels.size()) != z.rows()) {
    throw InvalidArgument("label count does not match sample count");
  }
  const int n_classes = count_classes(labels);
  if (n_classes < 2) throw InvalidArgument("NCC loss needs at least two classes");

  const Eigen::Index m = z.rows();
  const Matrix protos = class_prototypes(z, labels);
  const Matrix sim = cosine_similarity(z, protos);

  Matrix probs(m, n_classes);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double top = sim.row(i).maxCoeff();
    const RowVector e = (sim.row(i).array() - top).exp().matrix();
    const double total = e.sum();
    probs.row(i) = e / total;
    loss -= sim(i, labels[static_cast<std::size_t>(i)]) - top - std::log(total);
  }
  loss /= static_cast<double>(m);
  if (grad_z == nullptr) return loss;

  // d loss / d sim
  Matrix a = probs;
  for (Eigen::Index i = 0; i < m; ++i) a(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
  a /= static_cast<double>(m);

  const Vector z_norms = z.rowwise().norm();
  const Vector p_norms = protos.rowwise().norm();
  Matrix g = Matrix::Zero(m, z.cols());
  Matrix g_protos = Matrix::Zero(n_classes, z.cols());
  for (Eigen::Index i = 0; i < m; ++i) {
    if (z_norms(i) == 0.0) continue;
    for (Eigen::Index c = 0; c < n_classes; ++c) {
      if (p_norms(c) == 0.0) continue;
      const double inv = 1.0 / (z_norms(i) * p_norms(c));
      const double s = sim(i, c);
      g.row(i) += a(i, c) * (protos.row(c) * inv - s * z.row(i) / (z_norms(i) * z_norms(i)));
      g_protos.row(c) += a(i, c) * (z.row(i) * inv - s * protos.row(c) / (p_norms(c) * p_norms(c)));
    }
  }
  std::vector<int> counts(static_cast<std::size_t>(n_classes), 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  for (Eigen::Index i = 0; i < m; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    g.row(i) += g_protos.row(y) / counts[static_cast<std::size_t>(y)];
  }
  *grad_z = std::move(g);
  return loss;
}

}  // namespace

LinearHead LinearHead::identity(Eigen::Index dim) {
  if (dim < 1) throw InvalidArgument("head dimension must be at least 1");
  return LinearHead{Matrix::Identity(dim, dim)};
}

std::string_view to_string(AdaptLoss loss) { return loss == AdaptLoss::Mokd ? "mokd" : "ncc"; }

AdaptLoss parse_adapt_loss(std::string_view name) {
  if (name == "mokd") return AdaptLoss::Mokd;
  if (name == "ncc") return AdaptLoss::Ncc;
  throw InvalidArgument("unknown loss '" + std::string(name) + "' (expected mokd or ncc)");
}

void AdaptConfig::validate() const {
  if (steps < 1) throw InvalidArgument("steps must be at least 1");
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw InvalidArgument("gamma must be non-negative");
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
  if (!(weight_decay >= 0.0)) throw InvalidArgument("weight decay must be non-negative");
  if (!(optimizer.rho > 0.0 && optimizer.rho < 1.0)) throw InvalidArgument("rho must lie in (0, 1)");
  if (!(optimizer.eps > 0.0)) throw InvalidArgument("optimizer epsilon must be positive");
  grid.validate();
  if (loss == AdaptLoss::Mokd && kernel_family == KernelFamily::CosineLinear) {
    throw InvalidArgument("the MOKD objective needs a radial kernel (gaussian or imq)");
  }
}

AdadeltaState AdadeltaState::fresh(Eigen::Index dim) {
  return AdadeltaState{Matrix::Zero(dim, dim), Matrix::Zero(dim, dim)};
}

Matrix transform(const LinearHead& head, const Matrix& u, bool normalize) {
  return forward(head, u, normalize).z;
}

Matrix class_prototypes(const Matrix& z, const Labels& labels) {
  const int n_classes = count_classes(labels);
  Matrix protos = Matrix::Zero(n_classes, z.cols());
  std::vector<int> counts(static_cast<std::size_t>(n_classes), 0);
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    protos.row(y) += z.row(i);
    ++counts[static_cast<std::size_t>(y)];
  }
  for (int c = 0; c < n_classes; ++c) protos.row(c) /= counts[static_cast<std::size_t>(c)];
  return protos;
}

Matrix cosine_similarity(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw InvalidArgument("cosine similarity dimension mismatch");
  Matrix an = a;
  Matrix bn = b;
  for (Eigen::Index i = 0; i < an.rows(); ++i) {
    const double n = an.row(i).norm();
    if (n > 0.0) an.row(i) /= n;
  }
  for (Eigen::Index i = 0; i < bn.rows(); ++i) {
    const double n = bn.row(i).norm();
    if (n > 0.0) bn.row(i) /= n;
  }
  return an * bn.transpose();
}

double ncc_loss(const Matrix& z, const Labels& labels) { return ncc_objective(z, labels, nullptr); }

Matrix ncc_loss_gradient(const Matrix& z, const Labels& labels) {
  Matrix g;
  ncc_objective(z, labels, &g);
  return g;
}

Labels ncc_predict(const LinearHead& head, const Matrix& support, const Labels& support_labels,
                   const Matrix& query, bool normalize) {
  if (static_cast<Eigen::Index>(support_labels.size()) != support.rows()) {
    throw InvalidArgument("label count does not match support size");
  }
  if (count_classes(support_labels) < 2) throw InvalidArgument("NCC needs at least two classes");
  const Matrix zs = transform(head, support, normalize);
  const Matrix zq = transform(head, query, normalize);
  const Matrix sim = cosine_similarity(zq, class_prototypes(zs, support_labels));
  Labels out(static_cast<std::size_t>(zq.rows()));
  for (Eigen::Index i = 0; i < sim.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < sim.cols(); ++c) {
      if (sim(i, c) > sim(i, best)) best = c;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

double mokd_loss(const Matrix& z, const Labels& labels, double sigma_zy, double sigma_zz,
                 double gamma, KernelFamily family) {
  return mokd_objective(z, labels, sigma_zy, sigma_zz, gamma, family, nullptr);
}

LossAndGradient mokd_loss_and_gradient(const LinearHead& head, const Matrix& u,
                                       const Labels& labels, double sigma_zy, double sigma_zz,
                                       double gamma, KernelFamily family, bool normalize) {
  const Transformed t = forward(head, u, normalize);
  Matrix grad_z;
  LossAndGradient out;
  out.loss = mokd_objective(t.z, labels, sigma_zy, sigma_zz, gamma, family, &grad_z);
  out.gradient = backward(t, u, std::move(grad_z), normalize);
  return out;
}

Matrix mokd_gradient(const LinearHead& head, const Matrix& u, const Labels& labels,
                     double sigma_zy, double sigma_zz, double gamma, KernelFamily family,
                     bool normalize) {
  return mokd_loss_and_gradient(head, u, labels, sigma_zy, sigma_zz, gamma, family, normalize)
      .gradient;
}

LossAndGradient ncc_loss_and_gradient(const LinearHead& head, const Matrix& u,
                                      const Labels& labels, bool normalize) {
  const Transformed t = forward(head, u, normalize);
  Matrix grad_z;
  LossAndGradient out;
  out.loss = ncc_objective(t.z, labels, &grad_z);
  out.gradient = backward(t, u, std::move(grad_z), normalize);
  return out;
}

void adadelta_step(AdadeltaState& state, LinearHead& head, const Matrix& grad, double lr,
                   double weight_decay, double rho, double eps) {
  const Eigen::Index d = head.dim();
  if (grad.rows() != d || grad.cols() != d || state.square_avg.rows() != d ||
      state.square_avg.cols() != d || state.acc_delta.rows() != d || state.acc_delta.cols() != d) {
    throw InvalidArgument("Adadelta state, gradient and head shapes do not match");
  }
  state.square_avg = rho * state.square_avg + (1.0 - rho) * grad.cwiseProduct(grad);
  const Matrix delta = ((state.acc_delta.array() + eps).sqrt() /
                        (state.square_avg.array() + eps).sqrt() * grad.array())
                           .matrix();
  state.acc_delta = rho * state.acc_delta + (1.0 - rho) * delta.cwiseProduct(delta);
  head.theta -= lr * delta;
  if (weight_decay != 0.0) head.theta -= lr * weight_decay * head.theta;
}

double accuracy(const Labels& predicted, const Labels& truth) {
  if (predicted.size() != truth.size() || truth.empty()) {
    throw InvalidArgument("accuracy needs equal-length, non-empty label vectors");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

EpisodeResult run_episode(const Task& task, const AdaptConfig& config) {
  config.validate();
  const Matrix& support = task.support;
  const Labels& labels = task.support_labels;
  if (support.rows() < 4) {
    throw InvalidArgument("support set too small for the unbiased estimator (m=" +
                          std::to_string(support.rows()) + ", need at least 4)");
  }
  if (static_cast<Eigen::Index>(labels.size()) != support.rows()) {
    throw InvalidArgument("support label count does not match support size");
  }
  if (count_classes(labels) < 2) throw InvalidArgument("episode needs at least two classes");
  if (task.query.rows() < 1 || task.query.cols() != support.cols() ||
      static_cast<Eigen::Index>(task.query_labels.size()) != task.query.rows()) {
    throw InvalidArgument("query set is empty or inconsistent with the support set");
  }

  const bool normalize = config.normalize_features;
  EpisodeResult result;
  result.support_labels = labels;
  result.query_labels = task.query_labels;
  LinearHead head = LinearHead::identity(support.cols());

  result.initial_query_accuracy =
      accuracy(ncc_predict(head, support, labels, task.query, normalize), task.query_labels);

  if (config.loss == AdaptLoss::Mokd) {
    // Bandwidths are chosen once on the initial representations and frozen.
    const Matrix z0 = transform(head, support, normalize);
    const BandwidthSelection zy = select_bandwidth(z0, labels, config.kernel_family, config.grid);
    result.sigma_zy = zy.sigma;
    result.coefficient_zy = zy.coefficient;
    if (config.share_zz_coefficient) {
      result.coefficient_zz = zy.coefficient;
      result.sigma_zz = zy.coefficient * std::sqrt(median_sq_distance(z0));
    } else {
      const BandwidthSelection zz = select_bandwidth(z0, z0, config.kernel_family, config.grid);
      result.sigma_zz = zz.sigma;
      result.coefficient_zz = zz.coefficient;
    }
  }

  AdadeltaState state = AdadeltaState::fresh(head.dim());
  result.loss_trace.reserve(static_cast<std::size_t>(config.steps));
  for (int step = 0; step < config.steps; ++step) {
    const LossAndGradient lg =
        config.loss == AdaptLoss::Mokd
            ? mokd_loss_and_gradient(head, support, labels, result.sigma_zy, result.sigma_zz,
                                     config.gamma, config.kernel_family, normalize)
            : ncc_loss_and_gradient(head, support, labels, normalize);
    result.loss_trace.push_back(lg.loss);
    adadelta_step(state, head, lg.gradient, config.learning_rate, config.weight_decay,
                  config.optimizer.rho, config.optimizer.eps);
  }

  result.query_predictions = ncc_predict(head, support, labels, task.query, normalize);
  result.query_accuracy = accuracy(result.query_predictions, task.query_labels);
  const Matrix zs = transform(head, support, normalize);
  const Matrix zq = transform(head, task.query, normalize);
  result.support_similarity = cosine_similarity(zs, zs);
  result.query_support_similarity = cosine_similarity(zq, zs);
  result.final_head = std::move(head);
  return result;
}

}  // namespace mokd
