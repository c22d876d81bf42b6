#include "mokd/kernels.hpp"

#include "mokd/error.hpp"

#include <algorithm>
#include <cmath>

namespace mokd {

std::string_view to_string(KernelFamily family) {
  switch (family) {
    case KernelFamily::Gaussian: return "gaussian";
    case KernelFamily::IMQ: return "imq";
    case KernelFamily::CosineLinear: return "cosine";
  }
  return "unknown";
}

KernelFamily parse_kernel_family(std::string_view name) {
  if (name == "gaussian") return KernelFamily::Gaussian;
  if (name == "imq") return KernelFamily::IMQ;
  if (name == "cosine") return KernelFamily::CosineLinear;
  throw InvalidArgument("unknown kernel family '" + std::string(name) +
                        "' (expected gaussian, imq or cosine)");
}

void KernelSpec::validate() const {
  if (family != KernelFamily::CosineLinear && !(sigma > 0.0 && std::isfinite(sigma))) {
    throw InvalidArgument("kernel bandwidth must be positive and finite, got " +
                          std::to_string(sigma));
  }
}

void check_embeddings(const Matrix& z) {
  if (z.rows() < 1 || z.cols() < 1) {
    throw InvalidArgument("embedding matrix must have at least one row and one column");
  }
  if (!z.allFinite()) throw InvalidArgument("embedding matrix contains NaN or Inf");
}

int count_classes(const Labels& labels) {
  if (labels.empty()) throw InvalidArgument("label vector is empty");
  const int max_id = *std::max_element(labels.begin(), labels.end());
  if (*std::min_element(labels.begin(), labels.end()) < 0) {
    throw InvalidArgument("class ids must be non-negative");
  }
  std::vector<bool> seen(static_cast<std::size_t>(max_id) + 1, false);
  for (int y : labels) seen[static_cast<std::size_t>(y)] = true;
  for (std::size_t c = 0; c < seen.size(); ++c) {
    if (!seen[c]) throw InvalidArgument("class id " + std::to_string(c) + " has no samples");
  }
  return max_id + 1;
}

double radial_value(KernelFamily family, double sigma, double r2) {
  const double s2 = sigma * sigma;
  switch (family) {
    case KernelFamily::Gaussian: return std::exp(-r2 / (2.0 * s2));
    case KernelFamily::IMQ: return 1.0 / std::sqrt(1.0 + r2 / s2);
    case KernelFamily::CosineLinear: break;
  }
  throw InvalidArgument("cosine kernel is not radial");
}

double radial_derivative(KernelFamily family, double sigma, double r2) {
  const double s2 = sigma * sigma;
  switch (family) {
    case KernelFamily::Gaussian: return -std::exp(-r2 / (2.0 * s2)) / (2.0 * s2);
    case KernelFamily::IMQ: {
      const double k = 1.0 / std::sqrt(1.0 + r2 / s2);
      return -0.5 * k * k * k / s2;
    }
    case KernelFamily::CosineLinear: break;
  }
  throw InvalidArgument("cosine kernel is not radial");
}

double eval_kernel(const KernelSpec& spec, const Eigen::Ref<const RowVector>& x,
                   const Eigen::Ref<const RowVector>& y) {
  spec.validate();
  if (x.size() != y.size()) {
    throw InvalidArgument("kernel arguments differ in dimension: " + std::to_string(x.size()) +
                          " vs " + std::to_string(y.size()));
  }
  if (!x.allFinite() || !y.allFinite()) throw InvalidArgument("kernel argument is not finite");
  if (spec.family == KernelFamily::CosineLinear) {
    const double nx = x.norm();
    const double ny = y.norm();
    if (nx == 0.0 || ny == 0.0) return 0.0;
    return x.dot(y) / (nx * ny);
  }
  return radial_value(spec.family, spec.sigma, (x - y).squaredNorm());
}

Matrix pairwise_sq_distances(const Matrix& z) {
  const Eigen::Index m = z.rows();
  Matrix d2(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    d2(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < m; ++j) {
      const double v = (z.row(i) - z.row(j)).squaredNorm();
      d2(i, j) = v;
      d2(j, i) = v;
    }
  }
  return d2;
}

Matrix radial_gram(KernelFamily family, double sigma, const Matrix& sq_distances, bool zero_diag) {
  KernelSpec{family, sigma}.validate();
  const Eigen::Index m = sq_distances.rows();
  Matrix k(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    k(i, i) = zero_diag ? 0.0 : 1.0;
    for (Eigen::Index j = i + 1; j < m; ++j) {
      const double v = radial_value(family, sigma, sq_distances(i, j));
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

KernelMatrix kernel_matrix(const KernelSpec& spec, const Matrix& z, bool zero_diag) {
  spec.validate();
  check_embeddings(z);
  const Eigen::Index m = z.rows();
  KernelMatrix out{Matrix(m, m), zero_diag};
  if (spec.family == KernelFamily::CosineLinear) {
    Vector norms = z.rowwise().norm();
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index j = i; j < m; ++j) {
        double v = 0.0;
        if (norms(i) > 0.0 && norms(j) > 0.0) v = z.row(i).dot(z.row(j)) / (norms(i) * norms(j));
        out.data(i, j) = v;
        out.data(j, i) = v;
      }
    }
  } else {
    for (Eigen::Index i = 0; i < m; ++i) {
      out.data(i, i) = 1.0;
      for (Eigen::Index j = i + 1; j < m; ++j) {
        const double v = radial_value(spec.family, spec.sigma, (z.row(i) - z.row(j)).squaredNorm());
        out.data(i, j) = v;
        out.data(j, i) = v;
      }
    }
  }
  if (zero_diag) out.data.diagonal().setZero();
  return out;
}

KernelMatrix label_kernel_matrix(const Labels& labels, double l1, double l0, bool zero_diag) {
  count_classes(labels);
  if (!(l1 > l0)) {
    throw InvalidArgument("label kernel requires l1 > l0 (got l1=" + std::to_string(l1) +
                          ", l0=" + std::to_string(l0) + ")");
  }
  const auto m = static_cast<Eigen::Index>(labels.size());
  KernelMatrix out{Matrix(m, m), zero_diag};
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      out.data(i, j) = labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)] ? l1 : l0;
    }
  }
  if (zero_diag) out.data.diagonal().setZero();
  return out;
}

double median_sq_distance(const Matrix& z) {
  check_embeddings(z);
  if (z.rows() < 2) throw InvalidArgument("median heuristic needs at least two samples");
  std::vector<double> d2;
  d2.reserve(static_cast<std::size_t>(z.rows() * (z.rows() - 1) / 2));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < z.rows(); ++j) {
      const double v = (z.row(i) - z.row(j)).squaredNorm();
      if (v > 0.0) d2.push_back(v);
    }
  }
  if (d2.empty()) {
    throw InvalidArgument("all samples are identical; no bandwidth base for the median heuristic");
  }
  const std::size_t n = d2.size();
  const std::size_t mid = n / 2;
  std::nth_element(d2.begin(), d2.begin() + static_cast<std::ptrdiff_t>(mid), d2.end());
  const double upper = d2[mid];
  if (n % 2 == 1) return upper;
  const double lower = *std::max_element(d2.begin(), d2.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

}  // namespace mokd
