#pragma once

#include <Eigen/Dense>

#include <string>
#include <string_view>
#include <vector>

namespace mokd {

/// Row-major so that each sample's representation is contiguous; this is also
/// the layout numpy hands us by default.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;
using Vector = Eigen::VectorXd;

/// Class ids, one per sample. Ids must cover [0, N_C) with no gaps.
using Labels = std::vector<int>;

enum class KernelFamily { Gaussian, IMQ, CosineLinear };

std::string_view to_string(KernelFamily family);
KernelFamily parse_kernel_family(std::string_view name);

struct KernelSpec {
  KernelFamily family = KernelFamily::Gaussian;
  double sigma = 1.0;  // unused for CosineLinear

  void validate() const;
};

struct KernelMatrix {
  Matrix data;
  bool zero_diag = false;

  Eigen::Index size() const { return data.rows(); }
};

/// Throws InvalidArgument unless Z is non-empty and finite.
void check_embeddings(const Matrix& z);

/// Number of classes N_C; throws unless every id in [0, N_C) occurs.
int count_classes(const Labels& labels);

double eval_kernel(const KernelSpec& spec, const Eigen::Ref<const RowVector>& x,
                   const Eigen::Ref<const RowVector>& y);

/// Radial kernels as a function of the squared distance r2, plus d k / d r2.
/// Only meaningful for Gaussian and IMQ.
double radial_value(KernelFamily family, double sigma, double r2);
double radial_derivative(KernelFamily family, double sigma, double r2);

KernelMatrix kernel_matrix(const KernelSpec& spec, const Matrix& z, bool zero_diag);

/// Radial Gram matrix from precomputed squared distances.
Matrix radial_gram(KernelFamily family, double sigma, const Matrix& sq_distances, bool zero_diag);

/// L[i,j] = l1 if labels agree else l0. Requires l1 > l0.
KernelMatrix label_kernel_matrix(const Labels& labels, double l1 = 1.0, double l0 = 0.0,
                                 bool zero_diag = true);

/// Median of the strictly positive pairwise squared distances (i < j).
double median_sq_distance(const Matrix& z);

/// Pairwise squared Euclidean distances, exact zeros on the diagonal.
Matrix pairwise_sq_distances(const Matrix& z);

}  // namespace mokd
