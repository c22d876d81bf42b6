#pragma once

#include "mokd/hsic.hpp"
#include "mokd/kernels.hpp"
#include "mokd/tasks.hpp"

#include <vector>

namespace mokd {

/// The d x d matrix applied to backbone embeddings: z = theta * u.
struct LinearHead {
  Matrix theta;

  static LinearHead identity(Eigen::Index dim);
  Eigen::Index dim() const { return theta.rows(); }
};

enum class AdaptLoss { Mokd, Ncc };

std::string_view to_string(AdaptLoss loss);
AdaptLoss parse_adapt_loss(std::string_view name);

struct AdadeltaOptions {
  double rho = 0.9;
  double eps = 1e-6;
};

struct AdaptConfig {
  double gamma = 3.0;
  double learning_rate = 0.25;
  int steps = 40;
  double weight_decay = 0.0;
  BandwidthGrid grid;  // grid.epsilon is the power-ratio epsilon
  KernelFamily kernel_family = KernelFamily::Gaussian;
  bool share_zz_coefficient = true;
  bool normalize_features = true;
  AdadeltaOptions optimizer;
  AdaptLoss loss = AdaptLoss::Mokd;

  void validate() const;
};

struct AdadeltaState {
  Matrix square_avg;  // E[g^2]
  Matrix acc_delta;   // E[delta^2]

  static AdadeltaState fresh(Eigen::Index dim);
};

struct EpisodeResult {
  LinearHead final_head;
  std::vector<double> loss_trace;
  double sigma_zy = 0.0;
  double sigma_zz = 0.0;
  double coefficient_zy = 0.0;
  double coefficient_zz = 0.0;
  double initial_query_accuracy = 0.0;
  double query_accuracy = 0.0;
  Labels query_predictions;
  Labels support_labels;
  Labels query_labels;
  Matrix support_similarity;        // m x m cosine similarities
  Matrix query_support_similarity;  // q_total x m
};

/// z_i = theta u_i, optionally L2-normalised per row (zero rows stay zero).
Matrix transform(const LinearHead& head, const Matrix& u, bool normalize);

/// Class-mean prototypes of the rows of z.
Matrix class_prototypes(const Matrix& z, const Labels& labels);

/// Cosine similarity between every row of a and every row of b; zero rows give 0.
Matrix cosine_similarity(const Matrix& a, const Matrix& b);

/// Cross-entropy of the softmax over cosine similarities to class prototypes.
double ncc_loss(const Matrix& z, const Labels& labels);
/// d ncc_loss / d z (prototypes are differentiated through).
Matrix ncc_loss_gradient(const Matrix& z, const Labels& labels);

Labels ncc_predict(const LinearHead& head, const Matrix& support, const Labels& support_labels,
                   const Matrix& query, bool normalize);

/// -HSIC(Z, Y; sigma_zy) + gamma * HSIC(Z, Z; sigma_zz), delta label kernel.
double mokd_loss(const Matrix& z, const Labels& labels, double sigma_zy, double sigma_zz,
                 double gamma, KernelFamily family);

struct LossAndGradient {
  double loss = 0.0;
  Matrix gradient;  // d x d, same shape as theta
};

/// Loss of mokd_loss(transform(head, u)) and its gradient with respect to theta.
LossAndGradient mokd_loss_and_gradient(const LinearHead& head, const Matrix& u,
                                       const Labels& labels, double sigma_zy, double sigma_zz,
                                       double gamma, KernelFamily family, bool normalize);

Matrix mokd_gradient(const LinearHead& head, const Matrix& u, const Labels& labels,
                     double sigma_zy, double sigma_zz, double gamma, KernelFamily family,
                     bool normalize);

/// NCC loss through transform, with its gradient in theta.
LossAndGradient ncc_loss_and_gradient(const LinearHead& head, const Matrix& u,
                                      const Labels& labels, bool normalize);

/// One Adadelta update followed by decoupled weight decay.
void adadelta_step(AdadeltaState& state, LinearHead& head, const Matrix& grad, double lr,
                   double weight_decay, double rho, double eps);

/// Bandwidth selection, `config.steps` updates of the head, then NCC on the query set.
EpisodeResult run_episode(const Task& task, const AdaptConfig& config);

double accuracy(const Labels& predicted, const Labels& truth);

}  // namespace mokd
