#include <doctest.h>

#include "mokd/adapt.hpp"
#include "mokd/error.hpp"
#include "support/oracles.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

using namespace mokd;
using namespace mokd::testing;

namespace {

Task blob_task(std::uint64_t seed, int way, int shot, int query, int dim, double sep, double noise) {
  Rng rng(seed);
  const EmbeddingDataset ds = synth_dataset(way, shot + query, dim, sep, noise, rng);
  SamplerConfig cfg;
  cfg.fixed_way = way;
  cfg.fixed_shot = shot;
  cfg.fixed_query = query;
  return sample_task(ds, cfg, rng);
}

double within_minus_between(const Matrix& sim, const Labels& labels) {
  double within = 0.0, between = 0.0;
  long nw = 0, nb = 0;
  for (Eigen::Index i = 0; i < sim.rows(); ++i)
    for (Eigen::Index j = 0; j < sim.cols(); ++j) {
      if (i == j) continue;
      if (labels[i] == labels[j]) {
        within += sim(i, j);
        ++nw;
      } else {
        between += sim(i, j);
        ++nb;
      }
    }
  return within / nw - between / nb;
}

}  // namespace

TEST_CASE("transform examples") {
  Rng rng(1);
  const Matrix u = random_matrix(rng, 5, 3);
  const LinearHead id = LinearHead::identity(3);
  CHECK(id.theta == Matrix::Identity(3, 3));
  CHECK(transform(id, u, false) == u);

  Matrix row(1, 2);
  row << 3, 4;
  const Matrix z = transform(LinearHead::identity(2), row, true);
  CHECK(z(0, 0) == doctest::Approx(0.6));
  CHECK(z(0, 1) == doctest::Approx(0.8));

  CHECK(transform(LinearHead::identity(2), Matrix::Zero(1, 2), true) == Matrix::Zero(1, 2));
  CHECK_THROWS_AS(transform(id, random_matrix(rng, 2, 4), false), InvalidArgument);
}

TEST_CASE("ncc loss examples") {
  Matrix z(4, 2);
  z << 1, 0, 1, 0, 0, 1, 0, 1;
  const Labels y{0, 0, 1, 1};
  constexpr double e = std::numbers::e;
  CHECK(ncc_loss(z, y) == doctest::Approx(-std::log(e / (e + 1.0))).epsilon(1e-12));
  CHECK(ncc_loss(z, y) == doctest::Approx(0.313262).epsilon(1e-6));

  const Matrix same = Matrix::Constant(6, 3, 0.4);
  CHECK(ncc_loss(same, {0, 1, 2, 0, 1, 2}) == doctest::Approx(std::log(3.0)).epsilon(1e-12));

  Rng rng(2);
  const Matrix r = random_matrix(rng, 8, 3);
  const Labels ry{0, 1, 0, 1, 2, 2, 0, 1};
  std::vector<int> p(8);
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  Matrix rp(8, 3);
  Labels ryp(8);
  for (int i = 0; i < 8; ++i) {
    rp.row(i) = r.row(p[i]);
    ryp[i] = ry[p[i]];
  }
  CHECK(ncc_loss(rp, ryp) == doctest::Approx(ncc_loss(r, ry)).epsilon(1e-12));

  CHECK_THROWS_AS(ncc_loss(r.topRows(2), {0, 0}), InvalidArgument);
  CHECK_THROWS_AS(ncc_loss(r.topRows(3), {0, 2, 2}), InvalidArgument);
}

TEST_CASE("ncc loss gradient matches finite differences") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix u = random_matrix(rng, 9, 4);
    const Labels y = random_labels(rng, 9, 3);
    const LinearHead head{Matrix::Identity(4, 4) + random_matrix(rng, 4, 4, 0.2)};
    for (bool normalize : {false, true}) {
      const auto lg = ncc_loss_and_gradient(head, u, y, normalize);
      const Matrix fd = finite_difference_gradient(
          [&](const Matrix& th) { return ncc_loss(transform(LinearHead{th}, u, normalize), y); },
          head.theta);
      CHECK(relative_error(lg.gradient, fd) <= 1e-6);
    }
  }
}

TEST_CASE("ncc predict") {
  Matrix support(4, 2);
  support << 1, 0, 0.9, 0.1, 0, 1, 0.1, 0.9;
  const Labels y{0, 0, 1, 1};
  const LinearHead id = LinearHead::identity(2);
  const Matrix protos = class_prototypes(support, y);
  CHECK(ncc_predict(id, support, y, protos, false) == Labels{0, 1});

  Matrix query(3, 2);
  query << 2, 0.1, 0.2, 3, 1, 1;
  const Labels base = ncc_predict(id, support, y, query, true);
  CHECK(base[0] == 0);
  CHECK(base[1] == 1);
  CHECK(base[2] == 0);  // exact tie goes to the lower class id
  CHECK(ncc_predict(id, support, y, 7.5 * query, true) == base);

  Rng rng(4);
  const Task t = blob_task(4, 4, 5, 5, 8, 6.0, 0.1);
  const Labels pred = ncc_predict(LinearHead::identity(8), t.support, t.support_labels, t.query, true);
  CHECK(accuracy(pred, t.query_labels) == 1.0);
}

TEST_CASE("mokd loss") {
  Rng rng(5);
  const Matrix z = random_matrix(rng, 10, 3);
  const Labels y = random_labels(rng, 10, 2);
  const double zy = -hsic_unbiased(kernel_matrix({KernelFamily::Gaussian, 1.1}, z, true).data,
                                   label_kernel_matrix(y).data);
  CHECK(mokd_loss(z, y, 1.1, 0.7, 0.0, KernelFamily::Gaussian) == zy);

  const Matrix kzz = kernel_matrix({KernelFamily::IMQ, 0.7}, z, true).data;
  const double with_zz = mokd_loss(z, y, 1.1, 0.7, 2.0, KernelFamily::IMQ);
  CHECK(with_zz == doctest::Approx(mokd_loss(z, y, 1.1, 0.7, 0.0, KernelFamily::IMQ) +
                                   2.0 * hsic_unbiased(kzz, kzz))
                       .epsilon(1e-12));

  CHECK_THROWS_AS(mokd_loss(z.topRows(3), {0, 1, 0}, 1.0, 1.0, 1.0, KernelFamily::Gaussian),
                  InvalidArgument);
  CHECK_THROWS_AS(mokd_loss(z, y, 1.0, 1.0, 1.0, KernelFamily::CosineLinear), InvalidArgument);
}

TEST_CASE("clustered representations have lower loss than shuffled labels") {
  Matrix z(12, 3);
  Labels y(12);
  for (int i = 0; i < 12; ++i) {
    y[i] = i % 3;
    z.row(i) = 4.0 * RowVector::Unit(3, y[i]);
  }
  const Labels shuffled{0, 1, 2, 1, 2, 0, 2, 0, 1, 0, 1, 2};
  const Labels mixed{0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2};
  const double clustered = mokd_loss(z, y, 2.0, 2.0, 0.0, KernelFamily::Gaussian);
  CHECK(clustered < mokd_loss(z, mixed, 2.0, 2.0, 0.0, KernelFamily::Gaussian));
  CHECK(clustered < mokd_loss(z, shuffled, 2.0, 2.0, 0.0, KernelFamily::Gaussian));
}

TEST_CASE("mokd loss first term averages to zero under label permutation") {
  Rng rng(6);
  const Matrix z = random_matrix(rng, 16, 3);
  Labels y = random_labels(rng, 16, 4);
  std::vector<double> vals;
  for (int rep = 0; rep < 3000; ++rep) {
    std::shuffle(y.begin(), y.end(), rng);
    vals.push_back(mokd_loss(z, y, 1.5, 1.5, 0.0, KernelFamily::Gaussian));
  }
  const double mean = std::accumulate(vals.begin(), vals.end(), 0.0) / vals.size();
  double ss = 0.0;
  for (double v : vals) ss += (v - mean) * (v - mean);
  const double se = std::sqrt(ss / (vals.size() - 1) / vals.size());
  CHECK(std::abs(mean) <= 4.0 * se);
}

TEST_CASE("mokd gradient matches finite differences") {
  Rng rng(7);
  int checked = 0;
  for (auto family : {KernelFamily::Gaussian, KernelFamily::IMQ}) {
    for (bool normalize : {true, false}) {
      for (double gamma : {0.0, 1.0, 3.0}) {
        const Matrix u = random_matrix(rng, 8, 4);
        const Labels y = random_labels(rng, 8, 3);
        const LinearHead head{Matrix::Identity(4, 4) + random_matrix(rng, 4, 4, 0.1)};
        const Matrix z = transform(head, u, normalize);
        const double sigma = std::sqrt(median_sq_distance(z));
        const Matrix g =
            mokd_gradient(head, u, y, 0.9 * sigma, 1.2 * sigma, gamma, family, normalize);
        const Matrix fd = finite_difference_gradient(
            [&](const Matrix& th) {
              return mokd_loss(transform(LinearHead{th}, u, normalize), y, 0.9 * sigma,
                               1.2 * sigma, gamma, family);
            },
            head.theta);
        CHECK(relative_error(g, fd) <= 1e-4);
        ++checked;
      }
    }
  }
  CHECK(checked == 12);
}

TEST_CASE("mokd gradient special cases") {
  Rng rng(8);
  const Matrix u = random_matrix(rng, 7, 3);
  const LinearHead head{Matrix::Identity(3, 3) + random_matrix(rng, 3, 3, 0.1)};
  // All-distinct labels make the label kernel zero.
  const Labels distinct{0, 1, 2, 3, 4, 5, 6};
  CHECK(mokd_gradient(head, u, distinct, 1.0, 1.0, 0.0, KernelFamily::Gaussian, true).norm() == 0.0);

  const Labels y{0, 1, 0, 1, 2, 2, 0};
  const Matrix full = mokd_gradient(head, u, y, 0.8, 1.3, 3.0, KernelFamily::IMQ, true);
  const Matrix zy = mokd_gradient(head, u, y, 0.8, 1.3, 0.0, KernelFamily::IMQ, true);
  const Matrix one = mokd_gradient(head, u, y, 0.8, 1.3, 1.0, KernelFamily::IMQ, true);
  CHECK(relative_error(full - zy, 3.0 * (one - zy)) <= 1e-10);
}

TEST_CASE("adadelta step") {
  LinearHead head{Matrix::Constant(2, 2, 0.5)};
  AdadeltaState state = AdadeltaState::fresh(2);
  CHECK(state.square_avg == Matrix::Zero(2, 2));
  CHECK(state.acc_delta == Matrix::Zero(2, 2));

  adadelta_step(state, head, Matrix::Zero(2, 2), 1.0, 0.0, 0.9, 1e-6);
  CHECK(head.theta == Matrix::Constant(2, 2, 0.5));

  // First step with g = 1: delta = sqrt(eps) / sqrt((1 - rho) + eps).
  LinearHead scalar{Matrix::Zero(1, 1)};
  AdadeltaState s1 = AdadeltaState::fresh(1);
  adadelta_step(s1, scalar, Matrix::Ones(1, 1), 1.0, 0.0, 0.9, 1e-6);
  const double expected = -1e-3 / std::sqrt(0.1 + 1e-6);
  CHECK(scalar.theta(0, 0) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(s1.square_avg(0, 0) == doctest::Approx(0.1));
  CHECK(s1.acc_delta(0, 0) == doctest::Approx(0.1 * expected * expected));

  LinearHead decay{Matrix::Constant(2, 2, 2.0)};
  AdadeltaState s2 = AdadeltaState::fresh(2);
  adadelta_step(s2, decay, Matrix::Zero(2, 2), 0.5, 0.25, 0.9, 1e-6);
  CHECK(decay.theta(1, 0) == doctest::Approx(2.0 * (1.0 - 0.5 * 0.25)));

  CHECK_THROWS_AS(adadelta_step(s2, decay, Matrix::Zero(3, 3), 0.5, 0.0, 0.9, 1e-6), InvalidArgument);
}

TEST_CASE("adapt config validation") {
  AdaptConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.steps = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = AdaptConfig{};
  cfg.gamma = -1.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = AdaptConfig{};
  cfg.optimizer.rho = 1.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = AdaptConfig{};
  cfg.kernel_family = KernelFamily::CosineLinear;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg.loss = AdaptLoss::Ncc;
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("run_episode on a separable task") {
  const Task t = blob_task(9, 5, 10, 10, 16, 6.0, 1.0);
  const AdaptConfig cfg;
  const EpisodeResult r = run_episode(t, cfg);
  CHECK(r.loss_trace.size() == 40);
  CHECK(r.query_accuracy == 1.0);
  CHECK(r.loss_trace.back() < r.loss_trace.front());
  CHECK(r.support_similarity.rows() == 50);
  CHECK(r.query_support_similarity.rows() == 50);
  CHECK(r.query_support_similarity.cols() == 50);
  CHECK(r.coefficient_zz == r.coefficient_zy);
  CHECK(within_minus_between(r.support_similarity, r.support_labels) >= 0.2);

  const EpisodeResult again = run_episode(t, cfg);
  CHECK(again.loss_trace == r.loss_trace);
  CHECK(again.final_head.theta == r.final_head.theta);
}

TEST_CASE("run_episode variants") {
  const Task t = blob_task(10, 5, 6, 4, 8, 6.0, 1.0);
  AdaptConfig cfg;
  cfg.steps = 1;
  CHECK(run_episode(t, cfg).loss_trace.size() == 1);

  cfg.steps = 10;
  cfg.share_zz_coefficient = false;
  cfg.kernel_family = KernelFamily::IMQ;
  const EpisodeResult own = run_episode(t, cfg);
  CHECK(own.sigma_zz > 0.0);
  CHECK(own.query_accuracy >= 0.0);
  CHECK(own.query_accuracy <= 1.0);

  AdaptConfig ncc;
  ncc.loss = AdaptLoss::Ncc;
  ncc.kernel_family = KernelFamily::CosineLinear;
  const EpisodeResult base = run_episode(t, ncc);
  CHECK(base.query_accuracy == 1.0);
  CHECK(base.loss_trace.back() < base.loss_trace.front());

  cfg.steps = 0;
  CHECK_THROWS_AS(run_episode(t, cfg), InvalidArgument);

  Task tiny = t;
  tiny.support = t.support.topRows(3);
  tiny.support_labels.resize(3);
  CHECK_THROWS_AS(run_episode(tiny, AdaptConfig{}), InvalidArgument);

  Task flat = t;
  flat.support.setConstant(1.0);
  CHECK_THROWS_AS(run_episode(flat, AdaptConfig{}), InvalidArgument);
}
