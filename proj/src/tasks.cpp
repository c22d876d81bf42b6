#include "mokd/tasks.hpp"

#include "mokd/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mokd {

Rng episode_rng(std::uint64_t seed, std::uint64_t episode) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(episode),
                    static_cast<std::uint32_t>(episode >> 32)};
  return Rng(seq);
}

std::size_t EmbeddingDataset::total_rows() const {
  std::size_t n = 0;
  for (const auto& c : classes) n += static_cast<std::size_t>(c.rows());
  return n;
}

void EmbeddingDataset::validate() const {
  if (classes.empty()) throw InvalidArgument("dataset has no classes");
  const Eigen::Index d = classes.front().cols();
  if (d < 1) throw InvalidArgument("dataset feature dimension must be at least 1");
  for (std::size_t c = 0; c < classes.size(); ++c) {
    if (classes[c].cols() != d) {
      throw InvalidArgument("class " + std::to_string(c) + " has dimension " +
                            std::to_string(classes[c].cols()) + ", expected " + std::to_string(d));
    }
    if (classes[c].rows() < 1) throw InvalidArgument("class " + std::to_string(c) + " is empty");
    if (!classes[c].allFinite()) {
      throw InvalidArgument("class " + std::to_string(c) + " contains NaN or Inf");
    }
  }
  if (!class_names.empty() && class_names.size() != classes.size()) {
    throw InvalidArgument("class name count does not match class count");
  }
}

bool operator==(const EmbeddingDataset& a, const EmbeddingDataset& b) {
  if (a.classes.size() != b.classes.size()) return false;
  for (std::size_t c = 0; c < a.classes.size(); ++c) {
    const Matrix& x = a.classes[c];
    const Matrix& y = b.classes[c];
    if (x.rows() != y.rows() || x.cols() != y.cols() || x != y) return false;
  }
  return true;
}

void SamplerConfig::validate() const {
  if (n_max < 5) throw InvalidArgument("n_max must be at least 5");
  if (max_support < 1 || max_query_per_class < 1 || max_shots_per_class < 1) {
    throw InvalidArgument("sampler limits must be positive");
  }
  const bool any_fixed = fixed_way > 0 || fixed_shot > 0 || fixed_query > 0;
  if (any_fixed && !fixed()) {
    throw InvalidArgument("fixed-way sampling needs way, shot and query all set");
  }
  if (fixed() && fixed_way < 2) throw InvalidArgument("fixed-way sampling needs at least 2 ways");
}

int sample_way_count(Rng& rng, int available_classes, int n_max) {
  if (available_classes < 5) {
    throw InvalidArgument("vary-way sampling needs at least 5 classes, dataset has " +
                          std::to_string(available_classes));
  }
  if (n_max < 5) throw InvalidArgument("n_max must be at least 5");
  std::uniform_int_distribution<int> dist(5, std::min(n_max, available_classes));
  return dist(rng);
}

int compute_query_size(std::span<const int> class_sizes, int max_query) {
  if (class_sizes.empty()) throw InvalidArgument("no classes selected");
  int q = max_query;
  for (int size : class_sizes) {
    if (size < 2) {
      throw InvalidArgument("class with " + std::to_string(size) +
                            " examples cannot provide a query sample");
    }
    q = std::min(q, size / 2);
  }
  return q;
}

double sample_beta(Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  return 1.0 - unit(rng);
}

int support_size_for_beta(std::span<const int> class_sizes, int q, double beta, int max_support,
                          int max_shots) {
  if (!(beta > 0.0 && beta <= 1.0)) throw InvalidArgument("beta must lie in (0, 1]");
  long total = 0;
  for (int size : class_sizes) {
    if (size - q < 1) {
      throw InvalidArgument("class of size " + std::to_string(size) +
                            " leaves no support examples after " + std::to_string(q) +
                            " queries");
    }
    total += static_cast<long>(std::ceil(beta * std::min(max_shots, size - q)));
  }
  return static_cast<int>(std::min<long>(max_support, total));
}

int compute_support_size(Rng& rng, std::span<const int> class_sizes, int q, int max_support,
                         int max_shots) {
  for (int size : class_sizes) {
    if (size - q < 1) {
      throw InvalidArgument("class of size " + std::to_string(size) +
                            " leaves no support examples after " + std::to_string(q) +
                            " queries");
    }
  }
  return support_size_for_beta(class_sizes, q, sample_beta(rng), max_support, max_shots);
}

std::vector<double> sample_alphas(Rng& rng, std::size_t n) {
  std::uniform_real_distribution<double> dist(std::log(0.5), std::log(2.0));
  std::vector<double> alphas(n);
  for (auto& a : alphas) a = dist(rng);
  return alphas;
}

std::vector<int> shots_for_alphas(std::span<const int> class_sizes, int q, int s,
                                  std::span<const double> alphas) {
  const auto n = static_cast<int>(class_sizes.size());
  if (alphas.size() != class_sizes.size()) throw InvalidArgument("one alpha per class required");
  if (s < n) {
    throw InvalidArgument("support size " + std::to_string(s) + " is smaller than the way count " +
                          std::to_string(n));
  }
  double norm = 0.0;
  for (std::size_t c = 0; c < class_sizes.size(); ++c) norm += std::exp(alphas[c]) * class_sizes[c];
  std::vector<int> shots(class_sizes.size());
  for (std::size_t c = 0; c < class_sizes.size(); ++c) {
    const double share = std::exp(alphas[c]) * class_sizes[c] / norm;
    const int k = static_cast<int>(std::floor(share * (s - n))) + 1;
    shots[c] = std::min(k, class_sizes[c] - q);
  }
  return shots;
}

std::vector<int> compute_shots(Rng& rng, std::span<const int> class_sizes, int q, int s) {
  if (s < static_cast<int>(class_sizes.size())) {
    throw InvalidArgument("support size " + std::to_string(s) + " is smaller than the way count " +
                          std::to_string(class_sizes.size()));
  }
  const auto alphas = sample_alphas(rng, class_sizes.size());
  return shots_for_alphas(class_sizes, q, s, alphas);
}

namespace {

Task assemble(const EmbeddingDataset& dataset, const std::vector<int>& classes,
              const std::vector<int>& shots, int q, Rng& rng) {
  Task task;
  task.classes = classes;
  const Eigen::Index d = dataset.dim();
  const int n_support = std::accumulate(shots.begin(), shots.end(), 0);
  const int n_query = q * static_cast<int>(classes.size());
  task.support.resize(n_support, d);
  task.query.resize(n_query, d);
  Eigen::Index srow = 0;
  Eigen::Index qrow = 0;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    const Matrix& pool = dataset.classes[static_cast<std::size_t>(classes[c])];
    std::vector<int> order(static_cast<std::size_t>(pool.rows()));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<int> qidx(order.begin(), order.begin() + q);
    std::vector<int> sidx(order.begin() + q, order.begin() + q + shots[c]);
    for (int r : qidx) {
      task.query.row(qrow++) = pool.row(r);
      task.query_labels.push_back(static_cast<int>(c));
    }
    for (int r : sidx) {
      task.support.row(srow++) = pool.row(r);
      task.support_labels.push_back(static_cast<int>(c));
    }
    task.query_rows.push_back(std::move(qidx));
    task.support_rows.push_back(std::move(sidx));
  }
  return task;
}

std::vector<int> choose_classes(std::vector<int> eligible, int n, Rng& rng) {
  std::shuffle(eligible.begin(), eligible.end(), rng);
  eligible.resize(static_cast<std::size_t>(n));
  std::sort(eligible.begin(), eligible.end());
  return eligible;
}

}  // namespace

Task sample_task(const EmbeddingDataset& dataset, const SamplerConfig& cfg, Rng& rng) {
  cfg.validate();
  dataset.validate();
  constexpr int kMaxAttempts = 100;

  if (cfg.fixed()) {
    std::vector<int> eligible;
    for (std::size_t c = 0; c < dataset.num_classes(); ++c) {
      if (dataset.classes[c].rows() >= cfg.fixed_shot + cfg.fixed_query) {
        eligible.push_back(static_cast<int>(c));
      }
    }
    if (static_cast<int>(eligible.size()) < cfg.fixed_way) {
      throw InvalidArgument("only " + std::to_string(eligible.size()) + " classes have at least " +
                            std::to_string(cfg.fixed_shot + cfg.fixed_query) +
                            " examples; cannot draw a " + std::to_string(cfg.fixed_way) +
                            "-way task");
    }
    if (cfg.fixed_way * cfg.fixed_shot < 4) {
      throw InvalidArgument("fixed-way task would have fewer than 4 support samples");
    }
    const auto classes = choose_classes(eligible, cfg.fixed_way, rng);
    const std::vector<int> shots(classes.size(), cfg.fixed_shot);
    return assemble(dataset, classes, shots, cfg.fixed_query, rng);
  }

  std::vector<int> eligible;
  for (std::size_t c = 0; c < dataset.num_classes(); ++c) {
    if (dataset.classes[c].rows() >= 2) eligible.push_back(static_cast<int>(c));
  }
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    const int n = sample_way_count(rng, static_cast<int>(eligible.size()), cfg.n_max);
    const auto classes = choose_classes(eligible, n, rng);
    std::vector<int> sizes;
    for (int c : classes) sizes.push_back(static_cast<int>(dataset.classes[static_cast<std::size_t>(c)].rows()));
    const int q = compute_query_size(sizes, cfg.max_query_per_class);
    const int s = compute_support_size(rng, sizes, q, cfg.max_support, cfg.max_shots_per_class);
    const auto shots = compute_shots(rng, sizes, q, s);
    Task task = assemble(dataset, classes, shots, q, rng);
    if (task.support.rows() >= 4 && task.way() >= 2) return task;
  }
  throw InvalidArgument("could not draw a task with at least 4 support samples in " +
                        std::to_string(kMaxAttempts) + " attempts");
}

EmbeddingDataset synth_dataset(int n_classes, int per_class, int dim, double separation,
                               double noise, Rng& rng) {
  if (n_classes < 2) throw InvalidArgument("synthetic dataset needs at least 2 classes");
  if (per_class < 2) throw InvalidArgument("synthetic dataset needs at least 2 samples per class");
  if (dim < 1) throw InvalidArgument("synthetic dataset needs dimension >= 1");
  if (!(separation >= 0.0) || !(noise >= 0.0) || !std::isfinite(separation) || !std::isfinite(noise)) {
    throw InvalidArgument("separation and noise must be finite and non-negative");
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix raw(dim, n_classes);
  for (Eigen::Index i = 0; i < raw.rows(); ++i)
    for (Eigen::Index j = 0; j < raw.cols(); ++j) raw(i, j) = normal(rng);

  Matrix directions(n_classes, dim);
  if (dim >= n_classes) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(raw);
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(dim, n_classes);
    directions = q.transpose();
  } else {
    // Too few dimensions for orthogonal means; fall back to random unit directions.
    directions = raw.transpose();
    directions.rowwise().normalize();
  }

  EmbeddingDataset out;
  out.name = "synthetic";
  out.classes.reserve(static_cast<std::size_t>(n_classes));
  for (int c = 0; c < n_classes; ++c) {
    Matrix block(per_class, dim);
    for (int i = 0; i < per_class; ++i) {
      for (int j = 0; j < dim; ++j) {
        const double v = separation * directions(c, j) + noise * normal(rng);
        // Stored at float32 precision so the binary format round-trips exactly.
        block(i, j) = static_cast<double>(static_cast<float>(v));
      }
    }
    out.classes.push_back(std::move(block));
  }
  return out;
}

void flatten(const EmbeddingDataset& dataset, Matrix& rows, Labels& labels) {
  rows.resize(static_cast<Eigen::Index>(dataset.total_rows()), dataset.dim());
  labels.clear();
  Eigen::Index r = 0;
  for (std::size_t c = 0; c < dataset.num_classes(); ++c) {
    const Matrix& block = dataset.classes[c];
    rows.middleRows(r, block.rows()) = block;
    r += block.rows();
    labels.insert(labels.end(), static_cast<std::size_t>(block.rows()), static_cast<int>(c));
  }
}

}  // namespace mokd
