#pragma once

#include "mokd/kernels.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace mokd {

using Rng = std::mt19937_64;

/// Independent stream for episode `episode` of a run seeded with `seed`.
Rng episode_rng(std::uint64_t seed, std::uint64_t episode);

/// Per-class pools of embeddings; the class id is the block index.
struct EmbeddingDataset {
  std::vector<Matrix> classes;
  std::vector<std::string> class_names;  // empty or one per class
  std::string name;

  std::size_t num_classes() const { return classes.size(); }
  Eigen::Index dim() const { return classes.empty() ? 0 : classes.front().cols(); }
  std::size_t total_rows() const;
  void validate() const;

  friend bool operator==(const EmbeddingDataset& a, const EmbeddingDataset& b);
};

struct TaskProvenance {
  std::string dataset;
  std::uint64_t seed = 0;
  std::uint64_t episode = 0;
};

/// One episode. Support rows are grouped by class in label order; labels are
/// local (0..N-1), `classes[c]` is the dataset class behind local label c.
struct Task {
  Matrix support;
  Labels support_labels;
  Matrix query;
  Labels query_labels;
  std::vector<int> classes;
  std::vector<std::vector<int>> support_rows;  // indices into the dataset class
  std::vector<std::vector<int>> query_rows;
  TaskProvenance provenance;

  int way() const { return static_cast<int>(classes.size()); }
};

struct SamplerConfig {
  int n_max = 50;
  int max_support = 500;
  int max_query_per_class = 10;
  int max_shots_per_class = 100;
  std::uint64_t seed = 0;
  // Fixed N-way K-shot mode when all three are positive; vary-way vary-shot otherwise.
  int fixed_way = 0;
  int fixed_shot = 0;
  int fixed_query = 0;

  bool fixed() const { return fixed_way > 0 && fixed_shot > 0 && fixed_query > 0; }
  void validate() const;
};

/// N uniform on [5, min(n_max, available)].
int sample_way_count(Rng& rng, int available_classes, int n_max);

/// q = min(max_query, min_c floor(|c| / 2)).
int compute_query_size(std::span<const int> class_sizes, int max_query = 10);

/// beta uniform on (0, 1].
double sample_beta(Rng& rng);

/// s = min(max_support, sum_c ceil(beta * min(max_shots, |c| - q))).
int support_size_for_beta(std::span<const int> class_sizes, int q, double beta,
                          int max_support = 500, int max_shots = 100);
int compute_support_size(Rng& rng, std::span<const int> class_sizes, int q,
                         int max_support = 500, int max_shots = 100);

/// alpha_c uniform on [log 0.5, log 2), one per class.
std::vector<double> sample_alphas(Rng& rng, std::size_t n);

/// K_c = min(floor(R_c (s - N)) + 1, |c| - q) with R_c proportional to exp(alpha_c)|c|.
std::vector<int> shots_for_alphas(std::span<const int> class_sizes, int q, int s,
                                  std::span<const double> alphas);
std::vector<int> compute_shots(Rng& rng, std::span<const int> class_sizes, int q, int s);

Task sample_task(const EmbeddingDataset& dataset, const SamplerConfig& cfg, Rng& rng);

/// Class means at `separation` times orthonormal directions, plus isotropic noise.
EmbeddingDataset synth_dataset(int n_classes, int per_class, int dim, double separation,
                               double noise, Rng& rng);

/// Binary "EMB1" container: magic, version byte, u32 class count, then per
/// class u32 rows, u32 dim and rows*dim little-endian float32 values.
void save_embeddings(const EmbeddingDataset& dataset, const std::filesystem::path& path);
/// Reads EMB1, or CSV when the file starts with the `label` header.
EmbeddingDataset load_embeddings(const std::filesystem::path& path);

/// CSV twin: header `label,f0,...,f{d-1}`, one row per sample.
void save_embeddings_csv(const EmbeddingDataset& dataset, const std::filesystem::path& path);
EmbeddingDataset load_embeddings_csv(const std::filesystem::path& path);

/// Dataset stacked into one matrix plus class-id labels, in block order.
void flatten(const EmbeddingDataset& dataset, Matrix& rows, Labels& labels);

}  // namespace mokd
