#pragma once

#include "mokd/adapt.hpp"
#include "mokd/tasks.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

namespace mokd {

struct EpisodeRecord {
  std::uint64_t episode = 0;
  std::uint64_t seed = 0;  // base seed of the run; (seed, episode) fixes the task
  int way = 0;
  int support_size = 0;
  double accuracy = 0.0;
  double initial_accuracy = 0.0;
  double sigma_zy = 0.0;
  double final_loss = 0.0;

  friend bool operator==(const EpisodeRecord&, const EpisodeRecord&) = default;
};

struct EvalReport {
  int episodes = 0;
  double mean_accuracy = 0.0;
  double ci95 = 0.0;
  std::vector<EpisodeRecord> per_episode;  // ordered by episode index

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// 1.96 * sample standard deviation / sqrt(n); zero for n < 2.
double ci95(std::span<const double> values);

/// Called once per finished episode, possibly from a worker thread.
using EpisodeCallback = std::function<void(std::uint64_t episode, const Task&, const EpisodeResult&)>;

/// Runs `n_episodes` independent episodes on tasks drawn from
/// episode_rng(base_seed, i). `jobs` worker threads (0 = hardware concurrency);
/// the report does not depend on `jobs`.
EvalReport evaluate(const EmbeddingDataset& dataset, const SamplerConfig& sampler,
                    const AdaptConfig& adapt, int n_episodes, std::uint64_t base_seed,
                    unsigned jobs = 1, const EpisodeCallback& on_episode = {});

enum class ExportFormat { Csv, Pgm };
enum class SimilarityView { Support, QuerySupport };

/// Heatmap export of an episode's similarity matrix. CSV starts with a
/// `# row_class_starts=...; col_class_starts=...` comment line; PGM is P5 with
/// pixel = round(255 * (sim + 1) / 2).
void similarity_export(const EpisodeResult& result, const std::filesystem::path& path,
                       ExportFormat format, SimilarityView view = SimilarityView::Support);

/// Matrix written by the CSV exporter (comment lines skipped).
Matrix read_similarity_csv(const std::filesystem::path& path);

/// Pixel value used by the PGM exporter.
std::uint8_t similarity_to_pixel(double sim);

/// exp(mean a) >= mean(exp a) - (e + (e - 1) log(e - 1)) for a_i in [0, 1].
bool lemma_b1_check(std::span<const double> a);

}  // namespace mokd
