#include "mokd/eval.hpp"

#include "mokd/error.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

namespace mokd {

double ci95(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n < 2) return 0.0;
  // Shifted two-pass variance; identical inputs give exactly zero.
  const double shift = values[0];
  double mean = 0.0;
  for (double v : values) mean += v - shift;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : values) ss += (v - shift - mean) * (v - shift - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  return 1.96 * sd / std::sqrt(static_cast<double>(n));
}

EvalReport evaluate(const EmbeddingDataset& dataset, const SamplerConfig& sampler,
                    const AdaptConfig& adapt, int n_episodes, std::uint64_t base_seed,
                    unsigned jobs, const EpisodeCallback& on_episode) {
  if (n_episodes < 1) throw InvalidArgument("episode count must be at least 1");
  dataset.validate();
  sampler.validate();
  adapt.validate();
  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min<unsigned>(jobs, static_cast<unsigned>(n_episodes));

  EvalReport report;
  report.episodes = n_episodes;
  report.per_episode.resize(static_cast<std::size_t>(n_episodes));

  std::atomic<int> next{0};
  std::mutex error_mutex;
  int failed_episode = -1;
  std::exception_ptr failure;

  auto worker = [&] {
    while (true) {
      const int i = next.fetch_add(1);
      if (i >= n_episodes) return;
      try {
        Rng rng = episode_rng(base_seed, static_cast<std::uint64_t>(i));
        Task task = sample_task(dataset, sampler, rng);
        task.provenance = {dataset.name, base_seed, static_cast<std::uint64_t>(i)};
        const EpisodeResult res = run_episode(task, adapt);
        EpisodeRecord& rec = report.per_episode[static_cast<std::size_t>(i)];
        rec.episode = static_cast<std::uint64_t>(i);
        rec.seed = base_seed;
        rec.way = task.way();
        rec.support_size = static_cast<int>(task.support.rows());
        rec.accuracy = res.query_accuracy;
        rec.initial_accuracy = res.initial_query_accuracy;
        rec.sigma_zy = res.sigma_zy;
        rec.final_loss = res.loss_trace.back();
        if (on_episode) on_episode(static_cast<std::uint64_t>(i), task, res);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (failed_episode < 0 || i < failed_episode) {
          failed_episode = i;
          failure = std::current_exception();
        }
        next.store(n_episodes);
        return;
      }
    }
  };

  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < jobs; ++t) pool.emplace_back(worker);
  }

  if (failure) {
    try {
      std::rethrow_exception(failure);
    } catch (const IoError& e) {
      throw IoError("episode " + std::to_string(failed_episode) + ": " + e.what());
    } catch (const InvalidArgument& e) {
      throw InvalidArgument("episode " + std::to_string(failed_episode) + ": " + e.what());
    } catch (const std::exception& e) {
      throw Error("episode " + std::to_string(failed_episode) + ": " + e.what());
    }
  }

  std::vector<double> acc;
  acc.reserve(report.per_episode.size());
  for (const auto& rec : report.per_episode) acc.push_back(rec.accuracy);
  double sum = 0.0;
  for (double a : acc) sum += a;
  report.mean_accuracy = sum / static_cast<double>(acc.size());
  report.ci95 = ci95(acc);
  return report;
}

std::uint8_t similarity_to_pixel(double sim) {
  const double v = std::round(255.0 * (std::clamp(sim, -1.0, 1.0) + 1.0) / 2.0);
  return static_cast<std::uint8_t>(v);
}

namespace {

std::string class_starts(const Labels& labels) {
  std::ostringstream os;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i == 0 || labels[i] != labels[i - 1]) os << (i == 0 ? "" : ",") << i;
  }
  return os.str();
}

}  // namespace

void similarity_export(const EpisodeResult& result, const std::filesystem::path& path,
                       ExportFormat format, SimilarityView view) {
  const Matrix& sim =
      view == SimilarityView::Support ? result.support_similarity : result.query_support_similarity;
  const Labels& rows = view == SimilarityView::Support ? result.support_labels : result.query_labels;
  if (sim.size() == 0) throw InvalidArgument("episode result has no similarity matrix");

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  if (format == ExportFormat::Csv) {
    out << "# row_class_starts=" << class_starts(rows)
        << "; col_class_starts=" << class_starts(result.support_labels) << '\n';
    out << std::setprecision(17);
    for (Eigen::Index i = 0; i < sim.rows(); ++i) {
      for (Eigen::Index j = 0; j < sim.cols(); ++j) out << (j ? "," : "") << sim(i, j);
      out << '\n';
    }
  } else {
    out << "P5\n" << sim.cols() << ' ' << sim.rows() << "\n255\n";
    for (Eigen::Index i = 0; i < sim.rows(); ++i)
      for (Eigen::Index j = 0; j < sim.cols(); ++j) out.put(static_cast<char>(similarity_to_pixel(sim(i, j))));
  }
  if (!out) throw IoError("error writing '" + path.string() + "'");
}

Matrix read_similarity_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw IoError("ragged similarity CSV '" + path.string() + "'");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw IoError("empty similarity CSV '" + path.string() + "'");
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

bool lemma_b1_check(std::span<const double> a) {
  if (a.empty()) throw InvalidArgument("lemma check needs a non-empty vector");
  double mean = 0.0;
  double mean_exp = 0.0;
  for (double v : a) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw InvalidArgument("lemma check entries must lie in [0, 1], got " + std::to_string(v));
    }
    mean += v;
    mean_exp += std::exp(v);
  }
  const double n = static_cast<double>(a.size());
  mean /= n;
  mean_exp /= n;
  constexpr double e = std::numbers::e;
  return std::exp(mean) >= mean_exp - (e + (e - 1.0) * std::log(e - 1.0));
}

}  // namespace mokd
