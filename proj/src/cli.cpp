#include "mokd/cli.hpp"

#include "mokd/error.hpp"
#include "mokd/eval.hpp"
#include "mokd/hsic.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>

namespace mokd::cli {

namespace {

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  int classes = 20;
  int per_class = 40;
  int dim = 32;
  double separation = 6.0;
  double noise = 1.0;
  std::uint64_t seed = 0;
  std::string out;
  std::string format = "emb1";
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  Rng rng(a.seed);
  const EmbeddingDataset ds = synth_dataset(a.classes, a.per_class, a.dim, a.separation, a.noise, rng);
  if (a.format == "csv") {
    save_embeddings_csv(ds, a.out);
  } else {
    save_embeddings(ds, a.out);
  }
  out << "wrote " << ds.num_classes() << " classes x " << a.per_class << " rows, dim " << a.dim
      << " to " << a.out << '\n';
  return kOk;
}

// ---------------------------------------------------------------- hsic

struct HsicArgs {
  std::string embeddings;
  std::string labels_from = "embedded";
  std::string labels_path;
  std::string target = "labels";
  std::string kernel = "gaussian";
  double coeff = 0.0;
  std::string grid;
  double epsilon = 1e-5;
  bool normalize = false;
  std::string format = "table";
};

Labels read_label_file(const std::string& path, std::size_t expected) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open label file '" + path + "'");
  Labels labels;
  long v = 0;
  while (in >> v) labels.push_back(static_cast<int>(v));
  if (!in.eof()) throw IoError("label file '" + path + "' contains a non-integer token");
  if (labels.size() != expected) {
    throw InvalidArgument("label file has " + std::to_string(labels.size()) + " labels, dataset has " +
                          std::to_string(expected) + " rows");
  }
  return labels;
}

int cmd_hsic(const HsicArgs& a, bool coeff_given, bool grid_given, std::ostream& out) {
  if (coeff_given && grid_given) throw InvalidArgument("--coeff and --grid are mutually exclusive");
  const EmbeddingDataset ds = load_embeddings(a.embeddings);
  ds.validate();
  Matrix z;
  Labels labels;
  flatten(ds, z, labels);
  if (a.labels_from == "file") {
    if (a.labels_path.empty()) throw InvalidArgument("--labels-from file needs --labels <path>");
    labels = read_label_file(a.labels_path, static_cast<std::size_t>(z.rows()));
  }
  if (a.normalize) z = transform(LinearHead::identity(z.cols()), z, true);

  BandwidthGrid grid;
  grid.epsilon = a.epsilon;
  if (coeff_given) grid.coefficients = {a.coeff};
  if (grid_given) grid.coefficients = parse_double_list(a.grid);
  const KernelFamily family = parse_kernel_family(a.kernel);

  const BandwidthSelection sel = a.target == "self" ? select_bandwidth(z, z, family, grid)
                                                    : select_bandwidth(z, labels, family, grid);
  if (a.format == "csv") {
    out << "coefficient,sigma,hsic,variance,power_ratio,selected\n";
    for (std::size_t i = 0; i < sel.table.size(); ++i) {
      const auto& row = sel.table[i];
      out << fmt("%.17g", row.coefficient) << ',' << fmt("%.17g", row.sigma) << ','
          << fmt("%.17g", row.value) << ',' << fmt("%.17g", row.variance) << ','
          << fmt("%.17g", row.power_ratio) << ',' << (i == sel.index ? 1 : 0) << '\n';
    }
    return kOk;
  }
  out << "samples: " << z.rows() << "  dim: " << z.cols() << "  kernel: " << a.kernel
      << "  target: " << (a.target == "self" ? "HSIC(Z,Z)" : "HSIC(Z,Y)")
      << "  sigma0: " << fmt("%.6g", sel.sigma0) << '\n';
  char header[128];
  std::snprintf(header, sizeof(header), "  %11s  %12s  %12s  %12s  %12s\n", "coefficient", "sigma",
                "hsic", "variance", "power_ratio");
  out << header;
  for (std::size_t i = 0; i < sel.table.size(); ++i) {
    const auto& row = sel.table[i];
    out << (i == sel.index ? "* " : "  ") << fmt("%11.4g", row.coefficient) << "  "
        << fmt("%12.6g", row.sigma) << "  " << fmt("%12.6g", row.value) << "  "
        << fmt("%12.6g", row.variance) << "  " << fmt("%12.6g", row.power_ratio) << '\n';
  }
  out << "selected: coefficient=" << fmt("%.6g", sel.coefficient) << " sigma=" << fmt("%.6g", sel.sigma)
      << " hsic=" << fmt("%.6g", sel.best().value) << " power_ratio=" << fmt("%.6g", sel.best().power_ratio)
      << '\n';
  return kOk;
}

// ---------------------------------------------------------------- eval

int cmd_eval(const std::string& embeddings, const RunSettings& s, const std::string& heatmap_dir,
             bool verbose, std::ostream& out, std::ostream& err) {
  const EmbeddingDataset ds = load_embeddings(embeddings);
  if (!heatmap_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(heatmap_dir, ec);
    if (ec) throw IoError("cannot create heatmap directory '" + heatmap_dir + "': " + ec.message());
  }
  std::mutex log_mutex;
  EpisodeCallback on_episode;
  if (verbose || !heatmap_dir.empty()) {
    on_episode = [&](std::uint64_t i, const Task& task, const EpisodeResult& res) {
      if (!heatmap_dir.empty()) {
        char stem[32];
        std::snprintf(stem, sizeof(stem), "episode_%04llu", static_cast<unsigned long long>(i));
        const std::filesystem::path base = std::filesystem::path(heatmap_dir) / stem;
        similarity_export(res, base.string() + "_support.pgm", ExportFormat::Pgm);
        similarity_export(res, base.string() + "_support.csv", ExportFormat::Csv);
        similarity_export(res, base.string() + "_query_support.pgm", ExportFormat::Pgm,
                          SimilarityView::QuerySupport);
      }
      if (verbose) {
        std::lock_guard lock(log_mutex);
        err << "episode " << i << ": way=" << task.way() << " support=" << task.support.rows()
            << " query=" << task.query.rows() << " acc=" << fmt("%.4f", res.query_accuracy)
            << " (initial " << fmt("%.4f", res.initial_query_accuracy) << ") sigma_zy="
            << fmt("%.4g", res.sigma_zy) << " loss=" << fmt("%.6g", res.loss_trace.back()) << '\n';
      }
    };
  }
  const EvalReport report =
      evaluate(ds, s.sampler, s.adapt, s.episodes, s.seed, s.jobs, on_episode);

  double initial = 0.0;
  for (const auto& rec : report.per_episode) initial += rec.initial_accuracy;
  initial /= report.episodes;

  out << "dataset: " << ds.name << " (" << ds.num_classes() << " classes, dim " << ds.dim() << ")\n";
  const std::string_view kernel =
      s.adapt.loss == AdaptLoss::Ncc ? "cosine" : to_string(s.adapt.kernel_family);
  out << "loss: " << to_string(s.adapt.loss) << "  kernel: " << kernel
      << "  gamma: " << fmt("%g", s.adapt.gamma) << "  lr: " << fmt("%g", s.adapt.learning_rate)
      << "  steps: " << s.adapt.steps << "  weight_decay: " << fmt("%g", s.adapt.weight_decay)
      << "  share_zz: " << (s.adapt.share_zz_coefficient ? "true" : "false") << '\n';
  out << "episodes: " << report.episodes << '\n';
  out << "initial_accuracy: " << fmt("%.4f", initial) << '\n';
  out << "mean_accuracy: " << fmt("%.4f", report.mean_accuracy) << '\n';
  out << "ci95: " << fmt("%.4f", report.ci95) << '\n';
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Kernel-dependence few-shot adaptation on precomputed embeddings", "mokd"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic embedding dataset");
  synth_cmd->add_option("--classes", synth.classes, "Number of classes")->capture_default_str();
  synth_cmd->add_option("--per-class", synth.per_class, "Samples per class")->capture_default_str();
  synth_cmd->add_option("--dim", synth.dim, "Feature dimension")->capture_default_str();
  synth_cmd->add_option("--separation", synth.separation, "Norm of class means")->capture_default_str();
  synth_cmd->add_option("--noise", synth.noise, "Noise standard deviation")->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed, "RNG seed")->capture_default_str();
  synth_cmd->add_option("--out", synth.out, "Output path")->required();
  synth_cmd->add_option("--format", synth.format, "emb1 or csv")
      ->check(CLI::IsMember({"emb1", "csv"}))
      ->capture_default_str();

  HsicArgs hsic;
  auto* hsic_cmd = app.add_subcommand("hsic", "Bandwidth grid search and HSIC diagnostics");
  hsic_cmd->add_option("--embeddings", hsic.embeddings, "EMB1 or CSV dataset")->required();
  hsic_cmd->add_option("--labels-from", hsic.labels_from, "embedded (class blocks) or file")
      ->check(CLI::IsMember({"embedded", "file"}))
      ->capture_default_str();
  hsic_cmd->add_option("--labels", hsic.labels_path, "Label file (one integer per row)");
  hsic_cmd->add_option("--target", hsic.target, "labels for HSIC(Z,Y), self for HSIC(Z,Z)")
      ->check(CLI::IsMember({"labels", "self"}))
      ->capture_default_str();
  hsic_cmd->add_option("--kernel", hsic.kernel, "gaussian or imq")
      ->check(CLI::IsMember({"gaussian", "imq"}))
      ->capture_default_str();
  auto* coeff_opt = hsic_cmd->add_option("--coeff", hsic.coeff, "Single bandwidth coefficient");
  auto* grid_opt = hsic_cmd->add_option("--grid", hsic.grid, "Comma-separated coefficients");
  hsic_cmd->add_option("--epsilon", hsic.epsilon, "Power-ratio epsilon")->capture_default_str();
  hsic_cmd->add_flag("--normalize", hsic.normalize, "L2-normalise rows first");
  hsic_cmd->add_option("--format", hsic.format, "table or csv")
      ->check(CLI::IsMember({"table", "csv"}))
      ->capture_default_str();

  auto* eval_cmd = app.add_subcommand("eval", "Multi-episode adaptation and evaluation");
  std::string embeddings;
  std::string config_path;
  std::string heatmap_dir;
  bool verbose = false;
  eval_cmd->add_option("--embeddings", embeddings, "EMB1 or CSV dataset")->required();
  eval_cmd->add_option("--config", config_path, "key=value config file");
  eval_cmd->add_option("--dump-heatmaps", heatmap_dir, "Directory for per-episode heatmaps");
  eval_cmd->add_flag("--verbose", verbose, "Log one line per episode to stderr");
  // Flag name -> config key; values are parsed by apply_setting so flags and
  // config files share validation.
  const std::vector<std::pair<std::string, std::string>> flag_keys{
      {"--episodes", "episodes"},   {"--seed", "seed"},
      {"--gamma", "gamma"},         {"--lr", "learning_rate"},
      {"--steps", "steps"},         {"--weight-decay", "weight_decay"},
      {"--kernel", "kernel"},       {"--share-zz", "share_zz_coefficient"},
      {"--loss", "loss"},           {"--epsilon", "epsilon"},
      {"--grid", "grid"},           {"--normalize", "normalize_features"},
      {"--rho", "rho"},             {"--opt-eps", "opt_eps"},
      {"--n-max", "n_max"},         {"--way", "way"},
      {"--shot", "shot"},           {"--query", "query"},
      {"--jobs", "jobs"}};
  std::map<std::string, std::string> flag_values;
  std::vector<std::pair<CLI::Option*, std::string>> flag_options;
  for (const auto& [flag, key] : flag_keys) {
    flag_options.emplace_back(eval_cmd->add_option(flag, flag_values[key], "Overrides config key '" + key + "'"),
                              key);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    if (const auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front()) {
      err << "see '" << "mokd " << sub->get_name() << " --help'\n";
    } else {
      err << "see 'mokd --help'\n";
    }
    return kUsage;
  }

  try {
    if (synth_cmd->parsed()) return cmd_synth(synth, out);
    if (hsic_cmd->parsed()) return cmd_hsic(hsic, coeff_opt->count() > 0, grid_opt->count() > 0, out);
    if (eval_cmd->parsed()) {
      RunSettings settings;
      if (!config_path.empty()) {
        for (const auto& [key, value] : read_config_file(config_path)) apply_setting(settings, key, value);
      }
      for (const auto& [opt, key] : flag_options) {
        if (opt->count() > 0) apply_setting(settings, key, flag_values[key]);
      }
      return cmd_eval(embeddings, settings, heatmap_dir, verbose, out, err);
    }
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kIoError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kIoError;
  }
  return kUsage;
}

}  // namespace mokd::cli
