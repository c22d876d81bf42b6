#include "mokd/adapt.hpp"
#include "mokd/error.hpp"
#include "mokd/eval.hpp"
#include "mokd/hsic.hpp"
#include "mokd/kernels.hpp"
#include "mokd/tasks.hpp"

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;

namespace {

using mokd::Matrix;

void add_kernels(py::module_& m) {
  py::enum_<mokd::KernelFamily>(m, "KernelFamily")
      .value("Gaussian", mokd::KernelFamily::Gaussian)
      .value("IMQ", mokd::KernelFamily::IMQ)
      .value("CosineLinear", mokd::KernelFamily::CosineLinear);

  m.def("eval_kernel",
        [](mokd::KernelFamily family, double sigma, const mokd::RowVector& x, const mokd::RowVector& y) {
          return mokd::eval_kernel({family, sigma}, x, y);
        },
        py::arg("family"), py::arg("sigma"), py::arg("x"), py::arg("y"));
  m.def("kernel_matrix",
        [](const Matrix& z, mokd::KernelFamily family, double sigma, bool zero_diag) {
          return mokd::kernel_matrix({family, sigma}, z, zero_diag).data;
        },
        py::arg("z"), py::arg("family") = mokd::KernelFamily::Gaussian, py::arg("sigma") = 1.0,
        py::arg("zero_diag") = false);
  m.def("label_kernel_matrix",
        [](const mokd::Labels& labels, double l1, double l0, bool zero_diag) {
          return mokd::label_kernel_matrix(labels, l1, l0, zero_diag).data;
        },
        py::arg("labels"), py::arg("l1") = 1.0, py::arg("l0") = 0.0, py::arg("zero_diag") = true);
  m.def("median_sq_distance", &mokd::median_sq_distance, py::arg("z"));
}

void add_hsic(py::module_& m) {
  py::class_<mokd::HsicEstimate>(m, "HsicEstimate")
      .def_readonly("value", &mokd::HsicEstimate::value)
      .def_readonly("variance", &mokd::HsicEstimate::variance)
      .def_readonly("raw_variance", &mokd::HsicEstimate::raw_variance)
      .def_readonly("power_ratio", &mokd::HsicEstimate::power_ratio)
      .def_readonly("sigma", &mokd::HsicEstimate::sigma)
      .def_readonly("coefficient", &mokd::HsicEstimate::coefficient);

  py::class_<mokd::BandwidthGrid>(m, "BandwidthGrid")
      .def(py::init<>())
      .def_readwrite("coefficients", &mokd::BandwidthGrid::coefficients)
      .def_readwrite("epsilon", &mokd::BandwidthGrid::epsilon);

  py::class_<mokd::BandwidthSelection>(m, "BandwidthSelection")
      .def_readonly("sigma", &mokd::BandwidthSelection::sigma)
      .def_readonly("coefficient", &mokd::BandwidthSelection::coefficient)
      .def_readonly("sigma0", &mokd::BandwidthSelection::sigma0)
      .def_readonly("index", &mokd::BandwidthSelection::index)
      .def_readonly("table", &mokd::BandwidthSelection::table);

  m.def("hsic_unbiased", py::overload_cast<const Matrix&, const Matrix&>(&mokd::hsic_unbiased),
        py::arg("kt"), py::arg("lt"));
  m.def("hsic_variance",
        [](const Matrix& kt, const Matrix& lt, double value, bool squared) {
          return mokd::hsic_variance(kt, lt, value,
                                     squared ? mokd::VarianceNormalization::SquaredPochhammer
                                             : mokd::VarianceNormalization::LinearPochhammer);
        },
        py::arg("kt"), py::arg("lt"), py::arg("hsic_value"), py::arg("squared_pochhammer") = true);
  m.def("power_ratio", &mokd::power_ratio, py::arg("value"), py::arg("variance"),
        py::arg("epsilon") = 1e-5);
  m.def("select_bandwidth",
        py::overload_cast<const Matrix&, const mokd::Labels&, mokd::KernelFamily,
                          const mokd::BandwidthGrid&>(&mokd::select_bandwidth),
        py::arg("z"), py::arg("labels"), py::arg("family") = mokd::KernelFamily::Gaussian,
        py::arg("grid") = mokd::BandwidthGrid{});
  m.def("select_bandwidth_target",
        py::overload_cast<const Matrix&, const Matrix&, mokd::KernelFamily,
                          const mokd::BandwidthGrid&>(&mokd::select_bandwidth),
        py::arg("z"), py::arg("target"), py::arg("family") = mokd::KernelFamily::Gaussian,
        py::arg("grid") = mokd::BandwidthGrid{});
}

void add_tasks(py::module_& m) {
  py::class_<mokd::EmbeddingDataset>(m, "EmbeddingDataset")
      .def(py::init<>())
      .def_readwrite("classes", &mokd::EmbeddingDataset::classes)
      .def_readwrite("name", &mokd::EmbeddingDataset::name)
      .def_property_readonly("num_classes", &mokd::EmbeddingDataset::num_classes)
      .def_property_readonly("dim", &mokd::EmbeddingDataset::dim)
      .def("__eq__", [](const mokd::EmbeddingDataset& a, const mokd::EmbeddingDataset& b) { return a == b; });

  py::class_<mokd::SamplerConfig>(m, "SamplerConfig")
      .def(py::init<>())
      .def_readwrite("n_max", &mokd::SamplerConfig::n_max)
      .def_readwrite("max_support", &mokd::SamplerConfig::max_support)
      .def_readwrite("max_query_per_class", &mokd::SamplerConfig::max_query_per_class)
      .def_readwrite("max_shots_per_class", &mokd::SamplerConfig::max_shots_per_class)
      .def_readwrite("fixed_way", &mokd::SamplerConfig::fixed_way)
      .def_readwrite("fixed_shot", &mokd::SamplerConfig::fixed_shot)
      .def_readwrite("fixed_query", &mokd::SamplerConfig::fixed_query);

  py::class_<mokd::Task>(m, "Task")
      .def(py::init<>())
      .def_readwrite("support", &mokd::Task::support)
      .def_readwrite("support_labels", &mokd::Task::support_labels)
      .def_readwrite("query", &mokd::Task::query)
      .def_readwrite("query_labels", &mokd::Task::query_labels)
      .def_readonly("classes", &mokd::Task::classes)
      .def_property_readonly("way", &mokd::Task::way);

  m.def("synth_dataset",
        [](int n_classes, int per_class, int dim, double separation, double noise, std::uint64_t seed) {
          mokd::Rng rng(seed);
          return mokd::synth_dataset(n_classes, per_class, dim, separation, noise, rng);
        },
        py::arg("n_classes"), py::arg("per_class"), py::arg("dim"), py::arg("separation"),
        py::arg("noise"), py::arg("seed") = 0);
  m.def("sample_task",
        [](const mokd::EmbeddingDataset& ds, const mokd::SamplerConfig& cfg, std::uint64_t seed,
           std::uint64_t episode) {
          mokd::Rng rng = mokd::episode_rng(seed, episode);
          return mokd::sample_task(ds, cfg, rng);
        },
        py::arg("dataset"), py::arg("config") = mokd::SamplerConfig{}, py::arg("seed") = 0,
        py::arg("episode") = 0);
  m.def("compute_query_size", [](const std::vector<int>& sizes, int max_query) {
    return mokd::compute_query_size(sizes, max_query);
  }, py::arg("class_sizes"), py::arg("max_query") = 10);
  m.def("save_embeddings", &mokd::save_embeddings, py::arg("dataset"), py::arg("path"));
  m.def("save_embeddings_csv", &mokd::save_embeddings_csv, py::arg("dataset"), py::arg("path"));
  m.def("load_embeddings", &mokd::load_embeddings, py::arg("path"));
}

void add_adapt(py::module_& m) {
  py::enum_<mokd::AdaptLoss>(m, "AdaptLoss")
      .value("Mokd", mokd::AdaptLoss::Mokd)
      .value("Ncc", mokd::AdaptLoss::Ncc);

  py::class_<mokd::LinearHead>(m, "LinearHead")
      .def_static("identity", &mokd::LinearHead::identity, py::arg("dim"))
      .def(py::init([](const Matrix& theta) { return mokd::LinearHead{theta}; }), py::arg("theta"))
      .def_readwrite("theta", &mokd::LinearHead::theta);

  py::class_<mokd::AdaptConfig>(m, "AdaptConfig")
      .def(py::init<>())
      .def_readwrite("gamma", &mokd::AdaptConfig::gamma)
      .def_readwrite("learning_rate", &mokd::AdaptConfig::learning_rate)
      .def_readwrite("steps", &mokd::AdaptConfig::steps)
      .def_readwrite("weight_decay", &mokd::AdaptConfig::weight_decay)
      .def_readwrite("grid", &mokd::AdaptConfig::grid)
      .def_readwrite("kernel_family", &mokd::AdaptConfig::kernel_family)
      .def_readwrite("share_zz_coefficient", &mokd::AdaptConfig::share_zz_coefficient)
      .def_readwrite("normalize_features", &mokd::AdaptConfig::normalize_features)
      .def_readwrite("loss", &mokd::AdaptConfig::loss);

  py::class_<mokd::EpisodeResult>(m, "EpisodeResult")
      .def_readonly("final_head", &mokd::EpisodeResult::final_head)
      .def_readonly("loss_trace", &mokd::EpisodeResult::loss_trace)
      .def_readonly("sigma_zy", &mokd::EpisodeResult::sigma_zy)
      .def_readonly("sigma_zz", &mokd::EpisodeResult::sigma_zz)
      .def_readonly("initial_query_accuracy", &mokd::EpisodeResult::initial_query_accuracy)
      .def_readonly("query_accuracy", &mokd::EpisodeResult::query_accuracy)
      .def_readonly("query_predictions", &mokd::EpisodeResult::query_predictions)
      .def_readonly("support_similarity", &mokd::EpisodeResult::support_similarity)
      .def_readonly("query_support_similarity", &mokd::EpisodeResult::query_support_similarity);

  m.def("transform", &mokd::transform, py::arg("head"), py::arg("u"), py::arg("normalize") = true);
  m.def("ncc_loss", &mokd::ncc_loss, py::arg("z"), py::arg("labels"));
  m.def("ncc_predict", &mokd::ncc_predict, py::arg("head"), py::arg("support"),
        py::arg("support_labels"), py::arg("query"), py::arg("normalize") = true);
  m.def("mokd_loss", &mokd::mokd_loss, py::arg("z"), py::arg("labels"), py::arg("sigma_zy"),
        py::arg("sigma_zz"), py::arg("gamma"), py::arg("family") = mokd::KernelFamily::Gaussian);
  m.def("mokd_gradient", &mokd::mokd_gradient, py::arg("head"), py::arg("u"), py::arg("labels"),
        py::arg("sigma_zy"), py::arg("sigma_zz"), py::arg("gamma"),
        py::arg("family") = mokd::KernelFamily::Gaussian, py::arg("normalize") = true);
  m.def("run_episode", &mokd::run_episode, py::arg("task"), py::arg("config") = mokd::AdaptConfig{},
        py::call_guard<py::gil_scoped_release>());
}

void add_eval(py::module_& m) {
  py::class_<mokd::EpisodeRecord>(m, "EpisodeRecord")
      .def_readonly("episode", &mokd::EpisodeRecord::episode)
      .def_readonly("accuracy", &mokd::EpisodeRecord::accuracy)
      .def_readonly("sigma_zy", &mokd::EpisodeRecord::sigma_zy)
      .def_readonly("final_loss", &mokd::EpisodeRecord::final_loss);

  py::class_<mokd::EvalReport>(m, "EvalReport")
      .def_readonly("episodes", &mokd::EvalReport::episodes)
      .def_readonly("mean_accuracy", &mokd::EvalReport::mean_accuracy)
      .def_readonly("ci95", &mokd::EvalReport::ci95)
      .def_readonly("per_episode", &mokd::EvalReport::per_episode);

  m.def("evaluate",
        [](const mokd::EmbeddingDataset& ds, const mokd::SamplerConfig& sampler,
           const mokd::AdaptConfig& adapt, int n_episodes, std::uint64_t seed, unsigned jobs) {
          return mokd::evaluate(ds, sampler, adapt, n_episodes, seed, jobs);
        },
        py::arg("dataset"), py::arg("sampler") = mokd::SamplerConfig{},
        py::arg("adapt") = mokd::AdaptConfig{}, py::arg("episodes") = 100, py::arg("seed") = 0,
        py::arg("jobs") = 1, py::call_guard<py::gil_scoped_release>());
  m.def("lemma_b1_check", [](const std::vector<double>& a) { return mokd::lemma_b1_check(a); },
        py::arg("a"));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Kernel-dependence few-shot adaptation on precomputed embeddings.";

  py::register_exception<mokd::InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<mokd::IoError>(m, "IoError", PyExc_OSError);

  add_kernels(m);
  add_hsic(m);
  add_tasks(m);
  add_adapt(m);
  add_eval(m);
}
