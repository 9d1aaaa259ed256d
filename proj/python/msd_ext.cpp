#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "msd/analysis.hpp"
#include "msd/config.hpp"
#include "msd/denoiser.hpp"
#include "msd/error.hpp"
#include "msd/gmm.hpp"
#include "msd/runner.hpp"
#include "msd/version.hpp"

namespace py = pybind11;
using namespace msd;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using Mixture = std::shared_ptr<GaussianMixture>;

std::vector<Vec2> to_points(const Array& a) {
  if (a.ndim() != 2 || a.shape(1) != 2) throw std::invalid_argument("expected an (n, 2) array");
  auto r = a.unchecked<2>();
  std::vector<Vec2> out(static_cast<std::size_t>(a.shape(0)));
  for (py::ssize_t i = 0; i < a.shape(0); ++i) out[static_cast<std::size_t>(i)] = {r(i, 0), r(i, 1)};
  return out;
}

Array to_array(const std::vector<Vec2>& pts) {
  Array out({static_cast<py::ssize_t>(pts.size()), py::ssize_t{2}});
  auto w = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    w(static_cast<py::ssize_t>(i), 0) = pts[i].x;
    w(static_cast<py::ssize_t>(i), 1) = pts[i].y;
  }
  return out;
}

template <class F>
Array map_points(const Array& a, F&& f) {
  std::vector<Vec2> pts = to_points(a);
  for (auto& p : pts) p = f(p);
  return to_array(pts);
}

ExperimentConfig make_config(const std::map<std::string, std::string>& overrides) {
  ExperimentConfig cfg;
  for (const auto& [k, v] : overrides) set_config_value(cfg, k, v);
  cfg.validate();
  return cfg;
}

Dataset make_dataset(const Array& points, const std::optional<std::vector<int>>& labels) {
  Dataset d;
  d.points = to_points(points);
  if (labels) {
    if (labels->size() != d.points.size()) throw std::invalid_argument("labels must match points");
    d.labels = *labels;
  }
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Mean-shift distillation core: mixtures, denoisers, metrics and experiment runs";
  m.attr("__version__") = kVersion;

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  py::class_<GaussianMixture, Mixture>(m, "Mixture")
      .def(py::init([](const Array& table) {
             if (table.ndim() != 2 || table.shape(1) != 7)
               throw std::invalid_argument("expected rows of weight,mean_x,mean_y,cov_xx,cov_xy,cov_yy,label");
             auto r = table.unchecked<2>();
             std::vector<GaussianComponent> comps;
             for (py::ssize_t i = 0; i < table.shape(0); ++i)
               comps.push_back({r(i, 0), {r(i, 1), r(i, 2)}, {r(i, 3), r(i, 4), r(i, 5)}, static_cast<int>(r(i, 6))});
             return std::make_shared<GaussianMixture>(std::move(comps));
           }),
           py::arg("components"))
      .def_property_readonly("num_classes", &GaussianMixture::num_classes)
      .def("__len__", &GaussianMixture::size)
      .def("components",
           [](const GaussianMixture& g) {
             Array out({static_cast<py::ssize_t>(g.size()), py::ssize_t{7}});
             auto w = out.mutable_unchecked<2>();
             for (std::size_t i = 0; i < g.size(); ++i) {
               const auto& c = g.components()[i];
               const double row[7] = {c.weight,          c.mean.x,         c.mean.y, c.covariance.xx,
                                      c.covariance.xy,   c.covariance.yy,  static_cast<double>(c.label)};
               for (int k = 0; k < 7; ++k) w(static_cast<py::ssize_t>(i), k) = row[k];
             }
             return out;
           })
      .def("log_density",
           [](const GaussianMixture& g, const Array& x, ClassIndex cls) {
             const auto pts = to_points(x);
             py::array_t<double> out(static_cast<py::ssize_t>(pts.size()));
             auto w = out.mutable_unchecked<1>();
             for (std::size_t i = 0; i < pts.size(); ++i) w(static_cast<py::ssize_t>(i)) = g.log_density(pts[i], cls);
             return out;
           },
           py::arg("points"), py::arg("cls") = py::none())
      .def("score",
           [](const GaussianMixture& g, const Array& x, ClassIndex cls) {
             return map_points(x, [&](const Vec2& p) { return g.score(p, cls); });
           },
           py::arg("points"), py::arg("cls") = py::none())
      .def("smoothed", [](const GaussianMixture& g, double lambda) { return std::make_shared<GaussianMixture>(smoothed(g, lambda)); },
           py::arg("lam"))
      .def("modes", [](const GaussianMixture& g, ClassIndex cls) { return to_array(find_modes(g, cls)); },
           py::arg("cls") = py::none())
      .def("write_csv",
           [](const GaussianMixture& g, const std::filesystem::path& path) {
             std::ofstream os(path);
             write_mixture_csv(os, g);
           },
           py::arg("path"));

  m.def("read_mixture_csv", [](const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open " + path.string());
    return std::make_shared<GaussianMixture>(read_mixture_csv(is));
  });
  m.def("spiral", [](int n, double turns, double noise) { return std::make_shared<GaussianMixture>(build_spiral(n, turns, noise)); },
        py::arg("components") = 100, py::arg("turns") = 2.0, py::arg("noise") = 0.02);
  m.def("pinwheel",
        [](int blades, int per_blade, double twist) {
          return std::make_shared<GaussianMixture>(build_pinwheel(blades, per_blade, twist));
        },
        py::arg("blades") = 5, py::arg("per_blade") = 10, py::arg("twist") = 1.5);
  m.def("fractal",
        [](int depth, int branch, double anisotropy, std::uint64_t seed) {
          return std::make_shared<GaussianMixture>(build_fractal(depth, branch, anisotropy, seed));
        },
        py::arg("depth") = 5, py::arg("branch") = 2, py::arg("anisotropy") = 20.0, py::arg("seed") = 0);
  m.def("mixture_from_config",
        [](const std::map<std::string, std::string>& overrides) { return std::const_pointer_cast<GaussianMixture>(build_mixture(make_config(overrides).dataset)); },
        py::arg("overrides") = std::map<std::string, std::string>{});
  m.def("sample",
        [](const Mixture& g, std::size_t n, std::uint64_t seed, ClassIndex cls, const std::string& draw) {
          const Dataset d = sample(g, n, seed, cls, parse_sample_draw(draw));
          return py::make_tuple(to_array(d.points), py::array_t<int>(static_cast<py::ssize_t>(d.labels.size()), d.labels.data()));
        },
        py::arg("mixture"), py::arg("n"), py::arg("seed"), py::arg("cls") = py::none(), py::arg("draw") = "iid");

  py::class_<IdealDenoiser, std::shared_ptr<IdealDenoiser>>(m, "IdealDenoiser")
      .def(py::init([](const Array& points, const std::optional<std::vector<int>>& labels) {
             return std::make_shared<IdealDenoiser>(make_dataset(points, labels));
           }),
           py::arg("points"), py::arg("labels") = py::none())
      .def("denoise",
           [](const IdealDenoiser& d, const Array& z, double sigma, ClassIndex cls) {
             return map_points(z, [&](const Vec2& p) { return d.denoise(p, sigma, cls); });
           },
           py::arg("z"), py::arg("sigma"), py::arg("cls") = py::none());

  py::class_<LearnedDenoiser, std::shared_ptr<LearnedDenoiser>>(m, "LearnedDenoiser")
      .def_static("load", [](const std::filesystem::path& p) { return std::make_shared<LearnedDenoiser>(LearnedDenoiser::load(p)); })
      .def_property_readonly("conditional", &LearnedDenoiser::conditional)
      .def("denoise",
           [](const LearnedDenoiser& d, const Array& z, double sigma, ClassIndex cls) {
             return map_points(z, [&](const Vec2& p) { return d.denoise(p, sigma, cls); });
           },
           py::arg("z"), py::arg("sigma"), py::arg("cls") = py::none());

  m.def("mean_shift",
        [](const Array& points, const Array& x, double lambda) {
          const auto pts = to_points(points);
          return map_points(x, [&](const Vec2& p) { return mean_shift_iterate(pts, p, lambda); });
        },
        py::arg("points"), py::arg("x"), py::arg("lam"));
  m.def("nll", [](const Array& pts, const GaussianMixture& g, ClassIndex cls) { return nll(to_points(pts), g, cls); },
        py::arg("points"), py::arg("mixture"), py::arg("cls") = py::none());
  m.def("mmd", [](const Array& x, const Array& y, double h) { return mmd(to_points(x), to_points(y), h); },
        py::arg("x"), py::arg("y"), py::arg("bandwidth") = 0.0);
  m.def("precision_recall",
        [](const Array& gen, const Array& ref, int k) {
          const auto pr = precision_recall(to_points(gen), to_points(ref), k);
          return py::make_tuple(pr.precision, pr.recall);
        },
        py::arg("generated"), py::arg("reference"), py::arg("k") = 5);

  m.def("config_text", [](const std::map<std::string, std::string>& o) { return serialize_config(make_config(o)); },
        py::arg("overrides") = std::map<std::string, std::string>{});
  m.def("config_keys", &config_keys);
  m.def("run",
        [](const std::string& command, const std::map<std::string, std::string>& overrides, int threads) {
          const ExperimentConfig cfg = make_config(overrides);
          RunReport r;
          {
            py::gil_scoped_release release;
            r = run_command(command, cfg, threads);
          }
          return py::make_tuple(r.dir, r.files);
        },
        py::arg("command"), py::arg("overrides") = std::map<std::string, std::string>{}, py::arg("threads") = 1);
  m.def("git_blob_sha1", [](const py::bytes& b) { return git_blob_sha1(std::string_view(b)); });
}
