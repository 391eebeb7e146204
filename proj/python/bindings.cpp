#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "fracdiag/cli.hpp"
#include "fracdiag/error.hpp"
#include "fracdiag/fractal.hpp"
#include "fracdiag/graph.hpp"
#include "fracdiag/phaseflow.hpp"
#include "fracdiag/report.hpp"
#include "fracdiag/segmentation.hpp"
#include "fracdiag/snapshot.hpp"
#include "fracdiag/trainer.hpp"

namespace py = pybind11;
using namespace fracdiag;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
    if (a.ndim() != 2) throw py::value_error("expected a 2-D array");
    return Matrix(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
                  std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const std::vector<std::size_t>& shape, const std::vector<double>& values) {
    std::vector<py::ssize_t> dims(shape.begin(), shape.end());
    Array out(dims);
    std::copy(values.begin(), values.end(), out.mutable_data());
    return out;
}

Array to_array(const Matrix& m) {
    return to_array({m.rows(), m.cols()}, std::vector<double>(m.values().begin(), m.values().end()));
}

Segment as_segment(const Array& values) {
    Segment s;
    s.values = to_matrix(values);
    s.size = s.values.rows();
    return s;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "fractal diagnostics for neural-network training runs";

    static py::exception<Error> error(m, "FracdiagError");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            const auto msg = std::string(code_name(e.code())) + ": " + e.what();
            PyErr_SetString(error.ptr(), msg.c_str());
        }
    });

    m.def("valid_scales", [](std::size_t n, std::size_t m_) { return valid_scales(n, m_).scales; }, py::arg("n"),
          py::arg("m"));
    m.def("segment_starts", &segment_starts, py::arg("dim"), py::arg("r"));

    m.def(
        "segments",
        [](const Array& slice, std::size_t r) {
            py::list out;
            for (const auto& s : extract_segments(to_matrix(slice), "", {}, r)) {
                py::dict d;
                d["grid"] = py::make_tuple(s.grid_i, s.grid_j);
                d["origin"] = py::make_tuple(s.row_start, s.col_start);
                d["values"] = to_array(s.values);
                out.append(d);
            }
            return out;
        },
        py::arg("slice"), py::arg("r"), "Clamp-shift r x r segments of a 2-D slice.");

    m.def(
        "box_count",
        [](const py::array_t<bool, py::array::c_style | py::array::forcecast>& grid, std::size_t b) {
            if (grid.ndim() != 2) throw py::value_error("expected a 2-D boolean array");
            BoolGrid g(static_cast<std::size_t>(grid.shape(0)), static_cast<std::size_t>(grid.shape(1)));
            auto view = grid.unchecked<2>();
            for (py::ssize_t i = 0; i < grid.shape(0); ++i)
                for (py::ssize_t j = 0; j < grid.shape(1); ++j) g.set(i, j, view(i, j));
            return box_count(g, b).occupied;
        },
        py::arg("grid"), py::arg("b"));

    m.def(
        "fractal_dimension",
        [](const Array& segment, double tau) {
            const auto s = as_segment(segment);
            const auto est = fractal_dimension(s, s.size, tau);
            return py::make_tuple(est.fd, est.degenerate);
        },
        py::arg("segment"), py::arg("tau"), "Returns (fd, degenerate).");

    m.def(
        "entropy",
        [](const Array& values, std::optional<std::size_t> bins) {
            const auto s = as_segment(values);
            return entropy(s, bins.value_or(default_bins(s.size))).h;
        },
        py::arg("segment"), py::arg("bins") = py::none());

    m.def(
        "kernel_edge",
        [](const std::vector<double>& a, const std::vector<double>& b, double gamma, const std::string& sign) {
            return kernel_edge(a, b, gamma, parse_kernel_sign(sign));
        },
        py::arg("a"), py::arg("b"), py::arg("gamma") = 1.0, py::arg("sign") = "paper");

    m.def(
        "propagation_operator",
        [](const Array& adjacency, const std::string& norm) {
            return to_array(propagation_operator(to_matrix(adjacency), parse_normalization(norm)));
        },
        py::arg("adjacency"), py::arg("norm") = "paper");

    m.def(
        "finite_differences",
        [](const std::vector<double>& g) {
            auto d = finite_differences(g);
            return py::make_tuple(d.d1, d.d2);
        },
        py::arg("values"));

    py::class_<RunArchive>(m, "Run")
        .def_property_readonly("run_id", [](const RunArchive& r) { return r.manifest().run_id; })
        .def_property_readonly("seed", [](const RunArchive& r) { return r.manifest().seed; })
        .def_property_readonly("epochs",
                               [](const RunArchive& r) {
                                   std::vector<std::uint64_t> out;
                                   for (const auto& e : r.manifest().epochs) out.push_back(e.epoch);
                                   return out;
                               })
        .def("loss", [](const RunArchive& r, std::uint64_t epoch) { return r.epoch(epoch).loss; })
        .def("tensor_names",
             [](const RunArchive& r, std::uint64_t epoch) {
                 std::vector<std::string> out;
                 for (const auto& t : r.epoch(epoch).tensors) out.push_back(t.name);
                 return out;
             })
        .def("tensor", [](const RunArchive& r, std::uint64_t epoch, const std::string& name) {
            const auto t = r.tensor(epoch, name);
            return to_array(t.shape, t.values);
        });

    m.def("open_run", &open_run, py::arg("path"), "Read a .fsnp file or ingest a manifest directory.");

    m.def(
        "train_synthetic",
        [](std::uint64_t seed, std::size_t samples, std::size_t classes, std::size_t epochs,
           std::optional<std::filesystem::path> out) {
            const auto data = synth_dataset(seed, samples, classes);
            auto cfg = desk_preset(data.shape, classes);
            cfg.seed = seed;
            cfg.epochs = epochs;
            TrainResult result;
            {
                py::gil_scoped_release release;
                result = out ? train(cfg, data, *out) : train(cfg, data);
            }
            py::dict d;
            d["initial_loss"] = result.initial_loss;
            d["epoch_loss"] = result.epoch_loss;
            d["final_accuracy"] = result.final_accuracy;
            d["run"] = std::move(result.run);
            return d;
        },
        py::arg("seed") = 42, py::arg("samples") = 200, py::arg("classes") = 4, py::arg("epochs") = 10,
        py::arg("out") = py::none(), "Train the desk model on the synthetic grating set.");

    m.def(
        "report",
        [](const std::filesystem::path& run, const std::filesystem::path& out, std::size_t threads) {
            ReportConfig cfg;
            cfg.features.threads = threads;
            const auto archive = open_run(run);
            py::gil_scoped_release release;
            return full_report(archive, out, cfg);
        },
        py::arg("run"), py::arg("out"), py::arg("threads") = 1, "Run the full pipeline; returns summary.json text.");

    m.def(
        "main",
        [](std::vector<std::string> args) {
            args.insert(args.begin(), "fracdiag");
            std::vector<const char*> argv;
            for (const auto& a : args) argv.push_back(a.c_str());
            std::ostringstream out, err;
            const int code = dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Run a CLI command in-process; returns (exit_code, stdout, stderr).");
}
