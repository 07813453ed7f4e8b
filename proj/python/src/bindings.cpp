// Python extension: thin wrappers over the C++ core. JSON-shaped arguments
// cross the boundary as strings; the Python package converts to dicts.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "json.hpp"

#include "vidmem/baselines.hpp"
#include "vidmem/consolidation.hpp"
#include "vidmem/error.hpp"
#include "vidmem/harness.hpp"
#include "vidmem/memory.hpp"
#include "vidmem/pipeline.hpp"
#include "vidmem/streamio.hpp"

namespace py = pybind11;
using nlohmann::json;
using namespace vidmem;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

TokenMatrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw Error(Errc::ShapeMismatch, "frame must be a 2-D (tokens, dims) array");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  return TokenMatrix(rows, cols, std::span<const double>(a.data(), rows * cols));
}

std::vector<double> to_vector(const Array& a) {
  if (a.ndim() != 1) throw Error(Errc::ShapeMismatch, "expected a 1-D array");
  return {a.data(), a.data() + a.size()};
}

std::optional<std::vector<double>> to_question(const std::optional<Array>& q) {
  if (!q) return std::nullopt;
  return to_vector(*q);
}

Array to_array(const TokenMatrix& m) {
  Array out({m.rows(), m.cols()});
  std::copy(m.values().begin(), m.values().end(), out.mutable_data());
  return out;
}

Array to_array(const std::vector<double>& v) {
  Array out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

Array stack(const std::vector<TokenMatrix>& frames) {
  if (frames.empty()) return Array(std::vector<py::ssize_t>{0, 0, 0});
  const auto n = frames.front().rows();
  const auto d = frames.front().cols();
  Array out({frames.size(), n, d});
  double* dst = out.mutable_data();
  for (const TokenMatrix& f : frames) dst = std::copy(f.values().begin(), f.values().end(), dst);
  return out;
}

std::vector<TokenMatrix> unstack(const Array& a) {
  if (a.ndim() != 3) throw Error(Errc::ShapeMismatch, "frames must be a 3-D (T, tokens, dims) array");
  const auto t = static_cast<std::size_t>(a.shape(0));
  const auto n = static_cast<std::size_t>(a.shape(1));
  const auto d = static_cast<std::size_t>(a.shape(2));
  std::vector<TokenMatrix> out;
  out.reserve(t);
  for (std::size_t i = 0; i < t; ++i) {
    out.emplace_back(n, d, std::span<const double>(a.data() + i * n * d, n * d));
  }
  return out;
}

std::vector<WeightedFrame> to_sources(const std::vector<Array>& frames) {
  std::vector<WeightedFrame> out;
  out.reserve(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) out.push_back(WeightedFrame::source(to_matrix(frames[i]), i));
  return out;
}

ConsolidationConfig consolidation_config(const std::string& text) {
  PipelineConfig cfg;
  from_json(json::parse(text.empty() ? "{}" : text), cfg);
  cfg.consolidation.validate();
  return cfg.consolidation;
}

std::string dump(const json& j) { return j.dump(); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Question-aware streaming memory core";
  m.attr("__version__") = kVersion;

  static py::exception<Error> error(m, "VidmemError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, e.what());
    }
  });

  py::class_<WeightedFrame>(m, "WeightedFrame")
      .def_property_readonly("tokens", [](const WeightedFrame& f) { return to_array(f.tokens); })
      .def_readonly("weight", &WeightedFrame::weight)
      .def_property_readonly("provenance",
                             [](const WeightedFrame& f) {
                               std::vector<std::pair<std::uint64_t, std::uint64_t>> out;
                               for (const Interval& iv : f.provenance) out.emplace_back(iv.begin, iv.end);
                               return out;
                             })
      .def_readonly("context", &WeightedFrame::context)
      .def("__repr__", [](const WeightedFrame& f) {
        return "<WeightedFrame weight=" + std::to_string(f.weight) +
               " tokens=" + std::to_string(f.tokens.rows()) + ">";
      });

  m.def("cosine", [](const Array& u, const Array& v) { return cosine(to_vector(u), to_vector(v)); });
  m.def("frame_descriptor", [](const Array& x) { return to_array(frame_descriptor(to_matrix(x))); });
  m.def("frame_pair_similarity",
        [](const Array& a, const Array& b) { return frame_pair_similarity(to_matrix(a), to_matrix(b)); });

  m.def(
      "_consolidate",
      [](const std::vector<Array>& frames, const std::optional<Array>& q, const std::string& cfg) {
        MergeResult r = consolidate(to_sources(frames), to_question(q), consolidation_config(cfg));
        json report = r.report;
        return py::make_tuple(r.frames, dump(report));
      },
      py::arg("frames"), py::arg("question") = py::none(), py::arg("config") = "");
  m.def(
      "_greedy_merge",
      [](const std::vector<Array>& frames, std::size_t target) {
        MergeResult r = greedy_merge(to_sources(frames), target);
        json report = r.report;
        return py::make_tuple(r.frames, dump(report));
      },
      py::arg("frames"), py::arg("target"));

  m.def("no_memory", [](const Array& frames, std::size_t count) { return no_memory(unstack(frames), count); },
        py::arg("frames"), py::arg("sample_count") = 16);
  m.def("spatial_pool", [](const Array& frames) { return spatial_pool(unstack(frames)); });
  m.def("temporal_pool", [](const Array& frames) { return temporal_pool(unstack(frames)); });
  m.def("ema", [](const Array& frames, double lambda) { return ema(unstack(frames), lambda); },
        py::arg("frames"), py::arg("lam") = 0.9);

  m.def(
      "read_stream",
      [](const std::filesystem::path& path) {
        EmbeddingStream s = read_stream_file(path);
        py::object q = s.question ? py::object(to_array(*s.question)) : py::none();
        return py::make_tuple(stack(s.frames), q);
      },
      py::arg("path"));
  m.def(
      "write_stream",
      [](const std::filesystem::path& path, const Array& frames, const std::optional<Array>& q) {
        const auto mats = unstack(frames);
        const FrameShape shape{static_cast<std::size_t>(frames.shape(1)),
                               static_cast<std::size_t>(frames.shape(2))};
        return write_stream_file(path, StreamHeader::make(mats.size(), shape, q.has_value()), mats,
                                 to_question(q));
      },
      py::arg("path"), py::arg("frames"), py::arg("question") = py::none());
  m.def(
      "_generate_synthetic",
      [](const std::string& spec_text) {
        SyntheticSpec spec;
        from_json(json::parse(spec_text), spec);
        SyntheticStream s = generate_synthetic(spec);
        return py::make_tuple(stack(s.frames), to_array(s.question));
      },
      py::arg("spec"));

  py::class_<PositionalTable>(m, "PositionalTable")
      .def(py::init([](std::size_t n, std::size_t dim, double blend) {
             return PositionalTable::sinusoidal(n, dim, blend);
           }),
           py::arg("base_length") = 32, py::arg("dim") = 64, py::arg("blend") = 0.4)
      .def_property_readonly("max_positions", &PositionalTable::max_positions)
      .def("position", [](const PositionalTable& t, std::uint64_t k) { return to_array(t.extended_position(k)); })
      .def("collisions", [](const PositionalTable& t, double tol) { return find_collisions(t, tol); },
           py::arg("tolerance") = 1e-9);

  py::class_<Pipeline>(m, "_Pipeline")
      .def(py::init([](std::size_t tokens, std::size_t dims, const std::string& cfg_text,
                       const std::optional<Array>& q) {
             PipelineConfig cfg;
             from_json(json::parse(cfg_text.empty() ? "{}" : cfg_text), cfg);
             return Pipeline(FrameShape{tokens, dims}, cfg, to_question(q));
           }),
           py::arg("tokens"), py::arg("dims"), py::arg("config") = "", py::arg("question") = py::none())
      .def("step",
           [](Pipeline& p, const Array& frame) -> std::optional<std::string> {
             const StepEvent ev = p.step(to_matrix(frame));
             if (const auto* c = std::get_if<Consolidated>(&ev)) return dump(json(c->report));
             return std::nullopt;
           })
      .def("flush",
           [](Pipeline& p) -> std::optional<std::string> {
             auto r = p.flush();
             if (r) return dump(json(*r));
             return std::nullopt;
           })
      .def_property_readonly("long_term",
                             [](const Pipeline& p) {
                               return std::vector<WeightedFrame>(p.long_term().entries().begin(),
                                                                 p.long_term().entries().end());
                             })
      .def_property_readonly("short_term",
                             [](const Pipeline& p) {
                               return std::vector<WeightedFrame>(p.short_term().frames().begin(),
                                                                 p.short_term().frames().end());
                             })
      .def_property_readonly("_counters",
                             [](const Pipeline& p) {
                               const PipelineCounters& c = p.counters();
                               return dump({{"frames_pushed", c.frames_pushed},
                                            {"consolidations_run", c.consolidations_run},
                                            {"seeded_weight", c.seeded_weight},
                                            {"window_inputs", c.window_inputs},
                                            {"window_outputs", c.window_outputs}});
                             })
      .def_property_readonly("_bytes_model",
                             [](const Pipeline& p) {
                               const AccountingRecord a = p.bytes_model();
                               return dump({{"raw_bytes_per_frame", a.raw_bytes_per_frame},
                                            {"amortized_bytes_per_frame", a.amortized_bytes_per_frame},
                                            {"peak_resident_bytes", a.peak_resident_bytes}});
                             })
      .def("_assemble_global", [](const Pipeline& p) { return dump(representation_json(p.assemble_global())); })
      .def("_assemble_breakpoint",
           [](const Pipeline& p, std::uint64_t t) { return dump(representation_json(p.assemble_breakpoint(t))); })
      .def("export_snapshot", &Pipeline::export_snapshot, py::arg("stem"))
      .def_static("import_snapshot", &Pipeline::import_snapshot, py::arg("path"));

  m.def("_run", [](const std::string& text) {
    ExperimentSpec spec;
    from_json(json::parse(text), spec);
    return dump(run(spec).to_json());
  });
  m.def("_sweep", [](const std::string& text) {
    ExperimentSpec spec;
    from_json(json::parse(text), spec);
    return dump(sweep(spec).to_json());
  });
  m.def("_plant_eval", [](const std::string& text) {
    ExperimentSpec spec;
    from_json(json::parse(text), spec);
    return dump(plant_eval(spec).to_json());
  });
  m.def("_bench_mem", [](const std::string& text) {
    ExperimentSpec spec;
    from_json(json::parse(text), spec);
    return dump(bench_mem(spec).to_json());
  });
}
