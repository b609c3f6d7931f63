#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "olala/config.hpp"
#include "olala/dither.hpp"
#include "olala/error.hpp"
#include "olala/fl.hpp"
#include "olala/sdq.hpp"
#include "olala/theory.hpp"

namespace py = pybind11;
using namespace olala;

namespace {

py::dict round_dict(const RoundRecord& r) {
  py::dict d;
  d["t"] = r.round;
  d["accuracy"] = r.accuracy;
  d["mean_snr_db"] = r.mean_snr_db;
  d["mean_distortion"] = r.mean_distortion;
  d["total_bits"] = r.total_bits;
  return d;
}

ExperimentConfig config_from(const std::map<std::string, std::string>& settings) {
  std::vector<std::string> overrides;
  for (const auto& [k, v] : settings) overrides.push_back(k + "=" + v);
  return load_config("", overrides);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Lattice quantization and federated learning simulator";

  auto base = py::register_exception<Error>(m, "OlalaError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<UsageError>(m, "UsageError", base.ptr());
  py::register_exception<ProtocolError>(m, "ProtocolError", base.ptr());

  m.def("config_keys", &config_keys);
  m.def(
      "format_config", [](const std::map<std::string, std::string>& s) { return format_config(config_from(s)); },
      py::arg("settings") = std::map<std::string, std::string>{});

  m.def(
      "build_lattice",
      [](const Matrix& g, double gamma) {
        const TruncatedLattice lat = build_lattice(GeneratorMatrix(g), gamma);
        return py::make_tuple(lat.codebook, Eigen::MatrixXi(lat.index_set));
      },
      py::arg("G"), py::arg("gamma"), "Codebook (columns) and integer coefficients of points within gamma.");
  m.def(
      "nearest_point", [](const Matrix& g, const Vector& x) { return Coeffs(nearest_point(GeneratorMatrix(g), x)); },
      py::arg("G"), py::arg("x"));
  m.def(
      "second_moment",
      [](const Matrix& g, std::int64_t n, std::uint64_t seed) {
        const MomentEstimate e = second_moment(GeneratorMatrix(g), n, seed);
        return py::make_tuple(e.estimate, e.std_error);
      },
      py::arg("G"), py::arg("n"), py::arg("seed"), "Per-dimension cell second moment and its standard error.");
  m.def(
      "minimal_radius",
      [](const Matrix& g, std::int64_t k) {
        const MinimalRadius r = minimal_radius(GeneratorMatrix(g), k);
        return py::make_tuple(r.radius, r.count);
      },
      py::arg("A"), py::arg("codewords"));
  m.def(
      "sdq_roundtrip",
      [](const Matrix& g, double gamma, double zeta, const Vector& x, std::uint64_t seed) {
        const GeneratorMatrix gen(g);
        const SdqCodec codec(build_lattice(gen, gamma), zeta);
        DitherStream tx(seed, gen);
        const EncodedVector enc = sdq_encode_vector(codec, x, tx);
        DitherStream rx(seed, gen);
        return py::make_tuple(enc.indices, sdq_decode_vector(codec, enc, rx));
      },
      py::arg("G"), py::arg("gamma"), py::arg("zeta"), py::arg("x"), py::arg("seed"),
      "Encodes x and decodes it with a regenerated dither stream; returns (indices, reconstruction).");
  m.def("bits_accounting", &bits_accounting, py::arg("m"), py::arg("rate"), py::arg("dim"),
        py::arg("include_zeta") = true);

  m.def(
      "run_fl",
      [](const std::map<std::string, std::string>& settings) {
        const ExperimentConfig cfg = config_from(settings);
        FlResult result;
        {
          py::gil_scoped_release release;
          result = run_fl(cfg);
        }
        py::list rounds;
        for (const RoundRecord& r : result.rounds) rounds.append(round_dict(r));
        py::dict out;
        out["rounds"] = rounds;
        out["rounds_csv"] = rounds_csv(result.rounds);
        out["lattices_jsonl"] = lattices_jsonl(result.lattices);
        out["final_params"] = result.final_model.params;
        return out;
      },
      py::arg("settings") = std::map<std::string, std::string>{},
      "Runs one experiment from key=value settings (values as strings).");

  m.def(
      "run_checks",
      [](std::uint64_t seed, double scale) {
        CheckSuiteOptions opts;
        opts.seed = seed;
        opts.scale = scale;
        std::vector<CheckReport> reports;
        {
          py::gil_scoped_release release;
          reports = run_check_suite(opts);
        }
        return checks_json(reports);
      },
      py::arg("seed") = 1, py::arg("scale") = 1.0, "Theory check suite as the checks.json text.");
}
