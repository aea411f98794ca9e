// pybind11 bindings. Images are complex128 arrays of shape (H, W), coil maps
// (C, H, W), masks boolean arrays over phase-encode lines.

#include "pcfm/pipeline.hpp"
#include "pcfm/verify.hpp"

#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace pcfm;

namespace {

using CArray = py::array_t<cd, py::array::c_style | py::array::forcecast>;
using BoolArray = py::array_t<bool, py::array::c_style | py::array::forcecast>;

ComplexImage to_image(const CArray& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D complex array");
  const auto h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
  return ComplexImage(h, w, Eigen::Map<const ComplexVector>(a.data(), static_cast<Eigen::Index>(a.size())));
}

CArray from_image(const ComplexImage& img) {
  CArray out({img.height, img.width});
  std::copy(img.data.data(), img.data.data() + img.data.size(), out.mutable_data());
  return out;
}

std::vector<ComplexImage> to_stack(const CArray& a) {
  if (a.ndim() != 3) throw std::invalid_argument("expected an array of shape (C, H, W)");
  std::vector<ComplexImage> out;
  const auto h = static_cast<int>(a.shape(1)), w = static_cast<int>(a.shape(2));
  for (py::ssize_t c = 0; c < a.shape(0); ++c)
    out.emplace_back(h, w, Eigen::Map<const ComplexVector>(a.data(c, 0, 0), static_cast<Eigen::Index>(h) * w));
  return out;
}

CoilSensitivities to_sens(const CArray& a) {
  CoilSensitivities s{to_stack(a)};
  s.validate();
  return s;
}

CArray from_sens(const CoilSensitivities& s) {
  CArray out({s.coils(), s.height(), s.width()});
  cd* p = out.mutable_data();
  for (const auto& m : s.maps) p = std::copy(m.data.data(), m.data.data() + m.data.size(), p);
  return out;
}

SamplingMask to_mask(const BoolArray& kept, int acs) {
  if (kept.ndim() != 1) throw std::invalid_argument("mask must be 1-D over phase-encode lines");
  std::vector<std::uint8_t> flags(kept.data(), kept.data() + kept.size());
  return SamplingMask(std::move(flags), acs);
}

BoolArray from_mask(const SamplingMask& m) {
  BoolArray out(static_cast<py::ssize_t>(m.kept.size()));
  std::copy(m.kept.begin(), m.kept.end(), out.mutable_data());
  return out;
}

AcquisitionSystem make_system(const CArray& sens, const BoolArray& kept, int acs, double sigma0) {
  return AcquisitionSystem(to_mask(kept, acs), to_sens(sens), sigma0);
}

RunConfig to_config(const std::map<std::string, std::string>& overrides) {
  RunConfig cfg;
  for (const auto& [k, v] : overrides) cfg.set(k, v);
  cfg.validate();
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Projected conditional flow matching for multi-coil MRI";

  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.def(
      "simulate_phantom",
      [](int grid, int coils, std::uint64_t seed, double intensity) {
        Rng rng(seed);
        const auto ph = simulate_phantom(grid, coils, rng, intensity);
        return py::make_tuple(from_image(ph.x0), from_sens(ph.sens));
      },
      py::arg("grid"), py::arg("coils"), py::arg("seed"), py::arg("intensity") = 1.0,
      "(x0, sens) with sens normalized to unit sum of squares");
  m.def(
      "generate_mask",
      [](int grid, double accel, int acs, std::uint64_t seed) {
        Rng rng(seed);
        return from_mask(generate_mask(grid, accel, acs, rng));
      },
      py::arg("grid"), py::arg("accel"), py::arg("acs"), py::arg("seed"));
  m.def("center_lines", &center_lines, py::arg("lines"), py::arg("acs"));

  m.def(
      "forward",
      [](const CArray& x, const CArray& sens, const BoolArray& kept, int acs) {
        return ComplexVector(make_system(sens, kept, acs, 0.0).forward(to_image(x)));
      },
      py::arg("x"), py::arg("sens"), py::arg("kept"), py::arg("acs") = 0, "y = A x, per coil kept x W blocks");
  m.def(
      "adjoint",
      [](const ComplexVector& y, const CArray& sens, const BoolArray& kept, int acs) {
        return from_image(make_system(sens, kept, acs, 0.0).adjoint(y));
      },
      py::arg("y"), py::arg("sens"), py::arg("kept"), py::arg("acs") = 0);
  m.def(
      "projection",
      [](const CArray& x, const CArray& sens, const BoolArray& kept, int cg_iters, double tol) {
        return from_image(apply_projection(make_system(sens, kept, 0, 0.0), to_image(x), CgConfig{cg_iters, tol}));
      },
      py::arg("x"), py::arg("sens"), py::arg("kept"), py::arg("cg_iters") = 200, py::arg("tol") = 1e-12,
      "A^+ A x by conjugate gradients");
  m.def(
      "pseudoinverse",
      [](const ComplexVector& y, const CArray& sens, const BoolArray& kept, int cg_iters, double tol) {
        return from_image(apply_pseudoinverse(make_system(sens, kept, 0, 0.0), y, CgConfig{cg_iters, tol}));
      },
      py::arg("y"), py::arg("sens"), py::arg("kept"), py::arg("cg_iters") = 200, py::arg("tol") = 1e-12);
  m.def(
      "dense_operator",
      [](const CArray& sens, const BoolArray& kept) { return materialize_dense(make_system(sens, kept, 0, 0.0)); },
      py::arg("sens"), py::arg("kept"));
  m.def(
      "sense_combine",
      [](const CArray& kspace, const CArray& sens) {
        return from_image(sense_combine(to_stack(kspace), to_sens(sens)));
      },
      py::arg("kspace"), py::arg("sens"), "kspace of shape (C, H, W), fully sampled");
  m.def(
      "zero_filled",
      [](const ComplexVector& y0, const CArray& sens, const BoolArray& kept) {
        return from_image(zero_filled(make_system(sens, kept, 0, 0.0), y0));
      },
      py::arg("y0"), py::arg("sens"), py::arg("kept"));

  m.def(
      "psnr", [](const CArray& ref, const CArray& test) { return psnr(to_image(ref), to_image(test)); },
      py::arg("ref"), py::arg("test"), "PSNR of magnitudes in dB, peak = max |ref|, capped at 200");
  m.def(
      "ssim", [](const CArray& ref, const CArray& test) { return ssim(to_image(ref), to_image(test)); },
      py::arg("ref"), py::arg("test"), "SSIM of magnitudes, 7x7 uniform windows, data range = max |ref|");

  m.def(
      "reconstruct",
      [](const std::filesystem::path& checkpoint, const ComplexVector& y0, const CArray& sens, const BoolArray& kept,
         int acs, double sigma0, int steps, int cg_iters, std::uint64_t seed) {
        const auto ckpt = load_checkpoint(checkpoint);
        const auto sys = make_system(sens, kept, acs, sigma0);
        ReconConfig cfg;
        cfg.steps = steps;
        cfg.cg_iters_infer = cg_iters;
        cfg.seed = seed;
        const auto r = reconstruct(y0, sys, model_velocity(ckpt.model, sys), cfg);
        py::dict out;
        out["image"] = from_image(r.image);
        out["residuals"] = r.residuals;
        out["field_evaluations"] = r.field_evaluations;
        return out;
      },
      py::arg("checkpoint"), py::arg("y0"), py::arg("sens"), py::arg("kept"), py::arg("acs") = 0,
      py::arg("sigma0") = 1e-2, py::arg("steps") = 10, py::arg("cg_iters") = 30, py::arg("seed") = 0,
      "posterior sample from a trained checkpoint; 2 * steps field evaluations");

  m.def(
      "read_tensor",
      [](const std::filesystem::path& stem) {
        const auto t = read_tensor(stem);
        std::vector<py::ssize_t> shape(t.dims.begin(), t.dims.end());
        py::array_t<std::complex<float>> out(shape);
        std::copy(t.values.begin(), t.values.end(), out.mutable_data());
        return out;
      },
      py::arg("stem"));
  m.def(
      "write_tensor",
      [](const std::filesystem::path& stem,
         const py::array_t<std::complex<float>, py::array::c_style | py::array::forcecast>& a) {
        TensorFile t;
        for (py::ssize_t i = 0; i < a.ndim(); ++i) t.dims.push_back(a.shape(i));
        t.values.assign(a.data(), a.data() + a.size());
        write_tensor(stem, t);
      },
      py::arg("stem"), py::arg("array"));

  m.def(
      "default_config", [] { return RunConfig{}.values(); }, "every RunConfig key with its default");
  m.def(
      "simulate_dataset",
      [](const std::filesystem::path& root, const std::map<std::string, std::string>& config) {
        simulate_dataset(to_config(config), root);
      },
      py::arg("root"), py::arg("config") = std::map<std::string, std::string>{},
      "config values are strings, as in a RunConfig file");
  m.def(
      "train",
      [](const std::filesystem::path& data, const std::filesystem::path& checkpoint,
         const std::map<std::string, std::string>& config) {
        const auto r = train_on_dataset(to_config(config), data, checkpoint);
        std::vector<double> losses;
        for (const auto& p : r.trace) losses.push_back(p.loss);
        return losses;
      },
      py::arg("data"), py::arg("checkpoint"), py::arg("config") = std::map<std::string, std::string>{},
      "trains on the measurements under data, saves the EMA model, returns the loss trace");
  m.def(
      "verify",
      [](const std::string& suite) {
        std::vector<std::tuple<std::string, bool, std::string>> out;
        for (const auto& check : verify::suite(suite)) {
          const auto r = check();
          out.emplace_back(r.name, r.passed, r.detail);
        }
        return out;
      },
      py::arg("suite") = "props", "runs a self-check suite: props, oracle, gradients or all");
}
