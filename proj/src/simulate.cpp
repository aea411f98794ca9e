#include "pcfm/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numbers>
#include <stdexcept>

namespace pcfm {

namespace fs = std::filesystem;

namespace {

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

// Pixel centre in [-1, 1].
double coord(int i, int n) { return (2.0 * i + 1.0) / n - 1.0; }

ComplexImage ellipses(int grid, Rng& rng) {
  ComplexImage img(grid, grid);
  const int blobs = 3 + static_cast<int>(rng.uniform_index(4));
  for (int k = 0; k < blobs; ++k) {
    const double cx = uniform(rng, -0.5, 0.5), cy = uniform(rng, -0.5, 0.5);
    const double ax = uniform(rng, 0.15, 0.6), ay = uniform(rng, 0.15, 0.6);
    const double th = uniform(rng, 0.0, std::numbers::pi);
    const double amp = uniform(rng, 0.2, 1.0);
    const double c = std::cos(th), s = std::sin(th);
    for (int r = 0; r < grid; ++r)
      for (int q = 0; q < grid; ++q) {
        const double dx = coord(q, grid) - cx, dy = coord(r, grid) - cy;
        const double u = (c * dx + s * dy) / ax, v = (-s * dx + c * dy) / ay;
        const double rho = std::sqrt(u * u + v * v);
        img.at(r, q) += amp * 0.5 * (1.0 - std::tanh((rho - 1.0) / 0.1));
      }
  }
  const double phi0 = uniform(rng, -std::numbers::pi, std::numbers::pi);
  const double kx = uniform(rng, -1.0, 1.0), ky = uniform(rng, -1.0, 1.0);
  for (int r = 0; r < grid; ++r)
    for (int q = 0; q < grid; ++q)
      img.at(r, q) *= std::polar(1.0, phi0 + kx * coord(q, grid) + ky * coord(r, grid));
  return img;
}

// Quadratic complex polynomial leaning towards a coil placed at angle theta.
ComplexImage coil_polynomial(int grid, double theta, double gain, Rng& rng) {
  cd p[6] = {1.0, gain * std::cos(theta), gain * std::sin(theta), 0.0, 0.0, 0.0};
  for (auto& c : p) c += cd(0.15 * rng.normal(), 0.15 * rng.normal());
  const cd phase = std::polar(1.0, uniform(rng, -std::numbers::pi, std::numbers::pi));
  ComplexImage m(grid, grid);
  for (int r = 0; r < grid; ++r)
    for (int q = 0; q < grid; ++q) {
      const double x = coord(q, grid), y = coord(r, grid);
      m.at(r, q) = phase * (p[0] + p[1] * x + p[2] * y + p[3] * x * x + p[4] * x * y + p[5] * y * y);
    }
  return m;
}

}  // namespace

Phantom simulate_phantom(int grid, int coils, Rng& rng, double intensity) {
  if (grid < 8 || grid > 64) throw std::invalid_argument("simulate_phantom: grid must lie in [8, 64]");
  if (coils < 1 || coils > 8) throw std::invalid_argument("simulate_phantom: coils must lie in [1, 8]");
  if (!(intensity > 0.0) || !std::isfinite(intensity))
    throw std::invalid_argument("simulate_phantom: intensity must be positive");
  Phantom out;
  out.x0 = ellipses(grid, rng);
  out.x0.data *= intensity / out.x0.data.cwiseAbs().maxCoeff();
  const double gain = coils == 1 ? 0.3 : 0.6;
  // Redraw in the rare event that every coil nearly vanishes somewhere.
  for (;;) {
    CoilSensitivities s;
    const double offset = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    for (int c = 0; c < coils; ++c)
      s.maps.push_back(coil_polynomial(grid, offset + 2.0 * std::numbers::pi * c / coils, gain, rng));
    const Eigen::VectorXd ss = s.sum_of_squares();
    if (ss.minCoeff() < 1e-3) continue;
    const Eigen::VectorXd inv = ss.cwiseSqrt().cwiseInverse();
    for (auto& m : s.maps) m.data = m.data.cwiseProduct(inv.cast<cd>());
    out.sens = std::move(s);
    return out;
  }
}

SamplingMask generate_mask(int grid, double accel, int acs, Rng& rng) {
  if (grid < 1) throw std::invalid_argument("generate_mask: grid must be positive");
  if (!(accel >= 1.0)) throw std::invalid_argument("generate_mask: acceleration must be at least 1");
  const int budget = static_cast<int>(std::lround(grid / accel));
  if (acs < 0 || acs > budget)
    throw std::invalid_argument("generate_mask: " + std::to_string(acs) + " ACS lines exceed the budget of " +
                                std::to_string(budget));
  if (budget < 1) throw std::invalid_argument("generate_mask: acceleration leaves no lines");
  std::vector<std::uint8_t> kept(static_cast<std::size_t>(grid), 0);
  for (int l : center_lines(grid, acs)) kept[static_cast<std::size_t>(l)] = 1;
  std::vector<int> pool;
  for (int l = 0; l < grid; ++l)
    if (!kept[static_cast<std::size_t>(l)]) pool.push_back(l);
  // Partial Fisher-Yates.
  for (int k = 0; k < budget - acs; ++k) {
    const auto j = k + static_cast<int>(rng.uniform_index(pool.size() - k));
    std::swap(pool[k], pool[j]);
    kept[static_cast<std::size_t>(pool[k])] = 1;
  }
  return SamplingMask(std::move(kept), acs);
}

MeasurementRecord simulate_measurement(const ComplexImage& x0, const CoilSensitivities& sens,
                                       const SamplingMask& mask, double sigma0, Rng& rng) {
  if (!(sigma0 >= 0.0)) throw std::invalid_argument("simulate_measurement: sigma0 must be >= 0");
  const AcquisitionSystem sys(mask, sens, sigma0);
  MeasurementRecord rec;
  rec.y0 = sys.forward(x0);
  if (sigma0 > 0.0) rec.y0 += sample_cn(rec.y0.size(), sigma0 * sigma0, rng);
  rec.mask = mask;
  rec.sens = sens;
  return rec;
}

ComplexImage sense_combine(const std::vector<ComplexImage>& kspace, const CoilSensitivities& sens) {
  sens.validate();
  if (static_cast<int>(kspace.size()) != sens.coils())
    throw std::invalid_argument("sense_combine: one k-space per coil expected");
  ComplexImage out(sens.height(), sens.width());
  for (int c = 0; c < sens.coils(); ++c) {
    require_same_shape(kspace[c], sens.maps[c], "sense_combine");
    out.data += sens.maps[c].data.conjugate().cwiseProduct(dft2(kspace[c], DftDirection::inverse).data);
  }
  out.data = out.data.cwiseQuotient(sens.sum_of_squares().cast<cd>());
  return out;
}

// --- dataset ---------------------------------------------------------------

SimulatedCase simulate_case(const RunConfig& cfg, int index) {
  cfg.validate();
  char name[32];
  std::snprintf(name, sizeof name, "case%04d", index);
  const Rng root = Rng(cfg.seed).substream("case/" + std::to_string(index));
  Rng phantom_rng = root.substream("phantom"), mask_rng = root.substream("mask"),
      noise_rng = root.substream("noise");
  SimulatedCase c;
  c.id = name;
  auto ph = simulate_phantom(cfg.grid, cfg.coils, phantom_rng, cfg.intensity);
  const auto mask = generate_mask(cfg.grid, cfg.accel, cfg.acs, mask_rng);
  c.record = simulate_measurement(ph.x0, ph.sens, mask, cfg.sigma0, noise_rng);
  c.record.id = c.id;
  c.x0 = std::move(ph.x0);
  return c;
}

void write_case(const fs::path& root, const SimulatedCase& c) {
  const fs::path dir = root / c.id;
  fs::create_directories(dir);
  write_tensor(dir / "x0", image_tensor(c.x0));
  write_tensor(dir / "sens", sensitivity_tensor(c.record.sens));
  write_tensor(dir / "mask", mask_tensor(c.record.mask));
  write_tensor(dir / "y0", vector_tensor(c.record.y0));
}

std::vector<fs::path> list_cases(const fs::path& root) {
  if (!fs::is_directory(root)) throw std::invalid_argument("not a directory: " + root.string());
  if (fs::exists(root / "y0.hdr")) return {root};
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "y0.hdr")) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw std::invalid_argument("no cases under " + root.string());
  return out;
}

void refuse_ground_truth(const fs::path& stem) {
  if (stem.filename() == "x0")
    throw std::logic_error("refusing to read ground truth " + stem.string() + " on the training path");
}

namespace {

TensorFile read_measurement_tensor(const fs::path& stem) {
  refuse_ground_truth(stem);
  return read_tensor(stem);
}

}  // namespace

MeasurementRecord read_measurement(const fs::path& case_dir) {
  MeasurementRecord rec;
  rec.id = case_dir.filename().string();
  rec.sens = tensor_sensitivities(read_measurement_tensor(case_dir / "sens"));
  rec.mask = tensor_mask(read_measurement_tensor(case_dir / "mask"));
  rec.y0 = tensor_vector(read_measurement_tensor(case_dir / "y0"));
  rec.validate();
  return rec;
}

ComplexImage read_ground_truth(const fs::path& case_dir) { return tensor_image(read_tensor(case_dir / "x0")); }

}  // namespace pcfm
