#pragma once

#include "pcfm/io.hpp"
#include "pcfm/linops.hpp"
#include "pcfm/train.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace pcfm {

struct Phantom {
  ComplexImage x0;
  CoilSensitivities sens;
};

/// 3 to 6 soft-edged ellipses under a random linear phase ramp, scaled so the
/// peak magnitude equals `intensity`, with smooth low-order polynomial coil maps
/// normalized to unit sum of squares per pixel.
Phantom simulate_phantom(int grid, int coils, Rng& rng, double intensity = 1.0);

/// Central `acs` lines always kept; the rest of the round(grid / accel) budget is
/// drawn uniformly without replacement. acs equal to the budget is allowed and
/// yields a deterministic mask.
SamplingMask generate_mask(int grid, double accel, int acs, Rng& rng);

/// y0 = A x0 + e with e ~ CN(0, sigma0^2 I).
MeasurementRecord simulate_measurement(const ComplexImage& x0, const CoilSensitivities& sens,
                                       const SamplingMask& mask, double sigma0, Rng& rng);

/// (sum_c |S_c|^2)^-1 sum_c conj(S_c) F* k_c from fully sampled per-coil k-space.
ComplexImage sense_combine(const std::vector<ComplexImage>& kspace, const CoilSensitivities& sens);

// Dataset layout: <root>/caseNNNN/{x0,sens,mask,y0}.{hdr,bin} plus <root>/run.cfg.

struct SimulatedCase {
  std::string id;
  ComplexImage x0;
  MeasurementRecord record;
};

/// Case i draws from Rng(cfg.seed).substream("case/i") with sub-substreams
/// "phantom", "mask" and "noise".
SimulatedCase simulate_case(const RunConfig& cfg, int index);

void write_case(const std::filesystem::path& root, const SimulatedCase& c);

/// Case directories under root, sorted by name. A root that is itself a case
/// directory is returned alone.
std::vector<std::filesystem::path> list_cases(const std::filesystem::path& root);

/// Reads sens, mask and y0. Never touches x0.
MeasurementRecord read_measurement(const std::filesystem::path& case_dir);

/// The held-out image. Only evaluation code calls this.
ComplexImage read_ground_truth(const std::filesystem::path& case_dir);

/// Guard used by the training path: throws if `stem` names a ground-truth tensor.
void refuse_ground_truth(const std::filesystem::path& stem);

}  // namespace pcfm
