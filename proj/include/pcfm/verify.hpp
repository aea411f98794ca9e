#pragma once

// Self-contained verification checks against dense oracles and Monte-Carlo
// references. Used by `pcfm verify` and by the acceptance binary.

#include "pcfm/io.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace pcfm::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

using Check = std::function<CheckResult()>;

/// Runs a check, timing it and turning exceptions into failures. A positive
/// budget fails the check when it takes longer.
CheckResult timed(const std::string& name, double budget_seconds,
                  const std::function<bool(std::string&)>& body);

CheckResult operator_suite();            // adjointness, projection, A A^+ A, CG vs SVD
CheckResult completeness();              // averaged projection over random masks
CheckResult field_forms();               // three forms of the measurement-space field
CheckResult measurement_consistency();   // oracle reconstruction residuals
CheckResult posterior_moments();         // t = 1 posterior sample moments
CheckResult gsure_equivalence();         // unsupervised vs supervised gradients
CheckResult hutchinson();                // divergence estimator vs dense trace
CheckResult loss_gradients();            // finite differences for every loss
CheckResult nfe_accounting();            // 2T field evaluations

CheckResult tensor_round_trip();
CheckResult mask_statistics();
CheckResult simulation_contracts();      // sensitivity normalization, SENSE left inverse, noise level

std::vector<Check> suite(const std::string& name);  // props | oracle | gradients | all

struct DeskReport {
  std::vector<int> steps_grid;       // T values
  std::vector<double> psnr;          // mean PSNR per T
  std::vector<double> ssim;          // mean SSIM per T
  double zero_filled_psnr = 0.0;
  double zero_filled_ssim = 0.0;
  double train_seconds = 0.0;
  double total_seconds = 0.0;
};

/// Simulates cfg.n_cases training cases and `test_cases` held-out cases (seed
/// cfg.seed + 1) under workdir, trains, reconstructs the held-out set at every T
/// and scores it. Everything passes through the on-disk formats.
DeskReport desk_experiment(const RunConfig& cfg, const std::filesystem::path& workdir, int test_cases,
                           const std::vector<int>& steps_grid);

/// Runs a reduced end-to-end pipeline twice and compares every artifact byte for
/// byte (the wall-clock column of the loss trace excepted).
CheckResult end_to_end_determinism(const std::filesystem::path& workdir);

}  // namespace pcfm::verify
