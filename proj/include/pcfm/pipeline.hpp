#pragma once

#include "pcfm/io.hpp"
#include "pcfm/recon.hpp"
#include "pcfm/simulate.hpp"
#include "pcfm/train.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace pcfm {

/// Writes cfg.n_cases cases plus run.cfg under root. Case ids start at `first`.
void simulate_dataset(const RunConfig& cfg, const std::filesystem::path& root, int first = 0);

/// Measurement records of every case under root, in id order. Ground truth is never opened.
std::vector<MeasurementRecord> load_training_set(const std::filesystem::path& root);

/// Initializes from Rng(cfg.train_seed).substream("init"), trains on the
/// measurements under data_root and saves the EMA model. The loss trace goes to
/// `trace` when given.
TrainResult train_on_dataset(const RunConfig& cfg, const std::filesystem::path& data_root,
                             const std::filesystem::path& checkpoint, std::ostream* trace = nullptr);

/// Posterior-sampling seed of one case: derived from the root seed and the case id.
std::uint64_t case_seed(std::uint64_t root, const std::string& case_id);

/// Reconstructs one case and writes <out>/<id>/xhat plus a residuals.tsv sidecar.
ReconResult reconstruct_case(const VectorFieldModel& model, const std::filesystem::path& case_dir,
                             const ReconConfig& cfg, const std::filesystem::path& out_root);

struct MetricRow {
  std::string id;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

/// Scores <recon_root>/<id>/xhat against <data_root>/<id>/x0 for every case under
/// data_root, or A* y0 in place of the reconstruction when zero_filled is set.
std::vector<MetricRow> score_dataset(const std::filesystem::path& data_root,
                                     const std::filesystem::path& recon_root, bool zero_filled = false);

/// `case<TAB>psnr_db<TAB>ssim` lines, then a `mean` line.
void write_metrics(std::ostream& os, const std::vector<MetricRow>& rows);

double mean_psnr(const std::vector<MetricRow>& rows);

}  // namespace pcfm
