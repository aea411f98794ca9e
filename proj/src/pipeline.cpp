#include "pcfm/pipeline.hpp"

#include <fstream>
#include <iomanip>
#include <ostream>
#include <stdexcept>

namespace pcfm {

namespace fs = std::filesystem;

void simulate_dataset(const RunConfig& cfg, const fs::path& root, int first) {
  cfg.validate();
  if (first < 0) throw std::invalid_argument("first case index must be non-negative");
  fs::create_directories(root);
  for (int i = first; i < first + cfg.n_cases; ++i) write_case(root, simulate_case(cfg, i));
  cfg.save(root / "run.cfg");
}

std::vector<MeasurementRecord> load_training_set(const fs::path& root) {
  std::vector<MeasurementRecord> out;
  for (const auto& dir : list_cases(root)) out.push_back(read_measurement(dir));
  return out;
}

TrainResult train_on_dataset(const RunConfig& cfg, const fs::path& data_root, const fs::path& checkpoint,
                             std::ostream* trace) {
  cfg.validate();
  const auto data = load_training_set(data_root);
  for (const auto& rec : data)
    if (rec.sens.height() != cfg.grid || rec.sens.width() != cfg.grid)
      throw std::invalid_argument("case " + rec.id + " does not match grid " + std::to_string(cfg.grid));
  Rng init = Rng(cfg.train_seed).substream("init");
  const auto model = VectorFieldModel::initialized(cfg.architecture(), init);
  auto result = train_loop(model, data, cfg.train_config(), trace);
  if (!checkpoint.empty()) {
    if (checkpoint.has_parent_path()) fs::create_directories(checkpoint.parent_path());
    save_checkpoint(checkpoint, Checkpoint{result.ema, cfg.steps, true});
  }
  return result;
}

std::uint64_t case_seed(std::uint64_t root, const std::string& case_id) {
  return Rng(root).substream("recon/" + case_id).next_u64();
}

ReconResult reconstruct_case(const VectorFieldModel& model, const fs::path& case_dir, const ReconConfig& cfg,
                             const fs::path& out_root) {
  const auto rec = read_measurement(case_dir);
  const auto& arch = model.architecture();
  if (arch.height != rec.sens.height() || arch.width != rec.sens.width())
    throw std::invalid_argument("model grid does not match case " + rec.id);
  // sigma0 only enters the forward field through c_t; the record carries none,
  // so it comes from the dataset's run.cfg when present.
  double sigma0 = RunConfig{}.sigma0;
  const fs::path cfg_path = case_dir.parent_path() / "run.cfg";
  if (fs::exists(cfg_path)) {
    RunConfig dc;
    dc.load(cfg_path);
    sigma0 = dc.sigma0;
  }
  const auto sys = rec.system(sigma0);
  ReconConfig c = cfg;
  c.seed = case_seed(cfg.seed, rec.id);
  auto result = reconstruct(rec.y0, sys, model_velocity(model, sys), c);

  const fs::path dir = out_root / rec.id;
  fs::create_directories(dir);
  write_tensor(dir / "xhat", image_tensor(result.image));
  std::ofstream side(dir / "residuals.tsv");
  side << "step\tt\tresidual\tdrift\n" << std::setprecision(17);
  for (std::size_t i = 0; i < result.residuals.size(); ++i) {
    const int step = static_cast<int>(result.residuals.size() - 1 - i);
    side << i << '\t' << static_cast<double>(step) / cfg.steps << '\t' << result.residuals[i] << '\t'
         << result.drift[i] << '\n';
  }
  side << "# field_evaluations\t" << result.field_evaluations << '\n';
  return result;
}

std::vector<MetricRow> score_dataset(const fs::path& data_root, const fs::path& recon_root, bool zero_filled_input) {
  std::vector<MetricRow> rows;
  for (const auto& dir : list_cases(data_root)) {
    const std::string id = dir.filename().string();
    const ComplexImage x0 = read_ground_truth(dir);
    ComplexImage test;
    if (zero_filled_input) {
      const auto rec = read_measurement(dir);
      test = zero_filled(rec.system(0.0), rec.y0);
    } else {
      test = tensor_image(read_tensor(recon_root / id / "xhat"));
    }
    rows.push_back({id, psnr(x0, test), ssim(x0, test)});
  }
  return rows;
}

double mean_psnr(const std::vector<MetricRow>& rows) {
  if (rows.empty()) throw std::invalid_argument("no metric rows");
  double s = 0.0;
  for (const auto& r : rows) s += r.psnr_db;
  return s / static_cast<double>(rows.size());
}

void write_metrics(std::ostream& os, const std::vector<MetricRow>& rows) {
  os << "case\tpsnr_db\tssim\n" << std::fixed << std::setprecision(6);
  double p = 0.0, s = 0.0;
  for (const auto& r : rows) {
    os << r.id << '\t' << r.psnr_db << '\t' << r.ssim << '\n';
    p += r.psnr_db;
    s += r.ssim;
  }
  if (!rows.empty()) os << "mean\t" << p / rows.size() << '\t' << s / rows.size() << '\n';
}

}  // namespace pcfm
