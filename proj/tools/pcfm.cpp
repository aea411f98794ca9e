// pcfm: simulate | train | reconstruct | verify | metrics
//
// Exit codes: 0 success, 1 usage or validation error (including failed
// verification checks), 2 numerical failure.

#include "pcfm/pipeline.hpp"
#include "pcfm/verify.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using pcfm::RunConfig;

namespace {

// Flags that were given on the command line override whatever the config files said.
template <class T>
void override_with(const std::optional<T>& flag, T& field) {
  if (flag) field = *flag;
}

struct SimulateArgs {
  fs::path out, config;
  std::optional<int> grid, coils, acs, n;
  std::optional<double> accel, sigma0, intensity;
  std::optional<std::uint64_t> seed;
};

struct TrainArgs {
  fs::path data, out, config, trace;
  std::optional<int> steps;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
};

struct ReconArgs {
  fs::path model, data, out, config;
  std::optional<int> T, cg;
  std::optional<std::uint64_t> seed;
};

struct MetricsArgs {
  fs::path data, recon;
  bool zero_filled = false;
};

int run_simulate(const SimulateArgs& a) {
  RunConfig cfg;
  if (!a.config.empty()) cfg.load(a.config);
  override_with(a.grid, cfg.grid);
  override_with(a.coils, cfg.coils);
  override_with(a.acs, cfg.acs);
  override_with(a.n, cfg.n_cases);
  override_with(a.accel, cfg.accel);
  override_with(a.sigma0, cfg.sigma0);
  override_with(a.intensity, cfg.intensity);
  override_with(a.seed, cfg.seed);
  pcfm::simulate_dataset(cfg, a.out);
  std::cerr << "wrote " << cfg.n_cases << " cases to " << a.out << '\n';
  return 0;
}

// defaults < the dataset's run.cfg < --config < flags
RunConfig layered_config(const fs::path& data, const fs::path& config) {
  RunConfig cfg;
  const fs::path dataset_cfg = data / "run.cfg";
  if (fs::exists(dataset_cfg)) cfg.load(dataset_cfg);
  else if (fs::exists(data.parent_path() / "run.cfg")) cfg.load(data.parent_path() / "run.cfg");
  if (!config.empty()) cfg.load(config);
  return cfg;
}

int run_train(const TrainArgs& a) {
  RunConfig cfg = layered_config(a.data, a.config);
  override_with(a.steps, cfg.steps);
  override_with(a.lr, cfg.lr);
  override_with(a.seed, cfg.train_seed);
  std::ofstream trace_file;
  if (!a.trace.empty()) {
    trace_file.open(a.trace);
    if (!trace_file) throw std::invalid_argument("cannot write " + a.trace.string());
  }
  const auto result = pcfm::train_on_dataset(cfg, a.data, a.out, a.trace.empty() ? nullptr : &trace_file);
  const double final_loss = result.trace.empty() ? 0.0 : result.trace.back().loss;
  std::cerr << "trained " << cfg.steps << " steps, final loss " << final_loss << ", saved " << a.out << '\n';
  return 0;
}

int run_reconstruct(const ReconArgs& a) {
  RunConfig cfg = layered_config(a.data, a.config);
  override_with(a.T, cfg.T);
  override_with(a.cg, cfg.k_infer);
  override_with(a.seed, cfg.recon_seed);
  cfg.validate();
  const auto ckpt = pcfm::load_checkpoint(a.model);
  const auto cases = pcfm::list_cases(a.data);
  if (cases.empty()) throw std::invalid_argument("no cases under " + a.data.string());
  std::cout << "case\tfield_evaluations\tfinal_residual\n";
  for (const auto& dir : cases) {
    const auto r = pcfm::reconstruct_case(ckpt.model, dir, cfg.recon_config(), a.out);
    std::cout << dir.filename().string() << '\t' << r.field_evaluations << '\t' << r.residuals.back() << '\n';
  }
  return 0;
}

int run_verify(const std::string& name) {
  int failed = 0;
  for (const auto& check : pcfm::verify::suite(name)) {
    const auto r = check();
    std::cout << (r.passed ? "PASS" : "FAIL") << '\t' << r.name << '\t' << r.seconds << " s\t" << r.detail
              << std::endl;
    if (!r.passed) ++failed;
  }
  std::cout << (failed == 0 ? "all checks passed" : std::to_string(failed) + " check(s) failed") << '\n';
  return failed == 0 ? 0 : 1;
}

int run_metrics(const MetricsArgs& a) {
  if (!a.zero_filled && a.recon.empty()) throw std::invalid_argument("metrics needs --recon or --zero-filled");
  pcfm::write_metrics(std::cout, pcfm::score_dataset(a.data, a.recon, a.zero_filled));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Projected conditional flow matching for multi-coil MRI"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "write simulated cases (x0, sens, mask, y0) and run.cfg");
  simulate->add_option("--out", sim.out, "output dataset directory")->required();
  simulate->add_option("--config", sim.config, "RunConfig file")->check(CLI::ExistingFile);
  simulate->add_option("--grid", sim.grid);
  simulate->add_option("--coils", sim.coils);
  simulate->add_option("--accel", sim.accel);
  simulate->add_option("--acs", sim.acs);
  simulate->add_option("--sigma0", sim.sigma0);
  simulate->add_option("--intensity", sim.intensity, "peak image magnitude");
  simulate->add_option("--n", sim.n, "number of cases");
  simulate->add_option("--seed", sim.seed);

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "unsupervised training from measurements only");
  train->add_option("--data", tr.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", tr.out, "checkpoint path")->required();
  train->add_option("--config", tr.config, "RunConfig file")->check(CLI::ExistingFile);
  train->add_option("--trace", tr.trace, "loss trace TSV");
  train->add_option("--steps", tr.steps);
  train->add_option("--lr", tr.lr);
  train->add_option("--seed", tr.seed, "training seed");

  ReconArgs rc;
  auto* recon = app.add_subcommand("reconstruct", "reconstruct every case under --data");
  recon->add_option("--model", rc.model, "checkpoint")->required()->check(CLI::ExistingFile);
  recon->add_option("--data", rc.data, "dataset or case directory")->required()->check(CLI::ExistingDirectory);
  recon->add_option("--out", rc.out, "output directory")->required();
  recon->add_option("--config", rc.config, "RunConfig file")->check(CLI::ExistingFile);
  recon->add_option("--T", rc.T, "integration steps");
  recon->add_option("--cg", rc.cg, "CG iterations per solve");
  recon->add_option("--seed", rc.seed, "posterior sampling seed");

  std::string suite_name = "props";
  auto* verify = app.add_subcommand("verify", "run self-checks against dense oracles");
  verify->add_option("--suite", suite_name)->check(CLI::IsMember({"props", "oracle", "gradients", "all"}));

  MetricsArgs me;
  auto* metrics = app.add_subcommand("metrics", "PSNR and SSIM against ground truth, as TSV");
  metrics->add_option("--data", me.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  metrics->add_option("--recon", me.recon, "reconstruction directory");
  metrics->add_flag("--zero-filled", me.zero_filled, "score A* y0 instead of a reconstruction");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*simulate) return run_simulate(sim);
    if (*train) return run_train(tr);
    if (*recon) return run_reconstruct(rc);
    if (*verify) return run_verify(suite_name);
    if (*metrics) return run_metrics(me);
  } catch (const pcfm::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
