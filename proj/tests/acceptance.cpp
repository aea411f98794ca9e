// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
// Usage: acceptance [criterion numbers...]   (default: all of 1-11)

#include "pcfm/verify.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

namespace fs = std::filesystem;
using namespace pcfm;
using verify::CheckResult;

namespace {

fs::path scratch(const std::string& tag) {
  return fs::temp_directory_path() / ("pcfm_acceptance_" + tag + "_" + std::to_string(Rng(std::random_device{}()).next_u64()));
}

// Desk experiment at the RunConfig defaults: 256 training cases of 16x16, C = 4,
// alpha = 4, 20K steps; 32 held-out cases; T in {5, 10, 20, 40}.
CheckResult desk() {
  return verify::timed("desk experiment", 3600.0, [](std::string& d) {
    const RunConfig cfg;
    const fs::path dir = scratch("desk");
    const auto rep = verify::desk_experiment(cfg, dir, 32, {5, 10, 20, 40});
    fs::remove_all(dir);
    std::ostringstream os;
    os.precision(4);
    os << "zero-filled " << rep.zero_filled_psnr << " dB;";
    bool ok = true;
    for (std::size_t i = 0; i < rep.steps_grid.size(); ++i) {
      const double gain = rep.psnr[i] - rep.zero_filled_psnr;
      const bool monotone = i == 0 || rep.psnr[i] >= rep.psnr[i - 1];
      ok &= gain >= 3.0 && monotone;
      os << " T=" << rep.steps_grid[i] << " " << rep.psnr[i] << " dB (+" << gain << ", SSIM " << rep.ssim[i] << ")"
         << (monotone ? "" : " decreasing");
    }
    os << "; training " << rep.train_seconds << " s";
    d = os.str();
    return ok;
  });
}

CheckResult determinism() {
  const fs::path dir = scratch("determinism");
  auto r = verify::end_to_end_determinism(dir);
  fs::remove_all(dir);
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, verify::Check> criteria{
      {1, verify::operator_suite},   {2, verify::completeness},      {3, verify::field_forms},
      {4, verify::measurement_consistency}, {5, verify::posterior_moments}, {6, verify::gsure_equivalence},
      {7, verify::hutchinson},       {8, verify::loss_gradients},    {9, desk},
      {10, verify::nfe_accounting},  {11, determinism},
  };
  std::vector<int> chosen;
  for (int i = 1; i < argc; ++i) chosen.push_back(std::atoi(argv[i]));
  if (chosen.empty())
    for (const auto& [k, _] : criteria) chosen.push_back(k);

  int failed = 0;
  for (int k : chosen) {
    const auto it = criteria.find(k);
    if (it == criteria.end()) {
      std::cerr << "no criterion " << k << '\n';
      return 1;
    }
    const auto r = it->second();
    std::printf("criterion %d: %s  %s (%.2f s): %s\n", k, r.passed ? "PASS" : "FAIL", r.name.c_str(), r.seconds,
                r.detail.c_str());
    std::fflush(stdout);
    if (!r.passed) ++failed;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(chosen.size()) - failed, chosen.size());
  return failed == 0 ? 0 : 1;
}
