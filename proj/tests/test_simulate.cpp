#include "doctest.h"

#include "pcfm/oracle.hpp"
#include "pcfm/pipeline.hpp"

#include <unsupported/Eigen/KroneckerProduct>

#include <algorithm>
#include <cmath>
#include <fstream>

using namespace pcfm;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    Rng r(std::hash<std::string>{}(tag));
    path = fs::temp_directory_path() / ("pcfm_" + tag + "_" + std::to_string(r.next_u64()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<ComplexImage> coil_kspace(const ComplexImage& x, const CoilSensitivities& sens) {
  std::vector<ComplexImage> k;
  for (const auto& s : sens.maps)
    k.push_back(dft2(ComplexImage(x.height, x.width, s.data.cwiseProduct(x.data)), DftDirection::forward));
  return k;
}

RunConfig small_config() {
  RunConfig cfg;
  cfg.grid = 8;
  cfg.coils = 2;
  cfg.accel = 2.0;
  cfg.acs = 2;
  cfg.n_cases = 3;
  cfg.seed = 21;
  return cfg;
}

}  // namespace

TEST_CASE("generate_mask") {
  Rng rng(1);
  SUBCASE("alpha = 1 keeps every line") {
    const auto m = generate_mask(16, 1.0, 2, rng);
    CHECK(m.kept_count() == 16);
  }
  SUBCASE("16 lines at alpha 2 with 4 ACS keep 8 including the centre") {
    const auto m = generate_mask(16, 2.0, 4, rng);
    CHECK(m.kept_count() == 8);
    CHECK(m.acs_count == 4);
    for (int l : center_lines(16, 4)) CHECK(m.kept[static_cast<std::size_t>(l)] == 1);
  }
  SUBCASE("acs equal to the budget is deterministic") {
    const auto m = generate_mask(16, 4.0, 4, rng);
    CHECK(m.kept_lines() == center_lines(16, 4));
  }
  SUBCASE("errors") {
    CHECK_THROWS(generate_mask(16, 4.0, 5, rng));
    CHECK_THROWS(generate_mask(16, 0.5, 2, rng));
  }
  SUBCASE("every non-ACS line is kept with positive frequency at alpha = 4") {
    std::vector<int> counts(16, 0);
    for (int i = 0; i < 10000; ++i)
      for (int l : generate_mask(16, 4.0, 2, rng).kept_lines()) ++counts[static_cast<std::size_t>(l)];
    CHECK(*std::min_element(counts.begin(), counts.end()) > 0);
    // 2 free lines out of 14: each kept with probability 1/7
    const auto acs = center_lines(16, 2);
    for (int l = 0; l < 16; ++l) {
      if (std::find(acs.begin(), acs.end(), l) != acs.end()) continue;
      CHECK(std::abs(counts[static_cast<std::size_t>(l)] / 1e4 - 1.0 / 7.0) < 5 * std::sqrt(1.0 / 7 * 6 / 7 / 1e4));
    }
  }
}

TEST_CASE("simulate_phantom") {
  Rng rng(2);
  for (int coils : {1, 2, 4, 8}) {
    const auto ph = simulate_phantom(16, coils, rng, 3.0);
    CHECK(ph.sens.coils() == coils);
    CHECK((ph.sens.sum_of_squares().array() - 1.0).abs().maxCoeff() < 1e-12);
    CHECK(ph.x0.data.cwiseAbs().maxCoeff() == doctest::Approx(3.0).epsilon(1e-12));
    if (coils == 1) CHECK((ph.sens.maps[0].data.cwiseAbs().array() - 1.0).abs().maxCoeff() < 1e-12);
  }
  Rng a(9), b(9);
  const auto pa = simulate_phantom(16, 4, a), pb = simulate_phantom(16, 4, b);
  CHECK(pa.x0.data == pb.x0.data);
  CHECK(pa.sens.maps[3].data == pb.sens.maps[3].data);
}

TEST_CASE("sense_combine") {
  Rng rng(3);
  SUBCASE("single unit coil is the inverse DFT") {
    const auto x = sample_cn_image(8, 8, 1.0, rng);
    const auto sens = CoilSensitivities::identity(8, 8);
    const auto k = dft2(x, DftDirection::forward);
    CHECK(oracle::relative_error(sense_combine({k}, sens).data, dft2(k, DftDirection::inverse).data) < 1e-14);
  }
  SUBCASE("left inverse of per-coil F S_c") {
    const auto ph = simulate_phantom(16, 4, rng);
    CHECK(oracle::relative_error(sense_combine(coil_kspace(ph.x0, ph.sens), ph.sens).data, ph.x0.data) < 1e-10);
  }
  SUBCASE("dense oracle at 8x8 with unnormalized maps") {
    const auto sens = oracle::random_sensitivities(8, 8, 3, rng, false);
    std::vector<ComplexImage> k;
    for (int c = 0; c < 3; ++c) k.push_back(sample_cn_image(8, 8, 1.0, rng));
    // (sum S^H S)^-1 sum S^H F^-1 k with a dense unitary 2-D inverse DFT
    const Eigen::MatrixXcd fi = Eigen::kroneckerProduct(dft_matrix(8, DftDirection::inverse),
                                                        dft_matrix(8, DftDirection::inverse));
    ComplexVector num = ComplexVector::Zero(64);
    Eigen::VectorXd den = Eigen::VectorXd::Zero(64);
    for (int c = 0; c < 3; ++c) {
      num += sens.maps[c].data.conjugate().cwiseProduct(fi * k[c].data);
      den += sens.maps[c].data.cwiseAbs2();
    }
    const ComplexVector want = num.cwiseQuotient(den.cast<cd>());
    CHECK(oracle::relative_error(sense_combine(k, sens).data, want) < 1e-12);
  }
}

TEST_CASE("simulate_measurement") {
  Rng rng(4);
  const auto ph = simulate_phantom(8, 2, rng);
  const auto mask = generate_mask(8, 2.0, 2, rng);
  const AcquisitionSystem sys(mask, ph.sens);
  SUBCASE("sigma0 = 0 gives y0 = A x0") {
    const auto rec = simulate_measurement(ph.x0, ph.sens, mask, 0.0, rng);
    CHECK(rec.y0 == sys.forward(ph.x0));
  }
  SUBCASE("noise second moments") {
    const ComplexVector clean = sys.forward(ph.x0);
    double re2 = 0, im2 = 0, cross = 0;
    const int n = 400;
    for (int i = 0; i < n; ++i) {
      const ComplexVector e = simulate_measurement(ph.x0, ph.sens, mask, 0.2, rng).y0 - clean;
      re2 += e.real().squaredNorm();
      im2 += e.imag().squaredNorm();
      cross += e.real().dot(e.imag());
    }
    const double m = static_cast<double>(n) * clean.size();
    // Each real part has variance sigma0^2 / 2 = 0.02.
    CHECK(std::abs(re2 / m - 0.02) < 5 * 0.02 * std::sqrt(2.0 / m));
    CHECK(std::abs(im2 / m - 0.02) < 5 * 0.02 * std::sqrt(2.0 / m));
    CHECK(std::abs(cross / m) < 5 * 0.02 / std::sqrt(m));
  }
}

TEST_CASE("dataset on disk") {
  TempDir dir("dataset");
  const auto cfg = small_config();
  simulate_dataset(cfg, dir.path / "data");
  const auto cases = list_cases(dir.path / "data");
  REQUIRE(cases.size() == 3);
  CHECK(cases[0].filename() == "case0000");
  CHECK(fs::exists(dir.path / "data" / "run.cfg"));
  CHECK(list_cases(cases[1]) == std::vector<fs::path>{cases[1]});

  SUBCASE("records read back match the simulation") {
    const auto sim = simulate_case(cfg, 1);
    const auto rec = read_measurement(cases[1]);
    CHECK(rec.id == "case0001");
    CHECK(rec.mask.kept == sim.record.mask.kept);
    CHECK(oracle::relative_error(rec.y0, sim.record.y0) < 1e-6);
    CHECK(oracle::relative_error(read_ground_truth(cases[1]).data, sim.x0.data) < 1e-6);
  }
  SUBCASE("cases are independent of the dataset size") {
    RunConfig more = cfg;
    more.n_cases = 5;
    CHECK(simulate_case(more, 2).x0.data == simulate_case(cfg, 2).x0.data);
  }
  SUBCASE("training never opens ground truth") {
    CHECK_THROWS_AS(refuse_ground_truth(cases[0] / "x0"), std::logic_error);
    // Corrupting x0 does not disturb measurement loading.
    std::ofstream(cases[0] / "x0.bin", std::ios::trunc) << "garbage";
    CHECK_NOTHROW(load_training_set(dir.path / "data"));
    CHECK_THROWS(read_ground_truth(cases[0]));
  }
  SUBCASE("missing measurement files are reported") {
    fs::remove(cases[2] / "y0.bin");
    CHECK_THROWS(load_training_set(dir.path / "data"));
  }
}

TEST_CASE("metrics over a dataset") {
  TempDir dir("metrics");
  const auto cfg = small_config();
  simulate_dataset(cfg, dir.path / "data");
  // A perfect reconstruction scores the PSNR cap and SSIM 1.
  for (const auto& c : list_cases(dir.path / "data")) {
    fs::create_directories(dir.path / "recon" / c.filename());
    fs::copy_file(c / "x0.hdr", dir.path / "recon" / c.filename() / "xhat.hdr");
    fs::copy_file(c / "x0.bin", dir.path / "recon" / c.filename() / "xhat.bin");
  }
  const auto rows = score_dataset(dir.path / "data", dir.path / "recon");
  REQUIRE(rows.size() == 3);
  for (const auto& r : rows) {
    CHECK(r.psnr_db == 200.0);
    CHECK(r.ssim == doctest::Approx(1.0));
  }
  const auto zf = score_dataset(dir.path / "data", {}, true);
  CHECK(mean_psnr(zf) < 100.0);
  std::ostringstream os;
  write_metrics(os, rows);
  CHECK(os.str().rfind("case\tpsnr_db\tssim\n", 0) == 0);
  CHECK(os.str().find("mean\t200.000000\t1.000000\n") != std::string::npos);
}

TEST_CASE("trained field moves towards a moment-matched Gaussian oracle") {
  // 2000 unsupervised steps on 16x16 phantoms at alpha = 2. The initial model
  // outputs zero, so its projected relative error against the oracle is 1.
  RunConfig cfg;
  cfg.accel = 2.0;
  cfg.n_cases = 128;
  cfg.steps = 2000;
  cfg.ema_every = 10;
  cfg.seed = 31;
  cfg.train_seed = 32;
  cfg.validate();
  std::vector<MeasurementRecord> data;
  for (int i = 0; i < cfg.n_cases; ++i) data.push_back(simulate_case(cfg, i).record);

  // Prior moments from an independent phantom population.
  RunConfig pop = cfg;
  pop.seed = 33;
  const int n_prior = 2048, d = cfg.grid * cfg.grid;
  ComplexVector mean = ComplexVector::Zero(d);
  Eigen::MatrixXcd second = Eigen::MatrixXcd::Zero(d, d);
  for (int i = 0; i < n_prior; ++i) {
    const ComplexVector x = simulate_case(pop, i).x0.data;
    mean += x / n_prior;
    second += x * x.adjoint() / n_prior;
  }
  Eigen::MatrixXcd cov = (second - mean * mean.adjoint()) * (n_prior / (n_prior - 1.0));
  cov += 1e-3 * cov.trace().real() / d * Eigen::MatrixXcd::Identity(d, d);
  const GaussianPrior prior{ComplexImage(cfg.grid, cfg.grid, mean), cov};

  Rng init_rng = Rng(cfg.train_seed).substream("init");
  const auto init = VectorFieldModel::initialized(cfg.architecture(), init_rng);
  const auto trained = train_loop(init, data, cfg.train_config());

  Rng rng(34);
  RunConfig held = cfg;
  held.seed = 35;
  double err_init = 0.0, err_ema = 0.0, ref = 0.0;
  for (int i = 0; i < 8; ++i) {
    const auto rec = simulate_case(held, i).record;
    const auto sys = rec.system(cfg.sigma0);
    const GaussianOracle oracle(prior, sys);
    for (double t : {0.2, 0.5, 0.8}) {
      const ComplexVector y = (1 - t) * rec.y0 + t * sys.forward(sample_cn_image(cfg.grid, cfg.grid, 2.0, rng));
      const auto target = apply_projection(sys, oracle.vstar(y, t), CgConfig{200, 1e-12});
      auto projected = [&](const VectorFieldModel& m) {
        return apply_projection(sys, m.forward(sys.adjoint(y), t), CgConfig{200, 1e-12});
      };
      err_init += (projected(init).data - target.data).squaredNorm();
      err_ema += (projected(trained.ema).data - target.data).squaredNorm();
      ref += target.data.squaredNorm();
    }
  }
  const double rel_init = std::sqrt(err_init / ref), rel_ema = std::sqrt(err_ema / ref);
  MESSAGE("relative error init " << rel_init << ", EMA " << rel_ema);
  CHECK(rel_init == doctest::Approx(1.0));
  CHECK(rel_ema < rel_init);
}
