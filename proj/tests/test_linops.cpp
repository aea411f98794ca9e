#include "doctest.h"

#include "pcfm/linops.hpp"
#include "pcfm/oracle.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <numeric>

using namespace pcfm;

namespace {

CgConfig tight(int iters = 200) { return CgConfig{iters, 1e-13}; }

AcquisitionSystem random_system(int h, int w, int coils, std::vector<int> kept, Rng& rng,
                                int acs = 0) {
  return AcquisitionSystem(oracle::mask_from_lines(h, kept, acs),
                           oracle::random_sensitivities(h, w, coils, rng));
}

// Single-coil identity-sensitivity system: A = M F, rank = kept lines * width.
AcquisitionSystem cartesian_system(int h, int w, std::vector<int> kept) {
  return AcquisitionSystem(oracle::mask_from_lines(h, kept), CoilSensitivities::identity(h, w));
}

SamplingMask random_half_mask(int lines, int acs, Rng& rng) {
  std::vector<std::uint8_t> flags(static_cast<std::size_t>(lines), 0);
  for (int l : center_lines(lines, acs)) flags[static_cast<std::size_t>(l)] = 1;
  std::vector<int> rest;
  for (int l = 0; l < lines; ++l)
    if (!flags[static_cast<std::size_t>(l)]) rest.push_back(l);
  const int extra = lines / 2 - acs;
  for (int i = 0; i < extra; ++i) {
    const auto j = i + static_cast<int>(rng.uniform_index(rest.size() - i));
    std::swap(rest[i], rest[j]);
    flags[static_cast<std::size_t>(rest[i])] = 1;
  }
  return SamplingMask(flags, acs);
}

}  // namespace

TEST_CASE("mask bookkeeping") {
  const auto m = oracle::mask_from_lines(8, {0, 1, 4, 7}, 3);
  CHECK(m.kept_count() == 4);
  CHECK(m.acceleration() == doctest::Approx(2.0));
  CHECK(m.acs_lines() == std::vector<int>{0, 1, 7});
  CHECK(center_lines(8, 4) == std::vector<int>{0, 1, 6, 7});
  CHECK_THROWS_AS(oracle::mask_from_lines(8, {1, 2}, 2), std::invalid_argument);
  CHECK_THROWS_AS(SamplingMask(std::vector<std::uint8_t>(4, 0), 0), std::invalid_argument);
}

TEST_CASE("sensitivities reject blind spots") {
  auto sens = CoilSensitivities::identity(2, 2);
  sens.maps[0].data[3] = 0.0;
  CHECK_THROWS_AS(sens.validate(), std::invalid_argument);
}

TEST_CASE("apply_forward degenerates to the DFT") {
  Rng rng(1);
  const auto sys = AcquisitionSystem(SamplingMask::full(4), CoilSensitivities::identity(4, 4));
  const auto x = sample_cn_image(4, 4, 1.0, rng);
  CHECK((sys.forward(x) - dft2(x, DftDirection::forward).data).norm() < 1e-13);
}

TEST_CASE("apply_forward is linear in the sensitivities") {
  Rng rng(2);
  ComplexImage one(4, 4), eye(4, 4);
  one.data.setConstant(1.0);
  eye.data.setConstant(cd(0.0, 1.0));
  const AcquisitionSystem sys(SamplingMask::full(4), CoilSensitivities{{one, eye}});
  const auto y = sys.forward(sample_cn_image(4, 4, 1.0, rng));
  CHECK((y.tail(16) - cd(0, 1) * y.head(16)).norm() < 1e-13);
}

TEST_CASE("forward and adjoint match the dense oracle") {
  Rng rng(3);
  const auto sys = random_system(4, 4, 2, {0, 2}, rng);
  const Eigen::MatrixXcd a = materialize_dense(sys);
  REQUIRE(a.rows() == sys.measurement_size());
  REQUIRE(a.cols() == 16);

  const auto x = sample_cn_image(4, 4, 1.0, rng);
  CHECK((sys.forward(x) - a * x.data).norm() < 1e-12 * (1 + x.data.norm()));

  const ComplexVector y = sample_cn(sys.measurement_size(), 1.0, rng);
  CHECK((sys.adjoint(y).data - a.adjoint() * y).norm() < 1e-12 * (1 + y.norm()));

  const auto nx = sys.normal(x);
  CHECK((nx.data - a.adjoint() * (a * x.data)).norm() < 1e-12 * (1 + x.data.norm()));
}

TEST_CASE("adjoint pairing holds on random triples") {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const int h = 2 + static_cast<int>(rng.uniform_index(7));
    const int w = 1 + static_cast<int>(rng.uniform_index(8));
    const int coils = 1 + static_cast<int>(rng.uniform_index(4));
    std::vector<int> kept{0};
    for (int l = 1; l < h; ++l)
      if (rng.uniform() < 0.5) kept.push_back(l);
    const auto sys = random_system(h, w, coils, kept, rng);
    const auto x = sample_cn_image(h, w, 1.0, rng);
    const ComplexVector y = sample_cn(sys.measurement_size(), 1.0, rng);
    const cd lhs = sys.forward(x).dot(y);
    const cd rhs = x.data.dot(sys.adjoint(y).data);
    CHECK(std::abs(lhs - rhs) < 1e-10 * x.data.norm() * y.norm());
  }
}

TEST_CASE("full mask single identity coil gives A*A = I") {
  Rng rng(5);
  const auto sys = AcquisitionSystem(SamplingMask::full(4), CoilSensitivities::identity(4, 4));
  const auto x = sample_cn_image(4, 4, 1.0, rng);
  CHECK((sys.normal(x).data - x.data).norm() < 1e-13);
}

TEST_CASE("shape and length mismatches are rejected") {
  Rng rng(6);
  const auto sys = random_system(4, 4, 2, {0, 2}, rng);
  CHECK_THROWS_AS((void)sys.forward(ComplexImage(4, 3)), std::invalid_argument);
  CHECK_THROWS_AS((void)sys.adjoint(ComplexVector::Zero(5)), std::invalid_argument);
  CHECK_THROWS_AS(AcquisitionSystem(SamplingMask::full(3), CoilSensitivities::identity(4, 4)),
                  std::invalid_argument);
}

TEST_CASE("cg_solve on simple systems") {
  Rng rng(7);
  const ComplexVector b = sample_cn(6, 1.0, rng);
  const LinearOperator identity = [](const ComplexVector& v) { return v; };
  const auto r = cg_solve(identity, b, ComplexVector::Zero(6), CgConfig{10, 1e-12});
  CHECK(r.iterations == 1);
  CHECK((r.x - b).norm() < 1e-14);

  const LinearOperator diag = [](const ComplexVector& v) {
    ComplexVector out = v;
    out[1] *= 2.0;
    out[2] *= 4.0;
    return out;
  };
  ComplexVector rhs(3);
  rhs << 1.0, 2.0, 4.0;
  const auto d = cg_solve(diag, rhs, ComplexVector::Zero(3), CgConfig{10, 1e-14});
  CHECK((d.x - ComplexVector::Ones(3)).norm() < 1e-12);
}

TEST_CASE("cg_solve matches a dense Hermitian solve") {
  Rng rng(8);
  const Eigen::MatrixXcd m = oracle::random_hpd(8, 0.5, 5.0, rng);
  const ComplexVector b = sample_cn(8, 1.0, rng);
  const LinearOperator op = [&m](const ComplexVector& v) { return ComplexVector(m * v); };
  const auto r = cg_solve(op, b, ComplexVector::Zero(8), CgConfig{50, 1e-12});
  const ComplexVector want = m.ldlt().solve(b);
  CHECK((r.x - want).norm() < 1e-8 * want.norm());
}

TEST_CASE("cg_solve reports non-finite iterates") {
  const LinearOperator broken = [](const ComplexVector& v) {
    ComplexVector out = v;
    out[0] = cd(std::numeric_limits<double>::infinity(), 0.0);
    return out;
  };
  CHECK_THROWS_AS(cg_solve(broken, ComplexVector::Ones(3), ComplexVector::Ones(3), CgConfig{5, 1e-9}),
                  NumericalError);
  CHECK_THROWS_AS(CgConfig({0, 1.0}).validate(), std::invalid_argument);
  CHECK_THROWS_AS(CgConfig({3, 0.0}).validate(), std::invalid_argument);
}

TEST_CASE("projection is identity for a full mask") {
  Rng rng(9);
  const AcquisitionSystem sys(SamplingMask::full(4), oracle::random_sensitivities(4, 4, 2, rng));
  const auto v = sample_cn_image(4, 4, 1.0, rng);
  CHECK((apply_projection(sys, v, tight()).data - v.data).norm() < 1e-9 * v.data.norm());
}

TEST_CASE("projection annihilates the null space and is idempotent and Hermitian") {
  Rng rng(10);
  const auto sys = cartesian_system(4, 4, {0, 3});
  const Eigen::MatrixXcd a = materialize_dense(sys);
  const Eigen::MatrixXcd p = oracle::pinv(a) * a;
  const auto w = sample_cn_image(4, 4, 1.0, rng);
  const ComplexImage null_vec(4, 4, w.data - p * w.data);
  CHECK(apply_projection(sys, null_vec, tight()).data.norm() < 1e-9 * w.data.norm());

  const auto v = sample_cn_image(4, 4, 1.0, rng);
  const auto pv = apply_projection(sys, v, CgConfig{50, 1e-12});
  const auto ppv = apply_projection(sys, pv, CgConfig{50, 1e-12});
  CHECK((ppv.data - pv.data).norm() <= 1e-6 * v.data.norm());

  const auto u = sample_cn_image(4, 4, 1.0, rng);
  const cd lhs = apply_projection(sys, u, tight()).data.dot(v.data);
  const cd rhs = u.data.dot(apply_projection(sys, v, tight()).data);
  CHECK(std::abs(lhs - rhs) < 1e-9 * u.data.norm() * v.data.norm());
}

TEST_CASE("projection, pseudoinverse and resolvent agree with dense SVD oracles") {
  Rng rng(11);
  struct Case {
    int h, w, coils;
    std::vector<int> kept;
  };
  const std::vector<Case> cases{{4, 4, 2, {0, 2}}, {4, 4, 1, {0, 1}}, {8, 8, 2, {0, 1, 5}},
                                {8, 8, 1, {0, 2, 3, 7}}};
  for (const auto& c : cases) {
    const auto sys = random_system(c.h, c.w, c.coils, c.kept, rng);
    const Eigen::MatrixXcd a = materialize_dense(sys);
    const Eigen::MatrixXcd ap = oracle::pinv(a);
    const auto v = sample_cn_image(c.h, c.w, 1.0, rng);
    const ComplexVector y = sample_cn(sys.measurement_size(), 1.0, rng);

    CHECK(oracle::relative_error(apply_projection(sys, v, tight(400)).data, ap * a * v.data) < 1e-6);
    CHECK(oracle::relative_error(apply_pseudoinverse(sys, y, tight(400)).data, ap * y) < 1e-6);
    const double cc = 0.3;
    const Eigen::MatrixXcd resolvent =
        (cc * Eigen::MatrixXcd::Identity(a.cols(), a.cols()) + 2.0 * a.adjoint() * a).inverse();
    CHECK(oracle::relative_error(apply_resolvent(sys, cc, v, tight(400)).data, resolvent * v.data) <
          1e-8);

    // A A^+ A = A
    const auto x = sample_cn_image(c.h, c.w, 1.0, rng);
    const ComplexVector ax = sys.forward(x);
    CHECK(oracle::relative_error(sys.forward(apply_pseudoinverse(sys, ax, tight(400))), ax) < 1e-6);
  }
}

TEST_CASE("pseudoinverse special cases") {
  Rng rng(12);
  const auto full = AcquisitionSystem(SamplingMask::full(4), CoilSensitivities::identity(4, 4));
  const ComplexVector y = sample_cn(16, 1.0, rng);
  const ComplexImage k(4, 4, y);
  CHECK((apply_pseudoinverse(full, y, tight()).data - dft2(k, DftDirection::inverse).data).norm() <
        1e-10);

  // x in range(A*) is recovered from A x.
  const auto sys = random_system(4, 4, 1, {0, 2}, rng);
  const ComplexImage x = sys.adjoint(sample_cn(sys.measurement_size(), 1.0, rng));
  CHECK(oracle::relative_error(apply_pseudoinverse(sys, sys.forward(x), tight()).data, x.data) <
        1e-6);
}

TEST_CASE("resolvent special cases") {
  Rng rng(13);
  const auto full = AcquisitionSystem(SamplingMask::full(4), CoilSensitivities::identity(4, 4));
  const auto v = sample_cn_image(4, 4, 1.0, rng);
  CHECK((apply_resolvent(full, 0.5, v, tight()).data - v.data / 2.5).norm() < 1e-12);

  // A vanishingly small operator leaves v / c.
  auto tiny = CoilSensitivities::identity(4, 4);
  tiny.maps[0].data *= 1e-9;
  const AcquisitionSystem faint(SamplingMask::full(4), tiny);
  CHECK((apply_resolvent(faint, 2.0, v, tight()).data - v.data / 2.0).norm() < 1e-12);
  CHECK_THROWS_AS(apply_resolvent(full, 0.0, v, tight()), std::invalid_argument);
}

TEST_CASE("materialize_dense") {
  const auto sys = AcquisitionSystem(SamplingMask::full(4), CoilSensitivities::identity(4, 1));
  const Eigen::MatrixXcd a = materialize_dense(sys);
  CHECK((a - dft_matrix(4, DftDirection::forward)).norm() < 1e-14);
  CHECK((a.adjoint() * a - Eigen::MatrixXcd::Identity(4, 4)).norm() < 1e-13);
  const AcquisitionSystem big(SamplingMask::full(64), CoilSensitivities::identity(64, 64));
  CHECK_THROWS_AS(materialize_dense(big), std::invalid_argument);
}

TEST_CASE("completeness of mask distributions") {
  Rng rng(14);
  const auto sens = CoilSensitivities::identity(8, 8);

  const MaskSampler drops_three = [](Rng& r) {
    std::vector<int> kept;
    for (int l = 0; l < 8; ++l)
      if (l != 3 && (l == 0 || r.uniform() < 0.7)) kept.push_back(l);
    return oracle::mask_from_lines(8, kept);
  };
  CHECK(check_completeness(drops_three, sens, 16, rng) == doctest::Approx(0.0).epsilon(1e-12));

  const MaskSampler full = [](Rng&) { return SamplingMask::full(8); };
  CHECK(check_completeness(full, sens, 4, rng) == doctest::Approx(1.0).epsilon(1e-10));

  const MaskSampler half = [](Rng& r) { return random_half_mask(8, 2, r); };
  CHECK(check_completeness(half, sens, 64, rng) > 0.0);

  const auto trace = completeness_trace(half, sens, 32, rng);
  for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] >= trace[i - 1] - 1e-10);

  CHECK_THROWS_AS(check_completeness(full, CoilSensitivities::identity(32, 32), 1, rng),
                  std::invalid_argument);
  CHECK_THROWS_AS(check_completeness(full, sens, 0, rng), std::invalid_argument);
}
