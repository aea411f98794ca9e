#include "doctest.h"

#include "pcfm/flow.hpp"
#include "pcfm/oracle.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>

using namespace pcfm;

namespace {

CgConfig tight() { return CgConfig{400, 1e-13}; }

// 4 x 2 grid (D = 8), two coils, half the phase-encode lines: Cd = D.
AcquisitionSystem desk_system(Rng& rng, double sigma0, int coils = 2,
                              std::vector<int> kept = {0, 1}) {
  return AcquisitionSystem(oracle::mask_from_lines(4, kept),
                           oracle::random_sensitivities(4, 2, coils, rng), sigma0);
}

GaussianPrior random_prior(int h, int w, Rng& rng) {
  return {sample_cn_image(h, w, 1.0, rng), oracle::random_hpd(h * w, 0.2, 2.0, rng)};
}

// Fraction of |got - want| / se below 3.
double within_three_se(const Eigen::VectorXd& got, const Eigen::VectorXd& want,
                       const Eigen::VectorXd& se) {
  int ok = 0;
  for (Eigen::Index i = 0; i < got.size(); ++i)
    if (std::abs(got[i] - want[i]) < 3.0 * se[i]) ++ok;
  return static_cast<double>(ok) / static_cast<double>(got.size());
}

}  // namespace

TEST_CASE("schedule boundary identities") {
  const Schedule s;
  const auto at0 = s.eval(0.0);
  CHECK(at0.a == 1.0);
  CHECK(at0.b == 0.0);
  CHECK(at0.da == -1.0);
  CHECK(at0.db == 1.0);
  const auto at1 = s.eval(1.0);
  CHECK(at1.a == 0.0);
  CHECK(at1.b == 1.0);
  const auto mid = schedule_eval(s, 0.5);
  CHECK(mid.a == 0.5);
  CHECK(mid.b == 0.5);
  CHECK(resolvent_shift(0.5, 0.1) == doctest::Approx(0.005).epsilon(1e-14));
  CHECK_THROWS_AS(resolvent_shift(0.0, 0.1), std::invalid_argument);
}

TEST_CASE("clamp_time") {
  CHECK(clamp_time(0.0) == kDefaultTimeEps);
  CHECK(clamp_time(1.0) == 1.0 - kDefaultTimeEps);
  CHECK(clamp_time(0.3) == 0.3);
  CHECK_THROWS_AS(clamp_time(std::nan("")), std::invalid_argument);
  CHECK_THROWS_AS(clamp_time(0.5, 0.0), std::invalid_argument);
}

TEST_CASE("sample_time is logit-normal and clamped") {
  Rng rng(21);
  CHECK(sample_time(rng, 0.0, 1e-9) == doctest::Approx(0.5).epsilon(1e-6));

  std::vector<double> draws(100000);
  for (auto& t : draws) t = sample_time(rng);
  for (double t : draws) {
    CHECK_GE(t, kDefaultTimeEps);
    CHECK_LE(t, 1.0 - kDefaultTimeEps);
  }
  std::nth_element(draws.begin(), draws.begin() + 50000, draws.end());
  const double median = draws[50000];
  CHECK(median > 0.49);
  CHECK(median < 0.51);

  // Heavy location pushes mass into the clamp.
  CHECK(sample_time(rng, 40.0, 1.0) == 1.0 - kDefaultTimeEps);
  CHECK_THROWS_AS(sample_time(rng, 0.0, 0.0), std::invalid_argument);
}

TEST_CASE("conditional_point") {
  Rng rng(22);
  const Schedule s;
  const auto x0 = sample_cn_image(3, 3, 1.0, rng);
  const auto x1 = sample_cn_image(3, 3, 2.0, rng);

  const auto p0 = conditional_point(x0, x1, s, 0.0);
  CHECK((p0.x_t.data - x0.data).norm() == 0.0);
  CHECK((p0.u_cond.data - (x1.data - x0.data)).norm() < 1e-14);

  const auto same = conditional_point(x0, x0, s, 0.37);
  CHECK((same.x_t.data - x0.data).norm() < 1e-14);
  CHECK(same.u_cond.data.norm() < 1e-14);

  const auto half = conditional_point(ComplexImage(3, 3), x1, s, 0.5);
  CHECK((half.x_t.data - 0.5 * x1.data).norm() < 1e-14);
  CHECK((half.u_cond.data - x1.data).norm() < 1e-14);

  CHECK_THROWS_AS(conditional_point(x0, ComplexImage(3, 2), s, 0.5), std::invalid_argument);
}

TEST_CASE("prior validation") {
  GaussianPrior p{ComplexImage(2, 1), Eigen::MatrixXcd::Identity(2, 2)};
  CHECK_NOTHROW(p.validate());
  p.covariance(0, 1) = cd(0.0, 1.0);
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p.covariance = -Eigen::MatrixXcd::Identity(2, 2);
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  Rng rng(1);
  const auto sys = desk_system(rng, 0.1);
  CHECK_THROWS_AS(GaussianOracle(GaussianPrior{ComplexImage(2, 2), Eigen::MatrixXcd::Identity(4, 4)}, sys),
                  std::invalid_argument);
}

TEST_CASE("symmetric prior at t = 1/2 has a vanishing field") {
  // Full-rank square A, x0 ~ CN(0, 2I): a' x0 + b' x1 is independent of y at t = 1/2.
  Rng rng(23);
  const AcquisitionSystem sys(SamplingMask::full(4), oracle::random_sensitivities(4, 2, 1, rng));
  const GaussianPrior prior{ComplexImage(4, 2), 2.0 * Eigen::MatrixXcd::Identity(8, 8)};
  const ComplexVector y = sample_cn(sys.measurement_size(), 1.0, rng);
  CHECK(oracle_vstar(prior, sys, y, Schedule{}, 0.5).data.norm() < 1e-12);
}

TEST_CASE("deterministic prior decomposes into a mean and a noise term") {
  Rng rng(24);
  const auto sys = desk_system(rng, 0.0);
  const GaussianPrior prior{sample_cn_image(4, 2, 1.0, rng), Eigen::MatrixXcd::Zero(8, 8)};
  const double t = 0.3;
  const auto k = Schedule{}.eval(t);
  const Eigen::MatrixXcd a = materialize_dense(sys);
  const ComplexVector y = sample_cn(sys.measurement_size(), 1.0, rng);
  // E[x1 | y] with y - a A mu = b A x1 and x1 ~ CN(0, 2I).
  const Eigen::MatrixXcd cov_y = 2.0 * k.b * k.b * a * a.adjoint();
  const ComplexVector ex1 =
      2.0 * k.b * a.adjoint() * oracle::pinv(cov_y) * (y - k.a * a * prior.mean.data);
  const ComplexVector want = k.da * prior.mean.data + k.db * ex1;
  CHECK(oracle::relative_error(oracle_vstar(prior, sys, y, Schedule{}, t).data, want) < 1e-9);
}

TEST_CASE("score special cases and finite differences") {
  Rng rng(25);
  const auto sys = desk_system(rng, 0.2);
  const auto prior = random_prior(4, 2, rng);
  const GaussianOracle g(prior, sys);
  const double t = 0.4;
  const auto k = Schedule{}.eval(t);
  const ComplexVector m = k.a * (g.dense_operator() * prior.mean.data);
  CHECK(g.score(m, t).norm() < 1e-12);

  // Identity operator with white prior: Sigma_y = (a^2 + 2 b^2 + a^2 sigma0^2) I.
  const AcquisitionSystem eye(SamplingMask::full(2), CoilSensitivities::identity(2, 1), 0.5);
  const GaussianPrior white{ComplexImage(2, 1), Eigen::MatrixXcd::Identity(2, 2)};
  const ComplexVector y2 = sample_cn(2, 1.0, rng);
  const double cy = k.a * k.a + 2 * k.b * k.b + k.a * k.a * 0.25;
  CHECK((oracle_score_y(white, eye, y2, Schedule{}, t) + y2 / cy).norm() < 1e-12);

  // D = 4 finite-difference gradient of log p on the real embedding. The
  // Wirtinger score is half the real gradient.
  const AcquisitionSystem small(oracle::mask_from_lines(2, {0, 1}),
                                oracle::random_sensitivities(2, 2, 1, rng), 0.3);
  const auto p4 = random_prior(2, 2, rng);
  const GaussianOracle g4(p4, small);
  const Eigen::MatrixXcd cov = g4.measurement_covariance(t);
  const Eigen::MatrixXcd prec = cov.inverse();
  const ComplexVector mean = k.a * (g4.dense_operator() * p4.mean.data);
  const auto logp = [&](const ComplexVector& y) {
    const ComplexVector r = y - mean;
    return -r.dot(prec * r).real();
  };
  const ComplexVector y = sample_cn(small.measurement_size(), 1.0, rng);
  const RealVector yr = real_embed(y);
  RealVector grad(yr.size());
  const double h = 1e-5;
  for (Eigen::Index i = 0; i < yr.size(); ++i) {
    RealVector up = yr, dn = yr;
    up[i] += h;
    dn[i] -= h;
    grad[i] = (logp(real_lift(up)) - logp(real_lift(dn))) / (2 * h);
  }
  const RealVector want = 0.5 * grad;
  CHECK((real_embed(g4.score(y, t)) - want).norm() < 1e-5 * want.norm());
}

TEST_CASE("singular measurement covariance is reported off its support") {
  Rng rng(26);
  // Cd = 12 > D = 8 and sigma0 = 0: Cov(y) has rank 8.
  const auto sys = desk_system(rng, 0.0, 3);
  const GaussianOracle g(random_prior(4, 2, rng), sys);
  const ComplexVector inside = sys.forward(sample_cn_image(4, 2, 1.0, rng));
  CHECK(g.vstar(inside, 0.5).all_finite());
  const ComplexVector outside = sample_cn(sys.measurement_size(), 1.0, rng);
  CHECK_THROWS_AS((void)g.vstar(outside, 0.5), NumericalError);
  // Deterministic prior at b = 0: Cov(y) = 0.
  const GaussianOracle flat(GaussianPrior{ComplexImage(4, 2), Eigen::MatrixXcd::Zero(8, 8)}, sys);
  CHECK_THROWS_AS((void)flat.vstar(inside, 0.0), NumericalError);
}

TEST_CASE("three forms of the measurement-space field agree") {
  Rng rng(27);
  const Schedule s;
  const auto sys = desk_system(rng, 0.1);
  const GaussianOracle g(random_prior(4, 2, rng), sys);
  double worst2 = 0.0, worst3 = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const double t = 0.02 + 0.96 * rng.uniform();
    const ComplexVector y = sample_cn(sys.measurement_size(), 1.0 + rng.uniform(), rng);
    const auto v = g.vstar(y, t);
    const ComplexVector score = g.score(y, t);
    const ComplexVector u = y_marginal_field(v, sys, y, s, t, tight());
    worst2 = std::max(worst2, oracle::relative_error(u, y_field_from_vstar_and_score(v, sys, score, s, t)));
    worst3 = std::max(worst3, oracle::relative_error(u, y_field_from_score(sys, y, score, s, t)));
  }
  CHECK(worst2 < 1e-6);
  CHECK(worst3 < 1e-6);
}

TEST_CASE("field forms agree when the operator is tall or wide") {
  Rng rng(28);
  const Schedule s;
  // Cd = 12 > D: measurements carry a component outside range(A).
  // Cd = 4 < D: single coil, half the lines.
  for (int coils : {3, 1}) {
    const auto sys = desk_system(rng, 0.1, coils);
    const GaussianOracle g(random_prior(4, 2, rng), sys);
    for (int trial = 0; trial < 10; ++trial) {
      const double t = 0.05 + 0.9 * rng.uniform();
      const ComplexVector y = sample_cn(sys.measurement_size(), 1.0, rng);
      const auto v = g.vstar(y, t);
      const ComplexVector score = g.score(y, t);
      const ComplexVector u = y_marginal_field(v, sys, y, s, t, tight());
      CHECK(oracle::relative_error(u, y_field_from_score(sys, y, score, s, t)) < 1e-6);
      const auto lifted = y_marginal_field_lifted(v, sys, y, s, t, tight());
      CHECK(oracle::relative_error(lifted.data, sys.adjoint(u).data) < 1e-6);
    }
  }
}

TEST_CASE("noiseless field is A vstar") {
  Rng rng(29);
  const auto sys = desk_system(rng, 0.0);
  const auto v = sample_cn_image(4, 2, 1.0, rng);
  const ComplexVector y = sample_cn(sys.measurement_size(), 1.0, rng);
  CHECK(y_marginal_field(v, sys, y, Schedule{}, 0.4, tight()) == sys.forward(v));
  CHECK_THROWS_AS(y_marginal_field(v, sys, y, Schedule{}, 0.0, tight()), std::invalid_argument);
  CHECK_THROWS_AS(y_marginal_field(v, sys, y, Schedule{}, 1.0, tight()), std::invalid_argument);
  CHECK_THROWS_AS(y_marginal_field(v, sys, ComplexVector::Zero(3), Schedule{}, 0.4, tight()),
                  std::invalid_argument);
}

TEST_CASE("vstar matches a Monte-Carlo posterior average") {
  // Independent route: information-form posterior of (x0, x1) given y, sampled.
  Rng rng(30);
  const auto sys = desk_system(rng, 0.3);
  const auto prior = random_prior(4, 2, rng);
  const GaussianOracle g(prior, sys);
  const double t = 0.35;
  const auto k = Schedule{}.eval(t);
  const Eigen::MatrixXcd a = g.dense_operator();
  const int d = 8;

  Eigen::MatrixXcd prior_prec = Eigen::MatrixXcd::Zero(2 * d, 2 * d);
  prior_prec.topLeftCorner(d, d) = prior.covariance.inverse();
  prior_prec.bottomRightCorner(d, d) = 0.5 * Eigen::MatrixXcd::Identity(d, d);
  Eigen::MatrixXcd b(a.rows(), 2 * d);
  b << k.a * a, k.b * a;
  const double noise_var = k.a * k.a * 0.09;
  const Eigen::MatrixXcd post_prec = prior_prec + b.adjoint() * b / noise_var;
  const Eigen::MatrixXcd post_cov = post_prec.inverse();

  const ComplexVector y = sample_cn(sys.measurement_size(), 1.0, rng);
  ComplexVector prior_mean = ComplexVector::Zero(2 * d);
  prior_mean.head(d) = prior.mean.data;
  const ComplexVector post_mean = post_cov * (prior_prec * prior_mean + b.adjoint() * y / noise_var);

  const Eigen::MatrixXcd herm = 0.5 * (post_cov + post_cov.adjoint());
  const Eigen::MatrixXcd chol = herm.llt().matrixL();
  const int n = 100000;
  ComplexVector sum = ComplexVector::Zero(d);
  Eigen::VectorXd sum_sq = Eigen::VectorXd::Zero(2 * d);
  for (int i = 0; i < n; ++i) {
    const ComplexVector z = post_mean + chol * sample_cn(2 * d, 1.0, rng);
    const ComplexVector u = k.da * z.head(d) + k.db * z.tail(d);
    sum += u;
    sum_sq += real_embed(u).cwiseAbs2();
  }
  const ComplexVector mc = sum / n;
  const RealVector mc_r = real_embed(mc);
  const Eigen::VectorXd se = ((sum_sq / n - mc_r.cwiseAbs2()) / n).cwiseSqrt();
  const RealVector want = real_embed(g.vstar(y, t).data);
  for (Eigen::Index i = 0; i < want.size(); ++i) CHECK(std::abs(mc_r[i] - want[i]) < 4.0 * se[i]);
}

TEST_CASE("measurement-space ODE transports p1 to p0 moments") {
  Rng rng(31);
  const Schedule s;
  const double sigma0 = 1e-2;
  const auto sys = desk_system(rng, sigma0);
  const auto prior = random_prior(4, 2, rng);
  const GaussianOracle g(prior, sys);
  const Eigen::MatrixXcd a = g.dense_operator();
  const int steps = 100;
  const int particles = 1000;
  const int m = sys.measurement_size();

  Eigen::MatrixXcd ys(m, particles);
  for (int p = 0; p < particles; ++p) ys.col(p) = sys.forward(sample_cn_image(4, 2, 2.0, rng));
  for (int i = steps; i >= 1; --i) {
    const double t = clamp_time(static_cast<double>(i) / steps);
    for (int p = 0; p < particles; ++p) {
      const ComplexVector y = ys.col(p);
      const ComplexVector u = y_marginal_field(g.vstar(y, t), sys, y, s, t, tight());
      ys.col(p) -= u / static_cast<double>(steps);
    }
  }

  const ComplexVector want_mean = a * prior.mean.data;
  Eigen::MatrixXcd want_cov = a * prior.covariance * a.adjoint();
  want_cov.diagonal().array() += sigma0 * sigma0;

  const ComplexVector mean = ys.rowwise().mean();
  const Eigen::MatrixXcd centered = ys.colwise() - mean;
  const Eigen::MatrixXcd cov = centered * centered.adjoint() / (particles - 1.0);

  // Standard errors: mean entries from the target covariance; covariance entries
  // from the Gaussian fourth moment Var(z_i conj z_j) = S_ii S_jj.
  Eigen::VectorXd se_mean(2 * m);
  for (int i = 0; i < m; ++i) se_mean[2 * i] = se_mean[2 * i + 1] = std::sqrt(want_cov(i, i).real() / 2 / particles);
  CHECK(within_three_se(real_embed(mean), real_embed(want_mean), se_mean) >= 0.95);

  Eigen::VectorXd got_c(2 * m * m), want_c(2 * m * m), se_c(2 * m * m);
  int idx = 0;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      const double se = std::sqrt(want_cov(i, i).real() * want_cov(j, j).real() / particles);
      const double se_part = (i == j) ? se : se / std::sqrt(2.0);
      got_c[idx] = cov(i, j).real();
      want_c[idx] = want_cov(i, j).real();
      se_c[idx++] = se_part;
      got_c[idx] = cov(i, j).imag();
      want_c[idx] = want_cov(i, j).imag();
      se_c[idx++] = (i == j) ? 1.0 : se_part;
    }
  CHECK(within_three_se(got_c, want_c, se_c) >= 0.95);
}
