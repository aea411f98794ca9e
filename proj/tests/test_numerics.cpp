#include "doctest.h"

#include "pcfm/numerics.hpp"

#include <cmath>

using namespace pcfm;

TEST_CASE("dft2 of a constant image concentrates at DC") {
  ComplexImage img(4, 4);
  const cd c(1.5, -0.5);
  img.data.setConstant(c);
  const auto k = dft2(img, DftDirection::forward);
  CHECK(std::abs(k.at(0, 0) - 4.0 * c) < 1e-12);
  for (int i = 0; i < 16; ++i)
    if (i != 0) CHECK(std::abs(k.data[i]) < 1e-12);
}

TEST_CASE("dft2 of an impulse is flat") {
  ComplexImage img(8, 8);
  img.at(0, 0) = 1.0;
  const auto k = dft2(img, DftDirection::forward);
  for (int i = 0; i < 64; ++i) CHECK(std::abs(k.data[i] - cd(0.125, 0.0)) < 1e-14);
}

TEST_CASE("dft2 is unitary") {
  Rng rng(11);
  for (auto [h, w] : {std::pair{8, 8}, std::pair{5, 7}, std::pair{1, 6}, std::pair{16, 4}}) {
    const auto x = sample_cn_image(h, w, 1.0, rng);
    const auto k = dft2(x, DftDirection::forward);
    const auto back = dft2(k, DftDirection::inverse);
    CHECK((back.data - x.data).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(std::abs(k.data.norm() - x.data.norm()) < 1e-10 * x.data.norm());
  }
}

TEST_CASE("dft2 matches the defining sum on a non-square grid") {
  Rng rng(3);
  const int h = 3, w = 5;
  const auto x = sample_cn_image(h, w, 1.0, rng);
  const auto k = dft2(x, DftDirection::forward);
  for (int u = 0; u < h; ++u)
    for (int v = 0; v < w; ++v) {
      cd sum = 0.0;
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
          sum += x.at(r, c) * std::polar(1.0, -2.0 * M_PI * (double(u * r) / h + double(v * c) / w));
      CHECK(std::abs(k.at(u, v) - sum / std::sqrt(double(h * w))) < 1e-12);
    }
}

TEST_CASE("sample_cn moments and determinism") {
  Rng zero_rng(1);
  CHECK(sample_cn(10, 0.0, zero_rng).cwiseAbs().maxCoeff() == 0.0);

  Rng rng(2024);
  const auto z = sample_cn(100000, 2.0, rng);
  const double mean_abs2 = z.cwiseAbs2().mean();
  CHECK(mean_abs2 > 1.98);
  CHECK(mean_abs2 < 2.02);

  // Real embedding covariance is (variance/2) I: check the diagonal and the
  // re/im cross term within 3 standard errors.
  const auto r = real_embed(z);
  double var_re = 0, var_im = 0, cross = 0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    var_re += r[2 * i] * r[2 * i];
    var_im += r[2 * i + 1] * r[2 * i + 1];
    cross += r[2 * i] * r[2 * i + 1];
  }
  const double n = static_cast<double>(z.size());
  var_re /= n;
  var_im /= n;
  cross /= n;
  const double se_var = std::sqrt(2.0) * 1.0 / std::sqrt(n);  // Var(g^2) = 2 sigma^4
  CHECK(std::abs(var_re - 1.0) < 3 * se_var);
  CHECK(std::abs(var_im - 1.0) < 3 * se_var);
  CHECK(std::abs(cross) < 3 * 1.0 / std::sqrt(n));

  Rng a(77), b(77);
  const auto za = sample_cn(32, 1.0, a);
  const auto zb = sample_cn(32, 1.0, b);
  CHECK(za == zb);

  Rng bad(1);
  CHECK_THROWS_AS(sample_cn(3, -1.0, bad), std::invalid_argument);
}

TEST_CASE("Rng substreams are independent of the parent's position") {
  Rng root(5);
  const auto before = root.substream("noise");
  root.next_u64();
  root.normal();
  auto after = root.substream("noise");
  auto b2 = before;
  CHECK(b2.next_u64() == after.next_u64());
  auto other = root.substream("mask");
  CHECK(other.next_u64() != root.substream("noise").next_u64());
}

TEST_CASE("uniform_index covers its range") {
  Rng rng(9);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 5000; ++i) counts[rng.uniform_index(5)]++;
  for (int c : counts) CHECK(c > 800);
}

TEST_CASE("real_embed and real_lift") {
  ComplexVector v(1);
  v[0] = cd(1.0, 2.0);
  const auto r = real_embed(v);
  REQUIRE(r.size() == 2);
  CHECK(r[0] == 1.0);
  CHECK(r[1] == 2.0);

  Rng rng(4);
  const auto w = sample_cn(7, 1.0, rng);
  CHECK(real_lift(real_embed(w)) == w);
  CHECK(real_embed(ComplexVector::Zero(3)).isZero());
  CHECK_THROWS_AS(real_lift(RealVector::Zero(3)), std::invalid_argument);
}

TEST_CASE("image construction validates shape") {
  CHECK_THROWS_AS(ComplexImage(0, 3), std::invalid_argument);
  CHECK_THROWS_AS(ComplexImage(2, 2, ComplexVector::Zero(3)), std::invalid_argument);
  ComplexImage img(2, 2);
  CHECK(img.all_finite());
  img.data[1] = cd(std::nan(""), 0.0);
  CHECK_FALSE(img.all_finite());
}
