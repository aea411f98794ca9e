#pragma once

#include <Eigen/Dense>

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string_view>

namespace pcfm {

using cd = std::complex<double>;
using ComplexVector = Eigen::VectorXcd;
using RealVector = Eigen::VectorXd;

/// Raised when an iterate or result stops being finite. The CLI maps this to exit code 2.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Complex field on a height x width grid, stored row-major (row = phase-encode line).
struct ComplexImage {
  int height = 0;
  int width = 0;
  ComplexVector data;

  ComplexImage() = default;
  ComplexImage(int h, int w);
  ComplexImage(int h, int w, ComplexVector values);

  static ComplexImage zeros(int h, int w) { return ComplexImage(h, w); }

  [[nodiscard]] int size() const { return height * width; }
  [[nodiscard]] cd& at(int row, int col) { return data[row * width + col]; }
  [[nodiscard]] cd at(int row, int col) const { return data[row * width + col]; }
  [[nodiscard]] bool same_shape(const ComplexImage& other) const {
    return height == other.height && width == other.width;
  }
  [[nodiscard]] bool all_finite() const;
};

void require_same_shape(const ComplexImage& a, const ComplexImage& b, std::string_view what);

/// xoshiro256** with splitmix64 seeding. Normal draws use Box-Muller so that
/// streams are bit-exact across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n);
  double normal();

  /// Independent generator derived from this one's seed and a name. Does not
  /// advance this generator.
  [[nodiscard]] Rng substream(std::string_view name) const;
  /// Derives a child generator and advances this one.
  Rng split();

  [[nodiscard]] std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

enum class DftDirection { forward, inverse };

/// Unitary 2-D DFT (1/sqrt(HW) in both directions), DC at (0,0).
ComplexImage dft2(const ComplexImage& img, DftDirection direction);

/// Unitary 1-D DFT matrix of size n: F[j,k] = exp(-+2 pi i jk/n)/sqrt(n).
const Eigen::MatrixXcd& dft_matrix(int n, DftDirection direction);

/// n draws of CN(0, variance): real and imaginary parts each carry variance/2.
ComplexVector sample_cn(Eigen::Index n, double variance, Rng& rng);
ComplexImage sample_cn_image(int height, int width, double variance, Rng& rng);

/// Interleaved (re, im) layout.
RealVector real_embed(const ComplexVector& v);
ComplexVector real_lift(const RealVector& r);

/// Real part of the Hermitian inner product <a, b> = a^* b.
double real_dot(const ComplexVector& a, const ComplexVector& b);

}  // namespace pcfm
