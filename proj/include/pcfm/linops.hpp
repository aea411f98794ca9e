#pragma once

#include "pcfm/numerics.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace pcfm {

/// 1-D Cartesian mask over phase-encode lines (image rows). The readout
/// direction is always fully sampled.
struct SamplingMask {
  std::vector<std::uint8_t> kept;  // one flag per phase-encode line
  int acs_count = 0;

  SamplingMask() = default;
  SamplingMask(std::vector<std::uint8_t> kept_flags, int acs);

  static SamplingMask full(int lines);

  [[nodiscard]] int full_lines() const { return static_cast<int>(kept.size()); }
  [[nodiscard]] int kept_count() const;
  [[nodiscard]] double acceleration() const;
  [[nodiscard]] std::vector<int> kept_lines() const;
  /// Phase-encode indices of the acs_count lowest-frequency lines (DC at index 0).
  [[nodiscard]] std::vector<int> acs_lines() const;
  void validate() const;
};

/// Low-frequency line indices for a given ACS count, ordered by index.
std::vector<int> center_lines(int lines, int acs);

struct CoilSensitivities {
  std::vector<ComplexImage> maps;

  [[nodiscard]] int coils() const { return static_cast<int>(maps.size()); }
  [[nodiscard]] int height() const { return maps.empty() ? 0 : maps.front().height; }
  [[nodiscard]] int width() const { return maps.empty() ? 0 : maps.front().width; }
  /// Pixelwise sum of |S_c|^2.
  [[nodiscard]] Eigen::VectorXd sum_of_squares() const;
  /// Shapes agree and there are no blind spots.
  void validate() const;

  static CoilSensitivities identity(int height, int width);
};

struct CgConfig {
  int max_iters = 30;
  double tolerance = 1e-10;

  void validate() const;
};

struct CgResult {
  ComplexVector x;
  int iterations = 0;
  double residual_norm = 0.0;
};

using LinearOperator = std::function<ComplexVector(const ComplexVector&)>;

/// Coil-combined forward operator A = [M F S_1; ...; M F S_C] together with the
/// noise level of the acquisition. Immutable after construction.
class AcquisitionSystem {
 public:
  AcquisitionSystem(SamplingMask mask, CoilSensitivities sens, double noise_sigma0 = 0.0);

  [[nodiscard]] const SamplingMask& mask() const { return mask_; }
  [[nodiscard]] const CoilSensitivities& sensitivities() const { return sens_; }
  [[nodiscard]] double noise_sigma0() const { return sigma0_; }

  [[nodiscard]] int height() const { return height_; }
  [[nodiscard]] int width() const { return width_; }
  [[nodiscard]] int coils() const { return sens_.coils(); }
  /// D: number of image pixels.
  [[nodiscard]] int image_size() const { return height_ * width_; }
  /// C*d: number of acquired complex samples over all coils.
  [[nodiscard]] int measurement_size() const;

  [[nodiscard]] ComplexVector forward(const ComplexImage& x) const;
  [[nodiscard]] ComplexImage adjoint(const ComplexVector& y) const;
  /// A*A x without forming intermediate k-space: the readout transforms cancel,
  /// leaving a Hermitian H x H kernel along the phase-encode axis.
  [[nodiscard]] ComplexImage normal(const ComplexImage& x) const;

  [[nodiscard]] ComplexImage image(ComplexVector flat) const {
    return ComplexImage(height_, width_, std::move(flat));
  }

 private:
  SamplingMask mask_;
  CoilSensitivities sens_;
  double sigma0_;
  int height_;
  int width_;
  std::vector<int> kept_;
  Eigen::MatrixXcd sens_matrix_;    // D x C
  Eigen::MatrixXcd fh_kept_;        // rows of the forward F_H on kept lines
  Eigen::MatrixXcd fh_kept_adj_;    // its conjugate transpose
  Eigen::MatrixXcd normal_kernel_;  // F_H^* M F_H
};

ComplexVector apply_forward(const AcquisitionSystem& sys, const ComplexImage& x);
ComplexImage apply_adjoint(const AcquisitionSystem& sys, const ComplexVector& y);
ComplexImage apply_normal(const AcquisitionSystem& sys, const ComplexImage& x);

/// Conjugate gradient for Hermitian positive (semi-)definite operators.
/// Exits early once ||r||_2 < tolerance. Throws NumericalError on non-finite iterates.
CgResult cg_solve(const LinearOperator& apply_spd, const ComplexVector& b, const ComplexVector& x0,
                  const CgConfig& cfg);

/// P v = A^+ A v, solving A*A r = A*A v by CG started from the right-hand side.
ComplexImage apply_projection(const AcquisitionSystem& sys, const ComplexImage& v,
                              const CgConfig& cfg);
/// A^+ y via CG on the normal equations from zero (minimal-norm least squares).
ComplexImage apply_pseudoinverse(const AcquisitionSystem& sys, const ComplexVector& y,
                                 const CgConfig& cfg);
/// (c I + 2 A*A)^{-1} v, c > 0, by CG from zero.
ComplexImage apply_resolvent(const AcquisitionSystem& sys, double c, const ComplexImage& v,
                             const CgConfig& cfg);

/// Dense Cd x D matrix of the forward operator. Column j = forward(e_j).
Eigen::MatrixXcd materialize_dense(const AcquisitionSystem& sys,
                                   std::int64_t max_entries = 1'000'000);

/// Dense orthogonal projector onto range(A^*), from an SVD of the dense operator.
Eigen::MatrixXcd dense_range_projector(const AcquisitionSystem& sys);

using MaskSampler = std::function<SamplingMask(Rng&)>;

/// Smallest eigenvalue of the average of n_masks dense projections P_s. A
/// positive value certifies empirical measurement completeness. Desk scale only.
double check_completeness(const MaskSampler& mask_sampler, const CoilSensitivities& sens,
                          int n_masks, Rng& rng);

/// Smallest eigenvalue of the running sum sum_{i<=n} P_i after each of n = 1..n_masks draws.
std::vector<double> completeness_trace(const MaskSampler& mask_sampler,
                                       const CoilSensitivities& sens, int n_masks, Rng& rng);

}  // namespace pcfm
