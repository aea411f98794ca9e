#pragma once

#include "pcfm/flow.hpp"
#include "pcfm/model.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace pcfm {

struct ReconConfig {
  int steps = 10;            // T
  int cg_iters_infer = 30;   // k
  double cg_tolerance = 1e-10;
  double time_eps = kDefaultTimeEps;
  std::uint64_t seed = 0;

  void validate() const;
  [[nodiscard]] CgConfig cg() const { return CgConfig{cg_iters_infer, cg_tolerance}; }
};

/// Estimate of the projected-objective minimizer v*(y, t) given a measurement-space
/// state. A trained network sees A* y; the Gaussian oracle conditions on y itself.
using VelocityField = std::function<ComplexImage(const ComplexVector& y, double t)>;

VelocityField model_velocity(const VectorFieldModel& m, const AcquisitionSystem& sys);
VelocityField oracle_velocity(const GaussianOracle& oracle);
/// The zero field, useful for baselines and algebraic checks.
VelocityField zero_velocity(const AcquisitionSystem& sys);

struct ReconResult {
  ComplexImage image;             // x0 estimate
  ComplexVector y1;               // latent at t = 1
  std::vector<double> residuals;  // ||A x - y(t)|| / ||y(t)|| after each data-consistency step
  std::vector<double> drift;      // the same quantity just before each data-consistency step
  int field_evaluations = 0;
};

/// Euler from t = 0 to 1 on the grid i/T: y += u^Y(y, t) / T with u^Y built from
/// v* = field(y, t) by y_marginal_field. Field times are clamped.
ComplexVector forward_integrate(const ComplexVector& y0, const VelocityField& field,
                                const AcquisitionSystem& sys, const ReconConfig& cfg,
                                int* evaluations = nullptr);

/// x1 = A^+ y1 + (I - A^+ A) z with z ~ CN(0, 2I).
ComplexImage posterior_sample_t1(const AcquisitionSystem& sys, const ComplexVector& y1, Rng& rng,
                                 const CgConfig& cfg);

/// Euler from t = 1 to 0. Step i evaluates the field at tau = (i+1)/T on
/// ybar = a_tau y0 + b_tau y1, then projects onto y(t) = a_t y0 + b_t y1 at t = i/T
/// with x -= A^+ (A x - y(t)). The final step therefore enforces y0.
ReconResult backward_integrate(const ComplexImage& x1, const ComplexVector& y0,
                               const ComplexVector& y1, const VelocityField& field,
                               const AcquisitionSystem& sys, const ReconConfig& cfg);

/// forward_integrate, posterior_sample_t1, backward_integrate. Deterministic in cfg.seed.
ReconResult reconstruct(const ComplexVector& y0, const AcquisitionSystem& sys,
                        const VelocityField& field, const ReconConfig& cfg);

/// A* y0.
ComplexImage zero_filled(const AcquisitionSystem& sys, const ComplexVector& y0);

inline constexpr double kPsnrCap = 200.0;

/// On magnitudes: 20 log10(max|ref| / RMSE), capped at kPsnrCap for an exact match.
double psnr(const ComplexImage& ref, const ComplexImage& test);
/// On magnitudes: mean SSIM over all valid 7 x 7 uniform windows, sample
/// covariances, K1 = 0.01, K2 = 0.03, dynamic range max|ref|.
double ssim(const ComplexImage& ref, const ComplexImage& test);

}  // namespace pcfm
