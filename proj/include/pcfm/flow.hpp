#pragma once

#include "pcfm/linops.hpp"

#include <utility>

namespace pcfm {

enum class ScheduleKind { linear };

struct ScheduleCoeffs {
  double a = 0.0;   // weight on the data endpoint x0
  double b = 0.0;   // weight on the noise endpoint x1
  double da = 0.0;  // d a / d t
  double db = 0.0;  // d b / d t
};

/// Interpolation x_t = a_t x0 + b_t x1 with data at t = 0 and noise at t = 1.
struct Schedule {
  ScheduleKind kind = ScheduleKind::linear;

  [[nodiscard]] ScheduleCoeffs eval(double t) const;
};

ScheduleCoeffs schedule_eval(const Schedule& s, double t);

inline constexpr double kDefaultTimeEps = 1e-3;

/// Keeps field evaluations away from t = 0 (where c_t diverges) and t = 1.
double clamp_time(double t, double eps = kDefaultTimeEps);

/// c_t = (1-t)^2 / t * sigma0^2, the shift of the Y-space resolvent.
double resolvent_shift(double t, double sigma0);

/// Logit-normal draw sigmoid(loc + scale g), clamped to [eps, 1-eps].
double sample_time(Rng& rng, double loc = 0.0, double scale = 1.0, double eps = kDefaultTimeEps);

struct ConditionalPoint {
  ComplexImage x_t;
  ComplexImage u_cond;
};

/// x_t = a x0 + b x1 and the conditional velocity a' x0 + b' x1.
ConditionalPoint conditional_point(const ComplexImage& x0, const ComplexImage& x1,
                                   const Schedule& s, double t);

/// Analytic prior CN(mean, covariance) over C^D. Dense, for verification at desk scale.
struct GaussianPrior {
  ComplexImage mean;
  Eigen::MatrixXcd covariance;

  void validate() const;
  [[nodiscard]] int dim() const { return mean.size(); }
};

/// Closed-form fields of the joint Gaussian world x0 ~ prior, x1 ~ CN(0, 2I),
/// y = A(a x0 + b x1) + a e with e ~ CN(0, sigma0^2 I). Holds a dense copy of A.
class GaussianOracle {
 public:
  GaussianOracle(GaussianPrior prior, const AcquisitionSystem& sys, Schedule schedule = {});

  /// E[a' x0 + b' x1 | y], the minimizer of the projected objective.
  [[nodiscard]] ComplexImage vstar(const ComplexVector& y, double t) const;
  /// grad_y log p_t(y) = -Sigma_y^{-1} (y - a A mu0).
  [[nodiscard]] ComplexVector score(const ComplexVector& y, double t) const;
  /// Cov(y) at time t.
  [[nodiscard]] Eigen::MatrixXcd measurement_covariance(double t) const;

  [[nodiscard]] const Eigen::MatrixXcd& dense_operator() const { return a_; }
  [[nodiscard]] const GaussianPrior& prior() const { return prior_; }

 private:
  // Sigma_y^+ (y - a A mu0), rejecting y outside the covariance's range.
  [[nodiscard]] ComplexVector whitened_residual(const ComplexVector& y, double t) const;

  GaussianPrior prior_;
  Schedule schedule_;
  double sigma0_;
  int height_;
  int width_;
  Eigen::MatrixXcd a_;
};

ComplexImage oracle_vstar(const GaussianPrior& prior, const AcquisitionSystem& sys,
                          const ComplexVector& y, const Schedule& s, double t);
ComplexVector oracle_score_y(const GaussianPrior& prior, const AcquisitionSystem& sys,
                             const ComplexVector& y, const Schedule& s, double t);

/// Measurement-space marginal field expressed through the projected-objective
/// minimizer vstar:
///   u = A v - c/(1-t) (c I + 2 A A*)^{-1} [(1-t) A v + y],   c = (1-t)^2 sigma0^2 / t,
/// solved by CG in C^{Cd}. Linear schedule only; t must lie strictly inside (0, 1).
ComplexVector y_marginal_field(const ComplexImage& vstar, const AcquisitionSystem& sys,
                               const ComplexVector& y, const Schedule& s, double t,
                               const CgConfig& cfg);

/// A* u evaluated in image space: A*A v - c/(1-t) (c I + 2 A*A)^{-1} A* [(1-t) A v + y].
/// Cheaper when Cd > D; equals the adjoint of y_marginal_field.
ComplexImage y_marginal_field_lifted(const ComplexImage& vstar, const AcquisitionSystem& sys,
                                     const ComplexVector& y, const Schedule& s, double t,
                                     const CgConfig& cfg);

/// u = A v - a a' sigma0^2 score.
ComplexVector y_field_from_vstar_and_score(const ComplexImage& vstar, const AcquisitionSystem& sys,
                                           const ComplexVector& score, const Schedule& s,
                                           double t);

/// u = (a'/a) y - b (b' - (a'/a) b) (2 A A*) score.
ComplexVector y_field_from_score(const AcquisitionSystem& sys, const ComplexVector& y,
                                 const ComplexVector& score, const Schedule& s, double t);

}  // namespace pcfm
