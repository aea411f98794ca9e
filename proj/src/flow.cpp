#include "pcfm/flow.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace pcfm {

ScheduleCoeffs Schedule::eval(double t) const {
  switch (kind) {
    case ScheduleKind::linear:
      return {1.0 - t, t, -1.0, 1.0};
  }
  throw std::invalid_argument("unknown schedule kind");
}

ScheduleCoeffs schedule_eval(const Schedule& s, double t) { return s.eval(t); }

double clamp_time(double t, double eps) {
  if (!(eps > 0.0 && eps < 0.5)) throw std::invalid_argument("time eps must lie in (0, 0.5)");
  if (!std::isfinite(t)) throw std::invalid_argument("time must be finite");
  return std::clamp(t, eps, 1.0 - eps);
}

double resolvent_shift(double t, double sigma0) {
  if (!(t > 0.0)) throw std::invalid_argument("resolvent shift needs t > 0");
  return (1.0 - t) * (1.0 - t) / t * sigma0 * sigma0;
}

double sample_time(Rng& rng, double loc, double scale, double eps) {
  if (!(scale > 0.0)) throw std::invalid_argument("logit-normal scale must be positive");
  const double z = loc + scale * rng.normal();
  return clamp_time(1.0 / (1.0 + std::exp(-z)), eps);
}

ConditionalPoint conditional_point(const ComplexImage& x0, const ComplexImage& x1,
                                   const Schedule& s, double t) {
  require_same_shape(x0, x1, "conditional_point");
  const auto k = s.eval(t);
  return {ComplexImage(x0.height, x0.width, k.a * x0.data + k.b * x1.data),
          ComplexImage(x0.height, x0.width, k.da * x0.data + k.db * x1.data)};
}

void GaussianPrior::validate() const {
  const auto d = mean.size();
  if (covariance.rows() != d || covariance.cols() != d)
    throw std::invalid_argument("prior covariance must be D x D");
  const double scale = std::max(1.0, covariance.cwiseAbs().maxCoeff());
  if ((covariance - covariance.adjoint()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw std::invalid_argument("prior covariance is not Hermitian");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(covariance, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < -1e-10 * scale)
    throw std::invalid_argument("prior covariance is not positive semidefinite");
}

GaussianOracle::GaussianOracle(GaussianPrior prior, const AcquisitionSystem& sys, Schedule schedule)
    : prior_(std::move(prior)),
      schedule_(schedule),
      sigma0_(sys.noise_sigma0()),
      height_(sys.height()),
      width_(sys.width()) {
  if (prior_.dim() != sys.image_size())
    throw std::invalid_argument("prior dimension " + std::to_string(prior_.dim()) +
                                " does not match image size " + std::to_string(sys.image_size()));
  prior_.validate();
  a_ = materialize_dense(sys);
}

Eigen::MatrixXcd GaussianOracle::measurement_covariance(double t) const {
  const auto k = schedule_.eval(t);
  const auto d = prior_.dim();
  const Eigen::MatrixXcd inner =
      k.a * k.a * prior_.covariance + 2.0 * k.b * k.b * Eigen::MatrixXcd::Identity(d, d);
  Eigen::MatrixXcd cov = a_ * inner * a_.adjoint();
  cov.diagonal().array() += k.a * k.a * sigma0_ * sigma0_;
  return cov;
}

ComplexVector GaussianOracle::whitened_residual(const ComplexVector& y, double t) const {
  if (y.size() != a_.rows())
    throw std::invalid_argument("measurement length does not match the operator");
  const auto k = schedule_.eval(t);
  const ComplexVector r = y - k.a * (a_ * prior_.mean.data);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(measurement_covariance(t));
  const Eigen::VectorXd& lam = eig.eigenvalues();
  const double top = lam.cwiseAbs().maxCoeff();
  if (!(top > 0.0)) throw NumericalError("measurement covariance vanishes at t = " + std::to_string(t));
  const double cutoff = 1e-12 * top;

  const ComplexVector coeff = eig.eigenvectors().adjoint() * r;
  ComplexVector scaled = ComplexVector::Zero(coeff.size());
  double outside = 0.0;
  for (Eigen::Index i = 0; i < coeff.size(); ++i) {
    if (lam[i] > cutoff)
      scaled[i] = coeff[i] / lam[i];
    else
      outside += std::norm(coeff[i]);
  }
  // A singular covariance only supports y on its range; anything else has zero density.
  if (std::sqrt(outside) > 1e-8 * (1.0 + r.norm()))
    throw NumericalError("measurement lies outside the support of p_t at t = " + std::to_string(t));
  return eig.eigenvectors() * scaled;
}

ComplexVector GaussianOracle::score(const ComplexVector& y, double t) const {
  return -whitened_residual(y, t);
}

ComplexImage GaussianOracle::vstar(const ComplexVector& y, double t) const {
  const auto k = schedule_.eval(t);
  const ComplexVector w = whitened_residual(y, t);
  const ComplexVector aw = a_.adjoint() * w;
  // Cov(a' x0 + b' x1, y) = (a a' Sigma0 + 2 b b' I) A*.
  ComplexVector v = k.da * prior_.mean.data + k.a * k.da * (prior_.covariance * aw) +
                    2.0 * k.b * k.db * aw;
  return ComplexImage(height_, width_, std::move(v));
}

ComplexImage oracle_vstar(const GaussianPrior& prior, const AcquisitionSystem& sys,
                          const ComplexVector& y, const Schedule& s, double t) {
  return GaussianOracle(prior, sys, s).vstar(y, t);
}

ComplexVector oracle_score_y(const GaussianPrior& prior, const AcquisitionSystem& sys,
                             const ComplexVector& y, const Schedule& s, double t) {
  return GaussianOracle(prior, sys, s).score(y, t);
}

namespace {

void require_interior_linear(const Schedule& s, double t, const char* what) {
  if (s.kind != ScheduleKind::linear)
    throw std::invalid_argument(std::string(what) + " requires the linear schedule");
  if (!(t > 0.0 && t < 1.0) || !std::isfinite(t))
    throw std::invalid_argument(std::string(what) + ": t must lie strictly inside (0, 1)");
}

}  // namespace

ComplexImage y_marginal_field_lifted(const ComplexImage& vstar, const AcquisitionSystem& sys,
                                     const ComplexVector& y, const Schedule& s, double t,
                                     const CgConfig& cfg) {
  require_interior_linear(s, t, "y_marginal_field");
  if (y.size() != sys.measurement_size())
    throw std::invalid_argument("measurement length does not match the operator");
  const ComplexVector av = sys.forward(vstar);
  ComplexImage out = sys.adjoint(av);
  const double c = resolvent_shift(t, sys.noise_sigma0());
  if (c == 0.0) return out;
  const ComplexImage q = sys.adjoint((1.0 - t) * av + y);
  const ComplexImage r = apply_resolvent(sys, c, q, cfg);
  out.data -= (c / (1.0 - t)) * r.data;
  return out;
}

ComplexVector y_marginal_field(const ComplexImage& vstar, const AcquisitionSystem& sys,
                               const ComplexVector& y, const Schedule& s, double t,
                               const CgConfig& cfg) {
  require_interior_linear(s, t, "y_marginal_field");
  if (y.size() != sys.measurement_size())
    throw std::invalid_argument("measurement length does not match the operator");
  const ComplexVector av = sys.forward(vstar);
  const double c = resolvent_shift(t, sys.noise_sigma0());
  if (c == 0.0) return av;

  // (c I + 2 A A*) has spectrum in [c, c + 2||A||^2], so CG converges quickly.
  const LinearOperator shifted = [&sys, c](const ComplexVector& v) {
    return ComplexVector(c * v + 2.0 * sys.forward(sys.adjoint(v)));
  };
  const ComplexVector q = (1.0 - t) * av + y;
  const auto g = cg_solve(shifted, q, ComplexVector::Zero(q.size()), cfg);
  return av - (c / (1.0 - t)) * g.x;
}

ComplexVector y_field_from_vstar_and_score(const ComplexImage& vstar, const AcquisitionSystem& sys,
                                           const ComplexVector& score, const Schedule& s,
                                           double t) {
  const auto k = s.eval(t);
  const double s0 = sys.noise_sigma0();
  return sys.forward(vstar) - (k.a * k.da * s0 * s0) * score;
}

ComplexVector y_field_from_score(const AcquisitionSystem& sys, const ComplexVector& y,
                                 const ComplexVector& score, const Schedule& s, double t) {
  const auto k = s.eval(t);
  if (k.a == 0.0) throw std::invalid_argument("score form of the field needs a_t != 0");
  const double ratio = k.da / k.a;
  const ComplexVector aas = sys.forward(sys.adjoint(score));
  return ratio * y - (k.b * (k.db - ratio * k.b) * 2.0) * aas;
}

}  // namespace pcfm
