#include "pcfm/recon.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace pcfm {

void ReconConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("steps must be at least 1");
  if (cg_iters_infer < 1) throw std::invalid_argument("cg_iters_infer must be at least 1");
  if (!(cg_tolerance > 0.0)) throw std::invalid_argument("cg_tolerance must be positive");
  if (!(time_eps > 0.0 && time_eps < 0.5)) throw std::invalid_argument("time_eps must lie in (0, 0.5)");
}

VelocityField model_velocity(const VectorFieldModel& m, const AcquisitionSystem& sys) {
  return [&m, &sys](const ComplexVector& y, double t) { return m.forward(sys.adjoint(y), t); };
}

VelocityField oracle_velocity(const GaussianOracle& oracle) {
  return [&oracle](const ComplexVector& y, double t) { return oracle.vstar(y, t); };
}

VelocityField zero_velocity(const AcquisitionSystem& sys) {
  const int h = sys.height(), w = sys.width();
  return [h, w](const ComplexVector&, double) { return ComplexImage(h, w); };
}

namespace {

void check_finite(const ComplexVector& v, const char* what, int step) {
  if (!v.allFinite())
    throw NumericalError(std::string(what) + " became non-finite at step " + std::to_string(step));
}

double relative_residual(const AcquisitionSystem& sys, const ComplexImage& x, const ComplexVector& y) {
  const double denom = y.norm();
  const double num = (sys.forward(x) - y).norm();
  return denom > 0.0 ? num / denom : num;
}

}  // namespace

ComplexVector forward_integrate(const ComplexVector& y0, const VelocityField& field,
                                const AcquisitionSystem& sys, const ReconConfig& cfg,
                                int* evaluations) {
  cfg.validate();
  if (y0.size() != sys.measurement_size())
    throw std::invalid_argument("y0 length does not match the acquisition");
  const Schedule s;
  const double dt = 1.0 / cfg.steps;
  ComplexVector y = y0;
  for (int i = 0; i < cfg.steps; ++i) {
    const double t = clamp_time(i * dt, cfg.time_eps);
    const ComplexImage v = field(y, t);
    if (evaluations) ++*evaluations;
    y += dt * y_marginal_field(v, sys, y, s, t, cfg.cg());
    check_finite(y, "forward state", i);
  }
  return y;
}

ComplexImage posterior_sample_t1(const AcquisitionSystem& sys, const ComplexVector& y1, Rng& rng,
                                 const CgConfig& cfg) {
  if (y1.size() != sys.measurement_size())
    throw std::invalid_argument("y1 length does not match the acquisition");
  const ComplexImage z = sample_cn_image(sys.height(), sys.width(), 2.0, rng);
  ComplexImage x = apply_pseudoinverse(sys, y1, cfg);
  x.data += z.data - apply_projection(sys, z, cfg).data;
  return x;
}

ReconResult backward_integrate(const ComplexImage& x1, const ComplexVector& y0,
                               const ComplexVector& y1, const VelocityField& field,
                               const AcquisitionSystem& sys, const ReconConfig& cfg) {
  cfg.validate();
  if (x1.height != sys.height() || x1.width != sys.width())
    throw std::invalid_argument("x1 shape does not match the acquisition");
  if (y0.size() != sys.measurement_size() || y1.size() != sys.measurement_size())
    throw std::invalid_argument("measurement lengths do not match the acquisition");
  const Schedule s;
  const double dt = 1.0 / cfg.steps;
  ReconResult out;
  out.y1 = y1;
  ComplexImage x = x1;
  for (int i = cfg.steps - 1; i >= 0; --i) {
    const double tau = (i + 1) * dt;
    const auto kt = s.eval(tau);
    const ComplexVector ybar = kt.a * y0 + kt.b * y1;
    const ComplexImage v = field(ybar, clamp_time(tau, cfg.time_eps));
    ++out.field_evaluations;
    x.data -= dt * v.data;

    const auto k = s.eval(i * dt);
    const ComplexVector target = k.a * y0 + k.b * y1;
    out.drift.push_back(relative_residual(sys, x, target));
    x.data -= apply_pseudoinverse(sys, sys.forward(x) - target, cfg.cg()).data;
    check_finite(x.data, "backward state", i);
    out.residuals.push_back(relative_residual(sys, x, target));
  }
  out.image = std::move(x);
  return out;
}

ReconResult reconstruct(const ComplexVector& y0, const AcquisitionSystem& sys,
                        const VelocityField& field, const ReconConfig& cfg) {
  int forward_evals = 0;
  const ComplexVector y1 = forward_integrate(y0, field, sys, cfg, &forward_evals);
  Rng rng = Rng(cfg.seed).substream("posterior");
  const ComplexImage x1 = posterior_sample_t1(sys, y1, rng, cfg.cg());
  ReconResult r = backward_integrate(x1, y0, y1, field, sys, cfg);
  r.field_evaluations += forward_evals;
  return r;
}

ComplexImage zero_filled(const AcquisitionSystem& sys, const ComplexVector& y0) {
  return sys.adjoint(y0);
}

namespace {

Eigen::ArrayXXd magnitude(const ComplexImage& img) {
  Eigen::ArrayXXd m(img.height, img.width);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) m(r, c) = std::abs(img.at(r, c));
  return m;
}

void check_metric_inputs(const ComplexImage& ref, const ComplexImage& test) {
  require_same_shape(ref, test, "image metric");
  if (!ref.all_finite() || !test.all_finite()) throw std::invalid_argument("image metric on non-finite input");
  if (ref.data.cwiseAbs().maxCoeff() == 0.0) throw std::invalid_argument("reference image is identically zero");
}

}  // namespace

double psnr(const ComplexImage& ref, const ComplexImage& test) {
  check_metric_inputs(ref, test);
  const Eigen::ArrayXXd a = magnitude(ref), b = magnitude(test);
  const double rmse = std::sqrt((a - b).square().mean());
  if (rmse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 20.0 * std::log10(a.maxCoeff() / rmse));
}

double ssim(const ComplexImage& ref, const ComplexImage& test) {
  check_metric_inputs(ref, test);
  constexpr int win = 7;
  if (ref.height < win || ref.width < win)
    throw std::invalid_argument("SSIM needs images of at least 7 x 7");
  const Eigen::ArrayXXd a = magnitude(ref), b = magnitude(test);
  const double range = a.maxCoeff();
  const double c1 = std::pow(0.01 * range, 2), c2 = std::pow(0.03 * range, 2);
  const double n = win * win;
  const double cov_norm = n / (n - 1.0);

  double total = 0.0;
  int count = 0;
  for (int r = 0; r + win <= ref.height; ++r)
    for (int c = 0; c + win <= ref.width; ++c) {
      const auto pa = a.block(r, c, win, win), pb = b.block(r, c, win, win);
      const double ma = pa.mean(), mb = pb.mean();
      const double va = cov_norm * ((pa * pa).mean() - ma * ma);
      const double vb = cov_norm * ((pb * pb).mean() - mb * mb);
      const double cab = cov_norm * ((pa * pb).mean() - ma * mb);
      total += ((2 * ma * mb + c1) * (2 * cab + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return total / count;
}

}  // namespace pcfm
