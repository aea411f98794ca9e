#include "pcfm/linops.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <string>

namespace pcfm {

using RowMat = Eigen::Matrix<cd, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// --- SamplingMask -----------------------------------------------------------

SamplingMask::SamplingMask(std::vector<std::uint8_t> kept_flags, int acs)
    : kept(std::move(kept_flags)), acs_count(acs) {
  validate();
}

SamplingMask SamplingMask::full(int lines) {
  if (lines < 1) throw std::invalid_argument("mask needs at least one line");
  return SamplingMask(std::vector<std::uint8_t>(static_cast<std::size_t>(lines), 1), 0);
}

int SamplingMask::kept_count() const {
  return static_cast<int>(std::count_if(kept.begin(), kept.end(), [](auto k) { return k != 0; }));
}

double SamplingMask::acceleration() const {
  return static_cast<double>(full_lines()) / static_cast<double>(kept_count());
}

std::vector<int> SamplingMask::kept_lines() const {
  std::vector<int> lines;
  for (int i = 0; i < full_lines(); ++i)
    if (kept[static_cast<std::size_t>(i)] != 0) lines.push_back(i);
  return lines;
}

std::vector<int> SamplingMask::acs_lines() const { return center_lines(full_lines(), acs_count); }

std::vector<int> center_lines(int lines, int acs) {
  if (acs < 0 || acs > lines) throw std::invalid_argument("acs count out of range");
  std::vector<int> out;
  const int lo = -(acs / 2);
  for (int f = lo; f < lo + acs; ++f) out.push_back(((f % lines) + lines) % lines);
  std::sort(out.begin(), out.end());
  return out;
}

void SamplingMask::validate() const {
  if (kept.empty()) throw std::invalid_argument("mask has no lines");
  const int d = kept_count();
  if (d < 1) throw std::invalid_argument("mask keeps no lines");
  for (int line : acs_lines())
    if (kept[static_cast<std::size_t>(line)] == 0)
      throw std::invalid_argument("mask drops ACS line " + std::to_string(line));
}

// --- CoilSensitivities ------------------------------------------------------

Eigen::VectorXd CoilSensitivities::sum_of_squares() const {
  if (maps.empty()) return {};
  Eigen::VectorXd sos = Eigen::VectorXd::Zero(maps.front().size());
  for (const auto& m : maps) sos += m.data.cwiseAbs2();
  return sos;
}

void CoilSensitivities::validate() const {
  if (maps.empty()) throw std::invalid_argument("no coil sensitivity maps");
  for (const auto& m : maps) {
    require_same_shape(maps.front(), m, "coil sensitivities");
    if (!m.all_finite()) throw std::invalid_argument("coil sensitivity map is not finite");
  }
  if (sum_of_squares().minCoeff() <= 0.0)
    throw std::invalid_argument("coil sensitivities have a blind spot (sum of squares = 0)");
}

CoilSensitivities CoilSensitivities::identity(int height, int width) {
  ComplexImage ones(height, width);
  ones.data.setConstant(cd(1.0, 0.0));
  return CoilSensitivities{{ones}};
}

void CgConfig::validate() const {
  if (max_iters < 1) throw std::invalid_argument("CG needs max_iters >= 1");
  if (!(tolerance > 0.0)) throw std::invalid_argument("CG tolerance must be > 0");
}

// --- AcquisitionSystem ------------------------------------------------------

AcquisitionSystem::AcquisitionSystem(SamplingMask mask, CoilSensitivities sens, double noise_sigma0)
    : mask_(std::move(mask)), sens_(std::move(sens)), sigma0_(noise_sigma0) {
  mask_.validate();
  sens_.validate();
  if (!(sigma0_ >= 0.0)) throw std::invalid_argument("noise sigma0 must be >= 0");
  height_ = sens_.height();
  width_ = sens_.width();
  if (mask_.full_lines() != height_)
    throw std::invalid_argument("mask has " + std::to_string(mask_.full_lines()) +
                                " lines but the image has " + std::to_string(height_) + " rows");
  kept_ = mask_.kept_lines();

  sens_matrix_.resize(image_size(), coils());
  for (int c = 0; c < coils(); ++c) sens_matrix_.col(c) = sens_.maps[static_cast<std::size_t>(c)].data;

  const auto& fh = dft_matrix(height_, DftDirection::forward);
  fh_kept_.resize(static_cast<Eigen::Index>(kept_.size()), height_);
  for (std::size_t i = 0; i < kept_.size(); ++i)
    fh_kept_.row(static_cast<Eigen::Index>(i)) = fh.row(kept_[i]);
  fh_kept_adj_ = fh_kept_.adjoint();
  normal_kernel_ = fh_kept_adj_ * fh_kept_;
}

int AcquisitionSystem::measurement_size() const {
  return coils() * static_cast<int>(kept_.size()) * width_;
}

ComplexVector AcquisitionSystem::forward(const ComplexImage& x) const {
  if (x.height != height_ || x.width != width_)
    throw std::invalid_argument("apply_forward: image shape does not match the system");
  const auto& fw = dft_matrix(width_, DftDirection::forward);
  const Eigen::Index d = static_cast<Eigen::Index>(kept_.size()) * width_;
  ComplexVector y(static_cast<Eigen::Index>(coils()) * d);
  RowMat weighted(height_, width_);
  for (int c = 0; c < coils(); ++c) {
    Eigen::Map<RowMat>(weighted.data(), height_, width_) =
        Eigen::Map<const RowMat>(x.data.data(), height_, width_)
            .cwiseProduct(Eigen::Map<const RowMat>(sens_matrix_.col(c).data(), height_, width_));
    Eigen::Map<RowMat> block(y.data() + c * d, static_cast<Eigen::Index>(kept_.size()), width_);
    block.noalias() = fh_kept_ * weighted * fw;
  }
  return y;
}

ComplexImage AcquisitionSystem::adjoint(const ComplexVector& y) const {
  if (y.size() != measurement_size())
    throw std::invalid_argument("apply_adjoint: expected " + std::to_string(measurement_size()) +
                                " samples, got " + std::to_string(y.size()));
  const auto& fw_inv = dft_matrix(width_, DftDirection::inverse);
  const Eigen::Index d = static_cast<Eigen::Index>(kept_.size()) * width_;
  ComplexImage out(height_, width_);
  Eigen::Map<RowMat> acc(out.data.data(), height_, width_);
  RowMat coil_image(height_, width_);
  for (int c = 0; c < coils(); ++c) {
    Eigen::Map<const RowMat> block(y.data() + c * d, static_cast<Eigen::Index>(kept_.size()),
                                   width_);
    coil_image.noalias() = fh_kept_adj_ * block * fw_inv;
    acc += Eigen::Map<const RowMat>(sens_matrix_.col(c).data(), height_, width_)
               .conjugate()
               .cwiseProduct(coil_image);
  }
  return out;
}

ComplexImage AcquisitionSystem::normal(const ComplexImage& x) const {
  if (x.height != height_ || x.width != width_)
    throw std::invalid_argument("apply_normal: image shape does not match the system");
  ComplexImage out(height_, width_);
  Eigen::Map<RowMat> acc(out.data.data(), height_, width_);
  Eigen::Map<const RowMat> in(x.data.data(), height_, width_);
  RowMat weighted(height_, width_);
  RowMat filtered(height_, width_);
  for (int c = 0; c < coils(); ++c) {
    Eigen::Map<const RowMat> s(sens_matrix_.col(c).data(), height_, width_);
    weighted = in.cwiseProduct(s);
    filtered.noalias() = normal_kernel_ * weighted;
    acc += s.conjugate().cwiseProduct(filtered);
  }
  return out;
}

ComplexVector apply_forward(const AcquisitionSystem& sys, const ComplexImage& x) {
  return sys.forward(x);
}

ComplexImage apply_adjoint(const AcquisitionSystem& sys, const ComplexVector& y) {
  return sys.adjoint(y);
}

ComplexImage apply_normal(const AcquisitionSystem& sys, const ComplexImage& x) {
  return sys.normal(x);
}

// --- CG ---------------------------------------------------------------------

namespace {

bool finite(const ComplexVector& v) {
  return v.allFinite();
}

}  // namespace

CgResult cg_solve(const LinearOperator& apply_spd, const ComplexVector& b, const ComplexVector& x0,
                  const CgConfig& cfg) {
  cfg.validate();
  if (b.size() != x0.size()) throw std::invalid_argument("cg_solve: b and x0 differ in length");

  CgResult result;
  result.x = x0;
  ComplexVector r = b - apply_spd(x0);
  ComplexVector p = r;
  double rr = r.squaredNorm();
  result.residual_norm = std::sqrt(rr);
  if (!std::isfinite(rr)) throw NumericalError("cg_solve: non-finite initial residual");
  // A zero residual would make the first step size 0/0.
  if (result.residual_norm < cfg.tolerance) return result;

  for (int j = 1; j <= cfg.max_iters; ++j) {
    const ComplexVector v = apply_spd(p);
    const double pv = p.dot(v).real();
    if (!(pv > 0.0)) {
      if (!std::isfinite(pv)) throw NumericalError("cg_solve: non-finite curvature p^*Ap");
      break;  // direction in the null space: nothing left to reduce
    }
    const double alpha = rr / pv;
    result.x += alpha * p;
    r -= alpha * v;
    result.iterations = j;
    const double rr_next = r.squaredNorm();
    result.residual_norm = std::sqrt(rr_next);
    if (!finite(result.x) || !std::isfinite(rr_next))
      throw NumericalError("cg_solve: non-finite iterate at iteration " + std::to_string(j) +
                           " (operator not PSD or severely ill-conditioned)");
    if (result.residual_norm < cfg.tolerance) break;
    const double beta = rr_next / rr;
    p = r + beta * p;
    rr = rr_next;
  }
  return result;
}

ComplexImage apply_projection(const AcquisitionSystem& sys, const ComplexImage& v,
                              const CgConfig& cfg) {
  const ComplexVector rhs = sys.normal(v).data;
  const LinearOperator op = [&sys](const ComplexVector& u) {
    return sys.normal(sys.image(u)).data;
  };
  return sys.image(cg_solve(op, rhs, rhs, cfg).x);
}

ComplexImage apply_pseudoinverse(const AcquisitionSystem& sys, const ComplexVector& y,
                                 const CgConfig& cfg) {
  const ComplexVector rhs = sys.adjoint(y).data;
  const LinearOperator op = [&sys](const ComplexVector& u) {
    return sys.normal(sys.image(u)).data;
  };
  return sys.image(cg_solve(op, rhs, ComplexVector::Zero(rhs.size()), cfg).x);
}

ComplexImage apply_resolvent(const AcquisitionSystem& sys, double c, const ComplexImage& v,
                             const CgConfig& cfg) {
  if (!(c > 0.0)) throw std::invalid_argument("apply_resolvent: c must be > 0");
  if (v.height != sys.height() || v.width != sys.width())
    throw std::invalid_argument("apply_resolvent: image shape does not match the system");
  const LinearOperator op = [&sys, c](const ComplexVector& u) {
    return ComplexVector(c * u + 2.0 * sys.normal(sys.image(u)).data);
  };
  return sys.image(cg_solve(op, v.data, ComplexVector::Zero(v.data.size()), cfg).x);
}

// --- dense ------------------------------------------------------------------

Eigen::MatrixXcd materialize_dense(const AcquisitionSystem& sys, std::int64_t max_entries) {
  const std::int64_t rows = sys.measurement_size();
  const std::int64_t cols = sys.image_size();
  if (rows * cols > max_entries)
    throw std::invalid_argument("materialize_dense: " + std::to_string(rows) + "x" +
                                std::to_string(cols) + " exceeds the dense size cap");
  Eigen::MatrixXcd dense(rows, cols);
  ComplexImage unit(sys.height(), sys.width());
  for (Eigen::Index j = 0; j < cols; ++j) {
    unit.data.setZero();
    unit.data[j] = 1.0;
    dense.col(j) = sys.forward(unit);
  }
  return dense;
}

Eigen::MatrixXcd dense_range_projector(const AcquisitionSystem& sys) {
  const Eigen::MatrixXcd a = materialize_dense(sys);
  Eigen::BDCSVD<Eigen::MatrixXcd> svd(a, Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  const double cutoff = s.size() > 0 ? 1e-10 * s[0] : 0.0;
  Eigen::Index rank = 0;
  while (rank < s.size() && s[rank] > cutoff) ++rank;
  const auto vr = svd.matrixV().leftCols(rank);
  return vr * vr.adjoint();
}

namespace {

constexpr int kMaxCompletenessPixels = 256;

void check_completeness_args(const CoilSensitivities& sens, int n_masks) {
  if (n_masks < 1) throw std::invalid_argument("check_completeness: n_masks must be >= 1");
  sens.validate();
  if (sens.height() * sens.width() > kMaxCompletenessPixels)
    throw std::invalid_argument("check_completeness: grid too large for dense materialization");
}

double smallest_eigenvalue(const Eigen::MatrixXcd& hermitian) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(hermitian, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff();
}

}  // namespace

double check_completeness(const MaskSampler& mask_sampler, const CoilSensitivities& sens,
                          int n_masks, Rng& rng) {
  check_completeness_args(sens, n_masks);
  const Eigen::Index dim = static_cast<Eigen::Index>(sens.height()) * sens.width();
  Eigen::MatrixXcd sum = Eigen::MatrixXcd::Zero(dim, dim);
  for (int i = 0; i < n_masks; ++i)
    sum += dense_range_projector(AcquisitionSystem(mask_sampler(rng), sens));
  const double lambda = smallest_eigenvalue(sum / static_cast<double>(n_masks));
  // Round-off makes a zero eigenvalue come out as +-1e-16.
  return std::abs(lambda) < 1e-12 ? 0.0 : lambda;
}

std::vector<double> completeness_trace(const MaskSampler& mask_sampler,
                                       const CoilSensitivities& sens, int n_masks, Rng& rng) {
  check_completeness_args(sens, n_masks);
  const Eigen::Index dim = static_cast<Eigen::Index>(sens.height()) * sens.width();
  Eigen::MatrixXcd sum = Eigen::MatrixXcd::Zero(dim, dim);
  std::vector<double> trace;
  for (int i = 0; i < n_masks; ++i) {
    sum += dense_range_projector(AcquisitionSystem(mask_sampler(rng), sens));
    trace.push_back(smallest_eigenvalue(sum));
  }
  return trace;
}

}  // namespace pcfm
