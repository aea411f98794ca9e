#include "pcfm/oracle.hpp"

#include <Eigen/SVD>

#include <algorithm>

namespace pcfm::oracle {

Eigen::MatrixXcd pinv(const Eigen::MatrixXcd& m, double rel_tol) {
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  const double cutoff = s.size() > 0 ? rel_tol * s[0] : 0.0;
  Eigen::MatrixXcd out = Eigen::MatrixXcd::Zero(m.cols(), m.rows());
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s[i] > cutoff) out += svd.matrixV().col(i) * (1.0 / s[i]) * svd.matrixU().col(i).adjoint();
  return out;
}

Eigen::MatrixXd real_matrix(const Eigen::MatrixXcd& m) {
  Eigen::MatrixXd r(2 * m.rows(), 2 * m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const cd z = m(i, j);
      r(2 * i, 2 * j) = z.real();
      r(2 * i, 2 * j + 1) = -z.imag();
      r(2 * i + 1, 2 * j) = z.imag();
      r(2 * i + 1, 2 * j + 1) = z.real();
    }
  return r;
}

SamplingMask mask_from_lines(int lines, const std::vector<int>& kept, int acs) {
  std::vector<std::uint8_t> flags(static_cast<std::size_t>(lines), 0);
  for (int k : kept) flags.at(static_cast<std::size_t>(k)) = 1;
  return SamplingMask(std::move(flags), acs);
}

CoilSensitivities random_sensitivities(int height, int width, int coils, Rng& rng,
                                       bool normalize) {
  CoilSensitivities sens;
  for (int c = 0; c < coils; ++c) {
    ComplexImage m = sample_cn_image(height, width, 1.0, rng);
    // Keep every map away from zero so the unnormalized case has no blind spots.
    m.data.array() += cd(1.0, 0.0);
    sens.maps.push_back(std::move(m));
  }
  if (normalize) {
    const Eigen::VectorXd sos = sens.sum_of_squares().cwiseSqrt();
    for (auto& m : sens.maps) m.data = m.data.cwiseQuotient(sos.cast<cd>());
  }
  return sens;
}

Eigen::MatrixXcd random_hpd(Eigen::Index n, double lo, double hi, Rng& rng) {
  Eigen::MatrixXcd g(n, n);
  for (Eigen::Index j = 0; j < n; ++j) g.col(j) = sample_cn(n, 1.0, rng);
  Eigen::HouseholderQR<Eigen::MatrixXcd> qr(g);
  const Eigen::MatrixXcd q = qr.householderQ();
  Eigen::VectorXd eig(n);
  for (Eigen::Index i = 0; i < n; ++i)
    eig[i] = n > 1 ? lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1) : lo;
  return q * eig.cast<cd>().asDiagonal() * q.adjoint();
}

double relative_error(const ComplexVector& got, const ComplexVector& want) {
  const double denom = std::max(want.norm(), 1e-300);
  return (got - want).norm() / denom;
}

}  // namespace pcfm::oracle
