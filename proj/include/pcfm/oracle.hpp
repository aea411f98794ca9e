#pragma once

// Dense brute-force references used by the verification suites and tests.
// Nothing in the reconstruction path depends on this header.

#include "pcfm/linops.hpp"

#include <vector>

namespace pcfm::oracle {

/// Moore-Penrose pseudoinverse by SVD, singular values below rel_tol * s_max dropped.
Eigen::MatrixXcd pinv(const Eigen::MatrixXcd& m, double rel_tol = 1e-10);

/// Real 2n x 2m matrix acting on interleaved (re, im) embeddings.
Eigen::MatrixXd real_matrix(const Eigen::MatrixXcd& m);

/// Mask keeping exactly the listed lines.
SamplingMask mask_from_lines(int lines, const std::vector<int>& kept, int acs = 0);

/// Generic complex sensitivities; normalized to unit sum of squares when requested.
CoilSensitivities random_sensitivities(int height, int width, int coils, Rng& rng,
                                       bool normalize = true);

/// Hermitian positive definite matrix with eigenvalues in [lo, hi].
Eigen::MatrixXcd random_hpd(Eigen::Index n, double lo, double hi, Rng& rng);

double relative_error(const ComplexVector& got, const ComplexVector& want);

}  // namespace pcfm::oracle
