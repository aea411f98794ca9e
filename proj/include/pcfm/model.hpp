#pragma once

#include "pcfm/linops.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

namespace pcfm {

/// Residual MLP over the real embedding of an H x W complex image:
///   h_0 = swish(W_0 x + b_0 + U_0 tau(t))
///   h_l = h_{l-1} + swish(W_l h_{l-1} + b_l + U_l tau(t)),  l = 1..depth-1
///   out = W_o h_{depth-1} + b_o
/// with sinusoidal time features tau(t) of dimension time_dim.
struct Architecture {
  int height = 16;
  int width = 16;
  int hidden = 256;
  int depth = 3;
  int time_dim = 32;

  [[nodiscard]] int io_dim() const { return 2 * height * width; }
  [[nodiscard]] Eigen::Index parameter_count() const;
  void validate() const;
  bool operator==(const Architecture&) const = default;
};

/// Activations kept by a batched forward pass for the backward pass.
struct ForwardCache {
  Eigen::MatrixXd input;                  // io_dim x N
  Eigen::MatrixXd time_features;          // time_dim x N
  std::vector<Eigen::MatrixXd> pre;       // z_l, hidden x N
  std::vector<Eigen::MatrixXd> hidden;    // h_l, hidden x N
};

class VectorFieldModel {
 public:
  VectorFieldModel() = default;
  /// All-zero parameters: the field is identically zero.
  explicit VectorFieldModel(Architecture arch);
  /// Scaled Gaussian weights, zero biases, zero output layer.
  static VectorFieldModel initialized(const Architecture& arch, Rng& rng);

  [[nodiscard]] const Architecture& architecture() const { return arch_; }
  [[nodiscard]] const RealVector& parameters() const { return params_; }
  [[nodiscard]] RealVector& parameters() { return params_; }
  void set_parameters(RealVector p);

  [[nodiscard]] ComplexImage forward(const ComplexImage& x, double t) const;
  /// Columns are real-embedded samples; times has one entry per column.
  [[nodiscard]] Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& inputs,
                                              const Eigen::VectorXd& times,
                                              ForwardCache* cache = nullptr) const;
  /// Gradient of sum_ij grad_out(i,j) * out(i,j) with respect to the parameters.
  /// Throws NumericalError naming the layer if a non-finite gradient appears.
  [[nodiscard]] RealVector backward(const ForwardCache& cache, const Eigen::MatrixXd& grad_out) const;

  [[nodiscard]] Eigen::VectorXd time_features(double t) const;

 private:
  struct Layout {
    Eigen::Index w, b, u;  // offsets of W_l, b_l, U_l
    int in;
  };
  void build_layout();

  Architecture arch_;
  RealVector params_;
  std::vector<Layout> layers_;
  Eigen::Index out_w_ = 0;
  Eigen::Index out_b_ = 0;
};

ComplexImage model_forward(const VectorFieldModel& m, const ComplexImage& x, double t);

/// Any image-space vector field v(x, t).
using ImageField = std::function<ComplexImage(const ComplexImage&, double)>;

ImageField as_field(const VectorFieldModel& m);

inline constexpr double kDefaultJvpEps = 1e-3;

/// Central difference [v(x + h b) - v(x - h b)] / (2h), h = eps (1 + ||x||_inf).
ComplexImage field_jvp(const ImageField& v, const ComplexImage& x, double t,
                       const ComplexImage& probe, double eps = kDefaultJvpEps);
ComplexImage model_jvp(const VectorFieldModel& m, const ComplexImage& x, double t,
                       const ComplexImage& probe, double eps = kDefaultJvpEps);

/// Step length used by the JVP at x.
double jvp_step(const ComplexImage& x, double eps);

/// Probe b = P z with z having independent standard-normal real and imaginary
/// parts, so that the real embedding of b has covariance equal to the real
/// embedding of P.
ComplexImage divergence_probe(const AcquisitionSystem& sys, Rng& rng, const CgConfig& cfg);

/// Hutchinson estimate of the real-embedding divergence of P v at x: the mean of
/// Re <b, J_v b> over probes b = P z. The identity field with P = I gives 2D.
double hutchinson_divergence(const ImageField& v, const ComplexImage& x, double t,
                             const AcquisitionSystem& sys, int n_probes, Rng& rng,
                             const CgConfig& cfg, double eps = kDefaultJvpEps);
double hutchinson_divergence(const VectorFieldModel& m, const ComplexImage& x, double t,
                             const AcquisitionSystem& sys, int n_probes, Rng& rng,
                             const CgConfig& cfg, double eps = kDefaultJvpEps);

struct Checkpoint {
  VectorFieldModel model;
  std::int64_t step = 0;
  bool ema = false;
};

/// Text header then little-endian float64 parameters. Round trip is bit-exact.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace pcfm
