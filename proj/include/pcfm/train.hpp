#pragma once

#include "pcfm/flow.hpp"
#include "pcfm/model.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace pcfm {

struct TrainConfig {
  int steps = 20000;
  double learning_rate = 1e-4;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double ema_rate = 0.99;
  int ema_every = 100;
  int batch = 16;
  int cg_iters_train = 10;
  double sigma0 = 1e-2;
  double time_loc = 0.0;
  double time_scale = 1.0;
  double time_eps = kDefaultTimeEps;
  double jvp_eps = kDefaultJvpEps;
  int n_probes = 1;
  std::uint64_t seed = 0;

  void validate() const;
  [[nodiscard]] CgConfig cg() const { return CgConfig{cg_iters_train, 1e-10}; }
};

/// One undersampled acquisition. Holds no fully sampled image by construction.
struct MeasurementRecord {
  std::string id;
  ComplexVector y0;
  SamplingMask mask;
  CoilSensitivities sens;

  void validate() const;
  [[nodiscard]] AcquisitionSystem system(double sigma0) const;
};

struct GradientBundle {
  double loss = 0.0;
  RealVector gradient;
};

/// ||v(x_t, t) - (a' x0 + b' x1)||^2.
GradientBundle loss_cfm(const VectorFieldModel& m, const ComplexImage& x0, const ComplexImage& x1,
                        double t, const Schedule& s = {});

/// ||P [v(A* y_t, t) - (a' x0 + b' x1)]||^2 with y_t = A(a x0 + b x1) + a e and fresh
/// noise e ~ CN(0, sigma0^2 I) drawn from rng. Needs x0: verification only.
GradientBundle loss_pcfm_supervised(const VectorFieldModel& m, const ComplexImage& x0,
                                    const ComplexImage& x1, const AcquisitionSystem& sys, double t,
                                    Rng& rng, const CgConfig& cfg, const Schedule& s = {});

/// Maximum-likelihood velocity from a measurement-space velocity. The noise
/// covariance is a multiple of I, so this is A^+ u_y.
ComplexImage ml_estimate(const AcquisitionSystem& sys, const ComplexVector& u_y, const CgConfig& cfg);

/// Weight on the real-embedding divergence in the unsupervised objective,
/// a a' sigma0^2. Negative for the linear schedule.
double divergence_weight(const Schedule& s, double t, double sigma0);

struct UnsupervisedOptions {
  int n_probes = 1;
  double jvp_eps = kDefaultJvpEps;
};

/// Everything the unsupervised loss needs that does not depend on the model.
struct UnsupervisedSample {
  const AcquisitionSystem* sys = nullptr;
  double t = 0.0;
  ComplexImage input;     // A* y_t
  ComplexImage ml;        // A^+ (a' y0 + b' A x1)
  std::vector<ComplexImage> probes;
  double step = 0.0;      // finite-difference step along the probes
  double weight = 0.0;    // divergence weight
};

UnsupervisedSample prepare_unsupervised(const AcquisitionSystem& sys, const ComplexVector& y0,
                                        const ComplexImage& x1, double t,
                                        const UnsupervisedOptions& opts, Rng& rng,
                                        const CgConfig& cfg, const Schedule& s = {});

/// The two parts of the unsupervised objective, each with its parameter gradient,
/// averaged over the batch: ||P [v - u_ML]||^2 and the Hutchinson divergence of P v.
struct UnsupervisedTerms {
  GradientBundle mismatch;
  GradientBundle divergence;
  GradientBundle total;  // mismatch + weight * divergence, per sample
};

UnsupervisedTerms evaluate_unsupervised(const VectorFieldModel& m,
                                        const std::vector<UnsupervisedSample>& batch,
                                        const CgConfig& cfg);

/// ||P [v(A* y_t, t) - u_ML]||^2 + a a' sigma0^2 div(P v), with y_t = a y0 + b A x1.
GradientBundle loss_pcfm_unsupervised(const VectorFieldModel& m, const AcquisitionSystem& sys,
                                      const ComplexVector& y0, const ComplexImage& x1, double t,
                                      const UnsupervisedOptions& opts, Rng& rng,
                                      const CgConfig& cfg, const Schedule& s = {});
GradientBundle loss_pcfm_unsupervised(const VectorFieldModel& m, const MeasurementRecord& rec,
                                      double sigma0, const ComplexImage& x1, double t,
                                      const UnsupervisedOptions& opts, Rng& rng,
                                      const CgConfig& cfg);

/// Decoupled weight decay Adam.
class AdamW {
 public:
  AdamW(Eigen::Index n, const TrainConfig& cfg);
  void step(RealVector& params, const RealVector& grad);
  [[nodiscard]] std::int64_t steps_taken() const { return t_; }

 private:
  double lr_, wd_, b1_, b2_, eps_;
  RealVector m_, v_;
  std::int64_t t_ = 0;
};

struct TracePoint {
  int step = 0;
  double loss = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  VectorFieldModel model;
  VectorFieldModel ema;
  std::vector<TracePoint> trace;
};

/// Called after every step with the step's trace point; return false to stop early.
using TrainObserver = std::function<bool(const TracePoint&)>;

/// AdamW on the unsupervised objective with an EMA copy updated every ema_every
/// steps. Records are visited in id order and every random draw is keyed by
/// (seed, step, slot), so results do not depend on the order of `data`.
/// If `trace` is given, one `step<TAB>loss<TAB>wall_ms` line is written per step.
TrainResult train_loop(const VectorFieldModel& init, const std::vector<MeasurementRecord>& data,
                       const TrainConfig& cfg, std::ostream* trace = nullptr,
                       const TrainObserver& observer = {});

}  // namespace pcfm
