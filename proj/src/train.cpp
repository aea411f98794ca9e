#include "pcfm/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>

namespace pcfm {

void TrainConfig::validate() const {
  if (steps < 0) throw std::invalid_argument("steps must be non-negative");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw std::invalid_argument("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw std::invalid_argument("adam_eps must be positive");
  if (!(ema_rate > 0.0 && ema_rate <= 1.0)) throw std::invalid_argument("ema_rate must lie in (0, 1]");
  if (ema_every < 1) throw std::invalid_argument("ema_every must be at least 1");
  if (batch < 1) throw std::invalid_argument("batch must be at least 1");
  if (cg_iters_train < 1) throw std::invalid_argument("cg_iters_train must be at least 1");
  if (!(sigma0 >= 0.0)) throw std::invalid_argument("sigma0 must be non-negative");
  if (!(time_scale > 0.0)) throw std::invalid_argument("time_scale must be positive");
  if (!(time_eps > 0.0 && time_eps < 0.5)) throw std::invalid_argument("time_eps must lie in (0, 0.5)");
  if (!(jvp_eps > 0.0)) throw std::invalid_argument("jvp_eps must be positive");
  if (n_probes < 1) throw std::invalid_argument("n_probes must be at least 1");
}

void MeasurementRecord::validate() const {
  mask.validate();
  sens.validate();
  if (mask.full_lines() != sens.height())
    throw std::invalid_argument("record " + id + ": mask and sensitivities disagree on height");
  const auto expected =
      static_cast<Eigen::Index>(mask.kept_count()) * sens.width() * sens.coils();
  if (y0.size() != expected)
    throw std::invalid_argument("record " + id + ": y0 has " + std::to_string(y0.size()) +
                                " samples, expected " + std::to_string(expected));
  if (!y0.allFinite()) throw std::invalid_argument("record " + id + ": y0 is not finite");
}

AcquisitionSystem MeasurementRecord::system(double sigma0) const {
  return AcquisitionSystem(mask, sens, sigma0);
}

namespace {

// Parameter gradient of Re <g, v(x, t)> for a single input.
RealVector single_backward(const VectorFieldModel& m, const ComplexImage& x, double t,
                           const ComplexVector& g) {
  Eigen::VectorXd times(1);
  times[0] = t;
  ForwardCache cache;
  (void)m.forward_batch(real_embed(x.data), times, &cache);
  return m.backward(cache, real_embed(g));
}

}  // namespace

GradientBundle loss_cfm(const VectorFieldModel& m, const ComplexImage& x0, const ComplexImage& x1,
                        double t, const Schedule& s) {
  const auto p = conditional_point(x0, x1, s, t);
  const ComplexVector err = m.forward(p.x_t, t).data - p.u_cond.data;
  return {err.squaredNorm(), single_backward(m, p.x_t, t, 2.0 * err)};
}

GradientBundle loss_pcfm_supervised(const VectorFieldModel& m, const ComplexImage& x0,
                                    const ComplexImage& x1, const AcquisitionSystem& sys, double t,
                                    Rng& rng, const CgConfig& cfg, const Schedule& s) {
  const auto k = s.eval(t);
  const auto p = conditional_point(x0, x1, s, t);
  const double s0 = sys.noise_sigma0();
  ComplexVector yt = sys.forward(p.x_t);
  yt += k.a * sample_cn(yt.size(), s0 * s0, rng);
  const ComplexImage input = sys.adjoint(yt);
  const ComplexImage out = m.forward(input, t);
  const ComplexImage r = apply_projection(sys, sys.image(out.data - p.u_cond.data), cfg);
  // P is a Hermitian idempotent, so the gradient of ||P e||^2 in e is 2 P e.
  return {r.data.squaredNorm(), single_backward(m, input, t, 2.0 * r.data)};
}

ComplexImage ml_estimate(const AcquisitionSystem& sys, const ComplexVector& u_y, const CgConfig& cfg) {
  return apply_pseudoinverse(sys, u_y, cfg);
}

double divergence_weight(const Schedule& s, double t, double sigma0) {
  const auto k = s.eval(t);
  return k.a * k.da * sigma0 * sigma0;
}

UnsupervisedSample prepare_unsupervised(const AcquisitionSystem& sys, const ComplexVector& y0,
                                        const ComplexImage& x1, double t,
                                        const UnsupervisedOptions& opts, Rng& rng,
                                        const CgConfig& cfg, const Schedule& s) {
  if (opts.n_probes < 1) throw std::invalid_argument("n_probes must be at least 1");
  if (y0.size() != sys.measurement_size())
    throw std::invalid_argument("y0 length does not match the acquisition");
  const auto k = s.eval(t);
  const ComplexVector y1 = sys.forward(x1);
  UnsupervisedSample out;
  out.sys = &sys;
  out.t = t;
  out.input = sys.adjoint(k.a * y0 + k.b * y1);
  out.ml = ml_estimate(sys, k.da * y0 + k.db * y1, cfg);
  for (int i = 0; i < opts.n_probes; ++i) out.probes.push_back(divergence_probe(sys, rng, cfg));
  out.step = jvp_step(out.input, opts.jvp_eps);
  out.weight = divergence_weight(s, t, sys.noise_sigma0());
  return out;
}

namespace {

UnsupervisedTerms evaluate_batch(const VectorFieldModel& m,
                                 const std::vector<UnsupervisedSample>& batch, const CgConfig& cfg,
                                 bool split) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const int io = m.architecture().io_dim();
  Eigen::Index cols = 0;
  for (const auto& smp : batch) {
    if (!smp.sys || smp.probes.empty()) throw std::invalid_argument("unprepared sample");
    cols += 1 + 2 * static_cast<Eigen::Index>(smp.probes.size());
  }

  Eigen::MatrixXd in(io, cols);
  Eigen::VectorXd times(cols);
  Eigen::Index c = 0;
  for (const auto& smp : batch) {
    const RealVector base = real_embed(smp.input.data);
    in.col(c) = base;
    times[c++] = smp.t;
    for (const auto& b : smp.probes) {
      const RealVector pb = smp.step * real_embed(b.data);
      in.col(c) = base + pb;
      times[c++] = smp.t;
      in.col(c) = base - pb;
      times[c++] = smp.t;
    }
  }

  ForwardCache cache;
  const Eigen::MatrixXd out = m.forward_batch(in, times, &cache);

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  Eigen::MatrixXd g_mis = Eigen::MatrixXd::Zero(io, cols);
  Eigen::MatrixXd g_div = Eigen::MatrixXd::Zero(io, cols);
  Eigen::MatrixXd g_tot = Eigen::MatrixXd::Zero(io, cols);
  UnsupervisedTerms terms;
  c = 0;
  for (const auto& smp : batch) {
    const AcquisitionSystem& sys = *smp.sys;
    const ComplexVector v = real_lift(out.col(c));
    const ComplexImage r = apply_projection(sys, sys.image(v - smp.ml.data), cfg);
    const double mismatch = r.data.squaredNorm();
    const RealVector gm = 2.0 * inv_b * real_embed(r.data);
    g_mis.col(c) = gm;
    g_tot.col(c) = gm;
    ++c;

    const double np = static_cast<double>(smp.probes.size());
    double div = 0.0;
    for (const auto& b : smp.probes) {
      const RealVector br = real_embed(b.data);
      div += br.dot(out.col(c) - out.col(c + 1)) / (2.0 * smp.step * np);
      const RealVector gd = inv_b * br / (2.0 * smp.step * np);
      g_div.col(c) = gd;
      g_div.col(c + 1) = -gd;
      g_tot.col(c) = smp.weight * gd;
      g_tot.col(c + 1) = -smp.weight * gd;
      c += 2;
    }
    terms.mismatch.loss += inv_b * mismatch;
    terms.divergence.loss += inv_b * div;
    terms.total.loss += inv_b * (mismatch + smp.weight * div);
  }
  terms.total.gradient = m.backward(cache, g_tot);
  if (split) {
    terms.mismatch.gradient = m.backward(cache, g_mis);
    terms.divergence.gradient = m.backward(cache, g_div);
  }
  return terms;
}

}  // namespace

UnsupervisedTerms evaluate_unsupervised(const VectorFieldModel& m,
                                        const std::vector<UnsupervisedSample>& batch,
                                        const CgConfig& cfg) {
  return evaluate_batch(m, batch, cfg, true);
}

GradientBundle loss_pcfm_unsupervised(const VectorFieldModel& m, const AcquisitionSystem& sys,
                                      const ComplexVector& y0, const ComplexImage& x1, double t,
                                      const UnsupervisedOptions& opts, Rng& rng,
                                      const CgConfig& cfg, const Schedule& s) {
  const std::vector<UnsupervisedSample> batch{prepare_unsupervised(sys, y0, x1, t, opts, rng, cfg, s)};
  return evaluate_batch(m, batch, cfg, false).total;
}

GradientBundle loss_pcfm_unsupervised(const VectorFieldModel& m, const MeasurementRecord& rec,
                                      double sigma0, const ComplexImage& x1, double t,
                                      const UnsupervisedOptions& opts, Rng& rng,
                                      const CgConfig& cfg) {
  rec.validate();
  const auto sys = rec.system(sigma0);
  return loss_pcfm_unsupervised(m, sys, rec.y0, x1, t, opts, rng, cfg);
}

AdamW::AdamW(Eigen::Index n, const TrainConfig& cfg)
    : lr_(cfg.learning_rate),
      wd_(cfg.weight_decay),
      b1_(cfg.beta1),
      b2_(cfg.beta2),
      eps_(cfg.adam_eps),
      m_(RealVector::Zero(n)),
      v_(RealVector::Zero(n)) {}

void AdamW::step(RealVector& params, const RealVector& grad) {
  if (params.size() != m_.size() || grad.size() != m_.size())
    throw std::invalid_argument("AdamW: parameter and gradient sizes differ from the optimizer state");
  ++t_;
  m_ = b1_ * m_ + (1.0 - b1_) * grad;
  v_ = b2_ * v_ + (1.0 - b2_) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  params *= 1.0 - lr_ * wd_;
  params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

TrainResult train_loop(const VectorFieldModel& init, const std::vector<MeasurementRecord>& data,
                       const TrainConfig& cfg, std::ostream* trace, const TrainObserver& observer) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("training set is empty");
  const auto& arch = init.architecture();

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&data](std::size_t a, std::size_t b) { return data[a].id < data[b].id; });
  std::vector<AcquisitionSystem> systems;
  systems.reserve(data.size());
  for (std::size_t i : order) {
    const auto& rec = data[i];
    rec.validate();
    if (rec.sens.height() != arch.height || rec.sens.width() != arch.width)
      throw std::invalid_argument("record " + rec.id + " does not match the model grid");
    systems.push_back(rec.system(cfg.sigma0));
  }

  TrainResult result{init, init, {}};
  AdamW opt(init.parameters().size(), cfg);
  const Rng root(cfg.seed);
  const UnsupervisedOptions opts{cfg.n_probes, cfg.jvp_eps};
  const CgConfig cg = cfg.cg();
  const auto start = std::chrono::steady_clock::now();

  for (int step = 0; step < cfg.steps; ++step) {
    const std::string key = "train/" + std::to_string(step);
    Rng pick = root.substream(key);
    UnsupervisedTerms terms;
    try {
      std::vector<UnsupervisedSample> batch;
      batch.reserve(static_cast<std::size_t>(cfg.batch));
      for (int slot = 0; slot < cfg.batch; ++slot) {
        const auto idx = static_cast<std::size_t>(pick.uniform_index(systems.size()));
        Rng rng = root.substream(key + "/" + std::to_string(slot));
        const double t = sample_time(rng, cfg.time_loc, cfg.time_scale, cfg.time_eps);
        const ComplexImage x1 = sample_cn_image(arch.height, arch.width, 2.0, rng);
        batch.push_back(prepare_unsupervised(systems[idx], data[order[idx]].y0, x1, t, opts, rng, cg));
      }
      terms = evaluate_batch(result.model, batch, cg, false);
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(e.what()) + " at step " + std::to_string(step));
    }
    if (!std::isfinite(terms.total.loss))
      throw NumericalError("non-finite loss at step " + std::to_string(step));
    opt.step(result.model.parameters(), terms.total.gradient);

    if ((step + 1) % cfg.ema_every == 0)
      result.ema.parameters() =
          cfg.ema_rate * result.ema.parameters() + (1.0 - cfg.ema_rate) * result.model.parameters();

    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    const TracePoint tp{step, terms.total.loss, ms};
    result.trace.push_back(tp);
    if (trace) *trace << tp.step << '\t' << tp.loss << '\t' << tp.wall_ms << '\n';
    if (observer && !observer(tp)) break;
  }
  return result;
}

}  // namespace pcfm
