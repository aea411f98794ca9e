#include "pcfm/verify.hpp"

#include "pcfm/flow.hpp"
#include "pcfm/oracle.hpp"
#include "pcfm/pipeline.hpp"
#include "pcfm/recon.hpp"
#include "pcfm/simulate.hpp"
#include "pcfm/train.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

namespace pcfm::verify {

namespace fs = std::filesystem;

CheckResult timed(const std::string& name, double budget_seconds, const std::function<bool(std::string&)>& body) {
  CheckResult r;
  r.name = name;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    r.passed = body(r.detail);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail += std::string(r.detail.empty() ? "" : "; ") + "exception: " + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (budget_seconds > 0.0 && r.seconds > budget_seconds) {
    r.passed = false;
    r.detail += "; over the " + std::to_string(static_cast<int>(budget_seconds)) + " s budget";
  }
  return r;
}

namespace {

CgConfig tight(int iters = 400) { return CgConfig{iters, 1e-13}; }

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

// Appends "label value" to the detail string and returns ok.
bool note(std::string& detail, const std::string& label, double value, bool ok) {
  if (!detail.empty()) detail += ", ";
  detail += label + " " + fmt(value) + (ok ? "" : " (FAIL)");
  return ok;
}

AcquisitionSystem random_system(int h, int w, int coils, const std::vector<int>& kept, Rng& rng,
                                double sigma0 = 0.0) {
  return AcquisitionSystem(oracle::mask_from_lines(h, kept), oracle::random_sensitivities(h, w, coils, rng),
                           sigma0);
}

// D = 8 (4 x 2 grid), two coils, half the lines: Cd = D.
AcquisitionSystem desk_system(Rng& rng, double sigma0, int coils = 2, const std::vector<int>& kept = {0, 1}) {
  return random_system(4, 2, coils, kept, rng, sigma0);
}

GaussianPrior random_prior(int h, int w, Rng& rng) {
  return {sample_cn_image(h, w, 1.0, rng), oracle::random_hpd(h * w, 0.2, 2.0, rng)};
}

ComplexImage draw_prior(const GaussianPrior& p, Rng& rng) {
  const Eigen::MatrixXcd l = p.covariance.llt().matrixL();
  return ComplexImage(p.mean.height, p.mean.width, p.mean.data + l * sample_cn(p.dim(), 1.0, rng));
}

ComplexVector measure(const AcquisitionSystem& sys, const ComplexImage& x, Rng& rng) {
  ComplexVector y = sys.forward(x);
  y += sample_cn(y.size(), sys.noise_sigma0() * sys.noise_sigma0(), rng);
  return y;
}

double fraction_within(const Eigen::VectorXd& got, const Eigen::VectorXd& want, const Eigen::VectorXd& se) {
  int ok = 0;
  for (Eigen::Index i = 0; i < got.size(); ++i)
    if (std::abs(got[i] - want[i]) <= 3.0 * se[i] + 1e-12) ++ok;
  return static_cast<double>(ok) / static_cast<double>(got.size());
}

// Sample covariance of complex columns against a Hermitian target, entrywise
// on real and imaginary parts, with Gaussian standard errors.
double covariance_agreement(const Eigen::MatrixXcd& samples, const Eigen::MatrixXcd& want) {
  const Eigen::Index n = samples.cols(), m = samples.rows();
  const ComplexVector mean = samples.rowwise().mean();
  const Eigen::MatrixXcd centered = samples.colwise() - mean;
  const Eigen::MatrixXcd cov = centered * centered.adjoint() / (n - 1.0);
  Eigen::VectorXd got(2 * m * m), target(2 * m * m), se(2 * m * m);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j) {
      const double base = std::sqrt(std::max(0.0, want(i, i).real() * want(j, j).real()) / n);
      const double part = i == j ? base : base / std::sqrt(2.0);
      got[k] = cov(i, j).real();
      target[k] = want(i, j).real();
      se[k++] = part;
      got[k] = cov(i, j).imag();
      target[k] = want(i, j).imag();
      se[k++] = i == j ? 1.0 : part;
    }
  return fraction_within(got, target, se);
}

struct Moments {
  RealVector sum, sum2;
  int n = 0;
  void add(const RealVector& v) {
    if (n == 0) {
      sum = RealVector::Zero(v.size());
      sum2 = RealVector::Zero(v.size());
    }
    sum += v;
    sum2 += v.cwiseAbs2();
    ++n;
  }
  [[nodiscard]] RealVector mean() const { return sum / n; }
  [[nodiscard]] RealVector se() const { return ((sum2 / n - mean().cwiseAbs2()).cwiseMax(0.0) / n).cwiseSqrt(); }
};

Architecture small_arch(int h, int w, int hidden = 16, int depth = 2) {
  Architecture a;
  a.height = h;
  a.width = w;
  a.hidden = hidden;
  a.depth = depth;
  a.time_dim = 8;
  return a;
}

VectorFieldModel random_model(const Architecture& a, Rng& rng, double sd = 0.3) {
  VectorFieldModel m(a);
  RealVector p(a.parameter_count());
  for (auto& v : p) v = sd * rng.normal();
  m.set_parameters(std::move(p));
  return m;
}

// Number of sampled coordinates where a central difference of `loss` matches
// `grad` to 1e-3 relative.
int fd_agreement(const VectorFieldModel& m, const RealVector& grad,
                 const std::function<double(const VectorFieldModel&)>& loss, Rng& rng, int coords) {
  const double h = 1e-5;
  int pass = 0;
  for (int i = 0; i < coords; ++i) {
    const auto k = static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(grad.size())));
    VectorFieldModel up = m, dn = m;
    up.parameters()[k] += h;
    dn.parameters()[k] -= h;
    const double fd = (loss(up) - loss(dn)) / (2 * h);
    if (std::abs(grad[k] - fd) / (std::abs(grad[k]) + 1e-8) < 1e-3) ++pass;
  }
  return pass;
}

}  // namespace

// ---------------------------------------------------------------------------

CheckResult operator_suite() {
  return timed("operators", 10.0, [](std::string& d) {
    Rng rng(101);
    struct Case {
      int h, w, coils;
      std::vector<int> kept;
    };
    const std::vector<Case> cases{{4, 4, 2, {0, 2}}, {4, 4, 1, {0, 1}}, {8, 8, 2, {0, 1, 5}}, {8, 8, 1, {0, 2, 3, 7}}};
    double adj = 0, herm = 0, idem = 0, aapa = 0, proj = 0, pinv = 0, res = 0;
    for (const auto& c : cases) {
      const auto sys = random_system(c.h, c.w, c.coils, c.kept, rng);
      const Eigen::MatrixXcd a = materialize_dense(sys);
      const Eigen::MatrixXcd ap = oracle::pinv(a);
      for (int k = 0; k < 5; ++k) {
        const auto x = sample_cn_image(c.h, c.w, 1.0, rng);
        const ComplexVector y = sample_cn(sys.measurement_size(), 1.0, rng);
        const cd lhs = sys.forward(x).dot(y), rhs = x.data.dot(sys.adjoint(y).data);
        adj = std::max(adj, std::abs(lhs - rhs) / (x.data.norm() * y.norm()));
      }
      const auto u = sample_cn_image(c.h, c.w, 1.0, rng), v = sample_cn_image(c.h, c.w, 1.0, rng);
      const auto pu = apply_projection(sys, u, tight()), pv = apply_projection(sys, v, tight());
      herm = std::max(herm, std::abs(pu.data.dot(v.data) - u.data.dot(pv.data)) / (u.data.norm() * v.data.norm()));
      idem = std::max(idem, oracle::relative_error(apply_projection(sys, pv, tight()).data, pv.data));
      const ComplexVector ax = sys.forward(u);
      aapa = std::max(aapa, oracle::relative_error(sys.forward(apply_pseudoinverse(sys, ax, tight())), ax));
      proj = std::max(proj, oracle::relative_error(pv.data, ap * a * v.data));
      const ComplexVector y = sample_cn(sys.measurement_size(), 1.0, rng);
      pinv = std::max(pinv, oracle::relative_error(apply_pseudoinverse(sys, y, tight()).data, ap * y));
      const double cc = 0.3;
      const Eigen::MatrixXcd r = (cc * Eigen::MatrixXcd::Identity(a.cols(), a.cols()) + 2.0 * a.adjoint() * a).inverse();
      res = std::max(res, oracle::relative_error(apply_resolvent(sys, cc, v, tight()).data, r * v.data));
    }
    bool ok = note(d, "adjoint", adj, adj < 1e-6);
    ok &= note(d, "P Hermitian", herm, herm < 1e-6);
    ok &= note(d, "P idempotent", idem, idem < 1e-6);
    ok &= note(d, "A A+ A", aapa, aapa < 1e-6);
    ok &= note(d, "P vs SVD", proj, proj < 1e-6);
    ok &= note(d, "A+ vs SVD", pinv, pinv < 1e-6);
    ok &= note(d, "resolvent vs dense", res, res < 1e-6);
    return ok;
  });
}

CheckResult completeness() {
  return timed("completeness", 30.0, [](std::string& d) {
    Rng rng(102);
    const auto sens = CoilSensitivities::identity(8, 8);
    const MaskSampler alpha2 = [](Rng& r) { return generate_mask(8, 2.0, 2, r); };
    const double lam = check_completeness(alpha2, sens, 64, rng);
    const MaskSampler dead = [](Rng& r) {
      std::vector<int> kept;
      for (int l = 0; l < 8; ++l)
        if (l != 3 && (l == 0 || r.uniform() < 0.7)) kept.push_back(l);
      return oracle::mask_from_lines(8, kept);
    };
    const double lam_dead = check_completeness(dead, sens, 64, rng);
    const auto trace = completeness_trace(alpha2, sens, 64, rng);
    bool monotone = true;
    for (std::size_t i = 1; i < trace.size(); ++i) monotone &= trace[i] >= trace[i - 1] - 1e-10;
    bool ok = note(d, "lambda_min alpha=2", lam, lam > 0.0);
    ok &= note(d, "lambda_min dead line", lam_dead, std::abs(lam_dead) < 1e-10);
    ok &= note(d, "running sum monotone", monotone ? 1.0 : 0.0, monotone);
    return ok;
  });
}

CheckResult field_forms() {
  return timed("field forms", 30.0, [](std::string& d) {
    Rng rng(103);
    const Schedule s;
    const auto sys = desk_system(rng, 0.1);
    const GaussianOracle g(random_prior(4, 2, rng), sys);
    double w2 = 0.0, w3 = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const double t = 0.02 + 0.96 * rng.uniform();
      const ComplexVector y = sample_cn(sys.measurement_size(), 1.0 + rng.uniform(), rng);
      const auto v = g.vstar(y, t);
      const ComplexVector score = g.score(y, t);
      const ComplexVector u = y_marginal_field(v, sys, y, s, t, tight());
      w2 = std::max(w2, oracle::relative_error(u, y_field_from_vstar_and_score(v, sys, score, s, t)));
      w3 = std::max(w3, oracle::relative_error(u, y_field_from_score(sys, y, score, s, t)));
    }
    bool ok = note(d, "vstar+score form", w2, w2 < 1e-6);
    ok &= note(d, "score-only form", w3, w3 < 1e-6);
    return ok;
  });
}

CheckResult measurement_consistency() {
  return timed("measurement consistency", 60.0, [](std::string& d) {
    Rng rng(104);
    const auto sys = desk_system(rng, 1e-4);
    const auto prior = random_prior(4, 2, rng);
    const GaussianOracle oracle(prior, sys);
    const ComplexVector y0 = measure(sys, draw_prior(prior, rng), rng);
    ReconConfig cfg;
    cfg.steps = 50;
    cfg.cg_iters_infer = 200;
    cfg.cg_tolerance = 1e-13;
    cfg.seed = 3;
    const auto r = reconstruct(y0, sys, oracle_velocity(oracle), cfg);
    const double worst = *std::max_element(r.residuals.begin(), r.residuals.end());
    const double final_res = (sys.forward(r.image) - y0).norm() / y0.norm();
    bool ok = note(d, "max per-step residual", worst, worst < 1e-3 && r.residuals.size() == 50);
    ok &= note(d, "final residual", final_res, final_res < 1e-3);
    return ok;
  });
}

CheckResult posterior_moments() {
  return timed("posterior moments", 60.0, [](std::string& d) {
    Rng rng(105);
    const auto sys = desk_system(rng, 0.0, 1, {0, 2});
    const Eigen::MatrixXcd a = materialize_dense(sys);
    const Eigen::MatrixXcd ap = oracle::pinv(a);
    const ComplexVector y1 = sys.forward(sample_cn_image(4, 2, 1.0, rng));
    const int n = 10000;
    Eigen::MatrixXcd samples(8, n);
    for (int i = 0; i < n; ++i) samples.col(i) = posterior_sample_t1(sys, y1, rng, tight(200)).data;
    const Eigen::MatrixXcd want_cov = 2.0 * (Eigen::MatrixXcd::Identity(8, 8) - ap * a);
    const ComplexVector mean = samples.rowwise().mean();
    Eigen::VectorXd se(16);
    for (int i = 0; i < 8; ++i) se[2 * i] = se[2 * i + 1] = std::sqrt(std::max(0.0, want_cov(i, i).real()) / 2 / n);
    const double fm = fraction_within(real_embed(mean), real_embed(ap * y1), se);
    const double fc = covariance_agreement(samples, want_cov);
    bool ok = note(d, "mean entries within 3 SE", fm, fm >= 0.95);
    ok &= note(d, "covariance entries within 3 SE", fc, fc >= 0.95);
    return ok;
  });
}

CheckResult gsure_equivalence() {
  return timed("GSURE gradient equivalence", 300.0, [](std::string& d) {
    Rng rng(106);
    const auto arch = small_arch(4, 2, 16, 2);
    const double sigma0 = 0.05;
    const auto sys = desk_system(rng, sigma0);
    const auto m = random_model(arch, rng);
    const auto x0 = sample_cn_image(4, 2, 1.0, rng);
    const auto x1 = sample_cn_image(4, 2, 2.0, rng);
    const double t = 0.4;
    Moments sup, unsup;
    for (int i = 0; i < 10000; ++i) {
      sup.add(loss_pcfm_supervised(m, x0, x1, sys, t, rng, tight(200)).gradient);
      const ComplexVector y0 = measure(sys, x0, rng);
      unsup.add(loss_pcfm_unsupervised(m, sys, y0, x1, t, UnsupervisedOptions{}, rng, tight(200)).gradient);
    }
    const RealVector diff = sup.mean() - unsup.mean();
    const RealVector se = (sup.se().cwiseAbs2() + unsup.se().cwiseAbs2()).cwiseSqrt();
    int pass = 0;
    for (int i = 0; i < 32; ++i) {
      const auto k = static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(diff.size())));
      if (std::abs(diff[k]) <= 3.0 * se[k]) ++pass;
    }
    return note(d, "coordinates within 3 SE of 32", pass, pass >= 31);
  });
}

CheckResult hutchinson() {
  return timed("Hutchinson divergence", 30.0, [](std::string& d) {
    Rng rng(107);
    const auto sys = desk_system(rng, 0.0, 1, {0, 1});
    const Eigen::MatrixXcd a = materialize_dense(sys);
    const Eigen::MatrixXd pr = oracle::real_matrix(oracle::pinv(a) * a);
    const auto x = sample_cn_image(4, 2, 1.0, rng);
    const Eigen::MatrixXcd mc = Eigen::MatrixXcd::Random(8, 8);
    const Eigen::MatrixXd rr = Eigen::MatrixXd::Random(16, 16);
    const ImageField complex_linear = [&mc](const ComplexImage& v, double) {
      return ComplexImage(v.height, v.width, mc * v.data);
    };
    const ImageField real_linear = [&rr](const ComplexImage& v, double) {
      return ComplexImage(v.height, v.width, real_lift(rr * real_embed(v.data)));
    };
    const ImageField identity = [](const ComplexImage& v, double) { return v; };
    const AcquisitionSystem full(SamplingMask::full(4), CoilSensitivities::identity(4, 2));

    auto z_score = [&](const ImageField& f, const AcquisitionSystem& s, double want) {
      const int n = 10000;
      double sum = 0, sum2 = 0;
      for (int i = 0; i < n; ++i) {
        const double v = hutchinson_divergence(f, x, 0.3, s, 1, rng, CgConfig{50, 1e-12});
        sum += v;
        sum2 += v * v;
      }
      const double mean = sum / n;
      return std::abs(mean - want) / std::sqrt((sum2 / n - mean * mean) / n);
    };
    const double z1 = z_score(complex_linear, sys, (pr * oracle::real_matrix(mc) * pr).trace());
    const double z2 = z_score(real_linear, sys, (pr * rr * pr).trace());
    const double z3 = z_score(identity, full, 16.0);
    bool ok = note(d, "complex-linear |z|", z1, z1 < 3.0);
    ok &= note(d, "real-linear |z|", z2, z2 < 3.0);
    ok &= note(d, "identity (2D = 16) |z|", z3, z3 < 3.0);
    return ok;
  });
}

CheckResult loss_gradients() {
  return timed("loss gradients", 120.0, [](std::string& d) {
    Rng rng(108);
    const int coords = 32;
    const auto arch = small_arch(4, 2, 12, 2);
    const auto m = random_model(arch, rng);
    const auto sys = desk_system(rng, 0.3);
    const auto x0 = sample_cn_image(4, 2, 1.0, rng);
    const auto x1 = sample_cn_image(4, 2, 2.0, rng);
    const ComplexVector y0 = measure(sys, x0, rng);
    const double t = 0.45;

    const auto g_cfm = loss_cfm(m, x0, x1, t);
    const int p_cfm = fd_agreement(
        m, g_cfm.gradient, [&](const VectorFieldModel& mm) { return loss_cfm(mm, x0, x1, t).loss; }, rng, coords);

    Rng r_sup(5);
    const auto g_sup = loss_pcfm_supervised(m, x0, x1, sys, t, r_sup, tight(200));
    const int p_sup = fd_agreement(
        m, g_sup.gradient,
        [&](const VectorFieldModel& mm) {
          Rng r(5);
          return loss_pcfm_supervised(mm, x0, x1, sys, t, r, tight(200)).loss;
        },
        rng, coords);

    Rng r_uns(17);
    const auto g_uns = loss_pcfm_unsupervised(m, sys, y0, x1, t, UnsupervisedOptions{}, r_uns, tight(200));
    const int p_uns = fd_agreement(
        m, g_uns.gradient,
        [&](const VectorFieldModel& mm) {
          Rng r(17);
          return loss_pcfm_unsupervised(mm, sys, y0, x1, t, UnsupervisedOptions{}, r, tight(200)).loss;
        },
        rng, coords);

    bool ok = note(d, "cfm coordinates", p_cfm, p_cfm == coords);
    ok &= note(d, "supervised", p_sup, p_sup == coords);
    ok &= note(d, "unsupervised", p_uns, p_uns == coords);
    return ok;
  });
}

CheckResult nfe_accounting() {
  return timed("NFE accounting", 30.0, [](std::string& d) {
    Rng rng(109);
    const auto sys = desk_system(rng, 1e-2);
    const ComplexVector y0 = sample_cn(sys.measurement_size(), 1.0, rng);
    bool ok = true;
    for (int steps : {1, 5, 10, 40}) {
      int calls = 0;
      const VelocityField counted = [&calls, &sys](const ComplexVector&, double) {
        ++calls;
        return ComplexImage(sys.height(), sys.width());
      };
      ReconConfig cfg;
      cfg.steps = steps;
      const auto r = reconstruct(y0, sys, counted, cfg);
      ok &= note(d, "T=" + std::to_string(steps) + " calls", calls, calls == 2 * steps && r.field_evaluations == calls);
    }
    return ok;
  });
}

CheckResult tensor_round_trip() {
  return timed("tensor round trip", 10.0, [](std::string& d) {
    Rng rng(110);
    TensorFile t{{3, 4, 5}, {}};
    for (int i = 0; i < 60; ++i)
      t.values.emplace_back(static_cast<float>(rng.normal()), static_cast<float>(rng.normal()));
    t.values[0] = {-0.0f, std::numeric_limits<float>::denorm_min()};
    t.values[1] = {std::numeric_limits<float>::max(), -std::numeric_limits<float>::min() / 8};
    const fs::path stem = fs::temp_directory_path() / ("pcfm_verify_tensor_" + std::to_string(rng.next_u64()));
    write_tensor(stem, t);
    const auto back = read_tensor(stem);
    fs::remove(fs::path(stem.string() + ".hdr"));
    fs::remove(fs::path(stem.string() + ".bin"));
    bool same = back.dims == t.dims && back.values.size() == t.values.size();
    for (std::size_t i = 0; same && i < t.values.size(); ++i)
      same = std::bit_cast<std::uint64_t>(back.values[i]) == std::bit_cast<std::uint64_t>(t.values[i]);
    return note(d, "bit-exact", same ? 1.0 : 0.0, same);
  });
}

CheckResult mask_statistics() {
  return timed("mask keep frequency", 30.0, [](std::string& d) {
    Rng rng(111);
    const int grid = 16, acs = 2, n = 10000;
    std::vector<int> counts(grid, 0);
    bool budget = true;
    for (int i = 0; i < n; ++i) {
      const auto m = generate_mask(grid, 4.0, acs, rng);
      budget &= m.kept_count() == 4;
      for (int l : m.kept_lines()) ++counts[l];
    }
    const auto centre = center_lines(grid, acs);
    int min_free = n;
    bool acs_always = true;
    for (int l = 0; l < grid; ++l) {
      if (std::find(centre.begin(), centre.end(), l) != centre.end())
        acs_always &= counts[l] == n;
      else
        min_free = std::min(min_free, counts[l]);
    }
    bool ok = note(d, "min non-ACS keep count of 1e4", min_free, min_free > 0);
    ok &= note(d, "ACS always kept", acs_always ? 1.0 : 0.0, acs_always);
    ok &= note(d, "budget round(16/4)", budget ? 4.0 : 0.0, budget);
    return ok;
  });
}

CheckResult simulation_contracts() {
  return timed("simulation contracts", 30.0, [](std::string& d) {
    Rng rng(112);
    const auto ph = simulate_phantom(16, 4, rng, 1.0);
    const double norm_err = (ph.sens.sum_of_squares().array() - 1.0).abs().maxCoeff();
    Rng r1(7);
    const auto single = simulate_phantom(8, 1, r1, 1.0);
    const double unit_err = (single.sens.maps[0].data.cwiseAbs().array() - 1.0).abs().maxCoeff();
    std::vector<ComplexImage> kspace;
    for (const auto& s : ph.sens.maps)
      kspace.push_back(dft2(ComplexImage(16, 16, s.data.cwiseProduct(ph.x0.data)), DftDirection::forward));
    const double sense_err = oracle::relative_error(sense_combine(kspace, ph.sens).data, ph.x0.data);

    // Noise level: E||e||^2 / Cd = sigma0^2.
    const auto mask = generate_mask(16, 4.0, 2, rng);
    const AcquisitionSystem sys(mask, ph.sens);
    const ComplexVector clean = sys.forward(ph.x0);
    double acc = 0.0;
    const int reps = 200;
    for (int i = 0; i < reps; ++i)
      acc += (simulate_measurement(ph.x0, ph.sens, mask, 0.1, rng).y0 - clean).squaredNorm();
    const double ratio = acc / reps / clean.size() / 0.01;
    const double ratio_se = 1.0 / std::sqrt(static_cast<double>(reps) * clean.size());
    bool ok = note(d, "sum |S|^2 - 1", norm_err, norm_err < 1e-12);
    ok &= note(d, "single coil |S| - 1", unit_err, unit_err < 1e-12);
    ok &= note(d, "SENSE left inverse", sense_err, sense_err < 1e-10);
    ok &= note(d, "noise power / sigma0^2", ratio, std::abs(ratio - 1.0) < 3 * ratio_se);
    return ok;
  });
}

std::vector<Check> suite(const std::string& name) {
  const std::vector<Check> props{operator_suite, completeness, hutchinson,       nfe_accounting,
                                 tensor_round_trip, mask_statistics, simulation_contracts};
  const std::vector<Check> oracle_checks{field_forms, measurement_consistency, posterior_moments};
  const std::vector<Check> gradients{loss_gradients, gsure_equivalence};
  if (name == "props") return props;
  if (name == "oracle") return oracle_checks;
  if (name == "gradients") return gradients;
  if (name == "all") {
    std::vector<Check> all = props;
    all.insert(all.end(), oracle_checks.begin(), oracle_checks.end());
    all.insert(all.end(), gradients.begin(), gradients.end());
    return all;
  }
  throw std::invalid_argument("unknown suite '" + name + "' (props, oracle, gradients, all)");
}

// ---------------------------------------------------------------------------

DeskReport desk_experiment(const RunConfig& cfg, const fs::path& workdir, int test_cases,
                           const std::vector<int>& steps_grid) {
  const auto t0 = std::chrono::steady_clock::now();
  DeskReport rep;
  rep.steps_grid = steps_grid;
  const fs::path train_dir = workdir / "train", test_dir = workdir / "test";
  fs::remove_all(workdir);
  simulate_dataset(cfg, train_dir);
  RunConfig held = cfg;
  held.seed = cfg.seed + 1;
  held.n_cases = test_cases;
  simulate_dataset(held, test_dir);

  std::ofstream trace(workdir / "loss.tsv");
  const auto tt = std::chrono::steady_clock::now();
  const auto trained = train_on_dataset(cfg, train_dir, workdir / "model.ckpt", &trace);
  rep.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - tt).count();

  const auto zf = score_dataset(test_dir, {}, true);
  rep.zero_filled_psnr = mean_psnr(zf);
  for (const auto& r : zf) rep.zero_filled_ssim += r.ssim / zf.size();
  for (int steps : steps_grid) {
    ReconConfig rc = cfg.recon_config();
    rc.steps = steps;
    const fs::path out = workdir / ("recon_T" + std::to_string(steps));
    for (const auto& dir : list_cases(test_dir)) reconstruct_case(trained.ema, dir, rc, out);
    const auto rows = score_dataset(test_dir, out);
    rep.psnr.push_back(mean_psnr(rows));
    double s = 0.0;
    for (const auto& r : rows) s += r.ssim / rows.size();
    rep.ssim.push_back(s);
  }
  rep.total_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Loss trace without the wall-clock column.
std::string strip_wall_clock(const std::string& trace) {
  std::istringstream in(trace);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind('\t')) + '\n';
  return out;
}

std::string run_small_pipeline(const fs::path& dir) {
  RunConfig cfg;
  cfg.grid = 8;
  cfg.coils = 2;
  cfg.accel = 2.0;
  cfg.acs = 2;
  cfg.n_cases = 8;
  cfg.hidden = 32;
  cfg.depth = 2;
  cfg.time_dim = 8;
  cfg.steps = 40;
  cfg.batch = 4;
  cfg.ema_every = 10;
  cfg.T = 4;
  cfg.seed = 11;
  cfg.train_seed = 12;
  cfg.recon_seed = 13;
  fs::remove_all(dir);
  simulate_dataset(cfg, dir / "data");
  std::ofstream trace(dir / "loss.tsv");
  const auto trained = train_on_dataset(cfg, dir / "data", dir / "model.ckpt", &trace);
  trace.close();
  for (const auto& c : list_cases(dir / "data")) reconstruct_case(trained.ema, c, cfg.recon_config(), dir / "recon");
  std::ostringstream metrics;
  write_metrics(metrics, score_dataset(dir / "data", dir / "recon"));
  return metrics.str();
}

}  // namespace

CheckResult end_to_end_determinism(const fs::path& workdir) {
  return timed("determinism", 0.0, [&](std::string& d) {
    const fs::path a = workdir / "run_a", b = workdir / "run_b";
    const std::string ma = run_small_pipeline(a), mb = run_small_pipeline(b);
    int files = 0, differing = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
      if (!e.is_regular_file()) continue;
      const fs::path rel = fs::relative(e.path(), a);
      std::string x = slurp(e.path()), y = slurp(b / rel);
      if (rel == "loss.tsv") {
        x = strip_wall_clock(x);
        y = strip_wall_clock(y);
      }
      ++files;
      if (x != y) ++differing;
    }
    bool ok = note(d, "artifacts compared", files, files > 0);
    ok &= note(d, "differing", differing, differing == 0);
    ok &= note(d, "metrics identical", ma == mb ? 1.0 : 0.0, ma == mb);
    fs::remove_all(workdir);
    return ok;
  });
}

}  // namespace pcfm::verify
