#include "pcfm/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace pcfm {

namespace {

using MatMap = Eigen::Map<Eigen::MatrixXd>;
using ConstMatMap = Eigen::Map<const Eigen::MatrixXd>;

Eigen::MatrixXd swish(const Eigen::MatrixXd& z) {
  return z.unaryExpr([](double v) { return v / (1.0 + std::exp(-v)); });
}

Eigen::MatrixXd swish_grad(const Eigen::MatrixXd& z) {
  return z.unaryExpr([](double v) {
    const double s = 1.0 / (1.0 + std::exp(-v));
    return s * (1.0 + v * (1.0 - s));
  });
}

Eigen::Index block_size(int rows, int cols) { return static_cast<Eigen::Index>(rows) * cols; }

}  // namespace

Eigen::Index Architecture::parameter_count() const {
  Eigen::Index n = 0;
  for (int l = 0; l < depth; ++l) {
    const int in = l == 0 ? io_dim() : hidden;
    n += block_size(hidden, in) + hidden + block_size(hidden, time_dim);
  }
  return n + block_size(io_dim(), hidden) + io_dim();
}

void Architecture::validate() const {
  if (height < 1 || width < 1) throw std::invalid_argument("architecture grid must be positive");
  if (hidden < 1 || depth < 1) throw std::invalid_argument("architecture needs hidden >= 1 and depth >= 1");
  if (time_dim < 2 || time_dim % 2 != 0)
    throw std::invalid_argument("time_dim must be a positive even number");
}

VectorFieldModel::VectorFieldModel(Architecture arch) : arch_(arch) {
  arch_.validate();
  params_ = RealVector::Zero(arch_.parameter_count());
  build_layout();
}

void VectorFieldModel::build_layout() {
  layers_.clear();
  Eigen::Index off = 0;
  for (int l = 0; l < arch_.depth; ++l) {
    Layout lay{};
    lay.in = l == 0 ? arch_.io_dim() : arch_.hidden;
    lay.w = off;
    off += block_size(arch_.hidden, lay.in);
    lay.b = off;
    off += arch_.hidden;
    lay.u = off;
    off += block_size(arch_.hidden, arch_.time_dim);
    layers_.push_back(lay);
  }
  out_w_ = off;
  off += block_size(arch_.io_dim(), arch_.hidden);
  out_b_ = off;
}

VectorFieldModel VectorFieldModel::initialized(const Architecture& arch, Rng& rng) {
  VectorFieldModel m(arch);
  auto fill = [&](Eigen::Index off, Eigen::Index n, double sd) {
    for (Eigen::Index i = 0; i < n; ++i) m.params_[off + i] = sd * rng.normal();
  };
  const double residual_scale = 1.0 / std::sqrt(static_cast<double>(arch.depth));
  for (int l = 0; l < arch.depth; ++l) {
    const auto& lay = m.layers_[static_cast<std::size_t>(l)];
    const double sd = std::sqrt(1.0 / lay.in) * (l == 0 ? 1.0 : residual_scale);
    fill(lay.w, block_size(arch.hidden, lay.in), sd);
    fill(lay.u, block_size(arch.hidden, arch.time_dim), std::sqrt(1.0 / arch.time_dim));
  }
  return m;
}

void VectorFieldModel::set_parameters(RealVector p) {
  if (p.size() != arch_.parameter_count())
    throw std::invalid_argument("parameter vector has length " + std::to_string(p.size()) +
                                ", architecture needs " + std::to_string(arch_.parameter_count()));
  params_ = std::move(p);
}

Eigen::VectorXd VectorFieldModel::time_features(double t) const {
  const int half = arch_.time_dim / 2;
  Eigen::VectorXd f(arch_.time_dim);
  for (int k = 0; k < half; ++k) {
    // Frequencies spaced geometrically from 1 to 1000.
    const double w = half == 1 ? 1.0 : std::pow(1000.0, static_cast<double>(k) / (half - 1));
    f[k] = std::sin(w * t);
    f[half + k] = std::cos(w * t);
  }
  return f;
}

Eigen::MatrixXd VectorFieldModel::forward_batch(const Eigen::MatrixXd& inputs,
                                                const Eigen::VectorXd& times,
                                                ForwardCache* cache) const {
  if (params_.size() == 0) throw std::logic_error("model has no parameters");
  if (inputs.rows() != arch_.io_dim())
    throw std::invalid_argument("model input has " + std::to_string(inputs.rows()) +
                                " rows, expected " + std::to_string(arch_.io_dim()));
  if (times.size() != inputs.cols()) throw std::invalid_argument("one time per input column required");

  const Eigen::Index n = inputs.cols();
  Eigen::MatrixXd tf(arch_.time_dim, n);
  for (Eigen::Index j = 0; j < n; ++j) tf.col(j) = time_features(times[j]);

  const int hd = arch_.hidden;
  Eigen::MatrixXd h;
  std::vector<Eigen::MatrixXd> pres, hiddens;
  for (int l = 0; l < arch_.depth; ++l) {
    const auto& lay = layers_[static_cast<std::size_t>(l)];
    const ConstMatMap w(params_.data() + lay.w, hd, lay.in);
    const Eigen::Map<const Eigen::VectorXd> b(params_.data() + lay.b, hd);
    const ConstMatMap u(params_.data() + lay.u, hd, arch_.time_dim);
    Eigen::MatrixXd z = (l == 0 ? w * inputs : w * h) + u * tf;
    z.colwise() += b;
    Eigen::MatrixXd a = swish(z);
    h = l == 0 ? std::move(a) : Eigen::MatrixXd(h + a);
    if (cache) {
      pres.push_back(std::move(z));
      hiddens.push_back(h);
    }
  }
  const ConstMatMap wo(params_.data() + out_w_, arch_.io_dim(), hd);
  const Eigen::Map<const Eigen::VectorXd> bo(params_.data() + out_b_, arch_.io_dim());
  Eigen::MatrixXd out = wo * h;
  out.colwise() += bo;

  if (cache) {
    cache->input = inputs;
    cache->time_features = std::move(tf);
    cache->pre = std::move(pres);
    cache->hidden = std::move(hiddens);
  }
  return out;
}

RealVector VectorFieldModel::backward(const ForwardCache& cache, const Eigen::MatrixXd& grad_out) const {
  if (cache.hidden.size() != static_cast<std::size_t>(arch_.depth))
    throw std::invalid_argument("forward cache does not match the architecture");
  if (grad_out.rows() != arch_.io_dim() || grad_out.cols() != cache.input.cols())
    throw std::invalid_argument("output gradient shape does not match the cached batch");

  const int hd = arch_.hidden;
  RealVector grad = RealVector::Zero(params_.size());
  auto check = [&](Eigen::Index from, Eigen::Index to, int layer) {
    if (!grad.segment(from, to - from).allFinite())
      throw NumericalError("non-finite gradient in layer " + std::to_string(layer));
  };

  const ConstMatMap wo(params_.data() + out_w_, arch_.io_dim(), hd);
  MatMap(grad.data() + out_w_, arch_.io_dim(), hd).noalias() = grad_out * cache.hidden.back().transpose();
  grad.segment(out_b_, arch_.io_dim()) = grad_out.rowwise().sum();
  check(out_w_, grad.size(), arch_.depth);

  Eigen::MatrixXd dh = wo.transpose() * grad_out;
  for (int l = arch_.depth - 1; l >= 0; --l) {
    const auto& lay = layers_[static_cast<std::size_t>(l)];
    const Eigen::MatrixXd dz = dh.cwiseProduct(swish_grad(cache.pre[static_cast<std::size_t>(l)]));
    const Eigen::MatrixXd& below = l == 0 ? cache.input : cache.hidden[static_cast<std::size_t>(l - 1)];
    MatMap(grad.data() + lay.w, hd, lay.in).noalias() = dz * below.transpose();
    grad.segment(lay.b, hd) = dz.rowwise().sum();
    MatMap(grad.data() + lay.u, hd, arch_.time_dim).noalias() = dz * cache.time_features.transpose();
    check(lay.w, lay.u + block_size(hd, arch_.time_dim), l);
    if (l > 0) {
      const ConstMatMap w(params_.data() + lay.w, hd, lay.in);
      dh += w.transpose() * dz;  // residual path carries dh through unchanged
    }
  }
  return grad;
}

ComplexImage VectorFieldModel::forward(const ComplexImage& x, double t) const {
  if (x.height != arch_.height || x.width != arch_.width)
    throw std::invalid_argument("model input is " + std::to_string(x.height) + "x" +
                                std::to_string(x.width) + ", architecture expects " +
                                std::to_string(arch_.height) + "x" + std::to_string(arch_.width));
  Eigen::VectorXd times(1);
  times[0] = t;
  const Eigen::MatrixXd out = forward_batch(real_embed(x.data), times);
  return ComplexImage(x.height, x.width, real_lift(out.col(0)));
}

ComplexImage model_forward(const VectorFieldModel& m, const ComplexImage& x, double t) {
  return m.forward(x, t);
}

ImageField as_field(const VectorFieldModel& m) {
  return [&m](const ComplexImage& x, double t) { return m.forward(x, t); };
}

double jvp_step(const ComplexImage& x, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("jvp eps must be positive");
  const double inf = x.data.size() == 0 ? 0.0 : x.data.cwiseAbs().maxCoeff();
  return eps * (1.0 + inf);
}

ComplexImage field_jvp(const ImageField& v, const ComplexImage& x, double t,
                       const ComplexImage& probe, double eps) {
  require_same_shape(x, probe, "field_jvp");
  const double h = jvp_step(x, eps);
  const ComplexImage up(x.height, x.width, x.data + h * probe.data);
  const ComplexImage dn(x.height, x.width, x.data - h * probe.data);
  return ComplexImage(x.height, x.width, (v(up, t).data - v(dn, t).data) / (2.0 * h));
}

ComplexImage model_jvp(const VectorFieldModel& m, const ComplexImage& x, double t,
                       const ComplexImage& probe, double eps) {
  return field_jvp(as_field(m), x, t, probe, eps);
}

ComplexImage divergence_probe(const AcquisitionSystem& sys, Rng& rng, const CgConfig& cfg) {
  const ComplexImage z = sample_cn_image(sys.height(), sys.width(), 2.0, rng);
  return apply_projection(sys, z, cfg);
}

double hutchinson_divergence(const ImageField& v, const ComplexImage& x, double t,
                             const AcquisitionSystem& sys, int n_probes, Rng& rng,
                             const CgConfig& cfg, double eps) {
  if (n_probes < 1) throw std::invalid_argument("n_probes must be at least 1");
  double sum = 0.0;
  for (int i = 0; i < n_probes; ++i) {
    const ComplexImage b = divergence_probe(sys, rng, cfg);
    sum += real_dot(b.data, field_jvp(v, x, t, b, eps).data);
  }
  return sum / n_probes;
}

double hutchinson_divergence(const VectorFieldModel& m, const ComplexImage& x, double t,
                             const AcquisitionSystem& sys, int n_probes, Rng& rng,
                             const CgConfig& cfg, double eps) {
  return hutchinson_divergence(as_field(m), x, t, sys, n_probes, rng, cfg, eps);
}

namespace {

constexpr const char* kCheckpointMagic = "pcfm-checkpoint";
constexpr int kCheckpointVersion = 1;

void put_f64_le(std::ostream& os, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xffu);
  os.write(bytes, 8);
}

double get_f64_le(std::istream& is) {
  unsigned char bytes[8];
  is.read(reinterpret_cast<char*>(bytes), 8);
  if (!is) throw std::runtime_error("checkpoint parameter block is truncated");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

template <typename T>
T read_field(std::istream& is, const std::string& key) {
  std::string name;
  T value{};
  if (!(is >> name >> value) || name != key)
    throw std::runtime_error("checkpoint header: expected '" + key + "'");
  return value;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  const auto& a = ckpt.model.architecture();
  os << kCheckpointMagic << ' ' << kCheckpointVersion << '\n'
     << "height " << a.height << '\n'
     << "width " << a.width << '\n'
     << "hidden " << a.hidden << '\n'
     << "depth " << a.depth << '\n'
     << "time_dim " << a.time_dim << '\n'
     << "param_count " << ckpt.model.parameters().size() << '\n'
     << "step " << ckpt.step << '\n'
     << "ema " << (ckpt.ema ? 1 : 0) << '\n'
     << "end\n";
  for (double v : ckpt.model.parameters()) put_f64_le(os, v);
  if (!os) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != kCheckpointMagic || version != kCheckpointVersion)
    throw std::runtime_error(path.string() + " is not a version 1 checkpoint");
  Architecture a;
  a.height = read_field<int>(is, "height");
  a.width = read_field<int>(is, "width");
  a.hidden = read_field<int>(is, "hidden");
  a.depth = read_field<int>(is, "depth");
  a.time_dim = read_field<int>(is, "time_dim");
  const auto count = read_field<std::int64_t>(is, "param_count");
  Checkpoint ckpt;
  ckpt.step = read_field<std::int64_t>(is, "step");
  ckpt.ema = read_field<int>(is, "ema") != 0;
  std::string end;
  if (!(is >> end) || end != "end") throw std::runtime_error("checkpoint header: missing 'end'");
  is.get();  // the newline after "end"

  ckpt.model = VectorFieldModel(a);
  if (count != a.parameter_count())
    throw std::runtime_error("checkpoint parameter count " + std::to_string(count) +
                             " does not match its architecture");
  RealVector p(count);
  for (Eigen::Index i = 0; i < count; ++i) p[i] = get_f64_le(is);
  if (is.peek() != std::char_traits<char>::eof())
    throw std::runtime_error("checkpoint has trailing bytes");
  ckpt.model.set_parameters(std::move(p));
  return ckpt;
}

}  // namespace pcfm
