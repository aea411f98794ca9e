#include "pcfm/numerics.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <string>
#include <utility>

namespace pcfm {

ComplexImage::ComplexImage(int h, int w) : height(h), width(w) {
  if (h < 1 || w < 1) throw std::invalid_argument("image dimensions must be >= 1");
  data = ComplexVector::Zero(static_cast<Eigen::Index>(h) * w);
}

ComplexImage::ComplexImage(int h, int w, ComplexVector values)
    : height(h), width(w), data(std::move(values)) {
  if (h < 1 || w < 1) throw std::invalid_argument("image dimensions must be >= 1");
  if (data.size() != static_cast<Eigen::Index>(h) * w)
    throw std::invalid_argument("image data length does not match height*width");
}

bool ComplexImage::all_finite() const {
  for (Eigen::Index i = 0; i < data.size(); ++i)
    if (!std::isfinite(data[i].real()) || !std::isfinite(data[i].imag())) return false;
  return true;
}

void require_same_shape(const ComplexImage& a, const ComplexImage& b, std::string_view what) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(what) + ": image shape mismatch (" +
                                std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                                std::to_string(b.height) + "x" + std::to_string(b.width) + ")");
}

// --- Rng ------------------------------------------------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t state = seed;
  for (auto& word : s_) word = splitmix64(state);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::uniform_index(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: empty range");
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

Rng Rng::substream(std::string_view name) const {
  std::uint64_t state = seed_ ^ fnv1a(name);
  return Rng(splitmix64(state));
}

Rng Rng::split() { return Rng(next_u64()); }

// --- DFT ------------------------------------------------------------------

const Eigen::MatrixXcd& dft_matrix(int n, DftDirection direction) {
  if (n < 1) throw std::invalid_argument("dft size must be >= 1");
  static std::mutex mutex;
  static std::map<std::pair<int, int>, std::unique_ptr<Eigen::MatrixXcd>> cache;
  const std::lock_guard lock(mutex);
  auto& slot = cache[{n, direction == DftDirection::forward ? 0 : 1}];
  if (!slot) {
    const double sign = direction == DftDirection::forward ? -1.0 : 1.0;
    const double scale = 1.0 / std::sqrt(static_cast<double>(n));
    auto m = std::make_unique<Eigen::MatrixXcd>(n, n);
    for (int j = 0; j < n; ++j) {
      for (int k = 0; k < n; ++k) {
        // Reduce jk mod n first so large products keep full phase accuracy.
        const long long jk = (static_cast<long long>(j) * k) % n;
        const double phase = sign * 2.0 * std::numbers::pi * static_cast<double>(jk) / n;
        (*m)(j, k) = std::polar(scale, phase);
      }
    }
    slot = std::move(m);
  }
  return *slot;
}

ComplexImage dft2(const ComplexImage& img, DftDirection direction) {
  using RowMat = Eigen::Matrix<cd, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto& fh = dft_matrix(img.height, direction);
  const auto& fw = dft_matrix(img.width, direction);
  Eigen::Map<const RowMat> in(img.data.data(), img.height, img.width);
  ComplexImage out(img.height, img.width);
  Eigen::Map<RowMat> result(out.data.data(), img.height, img.width);
  // F is symmetric, so the width transform is a right multiplication by F_w.
  result.noalias() = fh * in * fw;
  return out;
}

// --- sampling and embeddings ------------------------------------------------

ComplexVector sample_cn(Eigen::Index n, double variance, Rng& rng) {
  if (!(variance >= 0.0)) throw std::invalid_argument("sample_cn: variance must be >= 0");
  const double scale = std::sqrt(variance / 2.0);
  ComplexVector v(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double re = rng.normal();
    const double im = rng.normal();
    v[i] = cd(scale * re, scale * im);
  }
  return v;
}

ComplexImage sample_cn_image(int height, int width, double variance, Rng& rng) {
  return ComplexImage(height, width,
                      sample_cn(static_cast<Eigen::Index>(height) * width, variance, rng));
}

RealVector real_embed(const ComplexVector& v) {
  RealVector r(2 * v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    r[2 * i] = v[i].real();
    r[2 * i + 1] = v[i].imag();
  }
  return r;
}

ComplexVector real_lift(const RealVector& r) {
  if (r.size() % 2 != 0) throw std::invalid_argument("real_lift: odd-length input");
  ComplexVector v(r.size() / 2);
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = cd(r[2 * i], r[2 * i + 1]);
  return v;
}

double real_dot(const ComplexVector& a, const ComplexVector& b) {
  return a.dot(b).real();  // Eigen's dot conjugates the first argument.
}

}  // namespace pcfm
