#include "pcfm/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace pcfm {

namespace fs = std::filesystem;

std::int64_t TensorFile::element_count() const {
  std::int64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

void TensorFile::validate() const {
  if (dims.empty()) throw std::invalid_argument("tensor rank must be at least 1");
  for (auto d : dims)
    if (d < 1) throw std::invalid_argument("tensor dimensions must be positive");
  if (element_count() != static_cast<std::int64_t>(values.size()))
    throw std::invalid_argument("tensor payload does not match its dimensions");
}

namespace {

fs::path with_suffix(const fs::path& stem, const char* ext) {
  fs::path p = stem;
  p += ext;
  return p;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(p[k]) << (8 * k);
  return v;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end)
    throw std::invalid_argument("bad value for " + key + ": '" + text + "'");
  return v;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void write_tensor(const fs::path& stem, const TensorFile& t) {
  t.validate();
  {
    std::ofstream hdr(with_suffix(stem, ".hdr"));
    if (!hdr) throw std::runtime_error("cannot write " + with_suffix(stem, ".hdr").string());
    hdr << t.dims.size() << '\n';
    for (std::size_t i = 0; i < t.dims.size(); ++i) hdr << (i ? " " : "") << t.dims[i];
    hdr << '\n';
  }
  std::string bytes;
  bytes.reserve(t.values.size() * 8);
  for (const auto& z : t.values) {
    put_u32(bytes, std::bit_cast<std::uint32_t>(z.real()));
    put_u32(bytes, std::bit_cast<std::uint32_t>(z.imag()));
  }
  std::ofstream bin(with_suffix(stem, ".bin"), std::ios::binary);
  if (!bin) throw std::runtime_error("cannot write " + with_suffix(stem, ".bin").string());
  bin.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

TensorFile read_tensor(const fs::path& stem) {
  const fs::path hp = with_suffix(stem, ".hdr"), bp = with_suffix(stem, ".bin");
  std::ifstream hdr(hp);
  if (!hdr) throw std::invalid_argument("cannot open " + hp.string());
  TensorFile t;
  std::int64_t rank = 0;
  if (!(hdr >> rank) || rank < 1 || rank > 8) throw std::invalid_argument(hp.string() + ": bad rank");
  t.dims.resize(static_cast<std::size_t>(rank));
  for (auto& d : t.dims)
    if (!(hdr >> d) || d < 1) throw std::invalid_argument(hp.string() + ": bad dimensions");
  std::string extra;
  if (hdr >> extra) throw std::invalid_argument(hp.string() + ": trailing header content");

  std::ifstream bin(bp, std::ios::binary);
  if (!bin) throw std::invalid_argument("cannot open " + bp.string());
  const std::string bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  const std::int64_t n = t.element_count();
  if (static_cast<std::int64_t>(bytes.size()) != 8 * n)
    throw std::invalid_argument(bp.string() + ": expected " + std::to_string(8 * n) + " bytes, found " +
                                std::to_string(bytes.size()));
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  t.values.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i)
    t.values[i] = {std::bit_cast<float>(get_u32(p + 8 * i)), std::bit_cast<float>(get_u32(p + 8 * i + 4))};
  return t;
}

TensorFile image_tensor(const ComplexImage& img) {
  TensorFile t{{img.height, img.width}, {}};
  t.values.reserve(img.data.size());
  for (Eigen::Index i = 0; i < img.data.size(); ++i) t.values.emplace_back(img.data[i]);
  return t;
}

ComplexImage tensor_image(const TensorFile& t) {
  t.validate();
  if (t.dims.size() != 2) throw std::invalid_argument("image tensor must have rank 2");
  ComplexImage img(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]));
  for (std::size_t i = 0; i < t.values.size(); ++i) img.data[i] = cd(t.values[i]);
  return img;
}

TensorFile vector_tensor(const ComplexVector& v) {
  TensorFile t{{v.size()}, {}};
  for (Eigen::Index i = 0; i < v.size(); ++i) t.values.emplace_back(v[i]);
  return t;
}

ComplexVector tensor_vector(const TensorFile& t) {
  t.validate();
  if (t.dims.size() != 1) throw std::invalid_argument("vector tensor must have rank 1");
  ComplexVector v(static_cast<Eigen::Index>(t.values.size()));
  for (std::size_t i = 0; i < t.values.size(); ++i) v[i] = cd(t.values[i]);
  return v;
}

TensorFile sensitivity_tensor(const CoilSensitivities& s) {
  s.validate();
  TensorFile t{{s.coils(), s.height(), s.width()}, {}};
  for (const auto& m : s.maps)
    for (Eigen::Index i = 0; i < m.data.size(); ++i) t.values.emplace_back(m.data[i]);
  return t;
}

CoilSensitivities tensor_sensitivities(const TensorFile& t) {
  t.validate();
  if (t.dims.size() != 3) throw std::invalid_argument("sensitivity tensor must have rank 3");
  CoilSensitivities s;
  const int h = static_cast<int>(t.dims[1]), w = static_cast<int>(t.dims[2]);
  std::size_t k = 0;
  for (std::int64_t c = 0; c < t.dims[0]; ++c) {
    ComplexImage m(h, w);
    for (Eigen::Index i = 0; i < m.data.size(); ++i) m.data[i] = cd(t.values[k++]);
    s.maps.push_back(std::move(m));
  }
  s.validate();
  return s;
}

TensorFile mask_tensor(const SamplingMask& m) {
  m.validate();
  TensorFile t{{m.full_lines()}, std::vector<std::complex<float>>(m.kept.size())};
  for (std::size_t i = 0; i < m.kept.size(); ++i) t.values[i].real(m.kept[i] ? 1.0f : 0.0f);
  for (int line : m.acs_lines()) t.values[line].imag(1.0f);
  return t;
}

SamplingMask tensor_mask(const TensorFile& t) {
  t.validate();
  if (t.dims.size() != 1) throw std::invalid_argument("mask tensor must have rank 1");
  std::vector<std::uint8_t> kept;
  std::vector<int> acs;
  for (std::size_t i = 0; i < t.values.size(); ++i) {
    const auto z = t.values[i];
    if ((z.real() != 0.0f && z.real() != 1.0f) || (z.imag() != 0.0f && z.imag() != 1.0f))
      throw std::invalid_argument("mask entries must be 0 or 1");
    kept.push_back(z.real() == 1.0f);
    if (z.imag() == 1.0f) acs.push_back(static_cast<int>(i));
  }
  if (acs != center_lines(static_cast<int>(kept.size()), static_cast<int>(acs.size())))
    throw std::invalid_argument("mask ACS flags are not the central lines");
  SamplingMask m(std::move(kept), static_cast<int>(acs.size()));
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------

namespace {

struct KeySpec {
  const char* key;
  const char* doc;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
KeySpec spec(const char* key, const char* doc, T RunConfig::*member) {
  return KeySpec{key, doc,
                 [key, member](RunConfig& c, const std::string& v) { c.*member = parse_number<T>(key, v); },
                 [member](const RunConfig& c) {
                   std::ostringstream os;
                   if constexpr (std::is_floating_point_v<T>)
                     os << std::setprecision(std::numeric_limits<T>::max_digits10);
                   os << c.*member;
                   return os.str();
                 }};
}

const std::vector<KeySpec>& key_table() {
  static const std::vector<KeySpec> table = {
      spec("grid", "image side length in pixels", &RunConfig::grid),
      spec("coils", "number of simulated receive coils", &RunConfig::coils),
      spec("accel", "acceleration factor alpha", &RunConfig::accel),
      spec("acs", "fully sampled central phase-encode lines", &RunConfig::acs),
      spec("sigma0", "k-space noise standard deviation", &RunConfig::sigma0),
      spec("intensity", "peak magnitude of each simulated image", &RunConfig::intensity),
      spec("n_cases", "number of simulated cases", &RunConfig::n_cases),
      spec("hidden", "hidden width of the residual MLP", &RunConfig::hidden),
      spec("depth", "number of residual layers", &RunConfig::depth),
      spec("time_dim", "sinusoidal time feature dimension", &RunConfig::time_dim),
      spec("steps", "training steps", &RunConfig::steps),
      spec("batch", "training batch size", &RunConfig::batch),
      spec("lr", "AdamW learning rate", &RunConfig::lr),
      spec("weight_decay", "AdamW decoupled weight decay", &RunConfig::weight_decay),
      spec("ema_rate", "EMA decay per update", &RunConfig::ema_rate),
      spec("ema_every", "steps between EMA updates", &RunConfig::ema_every),
      spec("k_train", "CG iterations during training", &RunConfig::k_train),
      spec("time_loc", "logit-normal location of the training time", &RunConfig::time_loc),
      spec("time_scale", "logit-normal scale of the training time", &RunConfig::time_scale),
      spec("eps_t", "field times are clamped to [eps_t, 1 - eps_t]", &RunConfig::eps_t),
      spec("eps_jvp", "relative finite-difference step for the divergence", &RunConfig::eps_jvp),
      spec("n_probes", "Hutchinson probes per training sample", &RunConfig::n_probes),
      spec("T", "integration steps per direction at inference", &RunConfig::T),
      spec("k_infer", "CG iterations during inference", &RunConfig::k_infer),
      spec("seed", "root seed for simulation", &RunConfig::seed),
      spec("train_seed", "root seed for initialization and training draws", &RunConfig::train_seed),
      spec("recon_seed", "root seed for posterior sampling at inference", &RunConfig::recon_seed),
  };
  return table;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& k : key_table())
    if (key == k.key) {
      k.set(*this, trim(value));
      return;
    }
  throw std::invalid_argument("unknown config key '" + key + "'");
}

void RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = trim(line);
    if (s.empty() || s.front() == '#') continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    try {
      set(trim(s.substr(0, eq)), s.substr(eq + 1));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  validate();
}

void RunConfig::save(const fs::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& k : key_table()) out << "# " << k.doc << '\n' << k.key << '=' << k.get(*this) << '\n';
}

std::map<std::string, std::string> RunConfig::values() const {
  std::map<std::string, std::string> out;
  for (const auto& k : key_table()) out[k.key] = k.get(*this);
  return out;
}

const std::vector<std::pair<std::string, std::string>>& RunConfig::documented_keys() {
  static const auto keys = [] {
    std::vector<std::pair<std::string, std::string>> v;
    for (const auto& k : key_table()) v.emplace_back(k.key, k.doc);
    return v;
  }();
  return keys;
}

void RunConfig::validate() const {
  if (grid < 8 || grid > 64) throw std::invalid_argument("grid must lie in [8, 64]");
  if (coils < 1 || coils > 8) throw std::invalid_argument("coils must lie in [1, 8]");
  if (!(accel >= 1.0)) throw std::invalid_argument("accel must be at least 1");
  if (acs < 0) throw std::invalid_argument("acs must be non-negative");
  if (acs > std::lround(grid / accel)) throw std::invalid_argument("acs exceeds the line budget round(grid / accel)");
  if (!(sigma0 >= 0.0)) throw std::invalid_argument("sigma0 must be non-negative");
  if (!(intensity > 0.0)) throw std::invalid_argument("intensity must be positive");
  if (n_cases < 1) throw std::invalid_argument("n_cases must be at least 1");
  architecture().validate();
  train_config().validate();
  recon_config().validate();
}

Architecture RunConfig::architecture() const {
  Architecture a;
  a.height = grid;
  a.width = grid;
  a.hidden = hidden;
  a.depth = depth;
  a.time_dim = time_dim;
  return a;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig c;
  c.steps = steps;
  c.learning_rate = lr;
  c.weight_decay = weight_decay;
  c.ema_rate = ema_rate;
  c.ema_every = ema_every;
  c.batch = batch;
  c.cg_iters_train = k_train;
  c.sigma0 = sigma0;
  c.time_loc = time_loc;
  c.time_scale = time_scale;
  c.time_eps = eps_t;
  c.jvp_eps = eps_jvp;
  c.n_probes = n_probes;
  c.seed = train_seed;
  return c;
}

ReconConfig RunConfig::recon_config() const {
  ReconConfig c;
  c.steps = T;
  c.cg_iters_infer = k_infer;
  c.time_eps = eps_t;
  c.seed = recon_seed;
  return c;
}

}  // namespace pcfm
