#pragma once

#include "pcfm/linops.hpp"
#include "pcfm/model.hpp"
#include "pcfm/recon.hpp"
#include "pcfm/train.hpp"

#include <complex>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace pcfm {

/// Complex float32 tensor, row-major. On disk: `<stem>.hdr` holds the rank on
/// the first line and the dimensions on the second; `<stem>.bin` holds
/// little-endian interleaved (re, im) float32 pairs.
struct TensorFile {
  std::vector<std::int64_t> dims;
  std::vector<std::complex<float>> values;

  [[nodiscard]] std::int64_t element_count() const;
  void validate() const;
};

void write_tensor(const std::filesystem::path& stem, const TensorFile& t);
TensorFile read_tensor(const std::filesystem::path& stem);

TensorFile image_tensor(const ComplexImage& img);
ComplexImage tensor_image(const TensorFile& t);
/// Rank 1.
TensorFile vector_tensor(const ComplexVector& v);
ComplexVector tensor_vector(const TensorFile& t);
/// Rank 3: coils x height x width.
TensorFile sensitivity_tensor(const CoilSensitivities& s);
CoilSensitivities tensor_sensitivities(const TensorFile& t);
/// Rank 1 over phase-encode lines: real part flags kept lines, imaginary part flags ACS lines.
TensorFile mask_tensor(const SamplingMask& m);
SamplingMask tensor_mask(const TensorFile& t);

/// Every tunable default in one flat key=value file. Lines starting with '#'
/// and blank lines are ignored; unknown keys are an error.
struct RunConfig {
  // data
  int grid = 16;
  int coils = 4;
  double accel = 4.0;
  int acs = 2;  // grid / 8
  double sigma0 = 1e-2;
  double intensity = 100.0;  // peak image magnitude
  int n_cases = 256;
  // model
  int hidden = 256;
  int depth = 3;
  int time_dim = 32;
  // training
  int steps = 20000;
  int batch = 16;
  double lr = 1e-4;
  double weight_decay = 0.1;
  double ema_rate = 0.99;
  int ema_every = 100;
  int k_train = 10;
  double time_loc = 0.0;
  double time_scale = 1.0;
  double eps_t = kDefaultTimeEps;
  double eps_jvp = kDefaultJvpEps;
  int n_probes = 1;
  // inference
  int T = 10;
  int k_infer = 30;
  // seeds
  std::uint64_t seed = 0;
  std::uint64_t train_seed = 0;
  std::uint64_t recon_seed = 0;

  /// Applies one key=value pair. Throws std::invalid_argument on an unknown key or bad value.
  void set(const std::string& key, const std::string& value);
  void load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  void validate() const;

  [[nodiscard]] Architecture architecture() const;
  [[nodiscard]] TrainConfig train_config() const;
  [[nodiscard]] ReconConfig recon_config() const;

  /// key -> one-line description, in file order.
  static const std::vector<std::pair<std::string, std::string>>& documented_keys();
  [[nodiscard]] std::map<std::string, std::string> values() const;
};

}  // namespace pcfm
