#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hybridflow/tensor.hpp"

namespace hybridflow::data {

using grad::Tensor;

struct Dataset {
  std::string name;
  Tensor x;  // [N, d_in]
  Tensor y;  // [N, d_out]
  std::vector<std::string> feature_names;
  std::vector<std::string> target_names;
  std::string provenance;
  std::size_t dropped_rows = 0;
  // Synthetic data only: true per-row noise variance.
  std::vector<double> true_noise_variance;
  // Set by normalize_apply; empty for raw data.
  std::string normalizer_fingerprint;

  std::size_t rows() const { return y.rows(); }
  Dataset subset(std::span<const std::size_t> rows) const;
};

class LoadError : public std::runtime_error {
 public:
  enum class Kind { unreadable, no_usable_rows, unknown_column, bad_manifest };
  LoadError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct CsvOptions {
  // '\0' splits on runs of whitespace.
  char delimiter = ',';
  bool header = true;
};

// Target columns are header names, or 0-based indices when there is no header.
Dataset load_csv(const std::filesystem::path& path, const std::vector<std::string>& target_columns,
                 const CsvOptions& options = {});

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

Split split_indices(std::size_t n, double test_fraction, std::uint64_t seed);
std::pair<Dataset, Dataset> split(const Dataset& ds, double test_fraction, std::uint64_t seed);

// Per-column statistics of a training split. Population std; constant
// feature columns are dropped, constant target columns keep std 1.
struct Normalizer {
  std::vector<std::size_t> kept_features;
  std::vector<double> x_mean, x_std;  // over kept features
  std::vector<double> y_mean, y_std;
  std::vector<std::string> warnings;

  std::string fingerprint() const;
};

Normalizer normalize_fit(const Dataset& train);
Dataset normalize_apply(const Normalizer& norm, const Dataset& ds);
Tensor denormalize_targets(const Normalizer& norm, const Tensor& values);
Tensor denormalize_variances(const Normalizer& norm, const Tensor& variances);

// y = sin(freq x) + eps, eps ~ N(0, (sigma0 + sigma2 x^2)^2), x ~ U[x_lo, x_hi].
struct SynthSpec {
  double x_lo = -1.0;
  double x_hi = 1.0;
  double freq = 2.0;
  double sigma0 = 0.1;
  double sigma2 = 0.4;

  double noise_sd(double x) const { return sigma0 + sigma2 * x * x; }
};

Dataset synth_heteroscedastic(std::size_t n, std::uint64_t seed, const SynthSpec& spec = {});

struct ManifestEntry {
  std::string dataset;
  std::filesystem::path path;  // resolved against the manifest directory
  std::vector<std::string> target_columns;
  CsvOptions csv;
};

std::map<std::string, ManifestEntry> load_manifest(const std::filesystem::path& path);
Dataset load_dataset(const ManifestEntry& entry);

}  // namespace hybridflow::data
