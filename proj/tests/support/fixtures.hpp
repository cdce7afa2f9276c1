#pragma once

#include <cmath>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "misdetect/embedstore.hpp"
#include "misdetect/protobank.hpp"
#include "oracles.hpp"

namespace misdetect::testing {

inline std::vector<float> to_float(const std::vector<std::vector<double>>& rows) {
  std::vector<float> out;
  for (const auto& r : rows)
    for (double v : r) out.push_back(static_cast<float>(v));
  return out;
}

// Rounds each row through float so the oracle and the library see identical
// values.
inline std::vector<double> float_unit(std::mt19937_64& gen, std::size_t dims) {
  auto v = random_unit(gen, dims);
  for (double& x : v) x = static_cast<double>(static_cast<float>(x));
  return v;
}

inline LossInstance random_loss_instance(std::mt19937_64& gen, double tau_lo, double tau_hi) {
  std::uniform_int_distribution<std::size_t> classes(2, 5);
  std::uniform_int_distribution<std::size_t> dims(2, 8);
  std::uniform_int_distribution<std::size_t> count(1, 6);
  std::uniform_real_distribution<double> tau(tau_lo, tau_hi);
  LossInstance in;
  in.classes = classes(gen);
  in.dims = dims(gen);
  in.tau = tau(gen);
  for (std::size_t c = 0; c < in.classes; ++c) {
    in.text.push_back(float_unit(gen, in.dims));
    in.prototypes.push_back(random_unit(gen, in.dims));
  }
  const std::size_t n = count(gen);
  std::uniform_int_distribution<std::size_t> label(0, in.classes - 1);
  for (std::size_t i = 0; i < n; ++i) {
    in.vlm.push_back(float_unit(gen, in.dims));
    in.aux.push_back(float_unit(gen, in.dims));
    in.labels.push_back(label(gen));
  }
  return in;
}

inline TrainingBatch batch_of(const LossInstance& in) {
  std::vector<std::uint32_t> labels(in.labels.begin(), in.labels.end());
  return TrainingBatch{
      .vlm_image = EmbeddingMatrix(in.vlm.size(), in.dims, to_float(in.vlm), NormState::kUnit),
      .aux_image = EmbeddingMatrix(in.aux.size(), in.dims, to_float(in.aux), NormState::kUnit),
      .labels = std::move(labels),
  };
}

inline TextClassEmbeddings text_of(const LossInstance& in) {
  return TextClassEmbeddings(EmbeddingMatrix(in.classes, in.dims, to_float(in.text), NormState::kUnit));
}

inline std::vector<double> flat_prototypes(const LossInstance& in) {
  std::vector<double> out;
  for (const auto& r : in.prototypes) out.insert(out.end(), r.begin(), r.end());
  return out;
}

// ||a - b|| / max(||a||, ||b||, floor)
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b,
                             double floor = 1e-6) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("misdetect_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace misdetect::testing
