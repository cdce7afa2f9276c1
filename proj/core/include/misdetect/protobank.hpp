#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "misdetect/embedstore.hpp"

namespace misdetect {

struct FinetuneConfig {
  std::size_t epochs = 10;
  double learning_rate = 0.001;
  double temperature = 0.01;
  std::uint64_t seed = 0;
};

// Per-class visual prototypes in one auxiliary encoder space.
struct PrototypeBank {
  std::string encoder_id;
  // dataset_id of the manifest the prototypes were drawn from. May differ
  // from the evaluation manifest under the distribution-shift protocol.
  std::string source_dataset_id;
  std::size_t shots = 0;
  std::uint64_t seed = 0;
  // C x dims, unit rows.
  EmbeddingMatrix prototypes;
  // provenance[c] lists the sample ids averaged into prototype c.
  std::vector<std::vector<std::string>> provenance;
  bool finetuned = false;
  std::optional<FinetuneConfig> finetune_config;
  // Non-fatal conditions met while building, e.g. a class with fewer than
  // `shots` train samples.
  std::vector<std::string> warnings;

  std::size_t class_count() const { return prototypes.rows(); }
  std::size_t dims() const { return prototypes.dims(); }
};

struct FinetuneTrace {
  // Entry k is measured on the prototypes entering epoch k+1.
  std::vector<double> loss;
  std::vector<double> accuracy;
};

// Draws up to `shots` train-split samples per class (seeded partial
// Fisher-Yates over the class's train indices in manifest order, classes
// visited 0..C-1 on one stream) and sets each prototype to the normalized
// mean of the drawn rows. `aux` must be unit-normalized and row-aligned
// with the manifest samples.
PrototypeBank build_prototypes(const DatasetManifest& manifest, const EmbeddingMatrix& aux,
                               std::size_t shots, std::uint64_t seed,
                               std::string encoder_id = kAuxImage);

struct LossAndGradient {
  double loss = 0.0;
  // C x dims, row-major, d loss / d P_c.
  std::vector<double> gradient;
};

// Batch of fine-tuning samples: rows of the VLM image and auxiliary image
// spaces plus the true class of each.
struct TrainingBatch {
  EmbeddingMatrix vlm_image;
  EmbeddingMatrix aux_image;
  std::vector<std::uint32_t> labels;
};

// Mean over the batch of -log(p_ens(y|x) / 2), where p_ens is the sum of the
// image-to-text and image-to-prototype softmaxes at temperature tau. Only
// the prototype branch depends on P, so the text branch enters the gradient
// as a constant. Prototypes are the free variables here (row-major C x dims,
// 64-bit); no normalization is applied inside the loss.
LossAndGradient ensemble_ce_loss_and_grad(std::span<const double> prototypes, std::size_t dims,
                                          const TrainingBatch& batch,
                                          const TextClassEmbeddings& text, double tau);

LossAndGradient ensemble_ce_loss_and_grad(const PrototypeBank& bank, const TrainingBatch& batch,
                                          const TextClassEmbeddings& text, double tau);

// Collects the bank's provenance samples from the manifest-aligned spaces.
TrainingBatch provenance_batch(const PrototypeBank& bank, const DatasetManifest& manifest,
                               const EmbeddingMatrix& vlm_image, const EmbeddingMatrix& aux);

struct FinetuneResult {
  PrototypeBank bank;
  FinetuneTrace trace;
};

// Full-batch gradient descent on the provenance samples:
//   P_c <- normalize(P_c - lr * grad_c)
// for `epochs` epochs. A class whose gradient row is exactly zero keeps its
// prototype untouched; lr == 0 returns the input prototypes bit-for-bit.
FinetuneResult finetune_prototypes(const PrototypeBank& bank, const TrainingBatch& batch,
                                   const TextClassEmbeddings& text, const FinetuneConfig& config);

// Fraction of the batch whose ensemble argmax matches its label.
double ensemble_accuracy(const PrototypeBank& bank, const TrainingBatch& batch,
                         const TextClassEmbeddings& text, double tau);

// Persists the prototypes as <stem>.tvem next to a JSON sidecar at `sidecar`.
void save_bank(const PrototypeBank& bank, const std::filesystem::path& sidecar);
PrototypeBank load_bank(const std::filesystem::path& sidecar);

}  // namespace misdetect
