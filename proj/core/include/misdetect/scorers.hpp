#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "misdetect/embedstore.hpp"
#include "misdetect/protobank.hpp"

namespace misdetect {

struct ScoringConfig {
  double tau = 0.01;
  // Weight on the image-to-image term of kappa.
  double i2i_weight = 1.0;
  double energy_temperature = 1.0;
  double mcm_temperature = 1.0;

  // Throws ValidationError unless all temperatures are > 0 and the weight >= 0.
  void validate() const;
};

// softmax(logits / temperature), max-subtracted; accumulates in double.
std::vector<double> softmax(std::span<const double> logits, double temperature);

// Lowest index among maximal entries.
std::size_t argmax(std::span<const double> values);

struct ZeroShotResult {
  std::size_t predicted = 0;
  std::vector<double> probs;
  // Cosine (dot of unit vectors) to each class text embedding.
  std::vector<double> logits;
};

ZeroShotResult zeroshot_predict(std::span<const float> image, const TextClassEmbeddings& text,
                                double tau);

// Dot product of a unit auxiliary embedding with the predicted class prototype.
double score_i2i(std::span<const float> aux_embedding, const PrototypeBank& bank,
                 std::size_t predicted);

inline double kappa_score(double s_it, double s_ii, double weight) { return s_it + weight * s_ii; }

struct EnsembleResult {
  std::size_t predicted = 0;
  // Componentwise sum of the text-branch and prototype-branch softmaxes.
  std::vector<double> probs;
};

EnsembleResult ensemble_predict(std::span<const float> image, std::span<const float> aux_embedding,
                                const TextClassEmbeddings& text, const PrototypeBank& bank,
                                double tau);

double kappa_star_score(std::span<const double> ensemble_probs, double s_ii);

// Baselines. `probs` are classifier probabilities, `logits` raw cosines.
double score_msp(std::span<const double> probs);
double score_maxlogit(std::span<const double> logits);
// T * log sum_c exp((logits_c / tau) / T)
double score_energy(std::span<const double> logits, double tau, double energy_temperature);
// sum_c p_c log p_c, with 0 log 0 = 0.
double score_entropy(std::span<const double> probs);
double score_mcm(std::span<const double> logits, double mcm_temperature);
// sum_c p_c^2
double score_doctor(std::span<const double> probs);

struct BaselineScores {
  double msp = 0.0;
  double maxlogit = 0.0;
  double energy = 0.0;
  double entropy = 0.0;
  double mcm = 0.0;
  double doctor = 0.0;
};

struct ScoredPrediction {
  std::string sample_id;
  std::uint32_t label = 0;
  std::size_t predicted = 0;
  double s_it = 0.0;
  BaselineScores baselines;
  // Present only when an auxiliary space and prototype bank were supplied.
  std::optional<double> s_ii;
  std::optional<double> kappa;
  std::optional<std::size_t> ensemble_predicted;
  std::optional<double> kappa_star;
  bool correct = false;
  std::optional<bool> correct_ensemble;
};

struct ScoringInputs {
  const DatasetManifest& manifest;
  const EmbeddingMatrix& vlm_image;
  const TextClassEmbeddings& text;
  // Both null for baseline-only scoring.
  const EmbeddingMatrix* aux_image = nullptr;
  const PrototypeBank* bank = nullptr;
};

// Scores every test-split sample in manifest order. When `require_prototypes`
// is set, a missing aux space or bank is an error; otherwise the
// prototype-based fields are left empty.
std::vector<ScoredPrediction> score_batch(const ScoringInputs& inputs, const ScoringConfig& config,
                                          bool require_prototypes);

// Delimited (comma) predictions table. Lines starting with '#' carry
// key=value provenance and are skipped by the reader.
inline constexpr const char* kPredictionsHeader =
    "sample_id,label,pred,pred_ens,s_it,s_ii,kappa,kappa_star,msp,maxlogit,energy,entropy,mcm,"
    "doctor,correct,correct_ens";

using Provenance = std::vector<std::pair<std::string, std::string>>;

std::string predictions_to_csv(std::span<const ScoredPrediction> predictions,
                               const Provenance& provenance = {});

std::vector<ScoredPrediction> predictions_from_csv(const std::string& text,
                                                   Provenance* provenance = nullptr);

void save_predictions(std::span<const ScoredPrediction> predictions, const std::filesystem::path& path,
                      const Provenance& provenance = {});
std::vector<ScoredPrediction> load_predictions(const std::filesystem::path& path,
                                               Provenance* provenance = nullptr);

}  // namespace misdetect
