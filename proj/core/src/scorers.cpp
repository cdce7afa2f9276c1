#include "misdetect/scorers.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "misdetect/errors.hpp"

namespace misdetect {

void ScoringConfig::validate() const {
  if (!(tau > 0.0)) throw ValidationError("tau must be > 0");
  if (!(energy_temperature > 0.0)) throw ValidationError("energy temperature must be > 0");
  if (!(mcm_temperature > 0.0)) throw ValidationError("MCM temperature must be > 0");
  if (!(i2i_weight >= 0.0)) throw ValidationError("image-to-image weight must be >= 0");
}

std::vector<double> softmax(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0)) {
    throw ValidationError("softmax temperature must be > 0");
  }
  if (logits.empty()) {
    throw ValidationError("softmax of an empty vector");
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp((logits[i] - top) / temperature);
    total += out[i];
  }
  for (double& p : out) {
    p /= total;
  }
  return out;
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

ZeroShotResult zeroshot_predict(std::span<const float> image, const TextClassEmbeddings& text,
                                double tau) {
  if (image.size() != text.dims()) {
    std::ostringstream msg;
    msg << "image embedding has " << image.size() << " dims, text embeddings have " << text.dims();
    throw ValidationError(msg.str());
  }
  ZeroShotResult r;
  r.logits.reserve(text.class_count());
  for (std::size_t c = 0; c < text.class_count(); ++c) {
    r.logits.push_back(dot(image, text.matrix.row(c)));
  }
  r.probs = softmax(r.logits, tau);
  r.predicted = argmax(r.probs);
  return r;
}

double score_i2i(std::span<const float> aux_embedding, const PrototypeBank& bank,
                 std::size_t predicted) {
  if (predicted >= bank.class_count()) {
    throw ValidationError("predicted class " + std::to_string(predicted) +
                          " out of range for a bank of " + std::to_string(bank.class_count()));
  }
  return dot(aux_embedding, bank.prototypes.row(predicted));
}

EnsembleResult ensemble_predict(std::span<const float> image, std::span<const float> aux_embedding,
                                const TextClassEmbeddings& text, const PrototypeBank& bank,
                                double tau) {
  if (bank.class_count() != text.class_count()) {
    throw ValidationError("prototype bank and text embeddings disagree on the class count");
  }
  if (aux_embedding.size() != bank.dims()) {
    std::ostringstream msg;
    msg << "aux embedding has " << aux_embedding.size() << " dims, prototypes have " << bank.dims();
    throw ValidationError(msg.str());
  }
  EnsembleResult r;
  r.probs = zeroshot_predict(image, text, tau).probs;
  std::vector<double> sims(bank.class_count());
  for (std::size_t c = 0; c < sims.size(); ++c) {
    sims[c] = dot(aux_embedding, bank.prototypes.row(c));
  }
  const auto image_probs = softmax(sims, tau);
  for (std::size_t c = 0; c < sims.size(); ++c) {
    r.probs[c] += image_probs[c];
  }
  r.predicted = argmax(r.probs);
  return r;
}

double kappa_star_score(std::span<const double> ensemble_probs, double s_ii) {
  return score_msp(ensemble_probs) + s_ii;
}

double score_msp(std::span<const double> probs) {
  if (probs.empty()) throw ValidationError("score of an empty vector");
  return *std::max_element(probs.begin(), probs.end());
}

double score_maxlogit(std::span<const double> logits) { return score_msp(logits); }

double score_energy(std::span<const double> logits, double tau, double energy_temperature) {
  if (!(tau > 0.0) || !(energy_temperature > 0.0)) {
    throw ValidationError("energy temperatures must be > 0");
  }
  if (logits.empty()) throw ValidationError("score of an empty vector");
  const double scale = tau * energy_temperature;
  const double top = *std::max_element(logits.begin(), logits.end()) / scale;
  double total = 0.0;
  for (double l : logits) {
    total += std::exp(l / scale - top);
  }
  return energy_temperature * (top + std::log(total));
}

double score_entropy(std::span<const double> probs) {
  double s = 0.0;
  for (double p : probs) {
    if (p > 0.0) s += p * std::log(p);
  }
  return s;
}

double score_mcm(std::span<const double> logits, double mcm_temperature) {
  return score_msp(softmax(logits, mcm_temperature));
}

double score_doctor(std::span<const double> probs) {
  double s = 0.0;
  for (double p : probs) s += p * p;
  return s;
}

std::vector<ScoredPrediction> score_batch(const ScoringInputs& in, const ScoringConfig& config,
                                          bool require_prototypes) {
  config.validate();
  const auto& m = in.manifest;
  const bool have_prototypes = in.aux_image != nullptr && in.bank != nullptr;
  if (require_prototypes && !have_prototypes) {
    throw ValidationError(in.aux_image == nullptr
                              ? "image-to-image scoring requires an auxiliary image space"
                              : "image-to-image scoring requires a prototype bank");
  }
  if (in.vlm_image.rows() != m.samples.size()) {
    throw ValidationError("vlm_image rows do not match the manifest sample count");
  }
  if (in.text.class_count() != m.class_count()) {
    throw ValidationError("text rows ≠ class count");
  }
  if (have_prototypes) {
    if (in.aux_image->rows() != m.samples.size()) {
      throw ValidationError("aux_image rows do not match the manifest sample count");
    }
    if (in.aux_image->dims() != in.bank->dims()) {
      std::ostringstream msg;
      msg << "prototype bank has " << in.bank->dims() << " dims but aux embeddings have "
          << in.aux_image->dims();
      throw ValidationError(msg.str());
    }
    if (in.bank->class_count() != m.class_count()) {
      throw ValidationError("prototype bank class count differs from the manifest");
    }
  }

  std::vector<ScoredPrediction> out;
  for (std::size_t i : m.indices_of(Split::kTest)) {
    const auto& sample = m.samples[i];
    const auto zs = zeroshot_predict(in.vlm_image.row(i), in.text, config.tau);

    ScoredPrediction p;
    p.sample_id = sample.id;
    p.label = sample.label;
    p.predicted = zs.predicted;
    p.baselines.msp = score_msp(zs.probs);
    p.baselines.maxlogit = score_maxlogit(zs.logits);
    p.baselines.energy = score_energy(zs.logits, config.tau, config.energy_temperature);
    p.baselines.entropy = score_entropy(zs.probs);
    p.baselines.mcm = score_mcm(zs.logits, config.mcm_temperature);
    p.baselines.doctor = score_doctor(zs.probs);
    p.s_it = p.baselines.msp;
    p.correct = zs.predicted == sample.label;

    if (have_prototypes) {
      const auto aux = in.aux_image->row(i);
      p.s_ii = score_i2i(aux, *in.bank, zs.predicted);
      p.kappa = kappa_score(p.s_it, *p.s_ii, config.i2i_weight);
      const auto ens = ensemble_predict(in.vlm_image.row(i), aux, in.text, *in.bank, config.tau);
      p.ensemble_predicted = ens.predicted;
      // kappa* pairs the ensemble confidence with the similarity to the
      // ensemble's own predicted prototype.
      p.kappa_star = kappa_star_score(ens.probs, score_i2i(aux, *in.bank, ens.predicted));
      p.correct_ensemble = ens.predicted == sample.label;
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace misdetect
