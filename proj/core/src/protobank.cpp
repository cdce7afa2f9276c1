#include "misdetect/protobank.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "misdetect/errors.hpp"
#include "misdetect/rng.hpp"
#include "misdetect/scorers.hpp"

namespace misdetect {

namespace {

std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

void check_batch(const TrainingBatch& batch, std::size_t classes, std::size_t dims,
                 const TextClassEmbeddings& text) {
  if (batch.labels.size() != batch.vlm_image.rows() ||
      batch.labels.size() != batch.aux_image.rows()) {
    throw ValidationError("training batch rows and labels are misaligned");
  }
  if (batch.aux_image.dims() != dims) {
    throw ValidationError("aux embeddings have " + std::to_string(batch.aux_image.dims()) +
                          " dims, prototypes have " + std::to_string(dims));
  }
  if (batch.vlm_image.dims() != text.dims()) {
    throw ValidationError("vlm image and text embeddings differ in dims");
  }
  if (text.class_count() != classes) {
    throw ValidationError("text class count differs from the prototype count");
  }
  for (auto y : batch.labels) {
    if (y >= classes) throw ValidationError("label " + std::to_string(y) + " out of range");
  }
}

}  // namespace

PrototypeBank build_prototypes(const DatasetManifest& manifest, const EmbeddingMatrix& aux,
                               std::size_t shots, std::uint64_t seed, std::string encoder_id) {
  if (shots == 0) throw ValidationError("shots must be >= 1");
  if (!aux.is_unit()) throw ValidationError("prototype inputs must be unit-normalized");
  if (aux.rows() != manifest.samples.size()) {
    throw ValidationError(encoder_id + " rows do not match the manifest sample count");
  }
  const std::size_t classes = manifest.class_count();
  const std::size_t dims = aux.dims();

  std::vector<std::vector<std::size_t>> train_by_class(classes);
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
    const auto& s = manifest.samples[i];
    if (s.label >= classes) throw ValidationError("label out of range for sample " + s.id);
    if (s.split == Split::kTrain) train_by_class[s.label].push_back(i);
  }

  Rng rng(seed);
  std::vector<float> values(classes * dims);
  std::vector<std::vector<std::string>> provenance(classes);
  std::vector<std::string> warnings;
  for (std::size_t c = 0; c < classes; ++c) {
    auto pool = train_by_class[c];
    if (pool.empty()) {
      throw ValidationError("class " + std::to_string(c) + " (" + manifest.class_names[c] +
                            ") has no train samples");
    }
    const std::size_t take = std::min(shots, pool.size());
    if (take < shots) {
      std::ostringstream msg;
      msg << "class " << c << " (" << manifest.class_names[c] << ") has only " << pool.size()
          << " train samples; using all of them instead of " << shots;
      warnings.push_back(msg.str());
    }
    for (std::size_t k = 0; k < take; ++k) {
      const std::size_t j = k + rng.uniform_index(pool.size() - k);
      std::swap(pool[k], pool[j]);
    }
    std::vector<std::size_t> chosen(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
    std::sort(chosen.begin(), chosen.end());

    std::vector<double> mean(dims, 0.0);
    for (std::size_t idx : chosen) {
      const auto row = aux.row(idx);
      for (std::size_t d = 0; d < dims; ++d) mean[d] += row[d];
      provenance[c].push_back(manifest.samples[idx].id);
    }
    double norm = 0.0;
    for (double& v : mean) {
      v /= static_cast<double>(take);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm == 0.0) {
      throw ValidationError("class " + std::to_string(c) + " samples average to the zero vector");
    }
    for (std::size_t d = 0; d < dims; ++d) {
      values[c * dims + d] = static_cast<float>(mean[d] / norm);
    }
  }

  return PrototypeBank{
      .encoder_id = std::move(encoder_id),
      .source_dataset_id = manifest.dataset_id,
      .shots = shots,
      .seed = seed,
      .prototypes = EmbeddingMatrix(classes, dims, std::move(values), NormState::kUnit),
      .provenance = std::move(provenance),
      .finetuned = false,
      .finetune_config = std::nullopt,
      .warnings = std::move(warnings),
  };
}

LossAndGradient ensemble_ce_loss_and_grad(std::span<const double> prototypes, std::size_t dims,
                                          const TrainingBatch& batch,
                                          const TextClassEmbeddings& text, double tau) {
  if (!(tau > 0.0)) throw ValidationError("temperature must be > 0");
  if (dims == 0 || prototypes.size() % dims != 0) {
    throw ValidationError("prototype buffer is not a whole number of rows");
  }
  const std::size_t classes = prototypes.size() / dims;
  check_batch(batch, classes, dims, text);
  const std::size_t n = batch.labels.size();
  if (n == 0) throw ValidationError("empty training batch");

  LossAndGradient out;
  out.gradient.assign(classes * dims, 0.0);
  std::vector<double> sims(classes);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = batch.labels[i];
    const auto text_probs = zeroshot_predict(batch.vlm_image.row(i), text, tau).probs;
    const auto e = batch.aux_image.row(i);
    for (std::size_t c = 0; c < classes; ++c) {
      sims[c] = dot(prototypes.subspan(c * dims, dims), e);
    }
    const auto img = softmax(sims, tau);
    const double p_true = text_probs[y] + img[y];
    out.loss -= std::log(p_true / 2.0);
    // d(-log p_true)/d sims_c = -img_y (delta_yc - img_c) / (tau p_true);
    // d sims_c / d P_c = e.
    for (std::size_t c = 0; c < classes; ++c) {
      const double delta = c == y ? 1.0 : 0.0;
      const double coeff = -img[y] * (delta - img[c]) / (tau * p_true);
      if (coeff == 0.0) continue;
      double* g = out.gradient.data() + c * dims;
      for (std::size_t d = 0; d < dims; ++d) g[d] += coeff * e[d];
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  out.loss *= inv_n;
  for (double& g : out.gradient) g *= inv_n;
  return out;
}

LossAndGradient ensemble_ce_loss_and_grad(const PrototypeBank& bank, const TrainingBatch& batch,
                                          const TextClassEmbeddings& text, double tau) {
  const auto p = to_double(bank.prototypes.values());
  return ensemble_ce_loss_and_grad(p, bank.dims(), batch, text, tau);
}

TrainingBatch provenance_batch(const PrototypeBank& bank, const DatasetManifest& manifest,
                               const EmbeddingMatrix& vlm_image, const EmbeddingMatrix& aux) {
  if (vlm_image.rows() != manifest.samples.size() || aux.rows() != manifest.samples.size()) {
    throw ValidationError("embedding rows do not match the manifest sample count");
  }
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) index.emplace(manifest.samples[i].id, i);

  std::vector<float> v;
  std::vector<float> a;
  std::vector<std::uint32_t> labels;
  for (std::size_t c = 0; c < bank.provenance.size(); ++c) {
    for (const auto& id : bank.provenance[c]) {
      const auto it = index.find(id);
      if (it == index.end()) {
        throw ValidationError("provenance sample " + id + " is not in manifest " +
                              manifest.dataset_id);
      }
      const auto vr = vlm_image.row(it->second);
      const auto ar = aux.row(it->second);
      v.insert(v.end(), vr.begin(), vr.end());
      a.insert(a.end(), ar.begin(), ar.end());
      labels.push_back(static_cast<std::uint32_t>(c));
    }
  }
  if (labels.empty()) throw ValidationError("prototype bank has empty provenance");
  const std::size_t n = labels.size();
  return TrainingBatch{
      .vlm_image = EmbeddingMatrix(n, vlm_image.dims(), std::move(v), vlm_image.norm_state()),
      .aux_image = EmbeddingMatrix(n, aux.dims(), std::move(a), aux.norm_state()),
      .labels = std::move(labels),
  };
}

namespace {

double batch_accuracy(std::span<const double> prototypes, std::size_t dims,
                      const TrainingBatch& batch, const TextClassEmbeddings& text, double tau) {
  const std::size_t classes = prototypes.size() / dims;
  std::size_t hits = 0;
  std::vector<double> sims(classes);
  for (std::size_t i = 0; i < batch.labels.size(); ++i) {
    auto probs = zeroshot_predict(batch.vlm_image.row(i), text, tau).probs;
    for (std::size_t c = 0; c < classes; ++c) {
      sims[c] = dot(prototypes.subspan(c * dims, dims), batch.aux_image.row(i));
    }
    const auto img = softmax(sims, tau);
    for (std::size_t c = 0; c < classes; ++c) probs[c] += img[c];
    if (argmax(probs) == batch.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(batch.labels.size());
}

}  // namespace

double ensemble_accuracy(const PrototypeBank& bank, const TrainingBatch& batch,
                         const TextClassEmbeddings& text, double tau) {
  check_batch(batch, bank.class_count(), bank.dims(), text);
  if (batch.labels.empty()) throw ValidationError("empty batch");
  const auto p = to_double(bank.prototypes.values());
  return batch_accuracy(p, bank.dims(), batch, text, tau);
}

FinetuneResult finetune_prototypes(const PrototypeBank& bank, const TrainingBatch& batch,
                                   const TextClassEmbeddings& text, const FinetuneConfig& config) {
  if (config.epochs == 0) throw ValidationError("epochs must be >= 1");
  if (!(config.learning_rate >= 0.0)) throw ValidationError("learning rate must be >= 0");
  if (!(config.temperature > 0.0)) throw ValidationError("temperature must be > 0");
  if (batch.labels.empty()) throw ValidationError("empty provenance: nothing to fine-tune on");

  const std::size_t classes = bank.class_count();
  const std::size_t dims = bank.dims();
  check_batch(batch, classes, dims, text);

  std::vector<double> protos = to_double(bank.prototypes.values());
  std::vector<bool> touched(classes, false);
  FinetuneTrace trace;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto lg = ensemble_ce_loss_and_grad(protos, dims, batch, text, config.temperature);
    trace.loss.push_back(lg.loss);
    trace.accuracy.push_back(batch_accuracy(protos, dims, batch, text, config.temperature));
    if (config.learning_rate == 0.0) continue;
    for (std::size_t c = 0; c < classes; ++c) {
      const double* g = lg.gradient.data() + c * dims;
      if (std::all_of(g, g + dims, [](double x) { return x == 0.0; })) continue;
      double* p = protos.data() + c * dims;
      double norm = 0.0;
      for (std::size_t d = 0; d < dims; ++d) {
        p[d] -= config.learning_rate * g[d];
        norm += p[d] * p[d];
      }
      norm = std::sqrt(norm);
      if (norm == 0.0) throw ValidationError("prototype collapsed to zero during fine-tuning");
      for (std::size_t d = 0; d < dims; ++d) p[d] /= norm;
      touched[c] = true;
    }
  }

  std::vector<float> values(bank.prototypes.values().begin(), bank.prototypes.values().end());
  for (std::size_t c = 0; c < classes; ++c) {
    if (!touched[c]) continue;
    for (std::size_t d = 0; d < dims; ++d) {
      values[c * dims + d] = static_cast<float>(protos[c * dims + d]);
    }
  }

  PrototypeBank out = bank;
  out.prototypes = EmbeddingMatrix(classes, dims, std::move(values), NormState::kUnit);
  out.finetuned = true;
  out.finetune_config = config;
  return {std::move(out), std::move(trace)};
}

void save_bank(const PrototypeBank& bank, const std::filesystem::path& sidecar) {
  auto tvem = sidecar;
  tvem.replace_extension(".tvem");
  write_embeddings(bank.prototypes, tvem);

  nlohmann::json doc;
  doc["encoder_id"] = bank.encoder_id;
  doc["source_dataset_id"] = bank.source_dataset_id;
  doc["class_count"] = bank.class_count();
  doc["dims"] = bank.dims();
  doc["shots"] = bank.shots;
  doc["seed"] = bank.seed;
  doc["prototypes_file"] = tvem.filename().string();
  doc["provenance"] = bank.provenance;
  doc["finetuned"] = bank.finetuned;
  if (bank.finetune_config) {
    doc["finetune_config"] = {{"epochs", bank.finetune_config->epochs},
                              {"learning_rate", bank.finetune_config->learning_rate},
                              {"temperature", bank.finetune_config->temperature},
                              {"seed", bank.finetune_config->seed}};
  } else {
    doc["finetune_config"] = nullptr;
  }
  doc["warnings"] = bank.warnings;

  std::ofstream out(sidecar, std::ios::trunc);
  if (!out) throw IoError("cannot open " + sidecar.string() + " for writing");
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + sidecar.string());
}

PrototypeBank load_bank(const std::filesystem::path& sidecar) {
  std::ifstream in(sidecar);
  if (!in) throw IoError("cannot open prototype bank " + sidecar.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed prototype bank sidecar: " + std::string(e.what()));
  }
  try {
    auto prototypes = read_embeddings(sidecar.parent_path() / doc.at("prototypes_file").get<std::string>());
    if (!prototypes.is_unit()) throw ValidationError("stored prototypes are not unit-normalized");
    if (prototypes.rows() != doc.at("class_count").get<std::size_t>() ||
        prototypes.dims() != doc.at("dims").get<std::size_t>()) {
      throw ValidationError("prototype matrix shape disagrees with its sidecar");
    }
    std::optional<FinetuneConfig> ft;
    if (!doc.at("finetune_config").is_null()) {
      const auto& f = doc["finetune_config"];
      ft = FinetuneConfig{f.at("epochs").get<std::size_t>(), f.at("learning_rate").get<double>(),
                          f.at("temperature").get<double>(), f.at("seed").get<std::uint64_t>()};
    }
    auto provenance = doc.at("provenance").get<std::vector<std::vector<std::string>>>();
    if (provenance.size() != prototypes.rows()) {
      throw ValidationError("provenance lists do not match the class count");
    }
    return PrototypeBank{
        .encoder_id = doc.at("encoder_id").get<std::string>(),
        .source_dataset_id = doc.at("source_dataset_id").get<std::string>(),
        .shots = doc.at("shots").get<std::size_t>(),
        .seed = doc.at("seed").get<std::uint64_t>(),
        .prototypes = std::move(prototypes),
        .provenance = std::move(provenance),
        .finetuned = doc.at("finetuned").get<bool>(),
        .finetune_config = ft,
        .warnings = doc.value("warnings", std::vector<std::string>{}),
    };
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed prototype bank sidecar: " + std::string(e.what()));
  }
}

}  // namespace misdetect
