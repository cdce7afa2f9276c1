#include "misdetect/synthbench.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "misdetect/errors.hpp"
#include "misdetect/rng.hpp"

namespace misdetect {

namespace {

void noisy_unit_row(Rng& rng, std::size_t dims, std::size_t center, double spread,
                    std::size_t gap_axis, double gap, std::vector<float>& out) {
  std::vector<double> v(dims, 0.0);
  v[center] = 1.0;
  if (gap != 0.0) v[gap_axis] += gap;
  for (double& x : v) x += spread * rng.normal();
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm == 0.0) throw ValidationError("synthetic sample degenerated to the zero vector");
  for (double x : v) out.push_back(static_cast<float>(x / norm));
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

}  // namespace

void SynthConfig::validate() const {
  if (classes < 2) throw ValidationError("synthetic config needs at least 2 classes");
  if (samples_per_class == 0) throw ValidationError("synthetic config needs samples_per_class >= 1");
  if (dims < classes) throw ValidationError("dims must be >= classes for orthogonal centers");
  if (gap_magnitude > 0.0 && dims < classes + 1) {
    throw ValidationError("dims must be >= classes + 1 to host the modality-gap direction");
  }
  for (double s : {vlm_image_spread, aux_image_spread, text_noise, gap_magnitude}) {
    if (!std::isfinite(s) || s < 0.0) {
      throw ValidationError("synthetic spreads and gap must be finite and >= 0");
    }
  }
}

SynthDataset generate_synthetic(const SynthConfig& config) {
  config.validate();
  const std::size_t C = config.classes;
  const std::size_t D = config.dims;
  const std::size_t per = config.samples_per_class;
  const std::size_t n = C * per;
  const std::size_t gap_axis = C < D ? C : 0;

  DatasetManifest m;
  m.dataset_id = config.dataset_id;
  for (std::size_t c = 0; c < C; ++c) m.class_names.push_back("class_" + std::to_string(c));
  m.samples.resize(n);
  std::vector<float> vlm;
  std::vector<float> aux;
  vlm.reserve(n * D);
  aux.reserve(n * D);
  std::vector<std::vector<float>> vlm_rows(n);
  std::vector<std::vector<float>> aux_rows(n);

  for (std::size_t c = 0; c < C; ++c) {
    Rng rng(derive_seed(config.seed, c));
    std::vector<std::size_t> perm(per);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t k = 0; k + 1 < per; ++k) {
      std::swap(perm[k], perm[k + rng.uniform_index(per - k)]);
    }
    std::vector<bool> is_train(per, false);
    for (std::size_t k = 0; k < per / 2; ++k) is_train[perm[k]] = true;

    for (std::size_t k = 0; k < per; ++k) {
      const std::size_t i = c * per + k;
      m.samples[i] = {"c" + std::to_string(c) + "_s" + std::to_string(k),
                      static_cast<std::uint32_t>(c), is_train[k] ? Split::kTrain : Split::kTest};
    }
    for (std::size_t k = 0; k < per; ++k) {
      noisy_unit_row(rng, D, c, config.vlm_image_spread, gap_axis, 0.0, vlm_rows[c * per + k]);
    }
    for (std::size_t k = 0; k < per; ++k) {
      noisy_unit_row(rng, D, c, config.aux_image_spread, gap_axis, 0.0, aux_rows[c * per + k]);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    vlm.insert(vlm.end(), vlm_rows[i].begin(), vlm_rows[i].end());
    aux.insert(aux.end(), aux_rows[i].begin(), aux_rows[i].end());
  }

  std::vector<float> text;
  text.reserve(C * D);
  for (std::size_t c = 0; c < C; ++c) {
    Rng rng(derive_seed(config.seed, C + c));
    noisy_unit_row(rng, D, c, config.text_noise, gap_axis, config.gap_magnitude, text);
  }

  m.embedding_refs = {{kVlmImage, "vlm_image.tvem"},
                      {kVlmText, "vlm_text.tvem"},
                      {kAuxImage, "aux_image.tvem"}};
  m.metadata = {{"generator", "synthbench"},
                {"classes", std::to_string(C)},
                {"dims", std::to_string(D)},
                {"samples_per_class", std::to_string(per)},
                {"vlm_image_spread", fmt(config.vlm_image_spread)},
                {"aux_image_spread", fmt(config.aux_image_spread)},
                {"text_noise", fmt(config.text_noise)},
                {"gap_magnitude", fmt(config.gap_magnitude)},
                {"seed", std::to_string(config.seed)},
                {"prompt_template", "a photo of a [CLASS]"}};

  return SynthDataset{
      .manifest = std::move(m),
      .vlm_image = EmbeddingMatrix(n, D, std::move(vlm), NormState::kUnit),
      .aux_image = EmbeddingMatrix(n, D, std::move(aux), NormState::kUnit),
      .text = TextClassEmbeddings(EmbeddingMatrix(C, D, std::move(text), NormState::kUnit)),
  };
}

std::filesystem::path write_dataset(const SynthDataset& dataset,
                                    const std::filesystem::path& directory) {
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec) throw IoError("cannot create " + directory.string() + ": " + ec.message());
  write_embeddings(dataset.vlm_image, directory / "vlm_image.tvem");
  write_embeddings(dataset.text.matrix, directory / "vlm_text.tvem");
  write_embeddings(dataset.aux_image, directory / "aux_image.tvem");
  const auto manifest_path = directory / "manifest.json";
  save_manifest(dataset.manifest, manifest_path);
  return manifest_path;
}

}  // namespace misdetect
