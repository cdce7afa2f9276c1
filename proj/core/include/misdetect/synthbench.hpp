#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "misdetect/embedstore.hpp"

namespace misdetect {

// Gaussian clusters around orthogonal class centers e_0..e_{C-1}, with the
// text embeddings displaced along one shared direction u = e_C (the modality
// gap). Per sample of class c:
//   vlm image = normalize(e_c + N(0, vlm_image_spread^2 I))
//   aux image = normalize(e_c + N(0, aux_image_spread^2 I))
// and per class: text = normalize(e_c + gap_magnitude u + N(0, text_noise^2 I)).
struct SynthConfig {
  std::size_t classes = 10;
  std::size_t dims = 64;
  std::size_t samples_per_class = 40;
  double vlm_image_spread = 0.9;
  double aux_image_spread = 0.45;
  double text_noise = 0.35;
  double gap_magnitude = 2.0;
  std::uint64_t seed = 7;
  std::string dataset_id = "synth";

  void validate() const;
};

struct SynthDataset {
  DatasetManifest manifest;
  EmbeddingMatrix vlm_image;
  EmbeddingMatrix aux_image;
  TextClassEmbeddings text;
};

// Deterministic per seed. Each class draws from its own sub-stream
// derive_seed(seed, c): first the split permutation (Fisher-Yates over the
// class's samples; the first floor(n/2) become train), then vlm rows, then
// aux rows, each row dims normals in order. Text rows come from sub-stream
// derive_seed(seed, C + c).
SynthDataset generate_synthetic(const SynthConfig& config);

// Writes manifest.json, vlm_image.tvem, vlm_text.tvem, aux_image.tvem into
// `directory` (created if needed) and returns the manifest path.
std::filesystem::path write_dataset(const SynthDataset& dataset,
                                    const std::filesystem::path& directory);

}  // namespace misdetect
