#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace misdetect {

enum class NormState : std::uint8_t { kRaw = 0, kUnit = 1 };

// Dense row-major matrix of 32-bit embeddings, one row per sample.
//
// Invariants enforced on construction: rows >= 1, dims >= 1, all values
// finite, and every row within kUnitNormTolerance of unit length when the
// state is kUnit.
class EmbeddingMatrix {
 public:
  static constexpr double kUnitNormTolerance = 1e-4;

  EmbeddingMatrix(std::size_t rows, std::size_t dims, std::vector<float> values,
                  NormState state = NormState::kRaw);

  std::size_t rows() const { return rows_; }
  std::size_t dims() const { return dims_; }
  NormState norm_state() const { return state_; }
  bool is_unit() const { return state_ == NormState::kUnit; }

  std::span<const float> row(std::size_t r) const {
    return {values_.data() + r * dims_, dims_};
  }
  float at(std::size_t r, std::size_t c) const { return values_[r * dims_ + c]; }
  std::span<const float> values() const { return values_; }

  friend bool operator==(const EmbeddingMatrix&, const EmbeddingMatrix&) = default;

 private:
  std::size_t rows_;
  std::size_t dims_;
  std::vector<float> values_;
  NormState state_;
};

// TVEM container. Layout (little-endian):
//   0..3 "TVEM" | 4 version=1 | 5 dtype=1 (f32) | 6..7 reserved=0
//   8..15 rows u64 | 16..23 dims u64 | rows*dims f32 row-major | norm_state u8
void write_embeddings(const EmbeddingMatrix& matrix, const std::filesystem::path& destination);
EmbeddingMatrix read_embeddings(const std::filesystem::path& source);

std::vector<std::uint8_t> encode_tvem(const EmbeddingMatrix& matrix);
EmbeddingMatrix decode_tvem(std::span<const std::uint8_t> bytes);

// Scales every row to unit L2 norm (accumulated in double). Throws
// ValidationError naming the first zero-norm row.
EmbeddingMatrix l2_normalize(const EmbeddingMatrix& matrix);

double dot(std::span<const float> a, std::span<const float> b);
double dot(std::span<const double> a, std::span<const float> b);
double cosine(std::span<const float> a, std::span<const float> b);

// One unit-norm row per class, index-aligned with the manifest vocabulary.
struct TextClassEmbeddings {
  TextClassEmbeddings(EmbeddingMatrix matrix, std::string prompt_template = "a photo of a [CLASS]");

  std::size_t class_count() const { return matrix.rows(); }
  std::size_t dims() const { return matrix.dims(); }

  EmbeddingMatrix matrix;
  std::string prompt_template;
};

enum class Split { kTrain, kTest };

struct SampleRecord {
  std::string id;
  std::uint32_t label = 0;
  Split split = Split::kTest;
};

// Encoder-space keys used in embedding_refs.
inline constexpr const char* kVlmImage = "vlm_image";
inline constexpr const char* kVlmText = "vlm_text";
inline constexpr const char* kAuxImage = "aux_image";

struct DatasetManifest {
  std::string dataset_id;
  std::vector<std::string> class_names;
  std::vector<SampleRecord> samples;
  // encoder_id -> file path; relative paths resolve against the manifest's directory.
  std::map<std::string, std::string> embedding_refs;
  // Free-form key/value echo (e.g. generator configuration).
  std::map<std::string, std::string> metadata;

  std::size_t class_count() const { return class_names.size(); }
  std::vector<std::uint32_t> labels() const;
  std::vector<std::size_t> indices_of(Split split) const;
};

std::string to_string(Split split);
Split split_from_string(const std::string& text);

std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const std::string& text);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& destination);
DatasetManifest load_manifest(const std::filesystem::path& source);

// Resolves embedding_refs[encoder_id] relative to manifest_path's directory.
std::filesystem::path resolve_ref(const DatasetManifest& manifest,
                                  const std::filesystem::path& manifest_path,
                                  const std::string& encoder_id);

enum class ViolationKind {
  kLabelOutOfRange,
  kDuplicateSampleId,
  kRowCountMismatch,
  kTextRowsMismatch,
  kDimsMismatch,
  kEmptyVocabulary,
};

struct Violation {
  ViolationKind kind;
  std::string message;
};

// Returns every inconsistency between the manifest and the loaded matrices
// (keyed by encoder id). Image spaces must have one row per sample; the
// vlm_text space must have one row per class. An empty result means valid.
std::vector<Violation> validate_manifest(const DatasetManifest& manifest,
                                         const std::map<std::string, EmbeddingMatrix>& embeddings);

}  // namespace misdetect
