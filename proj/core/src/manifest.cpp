#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "misdetect/embedstore.hpp"
#include "misdetect/errors.hpp"

namespace misdetect {

using nlohmann::json;

std::vector<std::uint32_t> DatasetManifest::labels() const {
  std::vector<std::uint32_t> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    out.push_back(s.label);
  }
  return out;
}

std::vector<std::size_t> DatasetManifest::indices_of(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].split == split) {
      out.push_back(i);
    }
  }
  return out;
}

std::string to_string(Split split) { return split == Split::kTrain ? "train" : "test"; }

Split split_from_string(const std::string& text) {
  if (text == "train") return Split::kTrain;
  if (text == "test") return Split::kTest;
  throw ValidationError("unknown split \"" + text + "\" (expected train or test)");
}

std::string manifest_to_json(const DatasetManifest& manifest) {
  json doc;
  doc["dataset_id"] = manifest.dataset_id;
  doc["class_names"] = manifest.class_names;
  json samples = json::array();
  for (const auto& s : manifest.samples) {
    samples.push_back({{"id", s.id}, {"label", s.label}, {"split", to_string(s.split)}});
  }
  doc["samples"] = std::move(samples);
  doc["embedding_refs"] = manifest.embedding_refs;
  if (!manifest.metadata.empty()) {
    doc["metadata"] = manifest.metadata;
  }
  return doc.dump(2) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text) {
  DatasetManifest m;
  try {
    const json doc = json::parse(text);
    m.dataset_id = doc.at("dataset_id").get<std::string>();
    m.class_names = doc.at("class_names").get<std::vector<std::string>>();
    for (const auto& s : doc.at("samples")) {
      const auto label = s.at("label").get<std::int64_t>();
      if (label < 0) {
        throw ValidationError("negative label for sample " + s.at("id").get<std::string>());
      }
      m.samples.push_back({s.at("id").get<std::string>(), static_cast<std::uint32_t>(label),
                           split_from_string(s.at("split").get<std::string>())});
    }
    m.embedding_refs = doc.at("embedding_refs").get<std::map<std::string, std::string>>();
    if (doc.contains("metadata")) {
      for (const auto& [k, v] : doc.at("metadata").items()) {
        m.metadata[k] = v.is_string() ? v.get<std::string>() : v.dump();
      }
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& destination) {
  std::ofstream out(destination, std::ios::trunc);
  if (!out) {
    throw IoError("cannot open " + destination.string() + " for writing");
  }
  out << manifest_to_json(manifest);
  if (!out) {
    throw IoError("failed writing " + destination.string());
  }
}

DatasetManifest load_manifest(const std::filesystem::path& source) {
  std::ifstream in(source);
  if (!in) {
    throw IoError("cannot open manifest " + source.string());
  }
  std::stringstream buf;
  buf << in.rdbuf();
  return manifest_from_json(buf.str());
}

std::filesystem::path resolve_ref(const DatasetManifest& manifest,
                                  const std::filesystem::path& manifest_path,
                                  const std::string& encoder_id) {
  const auto it = manifest.embedding_refs.find(encoder_id);
  if (it == manifest.embedding_refs.end()) {
    throw ValidationError("manifest " + manifest.dataset_id + " has no embedding_refs entry for " +
                          encoder_id);
  }
  std::filesystem::path ref(it->second);
  if (ref.is_relative()) {
    ref = manifest_path.parent_path() / ref;
  }
  return ref;
}

std::vector<Violation> validate_manifest(const DatasetManifest& manifest,
                                         const std::map<std::string, EmbeddingMatrix>& embeddings) {
  std::vector<Violation> out;
  const std::size_t classes = manifest.class_count();
  if (classes == 0) {
    out.push_back({ViolationKind::kEmptyVocabulary, "class_names is empty"});
  }

  std::set<std::string> seen;
  for (const auto& s : manifest.samples) {
    if (s.label >= classes) {
      std::ostringstream msg;
      msg << "label out of range: sample " << s.id << " has label " << s.label << " but C = "
          << classes;
      out.push_back({ViolationKind::kLabelOutOfRange, msg.str()});
    }
    if (!seen.insert(s.id).second) {
      out.push_back({ViolationKind::kDuplicateSampleId, "duplicate sample id " + s.id});
    }
  }

  for (const auto& [encoder, matrix] : embeddings) {
    if (encoder == kVlmText) {
      if (matrix.rows() != classes) {
        std::ostringstream msg;
        msg << "text rows ≠ class count (" << matrix.rows() << " rows, " << classes << " classes)";
        out.push_back({ViolationKind::kTextRowsMismatch, msg.str()});
      }
    } else if (matrix.rows() != manifest.samples.size()) {
      std::ostringstream msg;
      msg << encoder << " has " << matrix.rows() << " rows but the manifest lists "
          << manifest.samples.size() << " samples";
      out.push_back({ViolationKind::kRowCountMismatch, msg.str()});
    }
  }

  const auto image = embeddings.find(kVlmImage);
  const auto text = embeddings.find(kVlmText);
  if (image != embeddings.end() && text != embeddings.end() &&
      image->second.dims() != text->second.dims()) {
    std::ostringstream msg;
    msg << "vlm_image dims " << image->second.dims() << " ≠ vlm_text dims " << text->second.dims();
    out.push_back({ViolationKind::kDimsMismatch, msg.str()});
  }
  return out;
}

}  // namespace misdetect
