#include "misdetect/embedstore.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "misdetect/errors.hpp"

namespace misdetect {

namespace {

constexpr std::uint8_t kMagic[4] = {'T', 'V', 'E', 'M'};
constexpr std::uint8_t kVersion = 1;
constexpr std::uint8_t kDtypeF32 = 1;
constexpr std::size_t kHeaderBytes = 24;

static_assert(std::numeric_limits<float>::is_iec559, "TVEM requires IEEE-754 binary32");

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  }
  return v;
}

double row_norm(std::span<const float> row) {
  double s = 0.0;
  for (float x : row) {
    s += static_cast<double>(x) * x;
  }
  return std::sqrt(s);
}

}  // namespace

EmbeddingMatrix::EmbeddingMatrix(std::size_t rows, std::size_t dims, std::vector<float> values,
                                 NormState state)
    : rows_(rows), dims_(dims), values_(std::move(values)), state_(state) {
  if (rows_ == 0 || dims_ == 0) {
    throw ValidationError("embedding matrix must have rows >= 1 and dims >= 1");
  }
  if (values_.size() != rows_ * dims_) {
    std::ostringstream msg;
    msg << "embedding matrix expects " << rows_ * dims_ << " values, got " << values_.size();
    throw ValidationError(msg.str());
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      std::ostringstream msg;
      msg << "non-finite value at (" << i / dims_ << ", " << i % dims_ << ")";
      throw ValidationError(msg.str());
    }
  }
  if (state_ == NormState::kUnit) {
    for (std::size_t r = 0; r < rows_; ++r) {
      const double n = row_norm(row(r));
      if (std::abs(n - 1.0) > kUnitNormTolerance) {
        std::ostringstream msg;
        msg << "row " << r << " is flagged unit-norm but has norm " << n;
        throw ValidationError(msg.str());
      }
    }
  }
}

std::vector<std::uint8_t> encode_tvem(const EmbeddingMatrix& matrix) {
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + matrix.values().size() * 4 + 1);
  for (std::uint8_t b : kMagic) out.push_back(b);
  out.push_back(kVersion);
  out.push_back(kDtypeF32);
  out.push_back(0);
  out.push_back(0);
  put_u64(out, matrix.rows());
  put_u64(out, matrix.dims());
  for (float v : matrix.values()) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) {
      out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
  }
  out.push_back(static_cast<std::uint8_t>(matrix.norm_state()));
  return out;
}

EmbeddingMatrix decode_tvem(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw ValidationError("unrecognized container");
  }
  if (bytes[4] != kVersion) {
    throw ValidationError("unsupported TVEM version " + std::to_string(bytes[4]));
  }
  if (bytes[5] != kDtypeF32) {
    throw ValidationError("unsupported TVEM dtype " + std::to_string(bytes[5]));
  }
  const std::uint64_t rows = get_u64(bytes.data() + 8);
  const std::uint64_t dims = get_u64(bytes.data() + 16);
  if (rows == 0 || dims == 0) {
    throw ValidationError("TVEM header declares an empty matrix");
  }
  const std::size_t available = bytes.size() - kHeaderBytes;
  if (dims > std::numeric_limits<std::uint64_t>::max() / 8 / rows) {
    throw ValidationError("truncated payload");
  }
  const std::uint64_t count = rows * dims;
  const std::uint64_t expected = count * 4 + 1;
  if (available < expected) {
    throw ValidationError("truncated payload");
  }
  if (available > expected) {
    throw ValidationError("payload length does not match rows x dims");
  }
  std::vector<float> values(count);
  const std::uint8_t* p = bytes.data() + kHeaderBytes;
  for (std::uint64_t i = 0; i < count; ++i, p += 4) {
    const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                               static_cast<std::uint32_t>(p[1]) << 8 |
                               static_cast<std::uint32_t>(p[2]) << 16 |
                               static_cast<std::uint32_t>(p[3]) << 24;
    values[i] = std::bit_cast<float>(bits);
  }
  const std::uint8_t state = *p;
  if (state > 1) {
    throw ValidationError("invalid norm_state byte " + std::to_string(state));
  }
  return EmbeddingMatrix(rows, dims, std::move(values), static_cast<NormState>(state));
}

void write_embeddings(const EmbeddingMatrix& matrix, const std::filesystem::path& destination) {
  const auto bytes = encode_tvem(matrix);
  std::ofstream out(destination, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open " + destination.string() + " for writing");
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw IoError("failed writing " + destination.string());
  }
}

EmbeddingMatrix read_embeddings(const std::filesystem::path& source) {
  std::ifstream in(source, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + source.string());
  }
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode_tvem(bytes);
  } catch (const ValidationError& e) {
    throw ValidationError(source.string() + ": " + e.what());
  }
}

EmbeddingMatrix l2_normalize(const EmbeddingMatrix& matrix) {
  std::vector<float> out(matrix.values().begin(), matrix.values().end());
  const std::size_t d = matrix.dims();
  for (std::size_t r = 0; r < matrix.rows(); ++r) {
    const double n = row_norm(matrix.row(r));
    if (n == 0.0) {
      throw ValidationError("cannot normalize zero-norm row " + std::to_string(r));
    }
    for (std::size_t c = 0; c < d; ++c) {
      out[r * d + c] = static_cast<float>(static_cast<double>(out[r * d + c]) / n);
    }
  }
  return EmbeddingMatrix(matrix.rows(), d, std::move(out), NormState::kUnit);
}

double dot(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw ValidationError("dimension mismatch: " + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += static_cast<double>(a[i]) * b[i];
  }
  return s;
}

double dot(std::span<const double> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw ValidationError("dimension mismatch: " + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += a[i] * b[i];
  }
  return s;
}

double cosine(std::span<const float> a, std::span<const float> b) {
  const double na = row_norm(a);
  const double nb = row_norm(b);
  if (na == 0.0 || nb == 0.0) {
    throw ValidationError("cosine of a zero vector");
  }
  return dot(a, b) / (na * nb);
}

TextClassEmbeddings::TextClassEmbeddings(EmbeddingMatrix m, std::string tmpl)
    : matrix(std::move(m)), prompt_template(std::move(tmpl)) {
  if (!matrix.is_unit()) {
    throw ValidationError("text class embeddings must be unit-normalized");
  }
}

}  // namespace misdetect
