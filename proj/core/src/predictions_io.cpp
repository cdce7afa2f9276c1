#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "misdetect/errors.hpp"
#include "misdetect/scorers.hpp"

namespace misdetect {

namespace {

constexpr std::size_t kColumns = 16;

// Shortest form that reads back to the same double.
std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& field, std::size_t line) {
  double v = 0.0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
    throw ValidationError("malformed predictions file: bad number \"" + field + "\" on line " +
                          std::to_string(line));
  }
  return v;
}

std::uint64_t parse_uint(const std::string& field, std::size_t line) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
    throw ValidationError("malformed predictions file: bad integer \"" + field + "\" on line " +
                          std::to_string(line));
  }
  return v;
}

bool parse_bool(const std::string& field, std::size_t line) {
  if (field == "1") return true;
  if (field == "0") return false;
  throw ValidationError("malformed predictions file: bad flag \"" + field + "\" on line " +
                        std::to_string(line));
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

}  // namespace

std::string predictions_to_csv(std::span<const ScoredPrediction> predictions,
                               const Provenance& provenance) {
  std::ostringstream out;
  for (const auto& [k, v] : provenance) {
    out << "# " << k << '=' << v << '\n';
  }
  out << kPredictionsHeader << '\n';
  auto opt = [](const auto& o) { return o ? format_double(static_cast<double>(*o)) : std::string(); };
  for (const auto& p : predictions) {
    if (p.sample_id.find(',') != std::string::npos) {
      throw ValidationError("sample id contains a comma: " + p.sample_id);
    }
    out << p.sample_id << ',' << p.label << ',' << p.predicted << ','
        << (p.ensemble_predicted ? std::to_string(*p.ensemble_predicted) : std::string()) << ','
        << format_double(p.s_it) << ',' << opt(p.s_ii) << ',' << opt(p.kappa) << ','
        << opt(p.kappa_star) << ',' << format_double(p.baselines.msp) << ','
        << format_double(p.baselines.maxlogit) << ',' << format_double(p.baselines.energy) << ','
        << format_double(p.baselines.entropy) << ',' << format_double(p.baselines.mcm) << ','
        << format_double(p.baselines.doctor) << ',' << (p.correct ? 1 : 0) << ','
        << (p.correct_ensemble ? std::string(*p.correct_ensemble ? "1" : "0") : std::string())
        << '\n';
  }
  return out.str();
}

std::vector<ScoredPrediction> predictions_from_csv(const std::string& text, Provenance* provenance) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  std::vector<ScoredPrediction> out;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      const auto eq = line.find('=');
      if (provenance != nullptr && eq != std::string::npos) {
        auto key = line.substr(1, eq - 1);
        key.erase(0, key.find_first_not_of(' '));
        provenance->emplace_back(std::move(key), line.substr(eq + 1));
      }
      continue;
    }
    if (!header_seen) {
      if (line != kPredictionsHeader) {
        throw ValidationError("malformed predictions file: unexpected header");
      }
      header_seen = true;
      continue;
    }
    const auto f = split_fields(line);
    if (f.size() != kColumns) {
      throw ValidationError("malformed predictions file: expected " + std::to_string(kColumns) +
                            " fields on line " + std::to_string(lineno) + ", got " +
                            std::to_string(f.size()));
    }
    ScoredPrediction p;
    p.sample_id = f[0];
    p.label = static_cast<std::uint32_t>(parse_uint(f[1], lineno));
    p.predicted = parse_uint(f[2], lineno);
    if (!f[3].empty()) p.ensemble_predicted = parse_uint(f[3], lineno);
    p.s_it = parse_double(f[4], lineno);
    if (!f[5].empty()) p.s_ii = parse_double(f[5], lineno);
    if (!f[6].empty()) p.kappa = parse_double(f[6], lineno);
    if (!f[7].empty()) p.kappa_star = parse_double(f[7], lineno);
    p.baselines.msp = parse_double(f[8], lineno);
    p.baselines.maxlogit = parse_double(f[9], lineno);
    p.baselines.energy = parse_double(f[10], lineno);
    p.baselines.entropy = parse_double(f[11], lineno);
    p.baselines.mcm = parse_double(f[12], lineno);
    p.baselines.doctor = parse_double(f[13], lineno);
    p.correct = parse_bool(f[14], lineno);
    if (!f[15].empty()) p.correct_ensemble = parse_bool(f[15], lineno);
    out.push_back(std::move(p));
  }
  if (!header_seen) {
    throw ValidationError("malformed predictions file: missing header");
  }
  return out;
}

void save_predictions(std::span<const ScoredPrediction> predictions, const std::filesystem::path& path,
                      const Provenance& provenance) {
  const auto text = predictions_to_csv(predictions, provenance);
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<ScoredPrediction> load_predictions(const std::filesystem::path& path,
                                               Provenance* provenance) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open predictions file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return predictions_from_csv(buf.str(), provenance);
}

}  // namespace misdetect
