#include "misdetect/evalmetrics.hpp"

#include <algorithm>
#include <cstdio>
#include <memory>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "misdetect/errors.hpp"

namespace misdetect {

namespace {

void check_lengths(std::span<const double> scores, std::span<const bool> correct) {
  if (scores.size() != correct.size()) {
    throw ValidationError("length mismatch: " + std::to_string(scores.size()) + " scores, " +
                          std::to_string(correct.size()) + " flags");
  }
  if (scores.empty()) throw ValidationError("no samples");
}

std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

double accuracy(std::span<const bool> correct) {
  if (correct.empty()) throw ValidationError("accuracy of an empty set");
  const auto hits = std::count(correct.begin(), correct.end(), true);
  return static_cast<double>(hits) / static_cast<double>(correct.size());
}

std::vector<RiskCoveragePoint> risk_coverage_curve(std::span<const double> scores,
                                                   std::span<const bool> correct) {
  check_lengths(scores, correct);
  const auto order = descending_order(scores);
  const double n = static_cast<double>(scores.size());
  std::vector<RiskCoveragePoint> curve;
  curve.reserve(scores.size());
  std::size_t wrong = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (!correct[order[k]]) ++wrong;
    const double covered = static_cast<double>(k + 1);
    curve.push_back({covered / n, static_cast<double>(wrong) / covered});
  }
  return curve;
}

double aurc(std::span<const RiskCoveragePoint> curve) {
  if (curve.empty()) throw ValidationError("AURC of an empty curve");
  double s = 0.0;
  for (const auto& p : curve) s += p.risk;
  return s / static_cast<double>(curve.size());
}

double auroc(std::span<const double> scores, std::span<const bool> correct) {
  check_lengths(scores, correct);
  // Rank-sum form of the pair count: walk scores ascending in tie groups; each
  // correct sample beats every wrong sample strictly below its group and earns
  // half credit against wrong samples inside it.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double wins = 0.0;
  std::size_t wrong_below = 0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::size_t pos = 0;
    std::size_t neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (correct[order[j]] ? pos : neg) += 1;
      ++j;
    }
    wins += static_cast<double>(pos) * (static_cast<double>(wrong_below) + 0.5 * static_cast<double>(neg));
    wrong_below += neg;
    n_pos += pos;
    n_neg += neg;
    i = j;
  }
  if (n_pos == 0 || n_neg == 0) {
    throw ValidationError("AUROC undefined: need at least one correct and one incorrect sample");
  }
  return wins / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double fpr_at_tpr(std::span<const double> scores, std::span<const bool> correct, double target_tpr) {
  check_lengths(scores, correct);
  if (!(target_tpr > 0.0 && target_tpr <= 1.0)) {
    throw ValidationError("target TPR must lie in (0, 1]");
  }
  const auto n_pos = static_cast<std::size_t>(std::count(correct.begin(), correct.end(), true));
  const std::size_t n_neg = correct.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw ValidationError("FPR undefined: need at least one correct and one incorrect sample");
  }
  // Lower the threshold one distinct score value at a time; the first value
  // reaching the target TPR is the largest admissible threshold.
  const auto order = descending_order(scores);
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double delta = scores[order[i]];
    while (i < order.size() && scores[order[i]] == delta) {
      (correct[order[i]] ? tp : fp) += 1;
      ++i;
    }
    if (static_cast<double>(tp) / static_cast<double>(n_pos) >= target_tpr) {
      return static_cast<double>(fp) / static_cast<double>(n_neg);
    }
  }
  return 1.0;
}

const std::vector<std::string>& known_score_names() {
  static const std::vector<std::string> names = {"msp",     "maxlogit", "energy", "entropy", "mcm",
                                                 "doctor",  "s_ii",     "kappa",  "kappa_star"};
  return names;
}

EvalReport evaluate(std::span<const ScoredPrediction> predictions,
                    const std::vector<std::string>& score_names,
                    std::map<std::string, std::string> config) {
  if (predictions.empty()) throw ValidationError("no predictions to evaluate");
  if (score_names.empty()) throw ValidationError("no score names requested");
  std::set<std::string> seen;
  for (const auto& name : score_names) {
    const auto& known = known_score_names();
    if (std::find(known.begin(), known.end(), name) == known.end()) {
      std::string valid;
      for (const auto& k : known) valid += (valid.empty() ? "" : ", ") + k;
      throw ValidationError("unknown score name \"" + name + "\"; valid names: " + valid);
    }
    if (!seen.insert(name).second) throw ValidationError("duplicate score name \"" + name + "\"");
  }

  EvalReport report;
  report.n = predictions.size();
  report.config = std::move(config);
  const std::size_t n = predictions.size();
  // std::vector<bool> cannot back a span.
  auto zs_flags = std::make_unique<bool[]>(n);
  for (std::size_t i = 0; i < n; ++i) zs_flags[i] = predictions[i].correct;
  report.acc = accuracy({zs_flags.get(), n});

  for (const auto& name : score_names) {
    std::vector<double> scores;
    auto flags = std::make_unique<bool[]>(n);
    scores.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& p = predictions[i];
      std::optional<double> v;
      bool ok = p.correct;
      if (name == "msp") v = p.baselines.msp;
      else if (name == "maxlogit") v = p.baselines.maxlogit;
      else if (name == "energy") v = p.baselines.energy;
      else if (name == "entropy") v = p.baselines.entropy;
      else if (name == "mcm") v = p.baselines.mcm;
      else if (name == "doctor") v = p.baselines.doctor;
      else if (name == "s_ii") v = p.s_ii;
      else if (name == "kappa") v = p.kappa;
      else if (name == "kappa_star") {
        v = p.kappa_star;
        if (!p.correct_ensemble) v.reset();
        else ok = *p.correct_ensemble;
      }
      if (!v) {
        throw ValidationError("score \"" + name + "\" is missing for sample " + p.sample_id +
                              " (were predictions scored without prototypes?)");
      }
      scores.push_back(*v);
      flags[i] = ok;
    }
    const std::span<const bool> correct(flags.get(), n);
    ScoreMetrics m;
    m.acc = accuracy(correct);
    m.curve = risk_coverage_curve(scores, correct);
    m.aurc = aurc(m.curve);
    if (m.acc > 0.0 && m.acc < 1.0) {
      m.auroc = auroc(scores, correct);
      m.fpr95 = fpr_at_tpr(scores, correct, 0.95);
    }
    report.scores.emplace_back(name, std::move(m));
  }
  return report;
}

std::string report_to_json(const EvalReport& report) {
  nlohmann::ordered_json doc;
  doc["n"] = report.n;
  doc["acc"] = report.acc * 100.0;
  doc["config"] = report.config;
  nlohmann::ordered_json blocks = nlohmann::ordered_json::object();
  for (const auto& [name, m] : report.scores) {
    nlohmann::ordered_json b;
    b["acc"] = m.acc * 100.0;
    b["aurc_x1000"] = m.aurc * 1000.0;
    b["auroc"] = m.auroc ? nlohmann::ordered_json(*m.auroc * 100.0) : nlohmann::ordered_json();
    b["fpr95"] = m.fpr95 ? nlohmann::ordered_json(*m.fpr95 * 100.0) : nlohmann::ordered_json();
    nlohmann::ordered_json curve = nlohmann::ordered_json::array();
    for (const auto& pt : m.curve) curve.push_back({pt.coverage, pt.risk});
    b["curve"] = std::move(curve);
    blocks[name] = std::move(b);
  }
  doc["scores"] = std::move(blocks);
  return doc.dump(2) + "\n";
}

std::string report_to_table(const EvalReport& report) {
  std::string out = "score,AURC,AUROC,FPR95,ACC\n";
  char buf[160];
  auto fmt = [&](const std::optional<double>& v) {
    if (!v) return std::string("nan");
    std::snprintf(buf, sizeof buf, "%.2f", *v * 100.0);
    return std::string(buf);
  };
  for (const auto& [name, m] : report.scores) {
    std::snprintf(buf, sizeof buf, "%.2f", m.aurc * 1000.0);
    const std::string aurc_s = buf;
    std::snprintf(buf, sizeof buf, "%.2f", m.acc * 100.0);
    const std::string acc_s = buf;
    out += name + "," + aurc_s + "," + fmt(m.auroc) + "," + fmt(m.fpr95) + "," + acc_s + "\n";
  }
  return out;
}

}  // namespace misdetect
