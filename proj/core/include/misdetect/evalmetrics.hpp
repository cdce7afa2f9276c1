#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "misdetect/scorers.hpp"

namespace misdetect {

// Throughout, "correct" predictions are the positive class.

struct RiskCoveragePoint {
  double coverage = 0.0;
  double risk = 0.0;
};

double accuracy(std::span<const bool> correct);

// Samples sorted by score descending (stable, so ties keep input order);
// point k covers the top k samples.
std::vector<RiskCoveragePoint> risk_coverage_curve(std::span<const double> scores,
                                                   std::span<const bool> correct);

// Unweighted mean of the curve's risks, in [0, 1]. Multiply by 1000 to report.
double aurc(std::span<const RiskCoveragePoint> curve);

// P(score_correct > score_wrong) + 0.5 P(tie) over all correct x wrong pairs.
// Throws ValidationError("AUROC undefined ...") when either group is empty.
double auroc(std::span<const double> scores, std::span<const bool> correct);

// Largest threshold delta with TPR(score >= delta) >= target_tpr; returns the
// fraction of wrong samples with score >= delta.
double fpr_at_tpr(std::span<const double> scores, std::span<const bool> correct,
                  double target_tpr = 0.95);

// Score columns understood by evaluate(). kappa_star is judged against the
// ensemble prediction; every other score against the zero-shot prediction.
const std::vector<std::string>& known_score_names();

struct ScoreMetrics {
  double acc = 0.0;
  double aurc = 0.0;
  // Empty when only one outcome class is present.
  std::optional<double> auroc;
  std::optional<double> fpr95;
  std::vector<RiskCoveragePoint> curve;
};

struct EvalReport {
  std::size_t n = 0;
  double acc = 0.0;
  // Insertion order of the requested score names.
  std::vector<std::pair<std::string, ScoreMetrics>> scores;
  std::map<std::string, std::string> config;
};

EvalReport evaluate(std::span<const ScoredPrediction> predictions,
                    const std::vector<std::string>& score_names,
                    std::map<std::string, std::string> config = {});

// Structured report; rates reported x100 and AURC x1000.
std::string report_to_json(const EvalReport& report);
// Flat table: score,AURC,AUROC,FPR95,ACC (same scaling, ACC x100).
std::string report_to_table(const EvalReport& report);

}  // namespace misdetect
