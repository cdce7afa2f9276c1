// Acceptance gate: one PASS/FAIL line per criterion, non-zero exit if any fails.

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "commands.hpp"
#include "fixtures.hpp"
#include "misdetect/embedstore.hpp"
#include "misdetect/errors.hpp"
#include "misdetect/evalmetrics.hpp"
#include "misdetect/protobank.hpp"
#include "misdetect/scorers.hpp"
#include "misdetect/synthbench.hpp"
#include "oracles.hpp"

namespace md = misdetect;
namespace mt = misdetect::testing;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Flags {
  explicit Flags(const std::vector<bool>& v) : n(v.size()), data(std::make_unique<bool[]>(v.size())) {
    for (std::size_t i = 0; i < n; ++i) data[i] = v[i];
  }
  std::span<const bool> span() const { return {data.get(), n}; }
  std::size_t n;
  std::unique_ptr<bool[]> data;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

Outcome auroc_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 gen(20240601);
  std::uniform_int_distribution<std::size_t> size(2, 64);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> coarse(0, 5);
  std::bernoulli_distribution b(0.5);
  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = size(gen);
    std::vector<double> s(n);
    std::vector<bool> c(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = trial % 2 ? u(gen) : coarse(gen) / 5.0;
      c[i] = b(gen);
    }
    c[0] = true;
    c[n - 1] = false;
    const Flags f(c);
    worst = std::max(worst, std::abs(md::auroc(s, f.span()) - mt::brute_force_auroc(s, c)));
  }
  const double t = seconds_since(t0);
  return {worst < 1e-9 && t < 5.0, fmt("max |diff| %.3g, %.2fs", worst, t)};
}

Outcome aurc_fpr_fixture() {
  const std::vector<double> s{0.9, 0.8, 0.7, 0.6};
  const Flags f({true, false, true, true});
  const double a = md::aurc(md::risk_coverage_curve(s, f.span())) * 1000.0;
  const std::vector<double> fs{0.9, 0.8, 0.85, 0.1};
  const Flags ff({true, true, false, false});
  const double fpr = md::fpr_at_tpr(fs, ff.span(), 0.95);
  return {std::abs(a - 270.833) < 1e-3 && fpr == 0.5, fmt("AURC %.6f, FPR95 %.17g", a, fpr)};
}

Outcome gradient_check() {
  const auto t0 = Clock::now();
  std::mt19937_64 gen(99);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto in = mt::random_loss_instance(gen, 0.05, 1.0);
    const auto lg = md::ensemble_ce_loss_and_grad(mt::flat_prototypes(in), in.dims, mt::batch_of(in),
                                                  mt::text_of(in), in.tau);
    worst = std::max(worst, mt::relative_error(lg.gradient, mt::finite_difference_gradient(in, 1e-4)));
  }
  const double t = seconds_since(t0);
  return {worst < 1e-4 && t < 10.0, fmt("max relative error %.3g, %.2fs", worst, t)};
}

Outcome reductions() {
  const auto data = md::generate_synthetic(md::SynthConfig{});
  const auto bank = md::build_prototypes(data.manifest, data.aux_image, 16, 0);
  const md::ScoringInputs in{data.manifest, data.vlm_image, data.text, &data.aux_image, &bank};

  md::ScoringConfig cfg;
  cfg.i2i_weight = 0.0;
  cfg.mcm_temperature = cfg.tau;
  const auto preds = md::score_batch(in, cfg, true);
  bool kappa_is_msp = true;
  bool mcm_is_msp = true;
  for (const auto& p : preds) {
    kappa_is_msp &= std::bit_cast<std::uint64_t>(*p.kappa) == std::bit_cast<std::uint64_t>(p.baselines.msp);
    mcm_is_msp &= std::bit_cast<std::uint64_t>(p.baselines.mcm) == std::bit_cast<std::uint64_t>(p.baselines.msp);
  }

  md::FinetuneConfig ft;
  ft.learning_rate = 0.0;
  const auto batch = md::provenance_batch(bank, data.manifest, data.vlm_image, data.aux_image);
  const auto tuned = md::finetune_prototypes(bank, batch, data.text, ft);
  const bool identity = std::memcmp(tuned.bank.prototypes.values().data(), bank.prototypes.values().data(),
                                    bank.prototypes.values().size() * sizeof(float)) == 0;
  std::string d = std::string("w=0 kappa==msp ") + (kappa_is_msp ? "yes" : "no") + ", mcm==msp " +
                  (mcm_is_msp ? "yes" : "no") + ", lr=0 identity " + (identity ? "yes" : "no");
  return {kappa_is_msp && mcm_is_msp && identity, d};
}

struct SeedResult {
  double acc;
  double msp_auroc;
  double kappa_auroc;
};

SeedResult separation_on(std::uint64_t seed) {
  md::SynthConfig cfg;
  cfg.seed = seed;
  const auto data = md::generate_synthetic(cfg);
  const auto bank = md::build_prototypes(data.manifest, data.aux_image, 16, 0);
  const auto preds =
      md::score_batch({data.manifest, data.vlm_image, data.text, &data.aux_image, &bank}, {}, true);
  const auto report = md::evaluate(preds, {"msp", "kappa"});
  return {report.acc, report.scores[0].second.auroc.value_or(NAN), report.scores[1].second.auroc.value_or(NAN)};
}

std::vector<SeedResult> separation_results;
double separation_seconds = 0;

void run_separation() {
  if (!separation_results.empty()) return;
  const auto t0 = Clock::now();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) separation_results.push_back(separation_on(seed));
  separation_seconds = seconds_since(t0);
}

Outcome separation_accuracy_regime() {
  run_separation();
  double mean = 0;
  std::string per;
  for (const auto& r : separation_results) {
    mean += r.acc;
    per += fmt(" %.3f", r.acc);
  }
  mean /= static_cast<double>(separation_results.size());
  return {mean > 0.3 && mean < 0.9 && separation_seconds < 30.0,
          fmt("mean zero-shot accuracy %.4f (need (0.3, 0.9)), %.2fs;", mean, separation_seconds) + " per seed" + per};
}

Outcome separation_auroc_margin() {
  run_separation();
  bool ok = separation_seconds < 30.0;
  std::string per;
  for (std::size_t i = 0; i < separation_results.size(); ++i) {
    const auto& r = separation_results[i];
    ok &= r.kappa_auroc >= r.msp_auroc + 0.03;
    per += fmt(" seed %.0f: kappa %.4f vs msp %.4f;", static_cast<double>(i + 1), r.kappa_auroc, r.msp_auroc);
  }
  return {ok, per.substr(1)};
}

md::TrainingBatch train_split_batch(const md::SynthDataset& data) {
  const auto idx = data.manifest.indices_of(md::Split::kTrain);
  const std::size_t d = data.vlm_image.dims();
  std::vector<float> vlm, aux;
  std::vector<std::uint32_t> labels;
  for (std::size_t i : idx) {
    const auto v = data.vlm_image.row(i);
    const auto a = data.aux_image.row(i);
    vlm.insert(vlm.end(), v.begin(), v.end());
    aux.insert(aux.end(), a.begin(), a.end());
    labels.push_back(data.manifest.samples[i].label);
  }
  return {md::EmbeddingMatrix(idx.size(), d, std::move(vlm), md::NormState::kUnit),
          md::EmbeddingMatrix(idx.size(), d, std::move(aux), md::NormState::kUnit), std::move(labels)};
}

Outcome finetune_improvement() {
  const auto data = md::generate_synthetic(md::SynthConfig{});
  const auto bank = md::build_prototypes(data.manifest, data.aux_image, 16, 0);
  const auto prov = md::provenance_batch(bank, data.manifest, data.vlm_image, data.aux_image);
  const auto train = train_split_batch(data);
  const md::FinetuneConfig defaults;

  const auto full = md::finetune_prototypes(bank, prov, data.text, defaults);
  const bool loss_down = full.trace.loss[9] < full.trace.loss[0];

  std::vector<double> acc{md::ensemble_accuracy(bank, train, data.text, defaults.temperature)};
  for (std::size_t e = 1; e <= defaults.epochs; ++e) {
    md::FinetuneConfig cfg = defaults;
    cfg.epochs = e;
    const auto r = md::finetune_prototypes(bank, prov, data.text, cfg);
    acc.push_back(md::ensemble_accuracy(r.bank, train, data.text, defaults.temperature));
  }
  bool monotone = true;
  for (std::size_t k = 1; k < acc.size(); ++k) monotone &= acc[k] >= acc[k - 1];
  std::string d = fmt("loss %.6f -> %.6f", full.trace.loss[0], full.trace.loss[9]);
  d += fmt("; train-split ensemble accuracy %.4f -> %.4f", acc.front(), acc.back());
  d += monotone ? ", non-decreasing" : ", decreased at some epoch";
  return {loss_down && monotone, d};
}

int cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = md::cli::run(args, out, err);
  if (code != 0) std::fprintf(stderr, "cli failed: %s\n", err.str().c_str());
  return code;
}

std::string pipeline_report(const mt::TempDir& dir) {
  const auto p = [&](const std::string& leaf) { return (dir / leaf).string(); };
  if (cli({"synth", "--out", p("data"), "--seed", "7"}) != 0) return {};
  if (cli({"prototypes", "--manifest", p("data/manifest.json"), "--seed", "7", "--out", p("bank.json")}) != 0) return {};
  if (cli({"score", "--manifest", p("data/manifest.json"), "--bank", p("bank.json"), "--out", p("preds.csv")}) != 0)
    return {};
  if (cli({"eval", "--predictions", p("preds.csv"), "--scores",
           "msp,maxlogit,energy,entropy,mcm,doctor,kappa,kappa_star", "--out-dir", p("report")}) != 0)
    return {};
  return mt::slurp(dir / "report" / "report.json") + mt::slurp(dir / "report" / "report.csv");
}

Outcome determinism() {
  const mt::TempDir a("accept_a");
  const mt::TempDir b("accept_b");
  const auto ra = pipeline_report(a);
  const auto rb = pipeline_report(b);
  return {!ra.empty() && ra == rb, fmt("%.0f report bytes, identical: ", static_cast<double>(ra.size())) +
                                       (ra == rb ? "yes" : "no")};
}

Outcome tvem_round_trip() {
  std::mt19937_64 gen(1000);
  std::uniform_int_distribution<std::size_t> shape(1, 16);
  std::uniform_int_distribution<std::uint32_t> bits;
  std::bernoulli_distribution unit(0.3);
  std::size_t exact = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t r = shape(gen), d = shape(gen);
    std::vector<float> v(r * d);
    for (float& x : v) {
      do {
        x = std::bit_cast<float>(bits(gen));
      } while (!std::isfinite(x));
    }
    md::EmbeddingMatrix m(r, d, v);
    if (unit(gen)) {
      try {
        m = md::l2_normalize(m);
      } catch (const md::Error&) {
      }
    }
    const auto back = md::decode_tvem(md::encode_tvem(m));
    exact += back.rows() == r && back.dims() == d && back.is_unit() == m.is_unit() &&
             std::memcmp(back.values().data(), m.values().data(), v.size() * sizeof(float)) == 0;
  }
  return {exact == 1000, fmt("%.0f/1000 bit-exact", static_cast<double>(exact))};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"AUROC oracle equivalence", auroc_oracle},
      {"AURC and FPR95 fixtures", aurc_fpr_fixture},
      {"Gradient check", gradient_check},
      {"Reductions", reductions},
      {"Synthetic separation: zero-shot accuracy regime", separation_accuracy_regime},
      {"Synthetic separation: kappa AUROC margin over MSP", separation_auroc_margin},
      {"Fine-tune improvement", finetune_improvement},
      {"Determinism", determinism},
      {"Format round trip", tvem_round_trip},
  };
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
  }
  std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
