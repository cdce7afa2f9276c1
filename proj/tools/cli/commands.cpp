#include "commands.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>

#include <CLI11.hpp>

#include "misdetect/embedstore.hpp"
#include "misdetect/errors.hpp"
#include "misdetect/evalmetrics.hpp"
#include "misdetect/protobank.hpp"
#include "misdetect/scorers.hpp"
#include "misdetect/synthbench.hpp"

namespace fs = std::filesystem;

namespace misdetect::cli {

namespace {

std::string num(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// Loads one encoder space, normalizing raw matrices at ingestion.
EmbeddingMatrix load_space(const DatasetManifest& manifest, const fs::path& manifest_path,
                           const std::string& encoder_id) {
  auto m = read_embeddings(resolve_ref(manifest, manifest_path, encoder_id));
  return m.is_unit() ? m : l2_normalize(m);
}

struct LoadedDataset {
  DatasetManifest manifest;
  std::map<std::string, EmbeddingMatrix> spaces;

  const EmbeddingMatrix& space(const std::string& id) const { return spaces.at(id); }
};

LoadedDataset load_dataset(const fs::path& manifest_path, const std::vector<std::string>& spaces) {
  LoadedDataset d{load_manifest(manifest_path), {}};
  for (const auto& id : spaces) {
    d.spaces.emplace(id, load_space(d.manifest, manifest_path, id));
  }
  const auto violations = validate_manifest(d.manifest, d.spaces);
  if (!violations.empty()) {
    std::string msg = "manifest " + manifest_path.string() + " failed validation:";
    for (const auto& v : violations) msg += "\n  - " + v.message;
    throw ValidationError(msg);
  }
  return d;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

struct SynthArgs {
  SynthConfig config;
  std::string out;
};

struct PrototypeArgs {
  std::string manifest;
  std::string aux_space = kAuxImage;
  std::size_t shots = 16;
  std::uint64_t seed = 0;
  std::string out;
};

struct ScoreArgs {
  std::string manifest;
  std::string bank;
  std::string aux_space;
  bool baseline_only = false;
  ScoringConfig scoring;
  std::string out;
};

struct EvalArgs {
  std::string predictions;
  std::vector<std::string> scores;
  std::string out_dir;
};

struct FinetuneArgs {
  std::string manifest;
  std::string bank;
  std::string aux_space;
  FinetuneConfig config;
  std::string out;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  const auto data = generate_synthetic(a.config);
  const auto manifest_path = write_dataset(data, a.out);
  std::map<std::string, EmbeddingMatrix> spaces = {{kVlmImage, data.vlm_image},
                                                    {kVlmText, data.text.matrix},
                                                    {kAuxImage, data.aux_image}};
  const auto violations = validate_manifest(data.manifest, spaces);
  if (!violations.empty()) {
    throw ValidationError("generated dataset failed validation: " + violations.front().message);
  }
  out << "wrote " << data.manifest.samples.size() << " samples x " << a.config.dims << " dims, "
      << a.config.classes << " classes to " << manifest_path.string() << '\n';
  return kOk;
}

int cmd_prototypes(const PrototypeArgs& a, std::ostream& out, std::ostream& err) {
  if (a.shots == 0) throw ValidationError("--shots must be >= 1");
  const auto data = load_dataset(a.manifest, {a.aux_space});
  const auto bank = build_prototypes(data.manifest, data.space(a.aux_space), a.shots, a.seed, a.aux_space);
  for (const auto& w : bank.warnings) err << "warning: " << w << '\n';
  save_bank(bank, a.out);
  out << "class,shots\n";
  for (std::size_t c = 0; c < bank.class_count(); ++c) {
    out << data.manifest.class_names[c] << ',' << bank.provenance[c].size() << '\n';
  }
  return kOk;
}

int cmd_score(const ScoreArgs& a, std::ostream& out) {
  a.scoring.validate();
  std::optional<PrototypeBank> bank;
  if (!a.baseline_only) {
    if (a.bank.empty()) {
      throw ValidationError("image-to-image scoring requires --bank (or pass --baseline-only)");
    }
    bank = load_bank(a.bank);
  }
  std::vector<std::string> spaces = {kVlmImage, kVlmText};
  std::string aux_space;
  if (bank) {
    aux_space = a.aux_space.empty() ? bank->encoder_id : a.aux_space;
    if (std::find(spaces.begin(), spaces.end(), aux_space) == spaces.end()) spaces.push_back(aux_space);
  }
  const auto data = load_dataset(a.manifest, spaces);
  const TextClassEmbeddings text(data.space(kVlmText));
  if (bank && bank->dims() != data.space(aux_space).dims()) {
    throw ValidationError("dimension mismatch: prototype bank has " + std::to_string(bank->dims()) +
                          " dims, " + aux_space + " has " +
                          std::to_string(data.space(aux_space).dims()));
  }
  ScoringInputs inputs{data.manifest, data.space(kVlmImage), text,
                       bank ? &data.space(aux_space) : nullptr, bank ? &*bank : nullptr};
  const auto preds = score_batch(inputs, a.scoring, !a.baseline_only);

  Provenance prov = {{"eval_dataset_id", data.manifest.dataset_id},
                     {"tau", num(a.scoring.tau)},
                     {"i2i_weight", num(a.scoring.i2i_weight)},
                     {"energy_temperature", num(a.scoring.energy_temperature)},
                     {"mcm_temperature", num(a.scoring.mcm_temperature)}};
  if (bank) {
    prov.emplace_back("bank_source_dataset_id", bank->source_dataset_id);
    prov.emplace_back("bank_encoder_id", aux_space);
    prov.emplace_back("bank_shots", std::to_string(bank->shots));
    prov.emplace_back("bank_finetuned", bank->finetuned ? "true" : "false");
  }
  save_predictions(preds, a.out, prov);
  out << "scored " << preds.size() << " test samples -> " << a.out << '\n';
  return kOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (a.scores.empty()) {
    std::string valid;
    for (const auto& k : known_score_names()) valid += (valid.empty() ? "" : ",") + k;
    throw ValidationError("--scores is empty; choose from " + valid);
  }
  Provenance prov;
  const auto preds = load_predictions(a.predictions, &prov);
  std::map<std::string, std::string> config(prov.begin(), prov.end());
  std::string joined;
  for (const auto& s : a.scores) joined += (joined.empty() ? "" : ",") + s;
  config["scores"] = joined;
  const auto report = evaluate(preds, a.scores, config);

  std::error_code ec;
  fs::create_directories(a.out_dir, ec);
  if (ec) throw IoError("cannot create " + a.out_dir + ": " + ec.message());
  const auto table = report_to_table(report);
  write_text(fs::path(a.out_dir) / "report.json", report_to_json(report));
  write_text(fs::path(a.out_dir) / "report.csv", table);
  out << table;
  return kOk;
}

int cmd_finetune(const FinetuneArgs& a, std::ostream& out) {
  const auto bank = load_bank(a.bank);
  const std::string aux_space = a.aux_space.empty() ? bank.encoder_id : a.aux_space;
  std::vector<std::string> spaces = {kVlmImage, kVlmText};
  if (aux_space != kVlmImage) spaces.push_back(aux_space);
  const auto data = load_dataset(a.manifest, spaces);
  const TextClassEmbeddings text(data.space(kVlmText));
  const auto batch = provenance_batch(bank, data.manifest, data.space(kVlmImage), data.space(aux_space));
  const auto result = finetune_prototypes(bank, batch, text, a.config);
  save_bank(result.bank, a.out);

  fs::path trace_path(a.out);
  trace_path.replace_extension(".trace.csv");
  std::string trace = "# epochs=" + std::to_string(a.config.epochs) + "\n# learning_rate=" +
                      num(a.config.learning_rate) + "\n# temperature=" + num(a.config.temperature) +
                      "\n# seed=" + std::to_string(a.config.seed) + "\nepoch,loss,accuracy\n";
  for (std::size_t e = 0; e < result.trace.loss.size(); ++e) {
    trace += std::to_string(e + 1) + "," + num(result.trace.loss[e]) + "," +
             num(result.trace.accuracy[e]) + "\n";
  }
  write_text(trace_path, trace);
  out << trace;
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Misclassification detection for vision-language model predictions", "misdetect"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic embedding dataset");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--classes", synth.config.classes)->capture_default_str();
  s->add_option("--dims", synth.config.dims)->capture_default_str();
  s->add_option("--samples-per-class", synth.config.samples_per_class)->capture_default_str();
  s->add_option("--vlm-spread", synth.config.vlm_image_spread)->capture_default_str();
  s->add_option("--aux-spread", synth.config.aux_image_spread)->capture_default_str();
  s->add_option("--text-noise", synth.config.text_noise)->capture_default_str();
  s->add_option("--gap", synth.config.gap_magnitude)->capture_default_str();
  s->add_option("--seed", synth.config.seed)->capture_default_str();
  s->add_option("--dataset-id", synth.config.dataset_id)->capture_default_str();

  PrototypeArgs protos;
  auto* p = app.add_subcommand("prototypes", "Build per-class visual prototypes from the train split");
  p->add_option("--manifest", protos.manifest)->required();
  p->add_option("--aux-space", protos.aux_space, "embedding_refs key of the auxiliary encoder")
      ->capture_default_str();
  p->add_option("--shots", protos.shots)->capture_default_str();
  p->add_option("--seed", protos.seed)->capture_default_str();
  p->add_option("--out", protos.out, "Bank sidecar path (.json); prototypes go to <stem>.tvem")
      ->required();

  ScoreArgs score;
  auto* sc = app.add_subcommand("score", "Score the test split");
  sc->add_option("--manifest", score.manifest)->required();
  sc->add_option("--bank", score.bank, "Prototype bank sidecar; may come from another manifest");
  sc->add_option("--aux-space", score.aux_space, "Defaults to the bank's encoder id");
  sc->add_flag("--baseline-only", score.baseline_only, "Skip image-to-image scores");
  sc->add_option("--tau", score.scoring.tau)->capture_default_str();
  sc->add_option("--weight", score.scoring.i2i_weight)->capture_default_str();
  sc->add_option("--energy-temperature", score.scoring.energy_temperature)->capture_default_str();
  sc->add_option("--mcm-temperature", score.scoring.mcm_temperature)->capture_default_str();
  sc->add_option("--out", score.out)->required();

  EvalArgs eval;
  auto* ev = app.add_subcommand("eval", "Compute AURC/AUROC/FPR95/ACC from a predictions file");
  ev->add_option("--predictions", eval.predictions)->required();
  ev->add_option("--scores", eval.scores, "Comma-separated score columns")
      ->delimiter(',')
      ->required()
      ->expected(0, -1);
  ev->add_option("--out-dir", eval.out_dir)->required();

  FinetuneArgs ft;
  auto* f = app.add_subcommand("finetune", "Fine-tune prototypes on their own N-shot samples");
  f->add_option("--manifest", ft.manifest)->required();
  f->add_option("--bank", ft.bank)->required();
  f->add_option("--aux-space", ft.aux_space, "Defaults to the bank's encoder id");
  f->add_option("--epochs", ft.config.epochs)->capture_default_str();
  f->add_option("--lr", ft.config.learning_rate)->capture_default_str();
  f->add_option("--tau", ft.config.temperature)->capture_default_str();
  f->add_option("--seed", ft.config.seed)->capture_default_str();
  f->add_option("--out", ft.out)->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kValidationFailure;
  }

  try {
    if (*s) return cmd_synth(synth, out);
    if (*p) return cmd_prototypes(protos, out, err);
    if (*sc) return cmd_score(score, out);
    if (*ev) return cmd_eval(eval, out);
    if (*f) return cmd_finetune(ft, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kValidationFailure;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kIoFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kUnexpected;
  }
  return kUnexpected;
}

}  // namespace misdetect::cli
