// ltg: command-line driver for data generation, training, prediction,
// evaluation, the selection ablation and gradient checks.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ltg/checkpoint.hpp"
#include "ltg/harness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path + ": malformed JSON: " + e.what());
  }
}

ltg::PipelineConfig load_pipeline(const std::string& config_path,
                                  const std::vector<std::string>& overrides) {
  json j = config_path.empty() ? json::object() : read_json_file(config_path);
  ltg::apply_overrides(j, overrides);
  return ltg::pipeline_config_from_json(j);
}

std::vector<ltg::SceneInstance> load_split_instances(const std::string& data_dir, const std::string& split) {
  if (split != "train" && split != "test") throw std::runtime_error("split must be 'train' or 'test'");
  return ltg::load_split(fs::path(data_dir) / (split + ".jsonl")).instances;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::vector<ltg::SceneInstance> maybe_corrupt(std::vector<ltg::SceneInstance> scenes, double rate,
                                              double drop, const std::string& scope,
                                              std::uint64_t seed) {
  if (rate <= 0.0 && drop <= 0.0) return scenes;
  ltg::CorruptionSpec spec;
  spec.char_sub_rate = rate;
  spec.word_drop_rate = drop;
  spec.seed = seed;
  if (scope == "all") {
    spec.scope = ltg::CorruptionScope::AllTokens;
  } else if (scope == "answer") {
    spec.scope = ltg::CorruptionScope::AnswerTokens;
  } else {
    throw std::runtime_error("corrupt scope must be 'all' or 'answer'");
  }
  for (auto& s : scenes) s = ltg::corrupt_ocr(s, spec);
  return scenes;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ltg: locate-then-generate scene-text question answering"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--set", overrides, "Override a config key, e.g. alm_train.epochs=4");
  };

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic train/test splits");
  std::uint64_t data_seed = 0;
  std::string out;
  gen->add_option("--seed", data_seed, "Dataset seed")->required();
  gen->add_option("--out", out, "Output directory")->required();
  add_config(gen);

  // train-alm
  auto* talm = app.add_subcommand("train-alm", "Train the answer locator");
  std::string data_dir;
  std::uint64_t seed = 1;
  talm->add_option("--data", data_dir, "Dataset directory")->required();
  talm->add_option("--out", out, "Checkpoint directory")->required();
  talm->add_option("--seed", seed, "Training seed");
  add_config(talm);

  // train-agm
  auto* tagm = app.add_subcommand("train-agm", "Train the answer generator");
  std::string alm_path, agm_path;
  tagm->add_option("--data", data_dir, "Dataset directory")->required();
  tagm->add_option("--alm", alm_path, "Locator checkpoint (not needed with agm_train.selection=none)");
  tagm->add_option("--out", out, "Checkpoint directory")->required();
  tagm->add_option("--seed", seed, "Training seed");
  add_config(tagm);

  // predict
  auto* pred = app.add_subcommand("predict", "Write predictions for a split");
  std::string split = "test", selection = "mixed", scope = "all";
  double corrupt_rate = 0.0, drop_rate = 0.0;
  std::uint64_t corrupt_seed = 0;
  bool copy_only = false;
  pred->add_option("--data", data_dir, "Dataset directory")->required();
  pred->add_option("--split", split, "train or test");
  pred->add_option("--alm", alm_path, "Locator checkpoint");
  pred->add_option("--agm", agm_path, "Generator checkpoint (unless --copy)");
  pred->add_option("--selection", selection, "none, visual, linguistic or mixed");
  pred->add_flag("--copy", copy_only, "Emit the selected tokens verbatim instead of generating");
  pred->add_option("--corrupt-rate", corrupt_rate, "Character substitution rate applied to OCR");
  pred->add_option("--drop-rate", drop_rate, "Word drop rate applied to OCR");
  pred->add_option("--corrupt-scope", scope, "all or answer");
  pred->add_option("--corrupt-seed", corrupt_seed, "Corruption seed");
  pred->add_option("--out", out, "Predictions file (JSONL)")->required();
  add_config(pred);

  // eval
  auto* ev = app.add_subcommand("eval", "Score a predictions file");
  std::string predictions;
  ev->add_option("--data", data_dir, "Dataset directory")->required();
  ev->add_option("--split", split, "train or test");
  ev->add_option("--predictions", predictions, "Predictions file (JSONL)")->required();
  ev->add_option("--out", out, "Directory for report.json and report.txt");
  add_config(ev);

  // ablate
  auto* abl = app.add_subcommand("ablate", "Run the four-variant selection ablation");
  std::vector<std::uint64_t> seeds{1, 2, 3};
  double denoise_rate = 0.0;
  abl->add_option("--data", data_dir, "Dataset directory")->required();
  abl->add_option("--out", out, "Output directory")->required();
  abl->add_option("--seeds", seeds, "Training seeds (at least 3)")->delimiter(',');
  abl->add_option("--denoise-rate", denoise_rate, "Also compare against copy-only on corrupted answers");
  add_config(abl);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of both losses");
  std::size_t coords = 100;
  double eps = 1e-4, tol = 1e-4;
  gc->add_option("--seed", seed, "Seed");
  gc->add_option("--coords", coords, "Coordinates per loss");
  gc->add_option("--eps", eps, "Central-difference step");
  gc->add_option("--tol", tol, "Maximum relative error");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      json j = config_path.empty() ? json::object() : read_json_file(config_path);
      ltg::apply_overrides(j, overrides);
      const auto wc = ltg::world_config_from_json(j);
      const auto data = ltg::generate_dataset(wc, data_seed);
      const fs::path dir = ltg::resolve_output(out);
      ltg::save_dataset(dir, data);
      std::cout << "wrote " << data.train.size() << " train and " << data.test.size()
                << " test instances to " << dir.string() << "\n";
    } else if (*talm) {
      const auto cfg = load_pipeline(config_path, overrides);
      const auto train = load_split_instances(data_dir, "train");
      const fs::path dir = ltg::resolve_output(out);
      const auto res = ltg::train_alm(train, cfg, seed, dir);
      for (const auto& r : res.log) std::cout << ltg::to_json(r).dump() << "\n";
      std::vector<double> loss;
      for (const auto& r : res.log) loss.push_back(r.loss);
      ltg::write_line_plot(dir / "alm_loss.ppm", {loss});
      write_text(dir / "config.json", ltg::to_json(cfg).dump(2) + "\n");
      std::cout << "best epoch " << res.best_epoch << "; checkpoint " << (dir / "alm.ckpt").string() << "\n";
    } else if (*tagm) {
      const auto cfg = load_pipeline(config_path, overrides);
      const auto train = load_split_instances(data_dir, "train");
      std::unique_ptr<ltg::AlmModel> alm;
      if (!alm_path.empty()) alm = ltg::load_alm(alm_path);
      const fs::path dir = ltg::resolve_output(out);
      const auto res = ltg::train_agm(train, alm.get(), cfg, seed, dir);
      for (const auto& r : res.log) std::cout << ltg::to_json(r).dump() << "\n";
      std::vector<double> loss;
      for (const auto& r : res.log) loss.push_back(r.loss);
      ltg::write_line_plot(dir / "agm_loss.ppm", {loss});
      write_text(dir / "config.json", ltg::to_json(cfg).dump(2) + "\n");
      std::cout << "best epoch " << res.best_epoch << "; checkpoint " << (dir / "agm.ckpt").string() << "\n";
    } else if (*pred) {
      const auto cfg = load_pipeline(config_path, overrides);
      const auto source = ltg::parse_selection_source(selection);
      auto scenes = maybe_corrupt(load_split_instances(data_dir, split), corrupt_rate, drop_rate,
                                  scope, corrupt_seed);
      std::unique_ptr<ltg::AlmModel> alm;
      if (!alm_path.empty()) alm = ltg::load_alm(alm_path);
      std::vector<ltg::PredictionRecord> recs;
      if (copy_only) {
        if (!alm) throw std::runtime_error("--copy needs --alm");
        recs = ltg::predict_copy(scenes, *alm, source, cfg);
      } else {
        if (agm_path.empty()) throw std::runtime_error("--agm is required unless --copy is given");
        auto agm = ltg::load_agm(agm_path);
        recs = ltg::predict(scenes, alm.get(), *agm, source, cfg);
      }
      const fs::path path = ltg::resolve_output(out);
      ltg::save_predictions(path, recs);
      std::cout << "wrote " << recs.size() << " predictions to " << path.string() << "\n";
    } else if (*ev) {
      const auto cfg = load_pipeline(config_path, overrides);
      const auto scenes = load_split_instances(data_dir, split);
      const auto recs = ltg::load_predictions(predictions);
      const auto report = ltg::evaluate_run(recs, scenes, cfg.anls_threshold);
      const std::string table = ltg::format_table(report);
      std::cout << table;
      if (!out.empty()) {
        const fs::path dir = ltg::resolve_output(out);
        write_text(dir / "report.json", ltg::to_json(report).dump(2) + "\n");
        write_text(dir / "report.txt", table);
      }
    } else if (*abl) {
      const auto cfg = load_pipeline(config_path, overrides);
      const auto data = ltg::load_dataset(data_dir);
      ltg::AblationOptions opts;
      opts.seeds = seeds;
      opts.denoise_char_sub_rate = denoise_rate;
      opts.out_dir = fs::path(out);
      opts.verbose = true;
      const auto res = ltg::run_ablation(data, cfg, opts);
      std::cout << ltg::format_ablation_table(res);
      if (denoise_rate > 0.0)
        std::cout << "denoise exact match: generator " << res.denoise_generator_em.mean
                  << ", copy-only " << res.denoise_copy_em.mean << "\n";
    } else if (*gc) {
      bool ok = true;
      for (const char* which : {"locator", "generator"}) {
        const auto r = std::string(which) == "locator" ? ltg::gradcheck_alm(seed, coords, eps)
                                                       : ltg::gradcheck_agm(seed, coords, eps);
        const bool pass = r.max_rel_error <= tol;
        ok = ok && pass;
        std::cout << which << " loss: " << r.coordinates << " coordinates, max relative error "
                  << r.max_rel_error << " at " << r.worst_param << (pass ? " PASS" : " FAIL") << "\n";
      }
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "ltg: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
