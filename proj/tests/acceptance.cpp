// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Optional arguments restrict the run to the named criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include <sys/wait.h>

#include "ltg/alm.hpp"
#include "ltg/evalsuite.hpp"
#include "ltg/geometry.hpp"
#include "ltg/harness.hpp"
#include "ltg/preprocess.hpp"
#include "support.hpp"

namespace {

using namespace ltg;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Outcome geometry() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  bool unions_ok = true;
  for (int i = 0; i < 1000; ++i) {
    const BBox a = testing::random_box(rng), b = testing::random_box(rng);
    const auto r = testing::raster_overlap(a, b, rng, 512);
    worst = std::max({worst, std::abs(iou(a, b) - r.iou), std::abs(giou(a, b) - r.giou),
                      std::abs(iou_hat(a, b) - r.iou_hat)});
    const BBox u = union_box(a, b);
    unions_ok = unions_ok && u == union_box(b, a) && union_box(u, u) == u && union_box(a, a) == a &&
                u.x1 <= std::min(a.x1, b.x1) && u.y1 <= std::min(a.y1, b.y1) &&
                u.x2 >= std::max(a.x2, b.x2) && u.y2 >= std::max(a.y2, b.y2);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {worst <= 0.01 && unions_ok && secs < 60.0,
          fmt("max |analytic - raster| %.4f (tol 0.01), union properties %s, %.1fs (limit 60s)", worst,
              unions_ok ? "hold" : "violated", secs)};
}

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const GradCheckResult a = gradcheck_alm(1, 100, 1e-4), g = gradcheck_agm(1, 100, 1e-4);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {a.coordinates >= 100 && g.coordinates >= 100 && a.max_rel_error <= 1e-4 && g.max_rel_error <= 1e-4 &&
              secs < 300.0,
          fmt("locator %zu coords max rel err %.2e, generator %zu coords max rel err %.2e (tol 1e-4), %.1fs "
              "(limit 300s)",
              a.coordinates, a.max_rel_error, g.coordinates, g.max_rel_error, secs)};
}

Outcome mixture() {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int violations = 0;
  for (int draw = 0; draw < 10000; ++draw) {
    const std::vector<double> pv = {u(rng), u(rng), u(rng)}, pl = {u(rng), u(rng), u(rng)};
    const auto pw = mix_probs(u(rng), pv, pl);
    if (mix_probs(1.0, pv, pl) != pv || mix_probs(0.0, pv, pl) != pl) ++violations;
    for (std::size_t i = 0; i < pv.size(); ++i)
      if (pw[i] < std::min(pv[i], pl[i]) || pw[i] > std::max(pv[i], pl[i])) ++violations;
  }
  return {violations == 0, fmt("%d violations over 10000 draws", violations)};
}

Outcome metrics() {
  std::mt19937_64 rng(11);
  int lev_mismatch = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::string a = testing::random_string(rng, 16), b = testing::random_string(rng, 16);
    if (levenshtein(a, b) != testing::reference_levenshtein(a, b)) ++lev_mismatch;
  }
  const double s = anls("states of america", {"united states of america"});
  const double anls_err = std::abs(s - (1.0 - 7.0 / 24.0));
  auto golds = [](int k) {
    std::vector<std::string> g(10, "other");
    std::fill_n(g.begin(), k, std::string("fire"));
    return g;
  };
  bool vqa_ok = vqa_accuracy("fire", golds(0)) == 0.0 && vqa_accuracy("fire", golds(1)) == 1.0 / 3.0;
  for (int k = 3; k <= 10; ++k) vqa_ok = vqa_ok && vqa_accuracy("fire", golds(k)) == 1.0;
  return {lev_mismatch == 0 && anls_err <= 1e-9 && vqa_ok,
          fmt("levenshtein mismatches %d/1000, anls error %.1e (tol 1e-9), vqa cases %s", lev_mismatch, anls_err,
              vqa_ok ? "exact" : "wrong")};
}

Outcome preprocessing() {
  const Dataset data = generate_dataset(WorldConfig{}, 2024);
  int copy_instances = 0, untagged = 0;
  for (const auto& s : data.train) {
    if (!requires_copy(parse_template(s.template_name))) continue;
    ++copy_instances;
    if (build_targets(s.answer_tokens, s.tokens).matched.empty()) ++untagged;
  }
  std::mt19937_64 rng(5);
  int union_mismatch = 0;
  for (int i = 0; i < 1000; ++i) {
    const BBox bk = testing::random_box(rng, 0.0), bl = testing::random_box(rng, 0.0);
    const auto t = build_targets({"united", "states"}, {SceneTextToken{"united", bk, {}}, SceneTextToken{"states", bl, {}}});
    const BBox expected{std::min(bk.x1, bl.x1), std::min(bk.y1, bl.y1), std::max(bk.x2, bl.x2),
                        std::max(bk.y2, bl.y2)};
    if (t.answer_box != expected) ++union_mismatch;
  }
  return {copy_instances > 0 && untagged == 0 && union_mismatch == 0,
          fmt("%d/%d copy-template training instances untagged, two-token union mismatches %d/1000", untagged,
              copy_instances, union_mismatch)};
}

struct AblationOutcomes {
  Outcome trend;
  Outcome denoise;
};

AblationOutcomes ablation() {
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset data = generate_dataset(WorldConfig{}, 2024);
  AblationOptions opts;
  opts.seeds = {1, 2, 3};
  opts.denoise_char_sub_rate = 0.2;
  opts.verbose = true;
  const AblationResult r = run_ablation(data, PipelineConfig{}, opts);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << format_ablation_table(r);
  const double none = r.accuracy.at("None").mean, v = r.accuracy.at("V").mean, l = r.accuracy.at("L").mean,
               vl = r.accuracy.at("V+L").mean;
  const double pt = 0.01;
  const bool trend = vl >= v + pt && vl >= l + pt && v >= none + pt && l >= none + pt;
  AblationOutcomes out;
  out.trend = {trend && secs <= 3600.0,
               fmt("accuracy None %.2f, V %.2f, L %.2f, V+L %.2f (3 seeds, margins >= 1 point), %.0fs (limit 3600s)",
                   100 * none, 100 * v, 100 * l, 100 * vl, secs)};
  const double gap = r.denoise_generator_em.mean - r.denoise_copy_em.mean;
  out.denoise = {gap >= 0.05,
                 fmt("corrupted-answer EM generator %.2f vs copy-only %.2f, gap %.2f points (need >= 5)",
                     100 * r.denoise_generator_em.mean, 100 * r.denoise_copy_em.mean, 100 * gap)};
  return out;
}

int run(const std::string& cmd) {
  const int st = std::system((cmd + " > /dev/null 2>&1").c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string cli_pipeline(const fs::path& root) {
  fs::remove_all(root);
  const std::string ltg = LTG_CLI_PATH;
  const std::string d = (root / "data").string(), m = (root / "run").string();
  const std::string train = " --set alm_train.epochs=2 --set agm_train.epochs=2 --seed 4";
  if (run(ltg + " gen-data --seed 9 --out " + d + " --set n_train=200 --set n_test=50") != 0 ||
      run(ltg + " train-alm --data " + d + " --out " + m + train) != 0 ||
      run(ltg + " train-agm --data " + d + " --alm " + m + "/alm.ckpt --out " + m + train) != 0 ||
      run(ltg + " predict --data " + d + " --alm " + m + "/alm.ckpt --agm " + m + "/agm.ckpt --out " + m +
          "/pred.jsonl") != 0 ||
      run(ltg + " eval --data " + d + " --predictions " + m + "/pred.jsonl --out " + m) != 0)
    return {};
  std::string all;
  for (const char* f : {"alm_log.jsonl", "agm_log.jsonl", "alm.ckpt", "agm.ckpt", "pred.jsonl", "report.json"})
    all += slurp(fs::path(m) / f);
  return all;
}

Outcome determinism() {
  const fs::path base = fs::temp_directory_path() / "ltg_acceptance";
  const std::string a = cli_pipeline(base / "a"), b = cli_pipeline(base / "b");
  if (a.empty() || b.empty()) return {false, "CLI pipeline failed"};
  return {a == b, fmt("two CLI pipeline runs: logs, checkpoints, predictions and reports %s (%zu bytes)",
                      a == b ? "identical" : "differ", a.size())};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<std::string> only(argv + 1, argv + argc);
  auto wanted = [&](const std::string& n) { return only.empty() || only.count(n) > 0; };
  int failures = 0;
  auto report = [&](const std::string& name, const Outcome& o) {
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    failures += o.pass ? 0 : 1;
  };
  const std::vector<std::pair<std::string, std::function<Outcome()>>> simple = {
      {"geometry", geometry}, {"gradients", gradients}, {"mixture", mixture}, {"metrics", metrics},
      {"preprocessing", preprocessing}};
  for (const auto& [name, fn] : simple)
    if (wanted(name)) report(name, fn());
  if (wanted("ablation") || wanted("denoising")) {
    const AblationOutcomes a = ablation();
    if (wanted("ablation")) report("ablation", a.trend);
    if (wanted("denoising")) report("denoising", a.denoise);
  }
  if (wanted("determinism")) report("determinism", determinism());
  return failures == 0 ? 0 : 1;
}
