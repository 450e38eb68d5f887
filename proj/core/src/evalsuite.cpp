#include "ltg/evalsuite.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

namespace ltg {

std::size_t levenshtein(std::string_view a, std::string_view b) {
  if (a.size() < b.size()) std::swap(a, b);
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0u : 1u)});
      diag = up;
    }
  }
  return row[b.size()];
}

std::string normalize_answer(std::string_view s) {
  std::string cleaned;
  for (char c : s) {
    const auto u = static_cast<unsigned char>(c);
    if (std::ispunct(u)) {
      cleaned.push_back(' ');
    } else {
      cleaned.push_back(static_cast<char>(std::tolower(u)));
    }
  }
  std::istringstream words(cleaned);
  std::string w;
  std::string out;
  while (words >> w) {
    if (w == "a" || w == "an" || w == "the") continue;
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

double normalized_similarity(std::string_view pred, std::string_view gold) {
  const std::string p = normalize_answer(pred);
  const std::string g = normalize_answer(gold);
  if (p.empty() && g.empty()) return 1.0;
  if (p.empty() || g.empty()) return 0.0;
  const double denom = static_cast<double>(std::max(p.size(), g.size()));
  return 1.0 - static_cast<double>(levenshtein(p, g)) / denom;
}

double anls(std::string_view pred, const std::vector<std::string>& golds, double threshold) {
  if (golds.empty()) throw std::invalid_argument("anls: no gold answers");
  double best = 0.0;
  for (const auto& g : golds) best = std::max(best, normalized_similarity(pred, g));
  return best < threshold ? 0.0 : best;
}

double vqa_accuracy(std::string_view pred, const std::vector<std::string>& golds) {
  if (golds.size() != 10)
    throw std::invalid_argument("vqa_accuracy: expected 10 gold answers, got " +
                                std::to_string(golds.size()));
  const std::string p = normalize_answer(pred);
  const auto matches = std::count_if(golds.begin(), golds.end(),
                                     [&](const std::string& g) { return normalize_answer(g) == p; });
  return std::min(static_cast<double>(matches) / 3.0, 1.0);
}

bool exact_match(std::string_view pred, const SceneInstance& scene) {
  std::string canonical;
  for (std::size_t i = 0; i < scene.answer_tokens.size(); ++i) {
    if (i) canonical += ' ';
    canonical += scene.answer_tokens[i];
  }
  return normalize_answer(pred) == normalize_answer(canonical);
}

nlohmann::json to_json(const PredictionRecord& r) {
  nlohmann::json sel = nlohmann::json::array();
  for (const auto& [i, w] : r.selected) sel.push_back({{"index", i}, {"word", w}});
  return {{"instance_id", r.instance_id},
          {"predicted_answer", r.predicted_answer},
          {"P_w", r.p_w},
          {"b_p", {r.b_p.x1, r.b_p.y1, r.b_p.x2, r.b_p.y2}},
          {"p_s", r.p_s},
          {"selected", sel}};
}

PredictionRecord prediction_from_json(const nlohmann::json& j) {
  PredictionRecord r;
  r.instance_id = j.at("instance_id").get<std::string>();
  r.predicted_answer = j.at("predicted_answer").get<std::string>();
  r.p_w = j.value("P_w", std::vector<double>{});
  if (j.contains("b_p")) {
    const auto b = j.at("b_p").get<std::vector<double>>();
    if (b.size() != 4) throw std::invalid_argument("b_p needs 4 coordinates");
    r.b_p = BBox{b[0], b[1], b[2], b[3]};
  }
  r.p_s = j.value("p_s", 0.0);
  if (j.contains("selected"))
    for (const auto& s : j.at("selected"))
      r.selected.emplace_back(s.at("index").get<int>(), s.at("word").get<std::string>());
  return r;
}

void save_predictions(const std::filesystem::path& path, const std::vector<PredictionRecord>& recs) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : recs) out << to_json(r).dump() << '\n';
}

std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open predictions file " + path.string());
  std::vector<PredictionRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(prediction_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": malformed prediction: " + e.what());
    }
  }
  return out;
}

EvalReport evaluate_run(const std::vector<PredictionRecord>& predictions,
                        const std::vector<SceneInstance>& dataset, double anls_threshold) {
  std::map<std::string, const PredictionRecord*> by_id;
  for (const auto& p : predictions) {
    if (!by_id.emplace(p.instance_id, &p).second)
      throw std::invalid_argument("duplicate prediction for id " + p.instance_id);
  }
  // Sums accumulate in dataset order so the report ignores prediction order.
  struct Acc {
    double acc = 0, anls = 0, em = 0;
    std::size_t n = 0;
  };
  Acc total;
  std::map<std::string, Acc> per;
  for (const auto& s : dataset) {
    auto it = by_id.find(s.id);
    if (it == by_id.end()) throw std::invalid_argument("missing prediction for id " + s.id);
    const std::string& pred = it->second->predicted_answer;
    const double a = vqa_accuracy(pred, s.answers);
    const double n = anls(pred, s.answers, anls_threshold);
    const double e = exact_match(pred, s) ? 1.0 : 0.0;
    for (Acc* acc : {&total, &per[s.template_name]}) {
      acc->acc += a;
      acc->anls += n;
      acc->em += e;
      ++acc->n;
    }
  }
  auto finish = [](const Acc& a) {
    MetricSummary m;
    m.count = a.n;
    if (a.n) {
      m.accuracy = a.acc / static_cast<double>(a.n);
      m.anls = a.anls / static_cast<double>(a.n);
      m.exact_match = a.em / static_cast<double>(a.n);
    }
    return m;
  };
  EvalReport r;
  r.overall = finish(total);
  for (const auto& [k, v] : per) r.per_template[k] = finish(v);
  return r;
}

namespace {
nlohmann::json summary_json(const MetricSummary& m) {
  return {{"accuracy", m.accuracy}, {"anls", m.anls}, {"exact_match", m.exact_match}, {"count", m.count}};
}
}  // namespace

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [k, v] : r.per_template) per[k] = summary_json(v);
  return {{"schema_version", kReportSchemaVersion},
          {"kind", "ltg-eval-report"},
          {"overall", summary_json(r.overall)},
          {"per_template", per}};
}

std::string format_table(const EvalReport& r) {
  std::ostringstream os;
  os << std::left << std::setw(16) << "template" << std::right << std::setw(8) << "n"
     << std::setw(10) << "accuracy" << std::setw(8) << "anls" << std::setw(8) << "em" << '\n';
  auto row = [&](const std::string& name, const MetricSummary& m) {
    os << std::left << std::setw(16) << name << std::right << std::setw(8) << m.count
       << std::fixed << std::setprecision(4) << std::setw(10) << m.accuracy << std::setw(8)
       << m.anls << std::setw(8) << m.exact_match << '\n';
  };
  for (const auto& [k, v] : r.per_template) row(k, v);
  row("overall", r.overall);
  return os.str();
}

}  // namespace ltg
