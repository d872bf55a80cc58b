#include "rcc/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "rcc/errors.hpp"
#include "rcc/version.hpp"

#include "json.hpp"

namespace rcc::metrics {

using nlohmann::json;

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw ValidationError("auc: scores/labels length mismatch");
  if (scores.empty()) throw ValidationError("auc: empty input");
  std::int64_t n_pos = 0, n_neg = 0;
  for (int l : labels) {
    if (l == 1)
      ++n_pos;
    else if (l == 0)
      ++n_neg;
    else
      throw ValidationError("auc: labels must be 0 or 1");
  }
  if (n_pos == 0 || n_neg == 0) throw ValidationError("auc: both classes must be present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Rank sum of positives with average ranks over tied scores.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
    i = j;
  }
  double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

Prf1Result prf1(const std::vector<int>& predictions, const std::vector<int>& labels,
                int num_classes) {
  auto cm = confusion(predictions, labels, num_classes);
  Prf1Result res;
  res.per_class.resize(num_classes);
  for (int c = 0; c < num_classes; ++c) {
    std::int64_t tp = cm[c][c], fp = 0, fn = 0, support = 0;
    for (int k = 0; k < num_classes; ++k) {
      if (k != c) {
        fp += cm[k][c];
        fn += cm[c][k];
      }
      support += cm[c][k];
    }
    ClassMetrics& m = res.per_class[c];
    m.support = support;
    if (tp + fp > 0)
      m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    else
      m.zero_division = true;
    if (tp + fn > 0)
      m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    else
      m.zero_division = true;
    if (m.precision + m.recall > 0)
      m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    else
      m.zero_division = true;
    res.macro_precision += m.precision;
    res.macro_recall += m.recall;
    res.macro_f1 += m.f1;
    res.zero_division = res.zero_division || m.zero_division;
  }
  res.macro_precision /= num_classes;
  res.macro_recall /= num_classes;
  res.macro_f1 /= num_classes;
  return res;
}

std::vector<std::vector<std::int64_t>> confusion(const std::vector<int>& predictions,
                                                 const std::vector<int>& labels, int num_classes) {
  if (predictions.size() != labels.size())
    throw ValidationError("confusion: predictions/labels length mismatch");
  if (num_classes <= 0) throw ValidationError("confusion: num_classes must be positive");
  std::vector<std::vector<std::int64_t>> cm(num_classes,
                                            std::vector<std::int64_t>(num_classes, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    int t = labels[i], p = predictions[i];
    if (t < 0 || t >= num_classes || p < 0 || p >= num_classes)
      throw ValidationError("confusion: class value out of range at index " + std::to_string(i));
    ++cm[t][p];
  }
  return cm;
}

EvalReport evaluate_classification(const std::string& task,
                                   const std::vector<std::string>& class_names,
                                   const std::vector<int>& predictions,
                                   const std::vector<int>& labels,
                                   const std::vector<double>* positive_scores) {
  EvalReport report;
  report.task = task;
  report.class_names = class_names;
  int num_classes = static_cast<int>(class_names.size());
  report.metrics = prf1(predictions, labels, num_classes);
  report.confusion_matrix = confusion(predictions, labels, num_classes);
  report.samples = static_cast<std::int64_t>(labels.size());
  if (positive_scores) {
    if (num_classes != 2) throw ValidationError("auc requested for non-binary task " + task);
    report.auc = auc(*positive_scores, labels);
  }
  return report;
}

namespace {

json report_to_json(const EvalReport& r) {
  json j;
  j["task"] = r.task;
  j["classes"] = r.class_names;
  j["samples"] = r.samples;
  if (r.auc)
    j["auc"] = *r.auc;
  else
    j["auc"] = nullptr;
  j["macro"] = {{"precision", r.metrics.macro_precision},
                {"recall", r.metrics.macro_recall},
                {"f1", r.metrics.macro_f1},
                {"zero_division", r.metrics.zero_division}};
  json per = json::array();
  for (std::size_t c = 0; c < r.metrics.per_class.size(); ++c) {
    const ClassMetrics& m = r.metrics.per_class[c];
    per.push_back({{"class", r.class_names[c]},
                   {"precision", m.precision},
                   {"recall", m.recall},
                   {"f1", m.f1},
                   {"support", m.support},
                   {"zero_division", m.zero_division}});
  }
  j["per_class"] = per;
  j["confusion"] = r.confusion_matrix;
  return j;
}

EvalReport report_from_json(const json& j, const std::string& config_hash) {
  EvalReport r;
  r.task = j.at("task").get<std::string>();
  r.class_names = j.at("classes").get<std::vector<std::string>>();
  r.samples = j.at("samples").get<std::int64_t>();
  if (!j.at("auc").is_null()) r.auc = j.at("auc").get<double>();
  const json& macro = j.at("macro");
  r.metrics.macro_precision = macro.at("precision").get<double>();
  r.metrics.macro_recall = macro.at("recall").get<double>();
  r.metrics.macro_f1 = macro.at("f1").get<double>();
  r.metrics.zero_division = macro.at("zero_division").get<bool>();
  for (const json& p : j.at("per_class")) {
    ClassMetrics m;
    m.precision = p.at("precision").get<double>();
    m.recall = p.at("recall").get<double>();
    m.f1 = p.at("f1").get<double>();
    m.support = p.at("support").get<std::int64_t>();
    m.zero_division = p.at("zero_division").get<bool>();
    r.metrics.per_class.push_back(m);
  }
  r.confusion_matrix = j.at("confusion").get<std::vector<std::vector<std::int64_t>>>();
  r.config_hash = config_hash;
  return r;
}

}  // namespace

void write_report(const std::vector<EvalReport>& blocks, const std::filesystem::path& dir) {
  if (blocks.empty()) throw ValidationError("write_report: no blocks");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);

  json root;
  root["version"] = kVersion;
  root["config_hash"] = blocks.front().config_hash;
  json reports = json::object();
  for (const EvalReport& b : blocks) {
    if (reports.contains(b.task)) throw ValidationError("duplicate report task " + b.task);
    reports[b.task] = report_to_json(b);
  }
  root["reports"] = reports;
  {
    std::ofstream out(dir / "report.json");
    if (!out) throw IoError("cannot write " + (dir / "report.json").string());
    out << root.dump(2) << "\n";
    if (!out) throw IoError("write failed for " + (dir / "report.json").string());
  }
  {
    std::ofstream out(dir / "metrics.csv");
    if (!out) throw IoError("cannot write " + (dir / "metrics.csv").string());
    out << "# version=" << kVersion << " config_hash=" << blocks.front().config_hash << "\n";
    out << "task,class,precision,recall,f1,support,zero_division\n";
    for (const EvalReport& b : blocks) {
      for (std::size_t c = 0; c < b.metrics.per_class.size(); ++c) {
        const ClassMetrics& m = b.metrics.per_class[c];
        out << b.task << ',' << b.class_names[c] << ',' << m.precision << ',' << m.recall << ','
            << m.f1 << ',' << m.support << ',' << (m.zero_division ? 1 : 0) << "\n";
      }
      out << b.task << ",macro," << b.metrics.macro_precision << ',' << b.metrics.macro_recall
          << ',' << b.metrics.macro_f1 << ',' << b.samples << ','
          << (b.metrics.zero_division ? 1 : 0) << "\n";
    }
    if (!out) throw IoError("write failed for " + (dir / "metrics.csv").string());
  }
  {
    std::ofstream out(dir / "confusion.csv");
    if (!out) throw IoError("cannot write " + (dir / "confusion.csv").string());
    out << "# version=" << kVersion << " config_hash=" << blocks.front().config_hash << "\n";
    for (const EvalReport& b : blocks) {
      out << "task=" << b.task << "\n";
      out << "true\\pred";
      for (const std::string& name : b.class_names) out << ',' << name;
      out << "\n";
      for (std::size_t r = 0; r < b.confusion_matrix.size(); ++r) {
        out << b.class_names[r];
        for (std::int64_t v : b.confusion_matrix[r]) out << ',' << v;
        out << "\n";
      }
      out << "\n";
    }
    if (!out) throw IoError("write failed for " + (dir / "confusion.csv").string());
  }
}

void write_report(const EvalReport& report, const std::filesystem::path& dir) {
  write_report(std::vector<EvalReport>{report}, dir);
}

std::vector<EvalReport> load_report(const std::filesystem::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw MissingArtifactError("report not found: " + json_path.string());
  json root = json::parse(in);
  std::string config_hash = root.value("config_hash", "");
  std::vector<EvalReport> blocks;
  for (const auto& [task, j] : root.at("reports").items()) {
    (void)task;
    blocks.push_back(report_from_json(j, config_hash));
  }
  return blocks;
}

}  // namespace rcc::metrics
