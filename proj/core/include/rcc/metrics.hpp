#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace rcc::metrics {

// Mann-Whitney AUC: probability a random positive outranks a random
// negative, ties counting 0.5. labels are 0/1; both classes required.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::int64_t support = 0;
  bool zero_division = false;

  bool operator==(const ClassMetrics&) const = default;
};

struct Prf1Result {
  std::vector<ClassMetrics> per_class;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  bool zero_division = false;  // any class hit a zero denominator

  bool operator==(const Prf1Result&) const = default;
};

Prf1Result prf1(const std::vector<int>& predictions, const std::vector<int>& labels,
                int num_classes);

// Rows are true classes, columns predicted.
std::vector<std::vector<std::int64_t>> confusion(const std::vector<int>& predictions,
                                                 const std::vector<int>& labels, int num_classes);

struct EvalReport {
  std::string task;
  std::vector<std::string> class_names;
  Prf1Result metrics;
  std::vector<std::vector<std::int64_t>> confusion_matrix;
  std::optional<double> auc;  // binary tasks only
  std::int64_t samples = 0;
  std::string config_hash;

  bool operator==(const EvalReport&) const = default;
};

EvalReport evaluate_classification(const std::string& task,
                                   const std::vector<std::string>& class_names,
                                   const std::vector<int>& predictions,
                                   const std::vector<int>& labels,
                                   const std::vector<double>* positive_scores = nullptr);

// Writes report.json plus metrics.csv / confusion.csv mirrors into dir.
// Several blocks (e.g. WSI-wise and patch-wise) share one report.
void write_report(const std::vector<EvalReport>& blocks, const std::filesystem::path& dir);
void write_report(const EvalReport& report, const std::filesystem::path& dir);
std::vector<EvalReport> load_report(const std::filesystem::path& json_path);

}  // namespace rcc::metrics
