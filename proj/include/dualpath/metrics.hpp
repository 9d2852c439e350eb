#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "dualpath/tensor.hpp"

namespace dualpath {

// counts[true][pred] over {Male, Female, Unknown}.
struct ConfusionMatrix3 {
  std::array<std::array<std::size_t, 3>, 3> counts{};
  std::size_t total() const;
  std::size_t trace() const;
};

// Argmax per row; ties go to the lowest class index.
std::vector<int> classify(const Tensor& logits);
// softmax(logits)[:, Female] per row.
std::vector<double> p_female(const Tensor& logits);

struct CoreMetrics {
  double accuracy = 0.0;
  double balanced_accuracy = 0.0;  // mean recall over classes present in the labels
  double macro_f1 = 0.0;           // mean over classes present in labels or predictions
  double macro_precision = 0.0;
  double weighted_recall = 0.0;
  ConfusionMatrix3 confusion;
};

// Throws EvaluationError on empty or mismatched input, LabelError on a class
// outside {0,1,2}.
CoreMetrics core_metrics(std::span<const int> preds, std::span<const int> labels);

// Mann-Whitney statistic with Female as positive, midranks for ties.
// Throws EvaluationError when either side is empty.
double auc_female_vs_rest(std::span<const double> scores, std::span<const int> labels);

struct OperatingPoint {
  double tpr = 0.0;  // P(score > tau | Female)
  double tnr = 0.0;  // P(score <= tau | rest)
};
OperatingPoint operating_point(std::span<const double> scores, std::span<const int> labels, double tau = 0.5);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};
// Thresholds swept from high to low; starts at (0,0) and ends at (1,1).
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels);
void write_roc_csv(std::ostream& out, const std::vector<RocPoint>& points);

// ---- stratification -------------------------------------------------------

struct SampleMeta {
  std::optional<double> angle_deg;
  std::optional<double> distance_m;
  std::optional<double> height_m;
};

inline constexpr const char* kUnbinned = "unbinned";

// Left-open, right-closed bins over the given ascending edges, e.g. edges
// {20,40,80} with symbol "D" -> "D<=20", "20<D<=40", "40<D<=80", "D>80".
std::string bin_label(double value, const std::vector<double>& edges, const std::string& symbol);

// Nadir (90 degrees) strata use height, every other angle uses distance.
struct StratumKey {
  std::string group;  // e.g. "30deg", or "unbinned"
  std::string range;  // e.g. "20<D<=40", or "unbinned"
};
StratumKey bin_metadata(const SampleMeta& meta, const std::vector<double>& edges = {20.0, 40.0, 80.0});

struct StratumReport {
  StratumKey key;
  std::optional<double> mu_female;  // mean p_female over true Female
  std::optional<double> mu_male;    // mean p_female over true Male
  std::optional<double> tpr, tnr, auc;  // undefined when a side is empty
  std::size_t n = 0, n_female = 0, n_male = 0;
};

// One report per non-empty stratum, ordered by angle then bin, unbinned last.
std::vector<StratumReport> stratified_report(std::span<const double> scores, std::span<const int> labels,
                                             std::span<const SampleMeta> meta, double tau = 0.5,
                                             const std::vector<double>& edges = {20.0, 40.0, 80.0});

// Columns: group,range,mu_F,mu_M,TPR,TNR,AUC,n. Undefined cells are "NA".
void write_strata_csv(std::ostream& out, const std::vector<StratumReport>& reports);

}  // namespace dualpath
