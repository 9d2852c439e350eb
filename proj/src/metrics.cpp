#include "dualpath/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "dualpath/errors.hpp"

namespace dualpath {

namespace {

constexpr int kFemaleClass = 1;

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw EvaluationError(std::string(what) + ": " + std::to_string(a) + " scores for " +
                                    std::to_string(b) + " labels");
  if (a == 0) throw EvaluationError(std::string(what) + ": empty input");
}

std::string format_number(double v) {
  std::ostringstream s;
  s << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return s.str();
}

std::string format_edge(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

std::size_t bin_index(double value, const std::vector<double>& edges) {
  std::size_t i = 0;
  while (i < edges.size() && value > edges[i]) ++i;
  return i;
}

bool is_nadir(double angle) { return std::abs(angle - 90.0) < 1e-9; }

// The measurement that bins a sample: height at nadir, distance otherwise.
std::optional<double> binning_value(const SampleMeta& meta) {
  if (!meta.angle_deg) return std::nullopt;
  return is_nadir(*meta.angle_deg) ? meta.height_m : meta.distance_m;
}

}  // namespace

std::size_t ConfusionMatrix3::total() const {
  std::size_t t = 0;
  for (const auto& row : counts)
    for (auto c : row) t += c;
  return t;
}

std::size_t ConfusionMatrix3::trace() const { return counts[0][0] + counts[1][1] + counts[2][2]; }

std::vector<int> classify(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("classify expects [B,K] logits, got " + shape_str(logits.shape()));
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  std::vector<int> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k)
      if (logits[b * K + k] > logits[b * K + best]) best = k;
    out[b] = static_cast<int>(best);
  }
  return out;
}

std::vector<double> p_female(const Tensor& logits) {
  if (logits.rank() != 2 || logits.dim(1) != 3) {
    throw DimensionError("p_female expects [B,3] logits, got " + shape_str(logits.shape()));
  }
  const std::size_t B = logits.dim(0);
  std::vector<double> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    const double m = std::max({logits[b * 3], logits[b * 3 + 1], logits[b * 3 + 2]});
    double z = 0.0;
    for (std::size_t k = 0; k < 3; ++k) z += std::exp(logits[b * 3 + k] - m);
    out[b] = std::exp(logits[b * 3 + 1] - m) / z;
  }
  return out;
}

CoreMetrics core_metrics(std::span<const int> preds, std::span<const int> labels) {
  check_lengths(preds.size(), labels.size(), "core_metrics");
  CoreMetrics m;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] < 0 || labels[i] > 2 || preds[i] < 0 || preds[i] > 2) {
      throw LabelError("gender class outside {0,1,2} at index " + std::to_string(i));
    }
    ++m.confusion.counts[labels[i]][preds[i]];
  }
  const auto& c = m.confusion.counts;
  const double n = static_cast<double>(preds.size());
  m.accuracy = static_cast<double>(m.confusion.trace()) / n;

  double recall_sum = 0.0, f1_sum = 0.0, precision_sum = 0.0, weighted = 0.0;
  int present = 0, seen = 0;
  for (int k = 0; k < 3; ++k) {
    const std::size_t support = c[k][0] + c[k][1] + c[k][2];
    const std::size_t predicted = c[0][k] + c[1][k] + c[2][k];
    const auto tp = static_cast<double>(c[k][k]);
    const double recall = support ? tp / static_cast<double>(support) : 0.0;
    const double precision = predicted ? tp / static_cast<double>(predicted) : 0.0;
    if (support) {
      recall_sum += recall;
      weighted += recall * static_cast<double>(support) / n;
      ++present;
    }
    if (support || predicted) {
      precision_sum += precision;
      f1_sum += precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
      ++seen;
    }
  }
  m.balanced_accuracy = recall_sum / present;
  m.macro_f1 = f1_sum / seen;
  m.macro_precision = precision_sum / seen;
  m.weighted_recall = weighted;
  return m;
}

double auc_female_vs_rest(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores.size(), labels.size(), "auc");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] == kFemaleClass) {
        positive_rank_sum += midrank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) {
    throw EvaluationError("AUC undefined: need both Female and non-Female samples");
  }
  const double np = static_cast<double>(positives), nn = static_cast<double>(negatives);
  return (positive_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

OperatingPoint operating_point(std::span<const double> scores, std::span<const int> labels, double tau) {
  check_lengths(scores.size(), labels.size(), "operating_point");
  std::size_t pos = 0, neg = 0, tp = 0, tn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] == kFemaleClass) {
      ++pos;
      tp += scores[i] > tau;
    } else {
      ++neg;
      tn += scores[i] <= tau;
    }
  }
  if (pos == 0 || neg == 0) throw EvaluationError("operating point undefined: need both Female and non-Female");
  return {static_cast<double>(tp) / static_cast<double>(pos), static_cast<double>(tn) / static_cast<double>(neg)};
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores.size(), labels.size(), "roc_curve");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::size_t pos = 0;
  for (int y : labels) pos += y == kFemaleClass;
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw EvaluationError("ROC undefined: need both Female and non-Female");
  std::vector<RocPoint> pts{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == kFemaleClass ? tp : fp)++;
      ++j;
    }
    pts.push_back({static_cast<double>(fp) / static_cast<double>(neg), static_cast<double>(tp) / static_cast<double>(pos)});
    i = j;
  }
  return pts;
}

void write_roc_csv(std::ostream& out, const std::vector<RocPoint>& points) {
  out << "fpr,tpr\n";
  for (const auto& p : points) out << format_number(p.fpr) << ',' << format_number(p.tpr) << '\n';
}

std::string bin_label(double value, const std::vector<double>& edges, const std::string& symbol) {
  if (edges.empty()) return symbol;
  const std::size_t i = bin_index(value, edges);
  if (i == 0) return symbol + "<=" + format_edge(edges[0]);
  if (i == edges.size()) return symbol + ">" + format_edge(edges.back());
  return format_edge(edges[i - 1]) + "<" + symbol + "<=" + format_edge(edges[i]);
}

StratumKey bin_metadata(const SampleMeta& meta, const std::vector<double>& edges) {
  if (!meta.angle_deg) return {kUnbinned, kUnbinned};
  const std::string group = format_edge(*meta.angle_deg) + "deg";
  const auto value = binning_value(meta);
  if (!value) return {group, kUnbinned};
  return {group, bin_label(*value, edges, is_nadir(*meta.angle_deg) ? "H" : "D")};
}

std::vector<StratumReport> stratified_report(std::span<const double> scores, std::span<const int> labels,
                                             std::span<const SampleMeta> meta, double tau,
                                             const std::vector<double>& edges) {
  check_lengths(scores.size(), labels.size(), "stratified_report");
  if (meta.size() != scores.size()) throw EvaluationError("stratified_report: metadata length mismatch");

  // Sort key: (angle or +inf, bin index or past-the-end).
  using Order = std::pair<double, std::size_t>;
  std::map<Order, std::vector<std::size_t>> members;
  std::map<Order, StratumKey> keys;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto key = bin_metadata(meta[i], edges);
    Order order{std::numeric_limits<double>::infinity(), edges.size() + 1};
    if (meta[i].angle_deg) order.first = *meta[i].angle_deg;
    if (auto value = binning_value(meta[i])) order.second = bin_index(*value, edges);
    members[order].push_back(i);
    keys[order] = key;
  }

  std::vector<StratumReport> reports;
  for (const auto& [order, idx] : members) {
    StratumReport r;
    r.key = keys[order];
    r.n = idx.size();
    std::vector<double> s;
    std::vector<int> y;
    double sum_f = 0.0, sum_m = 0.0;
    for (auto i : idx) {
      s.push_back(scores[i]);
      y.push_back(labels[i]);
      if (labels[i] == kFemaleClass) {
        ++r.n_female;
        sum_f += scores[i];
      } else if (labels[i] == 0) {
        ++r.n_male;
        sum_m += scores[i];
      }
    }
    if (r.n_female) r.mu_female = sum_f / static_cast<double>(r.n_female);
    if (r.n_male) r.mu_male = sum_m / static_cast<double>(r.n_male);
    if (r.n_female > 0 && r.n_female < r.n) {
      auto op = operating_point(s, y, tau);
      r.tpr = op.tpr;
      r.tnr = op.tnr;
      r.auc = auc_female_vs_rest(s, y);
    }
    reports.push_back(std::move(r));
  }
  return reports;
}

void write_strata_csv(std::ostream& out, const std::vector<StratumReport>& reports) {
  auto cell = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string("NA"); };
  out << "group,range,mu_F,mu_M,TPR,TNR,AUC,n\n";
  for (const auto& r : reports) {
    out << r.key.group << ',' << r.key.range << ',' << cell(r.mu_female) << ',' << cell(r.mu_male) << ','
        << cell(r.tpr) << ',' << cell(r.tnr) << ',' << cell(r.auc) << ',' << r.n << '\n';
  }
}

}  // namespace dualpath
