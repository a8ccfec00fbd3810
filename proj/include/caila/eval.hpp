#pragma once

#include <span>
#include <string>
#include <vector>

#include "caila/data.hpp"
#include "caila/encoder.hpp"
#include "caila/types.hpp"

namespace caila {

World world_from_name(const std::string& name);  // ConfigError on anything else

/// One evaluation instance: an image and its true composition.
struct EvalSample {
  Image image;
  PairLabel label;
};

/// Dense compatibility scores of every sample against every candidate
/// composition. "Unseen" means "not in the seen label set": in the open
/// world, compositions outside both lists count as unseen.
struct ScoreMatrix {
  std::vector<PairLabel> row_labels;
  std::vector<bool> row_unseen;
  std::vector<PairLabel> col_pairs;
  std::vector<bool> col_unseen;
  std::vector<double> values;  // rows x cols, row-major
  World world = World::Closed;

  int rows() const { return int(row_labels.size()); }
  int cols() const { return int(col_pairs.size()); }
  double at(int r, int c) const { return values[std::size_t(r) * std::size_t(cols()) + std::size_t(c)]; }
  double& at(int r, int c) { return values[std::size_t(r) * std::size_t(cols()) + std::size_t(c)]; }

  /// Internal consistency: sizes agree, columns unique, every row label is a
  /// column and carries that column's flag.
  void validate() const;
};

struct CurvePoint {
  double bias = 0;
  double seen_acc = 0;
  double unseen_acc = 0;
};

struct EvalReport {
  double auc = 0;
  double best_hm = 0;
  double best_seen = 0;
  double best_unseen = 0;
  std::vector<CurvePoint> curve;
  World world = World::Closed;
  int candidate_count = 0;
};

/// Scores every sample against the world's candidate set (no filtering).
/// Sample labels outside the candidate set are a contract violation.
ScoreMatrix score_all(const ModelParams& model, std::span<const EvalSample> samples,
                      const LabelSpace& ls, World world);

/// Per-row (max seen score - max unseen score) gaps, sorted unique, plus the
/// midpoint of every adjacent gap pair, with -inf and +inf sentinels for the
/// unseen-only and seen-only regimes. Accuracies change only where some row
/// crosses its gap, but the at-gap tie can resolve toward either group (the
/// argmax prefers the lowest column index), so the strict interior between
/// gaps carries its own operating point: the midpoints capture it. Requires
/// at least one column of each flag.
std::vector<double> bias_candidates(const ScoreMatrix& m);

/// For each bias: add it to every unseen column, predict by argmax (ties to
/// the lowest column index; the infinite sentinels restrict the argmax to one
/// column group) and measure accuracy per row group. Requires both row
/// groups; biases must be sorted.
std::vector<CurvePoint> sweep(const ScoreMatrix& m, std::span<const double> biases);

/// Area under unseen_acc as a function of seen_acc: points collapsed to the
/// best unseen per distinct seen value, extended with (0, best_unseen),
/// integrated by trapezoids over [0, max seen_acc]. At least 2 points.
double auc(std::span<const CurvePoint> curve);

/// 2ab/(a+b) with the defined limit 0 at a = b = 0.
double harmonic_mean(double a, double b);
double best_hm(std::span<const CurvePoint> curve);

/// Full protocol: candidate biases -> sweep -> AUC and the best points.
EvalReport evaluate(const ScoreMatrix& m);

/// Independent reference: thresholds from ALL seen/unseen score gaps of every
/// row plus midpoints, accuracies recomputed directly, area by midpoint
/// rectangles (exact on the polyline). Accepts single-group matrices (the
/// empty group scores 0). Guarded to 50x50.
EvalReport oracle_eval(const ScoreMatrix& m);

/// `key = value` lines: auc, best_hm, best_seen, best_unseen as raw
/// fractions, plus world and candidate_count.
void save_report(const EvalReport& r, const std::string& path);

/// Header `bias,seen_acc,unseen_acc`, one comma-separated point per line,
/// sentinels as -inf/inf. Round-trips exactly.
void save_curve(std::span<const CurvePoint> curve, const std::string& path);
std::vector<CurvePoint> load_curve(const std::string& path);

/// Fraction as a percentage with one decimal, ties to even ("42.4").
std::string format_percent(double fraction);

}  // namespace caila
