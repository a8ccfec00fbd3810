#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "caila/data.hpp"
#include "caila/encoder.hpp"
#include "caila/error.hpp"
#include "caila/eval.hpp"
#include "caila/util.hpp"

using namespace caila;

namespace fs = std::filesystem;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("caila_eval_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(bool(f));
  return std::string(std::istreambuf_iterator<char>(f), {});
}

/// Matrix with one seen column (0,0) and one unseen column (0,1); row truth
/// flags follow the labels. Values are dyadic so tie arithmetic is exact.
ScoreMatrix two_column_matrix(const std::vector<std::pair<bool, std::pair<double, double>>>& rows) {
  ScoreMatrix m;
  m.col_pairs = {{0, 0}, {0, 1}};
  m.col_unseen = {false, true};
  for (const auto& [unseen, sv] : rows) {
    m.row_labels.push_back(unseen ? PairLabel{0, 1} : PairLabel{0, 0});
    m.row_unseen.push_back(unseen);
    m.values.push_back(sv.first);
    m.values.push_back(sv.second);
  }
  return m;
}

/// Random matrix with unique columns, both column groups, and at least one
/// row of each truth group. Quantized scores land on the 1/8 grid so exact
/// ties occur often and tie-breaking is exercised in every code path.
ScoreMatrix random_matrix(Rng& rng, bool quantized) {
  const int n_seen = 1 + rng.uniform_int(5);
  const int n_unseen = 1 + rng.uniform_int(3);
  const int cols = n_seen + n_unseen;

  ScoreMatrix m;
  for (int c = 0; c < cols; ++c) {
    m.col_pairs.push_back({c, 0});
    m.col_unseen.push_back(c >= n_seen);
  }
  // Shuffle the columns so seen/unseen flags are interleaved.
  for (int c = cols - 1; c > 0; --c) {
    const int j = rng.uniform_int(c + 1);
    std::swap(m.col_pairs[std::size_t(c)], m.col_pairs[std::size_t(j)]);
    std::swap(m.col_unseen[std::size_t(c)], m.col_unseen[std::size_t(j)]);
  }

  auto any_col = [&](bool unseen) {
    for (int c = 0; c < cols; ++c)
      if (m.col_unseen[std::size_t(c)] == unseen) return m.col_pairs[std::size_t(c)];
    REQUIRE(false);
    return PairLabel{};
  };

  const int rows = 3 + rng.uniform_int(8);
  for (int r = 0; r < rows; ++r) {
    PairLabel label;
    if (r == 0)
      label = any_col(false);
    else if (r == 1)
      label = any_col(true);
    else
      label = m.col_pairs[std::size_t(rng.uniform_int(cols))];
    int c = int(std::find(m.col_pairs.begin(), m.col_pairs.end(), label) - m.col_pairs.begin());
    m.row_labels.push_back(label);
    m.row_unseen.push_back(m.col_unseen[std::size_t(c)]);
  }

  for (int i = 0; i < rows * cols; ++i)
    m.values.push_back(quantized ? (rng.uniform_int(17) - 8) / 8.0 : rng.uniform(-1.0, 1.0));
  m.validate();
  return m;
}

bool same_point(const CurvePoint& a, const CurvePoint& b) {
  return a.bias == b.bias && a.seen_acc == b.seen_acc && a.unseen_acc == b.unseen_acc;
}

}  // namespace

TEST_CASE("score matrix validation rejects inconsistent layouts") {
  ScoreMatrix good = two_column_matrix({{false, {0.5, 0.25}}, {true, {0.25, 0.5}}});
  good.validate();

  ScoreMatrix m = good;
  m.values.pop_back();
  CHECK_THROWS_AS(m.validate(), ShapeError);

  m = good;
  m.col_pairs[1] = m.col_pairs[0];  // duplicate column
  CHECK_THROWS_AS(m.validate(), ValueError);

  m = good;
  m.row_labels[0] = {3, 3};  // label is not a column
  CHECK_THROWS_AS(m.validate(), ValueError);

  m = good;
  m.row_unseen[0] = true;  // flag contradicts the label's column
  CHECK_THROWS_AS(m.validate(), ValueError);

  m = good;
  m.values[0] = std::nan("");
  CHECK_THROWS_AS(m.validate(), ValueError);

  m = good;
  m.row_labels.clear();
  m.row_unseen.clear();
  m.values.clear();
  CHECK_THROWS_AS(m.validate(), ValueError);
}

TEST_CASE("hand-checked sweep: ties go to the lowest column index") {
  // Row 0 (truth seen):   seen 0.875, unseen 0.375 -> gap 0.5
  // Row 1 (truth unseen): seen 0.625, unseen 0.75  -> gap -0.125
  ScoreMatrix m = two_column_matrix({{false, {0.875, 0.375}}, {true, {0.625, 0.75}}});

  std::vector<double> cand = bias_candidates(m);
  REQUIRE(cand.size() == 5);
  CHECK(cand[0] == -kInf);
  CHECK(cand[1] == -0.125);
  CHECK(cand[2] == 0.1875);  // midpoint between the two gaps
  CHECK(cand[3] == 0.5);
  CHECK(cand[4] == kInf);

  std::vector<CurvePoint> curve = sweep(m, cand);
  REQUIRE(curve.size() == 5);
  // At b = -0.125 row 1 ties (0.625 vs 0.625): the seen column has the lower
  // index, so the unseen row stays wrong. At b = 0.5 row 0 ties and the seen
  // column wins, keeping the seen row correct.
  CHECK(same_point(curve[0], {-kInf, 1.0, 0.0}));
  CHECK(same_point(curve[1], {-0.125, 1.0, 0.0}));
  CHECK(same_point(curve[2], {0.1875, 1.0, 1.0}));
  CHECK(same_point(curve[3], {0.5, 1.0, 1.0}));
  CHECK(same_point(curve[4], {kInf, 0.0, 1.0}));

  EvalReport rep = evaluate(m);
  CHECK(rep.auc == 1.0);
  CHECK(rep.best_hm == 1.0);
  CHECK(rep.best_seen == 1.0);
  CHECK(rep.best_unseen == 1.0);
  CHECK(rep.candidate_count == 2);
  CHECK(rep.curve.size() == 5);
}

TEST_CASE("hand-checked sweep: trade-off matrix never gets both rows right") {
  // Row 0 (truth seen):   seen 0.75,  unseen 0.6875 -> gap 0.0625
  // Row 1 (truth unseen): seen 0.875, unseen 0.25   -> gap 0.625
  // No bias fixes row 1 without first flipping row 0, so best_hm is 0.
  ScoreMatrix m = two_column_matrix({{false, {0.75, 0.6875}}, {true, {0.875, 0.25}}});

  std::vector<CurvePoint> curve = sweep(m, bias_candidates(m));
  REQUIRE(curve.size() == 5);
  CHECK(same_point(curve[0], {-kInf, 1.0, 0.0}));
  CHECK(same_point(curve[1], {0.0625, 1.0, 0.0}));
  CHECK(same_point(curve[2], {0.34375, 0.0, 0.0}));  // both rows flip mid-interval
  CHECK(same_point(curve[3], {0.625, 0.0, 0.0}));
  CHECK(same_point(curve[4], {kInf, 0.0, 1.0}));

  EvalReport rep = evaluate(m);
  CHECK(rep.auc == 0.5);
  CHECK(rep.best_hm == 0.0);
  CHECK(rep.best_seen == 1.0);
  CHECK(rep.best_unseen == 1.0);
}

TEST_CASE("candidate lists contain every gap plus the midpoints between them") {
  // Identical rows collapse to a single gap, so there is nothing to bridge.
  ScoreMatrix same = two_column_matrix({{false, {0.75, 0.25}}, {true, {0.75, 0.25}}});
  CHECK(bias_candidates(same).size() == 3);  // one gap + two sentinels

  // Two distinct gaps get one midpoint between them.
  ScoreMatrix two = two_column_matrix({{false, {0.875, 0.375}}, {true, {0.625, 0.75}}});
  CHECK(bias_candidates(two).size() == 5);
}

TEST_CASE("midpoint candidates rescue operating points that ties hide") {
  // With an unseen column sitting between two seen columns, the at-gap ties
  // resolve toward opposite groups: row 0's tie keeps its (wrong) seen
  // prediction and row 1's tie flips to a (wrong) unseen prediction. Only
  // strictly between the gaps are both rows right, so a gap-only candidate
  // list would report best_hm 0 and auc 0.5 for a perfectly separable
  // matrix.
  ScoreMatrix m;
  m.col_pairs = {{0, 0}, {0, 1}, {1, 1}};
  m.col_unseen = {false, true, false};
  m.row_labels = {{0, 1}, {1, 1}};
  m.row_unseen = {true, false};
  m.values = {0.5, 0.25, 0.25,    // gap 0.25; correct only for b > 0.25
              0.25, 0.25, 0.75};  // gap 0.5; correct only for b < 0.5
  m.validate();

  std::vector<double> cand = bias_candidates(m);
  REQUIRE(cand.size() == 5);
  CHECK(cand[2] == 0.375);

  EvalReport rep = evaluate(m);
  CHECK(rep.best_hm == 1.0);
  CHECK(rep.auc == 1.0);
  EvalReport slow = oracle_eval(m);
  CHECK(slow.best_hm == 1.0);
  CHECK(std::abs(rep.auc - slow.auc) <= 1e-9);
}

TEST_CASE("sentinel biases restrict the argmax to one column group") {
  Rng rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    ScoreMatrix m = random_matrix(rng, trial % 2 == 0);
    std::vector<double> ends = {-kInf, kInf};
    std::vector<CurvePoint> curve = sweep(m, ends);
    REQUIRE(curve.size() == 2);
    CHECK(curve[0].unseen_acc == 0.0);  // unseen columns are excluded
    CHECK(curve[1].seen_acc == 0.0);    // seen columns are excluded
  }
}

TEST_CASE("sweep rejects unusable inputs") {
  ScoreMatrix m = two_column_matrix({{false, {0.5, 0.25}}, {true, {0.25, 0.5}}});
  std::vector<double> unsorted = {0.5, -0.5};
  CHECK_THROWS_AS(sweep(m, unsorted), ValueError);

  // Single-truth-group matrices have no measurable unseen accuracy. Candidate
  // extraction only inspects columns, so it still succeeds on them.
  ScoreMatrix seen_only = two_column_matrix({{false, {0.5, 0.25}}, {false, {0.25, 0.5}}});
  std::vector<double> cand = {-kInf, kInf};
  CHECK_THROWS_AS(sweep(seen_only, cand), ValueError);
  CHECK(bias_candidates(seen_only).size() == 5);  // two gaps, one midpoint, two sentinels

  // Candidate extraction also needs both column groups.
  ScoreMatrix m2 = two_column_matrix({{false, {0.5, 0.25}}, {true, {0.25, 0.5}}});
  m2.col_unseen = {false, false};
  m2.row_labels = {{0, 0}, {0, 1}};
  m2.row_unseen = {false, false};
  CHECK_THROWS_AS(bias_candidates(m2), ValueError);
}

TEST_CASE("harmonic mean spot values") {
  CHECK(harmonic_mean(0.4, 0.6) == doctest::Approx(0.48).epsilon(1e-12));
  CHECK(harmonic_mean(0.5, 0.5) == 0.5);
  CHECK(harmonic_mean(0.0, 0.7) == 0.0);
  CHECK(harmonic_mean(0.7, 0.0) == 0.0);
  CHECK(harmonic_mean(1.0, 1.0) == 1.0);

  std::vector<CurvePoint> curve = {{-1.0, 0.4, 0.6}, {0.0, 1.0, 0.0}};
  CHECK(best_hm(curve) == doctest::Approx(0.48).epsilon(1e-12));
  CHECK_THROWS_AS(best_hm(std::vector<CurvePoint>{}), ValueError);
}

TEST_CASE("area under the curve on hand-checked curves") {
  // Two extreme points: straight line from (0,1) to (1,0).
  std::vector<CurvePoint> diag = {{-kInf, 0.0, 1.0}, {kInf, 1.0, 0.0}};
  CHECK(auc(diag) == 0.5);

  // A point with both accuracies at 1 dominates the whole square.
  std::vector<CurvePoint> ideal = {{-kInf, 0.0, 1.0}, {0.0, 1.0, 1.0}, {kInf, 1.0, 0.0}};
  CHECK(auc(ideal) == 1.0);

  // Unseen accuracy never rises above zero: no area.
  std::vector<CurvePoint> flat = {{-kInf, 1.0, 0.0}, {kInf, 0.0, 0.0}};
  CHECK(auc(flat) == 0.0);

  // The left endpoint (0, best_unseen) is implied when no point reaches
  // seen = 0: a single point at (1, 1) still covers the unit square.
  std::vector<CurvePoint> no_origin = {{-1.0, 1.0, 1.0}, {1.0, 1.0, 0.5}};
  CHECK(auc(no_origin) == 1.0);

  CHECK_THROWS_AS(auc(std::vector<CurvePoint>{{0.0, 1.0, 1.0}}), ValueError);
}

TEST_CASE("area matches an independently coded trapezoid rule") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    // Random monotone five-point trade-off curve.
    std::vector<double> seen(5), unseen(5);
    for (int i = 0; i < 5; ++i) seen[i] = rng.uniform();
    for (int i = 0; i < 5; ++i) unseen[i] = rng.uniform();
    std::sort(seen.begin(), seen.end());
    std::sort(unseen.begin(), unseen.end(), std::greater<>());
    std::vector<CurvePoint> curve;
    for (int i = 0; i < 5; ++i) curve.push_back({double(i), seen[std::size_t(i)], unseen[std::size_t(i)]});

    // Reference: sort points by seen accuracy, prepend the implied left
    // endpoint, integrate segment by segment.
    std::vector<std::pair<double, double>> pts;
    double top = 0;
    for (const auto& p : curve) {
      pts.emplace_back(p.seen_acc, p.unseen_acc);
      top = std::max(top, p.unseen_acc);
    }
    pts.emplace_back(0.0, top);
    std::sort(pts.begin(), pts.end());
    double expect = 0;
    for (std::size_t i = 1; i < pts.size(); ++i)
      expect += (pts[i].first - pts[i - 1].first) * (pts[i].second + pts[i - 1].second) / 2.0;

    CHECK(auc(curve) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("sweep accuracies are monotone along the bias axis") {
  Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    ScoreMatrix m = random_matrix(rng, trial % 2 == 0);
    std::vector<CurvePoint> curve = sweep(m, bias_candidates(m));
    for (std::size_t i = 1; i < curve.size(); ++i) {
      CHECK(curve[i].seen_acc <= curve[i - 1].seen_acc + 1e-15);
      CHECK(curve[i].unseen_acc >= curve[i - 1].unseen_acc - 1e-15);
    }
    CHECK(curve.front().unseen_acc == 0.0);
    CHECK(curve.back().seen_acc == 0.0);
  }
}

TEST_CASE("evaluate agrees with the brute-force oracle on random matrices") {
  Rng rng(2026);
  for (int trial = 0; trial < 100; ++trial) {
    ScoreMatrix m = random_matrix(rng, trial % 2 == 0);
    EvalReport fast = evaluate(m);
    EvalReport slow = oracle_eval(m);
    CHECK(std::abs(fast.auc - slow.auc) <= 1e-9);
    CHECK(fast.best_seen == slow.best_seen);
    CHECK(fast.best_unseen == slow.best_unseen);
    CHECK(fast.best_hm == slow.best_hm);
    CHECK(fast.auc <= fast.best_seen + 1e-12);  // the curve lives over [0, best_seen]
    // The oracle probes a superset of biases, so its operating points cover
    // the sweep's and add nothing new.
    std::set<std::pair<double, double>> fast_pts, slow_pts;
    for (const auto& p : fast.curve) fast_pts.emplace(p.seen_acc, p.unseen_acc);
    for (const auto& p : slow.curve) slow_pts.emplace(p.seen_acc, p.unseen_acc);
    CHECK(fast_pts == slow_pts);
  }
}

TEST_CASE("a uniform score shift leaves the whole report unchanged") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    ScoreMatrix m = random_matrix(rng, true);  // dyadic scores: shifts are exact
    ScoreMatrix shifted = m;
    for (double& v : shifted.values) v += 0.5;
    EvalReport a = evaluate(m);
    EvalReport b = evaluate(shifted);
    CHECK(a.auc == b.auc);
    CHECK(a.best_hm == b.best_hm);
    CHECK(a.best_seen == b.best_seen);
    CHECK(a.best_unseen == b.best_unseen);
    REQUIRE(a.curve.size() == b.curve.size());
    for (std::size_t i = 0; i < a.curve.size(); ++i) {
      CHECK(a.curve[i].bias == b.curve[i].bias);  // gaps cancel the shift exactly
      CHECK(a.curve[i].seen_acc == b.curve[i].seen_acc);
      CHECK(a.curve[i].unseen_acc == b.curve[i].unseen_acc);
    }
  }
}

TEST_CASE("probing between candidate biases adds no operating points") {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    ScoreMatrix m = random_matrix(rng, trial % 2 == 0);
    std::vector<double> cand = bias_candidates(m);
    std::vector<double> dense = cand;
    for (std::size_t i = 2; i + 1 < cand.size(); ++i)  // skip the -inf edge
      dense.push_back(cand[i - 1] / 2.0 + cand[i] / 2.0);
    std::sort(dense.begin(), dense.end());

    std::vector<CurvePoint> sparse_curve = sweep(m, cand);
    std::vector<CurvePoint> dense_curve = sweep(m, dense);
    std::set<std::pair<double, double>> sparse_pts, dense_pts;
    for (const auto& p : sparse_curve) sparse_pts.emplace(p.seen_acc, p.unseen_acc);
    for (const auto& p : dense_curve) dense_pts.emplace(p.seen_acc, p.unseen_acc);
    CHECK(sparse_pts == dense_pts);
    CHECK(auc(sparse_curve) == auc(dense_curve));
  }
}

TEST_CASE("column order does not affect the report") {
  Rng rng(29);
  for (int trial = 0; trial < 20; ++trial) {
    ScoreMatrix m = random_matrix(rng, false);  // continuous scores: ties have measure zero
    const int cols = m.cols();
    std::vector<int> perm(m.col_pairs.size());
    for (int c = 0; c < cols; ++c) perm[std::size_t(c)] = c;
    for (int c = cols - 1; c > 0; --c) std::swap(perm[std::size_t(c)], perm[std::size_t(rng.uniform_int(c + 1))]);

    ScoreMatrix p = m;
    for (int c = 0; c < cols; ++c) {
      p.col_pairs[std::size_t(c)] = m.col_pairs[std::size_t(perm[std::size_t(c)])];
      p.col_unseen[std::size_t(c)] = m.col_unseen[std::size_t(perm[std::size_t(c)])];
      for (int r = 0; r < m.rows(); ++r) p.at(r, c) = m.at(r, perm[std::size_t(c)]);
    }
    p.validate();

    // Ties at a row's own gap resolve by column index, so individual at-gap
    // curve points may flip with the order. The midpoints bracket every gap,
    // which makes the operating-point SET and the whole report invariant.
    EvalReport a = evaluate(m);
    EvalReport b = evaluate(p);
    CHECK(a.auc == b.auc);
    CHECK(a.best_hm == b.best_hm);
    CHECK(a.best_seen == b.best_seen);
    CHECK(a.best_unseen == b.best_unseen);
    std::set<std::pair<double, double>> a_pts, b_pts;
    for (const auto& pt : a.curve) a_pts.emplace(pt.seen_acc, pt.unseen_acc);
    for (const auto& pt : b.curve) b_pts.emplace(pt.seen_acc, pt.unseen_acc);
    CHECK(a_pts == b_pts);
  }
}

TEST_CASE("oracle handles rows from a single truth group") {
  // One seen-truth row; the sweep contract refuses this, the oracle scores
  // the empty unseen group as zero accuracy.
  ScoreMatrix m = two_column_matrix({{false, {0.875, 0.375}}});
  CHECK_THROWS_AS(sweep(m, std::vector<double>{-kInf, kInf}), ValueError);

  EvalReport rep = oracle_eval(m);
  CHECK(rep.best_seen == 1.0);
  CHECK(rep.best_unseen == 0.0);
  CHECK(rep.best_hm == 0.0);
  CHECK(rep.auc == 0.0);
  CHECK(rep.curve.front().seen_acc == 1.0);
  CHECK(rep.curve.front().unseen_acc == 0.0);
  CHECK(rep.curve.back().seen_acc == 0.0);
}

TEST_CASE("oracle rejects oversized matrices") {
  ScoreMatrix m;
  m.col_pairs = {{0, 0}, {0, 1}};
  m.col_unseen = {false, true};
  for (int r = 0; r < 51; ++r) {
    m.row_labels.push_back({0, 0});
    m.row_unseen.push_back(false);
    m.values.push_back(1.0);
    m.values.push_back(0.0);
  }
  CHECK_THROWS_AS(oracle_eval(m), ValueError);
}

TEST_CASE("scoring a dataset against a model produces a consistent matrix") {
  EncoderConfig cfg;
  cfg.d = 16;
  cfg.heads = 2;
  cfg.n_vision = 3;
  cfg.n_language = 2;
  cfg.moa_layers = 1;
  cfg.reduction = 4;
  cfg.ffn_mult = 2;
  cfg.patch = 16;
  cfg.image_hw = 32;
  cfg.max_text_len = 8;

  const VocabSpec vocab = default_vocab(2, 2);
  ModelParams model(cfg, vocab, 5);

  LabelSpace ls;
  ls.vocab = vocab;
  ls.seen = {{0, 0}, {1, 1}};
  ls.unseen = {{0, 1}};
  ls.validate();

  RenderSpec spec;
  spec.image_hw = 32;
  spec.noise = 0.02f;
  spec.seed = 3;
  auto sample = [&](PairLabel p, std::uint64_t s) {
    return EvalSample{render_image(vocab.attributes[std::size_t(p.attr)],
                                   vocab.objects[std::size_t(p.obj)], spec, s),
                      p};
  };
  std::vector<EvalSample> samples = {sample({0, 0}, 1), sample({1, 1}, 2), sample({0, 1}, 3)};

  ScoreMatrix closed = score_all(model, samples, ls, World::Closed);
  REQUIRE(closed.rows() == 3);
  REQUIRE(closed.cols() == 3);  // seen pairs first, then listed unseen pairs
  CHECK(closed.col_pairs == std::vector<PairLabel>{{0, 0}, {1, 1}, {0, 1}});
  CHECK(closed.col_unseen == std::vector<bool>{false, false, true});
  CHECK(closed.row_unseen == std::vector<bool>{false, false, true});
  for (double v : closed.values) CHECK(std::abs(v) <= 1.0 + 1e-6);  // unit-vector dots

  // Scoring is deterministic.
  ScoreMatrix again = score_all(model, samples, ls, World::Closed);
  CHECK(closed.values == again.values);

  // The open world scores every attribute-object combination.
  std::vector<EvalSample> open_samples = samples;
  open_samples.push_back(sample({1, 0}, 4));
  ScoreMatrix open = score_all(model, open_samples, ls, World::Open);
  REQUIRE(open.cols() == 4);
  CHECK(open.col_pairs == std::vector<PairLabel>{{0, 0}, {0, 1}, {1, 0}, {1, 1}});
  CHECK(open.col_unseen == std::vector<bool>{false, true, true, false});
  CHECK(open.row_unseen == std::vector<bool>{false, false, true, true});
  // Closed-world scores reappear untouched in the open-world matrix.
  for (int r = 0; r < 3; ++r) {
    CHECK(open.at(r, 0) == closed.at(r, 0));
    CHECK(open.at(r, 1) == closed.at(r, 2));
    CHECK(open.at(r, 3) == closed.at(r, 1));
  }

  EvalReport rep = evaluate(open);
  CHECK(rep.world == World::Open);
  CHECK(rep.candidate_count == 4);
  CHECK(rep.auc >= 0.0);
  CHECK(rep.auc <= 1.0);

  // A label outside the closed-world candidate list is a contract violation.
  std::vector<EvalSample> bad = {sample({1, 0}, 5)};
  CHECK_THROWS_AS(score_all(model, bad, ls, World::Closed), ValueError);
  CHECK_THROWS_AS(score_all(model, std::vector<EvalSample>{}, ls, World::Closed), ValueError);

  // Model and label space must agree on the vocabulary.
  ModelParams other(cfg, default_vocab(3, 2), 5);
  CHECK_THROWS_AS(score_all(other, samples, ls, World::Closed), ValueError);
}

TEST_CASE("report and curve files round-trip") {
  fs::path dir = fresh_dir("io");

  EvalReport rep;
  rep.auc = 0.4375;
  rep.best_hm = 0.5;
  rep.best_seen = 0.75;
  rep.best_unseen = 0.625;
  rep.world = World::Open;
  rep.candidate_count = 12;
  save_report(rep, (dir / "report.txt").string());
  std::string text = slurp(dir / "report.txt");
  CHECK(text.find("auc = 0.4375\n") != std::string::npos);
  CHECK(text.find("best_hm = 0.5\n") != std::string::npos);
  CHECK(text.find("world = open\n") != std::string::npos);
  CHECK(text.find("candidate_count = 12\n") != std::string::npos);

  std::vector<CurvePoint> curve = {{-kInf, 1.0, 0.0}, {-0.125, 0.875, 0.25}, {kInf, 0.0, 1.0}};
  save_curve(curve, (dir / "curve.csv").string());
  std::vector<CurvePoint> loaded = load_curve((dir / "curve.csv").string());
  REQUIRE(loaded.size() == curve.size());
  for (std::size_t i = 0; i < curve.size(); ++i) CHECK(same_point(curve[i], loaded[i]));

  CHECK_THROWS_AS(load_curve((dir / "missing.csv").string()), IoError);

  std::ofstream((dir / "bad_header.csv").string()) << "bias,seen,unseen\n";
  CHECK_THROWS_AS(load_curve((dir / "bad_header.csv").string()), FormatError);

  std::ofstream((dir / "bad_line.csv").string()) << "bias,seen_acc,unseen_acc\n0.5,oops,1\n";
  CHECK_THROWS_AS(load_curve((dir / "bad_line.csv").string()), FormatError);

  std::ofstream((dir / "short_line.csv").string()) << "bias,seen_acc,unseen_acc\n0.5,1\n";
  CHECK_THROWS_AS(load_curve((dir / "short_line.csv").string()), FormatError);

  CHECK_THROWS_AS(save_report(rep, (dir / "no_such_dir" / "x.txt").string()), IoError);
  fs::remove_all(dir);
}

TEST_CASE("percentages format with one decimal and ties to even") {
  CHECK(format_percent(0.0) == "0.0");
  CHECK(format_percent(1.0) == "100.0");
  CHECK(format_percent(0.5) == "50.0");
  CHECK(format_percent(0.125) == "12.5");
  // Dyadic ties land exactly on x.x5 tenths: 6.25% -> 62.5 tenths -> 62
  // (down to even), 18.75% -> 187.5 tenths -> 188 (up to even).
  CHECK(format_percent(0.0625) == "6.2");
  CHECK(format_percent(0.1875) == "18.8");
  CHECK(format_percent(0.03125) == "3.1");
  CHECK_THROWS_AS(format_percent(-0.01), ValueError);
  CHECK_THROWS_AS(format_percent(std::nan("")), ValueError);
}

TEST_CASE("world names parse both ways") {
  CHECK(world_from_name("closed") == World::Closed);
  CHECK(world_from_name("open") == World::Open);
  CHECK_THROWS_AS(world_from_name("galaxy"), ConfigError);
  CHECK(std::string(world_name(World::Closed)) == "closed");
  CHECK(std::string(world_name(World::Open)) == "open");
}
