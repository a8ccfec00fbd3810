#include "caila/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

namespace caila {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string pair_str(PairLabel p) {
  return "(a=" + std::to_string(p.attr) + ", o=" + std::to_string(p.obj) + ")";
}

}  // namespace

World world_from_name(const std::string& name) {
  if (name == "closed") return World::Closed;
  if (name == "open") return World::Open;
  throw ConfigError("unknown world '" + name + "' (expected closed or open)");
}

void ScoreMatrix::validate() const {
  if (row_labels.empty()) throw ValueError("score matrix has no rows");
  if (col_pairs.empty()) throw ValueError("score matrix has no columns");
  if (row_unseen.size() != row_labels.size() || col_unseen.size() != col_pairs.size() ||
      values.size() != row_labels.size() * col_pairs.size())
    throw ShapeError("score matrix field sizes disagree");
  std::set<PairLabel> cols(col_pairs.begin(), col_pairs.end());
  if (cols.size() != col_pairs.size()) throw ValueError("score matrix has duplicate columns");
  for (double v : values)
    if (!std::isfinite(v)) throw ValueError("score matrix contains a non-finite value");
  for (int r = 0; r < rows(); ++r) {
    auto it = std::find(col_pairs.begin(), col_pairs.end(), row_labels[std::size_t(r)]);
    if (it == col_pairs.end())
      throw ValueError("row label " + pair_str(row_labels[std::size_t(r)]) +
                       " is not a candidate column");
    const auto c = std::size_t(it - col_pairs.begin());
    if (row_unseen[std::size_t(r)] != col_unseen[c])
      throw ValueError("row " + std::to_string(r) + " flag disagrees with its label's column");
  }
}

ScoreMatrix score_all(const ModelParams& model, std::span<const EvalSample> samples,
                      const LabelSpace& ls, World world) {
  ls.validate();
  if (samples.empty()) throw ValueError("score_all: no samples");
  if (model.vocab().attributes != ls.vocab.attributes || model.vocab().objects != ls.vocab.objects)
    throw ValueError("score_all: model and label space use different vocabularies");

  ScoreMatrix m;
  m.world = world;
  m.col_pairs = ls.candidates(world);
  std::unordered_map<PairLabel, int, PairLabelHash> col_of;
  for (int c = 0; c < int(m.col_pairs.size()); ++c) {
    col_of.emplace(m.col_pairs[std::size_t(c)], c);
    m.col_unseen.push_back(!ls.is_seen(m.col_pairs[std::size_t(c)]));
  }
  for (const auto& s : samples) {
    if (!col_of.count(s.label))
      throw ValueError("score_all: sample label " + pair_str(s.label) +
                       " is not a candidate in the " + world_name(world) + " world");
    m.row_labels.push_back(s.label);
    m.row_unseen.push_back(!ls.is_seen(s.label));
  }

  std::vector<Tensor> g;
  g.reserve(m.col_pairs.size());
  for (PairLabel pair : m.col_pairs) g.push_back(text_mixture(pair, model));
  m.values.resize(samples.size() * m.col_pairs.size());
  for (int r = 0; r < int(samples.size()); ++r) {
    Tensor f = encode_vision_composition(samples[std::size_t(r)].image, model);
    for (int c = 0; c < m.cols(); ++c) m.at(r, c) = double(dot(f, g[std::size_t(c)]).item());
  }
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Bias sweep
// ---------------------------------------------------------------------------

namespace {

/// Argmax of row r under bias b; infinite b restricts to one column group.
int predict(const ScoreMatrix& m, int r, double b) {
  int best = -1;
  double best_v = -kInf;
  const bool restrict_unseen = b == kInf;
  const bool restrict_seen = b == -kInf;
  for (int c = 0; c < m.cols(); ++c) {
    const bool unseen = m.col_unseen[std::size_t(c)];
    if (restrict_unseen && !unseen) continue;
    if (restrict_seen && unseen) continue;
    double v = m.at(r, c);
    if (!restrict_unseen && !restrict_seen && unseen) v += b;
    if (v > best_v) {
      best_v = v;
      best = c;
    }
  }
  if (best < 0) throw ValueError("sweep: no column available for the restricted argmax");
  return best;
}

void require_both_row_groups(const ScoreMatrix& m) {
  int seen = 0, unseen = 0;
  for (bool u : m.row_unseen) (u ? unseen : seen)++;
  if (seen == 0 || unseen == 0)
    throw ValueError("sweep requires rows with both seen and unseen true labels");
}

}  // namespace

std::vector<double> bias_candidates(const ScoreMatrix& m) {
  m.validate();
  bool any_seen = false, any_unseen = false;
  for (bool u : m.col_unseen) (u ? any_unseen : any_seen) = true;
  if (!any_seen || !any_unseen)
    throw ValueError("bias candidates need at least one seen and one unseen column");

  std::vector<double> out;
  out.reserve(std::size_t(m.rows()) + 2);
  for (int r = 0; r < m.rows(); ++r) {
    double ms = -kInf, mu = -kInf;
    for (int c = 0; c < m.cols(); ++c) {
      double& best = m.col_unseen[std::size_t(c)] ? mu : ms;
      best = std::max(best, m.at(r, c));
    }
    out.push_back(ms - mu);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());

  // The gaps alone are not enough: at a bias exactly on a gap, the tie goes
  // to the lowest column index, which can favor either group depending on
  // column order. The open interval between two adjacent gaps then carries
  // an operating point matching neither endpoint, so probe its midpoint too.
  std::vector<double> cand;
  cand.reserve(2 * out.size() + 1);
  cand.push_back(-kInf);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (i > 0) cand.push_back(out[i - 1] / 2.0 + out[i] / 2.0);
    cand.push_back(out[i]);
  }
  cand.push_back(kInf);
  return cand;
}

std::vector<CurvePoint> sweep(const ScoreMatrix& m, std::span<const double> biases) {
  m.validate();
  require_both_row_groups(m);
  if (!std::is_sorted(biases.begin(), biases.end()))
    throw ValueError("sweep biases must be sorted");

  int seen_total = 0, unseen_total = 0;
  for (bool u : m.row_unseen) (u ? unseen_total : seen_total)++;

  std::vector<CurvePoint> curve;
  curve.reserve(biases.size());
  for (double b : biases) {
    int seen_ok = 0, unseen_ok = 0;
    for (int r = 0; r < m.rows(); ++r) {
      const bool correct =
          m.col_pairs[std::size_t(predict(m, r, b))] == m.row_labels[std::size_t(r)];
      if (!correct) continue;
      (m.row_unseen[std::size_t(r)] ? unseen_ok : seen_ok)++;
    }
    curve.push_back({b, double(seen_ok) / seen_total, double(unseen_ok) / unseen_total});
  }
  return curve;
}

double auc(std::span<const CurvePoint> curve) {
  if (curve.size() < 2) throw ValueError("auc needs at least 2 curve points");
  double best_unseen = 0;
  for (const auto& p : curve) best_unseen = std::max(best_unseen, p.unseen_acc);

  // Collapse to the best unseen per distinct seen value; the left endpoint
  // (0, best_unseen) is supplied if no point reaches seen = 0. The right
  // boundary is the largest seen value itself, so no extension is needed
  // there.
  std::map<double, double> by_seen;
  for (const auto& p : curve) {
    auto [it, fresh] = by_seen.emplace(p.seen_acc, p.unseen_acc);
    if (!fresh) it->second = std::max(it->second, p.unseen_acc);
  }
  auto [it0, fresh0] = by_seen.emplace(0.0, best_unseen);
  if (!fresh0) it0->second = std::max(it0->second, best_unseen);

  double area = 0;
  auto prev = by_seen.begin();
  for (auto it = std::next(by_seen.begin()); it != by_seen.end(); ++it) {
    area += (it->first - prev->first) * (it->second + prev->second) / 2.0;
    prev = it;
  }
  return area;
}

double harmonic_mean(double a, double b) {
  if (a <= 0.0 || b <= 0.0) return 0.0;
  return 2.0 * a * b / (a + b);
}

double best_hm(std::span<const CurvePoint> curve) {
  if (curve.empty()) throw ValueError("best_hm needs a non-empty curve");
  double best = 0;
  for (const auto& p : curve) best = std::max(best, harmonic_mean(p.seen_acc, p.unseen_acc));
  return best;
}

EvalReport evaluate(const ScoreMatrix& m) {
  EvalReport r;
  r.curve = sweep(m, bias_candidates(m));
  r.auc = auc(r.curve);
  r.best_hm = best_hm(r.curve);
  for (const auto& p : r.curve) {
    r.best_seen = std::max(r.best_seen, p.seen_acc);
    r.best_unseen = std::max(r.best_unseen, p.unseen_acc);
  }
  r.world = m.world;
  r.candidate_count = m.cols();
  return r;
}

// ---------------------------------------------------------------------------
// Brute-force reference
// ---------------------------------------------------------------------------

EvalReport oracle_eval(const ScoreMatrix& m) {
  m.validate();
  if (m.rows() > 50 || m.cols() > 50)
    throw ValueError("oracle_eval accepts at most 50x50 matrices, got " +
                     std::to_string(m.rows()) + "x" + std::to_string(m.cols()));

  std::vector<int> seen_cols, unseen_cols;
  for (int c = 0; c < m.cols(); ++c)
    (m.col_unseen[std::size_t(c)] ? unseen_cols : seen_cols).push_back(c);

  // Thresholds: every seen/unseen score gap of every row, then midpoints.
  std::vector<double> th;
  for (int r = 0; r < m.rows(); ++r)
    for (int cs : seen_cols)
      for (int cu : unseen_cols) th.push_back(m.at(r, cs) - m.at(r, cu));
  std::sort(th.begin(), th.end());
  th.erase(std::unique(th.begin(), th.end()), th.end());
  std::vector<double> biases;
  biases.push_back(-kInf);
  for (std::size_t i = 0; i < th.size(); ++i) {
    if (i > 0) biases.push_back(th[i - 1] / 2.0 + th[i] / 2.0);
    biases.push_back(th[i]);
  }
  biases.push_back(kInf);

  // Per-row decision, factored differently from sweep(): pick each group's
  // champion first, then compare the two.
  struct Champ {
    int col = -1;
    double v = -kInf;
  };
  auto champion = [&](int r, const std::vector<int>& cols) {
    Champ c;
    for (int col : cols)
      if (m.at(r, col) > c.v) c = {col, m.at(r, col)};
    return c;
  };
  std::vector<Champ> best_seen_col(std::size_t(m.rows())), best_unseen_col(std::size_t(m.rows()));
  for (int r = 0; r < m.rows(); ++r) {
    best_seen_col[std::size_t(r)] = champion(r, seen_cols);
    best_unseen_col[std::size_t(r)] = champion(r, unseen_cols);
  }

  int seen_total = 0, unseen_total = 0;
  for (bool u : m.row_unseen) (u ? unseen_total : seen_total)++;

  EvalReport rep;
  rep.world = m.world;
  rep.candidate_count = m.cols();
  for (double b : biases) {
    int seen_ok = 0, unseen_ok = 0;
    for (int r = 0; r < m.rows(); ++r) {
      const Champ& s = best_seen_col[std::size_t(r)];
      const Champ& u = best_unseen_col[std::size_t(r)];
      int pred;
      if (s.col < 0)
        pred = u.col;  // no seen column exists, the bias cannot matter
      else if (u.col < 0)
        pred = s.col;
      else if (b == kInf)
        pred = u.col;
      else if (b == -kInf)
        pred = s.col;
      else if (u.v + b > s.v)
        pred = u.col;
      else if (u.v + b < s.v)
        pred = s.col;
      else
        pred = std::min(s.col, u.col);
      if (m.col_pairs[std::size_t(pred)] != m.row_labels[std::size_t(r)]) continue;
      (m.row_unseen[std::size_t(r)] ? unseen_ok : seen_ok)++;
    }
    rep.curve.push_back({b, seen_total ? double(seen_ok) / seen_total : 0.0,
                         unseen_total ? double(unseen_ok) / unseen_total : 0.0});
  }

  for (const auto& p : rep.curve) {
    rep.best_seen = std::max(rep.best_seen, p.seen_acc);
    rep.best_unseen = std::max(rep.best_unseen, p.unseen_acc);
    rep.best_hm = std::max(rep.best_hm, harmonic_mean(p.seen_acc, p.unseen_acc));
  }

  // Area under the collapsed polyline by midpoint rectangles, which are
  // exact on straight segments.
  std::map<double, double> by_seen;
  for (const auto& p : rep.curve) {
    auto [it, fresh] = by_seen.emplace(p.seen_acc, p.unseen_acc);
    if (!fresh) it->second = std::max(it->second, p.unseen_acc);
  }
  auto [it0, fresh0] = by_seen.emplace(0.0, rep.best_unseen);
  if (!fresh0) it0->second = std::max(it0->second, rep.best_unseen);
  double area = 0;
  auto prev = by_seen.begin();
  for (auto it = std::next(by_seen.begin()); it != by_seen.end(); ++it) {
    const double w = it->first - prev->first;
    constexpr int kStrips = 16;
    for (int k = 0; k < kStrips; ++k) {
      const double t = (k + 0.5) / kStrips;
      area += w / kStrips * (prev->second + t * (it->second - prev->second));
    }
    prev = it;
  }
  rep.auc = area;
  return rep;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

void save_report(const EvalReport& r, const std::string& path) {
  std::ostringstream os;
  os << "auc = " << num(r.auc) << "\n";
  os << "best_hm = " << num(r.best_hm) << "\n";
  os << "best_seen = " << num(r.best_seen) << "\n";
  os << "best_unseen = " << num(r.best_unseen) << "\n";
  os << "world = " << world_name(r.world) << "\n";
  os << "candidate_count = " << r.candidate_count << "\n";
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << os.str();
  if (!f) throw IoError("failed writing '" + path + "'");
}

void save_curve(std::span<const CurvePoint> curve, const std::string& path) {
  std::ostringstream os;
  os << "bias,seen_acc,unseen_acc\n";
  for (const auto& p : curve)
    os << num(p.bias) << "," << num(p.seen_acc) << "," << num(p.unseen_acc) << "\n";
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << os.str();
  if (!f) throw IoError("failed writing '" + path + "'");
}

std::vector<CurvePoint> load_curve(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(f, line) || line != "bias,seen_acc,unseen_acc")
    throw FormatError("'" + path + "': missing curve header");
  std::vector<CurvePoint> out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string a, b, c;
    if (!std::getline(ls, a, ',') || !std::getline(ls, b, ',') || !std::getline(ls, c))
      throw FormatError("'" + path + "': bad curve line '" + line + "'");
    try {
      out.push_back({std::stod(a), std::stod(b), std::stod(c)});
    } catch (const std::exception&) {
      throw FormatError("'" + path + "': bad number in line '" + line + "'");
    }
  }
  return out;
}

std::string format_percent(double fraction) {
  if (!(fraction >= 0.0))
    throw ValueError("format_percent expects a non-negative fraction");
  const long tenths = round_half_even(fraction * 1000.0);
  return std::to_string(tenths / 10) + "." + std::to_string(tenths % 10);
}

}  // namespace caila
