#include <algorithm>
#include <cmath>
#include <sstream>

#include "langshape/errors.hpp"
#include "langshape/harness.hpp"
#include "langshape/io_util.hpp"

namespace langshape {

namespace {

double trapezoid_auc(const std::vector<long>& x, const std::vector<double>& y) {
  double area = 0.0;
  for (size_t i = 1; i < x.size(); ++i)
    area += 0.5 * (y[i] + y[i - 1]) * static_cast<double>(x[i] - x[i - 1]);
  return area;
}

std::optional<long> first_crossing(const std::vector<long>& episodes,
                                   const std::vector<double>& values, double threshold) {
  for (size_t i = 0; i < values.size(); ++i)
    if (values[i] >= threshold) return episodes[i];
  return std::nullopt;
}

}  // namespace

double binomial_tail_geq(int n, int k) {
  if (k <= 0) return 1.0;
  if (k > n) return 0.0;
  // Exact sum of C(n, j) / 2^n for j in [k, n].
  double total = 0.0;
  double coeff = 1.0;  // C(n, 0)
  for (int j = 0; j <= n; ++j) {
    if (j >= k) total += coeff;
    coeff = coeff * (n - j) / (j + 1);
  }
  return total / std::pow(2.0, n);
}

ComparisonReport compare(const std::vector<LearningCurve>& curves) {
  if (curves.empty()) throw ValidationError("compare: no curves given");
  const std::vector<long>& grid = curves.front().episodes;
  for (const LearningCurve& c : curves)
    if (c.episodes != grid)
      throw ValidationError("compare: curves do not share an episode grid (agent '" + c.agent +
                            "')");

  ComparisonReport report;
  double best_final = -std::numeric_limits<double>::infinity();
  for (const LearningCurve& c : curves) best_final = std::max(best_final, c.mean.back());
  report.threshold = 0.9 * best_final;

  for (const LearningCurve& c : curves) {
    CurveSummary s;
    s.agent = c.agent;
    s.auc_mean = trapezoid_auc(grid, c.mean);
    s.episodes_to_threshold = first_crossing(grid, c.mean, report.threshold);
    int reps = c.replicate_count();
    for (int r = 0; r < reps; ++r) {
      std::vector<double> series;
      series.reserve(grid.size());
      for (size_t i = 0; i < grid.size(); ++i) series.push_back(c.per_replicate[i][r]);
      s.auc_per_replicate.push_back(trapezoid_auc(grid, series));
      s.ett_per_replicate.push_back(first_crossing(grid, series, report.threshold));
    }
    report.curves.push_back(std::move(s));
  }

  size_t n = report.curves.size();
  report.pairwise_auc.assign(n, std::vector<SignTestResult>(n));
  for (size_t a = 0; a < n; ++a) {
    for (size_t b = 0; b < n; ++b) {
      if (a == b) continue;
      const auto& va = report.curves[a].auc_per_replicate;
      const auto& vb = report.curves[b].auc_per_replicate;
      if (va.size() != vb.size())
        throw ValidationError("compare: replicate counts differ between '" +
                              report.curves[a].agent + "' and '" + report.curves[b].agent + "'");
      SignTestResult t;
      for (size_t r = 0; r < va.size(); ++r) {
        if (va[r] > vb[r])
          ++t.wins;
        else if (va[r] < vb[r])
          ++t.losses;
        else
          ++t.ties;
      }
      t.p_one_sided = binomial_tail_geq(t.wins + t.losses, t.wins);
      report.pairwise_auc[a][b] = t;
    }
  }
  return report;
}

const CurveSummary& ComparisonReport::summary_for(const std::string& agent) const {
  for (const CurveSummary& s : curves)
    if (s.agent == agent) return s;
  throw ValidationError("comparison report has no agent '" + agent + "'");
}

const SignTestResult& ComparisonReport::auc_test(const std::string& a,
                                                 const std::string& b) const {
  size_t ia = curves.size(), ib = curves.size();
  for (size_t i = 0; i < curves.size(); ++i) {
    if (curves[i].agent == a) ia = i;
    if (curves[i].agent == b) ib = i;
  }
  if (ia >= curves.size() || ib >= curves.size() || ia == ib)
    throw ValidationError("comparison report: bad agent pair (" + a + ", " + b + ")");
  return pairwise_auc[ia][ib];
}

std::string ComparisonReport::to_text() const {
  std::ostringstream out;
  out << "threshold (90% of best final mean): " << format_double(threshold) << "\n\n";
  out << "agent                auc            episodes-to-threshold\n";
  out << "-----                ---            ---------------------\n";
  for (const CurveSummary& s : curves) {
    std::string ett = s.episodes_to_threshold ? std::to_string(*s.episodes_to_threshold)
                                              : std::string("not reached");
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%-20s %-14s %s\n", s.agent.c_str(),
                  format_double(s.auc_mean).c_str(), ett.c_str());
    out << buf;
  }
  out << "\npaired one-sided sign tests on per-replicate AUC (row beats column):\n";
  for (size_t a = 0; a < curves.size(); ++a) {
    for (size_t b = 0; b < curves.size(); ++b) {
      if (a == b) continue;
      const SignTestResult& t = pairwise_auc[a][b];
      char buf[192];
      std::snprintf(buf, sizeof(buf), "  %-14s > %-14s wins %d/%d ties %d  p=%s\n",
                    curves[a].agent.c_str(), curves[b].agent.c_str(), t.wins,
                    t.wins + t.losses + t.ties, t.ties, format_double(t.p_one_sided).c_str());
      out << buf;
    }
  }
  return out.str();
}

}  // namespace langshape
