#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "adpmac/experiment.hpp"
#include "adpmac/stats.hpp"

namespace adpmac::compare {

using experiment::CellStats;
using experiment::Fidelity;
using experiment::Row;

enum class Status { Pass, Fail, NotEvaluated };

inline std::string_view to_string(Status s) {
  switch (s) {
    case Status::Pass: return "pass";
    case Status::Fail: return "FAIL";
    case Status::NotEvaluated: return "not evaluated";
  }
  return "?";
}

/// Raised when an input sweep has holes. Carries every absent cell.
class MissingCells : public ParameterError {
 public:
  explicit MissingCells(std::vector<std::string> cells)
      : ParameterError(message(cells)), cells_(std::move(cells)) {}
  const std::vector<std::string>& cells() const { return cells_; }

 private:
  static std::string message(const std::vector<std::string>& cells) {
    std::string m = "missing cells:";
    for (const auto& c : cells) m += " " + c;
    return m;
  }
  std::vector<std::string> cells_;
};

/// The polling kind expected to win under each arrival model.
constexpr PollingKind matched_kind(ArrivalKind a) {
  switch (a) {
    case ArrivalKind::CBR: return PollingKind::Deterministic;
    case ArrivalKind::Poisson: return PollingKind::Exponential;
    case ArrivalKind::Bursty: return PollingKind::Dynamic;
  }
  return PollingKind::Deterministic;
}

struct TrendCell {
  Fidelity fidelity;
  ArrivalKind arrival;
  PollingKind polling;
  double rho_energy = 0.0;
  double rho_delay = 0.0;
  Trend energy = Trend::Flat;
  Trend delay = Trend::Flat;
};

struct MatchEntry {
  ArrivalKind arrival;
  double interval_s;
  std::string metric;  // "energy" or "delay"
  PollingKind best;
  std::map<PollingKind, CellSummary> cells;
  bool matched_ci_overlaps_best = false;
};

struct Verdict {
  std::string claim;  // C1..C6
  ArrivalKind arrival;
  Status status = Status::NotEvaluated;
  std::string detail;
  std::vector<std::string> cells;
};

struct ComparisonReport {
  std::vector<TrendCell> trends;
  std::vector<MatchEntry> matching;
  std::vector<Verdict> verdicts;

  bool any_failed() const {
    return std::any_of(verdicts.begin(), verdicts.end(),
                       [](const Verdict& v) { return v.status == Status::Fail; });
  }
  bool all_pass() const {
    return !any_failed() && std::any_of(verdicts.begin(), verdicts.end(), [](const Verdict& v) {
      return v.status == Status::Pass;
    });
  }
  const Verdict* find(std::string_view claim, ArrivalKind a) const {
    for (const auto& v : verdicts)
      if (v.claim == claim && v.arrival == a) return &v;
    return nullptr;
  }
};

namespace detail {

struct Block {
  std::map<double, CellStats> by_interval;
};

/// (arrival, polling) -> interval -> stats. The role of a table comes from
/// the argument position, not from the fidelity column of its rows.
using Table = std::map<ArrivalKind, std::map<PollingKind, Block>>;

inline Table tabulate(const std::vector<Row>& rows, std::set<double>& grid) {
  Table t;
  const auto cells = experiment::summarize_cells(rows);
  for (const auto& [k, s] : cells) {
    t[k.arrival][k.polling].by_interval[k.interval_s] = s;
    grid.insert(k.interval_s);
  }
  return t;
}

inline std::string cell_name(std::string_view role, ArrivalKind a, PollingKind p, double x) {
  return std::string(role) + "/" + std::string(to_string(a)) + "/" + std::string(to_string(p)) +
         "@" + experiment::format_double(x);
}

inline std::string block_name(std::string_view role, ArrivalKind a, PollingKind p,
                              const std::set<double>& grid) {
  std::string s = std::string(role) + "/" + std::string(to_string(a)) + "/" +
                  std::string(to_string(p)) + "@{";
  bool first = true;
  for (double x : grid) {
    if (!first) s += ",";
    s += experiment::format_double(x);
    first = false;
  }
  return s + "}";
}

inline void find_missing(std::string_view role, const Table& t, const std::set<double>& grid,
                         std::vector<std::string>& missing) {
  for (const auto& [a, kinds] : t)
    for (const auto& [p, block] : kinds)
      for (double x : grid)
        if (!block.by_interval.contains(x)) missing.push_back(cell_name(role, a, p, x));
}

inline bool has(const Table& t, ArrivalKind a, PollingKind p) {
  auto it = t.find(a);
  return it != t.end() && it->second.contains(p);
}

inline std::pair<double, double> block_rhos(const Block& b) {
  std::vector<std::pair<double, double>> e, d;
  for (const auto& [x, s] : b.by_interval) {
    e.emplace_back(x, s.energy.mean);
    d.emplace_back(x, s.delay.mean);
  }
  return {spearman(e), spearman(d)};
}

inline Trend classify(double rho, const TrendThresholds& th) {
  if (rho >= th.increasing) return Trend::Increasing;
  if (rho <= th.decreasing) return Trend::Decreasing;
  return Trend::Flat;
}

}  // namespace detail

/// Evaluates the six claims per arrival model. `high_rows` and `low_rows` are
/// treated as the abstract and the detailed sweep respectively.
inline ComparisonReport compare(const std::vector<Row>& high_rows,
                                const std::vector<Row>& low_rows, TrendThresholds th = {}) {
  using namespace detail;
  std::set<double> hgrid, lgrid;
  const Table H = tabulate(high_rows, hgrid);
  const Table L = tabulate(low_rows, lgrid);

  std::vector<std::string> missing;
  find_missing("high", H, hgrid, missing);
  find_missing("low", L, lgrid, missing);
  if (!missing.empty()) throw MissingCells(std::move(missing));
  if (hgrid.size() < 3 || lgrid.size() < 3)
    throw ParameterError("each sweep needs at least three distinct intervals");

  std::set<ArrivalKind> arrivals;
  bool shared = false;
  for (const auto& [a, _] : H) {
    arrivals.insert(a);
    shared = shared || L.contains(a);
  }
  for (const auto& [a, _] : L) arrivals.insert(a);
  if (!shared) throw ParameterError("the two sweeps share no arrival model");

  ComparisonReport rep;
  std::map<std::tuple<int, ArrivalKind, PollingKind>, TrendCell> trend_of;
  auto add_trends = [&](Fidelity f, const Table& t) {
    for (const auto& [a, kinds] : t)
      for (const auto& [p, block] : kinds) {
        auto [re, rd] = block_rhos(block);
        TrendCell c{f, a, p, re, rd, classify(re, th), classify(rd, th)};
        rep.trends.push_back(c);
        trend_of[{static_cast<int>(f), a, p}] = c;
      }
  };
  add_trends(Fidelity::High, H);
  add_trends(Fidelity::Low, L);

  auto fmt = [](double v) { return experiment::format_double(v); };

  for (ArrivalKind a : arrivals) {
    // C1, C2: every polling kind of the abstract sweep.
    for (auto [claim, want, use_energy] :
         {std::tuple{"C1", Trend::Decreasing, true}, std::tuple{"C2", Trend::Increasing, false}}) {
      Verdict v{claim, a, Status::NotEvaluated, "", {}};
      if (H.contains(a)) {
        bool ok = true;
        for (const auto& [p, _] : H.at(a)) {
          const auto& c = trend_of[{static_cast<int>(Fidelity::High), a, p}];
          const Trend got = use_energy ? c.energy : c.delay;
          ok = ok && got == want;
          v.detail += std::string(to_string(p)) + " " + (use_energy ? "energy" : "delay") +
                      " rho=" + fmt(use_energy ? c.rho_energy : c.rho_delay) + " (" +
                      std::string(to_string(got)) + "); ";
          v.cells.push_back(block_name("high", a, p, hgrid));
        }
        v.status = ok ? Status::Pass : Status::Fail;
      } else {
        v.detail = "no abstract sweep for this arrival model";
      }
      rep.verdicts.push_back(std::move(v));
    }

    // C3, C4: matched polling kind of the detailed sweep.
    const PollingKind m = matched_kind(a);
    for (auto [claim, use_energy] : {std::tuple{"C3", true}, std::tuple{"C4", false}}) {
      Verdict v{claim, a, Status::NotEvaluated, "", {}};
      if (has(L, a, m)) {
        const auto& c = trend_of[{static_cast<int>(Fidelity::Low), a, m}];
        const Trend got = use_energy ? c.energy : c.delay;
        v.status = got == Trend::Increasing ? Status::Pass : Status::Fail;
        v.detail = std::string(to_string(m)) + " " + (use_energy ? "energy" : "delay") +
                   " rho=" + fmt(use_energy ? c.rho_energy : c.rho_delay) + " (" +
                   std::string(to_string(got)) + ")";
        v.cells.push_back(block_name("low", a, m, lgrid));
      } else {
        v.detail = "matched polling kind absent from the detailed sweep";
      }
      rep.verdicts.push_back(std::move(v));
    }

    // C5: abstract ordering at every interval.
    {
      Verdict v{"C5", a, Status::NotEvaluated, "", {}};
      if (has(H, a, PollingKind::Deterministic) && has(H, a, PollingKind::Exponential)) {
        const auto& det = H.at(a).at(PollingKind::Deterministic).by_interval;
        const auto& exp = H.at(a).at(PollingKind::Exponential).by_interval;
        std::vector<std::string> bad;
        for (double x : hgrid) {
          if (exp.at(x).energy.mean > det.at(x).energy.mean) bad.push_back("energy@" + fmt(x));
          if (det.at(x).delay.mean > exp.at(x).delay.mean) bad.push_back("delay@" + fmt(x));
        }
        v.status = bad.empty() ? Status::Pass : Status::Fail;
        v.detail = bad.empty() ? "exponential energy <= deterministic and deterministic delay "
                                 "<= exponential at every interval"
                               : "violations:";
        for (const auto& b : bad) v.detail += " " + b;
        v.cells.push_back(block_name("high", a, PollingKind::Deterministic, hgrid));
        v.cells.push_back(block_name("high", a, PollingKind::Exponential, hgrid));
      } else {
        v.detail = "needs deterministic and exponential cells in the abstract sweep";
      }
      rep.verdicts.push_back(std::move(v));
    }

    // C6: detailed matching principle at every interval and metric.
    {
      Verdict v{"C6", a, Status::NotEvaluated, "", {}};
      const std::vector<PollingKind> kinds{PollingKind::Deterministic, PollingKind::Exponential,
                                           PollingKind::Dynamic};
      const bool complete =
          std::all_of(kinds.begin(), kinds.end(), [&](PollingKind p) { return has(L, a, p); });
      if (complete) {
        std::vector<std::string> bad;
        for (double x : lgrid) {
          for (bool energy : {true, false}) {
            MatchEntry e{a, x, energy ? "energy" : "delay", kinds.front(), {}, false};
            for (auto p : kinds) {
              const auto& s = L.at(a).at(p).by_interval.at(x);
              e.cells[p] = energy ? s.energy : s.delay;
            }
            for (auto p : kinds)
              if (e.cells[p].mean < e.cells[e.best].mean) e.best = p;
            const auto& best = e.cells[e.best];
            const auto& mine = e.cells[m];
            e.matched_ci_overlaps_best =
                mine.mean - mine.ci_half_width <= best.mean + best.ci_half_width;
            const bool ok = a == ArrivalKind::Bursty
                                ? mine.mean <= best.mean + best.ci_half_width
                                : mine.mean <= best.mean;
            if (!ok)
              bad.push_back(e.metric + "@" + fmt(x) + " best=" + std::string(to_string(e.best)));
            rep.matching.push_back(std::move(e));
          }
        }
        v.status = bad.empty() ? Status::Pass : Status::Fail;
        v.detail = std::string(to_string(m)) +
                   (a == ArrivalKind::Bursty ? " best or within 95% CI of best"
                                             : " lowest mean on both metrics");
        if (!bad.empty()) {
          v.detail += "; violations:";
          for (const auto& b : bad) v.detail += " " + b;
        }
        for (auto p : kinds) v.cells.push_back(block_name("low", a, p, lgrid));
      } else {
        v.detail = "detailed sweep lacks one of deterministic/exponential/dynamic";
      }
      rep.verdicts.push_back(std::move(v));
    }
  }
  return rep;
}

inline void write_text(std::ostream& os, const ComparisonReport& rep) {
  os << "trends (Spearman rho over cell means)\n";
  for (const auto& t : rep.trends) {
    os << "  " << to_string(t.fidelity) << '/' << to_string(t.arrival) << '/'
       << to_string(t.polling) << "  energy " << to_string(t.energy) << " ("
       << experiment::format_double(t.rho_energy) << ")  delay " << to_string(t.delay) << " ("
       << experiment::format_double(t.rho_delay) << ")\n";
  }
  os << "matching (detailed sweep)\n";
  for (const auto& e : rep.matching) {
    os << "  " << to_string(e.arrival) << " @" << experiment::format_double(e.interval_s) << ' '
       << e.metric << " best=" << to_string(e.best);
    for (const auto& [p, s] : e.cells)
      os << "  " << to_string(p) << '=' << experiment::format_double(s.mean) << "+-"
         << experiment::format_double(s.ci_half_width);
    os << (e.matched_ci_overlaps_best ? "  [matched CI overlaps best]" : "") << '\n';
  }
  os << "verdicts\n";
  for (const auto& v : rep.verdicts) {
    os << "  " << v.claim << ' ' << to_string(v.arrival) << ": " << to_string(v.status) << "  "
       << v.detail << '\n';
    for (const auto& c : v.cells) os << "      " << c << '\n';
  }
}

}  // namespace adpmac::compare
