#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "adpmac/core.hpp"

namespace adpmac {

/// Packet generation instants of one node.
struct ArrivalTimeline {
  int node_id = 0;
  std::vector<double> timestamps_s;
  ArrivalModel model;
};

/// Generates arrivals in [0, horizon_s], stopping early after count_limit
/// packets. The first CBR arrival lands at start_offset_s + interval; CBR
/// instants are computed as offset + k * interval so they stay exact.
inline ArrivalTimeline generate_arrivals(const ArrivalModel& model, double horizon_s,
                                         std::optional<std::size_t> count_limit,
                                         RandomStream& rng, int node_id = 0,
                                         double start_offset_s = 0.0) {
  model.validate();
  if (!(horizon_s > 0.0)) throw ParameterError("horizon must be positive");
  if (start_offset_s < 0.0) throw ParameterError("start offset must be non-negative");

  ArrivalTimeline tl{node_id, {}, model};
  const std::size_t limit = count_limit.value_or(std::numeric_limits<std::size_t>::max());
  if (limit == 0) return tl;

  if (model.kind == ArrivalKind::CBR) {
    for (std::size_t k = 1; tl.timestamps_s.size() < limit; ++k) {
      const double t = start_offset_s + static_cast<double>(k) * model.mean_interval_s;
      if (t > horizon_s) break;
      tl.timestamps_s.push_back(t);
    }
    return tl;
  }

  ArrivalProcess process(model, rng);
  double t = start_offset_s;
  while (tl.timestamps_s.size() < limit) {
    t += process.next_gap();
    if (t > horizon_s) break;
    tl.timestamps_s.push_back(t);
  }
  return tl;
}

/// Observations collected by the sink during one polling cycle.
struct CvWindow {
  double cycle_duration_s = 10.0;
  std::vector<double> observations_s;

  void observe(double t) { observations_s.push_back(t); }
  void clear() { observations_s.clear(); }
};

/// Cv of the gaps between consecutive observations in the window.
/// std::nullopt means insufficient data: fewer than two gaps, or all
/// observations coincide.
inline std::optional<CvEstimate> cycle_cv(const CvWindow& window) {
  if (window.observations_s.size() < 3) return std::nullopt;
  std::vector<double> sorted = window.observations_s;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> gaps;
  gaps.reserve(sorted.size() - 1);
  for (std::size_t i = 1; i < sorted.size(); ++i) gaps.push_back(sorted[i] - sorted[i - 1]);
  auto est = detail::moments(gaps);
  if (!(est.mean_s > 0.0)) return std::nullopt;
  return est;
}

// CSV replay format: header "node_id,timestamp_s", one row per packet.

inline void write_timelines_csv(std::ostream& os, const std::vector<ArrivalTimeline>& timelines) {
  os << "node_id,timestamp_s\n";
  os.precision(17);
  for (const auto& tl : timelines)
    for (double t : tl.timestamps_s) os << tl.node_id << ',' << t << '\n';
}

inline std::vector<ArrivalTimeline> read_timelines_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "node_id,timestamp_s")
    throw ParameterError("timeline CSV: expected header 'node_id,timestamp_s'");
  std::map<int, std::vector<double>> by_node;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    int node = 0;
    char comma = 0;
    double t = 0.0;
    if (!(row >> node >> comma >> t) || comma != ',')
      throw ParameterError("timeline CSV: malformed row " + std::to_string(lineno));
    by_node[node].push_back(t);
  }
  std::vector<ArrivalTimeline> out;
  for (auto& [node, ts] : by_node) {
    std::sort(ts.begin(), ts.end());
    out.push_back({node, std::move(ts), {}});
  }
  return out;
}

}  // namespace adpmac
