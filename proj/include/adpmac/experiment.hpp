#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdint>
#include <exception>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "adpmac/core.hpp"
#include "adpmac/highsim.hpp"
#include "adpmac/lowsim.hpp"
#include "adpmac/stats.hpp"

namespace adpmac::experiment {

enum class Fidelity { High, Low };

inline std::string_view to_string(Fidelity f) { return f == Fidelity::High ? "high" : "low"; }

inline Fidelity parse_fidelity(std::string_view s) {
  if (s == "high") return Fidelity::High;
  if (s == "low") return Fidelity::Low;
  throw ParameterError("unknown fidelity: " + std::string(s));
}

/// One sweep over polling kinds and interval grid for each arrival model.
struct ExperimentConfig {
  Fidelity fidelity = Fidelity::High;
  std::vector<ArrivalKind> arrivals;
  std::vector<PollingKind> polling_kinds;
  std::vector<double> interval_grid_s{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::optional<int> runs_per_cell;  // overrides the defaults below
  int runs_low = 4;
  int runs_high_deterministic = 1;
  int runs_high_stochastic = 20;
  std::uint64_t master_seed = 2024;
  unsigned workers = 0;  // 0: hardware concurrency
  high::HighLevelConfig high;  // template; arrival kind, polling kind/mean and seed are set per run
  low::LowLevelConfig low;

  static ExperimentConfig defaults(Fidelity f) {
    ExperimentConfig c;
    c.fidelity = f;
    if (f == Fidelity::High) {
      c.arrivals = {ArrivalKind::CBR, ArrivalKind::Poisson};
      c.polling_kinds = {PollingKind::Deterministic, PollingKind::Exponential};
    } else {
      c.arrivals = {ArrivalKind::CBR, ArrivalKind::Poisson, ArrivalKind::Bursty};
      c.polling_kinds = {PollingKind::Deterministic, PollingKind::Exponential,
                         PollingKind::Dynamic};
    }
    return c;
  }

  /// A run is stochastic unless both processes are degenerate.
  int runs_for(ArrivalKind a, PollingKind p) const {
    if (runs_per_cell) return *runs_per_cell;
    if (fidelity == Fidelity::Low) return runs_low;
    return a == ArrivalKind::CBR && p == PollingKind::Deterministic ? runs_high_deterministic
                                                                    : runs_high_stochastic;
  }

  void validate() const {
    if (interval_grid_s.empty()) throw ParameterError("interval grid must not be empty");
    for (std::size_t i = 0; i < interval_grid_s.size(); ++i) {
      if (!(interval_grid_s[i] > 0)) throw ParameterError("grid intervals must be positive");
      if (i > 0 && !(interval_grid_s[i] > interval_grid_s[i - 1]))
        throw ParameterError("interval grid must be strictly increasing");
    }
    if (arrivals.empty() || polling_kinds.empty())
      throw ParameterError("sweep needs at least one arrival model and one polling kind");
    if ((runs_per_cell && *runs_per_cell < 1) || runs_low < 1 || runs_high_deterministic < 1 ||
        runs_high_stochastic < 1)
      throw ParameterError("runs per cell must be at least 1");
    if (fidelity == Fidelity::High &&
        std::find(polling_kinds.begin(), polling_kinds.end(), PollingKind::Dynamic) !=
            polling_kinds.end())
      throw ParameterError("the high-level model compares fixed polling distributions only");
  }
};

/// Run seed. The polling kind is deliberately not an input: every kind sees
/// the same traffic for a given (arrival, interval, replication).
inline std::uint64_t run_seed(std::uint64_t master, Fidelity f, ArrivalKind a,
                              std::size_t interval_index, int replication) {
  return derive_seed(master, {static_cast<std::uint64_t>(f), static_cast<std::uint64_t>(a),
                              static_cast<std::uint64_t>(interval_index),
                              static_cast<std::uint64_t>(replication)});
}

struct Row {
  Fidelity fidelity = Fidelity::High;
  ArrivalKind arrival = ArrivalKind::CBR;
  PollingKind polling = PollingKind::Deterministic;
  double interval_s = 0.0;
  int run = 0;
  std::uint64_t seed = 0;
  double energy_mJ = 0.0;
  double mean_delay_s = 0.0;
  std::int64_t delivered = 0;
  std::int64_t dropped = 0;
  std::int64_t collisions = 0;
  std::int64_t retransmissions = 0;

  auto key() const { return std::tuple(fidelity, arrival, polling, interval_s, run); }
};

inline constexpr std::string_view kCsvHeader =
    "fidelity,arrival,polling,mean_poll_interval_s,run,seed,energy_mJ,mean_delay_s,delivered,"
    "dropped,collisions,retransmissions";

inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline high::HighLevelConfig high_config_for(const ExperimentConfig& c, ArrivalKind a,
                                             PollingKind p, double interval,
                                             std::uint64_t seed) {
  auto h = c.high;
  h.arrival.kind = a;
  h.polling.kind = p;
  h.polling.mean_interval_s = interval;
  h.seed = seed;
  return h;
}

inline low::LowLevelConfig low_config_for(const ExperimentConfig& c, ArrivalKind a,
                                          PollingKind p, double interval, std::uint64_t seed) {
  auto l = c.low;
  l.arrival.kind = a;
  l.polling.kind = p;
  l.polling.mean_interval_s = interval;
  l.seed = seed;
  return l;
}

inline Row run_one(const ExperimentConfig& c, ArrivalKind a, PollingKind p,
                   std::size_t interval_index, int rep) {
  Row r;
  r.fidelity = c.fidelity;
  r.arrival = a;
  r.polling = p;
  r.interval_s = c.interval_grid_s[interval_index];
  r.run = rep;
  r.seed = run_seed(c.master_seed, c.fidelity, a, interval_index, rep);
  if (c.fidelity == Fidelity::High) {
    const auto res = high::run_high_level(high_config_for(c, a, p, r.interval_s, r.seed));
    r.energy_mJ = res.total_energy_mJ;
    r.mean_delay_s = res.mean_delay_s;
    r.delivered = res.packet_count;
    r.dropped = res.undelivered_count;
  } else {
    const auto res = low::run_low_level(low_config_for(c, a, p, r.interval_s, r.seed));
    r.energy_mJ = res.metrics.total_energy_mJ;
    r.mean_delay_s = res.metrics.mean_delay_s;
    r.delivered = res.metrics.delivered;
    r.dropped = res.metrics.dropped;
    r.collisions = res.metrics.collisions;
    r.retransmissions = res.metrics.retransmissions;
  }
  return r;
}

/// Runs every (arrival, polling, interval, replication) on a worker pool.
/// The returned rows are sorted, so the output never depends on scheduling.
inline std::vector<Row> run_sweep(const ExperimentConfig& c) {
  c.validate();
  struct Job {
    ArrivalKind a;
    PollingKind p;
    std::size_t i;
    int rep;
  };
  std::vector<Job> jobs;
  for (auto a : c.arrivals)
    for (auto p : c.polling_kinds)
      for (std::size_t i = 0; i < c.interval_grid_s.size(); ++i)
        for (int rep = 0; rep < c.runs_for(a, p); ++rep) jobs.push_back({a, p, i, rep});

  std::vector<Row> rows(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (std::size_t j; (j = next.fetch_add(1)) < jobs.size();) {
      try {
        rows[j] = run_one(c, jobs[j].a, jobs[j].p, jobs[j].i, jobs[j].rep);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next = jobs.size();
      }
    }
  };
  unsigned n = c.workers ? c.workers : std::max(1u, std::thread::hardware_concurrency());
  n = static_cast<unsigned>(std::min<std::size_t>(n, std::max<std::size_t>(jobs.size(), 1)));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  std::sort(rows.begin(), rows.end(), [](const Row& x, const Row& y) { return x.key() < y.key(); });
  return rows;
}

// ---- CSV -------------------------------------------------------------------

inline void write_csv(std::ostream& os, const std::vector<Row>& rows) {
  os << kCsvHeader << '\n';
  for (const auto& r : rows) {
    os << to_string(r.fidelity) << ',' << to_string(r.arrival) << ',' << to_string(r.polling)
       << ',' << format_double(r.interval_s) << ',' << r.run << ',' << r.seed << ','
       << format_double(r.energy_mJ) << ',' << format_double(r.mean_delay_s) << ','
       << r.delivered << ',' << r.dropped << ',' << r.collisions << ',' << r.retransmissions
       << '\n';
  }
}

namespace detail {

template <class T>
T parse_number(std::string_view s, std::size_t lineno) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw ParameterError("CSV line " + std::to_string(lineno) + ": bad number '" +
                         std::string(s) + "'");
  return v;
}

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  for (std::size_t pos = 0;;) {
    auto next = line.find(sep, pos);
    out.push_back(line.substr(pos, next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

}  // namespace detail

inline std::vector<Row> read_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kCsvHeader)
    throw ParameterError("result CSV: unexpected header");
  std::vector<Row> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = detail::split(line, ',');
    if (f.size() != 12)
      throw ParameterError("CSV line " + std::to_string(lineno) + ": expected 12 fields");
    Row r;
    r.fidelity = parse_fidelity(f[0]);
    r.arrival = parse_arrival_kind(f[1]);
    r.polling = parse_polling_kind(f[2]);
    r.interval_s = detail::parse_number<double>(f[3], lineno);
    r.run = detail::parse_number<int>(f[4], lineno);
    r.seed = detail::parse_number<std::uint64_t>(f[5], lineno);
    r.energy_mJ = detail::parse_number<double>(f[6], lineno);
    r.mean_delay_s = detail::parse_number<double>(f[7], lineno);
    r.delivered = detail::parse_number<std::int64_t>(f[8], lineno);
    r.dropped = detail::parse_number<std::int64_t>(f[9], lineno);
    r.collisions = detail::parse_number<std::int64_t>(f[10], lineno);
    r.retransmissions = detail::parse_number<std::int64_t>(f[11], lineno);
    rows.push_back(r);
  }
  return rows;
}

// ---- cell summaries --------------------------------------------------------

struct CellKey {
  Fidelity fidelity;
  ArrivalKind arrival;
  PollingKind polling;
  double interval_s;
  auto operator<=>(const CellKey&) const = default;
};

struct CellStats {
  CellSummary energy;
  CellSummary delay;
};

/// A single run has a mean but no interval; its half-width is reported as 0.
inline CellSummary summarize_cell(std::span<const double> v) {
  if (v.size() >= 2) return summarize(v);
  return {v.size(), v.empty() ? 0.0 : v.front(), 0.0};
}

inline std::map<CellKey, CellStats> summarize_cells(const std::vector<Row>& rows) {
  std::map<CellKey, std::pair<std::vector<double>, std::vector<double>>> grouped;
  for (const auto& r : rows) {
    auto& g = grouped[{r.fidelity, r.arrival, r.polling, r.interval_s}];
    g.first.push_back(r.energy_mJ);
    g.second.push_back(r.mean_delay_s);
  }
  std::map<CellKey, CellStats> out;
  for (const auto& [k, g] : grouped) out[k] = {summarize_cell(g.first), summarize_cell(g.second)};
  return out;
}

inline void write_summary_csv(std::ostream& os, const std::map<CellKey, CellStats>& cells) {
  os << "fidelity,arrival,polling,mean_poll_interval_s,n_runs,energy_mean_mJ,energy_ci95_mJ,"
        "delay_mean_s,delay_ci95_s\n";
  for (const auto& [k, s] : cells) {
    os << to_string(k.fidelity) << ',' << to_string(k.arrival) << ',' << to_string(k.polling)
       << ',' << format_double(k.interval_s) << ',' << s.energy.n_runs << ','
       << format_double(s.energy.mean) << ',' << format_double(s.energy.ci_half_width) << ','
       << format_double(s.delay.mean) << ',' << format_double(s.delay.ci_half_width) << '\n';
  }
}

// ---- configuration file ----------------------------------------------------

namespace detail {

template <class T>
std::vector<T> parse_list(const std::string& s, T (*parse)(std::string_view)) {
  std::vector<T> out;
  for (auto item : split(s, ',')) {
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    if (!item.empty()) out.push_back(parse(item));
  }
  return out;
}

inline double parse_double_sv(std::string_view s) { return parse_number<double>(s, 0); }

}  // namespace detail

inline std::vector<double> parse_grid(const std::string& s) {
  return detail::parse_list<double>(s, &detail::parse_double_sv);
}

/// Applies an INI file on top of the current values. Every key is optional; unknown
/// sections or keys are rejected so typos do not pass silently.
inline void apply_ini(ExperimentConfig& c, std::istream& is) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  pt::read_ini(is, tree);

  const bool high = c.fidelity == Fidelity::High;
  std::map<std::string, std::map<std::string, std::function<void(const std::string&)>>> keys;
  auto num = [](double& dst) { return [&dst](const std::string& v) { dst = detail::parse_double_sv(v); }; };
  auto integer = [](int& dst) {
    return [&dst](const std::string& v) { dst = detail::parse_number<int>(v, 0); };
  };

  auto& e = keys["experiment"];
  e["master_seed"] = [&](const std::string& v) {
    c.master_seed = detail::parse_number<std::uint64_t>(v, 0);
  };
  e["grid"] = [&](const std::string& v) { c.interval_grid_s = parse_grid(v); };
  e["runs_low"] = integer(c.runs_low);
  e["runs_high_deterministic"] = integer(c.runs_high_deterministic);
  e["runs_high_stochastic"] = integer(c.runs_high_stochastic);
  e["workers"] = [&](const std::string& v) { c.workers = detail::parse_number<unsigned>(v, 0); };
  e[high ? "arrivals_high" : "arrivals_low"] = [&](const std::string& v) {
    c.arrivals = detail::parse_list<ArrivalKind>(v, &parse_arrival_kind);
  };
  e[high ? "arrivals_low" : "arrivals_high"] = [](const std::string&) {};
  e[high ? "polling_high" : "polling_low"] = [&](const std::string& v) {
    c.polling_kinds = detail::parse_list<PollingKind>(v, &parse_polling_kind);
  };
  e[high ? "polling_low" : "polling_high"] = [](const std::string&) {};

  auto& fr = keys["frames"];
  auto both_frames = [&](int FrameSpec::*m) {
    return [&c, m](const std::string& v) {
      c.high.frames.*m = c.low.frames.*m = detail::parse_number<int>(v, 0);
    };
  };
  fr["data_payload_bytes"] = both_frames(&FrameSpec::data_payload_bytes);
  fr["data_overhead_bytes"] = both_frames(&FrameSpec::data_overhead_bytes);
  fr["ack_bytes"] = both_frames(&FrameSpec::ack_bytes);
  fr["preamble_strobe_bytes"] = both_frames(&FrameSpec::preamble_strobe_bytes);
  fr["early_ack_bytes"] = both_frames(&FrameSpec::early_ack_bytes);
  fr["max_concat"] = both_frames(&FrameSpec::max_concat);

  auto& b = keys["bursty"];
  auto both_arrival = [&](double ArrivalModel::*m) {
    return [&c, m](const std::string& v) {
      c.high.arrival.*m = c.low.arrival.*m = detail::parse_double_sv(v);
    };
  };
  b["on_mean_s"] = both_arrival(&ArrivalModel::burst_on_mean_s);
  b["off_mean_s"] = both_arrival(&ArrivalModel::burst_off_mean_s);
  b["rate_factor"] = both_arrival(&ArrivalModel::burst_rate_factor);

  auto& h = keys["high"];
  h["horizon_s"] = num(c.high.horizon_s);
  h["mean_arrival_s"] = num(c.high.arrival.mean_interval_s);
  h["energy_per_byte_mJ"] = num(c.high.energy.energy_per_byte_mJ);
  h["energy_per_poll_mJ"] = num(c.high.energy.energy_per_poll_mJ);
  h["energy_per_ack_mJ"] = num(c.high.energy.energy_per_ack_mJ);
  h["energy_single_data_mJ"] = num(c.high.energy.energy_single_data_mJ);

  auto& l = keys["low"];
  l["node_count"] = integer(c.low.node_count);
  l["bit_rate_bps"] = num(c.low.bit_rate_bps);
  l["message_interval_s"] = num(c.low.arrival.mean_interval_s);
  l["packets_per_node"] = integer(c.low.packets_per_node);
  l["cycle_duration_s"] = num(c.low.polling.cycle_duration_s);
  l["cv_threshold"] = num(c.low.polling.dynamic_threshold);
  l["dynamic_initial"] = [&](const std::string& v) {
    c.low.dynamic_initial_kind = parse_polling_kind(v);
  };

  auto& r = keys["radio"];
  r["tx_mW"] = num(c.low.radio.tx_mW);
  r["rx_mW"] = num(c.low.radio.rx_mW);
  r["listen_mW"] = num(c.low.radio.listen_mW);
  r["sleep_mW"] = num(c.low.radio.sleep_mW);

  auto& m = keys["mac"];
  m["strobe_gap_s"] = num(c.low.mac.strobe_gap_s);
  m["early_ack_wait_s"] = num(c.low.mac.early_ack_wait_s);
  m["cca_slot_s"] = num(c.low.mac.cca_slot_s);
  m["initial_backoff_slots"] = integer(c.low.mac.initial_backoff_slots);
  m["max_backoff_slots"] = integer(c.low.mac.max_backoff_slots);
  m["max_retries"] = integer(c.low.mac.max_retries);
  m["poll_listen_s"] = num(c.low.mac.poll_listen_s);
  m["max_poll_extensions"] = integer(c.low.mac.max_poll_extensions);
  m["strobe_timeout_s"] = [&](const std::string& v) {
    c.low.mac.strobe_timeout_s = detail::parse_double_sv(v);
  };

  for (const auto& [section, body] : tree) {
    auto sec = keys.find(section);
    if (sec == keys.end()) throw ParameterError("config: unknown section [" + section + "]");
    for (const auto& [key, value] : body) {
      auto k = sec->second.find(key);
      if (k == sec->second.end())
        throw ParameterError("config: unknown key '" + key + "' in [" + section + "]");
      try {
        k->second(value.data());
      } catch (const ParameterError& err) {
        throw ParameterError("config: bad value for " + section + "." + key + ": " + err.what());
      }
    }
  }
  c.high.validate();
  c.low.validate();
  auto bursty = c.low.arrival;
  bursty.kind = ArrivalKind::Bursty;
  bursty.validate();
  c.validate();
}

inline void apply_ini_file(ExperimentConfig& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParameterError("cannot open config file " + path);
  apply_ini(c, in);
}

}  // namespace adpmac::experiment
