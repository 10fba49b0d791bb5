#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "adpmac.hpp"

namespace fs = std::filesystem;
using namespace adpmac;
using experiment::ExperimentConfig;
using experiment::Fidelity;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string grid;
  std::optional<int> runs;
  std::string trace;
};

void add_common(CLI::App* sub, Common& o) {
  sub->add_option("--config", o.config, "INI file overriding model constants");
  sub->add_option("--seed", o.seed, "master seed");
  sub->add_option("--grid", o.grid, "comma-separated mean poll intervals in seconds");
  sub->add_option("--runs", o.runs, "runs per cell (overrides the per-fidelity defaults)");
}

ExperimentConfig build(Fidelity f, const Common& o) {
  auto c = ExperimentConfig::defaults(f);
  if (!o.config.empty()) experiment::apply_ini_file(c, o.config);
  if (o.seed) c.master_seed = *o.seed;
  if (!o.grid.empty()) c.interval_grid_s = experiment::parse_grid(o.grid);
  if (o.runs) c.runs_per_cell = *o.runs;
  c.validate();
  return c;
}

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p);
  if (!os) throw ParameterError("cannot write " + p.string());
  return os;
}

fs::path summary_path(const fs::path& csv) {
  auto p = csv;
  p.replace_filename(csv.stem().string() + "_summary.csv");
  return p;
}

std::vector<experiment::Row> sweep_to(const ExperimentConfig& c, const std::string& out) {
  auto rows = experiment::run_sweep(c);
  if (out.empty() || out == "-") {
    experiment::write_csv(std::cout, rows);
    return rows;
  }
  auto os = open_out(out);
  experiment::write_csv(os, rows);
  auto ss = open_out(summary_path(out));
  experiment::write_summary_csv(ss, experiment::summarize_cells(rows));
  return rows;
}

// Re-runs the first cell of a detailed sweep with the event trace enabled.
void write_trace(const ExperimentConfig& c, const std::string& path) {
  const auto seed = experiment::run_seed(c.master_seed, c.fidelity, c.arrivals.front(), 0, 0);
  auto cfg = experiment::low_config_for(c, c.arrivals.front(), c.polling_kinds.front(),
                                        c.interval_grid_s.front(), seed);
  auto os = open_out(path);
  low::run_low_level(cfg, &os);
}

std::vector<experiment::Row> read_rows(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParameterError("cannot open " + path);
  return experiment::read_csv(in);
}

nlohmann::json to_json(const compare::ComparisonReport& rep) {
  nlohmann::json j;
  for (const auto& t : rep.trends)
    j["trends"].push_back({{"fidelity", to_string(t.fidelity)},
                           {"arrival", to_string(t.arrival)},
                           {"polling", to_string(t.polling)},
                           {"energy", to_string(t.energy)},
                           {"rho_energy", t.rho_energy},
                           {"delay", to_string(t.delay)},
                           {"rho_delay", t.rho_delay}});
  for (const auto& e : rep.matching) {
    nlohmann::json cells;
    for (const auto& [p, s] : e.cells)
      cells[std::string(to_string(p))] = {{"mean", s.mean}, {"ci95", s.ci_half_width},
                                          {"n_runs", s.n_runs}};
    j["matching"].push_back({{"arrival", to_string(e.arrival)},
                             {"interval_s", e.interval_s},
                             {"metric", e.metric},
                             {"best", to_string(e.best)},
                             {"matched_ci_overlaps_best", e.matched_ci_overlaps_best},
                             {"cells", cells}});
  }
  for (const auto& v : rep.verdicts)
    j["verdicts"].push_back({{"claim", v.claim},
                             {"arrival", to_string(v.arrival)},
                             {"status", to_string(v.status)},
                             {"detail", v.detail},
                             {"cells", v.cells}});
  j["all_pass"] = rep.all_pass();
  return j;
}

int emit_report(const compare::ComparisonReport& rep, const std::string& text_path,
                const std::string& json_path) {
  compare::write_text(std::cout, rep);
  if (!text_path.empty()) {
    auto os = open_out(text_path);
    compare::write_text(os, rep);
  }
  if (!json_path.empty()) {
    auto os = open_out(json_path);
    os << to_json(rep).dump(2) << '\n';
  }
  return rep.all_pass() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ADP-MAC dual-fidelity simulation"};
  app.require_subcommand(1);

  Common high_o, low_o, sweep_o, report_o;
  auto* high = app.add_subcommand("high", "abstract byte-cost sweep");
  add_common(high, high_o);
  high->add_option("--out", high_o.out, "result CSV (default stdout)");

  auto* low = app.add_subcommand("low", "detailed preamble/CSMA sweep");
  add_common(low, low_o);
  low->add_option("--out", low_o.out, "result CSV (default stdout)");
  low->add_option("--trace", low_o.trace, "event trace of the first cell's first run");

  auto* sweep = app.add_subcommand("sweep", "both sweeps into one directory");
  add_common(sweep, sweep_o);
  sweep->add_option("--out", sweep_o.out, "output directory")->required();
  sweep->add_option("--trace", sweep_o.trace, "event trace of the first detailed run");

  std::string cmp_high, cmp_low, cmp_out;
  auto* cmp = app.add_subcommand("compare", "trend comparison of two result CSVs");
  cmp->add_option("high_csv", cmp_high)->required();
  cmp->add_option("low_csv", cmp_low)->required();
  cmp->add_option("--out", cmp_out, "JSON report path");

  auto* report = app.add_subcommand("report", "sweep both fidelities, then compare");
  add_common(report, report_o);
  report->add_option("--out", report_o.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*high) {
      sweep_to(build(Fidelity::High, high_o), high_o.out);
      return 0;
    }
    if (*low) {
      const auto c = build(Fidelity::Low, low_o);
      sweep_to(c, low_o.out);
      if (!low_o.trace.empty()) write_trace(c, low_o.trace);
      return 0;
    }
    if (*sweep || *report) {
      const auto& o = *sweep ? sweep_o : report_o;
      const fs::path dir = o.out;
      const auto hc = build(Fidelity::High, o);
      const auto lc = build(Fidelity::Low, o);
      const auto h = sweep_to(hc, (dir / "high.csv").string());
      const auto l = sweep_to(lc, (dir / "low.csv").string());
      if (!o.trace.empty()) write_trace(lc, o.trace);
      if (*sweep) return 0;
      return emit_report(compare::compare(h, l), (dir / "report.txt").string(),
                         (dir / "report.json").string());
    }
    if (*cmp) {
      return emit_report(compare::compare(read_rows(cmp_high), read_rows(cmp_low)), "", cmp_out);
    }
  } catch (const compare::MissingCells& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ParameterError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const boost::property_tree::ptree_error& e) {
    std::cerr << "error: config: " << e.what() << '\n';
    return 2;
  } catch (const std::ios_base::failure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
