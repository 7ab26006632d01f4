#include "misshift/report.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "misshift/errors.hpp"
#include "misshift/estimator.hpp"

namespace misshift {

namespace {

struct GroupKey {
  std::string scenario, estimator, environment;
  bool operator<(const GroupKey& o) const {
    if (scenario != o.scenario) return scenario < o.scenario;
    if (estimator != o.estimator) return estimator < o.estimator;
    return environment < o.environment;
  }
};

int estimator_order(const std::string& name) {
  const auto& reg = registered_estimators();
  for (std::size_t i = 0; i < reg.size(); ++i) {
    if (reg[i] == name) return static_cast<int>(i);
  }
  return static_cast<int>(reg.size());
}

int environment_order(const std::string& env) {
  if (env == "source") return 0;
  if (env == "target-shifted") return 1;
  if (env == "target-noshift") return 2;
  if (env == "complete") return 3;
  return 4;
}

double mean_of(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

// Baseline value for one record, or throws naming the gap.
class BaselineResolver {
 public:
  BaselineResolver(const std::vector<ResultRecord>& records, std::string baseline)
      : baseline_(std::move(baseline)) {
    if (baseline_ == "complete-data-predictor") baseline_ = "truth";
    if (baseline_ == "bayes-column") baseline_ = "bayes";
    if (baseline_ == "bayes") return;
    for (const ResultRecord& r : records) {
      if (r.estimator == baseline_ && r.status == "ok") {
        by_cell_[cell(r.scenario, r.environment, r.rep)] = r.mse;
      }
    }
  }

  double resolve(const ResultRecord& r) const {
    if (baseline_ == "bayes") {
      if (!r.bayes_mse.has_value()) {
        throw ContractError("report: no analytic baseline for scenario '" + r.scenario +
                            "' environment '" + r.environment + "'");
      }
      return *r.bayes_mse;
    }
    auto it = by_cell_.find(cell(r.scenario, r.environment, r.rep));
    if (it == by_cell_.end()) {
      throw ContractError("report: baseline '" + baseline_ + "' has no record for scenario '" +
                          r.scenario + "' environment '" + r.environment + "' rep " +
                          std::to_string(r.rep));
    }
    return it->second;
  }

 private:
  static std::string cell(const std::string& s, const std::string& e, long rep) {
    return s + "\x1f" + e + "\x1f" + std::to_string(rep);
  }

  std::string baseline_;
  std::map<std::string, double> by_cell_;
};

struct Group {
  std::vector<double> mses;
  std::vector<double> deltas;
};

std::map<GroupKey, Group> group_records(const std::vector<ResultRecord>& records,
                                        const std::string& baseline) {
  bool any_ok = false;
  const BaselineResolver resolver(records, baseline);
  std::map<GroupKey, Group> groups;
  for (const ResultRecord& r : records) {
    if (r.status != "ok" || std::isnan(r.mse)) continue;
    any_ok = true;
    Group& g = groups[GroupKey{r.scenario, r.estimator, r.environment}];
    g.mses.push_back(r.mse);
    g.deltas.push_back(r.mse - resolver.resolve(r));
  }
  if (!any_ok) throw ContractError("report: no successful records to summarize");
  return groups;
}

// --- minimal SVG writing ---------------------------------------------------

std::string svg_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out.push_back(ch);
    }
  }
  return out;
}

struct BoxEntry {
  std::string estimator;
  std::string environment;
  std::vector<double> values;
};

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  if (v.empty()) return 0.0;
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

std::string environment_color(const std::string& env) {
  if (env == "source") return "#888888";
  if (env == "target-shifted") return "#d95f02";
  if (env == "target-noshift") return "#1b9e77";
  if (env == "complete") return "#7570b3";
  return "#333333";
}

void write_scenario_svg(const std::string& path, const std::string& scenario,
                        const std::vector<BoxEntry>& entries,
                        const std::vector<double>& mean_model_deltas) {
  const double box_w = 26.0, slot_w = 34.0;
  const double margin_left = 70.0, margin_right = 20.0, margin_top = 48.0;
  const double margin_bottom = 110.0, plot_h = 300.0;
  const double width = margin_left + margin_right + slot_w * static_cast<double>(entries.size());
  const double height = margin_top + plot_h + margin_bottom;

  double lo = 0.0, hi = 0.0;
  for (const BoxEntry& e : entries) {
    for (double v : e.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  for (double v : mean_model_deltas) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi == lo) hi = lo + 1.0;
  const double pad = 0.08 * (hi - lo);
  lo -= pad;
  hi += pad;
  auto ypix = [&](double v) { return margin_top + plot_h * (hi - v) / (hi - lo); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << margin_left << "\" y=\"22\" font-family=\"sans-serif\" font-size=\"14\">"
      << svg_escape(scenario) << " : MSE delta vs baseline</text>\n";

  // y axis with 6 ticks
  for (int t = 0; t <= 5; ++t) {
    const double v = lo + (hi - lo) * static_cast<double>(t) / 5.0;
    const double y = ypix(v);
    svg << "<line x1=\"" << margin_left - 4 << "\" y1=\"" << y << "\" x2=\""
        << width - margin_right << "\" y2=\"" << y
        << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    std::ostringstream label;
    label.precision(3);
    label << v;
    svg << "<text x=\"" << margin_left - 8 << "\" y=\"" << y + 4
        << "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">" << label.str()
        << "</text>\n";
  }
  // zero line
  if (lo < 0.0 && hi > 0.0) {
    svg << "<line x1=\"" << margin_left << "\" y1=\"" << ypix(0.0) << "\" x2=\""
        << width - margin_right << "\" y2=\"" << ypix(0.0)
        << "\" stroke=\"#000000\" stroke-width=\"1\"/>\n";
  }
  // constant-mean reference
  if (!mean_model_deltas.empty()) {
    const double m = mean_of(mean_model_deltas);
    svg << "<line x1=\"" << margin_left << "\" y1=\"" << ypix(m) << "\" x2=\""
        << width - margin_right << "\" y2=\"" << ypix(m)
        << "\" stroke=\"#555555\" stroke-width=\"1\" stroke-dasharray=\"6 4\"/>\n";
    svg << "<text x=\"" << width - margin_right << "\" y=\"" << ypix(m) - 4
        << "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">mean model"
        << "</text>\n";
  }

  for (std::size_t i = 0; i < entries.size(); ++i) {
    const BoxEntry& e = entries[i];
    const double cx = margin_left + slot_w * (static_cast<double>(i) + 0.5);
    const std::string color = environment_color(e.environment);
    if (e.values.size() >= 3) {
      const double q1 = quantile(e.values, 0.25);
      const double q2 = quantile(e.values, 0.5);
      const double q3 = quantile(e.values, 0.75);
      const double vmin = *std::min_element(e.values.begin(), e.values.end());
      const double vmax = *std::max_element(e.values.begin(), e.values.end());
      svg << "<line x1=\"" << cx << "\" y1=\"" << ypix(vmin) << "\" x2=\"" << cx << "\" y2=\""
          << ypix(vmax) << "\" stroke=\"" << color << "\" stroke-width=\"1\"/>\n";
      svg << "<rect x=\"" << cx - box_w / 2 << "\" y=\"" << ypix(q3) << "\" width=\"" << box_w
          << "\" height=\"" << std::max(1.0, ypix(q1) - ypix(q3)) << "\" fill=\"" << color
          << "\" fill-opacity=\"0.25\" stroke=\"" << color << "\"/>\n";
      svg << "<line x1=\"" << cx - box_w / 2 << "\" y1=\"" << ypix(q2) << "\" x2=\""
          << cx + box_w / 2 << "\" y2=\"" << ypix(q2) << "\" stroke=\"" << color
          << "\" stroke-width=\"2\"/>\n";
    }
    for (double v : e.values) {
      svg << "<circle cx=\"" << cx << "\" cy=\"" << ypix(v) << "\" r=\"2.5\" fill=\"" << color
          << "\"/>\n";
    }
    svg << "<text x=\"" << cx << "\" y=\"" << margin_top + plot_h + 12
        << "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\" transform=\""
        << "rotate(-55 " << cx << " " << margin_top + plot_h + 12 << ")\">"
        << svg_escape(e.estimator + " / " + e.environment) << "</text>\n";
  }
  svg << "</svg>\n";

  std::ofstream out(path);
  if (!out) throw IoError("cannot write figure '" + path + "'");
  out << svg.str();
}

std::string safe_filename(std::string s) {
  for (char& ch : s) {
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_' && ch != '.') {
      ch = '_';
    }
  }
  return s;
}

}  // namespace

std::vector<SummaryRow> summarize_results(const std::vector<ResultRecord>& records,
                                          const std::string& baseline) {
  const std::map<GroupKey, Group> groups = group_records(records, baseline);
  std::vector<SummaryRow> rows;
  for (const auto& [key, g] : groups) {
    SummaryRow row;
    row.scenario = key.scenario;
    row.estimator = key.estimator;
    row.environment = key.environment;
    row.n = g.mses.size();
    row.mse_mean = mean_of(g.mses);
    row.mse_sd = sd_of(g.mses);
    row.delta_mean = mean_of(g.deltas);
    row.delta_sd = sd_of(g.deltas);
    rows.push_back(std::move(row));
  }
  std::sort(rows.begin(), rows.end(), [](const SummaryRow& a, const SummaryRow& b) {
    if (a.scenario != b.scenario) return a.scenario < b.scenario;
    const int ea = estimator_order(a.estimator), eb = estimator_order(b.estimator);
    if (ea != eb) return ea < eb;
    return environment_order(a.environment) < environment_order(b.environment);
  });
  return rows;
}

std::vector<std::string> write_report(const std::vector<ResultRecord>& records,
                                      const std::string& baseline,
                                      const std::string& output_dir) {
  std::filesystem::create_directories(output_dir);
  const std::vector<SummaryRow> rows = summarize_results(records, baseline);

  std::vector<std::string> written;
  const std::string summary_path = (std::filesystem::path(output_dir) / "summary.csv").string();
  {
    std::ofstream out(summary_path);
    if (!out) throw IoError("cannot write '" + summary_path + "'");
    out << "scenario,estimator,environment,n,mse_mean,mse_sd,delta_mean,delta_sd\n";
    for (const SummaryRow& r : rows) {
      out << r.scenario << ',' << r.estimator << ',' << r.environment << ',' << r.n << ','
          << format_double(r.mse_mean) << ',' << format_double(r.mse_sd) << ','
          << format_double(r.delta_mean) << ',' << format_double(r.delta_sd) << "\n";
    }
  }
  written.push_back(summary_path);

  // One figure per scenario, boxes ordered like the summary.
  const BaselineResolver resolver(records, baseline);
  std::set<std::string> scenarios;
  for (const ResultRecord& r : records) {
    if (r.status == "ok") scenarios.insert(r.scenario);
  }
  for (const std::string& scenario : scenarios) {
    std::map<std::pair<int, std::pair<int, std::string>>, BoxEntry> ordered;
    std::vector<double> mean_deltas;
    for (const ResultRecord& r : records) {
      if (r.scenario != scenario || r.status != "ok" || std::isnan(r.mse)) continue;
      const double delta = r.mse - resolver.resolve(r);
      if (r.estimator == "mean") mean_deltas.push_back(delta);
      auto key = std::make_pair(estimator_order(r.estimator),
                                std::make_pair(environment_order(r.environment), r.estimator));
      BoxEntry& e = ordered[key];
      e.estimator = r.estimator;
      e.environment = r.environment;
      e.values.push_back(delta);
    }
    std::vector<BoxEntry> entries;
    for (auto& [k, e] : ordered) entries.push_back(std::move(e));
    const std::string fig_path =
        (std::filesystem::path(output_dir) / (safe_filename("scenario_" + scenario) + ".svg"))
            .string();
    write_scenario_svg(fig_path, scenario, entries, mean_deltas);
    written.push_back(fig_path);
  }
  return written;
}

}  // namespace misshift
