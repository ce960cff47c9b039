#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>

#include "geoadapt/errors.hpp"
#include "geoadapt/harness.hpp"

namespace geoadapt::harness {

namespace {

struct RunSummary {
  std::string variant;
  double final_target_acc = 0.0;
  double best_target_acc = 0.0;
};

RunSummary read_summary(const std::filesystem::path& run_dir) {
  const std::filesystem::path path = run_dir / "summary.json";
  std::ifstream is(path);
  if (!is) throw ArgumentError("report: cannot open " + path.string());
  nlohmann::json j;
  try {
    is >> j;
    RunSummary s;
    s.variant = j.at("variant").get<std::string>();
    s.final_target_acc = j.at("final").at("target_test_acc").get<double>();
    s.best_target_acc = j.at("best_val").at("target_test_acc").get<double>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad summary: " + e.what(), 0);
  }
}

std::pair<double, double> mean_sem(const std::vector<double>& xs) {
  const auto n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  if (xs.size() < 2) {
    return {mean, std::numeric_limits<double>::quiet_NaN()};
  }
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= (n - 1.0);
  return {mean, std::sqrt(var / n)};
}

const std::vector<std::string>& canonical_variants() {
  static const std::vector<std::string> order = {
      "baseline", "selftrain", "rot", "loc", "rot_loc", "full"};
  return order;
}

std::string fmt_mean_sem(const ReportRow& row, bool best) {
  if (row.runs == 0) return "absent";
  const double mean = best ? row.best_target_mean : row.final_target_mean;
  const double sem = best ? row.best_target_sem : row.final_target_sem;
  char buf[64];
  if (std::isfinite(sem)) {
    std::snprintf(buf, sizeof(buf), "%.4f +/- %.4f", mean, sem);
  } else {
    std::snprintf(buf, sizeof(buf), "%.4f", mean);
  }
  return buf;
}

}  // namespace

Report build_report(const std::vector<std::filesystem::path>& run_dirs) {
  std::map<std::string, std::vector<RunSummary>> by_variant;
  for (const auto& dir : run_dirs) {
    RunSummary s = read_summary(dir);
    by_variant[s.variant].push_back(std::move(s));
  }

  std::vector<std::string> variants = canonical_variants();
  for (const auto& [name, _] : by_variant) {
    if (std::find(variants.begin(), variants.end(), name) == variants.end()) {
      variants.push_back(name);
    }
  }

  Report report;
  for (const std::string& name : variants) {
    ReportRow row;
    row.variant = name;
    const auto it = by_variant.find(name);
    if (it != by_variant.end()) {
      std::vector<double> finals, bests;
      for (const RunSummary& s : it->second) {
        finals.push_back(s.final_target_acc);
        bests.push_back(s.best_target_acc);
        row.final_target_accs.push_back(s.final_target_acc);
      }
      row.runs = static_cast<int>(finals.size());
      std::tie(row.final_target_mean, row.final_target_sem) = mean_sem(finals);
      std::tie(row.best_target_mean, row.best_target_sem) = mean_sem(bests);
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string report_to_text(const Report& report) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-12s %5s  %-22s %-22s\n", "variant",
                "runs", "target-test (final)", "target-test (best-val)");
  out += line;
  for (const ReportRow& row : report.rows) {
    std::snprintf(line, sizeof(line), "%-12s %5d  %-22s %-22s\n",
                  row.variant.c_str(), row.runs,
                  fmt_mean_sem(row, false).c_str(),
                  fmt_mean_sem(row, true).c_str());
    out += line;
  }
  return out;
}

std::string report_to_csv(const Report& report) {
  std::string out =
      "variant,runs,final_target_mean,final_target_sem,best_target_mean,"
      "best_target_sem\n";
  char buf[64];
  auto cell = [&buf](double v) -> std::string {
    if (!std::isfinite(v)) return "";
    std::snprintf(buf, sizeof(buf), "%.9f", v);
    return buf;
  };
  for (const ReportRow& row : report.rows) {
    out += row.variant + "," + std::to_string(row.runs) + ",";
    if (row.runs > 0) {
      out += cell(row.final_target_mean);
      out += ",";
      out += cell(row.final_target_sem);
      out += ",";
      out += cell(row.best_target_mean);
      out += ",";
      out += cell(row.best_target_sem);
    } else {
      out += ",,,";
    }
    out += "\n";
  }
  return out;
}

}  // namespace geoadapt::harness
