#include "fllab/results.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "fllab/errors.h"

namespace fllab {

const std::vector<std::string>& metric_vocabulary() {
  static const std::vector<std::string> names = {"accuracy",   "victim_f1", "rest_f1",
                                                 "update_norm", "sigma_t",  "epsilon",
                                                 "attack_mse",  "attack_ssim"};
  return names;
}

bool is_metric(const std::string& name) {
  const auto& v = metric_vocabulary();
  return std::find(v.begin(), v.end(), name) != v.end();
}

std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

double quantize(double v) { return std::strtod(format_value(v).c_str(), nullptr); }

void ResultTable::add(const std::string& scenario, std::size_t round, const std::string& metric,
                      double value) {
  if (!is_metric(metric)) throw InputError("metric '" + metric + "' is not in the vocabulary");
  if (!std::isfinite(value)) throw InputError("non-finite value for metric '" + metric + "'");
  if (scenario.empty() || scenario.find_first_of(",\n\"") != std::string::npos) {
    throw InputError("scenario id '" + scenario + "' is empty or contains a separator");
  }
  if (!keys_.emplace(scenario, round, metric).second) {
    throw InputError("duplicate result " + scenario + "/" + std::to_string(round) + "/" + metric);
  }
  rows_.push_back({scenario, round, metric, quantize(value)});
}

void ResultTable::append(const ResultTable& other) {
  for (const auto& r : other.rows()) add(r);
}

std::string results_csv(const std::vector<ResultRow>& rows) {
  std::string out = "scenario,round,metric,value\n";
  for (const auto& r : rows) {
    out += r.scenario + "," + std::to_string(r.round) + "," + r.metric + "," +
           format_value(r.value) + "\n";
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void write_results(const std::vector<ResultRow>& rows, const std::filesystem::path& path) {
  write_text(path, results_csv(rows));
}

std::vector<ResultRow> parse_results(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "scenario,round,metric,value") {
    throw IoError("results CSV lacks the scenario,round,metric,value header");
  }
  std::vector<ResultRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 4) throw IoError("results CSV line " + std::to_string(lineno) + " malformed");
    char* end = nullptr;
    ResultRow r;
    r.scenario = f[0];
    r.round = std::strtoull(f[1].c_str(), &end, 10);
    if (f[1].empty() || *end != '\0') throw IoError("bad round on line " + std::to_string(lineno));
    r.metric = f[2];
    r.value = std::strtod(f[3].c_str(), &end);
    if (f[3].empty() || *end != '\0') throw IoError("bad value on line " + std::to_string(lineno));
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<ResultRow> read_results(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_results(buf.str());
}

}  // namespace fllab
