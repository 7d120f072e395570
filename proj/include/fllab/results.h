#pragma once

// Result rows and their CSV form: `scenario,round,metric,value`, values with
// nine significant digits.

#include <cstddef>
#include <filesystem>
#include <set>
#include <string>
#include <tuple>
#include <vector>

namespace fllab {

struct ResultRow {
  std::string scenario;
  std::size_t round = 0;
  std::string metric;
  double value = 0.0;

  bool operator==(const ResultRow&) const = default;
};

// accuracy, victim_f1, rest_f1, update_norm, sigma_t, epsilon, attack_mse,
// attack_ssim.
const std::vector<std::string>& metric_vocabulary();
bool is_metric(const std::string& name);

// Nine-significant-digit text of v and the double that text parses to.
std::string format_value(double v);
double quantize(double v);

// Append-only collection with unique (scenario, round, metric). Values are
// stored quantized so that a written table parses back identically.
class ResultTable {
 public:
  // Throws InputError on an unknown metric, a non-finite value or a repeated key.
  void add(const std::string& scenario, std::size_t round, const std::string& metric,
           double value);
  void add(const ResultRow& row) { add(row.scenario, row.round, row.metric, row.value); }
  void append(const ResultTable& other);

  const std::vector<ResultRow>& rows() const { return rows_; }
  bool empty() const { return rows_.empty(); }

 private:
  std::vector<ResultRow> rows_;
  std::set<std::tuple<std::string, std::size_t, std::string>> keys_;
};

std::string results_csv(const std::vector<ResultRow>& rows);
void write_results(const std::vector<ResultRow>& rows, const std::filesystem::path& path);
// Throws IoError on a missing file or malformed line.
std::vector<ResultRow> read_results(const std::filesystem::path& path);
std::vector<ResultRow> parse_results(const std::string& text);

// Writes text to a file, creating parent directories. Throws IoError.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace fllab
