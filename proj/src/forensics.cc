#include "fllab/forensics.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <Eigen/Dense>

#include "fllab/errors.h"
#include "fllab/rng.h"

namespace fllab {

void GradientTrace::validate() const {
  std::set<std::pair<std::size_t, int>> seen;
  for (const TraceRecord& r : records) {
    if (r.slice.size() != dim()) throw InputError("trace slices differ in length");
    if (!seen.insert({r.round, r.client_id}).second) {
      throw InputError("duplicate trace record for client " + std::to_string(r.client_id) +
                       " in round " + std::to_string(r.round));
    }
  }
}

namespace {

std::vector<double> update_vector(const ClientUpdate& update, const ParamVector* global) {
  std::span<const double> v = update.values();
  std::vector<double> out(v.begin(), v.end());
  if (update.kind() == PayloadKind::kWeights) {
    if (global == nullptr) throw InputError("weights payloads need the global model");
    if (global->size() != out.size()) throw InputError("global model does not match the update");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= (*global)[i];
  }
  return out;
}

double dist(const Point2& a, const Point2& b) { return std::hypot(a[0] - b[0], a[1] - b[1]); }

}  // namespace

std::vector<double> extract_class_slice(const ClientUpdate& update, const ModelSpec& spec,
                                        std::size_t c, const ParamVector* global) {
  if (!(update.layout() == ParamLayout(spec))) throw InputError("update does not match the model");
  const LayerSegment& head = update.layout().head();
  if (c >= head.rows) throw InputError("class index out of range");
  const std::vector<double> v = update_vector(update, global);
  const std::size_t row = head.weight_offset() + c * head.cols;
  std::vector<double> out(v.begin() + static_cast<std::ptrdiff_t>(row),
                          v.begin() + static_cast<std::ptrdiff_t>(row + head.cols));
  out.push_back(v[head.bias_offset() + c]);
  return out;
}

double update_norm(const ClientUpdate& update, const ParamVector* global) {
  const std::vector<double> v = update_vector(update, global);
  return l2_norm(std::span<const double>(v));
}

void append_round(GradientTrace& trace, const ModelSpec& spec, std::size_t round,
                  const ParamVector* global, std::span<const ClientUpdate> updates,
                  const std::vector<bool>& malicious) {
  if (!malicious.empty() && malicious.size() != updates.size()) {
    throw InputError("malicious flags must parallel the updates");
  }
  for (std::size_t i = 0; i < updates.size(); ++i) {
    TraceRecord r;
    r.round = round;
    r.client_id = updates[i].client_id;
    r.malicious = !malicious.empty() && malicious[i];
    r.norm = update_norm(updates[i], global);
    r.slice = extract_class_slice(updates[i], spec, trace.class_index, global);
    trace.records.push_back(std::move(r));
  }
}

GradientTrace build_trace(const RunLog& log, const ModelSpec& spec, std::size_t class_index) {
  GradientTrace trace;
  trace.class_index = class_index;
  for (std::size_t t = 0; t < log.rounds.size(); ++t) {
    const RoundLog& rl = log.rounds[t];
    if (rl.updates.empty()) throw InputError("run was not recorded with updates");
    const ParamVector* global = &log.initial;
    if (t > 0) {
      global = log.rounds[t - 1].params ? &*log.rounds[t - 1].params : nullptr;
    }
    append_round(trace, spec, t, global, rl.updates, rl.poisoned);
  }
  return trace;
}

Projection pca2(const std::vector<std::vector<double>>& points) {
  if (points.size() < 2) throw InputError("PCA needs at least two points");
  const std::size_t n = points.size();
  const std::size_t d = points.front().size();
  if (d == 0) throw InputError("PCA needs non-empty points");
  Eigen::MatrixXd x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    if (points[i].size() != d) throw InputError("PCA points differ in dimension");
    for (std::size_t j = 0; j < d; ++j) x(i, j) = points[i][j];
  }
  x.rowwise() -= x.colwise().mean();

  Projection p;
  p.points.assign(n, Point2{0.0, 0.0});
  if (x.cwiseAbs().maxCoeff() == 0.0) {
    p.degenerate = true;
    return p;
  }
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw NumericError("eigen-decomposition failed");
  const Eigen::VectorXd& evals = es.eigenvalues();  // ascending
  const double total = std::max(evals.sum(), 0.0);
  if (!(total > 0.0)) {
    p.degenerate = true;
    return p;
  }
  for (std::size_t k = 0; k < 2 && k < d; ++k) {
    const Eigen::Index col = static_cast<Eigen::Index>(d - 1 - k);
    Eigen::VectorXd v = es.eigenvectors().col(col);
    Eigen::Index big = 0;
    v.cwiseAbs().maxCoeff(&big);
    if (v(big) < 0.0) v = -v;
    const Eigen::VectorXd proj = x * v;
    for (std::size_t i = 0; i < n; ++i) p.points[i][k] = proj(static_cast<Eigen::Index>(i));
    p.explained[k] = std::max(evals(col), 0.0) / total;
  }
  return p;
}

Clustering two_means(std::span<const Point2> points, std::uint64_t seed) {
  if (points.empty()) throw InputError("2-means needs at least one point");
  const std::size_t n = points.size();
  Clustering c;
  c.assignment.assign(n, 0);

  Rng rng = make_rng(seed, {});
  const std::size_t first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  std::size_t second = first;
  double far = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dd = dist(points[i], points[first]);
    if (dd > far) {
      far = dd;
      second = i;
    }
  }
  c.centroids = {points[first], points[second]};
  if (far == 0.0) {
    c.degenerate = true;
    return c;
  }

  for (std::size_t it = 0; it < 100; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      c.assignment[i] = dist(points[i], c.centroids[1]) < dist(points[i], c.centroids[0]) ? 1 : 0;
    }
    std::array<Point2, 2> next = c.centroids;
    for (int k = 0; k < 2; ++k) {
      double sx = 0.0, sy = 0.0;
      std::size_t m = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (c.assignment[i] != k) continue;
        sx += points[i][0];
        sy += points[i][1];
        ++m;
      }
      if (m > 0) next[k] = {sx / static_cast<double>(m), sy / static_cast<double>(m)};
    }
    const double drift = std::max(dist(next[0], c.centroids[0]), dist(next[1], c.centroids[1]));
    c.centroids = next;
    double obj = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dd = dist(points[i], c.centroids[static_cast<std::size_t>(c.assignment[i])]);
      obj += dd * dd;
    }
    c.objective.push_back(obj);
    c.iterations = it + 1;
    if (drift < 1e-9) break;
  }
  return c;
}

Clustering density_filter(std::span<const Point2> points, Clustering clusters, double q) {
  if (!(q > 0.0 && q < 0.5)) throw ConfigError("density filter q must lie in (0, 0.5)");
  if (clusters.assignment.size() != points.size()) {
    throw InputError("assignments do not match the points");
  }
  if (clusters.degenerate) return clusters;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double d0 = dist(points[i], clusters.centroids[0]);
    const double d1 = dist(points[i], clusters.centroids[1]);
    double ratio;
    if (d1 == 0.0) {
      ratio = d0 == 0.0 ? 1.0 : INFINITY;
    } else {
      ratio = d0 / d1;
    }
    if (ratio >= 1.0 - q && ratio <= 1.0 + q) clusters.assignment[i] = kUncertain;
  }
  return clusters;
}

double silhouette(std::span<const Point2> points, std::span<const int> assignment) {
  if (assignment.size() != points.size()) throw InputError("assignments do not match the points");
  std::array<std::vector<std::size_t>, 2> members;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (assignment[i] == 0 || assignment[i] == 1) {
      members[static_cast<std::size_t>(assignment[i])].push_back(i);
    }
  }
  if (members[0].empty() || members[1].empty()) return 0.0;
  double total = 0.0;
  std::size_t count = 0;
  for (int k = 0; k < 2; ++k) {
    const auto& own = members[static_cast<std::size_t>(k)];
    const auto& other = members[static_cast<std::size_t>(1 - k)];
    for (std::size_t i : own) {
      ++count;
      if (own.size() == 1) continue;
      double a = 0.0, b = 0.0;
      for (std::size_t j : own) a += dist(points[i], points[j]);
      for (std::size_t j : other) b += dist(points[i], points[j]);
      a /= static_cast<double>(own.size() - 1);
      b /= static_cast<double>(other.size());
      const double m = std::max(a, b);
      if (m > 0.0) total += (b - a) / m;
    }
  }
  return total / static_cast<double>(count);
}

DetectionReport draft_report(const GradientTrace& trace, const DetectionOptions& opts) {
  trace.validate();
  DetectionReport r;
  if (trace.records.size() < 2) {
    r.projection.points.assign(trace.records.size(), Point2{0.0, 0.0});
    r.projection.degenerate = true;
    r.clusters.assignment.assign(trace.records.size(), 0);
    r.clusters.degenerate = true;
    return r;
  }
  std::vector<std::vector<double>> slices;
  slices.reserve(trace.records.size());
  for (const TraceRecord& rec : trace.records) slices.push_back(rec.slice);
  r.projection = pca2(slices);
  if (r.projection.degenerate) {
    r.clusters.assignment.assign(trace.records.size(), 0);
    r.clusters.degenerate = true;
    return r;
  }
  r.clusters = density_filter(r.projection.points, two_means(r.projection.points, opts.seed), opts.q);
  r.silhouette = silhouette(r.projection.points, r.clusters.assignment);
  return r;
}

DetectionReport flag_malicious(const GradientTrace& trace, DetectionReport report,
                               const DetectionOptions& opts) {
  if (report.clusters.assignment.size() != trace.records.size()) {
    throw InputError("report does not match the trace");
  }
  report.suspect_cluster = kUncertain;
  report.temporal_score.clear();
  report.flagged.clear();

  std::array<std::size_t, 2> size{0, 0};
  std::array<double, 2> norm{0.0, 0.0};
  for (std::size_t i = 0; i < trace.records.size(); ++i) {
    const int a = report.clusters.assignment[i];
    if (a == kUncertain) continue;
    ++size[static_cast<std::size_t>(a)];
    norm[static_cast<std::size_t>(a)] += trace.records[i].norm;
  }
  const bool usable = !report.clusters.degenerate && size[0] > 0 && size[1] > 0 &&
                      report.silhouette >= opts.min_silhouette;
  if (usable) {
    const std::array<double, 2> mean_norm{norm[0] / static_cast<double>(size[0]),
                                          norm[1] / static_cast<double>(size[1])};
    if (size[0] != size[1]) {
      const int minority = size[0] < size[1] ? 0 : 1;
      if (!opts.norm_rule || mean_norm[static_cast<std::size_t>(minority)] >
                                 mean_norm[static_cast<std::size_t>(1 - minority)]) {
        report.suspect_cluster = minority;
      }
    } else if (opts.norm_rule && mean_norm[0] != mean_norm[1]) {
      report.suspect_cluster = mean_norm[0] > mean_norm[1] ? 0 : 1;
    }
  }

  if (report.suspect_cluster != kUncertain) {
    std::size_t last = 0;
    for (const TraceRecord& rec : trace.records) last = std::max(last, rec.round);
    std::map<int, std::pair<std::size_t, std::size_t>> tally;  // (in suspect, certain)
    for (std::size_t i = 0; i < trace.records.size(); ++i) {
      const TraceRecord& rec = trace.records[i];
      if (rec.round + opts.window <= last) continue;
      const int a = report.clusters.assignment[i];
      if (a == kUncertain) continue;
      auto& t = tally[rec.client_id];
      ++t.second;
      if (a == report.suspect_cluster) ++t.first;
    }
    for (const auto& [client, t] : tally) {
      const double score = static_cast<double>(t.first) / static_cast<double>(t.second);
      report.temporal_score[client] = score;
      if (score >= opts.threshold) report.flagged.push_back(client);
    }
  }

  std::vector<int> truth;
  for (const TraceRecord& rec : trace.records) {
    if (rec.malicious) truth.push_back(rec.client_id);
  }
  if (!truth.empty()) report.summary = score_detection(trace, report.flagged, truth);
  return report;
}

DetectionReport detect(const GradientTrace& trace, const DetectionOptions& opts) {
  return flag_malicious(trace, draft_report(trace, opts), opts);
}

DetectionSummary score_detection(const GradientTrace& trace, std::span<const int> flagged,
                                 std::span<const int> malicious) {
  std::set<int> observed;
  for (const TraceRecord& rec : trace.records) observed.insert(rec.client_id);
  std::set<int> positives;
  for (int id : malicious) {
    if (observed.count(id)) positives.insert(id);
  }
  const std::set<int> flags(flagged.begin(), flagged.end());
  DetectionSummary s;
  for (int id : flags) {
    if (positives.count(id)) {
      ++s.true_positives;
    } else if (observed.count(id)) {
      ++s.false_positives;
    }
  }
  s.false_negatives = positives.size() - s.true_positives;
  s.negatives = observed.size() - positives.size();
  const std::size_t flagged_n = s.true_positives + s.false_positives;
  s.precision = flagged_n == 0 ? 1.0 : static_cast<double>(s.true_positives) / static_cast<double>(flagged_n);
  s.recall = positives.empty() ? 1.0
                               : static_cast<double>(s.true_positives) / static_cast<double>(positives.size());
  s.false_positive_rate =
      s.negatives == 0 ? 0.0 : static_cast<double>(s.false_positives) / static_cast<double>(s.negatives);
  return s;
}

ClassScan scan_classes(const RunLog& log, const ModelSpec& spec, const DetectionOptions& opts) {
  ClassScan scan;
  for (std::size_t c = 0; c < spec.classes(); ++c) {
    const DetectionReport r = draft_report(build_trace(log, spec, c), opts);
    scan.silhouettes.push_back(r.silhouette);
    if (r.silhouette >= 0.5) scan.suspects.push_back(c);
  }
  return scan;
}

ParamVector aggregate_with_removal(AggregationRule rule, const GlobalState& state,
                                   std::span<const ClientUpdate> updates,
                                   const DetectionReport& report) {
  return aggregate_excluding(rule, state, updates, report.flagged);
}

OnlineDetector::OnlineDetector(ModelSpec spec, std::size_t class_index, DetectionOptions opts)
    : spec_(std::move(spec)), opts_(opts) {
  if (class_index >= spec_.classes()) throw ConfigError("detector class index out of range");
  trace_.class_index = class_index;
}

std::vector<int> OnlineDetector::screen(std::size_t round, const ParamVector& global,
                                        std::span<const ClientUpdate> updates) {
  append_round(trace_, spec_, round, &global, updates);
  if (opts_.history > 0) {
    std::erase_if(trace_.records, [&](const TraceRecord& r) { return r.round + opts_.history <= round; });
  }
  const DetectionReport report = detect(trace_, opts_);
  std::vector<int> out;
  for (const ClientUpdate& u : updates) {
    if (std::binary_search(report.flagged.begin(), report.flagged.end(), u.client_id)) {
      out.push_back(u.client_id);
    }
  }
  std::sort(out.begin(), out.end());
  history_.push_back(out);
  return out;
}

UpdateScreen OnlineDetector::as_screen() {
  return [this](std::size_t round, const ParamVector& global, std::span<const ClientUpdate> updates) {
    return screen(round, global, updates);
  };
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_trace_csv(const GradientTrace& trace, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << "round,client_id,malicious,norm";
  for (std::size_t j = 0; j < trace.dim(); ++j) out << ",s" << j;
  out << '\n';
  for (const TraceRecord& r : trace.records) {
    out << r.round << ',' << r.client_id << ',' << (r.malicious ? 1 : 0) << ',' << num(r.norm);
    for (double v : r.slice) out << ',' << num(v);
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

GradientTrace read_trace_csv(const std::filesystem::path& path, std::size_t class_index) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("round,client_id,malicious,norm", 0) != 0) {
    throw IoError("missing trace header in " + path.string());
  }
  GradientTrace trace;
  trace.class_index = class_index;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 4) throw IoError("short trace row at line " + std::to_string(lineno));
    try {
      TraceRecord r;
      r.round = std::stoull(cells[0]);
      r.client_id = std::stoi(cells[1]);
      r.malicious = cells[2] == "1";
      r.norm = std::stod(cells[3]);
      for (std::size_t j = 4; j < cells.size(); ++j) r.slice.push_back(std::stod(cells[j]));
      trace.records.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw IoError("malformed trace row at line " + std::to_string(lineno));
    }
  }
  trace.validate();
  return trace;
}

void write_scatter_csv(const GradientTrace& trace, const DetectionReport& report,
                       const std::filesystem::path& path) {
  if (report.projection.points.size() != trace.records.size()) {
    throw InputError("report does not match the trace");
  }
  std::ofstream out = open_out(path);
  out << "x,y,cluster,truth\n";
  for (std::size_t i = 0; i < trace.records.size(); ++i) {
    const Point2& p = report.projection.points[i];
    out << num(p[0]) << ',' << num(p[1]) << ',' << report.clusters.assignment[i] << ','
        << (trace.records[i].malicious ? 1 : 0) << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

void write_detection_csv(const DetectionReport& report, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << "client_id,score,flagged\n";
  for (const auto& [client, score] : report.temporal_score) {
    const bool f = std::binary_search(report.flagged.begin(), report.flagged.end(), client);
    out << client << ',' << num(score) << ',' << (f ? 1 : 0) << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace fllab
