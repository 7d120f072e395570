#pragma once

// Server-side poisoned-update detection: per-class gradient slices, PCA to
// two dimensions, 2-means, density filtering and temporal flagging.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "fllab/federation.h"
#include "fllab/model.h"

namespace fllab {

struct TraceRecord {
  std::size_t round = 0;
  int client_id = 0;
  bool malicious = false;  // ground truth when known
  double norm = 0.0;       // l2 norm of the full update
  std::vector<double> slice;
};

struct GradientTrace {
  std::size_t class_index = 0;
  std::vector<TraceRecord> records;

  std::size_t dim() const { return records.empty() ? 0 : records.front().slice.size(); }
  // Throws InputError when slice lengths differ or a (round, client) repeats.
  void validate() const;
};

// Head weight row c followed by head bias c. Weights payloads are taken
// relative to `global`, which they require.
std::vector<double> extract_class_slice(const ClientUpdate& update, const ModelSpec& spec,
                                        std::size_t c, const ParamVector* global = nullptr);

// l2 norm of the update (of w_k - global for weights payloads).
double update_norm(const ClientUpdate& update, const ParamVector* global = nullptr);

// Appends one record per update of one round. `global` may be null for
// gradient and delta payloads; `malicious` is empty or parallel to updates.
void append_round(GradientTrace& trace, const ModelSpec& spec, std::size_t round,
                  const ParamVector* global, std::span<const ClientUpdate> updates,
                  const std::vector<bool>& malicious = {});

// Needs a run recorded with record_updates (and record_params for weights
// payloads past the first round).
GradientTrace build_trace(const RunLog& log, const ModelSpec& spec, std::size_t class_index);

using Point2 = std::array<double, 2>;

struct Projection {
  std::vector<Point2> points;
  std::array<double, 2> explained{0.0, 0.0};  // variance fractions
  bool degenerate = false;
};

Projection pca2(const std::vector<std::vector<double>>& points);

struct Clustering {
  std::vector<int> assignment;  // 0, 1 or kUncertain
  std::array<Point2, 2> centroids{};
  std::vector<double> objective;  // within-cluster sum of squares per iteration
  std::size_t iterations = 0;
  bool degenerate = false;
};

inline constexpr int kUncertain = -1;

Clustering two_means(std::span<const Point2> points, std::uint64_t seed);

// Relabels points whose centroid-distance ratio lies in [1-q, 1+q].
Clustering density_filter(std::span<const Point2> points, Clustering clusters, double q);

// Mean silhouette over the certain points; 0 with fewer than two clusters.
double silhouette(std::span<const Point2> points, std::span<const int> assignment);

struct DetectionOptions {
  std::size_t window = 10;  // W, in rounds
  double threshold = 0.5;
  bool norm_rule = false;
  double q = 0.1;
  // Flags are withheld while the clusters separate less than this.
  double min_silhouette = 0.0;
  // Online screening keeps only the records of the last `history` rounds
  // (0 keeps everything).
  std::size_t history = 0;
  std::uint64_t seed = 0;
};

struct DetectionSummary {
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
  std::size_t negatives = 0;  // observed benign clients
  double precision = 0.0;
  double recall = 0.0;
  double false_positive_rate = 0.0;
};

struct DetectionReport {
  Projection projection;
  Clustering clusters;
  double silhouette = 0.0;
  int suspect_cluster = kUncertain;  // kUncertain: no flags
  std::map<int, double> temporal_score;
  std::vector<int> flagged;  // sorted
  std::optional<DetectionSummary> summary;
};

// Projection, clustering and density filter; no flags yet.
DetectionReport draft_report(const GradientTrace& trace, const DetectionOptions& opts);

// The smaller cluster over the trace is the suspect (ties give none); with the
// norm rule the suspect must also have the larger mean norm, and on a tie the
// larger-norm cluster is chosen. A client is flagged when at least
// `threshold` of its certain records from the last `window` rounds fall in
// the suspect cluster.
DetectionReport flag_malicious(const GradientTrace& trace, DetectionReport draft,
                               const DetectionOptions& opts);

DetectionReport detect(const GradientTrace& trace, const DetectionOptions& opts);

// Scores flags against the ground-truth malicious ids over the clients seen
// in the trace.
DetectionSummary score_detection(const GradientTrace& trace, std::span<const int> flagged,
                                 std::span<const int> malicious);

struct ClassScan {
  std::vector<double> silhouettes;  // per class
  std::vector<std::size_t> suspects;  // silhouette >= 0.5
};

// Clusters every class slice of the recorded run.
ClassScan scan_classes(const RunLog& log, const ModelSpec& spec, const DetectionOptions& opts);

ParamVector aggregate_with_removal(AggregationRule rule, const GlobalState& state,
                                   std::span<const ClientUpdate> updates,
                                   const DetectionReport& report);

// Accumulates a trace during a run and screens each round's updates.
class OnlineDetector {
 public:
  OnlineDetector(ModelSpec spec, std::size_t class_index, DetectionOptions opts);

  std::vector<int> screen(std::size_t round, const ParamVector& global,
                          std::span<const ClientUpdate> updates);
  UpdateScreen as_screen();

  const GradientTrace& trace() const { return trace_; }
  const std::vector<std::vector<int>>& history() const { return history_; }

 private:
  ModelSpec spec_;
  DetectionOptions opts_;
  GradientTrace trace_;
  std::vector<std::vector<int>> history_;
};

// round,client_id,malicious,norm,s0,s1,...
void write_trace_csv(const GradientTrace& trace, const std::filesystem::path& path);
GradientTrace read_trace_csv(const std::filesystem::path& path, std::size_t class_index);

// x,y,cluster,truth
void write_scatter_csv(const GradientTrace& trace, const DetectionReport& report,
                       const std::filesystem::path& path);

// client_id,score,flagged
void write_detection_csv(const DetectionReport& report, const std::filesystem::path& path);

}  // namespace fllab
