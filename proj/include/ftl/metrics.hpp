#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ftl/dataset.hpp"
#include "ftl/image.hpp"
#include "ftl/model.hpp"

namespace ftl {

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  bool operator==(const RocPoint&) const = default;
};

/// Ascending in FPR, from (0,0) to (1,1).
struct RocCurve {
  std::vector<RocPoint> points;
};

/// One point per distinct score threshold; tied scores move as a single step. Throws
/// ValidationError unless both classes are present.
RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels);

/// Trapezoidal area under a valid curve.
double auc_trapezoid(const RocCurve& curve);

/// Brute-force P(score_pos > score_neg) + 0.5 P(tie) over all positive/negative pairs.
double auc_pairwise_oracle(std::span<const double> scores, std::span<const int> labels);

inline double auc(std::span<const double> scores, std::span<const int> labels) {
  return auc_trapezoid(roc_curve(scores, labels));
}

/// Mean binary cross-entropy of probabilities, identical to bce_loss.
double log_loss(std::span<const double> probs, std::span<const int> labels);

enum class Granularity { frame, video };
std::string to_string(Granularity g);
Granularity parse_granularity(const std::string& s);

struct GranularityMetrics {
  double auc = 0.0;
  double logloss = 0.0;
  std::size_t n_real = 0;
  std::size_t n_fake = 0;
};

struct EvalReport {
  std::string dataset_name;
  std::string trained_on;
  std::string variant;
  GranularityMetrics frame;
  GranularityMetrics video;
  /// Frame AUC of the real frames against each fake category alone.
  std::map<std::string, double> per_category_auc;
  /// Detector probability for every manifest record, in manifest order.
  std::vector<double> frame_scores;

  const GranularityMetrics& at(Granularity g) const { return g == Granularity::frame ? frame : video; }
};

/// Detector probabilities for every record. Deterministic; evaluated in fixed-size chunks.
std::vector<double> score_records(const Model& model, const Manifest& manifest, ImageStore& store);

/// Video score = mean frame score per (identity, category).
struct VideoScores {
  std::vector<double> scores;
  std::vector<int> labels;
};
VideoScores aggregate_videos(const Manifest& manifest, std::span<const double> frame_scores);

EvalReport evaluate(const Model& model, const Manifest& manifest, ImageStore& store);

/// Loads `checkpoint` and evaluates it. When `configured` is given, its image size and
/// embedding dimension must match the checkpoint's.
EvalReport evaluate_checkpoint(const std::filesystem::path& checkpoint, const Manifest& manifest, ImageStore& store,
                               const std::optional<BackboneConfig>& configured = std::nullopt);

/// `dataset,granularity,auc,logloss,n_real,n_fake`
void write_report_header(std::ostream& os);
void write_report_row(std::ostream& os, const EvalReport& report, Granularity g);

}  // namespace ftl
