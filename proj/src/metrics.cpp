#include "ftl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "ftl/checkpoint.hpp"
#include "ftl/losses.hpp"

namespace ftl {
namespace {

std::pair<std::size_t, std::size_t> class_counts(std::span<const double> scores, std::span<const int> labels,
                                                 const char* who) {
  if (scores.size() != labels.size()) throw ValidationError(std::string(who) + ": length mismatch");
  std::size_t pos = 0, neg = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) {
      ++pos;
    } else if (labels[i] == 0) {
      ++neg;
    } else {
      throw ValidationError(std::string(who) + ": labels must be 0 or 1");
    }
    if (std::isnan(scores[i])) throw ValidationError(std::string(who) + ": NaN score");
  }
  if (pos == 0 || neg == 0) {
    throw ValidationError(std::string(who) + ": AUC is undefined without both classes (" + std::to_string(pos) +
                          " positive, " + std::to_string(neg) + " negative)");
  }
  return {pos, neg};
}

constexpr std::size_t kScoreChunk = 64;

}  // namespace

RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels) {
  const auto [pos, neg] = class_counts(scores, labels, "roc_curve");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve curve;
  curve.points.push_back({0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double threshold = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == threshold; ++i) {
      if (labels[order[i]] == 1) {
        ++tp;
      } else {
        ++fp;
      }
    }
    curve.points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                            static_cast<double>(tp) / static_cast<double>(pos)});
  }
  return curve;
}

double auc_trapezoid(const RocCurve& curve) {
  const auto& pts = curve.points;
  if (pts.size() < 2 || pts.front() != RocPoint{0.0, 0.0} || pts.back() != RocPoint{1.0, 1.0}) {
    throw ValidationError("auc_trapezoid: curve must run from (0,0) to (1,1)");
  }
  double area = 0.0;
  for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
    if (pts[k + 1].fpr < pts[k].fpr || pts[k + 1].tpr < pts[k].tpr) {
      throw ValidationError("auc_trapezoid: curve is not monotone");
    }
    area += (pts[k + 1].fpr - pts[k].fpr) * (pts[k].tpr + pts[k + 1].tpr) / 2.0;
  }
  return area;
}

double auc_pairwise_oracle(std::span<const double> scores, std::span<const int> labels) {
  const auto [pos, neg] = class_counts(scores, labels, "auc_pairwise_oracle");
  // Half-credits are counted as integers to keep the sum exact.
  std::uint64_t doubled = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      if (scores[i] > scores[j]) {
        doubled += 2;
      } else if (scores[i] == scores[j]) {
        doubled += 1;
      }
    }
  }
  return static_cast<double>(doubled) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

double log_loss(std::span<const double> probs, std::span<const int> labels) { return bce_loss(probs, labels); }

std::string to_string(Granularity g) { return g == Granularity::frame ? "frame" : "video"; }

Granularity parse_granularity(const std::string& s) {
  if (s == "frame") return Granularity::frame;
  if (s == "video") return Granularity::video;
  throw ValidationError("granularity must be \"frame\" or \"video\", got \"" + s + "\"");
}

std::vector<double> score_records(const Model& model, const Manifest& manifest, ImageStore& store) {
  std::vector<double> scores;
  scores.reserve(manifest.records.size());
  for (std::size_t start = 0; start < manifest.records.size(); start += kScoreChunk) {
    const std::size_t end = std::min(manifest.records.size(), start + kScoreChunk);
    std::vector<const Image*> images;
    for (std::size_t i = start; i < end; ++i) images.push_back(&store.get(manifest.records[i].payload_ref));
    const auto probs = model.detect(model.embed(make_batch(images)));
    scores.insert(scores.end(), probs.begin(), probs.end());
  }
  return scores;
}

VideoScores aggregate_videos(const Manifest& manifest, std::span<const double> frame_scores) {
  if (frame_scores.size() != manifest.records.size()) throw ValidationError("aggregate_videos: score count mismatch");
  std::map<std::pair<std::string, std::string>, std::pair<double, std::size_t>> sums;
  std::map<std::pair<std::string, std::string>, int> labels;
  for (std::size_t i = 0; i < frame_scores.size(); ++i) {
    const auto& r = manifest.records[i];
    const auto key = std::make_pair(r.identity_id, r.forgery_category);
    auto& [sum, n] = sums[key];
    sum += frame_scores[i];
    ++n;
    labels[key] = r.is_fake() ? 1 : 0;
  }
  VideoScores out;
  for (const auto& [key, acc] : sums) {
    out.scores.push_back(acc.first / static_cast<double>(acc.second));
    out.labels.push_back(labels[key]);
  }
  return out;
}

EvalReport evaluate(const Model& model, const Manifest& manifest, ImageStore& store) {
  std::vector<int> labels;
  labels.reserve(manifest.records.size());
  for (const auto& r : manifest.records) labels.push_back(r.is_fake() ? 1 : 0);
  class_counts(std::vector<double>(labels.size(), 0.0), labels, ("evaluate(" + manifest.dataset_name + ")").c_str());

  EvalReport rep;
  rep.dataset_name = manifest.dataset_name;
  rep.frame_scores = score_records(model, manifest, store);

  rep.frame.auc = auc(rep.frame_scores, labels);
  rep.frame.logloss = log_loss(rep.frame_scores, labels);
  rep.frame.n_real = manifest.count(Authenticity::real);
  rep.frame.n_fake = manifest.count(Authenticity::fake);

  const auto videos = aggregate_videos(manifest, rep.frame_scores);
  rep.video.auc = auc(videos.scores, videos.labels);
  rep.video.logloss = log_loss(videos.scores, videos.labels);
  rep.video.n_fake = static_cast<std::size_t>(std::count(videos.labels.begin(), videos.labels.end(), 1));
  rep.video.n_real = videos.labels.size() - rep.video.n_fake;

  for (const auto& cat : fake_categories_of(manifest)) {
    std::vector<double> s;
    std::vector<int> l;
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
      const auto& r = manifest.records[i];
      if (r.is_fake() && r.forgery_category != cat) continue;
      s.push_back(rep.frame_scores[i]);
      l.push_back(labels[i]);
    }
    rep.per_category_auc[cat] = auc(s, l);
  }
  return rep;
}

EvalReport evaluate_checkpoint(const std::filesystem::path& checkpoint, const Manifest& manifest, ImageStore& store,
                               const std::optional<BackboneConfig>& configured) {
  const TrainState state = load_checkpoint(checkpoint);
  const auto& have = state.model.config().backbone;
  if (configured) {
    if (configured->embedding_dim != have.embedding_dim) {
      throw ValidationError("embedding dimension mismatch: configured " + std::to_string(configured->embedding_dim) +
                            ", checkpoint " + std::to_string(have.embedding_dim));
    }
    if (configured->image_size != have.image_size) {
      throw ValidationError("image size mismatch: configured " + std::to_string(configured->image_size) +
                            ", checkpoint " + std::to_string(have.image_size));
    }
  }
  EvalReport rep = evaluate(state.model, manifest, store);
  rep.trained_on = state.train_dataset;
  rep.variant = state.variant;
  return rep;
}

void write_report_header(std::ostream& os) { os << "dataset,granularity,auc,logloss,n_real,n_fake\n"; }

void write_report_row(std::ostream& os, const EvalReport& report, Granularity g) {
  const auto& m = report.at(g);
  char buf[128];
  std::snprintf(buf, sizeof(buf), ",%s,%.6f,%.6f,%zu,%zu\n", to_string(g).c_str(), m.auc, m.logloss, m.n_real,
                m.n_fake);
  os << report.dataset_name << buf;
}

}  // namespace ftl
