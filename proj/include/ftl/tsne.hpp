#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ftl/common.hpp"
#include "ftl/dataset.hpp"
#include "ftl/image.hpp"
#include "ftl/model.hpp"

namespace ftl {

/// Exact (O(n^2)) t-SNE with the usual optimisation schedule: early exaggeration,
/// momentum switch, per-coordinate gains.
struct TsneOptions {
  double perplexity = 30.0;
  int iterations = 1000;
  /// Non-positive selects max(n / (4 * early_exaggeration), 50), which stays stable for small n.
  double learning_rate = 0.0;
  double early_exaggeration = 12.0;
  int exaggeration_iterations = 250;
  std::uint64_t seed = 0;
};

/// Perplexity actually used for n points: min(requested, (n - 1) / 3).
double effective_perplexity(double requested, std::size_t n);

/// n x 2 projection of the rows of `x`. Deterministic in the options.
Matrix tsne(const Matrix& x, const TsneOptions& opts);

struct TsneRow {
  double x = 0.0;
  double y = 0.0;
  Authenticity authenticity = Authenticity::real;
  std::string forgery_category;
};

/// Embeds every record and projects to 2-D. Requires at least 10 records.
std::vector<TsneRow> tsne_export(const Model& model, const Manifest& manifest, ImageStore& store,
                                 const TsneOptions& opts);

/// `x,y,authenticity,forgery_category`
void write_tsne_csv(const std::filesystem::path& path, const std::vector<TsneRow>& rows);
/// Scatter plot, one colour per category ("real" in blue).
void write_tsne_plot(const std::filesystem::path& path, const std::vector<TsneRow>& rows, int size = 512);

}  // namespace ftl
