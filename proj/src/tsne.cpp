#include "ftl/tsne.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>

#include "ftl/rng.hpp"

namespace ftl {
namespace {

// Row-conditional affinities with a per-row bandwidth matched to the target perplexity.
std::vector<double> conditional_affinities(const std::vector<double>& d2, std::size_t n, double perplexity) {
  std::vector<double> p(n * n, 0.0);
  const double target = std::log(perplexity);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t si = 0; si < static_cast<std::ptrdiff_t>(n); ++si) {
    const auto i = static_cast<std::size_t>(si);
    double beta = 1.0, lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
    std::vector<double> row(n, 0.0);
    for (int iter = 0; iter < 200; ++iter) {
      double min_d = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        if (j != i) min_d = std::min(min_d, d2[i * n + j]);
      }
      double sum = 0.0, weighted = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        row[j] = j == i ? 0.0 : std::exp(-beta * (d2[i * n + j] - min_d));
        sum += row[j];
        weighted += row[j] * (d2[i * n + j] - min_d);
      }
      const double entropy = std::log(sum) + beta * weighted / sum;
      for (auto& v : row) v /= sum;
      const double diff = entropy - target;
      if (std::abs(diff) < 1e-5) break;
      if (diff > 0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : (beta + hi) / 2.0;
      } else {
        hi = beta;
        beta = std::isinf(lo) ? beta / 2.0 : (beta + lo) / 2.0;
      }
    }
    std::copy(row.begin(), row.end(), p.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  return p;
}

constexpr std::array<std::array<std::uint8_t, 3>, 8> kPalette{{{31, 119, 180},
                                                               {255, 127, 14},
                                                               {44, 160, 44},
                                                               {214, 39, 40},
                                                               {148, 103, 189},
                                                               {140, 86, 75},
                                                               {227, 119, 194},
                                                               {127, 127, 127}}};

}  // namespace

double effective_perplexity(double requested, std::size_t n) {
  return std::min(requested, (static_cast<double>(n) - 1.0) / 3.0);
}

Matrix tsne(const Matrix& x, const TsneOptions& opts) {
  const std::size_t n = x.rows;
  if (n < 4) throw ValidationError("t-SNE needs at least 4 points");
  if (!(opts.perplexity > 0.0)) throw ValidationError("t-SNE perplexity must be positive");
  const double perplexity = effective_perplexity(opts.perplexity, n);
  const double learning_rate = opts.learning_rate > 0.0
                                   ? opts.learning_rate
                                   : std::max(static_cast<double>(n) / (4.0 * opts.early_exaggeration), 50.0);

  std::vector<double> d2(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < x.cols; ++k) {
        const double d = x(i, k) - x(j, k);
        s += d * d;
      }
      d2[i * n + j] = d2[j * n + i] = s;
    }
  }

  auto p = conditional_affinities(d2, n, perplexity);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = std::max((p[i * n + j] + p[j * n + i]) / (2.0 * static_cast<double>(n)), 1e-12);
      p[i * n + j] = p[j * n + i] = v;
    }
  }

  Rng rng(opts.seed);
  Matrix y(n, 2);
  for (auto& v : y.data) v = 1e-4 * rng.normal();
  Matrix update(n, 2), gains(n, 2, 1.0), grad(n, 2);
  std::vector<double> num(n * n, 0.0), row_sums(n, 0.0);

  for (int iter = 0; iter < opts.iterations; ++iter) {
    const double exaggeration = iter < opts.exaggeration_iterations ? opts.early_exaggeration : 1.0;
    const double momentum = iter < opts.exaggeration_iterations ? 0.5 : 0.8;

#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t si = 0; si < static_cast<std::ptrdiff_t>(n); ++si) {
      const auto i = static_cast<std::size_t>(si);
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) {
          num[i * n + j] = 0.0;
          continue;
        }
        const double dx = y(i, 0) - y(j, 0), dy = y(i, 1) - y(j, 1);
        num[i * n + j] = 1.0 / (1.0 + dx * dx + dy * dy);
        s += num[i * n + j];
      }
      row_sums[i] = s;
    }
    double z = 0.0;
    for (double s : row_sums) z += s;

#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t si = 0; si < static_cast<std::ptrdiff_t>(n); ++si) {
      const auto i = static_cast<std::size_t>(si);
      double gx = 0.0, gy = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double q = std::max(num[i * n + j] / z, 1e-12);
        const double w = (exaggeration * p[i * n + j] - q) * num[i * n + j];
        gx += w * (y(i, 0) - y(j, 0));
        gy += w * (y(i, 1) - y(j, 1));
      }
      grad(i, 0) = 4.0 * gx;
      grad(i, 1) = 4.0 * gy;
    }

    for (std::size_t k = 0; k < y.data.size(); ++k) {
      const bool same_sign = (grad.data[k] > 0) == (update.data[k] > 0);
      gains.data[k] = same_sign ? std::max(gains.data[k] * 0.8, 0.01) : gains.data[k] + 0.2;
      update.data[k] = momentum * update.data[k] - learning_rate * gains.data[k] * grad.data[k];
      y.data[k] += update.data[k];
    }
    for (int c = 0; c < 2; ++c) {
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += y(i, c);
      mean /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) y(i, c) -= mean;
    }
  }
  return y;
}

std::vector<TsneRow> tsne_export(const Model& model, const Manifest& manifest, ImageStore& store,
                                 const TsneOptions& opts) {
  const std::size_t n = manifest.records.size();
  if (n < 10) throw ValidationError("t-SNE export needs at least 10 samples, manifest has " + std::to_string(n));
  Matrix emb(n, static_cast<std::size_t>(model.config().backbone.embedding_dim));
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t end = std::min(n, start + kChunk);
    std::vector<const Image*> images;
    for (std::size_t i = start; i < end; ++i) images.push_back(&store.get(manifest.records[i].payload_ref));
    const auto e = model.embed(make_batch(images));
    std::copy(e.data.begin(), e.data.end(), emb.data.begin() + static_cast<std::ptrdiff_t>(start * emb.cols));
  }
  const Matrix y = tsne(emb, opts);
  std::vector<TsneRow> rows;
  rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = manifest.records[i];
    rows.push_back({y(i, 0), y(i, 1), r.authenticity, r.forgery_category});
  }
  return rows;
}

void write_tsne_csv(const std::filesystem::path& path, const std::vector<TsneRow>& rows) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << "x,y,authenticity,forgery_category\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,", r.x, r.y);
    out << buf << to_string(r.authenticity) << ',' << r.forgery_category << '\n';
  }
  if (!out) throw RuntimeFailure("write failed: " + path.string());
}

void write_tsne_plot(const std::filesystem::path& path, const std::vector<TsneRow>& rows, int size) {
  Image img(size, size, 3);
  std::fill(img.pixels.begin(), img.pixels.end(), std::uint8_t{255});
  if (rows.empty()) {
    write_png(path, img);
    return;
  }
  double x0 = rows[0].x, x1 = rows[0].x, y0 = rows[0].y, y1 = rows[0].y;
  for (const auto& r : rows) {
    x0 = std::min(x0, r.x);
    x1 = std::max(x1, r.x);
    y0 = std::min(y0, r.y);
    y1 = std::max(y1, r.y);
  }
  std::map<std::string, std::size_t> colour{{kRealCategory, 0}};
  for (const auto& r : rows) colour.try_emplace(r.forgery_category, colour.size() % kPalette.size());

  const int margin = size / 20;
  const auto to_px = [&](double v, double lo, double hi) {
    const double t = hi > lo ? (v - lo) / (hi - lo) : 0.5;
    return margin + static_cast<int>(std::lround(t * (size - 1 - 2 * margin)));
  };
  for (const auto& r : rows) {
    const int cx = to_px(r.x, x0, x1);
    const int cy = size - 1 - to_px(r.y, y0, y1);
    const auto& c = kPalette[colour[r.forgery_category]];
    for (int dy = -2; dy <= 2; ++dy) {
      for (int dx = -2; dx <= 2; ++dx) {
        const int px = cx + dx, py = cy + dy;
        if (px < 0 || py < 0 || px >= size || py >= size || dx * dx + dy * dy > 5) continue;
        for (int ch = 0; ch < 3; ++ch) img.at(py, px, ch) = c[ch];
      }
    }
  }
  write_png(path, img);
}

}  // namespace ftl
