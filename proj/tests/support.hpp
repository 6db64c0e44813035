#pragma once

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "ftl/dataset.hpp"
#include "ftl/image.hpp"
#include "ftl/model.hpp"
#include "ftl/rng.hpp"
#include "ftl/synthetic.hpp"

namespace ftl::test {

// Unique scratch directory, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("ftl_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline SampleRecord rec(const std::string& id, long frame, const std::string& category = kRealCategory) {
  SampleRecord r;
  r.identity_id = id;
  r.frame_index = frame;
  r.forgery_category = category;
  r.authenticity = category == kRealCategory ? Authenticity::real : Authenticity::fake;
  r.payload_ref = id + "_" + category + "_" + std::to_string(frame);
  return r;
}

inline std::vector<SampleRecord> stream(const std::string& id, const std::string& category, long frames) {
  std::vector<SampleRecord> out;
  for (long f = 0; f < frames; ++f) out.push_back(rec(id, f, category));
  return out;
}

// Small backbone so gradient checks stay cheap.
inline ModelConfig tiny_model_config(bool normalize = false) {
  ModelConfig c;
  c.backbone.image_size = 8;
  c.backbone.conv_channels = {2, 3, 4};
  c.backbone.embedding_dim = 6;
  c.backbone.normalize_embedding = normalize;
  c.discriminator_hidden = 5;
  c.categories = {"real", "synthA", "synthB"};
  return c;
}

inline Image random_image(Rng& rng, int size, int channels = 3) {
  Image img(size, size, channels);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

inline ImageBatch random_batch(Rng& rng, int n, int size) {
  std::vector<Image> images;
  for (int i = 0; i < n; ++i) images.push_back(random_image(rng, size));
  std::vector<const Image*> ptrs;
  for (const auto& im : images) ptrs.push_back(&im);
  return make_batch(ptrs);
}

inline SyntheticSpec small_spec(int identities = 4, int frames = 4, int size = 8) {
  SyntheticSpec s;
  s.identities = identities;
  s.frames = frames;
  s.image_size = size;
  return s;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

// |a - b| <= rel * max(|a|, |b|, floor)
inline bool close_rel(double a, double b, double rel, double floor = 1e-12) {
  return std::abs(a - b) <= rel * std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace ftl::test

namespace ftl::test {

inline Parameter& param(Model& m, const std::string& name) {
  for (auto& p : m.parameters()) {
    if (p.name == name) return p;
  }
  throw std::out_of_range("no parameter " + name);
}

inline std::size_t param_index(const Model& m, const std::string& name) {
  for (std::size_t i = 0; i < m.parameters().size(); ++i) {
    if (m.parameters()[i].name == name) return i;
  }
  throw std::out_of_range("no parameter " + name);
}

inline Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Matrix m(r, c);
  for (auto& v : m.data) v = scale * rng.normal();
  return m;
}

inline double frobenius_dot(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

inline double inf_norm(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace ftl::test

#include "ftl/training.hpp"

namespace ftl::test {

inline TrainConfig tiny_train_config(Variant v = Variant::tl_grl_dh) {
  auto c = TrainConfig::defaults(FinetuneMode::full);
  c.backbone = tiny_model_config().backbone;
  c.discriminator_hidden = 5;
  c.learning_rate = 1e-3;
  c.epochs = 1;
  c.seed = 3;
  apply_variant(c, v);
  return c;
}

// Synthetic data kept in memory, with its manifest and image store.
struct Fixture {
  SyntheticDataset data;
  ImageStore store;

  explicit Fixture(SyntheticSpec spec) : data(make_synthetic_dataset(spec)), store(data.store()) {}
  const Manifest& manifest() const { return data.manifest; }
};

inline bool backbone_grads_equal(const Model& m, const Gradients& a, const Gradients& b) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (m.parameters()[i].role != ParamRole::backbone) continue;
    for (std::size_t k = 0; k < a[i].size(); ++k) {
      if (a[i][k] != b[i][k]) return false;
    }
  }
  return true;
}

}  // namespace ftl::test
