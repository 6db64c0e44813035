#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace ftl {

/// 8-bit interleaved raster, H x W x C. Model inputs see pixel / 255 in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int h, int w, int c) : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, 0) {}

  std::uint8_t& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  std::uint8_t at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }

  bool operator==(const Image&) const = default;
};

/// Lossless PNG I/O. Grayscale and RGB only; 8 bits per channel.
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

/// Resolves payload references to images. In-memory entries win; anything else is
/// read from `base_dir / ref` on first use and cached.
class ImageStore {
 public:
  ImageStore() = default;
  explicit ImageStore(std::filesystem::path base_dir) : base_dir_(std::move(base_dir)) {}

  void put(const std::string& ref, Image image) { cache_[ref] = std::move(image); }
  const Image& get(const std::string& ref);
  std::size_t size() const { return cache_.size(); }

 private:
  std::filesystem::path base_dir_;
  std::map<std::string, Image> cache_;
};

}  // namespace ftl
