#include "ftl/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>

#include "ftl/common.hpp"
#include "ftl/rng.hpp"

namespace ftl {
namespace {

using Plane = std::vector<double>;  // H x W x 3, values nominally in [0, 1]

struct Wave {
  double fx, fy, phase, speed, amplitude;
  std::array<double, 3> tint;
};

struct IdentityLook {
  std::array<double, 3> skin;
  std::array<double, 3> background;
  double cx, cy, rx, ry;
  double drift_x, drift_y;
  std::array<Wave, 3> waves;
};

IdentityLook sample_look(Rng& rng, int size) {
  IdentityLook look{};
  for (auto& c : look.skin) c = rng.uniform(0.35, 0.75);
  for (auto& c : look.background) c = rng.uniform(0.1, 0.9);
  look.cx = size * rng.uniform(0.45, 0.55);
  look.cy = size * rng.uniform(0.45, 0.55);
  look.rx = size * rng.uniform(0.28, 0.38);
  look.ry = size * rng.uniform(0.30, 0.40);
  look.drift_x = rng.uniform(0.5, 1.5);
  look.drift_y = rng.uniform(0.5, 1.5);
  for (auto& w : look.waves) {
    // Fine texture, so that smoothing artifacts remain visible.
    w.fx = rng.uniform(4.0, 9.0) * (rng.below(2) == 0 ? 1.0 : -1.0);
    w.fy = rng.uniform(4.0, 9.0) * (rng.below(2) == 0 ? 1.0 : -1.0);
    w.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    w.speed = rng.uniform(0.2, 0.5);
    w.amplitude = rng.uniform(0.06, 0.12);
    for (auto& t : w.tint) t = rng.uniform(0.5, 1.0);
  }
  return look;
}

std::pair<double, double> face_centre(const IdentityLook& look, long frame) {
  const double t = static_cast<double>(frame);
  return {look.cx + look.drift_x * std::sin(0.3 * t), look.cy + look.drift_y * std::cos(0.25 * t)};
}

Plane render_real(const IdentityLook& look, long frame, int size) {
  Plane img(static_cast<std::size_t>(size) * size * 3);
  const auto [cx, cy] = face_centre(look, frame);
  const double t = static_cast<double>(frame);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double dx = (x + 0.5 - cx) / look.rx;
      const double dy = (y + 0.5 - cy) / look.ry;
      const double r = std::sqrt(dx * dx + dy * dy);
      const double face = std::clamp((1.1 - r) / 0.2, 0.0, 1.0);  // soft ellipse edge
      for (int c = 0; c < 3; ++c) {
        double texture = 0.0;
        for (const auto& w : look.waves) {
          const double arg = 2.0 * std::numbers::pi * (w.fx * x + w.fy * y) / size + w.phase + w.speed * t;
          texture += w.amplitude * w.tint[c] * std::sin(arg);
        }
        const double bg = look.background[c] * (0.85 + 0.3 * y / size);
        img[(static_cast<std::size_t>(y) * size + x) * 3 + c] = face * (look.skin[c] + texture) + (1.0 - face) * bg;
      }
    }
  }
  return img;
}

Region artifact_region_for(const IdentityLook& look, long frame, int size) {
  const auto [cx, cy] = face_centre(look, frame);
  const int side = std::max(2, static_cast<int>(std::lround(size * 0.375)));
  const int x0 = std::clamp(static_cast<int>(std::lround(cx - side / 2.0)), 0, size - side);
  const int y0 = std::clamp(static_cast<int>(std::lround(cy - side / 2.0)), 0, size - side);
  return {y0, x0, y0 + side, x0 + side};
}

constexpr double kSeam = 0.12;  // brightening along the blend boundary

Plane apply_artifact(const Plane& real, const Region& region, int size, std::size_t kind, Rng& rng) {
  Plane out = real;
  const auto idx = [size](int y, int x, int c) { return (static_cast<std::size_t>(y) * size + x) * 3 + c; };
  const std::array<double, 3> tint{rng.uniform(-0.08, 0.08), rng.uniform(-0.08, 0.08), rng.uniform(-0.08, 0.08)};
  for (int y = region.y0; y < region.y1; ++y) {
    for (int x = region.x0; x < region.x1; ++x) {
      const double noise = rng.uniform(-0.12, 0.12);
      for (int c = 0; c < 3; ++c) {
        double v = real[idx(y, x, c)];
        switch (kind % 4) {
          case 0: {  // blended checkerboard
            const double pattern = ((x + y) % 2 == 0) ? 0.22 : -0.22;
            v = v + 0.5 * pattern;
            break;
          }
          case 1: {  // 5x5 box blur, neighbourhood clipped to the image
            double sum = 0.0;
            int n = 0;
            for (int yy = std::max(0, y - 2); yy <= std::min(size - 1, y + 2); ++yy) {
              for (int xx = std::max(0, x - 2); xx <= std::min(size - 1, x + 2); ++xx) {
                sum += real[idx(yy, xx, c)];
                ++n;
              }
            }
            v = sum / n;
            break;
          }
          case 2:
            v = v + noise;
            break;
          default:
            v = v + tint[c];
            break;
        }
        const bool boundary = y == region.y0 || y == region.y1 - 1 || x == region.x0 || x == region.x1 - 1;
        out[idx(y, x, c)] = boundary ? v + kSeam : v;
      }
    }
  }
  return out;
}

Image quantize(const Plane& p, int size) {
  Image img(size, size, 3);
  for (std::size_t i = 0; i < p.size(); ++i) {
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(p[i], 0.0, 1.0) * 255.0));
  }
  return img;
}

std::string identity_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "id%03d", i);
  return buf;
}

}  // namespace

void validate(const SyntheticSpec& spec) {
  if (spec.identities <= 0) throw ValidationError("synth.identities must be positive");
  if (spec.frames <= 0) throw ValidationError("synth.frames must be positive");
  if (spec.image_size < 8) throw ValidationError("synth.image_size must be at least 8");
  std::set<std::string> seen;
  for (const auto& f : spec.families) {
    if (f.empty() || f == kRealCategory) throw ValidationError("synth.families: invalid family name \"" + f + "\"");
    if (f.find_first_of("_/\\ ") != std::string::npos) {
      throw ValidationError("synth.families: name \"" + f + "\" may not contain '_', '/' or spaces");
    }
    if (!seen.insert(f).second) throw ValidationError("synth.families: duplicate family \"" + f + "\"");
  }
}

ImageStore SyntheticDataset::store() const {
  ImageStore s(manifest.base_dir);
  for (const auto& [ref, img] : images) s.put(ref, img);
  return s;
}

std::string synthetic_payload_ref(const std::string& identity, const std::string& category, long frame) {
  return "images/" + identity + "_" + category + "_" + std::to_string(frame) + ".png";
}

SyntheticDataset make_synthetic_dataset(const SyntheticSpec& spec) {
  validate(spec);
  SyntheticDataset out;
  out.manifest.dataset_name = spec.dataset_name;
  for (int i = 0; i < spec.identities; ++i) {
    const std::string id = identity_name(i);
    Rng rng(spec.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(i) + 1);
    const IdentityLook look = sample_look(rng, spec.image_size);
    for (long t = 0; t < spec.frames; ++t) {
      const Plane real = render_real(look, t, spec.image_size);
      const Region region = artifact_region_for(look, t, spec.image_size);
      out.artifact_regions[{id, t}] = region;

      const auto real_ref = synthetic_payload_ref(id, kRealCategory, t);
      out.manifest.records.push_back({id, t, Authenticity::real, kRealCategory, real_ref});
      out.images[real_ref] = quantize(real, spec.image_size);

      for (std::size_t k = 0; k < spec.families.size(); ++k) {
        const auto& family = spec.families[k];
        const auto ref = synthetic_payload_ref(id, family, t);
        out.manifest.records.push_back({id, t, Authenticity::fake, family, ref});
        out.images[ref] = quantize(apply_artifact(real, region, spec.image_size, k, rng), spec.image_size);
      }
    }
  }
  normalize_manifest(out.manifest);
  return out;
}

std::filesystem::path write_synthetic_dataset(const std::filesystem::path& dir, const SyntheticDataset& data,
                                              const std::string& manifest_name) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (ec) throw RuntimeFailure("cannot create output directory " + dir.string() + ": " + ec.message());
  for (const auto& [ref, img] : data.images) write_png(dir / ref, img);
  const auto path = dir / (manifest_name + ".jsonl");
  save_manifest(path, data.manifest);
  return path;
}

}  // namespace ftl
