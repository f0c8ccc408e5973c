// Copyright (c) 2026 The dinat-ir authors
// SPDX-License-Identifier: Apache-2.0

#include "dinat/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "dinat/png_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace dinat {

Tensor<float> make_blur_kernel(const DegradationSpec& spec) {
  if (spec.blur == DegradationSpec::Blur::gaussian) {
    if (spec.sigma < 1e-6) return Tensor<float>::full({1, 1}, 1.0f);
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * spec.sigma)));
    const int n = 2 * radius + 1;
    Tensor<float> k({n, n});
    double sum = 0.0;
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const double dy = y - radius, dx = x - radius;
        const double v = std::exp(-(dy * dy + dx * dx) / (2.0 * spec.sigma * spec.sigma));
        k.at(y, x) = static_cast<float>(v);
        sum += v;
      }
    for (int64_t i = 0; i < k.numel(); ++i) k.data()[i] = static_cast<float>(k.data()[i] / sum);
    return k;
  }
  // motion: bilinear splat of points along a centered line segment
  const double len = std::max(1.0, spec.length);
  const int radius = static_cast<int>(std::ceil(len / 2.0));
  const int n = 2 * radius + 1;
  Tensor<float> k({n, n});
  const double rad = spec.angle_deg * 3.14159265358979323846 / 180.0;
  const double cx = std::cos(rad), cy = std::sin(rad);
  const int steps = std::max(1, static_cast<int>(std::ceil(len * 8)));
  double sum = 0.0;
  for (int s = 0; s <= steps; ++s) {
    const double t = (static_cast<double>(s) / steps - 0.5) * (len - 1.0);
    const double py = radius + t * cy, px = radius + t * cx;
    const int y0 = static_cast<int>(std::floor(py)), x0 = static_cast<int>(std::floor(px));
    const double fy = py - y0, fx = px - x0;
    const double w[4] = {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
    const int yy[4] = {y0, y0, y0 + 1, y0 + 1};
    const int xx[4] = {x0, x0 + 1, x0, x0 + 1};
    for (int i = 0; i < 4; ++i) {
      if (yy[i] < 0 || yy[i] >= n || xx[i] < 0 || xx[i] >= n) continue;
      k.at(yy[i], xx[i]) += static_cast<float>(w[i]);
      sum += w[i];
    }
  }
  for (int64_t i = 0; i < k.numel(); ++i) k.data()[i] = static_cast<float>(k.data()[i] / sum);
  return k;
}



ImagePair synth_degrade(const Tensor<float>& clean, const DegradationSpec& spec,
                        const std::string& id) {
  if (clean.rank() != 3 || clean.dim(0) != 3)
    throw DimensionError("synth_degrade: clean must be (3,H,W)");
  const int64_t H = clean.dim(1), W = clean.dim(2);
  Tensor<float> kernel = make_blur_kernel(spec);
  const int kn = static_cast<int>(kernel.dim(0));
  const int radius = kn / 2;

  Tensor<float> out(clean.shape());
  const float* cp = clean.data();
  float* op = out.data();
  const float* kp = kernel.data();
  for (int64_t c = 0; c < 3; ++c) {
    const float* plane = cp + c * H * W;
    float* oplane = op + c * H * W;
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        double acc = 0.0;
        for (int ky = 0; ky < kn; ++ky) {
          const int iy = reflect_index(static_cast<int>(y) + ky - radius, static_cast<int>(H));
          for (int kx = 0; kx < kn; ++kx) {
            const int ix = reflect_index(static_cast<int>(x) + kx - radius, static_cast<int>(W));
            acc += static_cast<double>(kp[ky * kn + kx]) * plane[static_cast<int64_t>(iy) * W + ix];
          }
        }
        oplane[y * W + x] = static_cast<float>(acc);
      }
  }
  if (spec.noise_sigma > 0.0) {
    Rng rng(spec.seed);
    for (int64_t i = 0; i < out.numel(); ++i)
      op[i] = static_cast<float>(op[i] + spec.noise_sigma * rng.normal());
  }
  for (int64_t i = 0; i < out.numel(); ++i) op[i] = std::clamp(op[i], 0.0f, 1.0f);
  return ImagePair{clean.clone(), out, id};
}

namespace {

Tensor<float> crop(const Tensor<float>& img, int64_t y0, int64_t x0, int64_t size) {
  const int64_t H = img.dim(1), W = img.dim(2);
  Tensor<float> out({3, size, size});
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < size; ++y)
      for (int64_t x = 0; x < size; ++x)
        out.at(c, y, x) = img.data()[(c * H + y0 + y) * W + x0 + x];
  return out;
}

Tensor<float> hflip(const Tensor<float>& img) {
  const int64_t H = img.dim(1), W = img.dim(2);
  Tensor<float> out(img.shape());
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) out.at(c, y, x) = img.at(c, y, W - 1 - x);
  return out;
}

Tensor<float> vflip(const Tensor<float>& img) {
  const int64_t H = img.dim(1), W = img.dim(2);
  Tensor<float> out(img.shape());
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) out.at(c, y, x) = img.at(c, H - 1 - y, x);
  return out;
}

Tensor<float> rot90(const Tensor<float>& img) {
  const int64_t H = img.dim(1), W = img.dim(2);
  Tensor<float> out({3, W, H});
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) out.at(c, x, H - 1 - y) = img.at(c, y, x);
  return out;
}

}  // namespace

ImagePair sample_patch(const ImagePair& pair, int size, Rng& rng) {
  const int64_t H = pair.clean.dim(1), W = pair.clean.dim(2);
  if (size < 1 || size > H || size > W)
    throw DataError("sample_patch: patch " + std::to_string(size) + " larger than image " +
                    shape_str(pair.clean.shape()));
  const int64_t y0 = rng.uniform_int(0, H - size);
  const int64_t x0 = rng.uniform_int(0, W - size);
  return ImagePair{crop(pair.clean, y0, x0, size), crop(pair.degraded, y0, x0, size), pair.id};
}

ImagePair augment(const ImagePair& pair, Rng& rng) {
  const bool do_h = rng.bernoulli(0.5);
  const bool do_v = rng.bernoulli(0.5);
  const bool do_r = rng.bernoulli(0.5);
  ImagePair out{pair.clean, pair.degraded, pair.id};
  if (do_h) {
    out.clean = hflip(out.clean);
    out.degraded = hflip(out.degraded);
  }
  if (do_v) {
    out.clean = vflip(out.clean);
    out.degraded = vflip(out.degraded);
  }
  if (do_r && pair.clean.dim(1) == pair.clean.dim(2)) {
    out.clean = rot90(out.clean);
    out.degraded = rot90(out.degraded);
  }
  return out;
}

std::vector<ImagePair> load_manifest(const std::string& dir) {
  const fs::path mpath = fs::path(dir) / "manifest.json";
  std::ifstream in(mpath);
  if (!in) throw DataError("missing manifest: " + mpath.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError("invalid manifest JSON in " + mpath.string() + ": " + e.what());
  }
  if (!j.contains("pairs") || !j["pairs"].is_array())
    throw FormatError("manifest must contain a 'pairs' array");
  std::vector<ImagePair> out;
  for (const auto& entry : j["pairs"]) {
    ImagePair p;
    p.id = entry.at("id").get<std::string>();
    const fs::path cpath = fs::path(dir) / entry.at("clean").get<std::string>();
    const fs::path dpath = fs::path(dir) / entry.at("degraded").get<std::string>();
    if (!fs::exists(cpath)) throw DataError("manifest entry '" + p.id + "': missing " + cpath.string());
    if (!fs::exists(dpath)) throw DataError("manifest entry '" + p.id + "': missing " + dpath.string());
    p.clean = load_image(cpath.string());
    p.degraded = load_image(dpath.string());
    if (!p.clean.same_shape(p.degraded))
      throw DataError("manifest entry '" + p.id + "': clean " + shape_str(p.clean.shape()) +
                      " vs degraded " + shape_str(p.degraded.shape()));
    out.push_back(std::move(p));
  }
  if (out.empty()) throw DataError("manifest in " + dir + " lists no pairs");
  return out;
}

Tensor<float> procedural_image(int size, Rng& rng) {
  Tensor<float> img({3, size, size});
  float* d = img.data();
  const int64_t hw = static_cast<int64_t>(size) * size;

  // gradient background between two random colors along a random direction
  double col0[3], col1[3];
  for (int c = 0; c < 3; ++c) {
    col0[c] = rng.uniform(0.1, 0.9);
    col1[c] = rng.uniform(0.1, 0.9);
  }
  const double ang = rng.uniform(0.0, 6.28318530717958647692);
  const double gx = std::cos(ang), gy = std::sin(ang);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double t = 0.5 + 0.5 * ((x - size / 2.0) * gx + (y - size / 2.0) * gy) / (size * 0.7071);
      for (int c = 0; c < 3; ++c)
        d[c * hw + y * static_cast<int64_t>(size) + x] =
            static_cast<float>(col0[c] + (col1[c] - col0[c]) * std::clamp(t, 0.0, 1.0));
    }

  // filled rectangles and circles
  const int nshapes = static_cast<int>(rng.uniform_int(4, 9));
  for (int s = 0; s < nshapes; ++s) {
    const bool circle = rng.bernoulli(0.5);
    double col[3];
    for (int c = 0; c < 3; ++c) col[c] = rng.uniform(0.0, 1.0);
    const double alpha = rng.uniform(0.6, 1.0);
    const int cy = static_cast<int>(rng.uniform_int(0, size - 1));
    const int cx = static_cast<int>(rng.uniform_int(0, size - 1));
    const int r = static_cast<int>(rng.uniform_int(size / 16 + 1, size / 4 + 1));
    for (int y = std::max(0, cy - r); y < std::min(size, cy + r); ++y)
      for (int x = std::max(0, cx - r); x < std::min(size, cx + r); ++x) {
        if (circle && (y - cy) * (y - cy) + (x - cx) * (x - cx) > r * r) continue;
        for (int c = 0; c < 3; ++c) {
          float& v = d[c * hw + y * static_cast<int64_t>(size) + x];
          v = static_cast<float>((1 - alpha) * v + alpha * col[c]);
        }
      }
  }

  // glyph-like rows: small random on/off cells, text-ish high frequency
  const int nrows = 2 + static_cast<int>(rng.uniform_int(0, 2));
  for (int row = 0; row < nrows; ++row) {
    const int cell = std::max(2, size / 32);
    const int y0 = static_cast<int>(rng.uniform_int(0, std::max(0, size - 6 * cell)));
    const int x0 = static_cast<int>(rng.uniform_int(0, std::max(0, size - 20 * cell)));
    const double ink = rng.uniform(0.0, 0.25);
    const int glyphs = static_cast<int>(rng.uniform_int(4, 10));
    for (int g = 0; g < glyphs; ++g) {
      for (int gy = 0; gy < 5; ++gy)
        for (int gx = 0; gx < 3; ++gx) {
          const bool on = rng.bernoulli(0.55);
          if (!on) continue;
          for (int yy = 0; yy < cell; ++yy)
            for (int xx = 0; xx < cell; ++xx) {
              const int y = y0 + gy * cell + yy;
              const int x = x0 + g * 4 * cell + gx * cell + xx;
              if (y < 0 || y >= size || x < 0 || x >= size) continue;
              for (int c = 0; c < 3; ++c)
                d[c * hw + y * static_cast<int64_t>(size) + x] = static_cast<float>(ink);
            }
        }
    }
  }

  for (int64_t i = 0; i < img.numel(); ++i) d[i] = std::clamp(d[i], 0.0f, 1.0f);
  return img;
}

void generate_dataset(const std::string& dir, int count, int size, const DegradationSpec& spec,
                      uint64_t seed) {
  if (count < 1) throw ConfigError("gen-data: count must be >= 1");
  if (size < 16 || size % 8 != 0)
    throw ConfigError("gen-data: size must be a multiple of 8 and >= 16, got " + std::to_string(size));
  fs::create_directories(dir);
  json manifest;
  manifest["pairs"] = json::array();
  for (int i = 0; i < count; ++i) {
    Rng rng(seed + static_cast<uint64_t>(i) * 0x9e3779b97f4a7c15ull);
    Tensor<float> clean = procedural_image(size, rng);
    DegradationSpec s = spec;
    s.seed = seed ^ (0xd1b54a32d192ed03ull + static_cast<uint64_t>(i));
    char id[32];
    std::snprintf(id, sizeof(id), "pair%04d", i);
    ImagePair pair = synth_degrade(clean, s, id);
    const std::string cname = std::string(id) + "_clean.png";
    const std::string dname = std::string(id) + "_degraded.png";
    save_image(pair.clean, (fs::path(dir) / cname).string());
    save_image(pair.degraded, (fs::path(dir) / dname).string());
    manifest["pairs"].push_back({{"id", id}, {"clean", cname}, {"degraded", dname}});
  }
  std::ofstream out(fs::path(dir) / "manifest.json");
  out << manifest.dump(2) << "\n";
}

}  // namespace dinat
