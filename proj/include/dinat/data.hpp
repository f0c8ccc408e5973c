// Copyright (c) 2026 The dinat-ir authors
// SPDX-License-Identifier: Apache-2.0
//
// Dataset plumbing: clean/degraded image pairs, synthetic degradation for
// desk-scale training, patch sampling with paired augmentation, and the
// manifest.json directory layout.

#pragma once

#include <string>
#include <vector>

#include "dinat/tensor.hpp"

namespace dinat {

struct ImagePair {
  Tensor<float> clean;     // (3,H,W) in [0,1]
  Tensor<float> degraded;  // same shape
  std::string id;
};

// Mirror an index into [0, n) without repeating the edge sample.
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

struct DegradationSpec {
  enum class Blur { gaussian, motion };
  Blur blur = Blur::gaussian;
  double sigma = 1.2;        // gaussian std in pixels
  double length = 9.0;       // motion blur length in pixels
  double angle_deg = 0.0;    // motion blur angle
  double noise_sigma = 0.02; // additive Gaussian noise after the blur
  uint64_t seed = 0;
};

// Normalized blur kernel (sums to 1). Gaussian kernels are truncated at
// ceil(3*sigma); motion kernels rasterize a line through the center with
// bilinear weights.
Tensor<float> make_blur_kernel(const DegradationSpec& spec);

// Reflection-padded convolution with the blur kernel, then seeded Gaussian
// noise, then clamp to [0,1]. Deterministic per (clean, spec).
ImagePair synth_degrade(const Tensor<float>& clean, const DegradationSpec& spec,
                        const std::string& id = "synthetic");

// Aligned random crop from both images of the pair.
ImagePair sample_patch(const ImagePair& pair, int size, Rng& rng);

// Paired augmentation: horizontal flip, vertical flip and a quarter-turn
// rotation (square patches only), each with probability 1/2. Consumes a
// fixed number of rng draws regardless of what fires.
ImagePair augment(const ImagePair& pair, Rng& rng);

// Reads <dir>/manifest.json ({"pairs":[{"id","clean","degraded"}]}), loads
// every referenced PNG and validates that each pair has equal dimensions.
std::vector<ImagePair> load_manifest(const std::string& dir);

// Procedural clean image: gradient background, random shapes and rows of
// glyph-like high-frequency blocks. Values in [0,1].
Tensor<float> procedural_image(int size, Rng& rng);

// Writes `count` clean/degraded PNG pairs plus manifest.json into dir.
void generate_dataset(const std::string& dir, int count, int size, const DegradationSpec& spec,
                      uint64_t seed);

}  // namespace dinat
