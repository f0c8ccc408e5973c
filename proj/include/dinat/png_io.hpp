// Copyright (c) 2026 The dinat-ir authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "dinat/tensor.hpp"

namespace dinat {

// 8-bit RGB PNG <-> float tensor (3,H,W) in [0,1]. Decoding maps v -> v/255;
// encoding rounds v*255 after clamping, so a decode/encode round trip of any
// 8-bit image is bit-exact.
Tensor<float> load_image(const std::string& path);
void save_image(const Tensor<float>& img, const std::string& path);

}  // namespace dinat
