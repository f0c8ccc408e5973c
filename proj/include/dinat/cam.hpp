// Copyright (c) 2026 The dinat-ir authors
// SPDX-License-Identifier: Apache-2.0
//
// Channel-aware module (CAM) and its composition with spatial attention into
// channel-aware self-attention (CASA). CAM squeezes the feature map to one
// value per channel, mixes neighboring channels with a bias-free 3-tap
// convolution and gates with a sigmoid; CASA multiplies the spatial-attention
// output by the broadcast gate.

#pragma once

#include "dinat/attention.hpp"

namespace dinat {

template <typename T>
struct CamParams {
  Tensor<T> w;  // (1,1,3), no bias
};

template <typename T>
CamParams<T> make_cam_params(Rng& rng, double stddev = 0.02) {
  CamParams<T> p;
  p.w = Tensor<T>({1, 1, 3});
  fill_normal(p.w, rng, 0.0, stddev);
  return p;
}

// gap -> (B,1,C) -> conv1d(k=3, zero pad 1) -> (B,C,1,1) -> sigmoid.
// Every output lies in (0,1); an all-zero input gives exactly 0.5.
template <typename T>
Tensor<T> cam(Tape<T>* tape, const Tensor<T>& x, const CamParams<T>& p) {
  if (x.rank() != 4) throw DimensionError("cam: x must be (B,C,H,W)");
  if (p.w.rank() != 3 || p.w.dim(0) != 1 || p.w.dim(1) != 1 || p.w.dim(2) != 3)
    throw DimensionError("cam: kernel must be (1,1,3), got " + shape_str(p.w.shape()));
  const int64_t B = x.dim(0), C = x.dim(1);
  Tensor<T> g = gap2d(tape, x);                       // (B,C,1,1)
  Tensor<T> t = reshape(tape, g, {B, 1, C});          // channels become the 1-D axis
  t = conv1d(tape, t, p.w, nullptr, 1);
  t = reshape(tape, t, {B, C, 1, 1});
  return activation(tape, t, Act::sigmoid);
}

// CASA: attn_layer(x) ⊙ cam(x), gate broadcast over the spatial axes. The
// caller passes the layer-normalized block input; both branches consume the
// same tensor.
template <typename T>
Tensor<T> casa(Tape<T>* tape, const Tensor<T>& x, const AttentionParams<T>& ap,
               const AttentionConfig& cfg, const CamParams<T>& cp, bool cam_enabled = true) {
  Tensor<T> sa = attn_layer(tape, x, ap, cfg);
  if (!cam_enabled) return sa;
  Tensor<T> gate = cam(tape, x, cp);
  return ew(tape, sa, gate, EwKind::mul);
}

}  // namespace dinat
