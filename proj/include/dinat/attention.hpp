// Copyright (c) 2026 The dinat-ir authors
// SPDX-License-Identifier: Apache-2.0
//
// 2-D neighborhood attention with dilation. A query at p attends to a k x k
// window of positions on its own residue class modulo the dilation; at the
// borders the window slides fully inside the image so every query keeps
// exactly k^2 valid neighbors (never zero-padded keys). dilation == 1 is
// plain neighborhood attention via the same code path.

#pragma once

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "dinat/ops.hpp"

namespace dinat {

struct AttentionConfig {
  int k = 7;          // odd neighborhood size, window is k x k
  int dilation = 1;   // stride of the neighbor grid
  int heads = 1;
  int channels = 0;   // 0 = derive from tensor shapes
  bool auto_clamp = true;

  int head_dim() const { return channels / heads; }

  void validate() const {
    if (k < 1 || k % 2 == 0) throw ConfigError("attention: k must be odd and >= 1, got " + std::to_string(k));
    if (dilation < 1) throw ConfigError("attention: dilation must be >= 1");
    if (heads < 1) throw ConfigError("attention: heads must be >= 1");
    if (channels != 0 && channels % heads != 0)
      throw ConfigError("attention: channels " + std::to_string(channels) + " not divisible by heads " +
                        std::to_string(heads));
  }
};

// One axis of a dilated window: positions start + j*step for j in [0, k).
struct AxisWindow {
  int start;
  int step;
};

// Window start for a query at `pos` on an axis of size `extent`. The ideal
// start pos - step*(k-1)/2 is clamped to the first/last full window on the
// query's residue class. When the residue class has fewer than k members
// (possible once auto-clamping has pushed (k-1)*d+1 <= extent < k*d) the
// step is reduced for this query until a full window exists; step 1 always
// works because extent >= k.
inline AxisWindow dilated_window(int pos, int extent, int k, int dilation) {
  if (k == 1) return {pos, dilation};
  if (extent < k)
    throw GeometryError("attention: axis extent " + std::to_string(extent) + " smaller than window " +
                        std::to_string(k));
  int d = dilation > 0 ? dilation : 1;
  int r = pos % d;
  int count = (extent - 1 - r) / d + 1;
  while (count < k) {
    --d;
    r = pos % d;
    count = (extent - 1 - r) / d + 1;
  }
  const int last_start = r + (count - k) * d;
  const int ideal = pos - d * ((k - 1) / 2);
  const int s = std::clamp(ideal, r, last_start);
  return {s, d};
}

// Per-axis dilation actually used for an input of extent S. With auto_clamp
// the requested dilation is reduced to the largest geometrically valid value
// max(1, min(d, floor((S-1)/(k-1)))); without it, an undersized axis is an
// error.
inline std::pair<int, int> effective_dilation(int dilation, int k, int H, int W, bool auto_clamp) {
  if (k < 1 || k % 2 == 0) throw ConfigError("attention: k must be odd and >= 1");
  if (dilation < 1) throw ConfigError("attention: dilation must be >= 1");
  auto one_axis = [&](int extent) {
    if (extent < k)
      throw GeometryError("attention: axis extent " + std::to_string(extent) + " smaller than window " +
                          std::to_string(k));
    if (!auto_clamp) {
      if (extent < (k - 1) * dilation + 1)
        throw GeometryError("attention: axis extent " + std::to_string(extent) +
                            " too small for k=" + std::to_string(k) + " dilation=" + std::to_string(dilation));
      return dilation;
    }
    if (k == 1) return dilation;
    const int cap = (extent - 1) / (k - 1);
    const int d = std::max(1, std::min(dilation, cap));
    if (d != dilation)
      warn_once("clamp:" + std::to_string(dilation) + ":" + std::to_string(k) + ":" + std::to_string(extent),
                "attention dilation " + std::to_string(dilation) + " clamped to " + std::to_string(d) +
                    " for axis extent " + std::to_string(extent) + " (k=" + std::to_string(k) + ")");
    return d;
  };
  return {one_axis(H), one_axis(W)};
}

// Ordered (row-major) list of the k^2 neighbor positions of query p.
inline std::vector<std::pair<int, int>> neighbor_map(std::pair<int, int> p, int H, int W, int k,
                                                     int dilation) {
  if (k < 1 || k % 2 == 0) throw ConfigError("attention: k must be odd and >= 1");
  if (dilation < 1) throw ConfigError("attention: dilation must be >= 1");
  if (p.first < 0 || p.first >= H || p.second < 0 || p.second >= W)
    throw GeometryError("neighbor_map: query outside image");
  const AxisWindow wy = dilated_window(p.first, H, k, dilation);
  const AxisWindow wx = dilated_window(p.second, W, k, dilation);
  std::vector<std::pair<int, int>> out;
  out.reserve(static_cast<size_t>(k) * k);
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b)
      out.emplace_back(wy.start + a * wy.step, wx.start + b * wx.step);
  return out;
}

// Relative-position bias index of neighbor p_n for query p_q:
// r = (p_n - p_q)/dilation + (k-1) per axis, in [0, 2k-2].
inline std::pair<int, int> rel_index(std::pair<int, int> p_q, std::pair<int, int> p_n, int dilation,
                                     int k) {
  auto one = [&](int q, int n) {
    const int diff = n - q;
    if (dilation < 1 || diff % dilation != 0)
      throw ContractError("rel_index: offset " + std::to_string(diff) + " not on dilation grid " +
                          std::to_string(dilation));
    const int r = diff / dilation + (k - 1);
    if (r < 0 || r > 2 * k - 2) throw ContractError("rel_index: offset outside window");
    return r;
  };
  return {one(p_q.first, p_n.first), one(p_q.second, p_n.second)};
}

namespace detail {

// Per-axis window size and dilation actually used by the kernels. With
// auto_clamp an axis shorter than the window shrinks the window to the axis
// extent (degenerating to dense attention along that axis); the relative-
// position index always stays inside the (2k-1)^2 table of the configured k.
struct AxisGeom {
  int k;
  int dilation;
};

inline AxisGeom axis_geometry(int extent, int k, int dilation, bool auto_clamp) {
  int ke = k;
  if (extent < k) {
    if (!auto_clamp)
      throw GeometryError("attention: axis extent " + std::to_string(extent) + " smaller than window " +
                          std::to_string(k));
    ke = extent;
    warn_once("shrink:" + std::to_string(k) + ":" + std::to_string(extent),
              "attention window " + std::to_string(k) + " shrunk to axis extent " + std::to_string(extent));
  }
  int d = dilation;
  if (ke > 1) {
    const int cap = (extent - 1) / (ke - 1);
    if (auto_clamp) {
      d = std::max(1, std::min(dilation, cap));
      if (d != dilation)
        warn_once("clamp:" + std::to_string(dilation) + ":" + std::to_string(ke) + ":" + std::to_string(extent),
                  "attention dilation " + std::to_string(dilation) + " clamped to " + std::to_string(d) +
                      " for axis extent " + std::to_string(extent) + " (k=" + std::to_string(ke) + ")");
    } else if (extent < (ke - 1) * dilation + 1) {
      throw GeometryError("attention: axis extent " + std::to_string(extent) +
                          " too small for k=" + std::to_string(ke) + " dilation=" + std::to_string(dilation));
    }
  }
  return {ke, d};
}

template <typename T>
void check_attend_shapes(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                         const Tensor<T>& rpb, const AttentionConfig& cfg) {
  cfg.validate();
  if (q.rank() != 5) throw DimensionError("dina_attend: q must be (B,h,H,W,d), got " + shape_str(q.shape()));
  if (!q.same_shape(k) || !q.same_shape(v))
    throw DimensionError("dina_attend: q/k/v shape mismatch");
  if (q.dim(1) != cfg.heads)
    throw DimensionError("dina_attend: tensor heads " + std::to_string(q.dim(1)) + " != cfg.heads " +
                         std::to_string(cfg.heads));
  if (cfg.channels != 0 && q.dim(1) * q.dim(4) != cfg.channels)
    throw DimensionError("dina_attend: h*d != cfg.channels");
  if (rpb.rank() != 3 || rpb.dim(0) != cfg.heads || rpb.dim(1) != 2 * cfg.k - 1 ||
      rpb.dim(2) != 2 * cfg.k - 1)
    throw DimensionError("dina_attend: bias table must be (h,2k-1,2k-1), got " + shape_str(rpb.shape()));
}

}  // namespace detail

// Fused forward of dilated neighborhood attention.
// score(p, n) = q_p . k_n / sqrt(d) + B[(n - p)/step + k - 1], softmax over
// the window, output = weighted sum of v. The backward closure produces
// gradients for q, k, v, and the bias table.
template <typename T>
Tensor<T> dina_attend(Tape<T>* tape, const Tensor<T>& q, const Tensor<T>& k_t, const Tensor<T>& v,
                      const Tensor<T>& rpb, const AttentionConfig& cfg) {
  detail::check_attend_shapes(q, k_t, v, rpb, cfg);
  const int64_t B = q.dim(0), h = q.dim(1), H = q.dim(2), W = q.dim(3), d = q.dim(4);
  const detail::AxisGeom gy = detail::axis_geometry(static_cast<int>(H), cfg.k, cfg.dilation, cfg.auto_clamp);
  const detail::AxisGeom gx = detail::axis_geometry(static_cast<int>(W), cfg.k, cfg.dilation, cfg.auto_clamp);

  std::vector<AxisWindow> rowwin(static_cast<size_t>(H)), colwin(static_cast<size_t>(W));
  for (int64_t y = 0; y < H; ++y)
    rowwin[static_cast<size_t>(y)] = dilated_window(static_cast<int>(y), static_cast<int>(H), gy.k, gy.dilation);
  for (int64_t x = 0; x < W; ++x)
    colwin[static_cast<size_t>(x)] = dilated_window(static_cast<int>(x), static_cast<int>(W), gx.k, gx.dilation);

  const bool tracked = detail::track(tape, {&q, &k_t, &v, &rpb});
  Tensor<T> out = detail::make_output<T>(q.shape(), tracked);
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  const int ky = gy.k, kx = gx.k;
  const int kk = ky * kx;
  const int bias_n = 2 * cfg.k - 1;
  const int shift = cfg.k - 1;

  const T* qp = q.data();
  const T* kp = k_t.data();
  const T* vp = v.data();
  const T* bp = rpb.data();
  T* op = out.data();

  // softmax weights are kept for the backward pass when tracking
  std::shared_ptr<std::vector<T>> wcache;
  if (tracked) wcache = std::make_shared<std::vector<T>>(static_cast<size_t>(B * h * H * W * kk));
  T* wcp = wcache ? wcache->data() : nullptr;

  parallel_for(B * h, [&](int64_t lo, int64_t hi) {
    std::vector<T> scores(static_cast<size_t>(kk));
    std::vector<const T*> vvec(static_cast<size_t>(kk));
    for (int64_t e = lo; e < hi; ++e) {
      const int64_t b = e / h, hd = e % h;
      const int64_t plane = ((b * h + hd) * H * W) * d;
      const T* bh = bp + hd * bias_n * bias_n;
      for (int64_t y = 0; y < H; ++y) {
        const AxisWindow rw = rowwin[static_cast<size_t>(y)];
        for (int64_t x = 0; x < W; ++x) {
          const AxisWindow cw = colwin[static_cast<size_t>(x)];
          const T* qv = qp + plane + (y * W + x) * d;
          T mx = -std::numeric_limits<T>::infinity();
          for (int a = 0; a < ky; ++a) {
            const int iy = rw.start + a * rw.step;
            const int ry = (iy - static_cast<int>(y)) / rw.step + shift;
            for (int bb = 0; bb < kx; ++bb) {
              const int ix = cw.start + bb * cw.step;
              const int rx = (ix - static_cast<int>(x)) / cw.step + shift;
              const int64_t off = plane + (static_cast<int64_t>(iy) * W + ix) * d;
              const T s = detail::dot_span(qv, kp + off, d) * scale + bh[ry * bias_n + rx];
              const int idx = a * kx + bb;
              scores[static_cast<size_t>(idx)] = s;
              vvec[static_cast<size_t>(idx)] = vp + off;
              if (s > mx) mx = s;
            }
          }
          T sum = T(0);
          for (int i = 0; i < kk; ++i) {
            const T w = std::exp(scores[static_cast<size_t>(i)] - mx);
            scores[static_cast<size_t>(i)] = w;
            sum += w;
          }
          const T inv = T(1) / sum;
          T* ov = op + plane + (y * W + x) * d;
          for (int64_t j = 0; j < d; ++j) ov[j] = T(0);
          for (int i = 0; i < kk; ++i) {
            const T w = scores[static_cast<size_t>(i)] * inv;
            const T* vv = vvec[static_cast<size_t>(i)];
            for (int64_t j = 0; j < d; ++j) ov[j] += w * vv[j];
          }
          if (wcp) {
            T* dst = wcp + (((b * h + hd) * H + y) * W + x) * kk;
            for (int i = 0; i < kk; ++i) dst[i] = scores[static_cast<size_t>(i)] * inv;
          }
        }
      }
    }
  });

  if (tracked) {
    Tensor<T> qc = q, kc = k_t, vc = v, bc = rpb, oc = out;
    const int cfg_k = cfg.k;
    tape->record(out, [qc, kc, vc, bc, oc, rowwin, colwin, ky, kx, cfg_k, scale, wcache]() mutable {
      const int64_t B = qc.dim(0), h = qc.dim(1), H = qc.dim(2), W = qc.dim(3), d = qc.dim(4);
      const int kk = ky * kx;
      const int bias_n = 2 * cfg_k - 1;
      const int shift = cfg_k - 1;
      const T* qp = qc.data();
      const T* kp = kc.data();
      const T* vp = vc.data();
      const T* go = oc.grad();
      const T* wcp = wcache->data();
      T* qg = qc.requires_grad() ? qc.grad() : nullptr;
      T* kg = kc.requires_grad() ? kc.grad() : nullptr;
      T* vg = vc.requires_grad() ? vc.grad() : nullptr;
      T* bg = bc.requires_grad() ? bc.grad() : nullptr;
      // dq is written once per query; dk/dv/dbias are scatter-accumulated.
      // Parallel over heads only: per-head slices of every grad buffer are
      // disjoint and accumulation order inside a head is fixed (b, y, x).
      parallel_for(h, [&](int64_t hlo, int64_t hhi) {
        std::vector<T> dscore(static_cast<size_t>(kk));
        std::vector<int64_t> noff(static_cast<size_t>(kk));
        std::vector<int> bidx(static_cast<size_t>(kk));
        for (int64_t hd = hlo; hd < hhi; ++hd) {
          T* bgh = bg ? bg + hd * bias_n * bias_n : nullptr;
          for (int64_t b = 0; b < B; ++b) {
            const int64_t plane = ((b * h + hd) * H * W) * d;
            for (int64_t y = 0; y < H; ++y) {
              const AxisWindow rw = rowwin[static_cast<size_t>(y)];
              for (int64_t x = 0; x < W; ++x) {
                const AxisWindow cw = colwin[static_cast<size_t>(x)];
                const T* qv = qp + plane + (y * W + x) * d;
                const T* gv = go + plane + (y * W + x) * d;
                const T* weights = wcp + (((b * h + hd) * H + y) * W + x) * kk;
                for (int a = 0; a < ky; ++a) {
                  const int iy = rw.start + a * rw.step;
                  const int ry = (iy - static_cast<int>(y)) / rw.step + shift;
                  for (int bb = 0; bb < kx; ++bb) {
                    const int ix = cw.start + bb * cw.step;
                    const int rx = (ix - static_cast<int>(x)) / cw.step + shift;
                    const int idx = a * kx + bb;
                    noff[static_cast<size_t>(idx)] = plane + (static_cast<int64_t>(iy) * W + ix) * d;
                    bidx[static_cast<size_t>(idx)] = ry * bias_n + rx;
                  }
                }
                T wsum = T(0);
                for (int i = 0; i < kk; ++i) {
                  const T t = detail::dot_span(gv, vp + noff[static_cast<size_t>(i)], d);
                  dscore[static_cast<size_t>(i)] = t;
                  wsum += weights[i] * t;
                }
                for (int i = 0; i < kk; ++i)
                  dscore[static_cast<size_t>(i)] = weights[i] * (dscore[static_cast<size_t>(i)] - wsum);
                T* qgrow = qg ? qg + plane + (y * W + x) * d : nullptr;
                for (int i = 0; i < kk; ++i) {
                  const T ds = dscore[static_cast<size_t>(i)];
                  const T w = weights[i];
                  const int64_t off = noff[static_cast<size_t>(i)];
                  if (vg) {
                    T* vrow = vg + off;
                    for (int64_t j = 0; j < d; ++j) vrow[j] += w * gv[j];
                  }
                  if (qgrow) {
                    const T* kv = kp + off;
                    const T c = ds * scale;
                    for (int64_t j = 0; j < d; ++j) qgrow[j] += c * kv[j];
                  }
                  if (kg) {
                    T* krow = kg + off;
                    const T c = ds * scale;
                    for (int64_t j = 0; j < d; ++j) krow[j] += c * qv[j];
                  }
                  if (bgh) bgh[bidx[static_cast<size_t>(i)]] += ds;
                }
              }
            }
          }
        }
      });
    });
  }
  return out;
}

// Brute-force reference: a dense (H*W) x (H*W) score matrix with -inf outside
// each query's neighbor set, bias added at the neighbor entries, dense
// softmax, dense weighted sum. Forward only; intended for H*W <= 256.
template <typename T>
Tensor<T> dense_oracle(const Tensor<T>& q, const Tensor<T>& k_t, const Tensor<T>& v,
                       const Tensor<T>& rpb, const AttentionConfig& cfg) {
  detail::check_attend_shapes(q, k_t, v, rpb, cfg);
  const int64_t B = q.dim(0), h = q.dim(1), H = q.dim(2), W = q.dim(3), d = q.dim(4);
  const detail::AxisGeom gy = detail::axis_geometry(static_cast<int>(H), cfg.k, cfg.dilation, cfg.auto_clamp);
  const detail::AxisGeom gx = detail::axis_geometry(static_cast<int>(W), cfg.k, cfg.dilation, cfg.auto_clamp);
  const int64_t N = H * W;
  const int bias_n = 2 * cfg.k - 1;
  const int shift = cfg.k - 1;
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  const T neg_inf = -std::numeric_limits<T>::infinity();

  Tensor<T> out(q.shape());
  const T* qp = q.data();
  const T* kp = k_t.data();
  const T* vp = v.data();
  const T* bp = rpb.data();
  T* op = out.data();
  std::vector<T> scores(static_cast<size_t>(N));
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t hd = 0; hd < h; ++hd) {
      const int64_t plane = ((b * h + hd) * N) * d;
      const T* bh = bp + hd * bias_n * bias_n;
      for (int64_t p = 0; p < N; ++p) {
        const int py = static_cast<int>(p / W), px = static_cast<int>(p % W);
        std::fill(scores.begin(), scores.end(), neg_inf);
        const AxisWindow rw = dilated_window(py, static_cast<int>(H), gy.k, gy.dilation);
        const AxisWindow cw = dilated_window(px, static_cast<int>(W), gx.k, gx.dilation);
        const T* qv = qp + plane + p * d;
        for (int a = 0; a < gy.k; ++a) {
          const int iy = rw.start + a * rw.step;
          const int ry = (iy - py) / rw.step + shift;
          for (int bb = 0; bb < gx.k; ++bb) {
            const int ix = cw.start + bb * cw.step;
            const int rx = (ix - px) / cw.step + shift;
            const int64_t n = static_cast<int64_t>(iy) * W + ix;
            const T* kv = kp + plane + n * d;
            T dot = T(0);
            for (int64_t j = 0; j < d; ++j) dot += qv[j] * kv[j];
            scores[static_cast<size_t>(n)] = dot * scale + bh[ry * bias_n + rx];
          }
        }
        // dense softmax over the full row (exp(-inf) = 0)
        T mx = neg_inf;
        for (int64_t n = 0; n < N; ++n) mx = std::max(mx, scores[static_cast<size_t>(n)]);
        T sum = T(0);
        for (int64_t n = 0; n < N; ++n) {
          const T e = std::exp(scores[static_cast<size_t>(n)] - mx);
          scores[static_cast<size_t>(n)] = e;
          sum += e;
        }
        T* ov = op + plane + p * d;
        for (int64_t j = 0; j < d; ++j) ov[j] = T(0);
        for (int64_t n = 0; n < N; ++n) {
          const T w = scores[static_cast<size_t>(n)] / sum;
          if (w == T(0)) continue;
          const T* vv = vp + plane + n * d;
          for (int64_t j = 0; j < d; ++j) ov[j] += w * vv[j];
        }
      }
    }
  }
  return out;
}

// Learned parameters of one attention layer: bias-free 1x1 q/k/v/o
// projections plus the relative positional bias table.
template <typename T>
struct AttentionParams {
  Tensor<T> wq, wk, wv, wo;  // (C, C)
  Tensor<T> rpb;             // (heads, 2k-1, 2k-1)
};

template <typename T>
AttentionParams<T> make_attention_params(int channels, int heads, int k, Rng& rng,
                                         double stddev = 0.02) {
  AttentionParams<T> p;
  p.wq = Tensor<T>({channels, channels});
  p.wk = Tensor<T>({channels, channels});
  p.wv = Tensor<T>({channels, channels});
  p.wo = Tensor<T>({channels, channels});
  p.rpb = Tensor<T>({heads, 2 * k - 1, 2 * k - 1});
  fill_normal(p.wq, rng, 0.0, stddev);
  fill_normal(p.wk, rng, 0.0, stddev);
  fill_normal(p.wv, rng, 0.0, stddev);
  fill_normal(p.wo, rng, 0.0, stddev);
  fill_normal(p.rpb, rng, 0.0, stddev);
  return p;
}

// Full spatial attention layer: project, split heads, attend, merge, project.
template <typename T>
Tensor<T> attn_layer(Tape<T>* tape, const Tensor<T>& x, const AttentionParams<T>& p,
                     const AttentionConfig& cfg) {
  if (x.rank() != 4) throw DimensionError("attn_layer: x must be (B,C,H,W)");
  if (cfg.channels != 0 && x.dim(1) != cfg.channels)
    throw DimensionError("attn_layer: input channels " + std::to_string(x.dim(1)) +
                         " != cfg.channels " + std::to_string(cfg.channels));
  if (p.wq.dim(0) != x.dim(1))
    throw DimensionError("attn_layer: weight channels mismatch");
  Tensor<T> qf = proj1x1(tape, x, p.wq);
  Tensor<T> kf = proj1x1(tape, x, p.wk);
  Tensor<T> vf = proj1x1(tape, x, p.wv);
  Tensor<T> qh = split_heads(tape, qf, cfg.heads);
  Tensor<T> kh = split_heads(tape, kf, cfg.heads);
  Tensor<T> vh = split_heads(tape, vf, cfg.heads);
  Tensor<T> oh = dina_attend(tape, qh, kh, vh, p.rpb, cfg);
  Tensor<T> om = merge_heads(tape, oh);
  return proj1x1(tape, om, p.wo);
}

}  // namespace dinat
