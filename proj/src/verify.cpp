// Copyright (c) 2026 The dinat-ir authors
// SPDX-License-Identifier: Apache-2.0

#include "dinat/verify.hpp"

#include <cmath>

#include "dinat/cam.hpp"
#include "dinat/model.hpp"
#include "dinat/train.hpp"

namespace dinat {

namespace {

using D = double;

Tensor<D> rand_t(std::vector<int64_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<D> t(std::move(shape));
  fill_uniform(t, rng, lo, hi);
  return t;
}

// random linear functional of the op output; catches permuted/rescaled grads
Tensor<D> project(Tape<D>* tape, const Tensor<D>& y, const Tensor<D>& probe) {
  return sum_all(tape, ew(tape, y, probe, EwKind::mul));
}

CheckReport run(const std::string& name, const ScalarFn& f, std::vector<Tensor<D>> inputs,
                double tol, Rng& rng, int64_t max_probes = 0) {
  GradCheckReport rep = grad_check(f, inputs, tol, &rng, max_probes);
  return CheckReport{name, rep.max_rel_err, tol, rep.pass};
}

}  // namespace

std::vector<CheckReport> grad_suite_ops(uint64_t seed) {
  Rng rng(seed);
  std::vector<CheckReport> out;
  const double tol = 1e-5;

  {
    Tensor<D> probe = rand_t({1, 3, 4, 4}, rng);
    auto f = [probe](Tape<D>* t, std::vector<Tensor<D>>& in) {
      return project(t, conv2d(t, in[0], in[1], &in[2], 1, 1, 1), probe);
    };
    out.push_back(run("conv2d(pad1,bias)", f,
                      {rand_t({1, 2, 4, 4}, rng), rand_t({3, 2, 3, 3}, rng), rand_t({3}, rng)}, tol, rng));
  }
  {
    Tensor<D> probe = rand_t({1, 4, 2, 2}, rng);
    auto f = [probe](Tape<D>* t, std::vector<Tensor<D>>& in) {
      return project(t, conv2d(t, in[0], in[1], nullptr, 2, 0, 2), probe);
    };
    out.push_back(run("conv2d(stride2,groups2)", f,
                      {rand_t({1, 4, 5, 5}, rng), rand_t({4, 2, 2, 2}, rng)}, tol, rng));
  }
  {
    Tensor<D> probe = rand_t({1, 6, 3, 3}, rng);
    auto f = [probe](Tape<D>* t, std::vector<Tensor<D>>& in) {
      return project(t, conv2d(t, in[0], in[1], nullptr, 1, 1, 6), probe);
    };
    out.push_back(run("conv2d(depthwise)", f,
                      {rand_t({1, 6, 3, 3}, rng), rand_t({6, 1, 3, 3}, rng)}, tol, rng));
  }
  {
    Tensor<D> probe = rand_t({2, 2, 7}, rng);
    auto f = [probe](Tape<D>* t, std::vector<Tensor<D>>& in) {
      return project(t, conv1d(t, in[0], in[1], &in[2], 1), probe);
    };
    out.push_back(run("conv1d(pad1,bias)", f,
                      {rand_t({2, 1, 7}, rng), rand_t({2, 1, 3}, rng), rand_t({2}, rng)}, tol, rng));
  }
  {
    Tensor<D> probe = rand_t({2, 3, 2, 2}, rng);
    auto f = [probe](Tape<D>* t, std::vector<Tensor<D>>& in) {
      return project(t, proj1x1(t, in[0], in[1]), probe);
    };
    out.push_back(run("proj1x1", f, {rand_t({2, 4, 2, 2}, rng), rand_t({3, 4}, rng)}, tol, rng));
  }
  {
    Tensor<D> probe = rand_t({2, 5, 3, 3}, rng);
    auto f = [probe](Tape<D>* t, std::vector<Tensor<D>>& in) {
      return project(t, layer_norm(t, in[0], in[1], in[2], 1e-5), probe);
    };
    out.push_back(run("layer_norm", f,
                      {rand_t({2, 5, 3, 3}, rng), rand_t({5}, rng, 0.5, 1.5), rand_t({5}, rng)}, tol, rng));
  }
  {
    Tensor<D> probe = rand_t({2, 6, 3}, rng);
    auto f = [probe](Tape<D>* t, std::vector<Tensor<D>>& in) {
      return project(t, softmax(t, in[0], 1), probe);
    };
    out.push_back(run("softmax(axis1)", f, {rand_t({2, 6, 3}, rng, -3.0, 3.0)}, tol, rng));
  }
  {
    Tensor<D> probe = rand_t({3, 7}, rng);
    auto f = [probe](Tape<D>* t, std::vector<Tensor<D>>& in) {
      return project(t, activation(t, in[0], Act::sigmoid), probe);
    };
    out.push_back(run("sigmoid", f, {rand_t({3, 7}, rng, -4.0, 4.0)}, tol, rng));
  }
  {
    Tensor<D> probe = rand_t({3, 7}, rng);
    auto f = [probe](Tape<D>* t, std::vector<Tensor<D>>& in) {
      return project(t, activation(t, in[0], Act::gelu), probe);
    };
    out.push_back(run("gelu", f, {rand_t({3, 7}, rng, -3.0, 3.0)}, tol, rng));
  }
  {
    Tensor<D> probe = rand_t({2, 3, 1, 1}, rng);
    auto f = [probe](Tape<D>* t, std::vector<Tensor<D>>& in) {
      return project(t, gap2d(t, in[0]), probe);
    };
    out.push_back(run("gap2d", f, {rand_t({2, 3, 4, 5}, rng)}, tol, rng));
  }
  {
    Tensor<D> probe = rand_t({1, 2, 6, 6}, rng);
    auto f = [probe](Tape<D>* t, std::vector<Tensor<D>>& in) {
      return project(t, pixel_shuffle(t, in[0], 2), probe);
    };
    out.push_back(run("pixel_shuffle", f, {rand_t({1, 8, 3, 3}, rng)}, tol, rng));
  }
  {
    Tensor<D> probe = rand_t({1, 8, 3, 3}, rng);
    auto f = [probe](Tape<D>* t, std::vector<Tensor<D>>& in) {
      return project(t, pixel_unshuffle(t, in[0], 2), probe);
    };
    out.push_back(run("pixel_unshuffle", f, {rand_t({1, 2, 6, 6}, rng)}, tol, rng));
  }
  {
    Tensor<D> probe = rand_t({2, 3, 4, 4}, rng);
    auto f = [probe](Tape<D>* t, std::vector<Tensor<D>>& in) {
      return project(t, ew(t, in[0], in[1], EwKind::mul), probe);
    };
    out.push_back(run("ew_mul(broadcast)", f,
                      {rand_t({2, 3, 4, 4}, rng), rand_t({2, 3, 1, 1}, rng)}, tol, rng));
  }
  {
    Tensor<D> probe = rand_t({2, 3, 4, 4}, rng);
    auto f = [probe](Tape<D>* t, std::vector<Tensor<D>>& in) {
      return project(t, ew(t, in[0], in[1], EwKind::add), probe);
    };
    out.push_back(run("ew_add(broadcast)", f,
                      {rand_t({1, 3, 4, 4}, rng), rand_t({2, 3, 4, 1}, rng)}, tol, rng));
  }
  {
    Tensor<D> probe = rand_t({3, 2, 2}, rng);
    auto f = [probe](Tape<D>* t, std::vector<Tensor<D>>& in) {
      return project(t, reshape(t, in[0], {3, 2, 2}), probe);
    };
    out.push_back(run("reshape", f, {rand_t({2, 6}, rng)}, tol, rng));
  }
  {
    Tensor<D> probe = rand_t({2, 2, 3}, rng);
    auto f = [probe](Tape<D>* t, std::vector<Tensor<D>>& in) {
      return project(t, narrow(t, in[0], 1, 1, 2), probe);
    };
    out.push_back(run("narrow", f, {rand_t({2, 5, 3}, rng)}, tol, rng));
  }
  {
    Tensor<D> probe = rand_t({2, 5, 3}, rng);
    auto f = [probe](Tape<D>* t, std::vector<Tensor<D>>& in) {
      return project(t, concat(t, {in[0], in[1]}, 1), probe);
    };
    out.push_back(run("concat", f, {rand_t({2, 2, 3}, rng), rand_t({2, 3, 3}, rng)}, tol, rng));
  }
  {
    Tensor<D> probe = rand_t({1, 2, 3, 3, 2}, rng);
    auto f = [probe](Tape<D>* t, std::vector<Tensor<D>>& in) {
      return project(t, split_heads(t, in[0], 2), probe);
    };
    out.push_back(run("split_heads", f, {rand_t({1, 4, 3, 3}, rng)}, tol, rng));
  }
  {
    Tensor<D> probe = rand_t({1, 4, 3, 3}, rng);
    auto f = [probe](Tape<D>* t, std::vector<Tensor<D>>& in) {
      return project(t, merge_heads(t, in[0]), probe);
    };
    out.push_back(run("merge_heads", f, {rand_t({1, 2, 3, 3, 2}, rng)}, tol, rng));
  }
  {
    auto f = [](Tape<D>* t, std::vector<Tensor<D>>& in) { return mean_all(t, in[0]); };
    out.push_back(run("mean_all", f, {rand_t({4, 5}, rng)}, tol, rng));
  }
  {
    auto f = [](Tape<D>* t, std::vector<Tensor<D>>& in) { return psnr_loss(t, in[0], in[1]); };
    out.push_back(run("psnr_loss", f,
                      {rand_t({2, 3, 4, 4}, rng, 0.1, 0.9), rand_t({2, 3, 4, 4}, rng, 0.1, 0.9)}, tol, rng));
  }
  {
    auto f = [](Tape<D>* t, std::vector<Tensor<D>>& in) { return l1_loss(t, in[0], in[1]); };
    out.push_back(run("l1_loss", f,
                      {rand_t({2, 3, 4, 4}, rng, 0.1, 0.9), rand_t({2, 3, 4, 4}, rng, -0.9, -0.1)}, tol, rng));
  }
  return out;
}

std::vector<CheckReport> grad_suite_attention(uint64_t seed) {
  Rng rng(seed);
  std::vector<CheckReport> out;

  for (int dil = 1; dil <= 2; ++dil) {
    AttentionConfig cfg{3, dil, 2, 6, true};
    Tensor<D> probe = rand_t({1, 2, 5, 6, 3}, rng);
    auto f = [cfg, probe](Tape<D>* t, std::vector<Tensor<D>>& in) {
      return project(t, dina_attend(t, in[0], in[1], in[2], in[3], cfg), probe);
    };
    out.push_back(run("dina_attend(d=" + std::to_string(dil) + ")", f,
                      {rand_t({1, 2, 5, 6, 3}, rng), rand_t({1, 2, 5, 6, 3}, rng),
                       rand_t({1, 2, 5, 6, 3}, rng), rand_t({2, 5, 5}, rng)},
                      1e-5, rng));
  }
  {
    AttentionConfig cfg{3, 1, 2, 4, true};
    Rng prng(seed ^ 0x1234);
    AttentionParams<D> p = make_attention_params<D>(4, 2, 3, prng, 0.2);
    Tensor<D> probe = rand_t({1, 4, 6, 6}, rng);
    auto f = [cfg, p, probe](Tape<D>* t, std::vector<Tensor<D>>& in) {
      AttentionParams<D> ap{in[1], in[2], in[3], in[4], in[5]};
      return project(t, attn_layer(t, in[0], ap, cfg), probe);
    };
    out.push_back(run("attn_layer", f,
                      {rand_t({1, 4, 6, 6}, rng), p.wq, p.wk, p.wv, p.wo, p.rpb}, 1e-4, rng));
  }
  {
    AttentionConfig cfg{3, 1, 2, 4, true};
    Rng prng(seed ^ 0x777);
    AttentionParams<D> p = make_attention_params<D>(4, 2, 3, prng, 0.2);
    CamParams<D> cp = make_cam_params<D>(prng, 0.3);
    Tensor<D> probe = rand_t({1, 4, 6, 6}, rng);
    auto f = [cfg, probe](Tape<D>* t, std::vector<Tensor<D>>& in) {
      AttentionParams<D> ap{in[1], in[2], in[3], in[4], in[5]};
      CamParams<D> cpp{in[6]};
      return project(t, casa(t, in[0], ap, cfg, cpp, true), probe);
    };
    out.push_back(run("casa", f,
                      {rand_t({1, 4, 6, 6}, rng), p.wq, p.wk, p.wv, p.wo, p.rpb, cp.w}, 1e-4, rng));
  }
  return out;
}

std::vector<CheckReport> grad_suite_block(uint64_t seed) {
  Rng rng(seed);
  std::vector<CheckReport> out;
  {
    Rng prng(seed ^ 0xabc);
    GdfnParams<D> p = make_gdfn_params<D>(4, 2.0, prng, 0.2);
    Tensor<D> probe = rand_t({1, 4, 4, 4}, rng);
    auto f = [probe](Tape<D>* t, std::vector<Tensor<D>>& in) {
      GdfnParams<D> gp{in[1], in[2], in[3]};
      return project(t, gdfn(t, in[0], gp), probe);
    };
    out.push_back(run("gdfn", f, {rand_t({1, 4, 4, 4}, rng), p.w_in, p.w_dw, p.w_out}, 1e-4, rng));
  }
  {
    Rng prng(seed ^ 0xdef);
    ModelConfig mc = micro_config(4, 3);
    BlockParams<D> bp;
    bp.ln1_g = rand_t({4}, prng, 0.5, 1.5);
    bp.ln1_b = rand_t({4}, prng, -0.2, 0.2);
    bp.ln2_g = rand_t({4}, prng, 0.5, 1.5);
    bp.ln2_b = rand_t({4}, prng, -0.2, 0.2);
    bp.attn = make_attention_params<D>(4, 2, 3, prng, 0.2);
    bp.cam = make_cam_params<D>(prng, 0.3);
    bp.ffn = make_gdfn_params<D>(4, mc.gdfn_expansion, prng, 0.2);
    bp.cfg = AttentionConfig{3, 2, 2, 4, true};
    bp.cam_enabled = true;
    Tensor<D> probe = rand_t({1, 4, 6, 6}, rng);
    auto f = [bp, probe](Tape<D>* t, std::vector<Tensor<D>>& in) {
      BlockParams<D> b = bp;
      b.ln1_g = in[1];
      b.ln1_b = in[2];
      b.attn.wq = in[3];
      b.attn.wv = in[4];
      b.attn.rpb = in[5];
      b.cam.w = in[6];
      b.ffn.w_in = in[7];
      b.ffn.w_out = in[8];
      b.ln2_g = in[9];
      return project(t, block(t, in[0], b), probe);
    };
    out.push_back(run("block", f,
                      {rand_t({1, 4, 6, 6}, rng), bp.ln1_g, bp.ln1_b, bp.attn.wq, bp.attn.wv,
                       bp.attn.rpb, bp.cam.w, bp.ffn.w_in, bp.ffn.w_out, bp.ln2_g},
                      1e-4, rng));
  }
  {
    Tensor<D> probe = rand_t({1, 8, 3, 3}, rng);
    auto f = [probe](Tape<D>* t, std::vector<Tensor<D>>& in) {
      return project(t, downsample(t, in[0], in[1]), probe);
    };
    out.push_back(run("downsample", f, {rand_t({1, 4, 6, 6}, rng), rand_t({2, 4, 3, 3}, rng)}, 1e-5, rng));
  }
  {
    Tensor<D> probe = rand_t({1, 2, 6, 6}, rng);
    auto f = [probe](Tape<D>* t, std::vector<Tensor<D>>& in) {
      return project(t, upsample(t, in[0], in[1]), probe);
    };
    out.push_back(run("upsample", f, {rand_t({1, 4, 3, 3}, rng), rand_t({8, 4, 3, 3}, rng)}, 1e-5, rng));
  }
  return out;
}

std::vector<CheckReport> grad_suite_model(uint64_t seed) {
  Rng rng(seed);
  std::vector<CheckReport> out;
  Model<D> model = build_model<D>(micro_config(4, 3), seed ^ 0x5eed);
  Tensor<D> x = rand_t({1, 3, 16, 16}, rng, 0.0, 1.0);
  Tensor<D> probe = rand_t({1, 3, 16, 16}, rng);

  // Probe the input plus every parameter through a shared forward closure.
  std::vector<Tensor<D>> inputs;
  inputs.push_back(x);
  for (auto& p : model.params) inputs.push_back(p.value);
  auto f = [&model, probe](Tape<D>* t, std::vector<Tensor<D>>& in) {
    return project(t, model.forward(t, in[0]), probe);
  };
  GradCheckReport rep = grad_check(f, inputs, 1e-3, &rng, 4);
  out.push_back(CheckReport{"model(micro,16x16)", rep.max_rel_err, 1e-3, rep.pass});
  return out;
}

std::vector<CheckReport> oracle_suite(uint64_t seed) {
  std::vector<CheckReport> out;
  // grid: H,W in {4,6,8}, k in {1,3}, dilation in {1,2}, 10 seeds
  for (int k : {1, 3}) {
    for (int dil : {1, 2}) {
      double worst = 0.0;
      for (int H : {4, 6, 8}) {
        for (int W : {4, 6, 8}) {
          for (uint64_t s = 0; s < 10; ++s) {
            Rng rng(seed + s * 1000 + static_cast<uint64_t>(H * 64 + W * 8 + k + dil));
            AttentionConfig cfg{k, dil, 2, 8, true};
            Tensor<D> q = rand_t({1, 2, H, W, 4}, rng);
            Tensor<D> kt = rand_t({1, 2, H, W, 4}, rng);
            Tensor<D> v = rand_t({1, 2, H, W, 4}, rng);
            Tensor<D> b = rand_t({2, 2 * k - 1, 2 * k - 1}, rng);
            Tensor<D> fused = dina_attend<D>(nullptr, q, kt, v, b, cfg);
            Tensor<D> dense = dense_oracle<D>(q, kt, v, b, cfg);
            for (int64_t i = 0; i < fused.numel(); ++i)
              worst = std::max(worst, std::abs(fused.data()[i] - dense.data()[i]));
          }
        }
      }
      out.push_back(CheckReport{"dense_oracle(k=" + std::to_string(k) + ",d=" + std::to_string(dil) + ")",
                                worst, 1e-10, worst < 1e-10});
    }
  }
  {
    // k = H = W with zero bias reduces to unmasked dense attention
    Rng rng(seed ^ 0xfull);
    const int k = 5, H = 5, W = 5, d = 3;
    AttentionConfig cfg{k, 1, 1, d, true};
    Tensor<D> q = rand_t({1, 1, H, W, d}, rng);
    Tensor<D> kt = rand_t({1, 1, H, W, d}, rng);
    Tensor<D> v = rand_t({1, 1, H, W, d}, rng);
    Tensor<D> zb({1, 2 * k - 1, 2 * k - 1});
    Tensor<D> fused = dina_attend<D>(nullptr, q, kt, v, zb, cfg);
    // plain dense softmax attention over all positions
    const int64_t N = H * W;
    double worst = 0.0;
    std::vector<double> scores(static_cast<size_t>(N));
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (int64_t p = 0; p < N; ++p) {
      for (int64_t n = 0; n < N; ++n) {
        double dot = 0.0;
        for (int j = 0; j < d; ++j) dot += q.data()[p * d + j] * kt.data()[n * d + j];
        scores[static_cast<size_t>(n)] = dot * scale;
      }
      double mx = scores[0];
      for (int64_t n = 1; n < N; ++n) mx = std::max(mx, scores[static_cast<size_t>(n)]);
      double sum = 0.0;
      for (int64_t n = 0; n < N; ++n) {
        scores[static_cast<size_t>(n)] = std::exp(scores[static_cast<size_t>(n)] - mx);
        sum += scores[static_cast<size_t>(n)];
      }
      for (int j = 0; j < d; ++j) {
        double acc = 0.0;
        for (int64_t n = 0; n < N; ++n) acc += scores[static_cast<size_t>(n)] / sum * v.data()[n * d + j];
        worst = std::max(worst, std::abs(acc - fused.data()[p * d + j]));
      }
    }
    out.push_back(CheckReport{"full_window_dense", worst, 1e-10, worst < 1e-10});
  }
  {
    // k=1 attention is the identity on v
    Rng rng(seed ^ 0x1dull);
    AttentionConfig cfg{1, 3, 2, 8, true};
    Tensor<D> q = rand_t({1, 2, 4, 4, 4}, rng);
    Tensor<D> kt = rand_t({1, 2, 4, 4, 4}, rng);
    Tensor<D> v = rand_t({1, 2, 4, 4, 4}, rng);
    Tensor<D> b = rand_t({2, 1, 1}, rng);
    Tensor<D> o = dina_attend<D>(nullptr, q, kt, v, b, cfg);
    double worst = 0.0;
    for (int64_t i = 0; i < o.numel(); ++i) worst = std::max(worst, std::abs(o.data()[i] - v.data()[i]));
    out.push_back(CheckReport{"k1_identity", worst, 0.0, worst == 0.0});
  }
  return out;
}

}  // namespace dinat
