// Copyright (c) 2026 The dinat-ir authors
// SPDX-License-Identifier: Apache-2.0

#include "dinat/train.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "dinat/checkpoint.hpp"
#include "dinat/metrics.hpp"

namespace dinat {

namespace {

Tensor<float> stack_batch(const std::vector<Tensor<float>>& items) {
  const int64_t B = static_cast<int64_t>(items.size());
  const int64_t C = items[0].dim(0), H = items[0].dim(1), W = items[0].dim(2);
  Tensor<float> out({B, C, H, W});
  float* op = out.data();
  for (int64_t b = 0; b < B; ++b) {
    const Tensor<float>& t = items[static_cast<size_t>(b)];
    if (t.dim(0) != C || t.dim(1) != H || t.dim(2) != W)
      throw DimensionError("stack_batch: inconsistent patch shapes");
    std::copy(t.data(), t.data() + t.numel(), op + b * C * H * W);
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Tensor<float> forward_single(const Model<float>& model, const Tensor<float>& img) {
  Tensor<float> x({1, img.dim(0), img.dim(1), img.dim(2)});
  std::copy(img.data(), img.data() + img.numel(), x.data());
  Tensor<float> y = model.forward(nullptr, x);
  Tensor<float> out({y.dim(1), y.dim(2), y.dim(3)});
  const float* yp = y.data();
  float* op = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) op[i] = std::clamp(yp[i], 0.0f, 1.0f);
  return out;
}

}  // namespace

double evaluate_psnr(const Model<float>& model, const std::vector<ImagePair>& pairs) {
  if (pairs.empty()) throw DataError("evaluate: no pairs");
  double acc = 0.0;
  for (const auto& p : pairs) {
    Tensor<float> restored = forward_single(model, p.degraded);
    acc += psnr(restored, p.clean);
  }
  return acc / static_cast<double>(pairs.size());
}

std::pair<double, double> evaluate_metrics(const Model<float>& model,
                                           const std::vector<ImagePair>& pairs) {
  if (pairs.empty()) throw DataError("evaluate: no pairs");
  double p_acc = 0.0, s_acc = 0.0;
  for (const auto& p : pairs) {
    Tensor<float> restored = forward_single(model, p.degraded);
    p_acc += psnr(restored, p.clean);
    s_acc += ssim(restored, p.clean);
  }
  return {p_acc / static_cast<double>(pairs.size()), s_acc / static_cast<double>(pairs.size())};
}

TrainStats train_loop(Model<float>& model, const TrainConfig& cfg,
                      const std::vector<ImagePair>& pairs) {
  cfg.validate();
  if (pairs.empty()) throw DataError("train: dataset is empty");
  for (const auto& p : pairs) {
    if (p.clean.dim(1) < cfg.patch_size || p.clean.dim(2) < cfg.patch_size)
      throw DataError("train: pair '" + p.id + "' smaller than patch size");
  }

  TrainStats stats;
  stats.losses.reserve(static_cast<size_t>(cfg.iters));

  double base_acc = 0.0;
  for (const auto& p : pairs) base_acc += psnr(p.degraded, p.clean);
  stats.baseline_psnr = base_acc / static_cast<double>(pairs.size());

  std::ofstream log;
  if (!cfg.out_path.empty()) {
    stats.log_path = cfg.out_path + ".csv";
    log.open(stats.log_path);
    if (!log) throw DataError("train: cannot write log " + stats.log_path);
  }
  if (log.is_open()) log << "iter,lr,loss,eval_psnr\n";

  Rng rng(cfg.seed);
  AdamW<float> opt(cfg.betas.first, cfg.betas.second, cfg.weight_decay);
  model.zero_grads();

  double best = -1e300;
  for (int64_t it = 0; it < cfg.iters; ++it) {
    const double lr = cosine_lr(it, cfg.iters, cfg.lr_init, cfg.lr_min);

    std::vector<Tensor<float>> ins, gts;
    ins.reserve(static_cast<size_t>(cfg.batch));
    gts.reserve(static_cast<size_t>(cfg.batch));
    for (int b = 0; b < cfg.batch; ++b) {
      const int64_t pick = rng.uniform_int(0, static_cast<int64_t>(pairs.size()) - 1);
      ImagePair patch = sample_patch(pairs[static_cast<size_t>(pick)], cfg.patch_size, rng);
      patch = augment(patch, rng);
      ins.push_back(patch.degraded);
      gts.push_back(patch.clean);
    }
    Tensor<float> x = stack_batch(ins);
    Tensor<float> gt = stack_batch(gts);

    Tape<float> tape;
    Tensor<float> pred = model.forward(&tape, x);
    Tensor<float> loss = cfg.loss == TrainConfig::Loss::psnr ? psnr_loss(&tape, pred, gt)
                                                             : l1_loss(&tape, pred, gt);
    const double lval = static_cast<double>(loss.data()[0]);
    if (!std::isfinite(lval)) {
      std::cerr << "[abort] non-finite loss at iteration " << (it + 1) << " (lr=" << lr << ", batch ids:";
      for (const auto& t : ins) std::cerr << " " << t.numel();
      std::cerr << ")\n";
      throw NumericError("train: non-finite loss at iteration " + std::to_string(it + 1));
    }
    stats.losses.push_back(lval);

    tape.backward(loss);
    opt.step(model.params, lr);
    model.zero_grads();

    std::string eval_field;
    const bool eval_now = ((it + 1) % cfg.eval_every == 0) || (it + 1 == cfg.iters);
    if (eval_now) {
      const double ep = evaluate_psnr(model, pairs);
      stats.final_eval_psnr = ep;
      eval_field = format_double(ep);
      if (ep > best) {
        best = ep;
        if (!cfg.out_path.empty())
          save_checkpoint(model, cfg.out_path + ".best", static_cast<uint64_t>(it + 1), cfg.seed);
      }
    }
    if (log.is_open())
      log << (it + 1) << "," << format_double(lr) << "," << format_double(lval) << "," << eval_field
          << "\n";
  }
  stats.best_eval_psnr = best;
  if (!cfg.out_path.empty()) {
    save_checkpoint(model, cfg.out_path, static_cast<uint64_t>(cfg.iters), cfg.seed);
    stats.checkpoint_path = cfg.out_path;
  }
  return stats;
}

}  // namespace dinat
