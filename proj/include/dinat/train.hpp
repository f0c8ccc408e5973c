// Copyright (c) 2026 The dinat-ir authors
// SPDX-License-Identifier: Apache-2.0
//
// Losses, AdamW with decoupled weight decay, cosine learning-rate schedule
// and the training loop. Training is bit-deterministic for a fixed seed at
// thread count 1.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dinat/data.hpp"
#include "dinat/model.hpp"

namespace dinat {

struct TrainConfig {
  int64_t iters = 500;
  int batch = 2;
  int patch_size = 64;
  double lr_init = 3e-4;
  double lr_min = 1e-6;
  std::pair<double, double> betas{0.9, 0.999};
  double weight_decay = 0.0;
  enum class Loss { psnr, l1 };
  Loss loss = Loss::psnr;
  uint64_t seed = 0;
  int64_t eval_every = 100;
  std::string data_dir;
  std::string out_path;

  void validate() const {
    if (iters < 1) throw ConfigError("train: iters must be >= 1");
    if (batch < 1) throw ConfigError("train: batch must be >= 1");
    if (patch_size < 8 || patch_size % 8 != 0)
      throw ConfigError("train: patch_size must be a positive multiple of 8");
    if (lr_min > lr_init) throw ConfigError("train: lr_min must be <= lr_init");
    if (eval_every < 1) throw ConfigError("train: eval_every must be >= 1");
  }
};

inline double cosine_lr(int64_t step, int64_t total_steps, double lr_init, double lr_min) {
  if (total_steps < 1) throw ContractError("cosine_lr: total_steps must be >= 1");
  if (step < 0) step = 0;
  if (step > total_steps) step = total_steps;
  const double c = std::cos(3.14159265358979323846 * static_cast<double>(step) /
                            static_cast<double>(total_steps));
  return lr_min + 0.5 * (lr_init - lr_min) * (1.0 + c);
}

// Monotone negative of PSNR: L = (1/B) * sum_b 10*log10(MSE_b + eps) with
// eps = 1e-8. Decreasing in reconstruction quality, differentiable via eps.
template <typename T>
Tensor<T> psnr_loss(Tape<T>* tape, const Tensor<T>& pred, const Tensor<T>& gt) {
  if (!pred.same_shape(gt)) throw DimensionError("psnr_loss: shape mismatch");
  if (pred.rank() != 4) throw DimensionError("psnr_loss: expected (B,C,H,W)");
  const int64_t B = pred.dim(0);
  const int64_t per = pred.numel() / B;
  const double eps = 1e-8;
  const double inv_ln10 = 0.43429448190325182765112891891661;  // 1/ln(10)

  const bool tracked = detail::track(tape, {&pred, &gt});
  Tensor<T> out = detail::make_output<T>({1}, tracked);
  const T* pp = pred.data();
  const T* gp = gt.data();
  std::vector<double> mse(static_cast<size_t>(B), 0.0);
  double loss = 0.0;
  for (int64_t b = 0; b < B; ++b) {
    double acc = 0.0;
    for (int64_t i = 0; i < per; ++i) {
      const double d = static_cast<double>(pp[b * per + i]) - static_cast<double>(gp[b * per + i]);
      acc += d * d;
    }
    mse[static_cast<size_t>(b)] = acc / static_cast<double>(per);
    loss += 10.0 * std::log10(mse[static_cast<size_t>(b)] + eps);
  }
  out.data()[0] = static_cast<T>(loss / static_cast<double>(B));
  if (tracked) {
    Tensor<T> pc = pred, gc = gt, oc = out;
    tape->record(out, [pc, gc, oc, mse, per, eps, inv_ln10]() mutable {
      const int64_t B = pc.dim(0);
      const T g = oc.grad()[0];
      const T* pp = pc.data();
      const T* gp = gc.data();
      T* pg = pc.requires_grad() ? pc.grad() : nullptr;
      T* gg = gc.requires_grad() ? gc.grad() : nullptr;
      for (int64_t b = 0; b < B; ++b) {
        const double coef = static_cast<double>(g) * 10.0 * inv_ln10 /
                            ((mse[static_cast<size_t>(b)] + eps) * static_cast<double>(per) *
                             static_cast<double>(B)) * 2.0;
        for (int64_t i = 0; i < per; ++i) {
          const double d = static_cast<double>(pp[b * per + i]) - static_cast<double>(gp[b * per + i]);
          if (pg) pg[b * per + i] += static_cast<T>(coef * d);
          if (gg) gg[b * per + i] -= static_cast<T>(coef * d);
        }
      }
    });
  }
  return out;
}

// Mean absolute error; subgradient 0 at exact ties.
template <typename T>
Tensor<T> l1_loss(Tape<T>* tape, const Tensor<T>& pred, const Tensor<T>& gt) {
  if (!pred.same_shape(gt)) throw DimensionError("l1_loss: shape mismatch");
  const int64_t n = pred.numel();
  const bool tracked = detail::track(tape, {&pred, &gt});
  Tensor<T> out = detail::make_output<T>({1}, tracked);
  const T* pp = pred.data();
  const T* gp = gt.data();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += std::abs(static_cast<double>(pp[i]) - static_cast<double>(gp[i]));
  out.data()[0] = static_cast<T>(acc / static_cast<double>(n));
  if (tracked) {
    Tensor<T> pc = pred, gc = gt, oc = out;
    tape->record(out, [pc, gc, oc]() mutable {
      const int64_t n = pc.numel();
      const T g = oc.grad()[0] / static_cast<T>(n);
      const T* pp = pc.data();
      const T* gp = gc.data();
      T* pg = pc.requires_grad() ? pc.grad() : nullptr;
      T* gg = gc.requires_grad() ? gc.grad() : nullptr;
      for (int64_t i = 0; i < n; ++i) {
        const T d = pp[i] - gp[i];
        const T s = d > T(0) ? g : (d < T(0) ? -g : T(0));
        if (pg) pg[i] += s;
        if (gg) gg[i] -= s;
      }
    });
  }
  return out;
}

// AdamW: decoupled weight decay applied to the weights directly, bias-
// corrected first/second moments, deterministic given inputs.
template <typename T>
class AdamW {
 public:
  AdamW(double beta1 = 0.9, double beta2 = 0.999, double weight_decay = 0.0, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), weight_decay_(weight_decay), eps_(eps) {}

  int64_t step_count() const { return step_; }

  void step(std::vector<Parameter<T>>& params, double lr) {
    if (m_.empty()) {
      m_.resize(params.size());
      v_.resize(params.size());
      for (size_t i = 0; i < params.size(); ++i) {
        m_[i].assign(static_cast<size_t>(params[i].value.numel()), T(0));
        v_[i].assign(static_cast<size_t>(params[i].value.numel()), T(0));
      }
    }
    if (m_.size() != params.size()) throw ContractError("adamw: parameter set changed");
    ++step_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor<T>& t = params[i].value;
      if (t.numel() != static_cast<int64_t>(m_[i].size()))
        throw ContractError("adamw: moment shape mismatch for " + params[i].name);
      const T* g = t.grad();
      if (!g) throw ContractError("adamw: parameter without gradient: " + params[i].name);
      T* w = t.data();
      T* m = m_[i].data();
      T* v = v_[i].data();
      const int64_t n = t.numel();
      for (int64_t j = 0; j < n; ++j) {
        const double gj = static_cast<double>(g[j]);
        const double mj = beta1_ * static_cast<double>(m[j]) + (1.0 - beta1_) * gj;
        const double vj = beta2_ * static_cast<double>(v[j]) + (1.0 - beta2_) * gj * gj;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        const double mhat = mj / bc1;
        const double vhat = vj / bc2;
        const double wj = static_cast<double>(w[j]);
        w[j] = static_cast<T>(wj - lr * weight_decay_ * wj - lr * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

 private:
  double beta1_, beta2_, weight_decay_, eps_;
  int64_t step_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

struct TrainStats {
  double baseline_psnr = 0.0;    // degraded vs clean on the eval pairs
  double final_eval_psnr = 0.0;
  double best_eval_psnr = 0.0;
  std::vector<double> losses;    // one entry per iteration
  std::string log_path;
  std::string checkpoint_path;
};

// Runs the training recipe: random aligned patches with paired augmentation,
// forward, loss, backward, AdamW step with the cosine schedule, zeroed grads
// after each step. Writes a CSV log (iter,lr,loss,eval_psnr) next to the
// checkpoint when cfg.out_path is set; saves the best-by-eval-PSNR model to
// <out>.best and the final model to <out>. Throws NumericError on NaN loss.
TrainStats train_loop(Model<float>& model, const TrainConfig& cfg,
                      const std::vector<ImagePair>& pairs);

// Mean PSNR of the model's clamped output against clean over the pairs.
double evaluate_psnr(const Model<float>& model, const std::vector<ImagePair>& pairs);

// Mean (PSNR, SSIM) of the model output over the pairs.
std::pair<double, double> evaluate_metrics(const Model<float>& model,
                                           const std::vector<ImagePair>& pairs);

}  // namespace dinat
