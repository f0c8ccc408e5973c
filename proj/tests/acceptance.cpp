// Copyright (c) 2026 The dinat-ir authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one pass/fail line per criterion, nonzero exit if any
// fails. Runs single-threaded for bit-reproducibility.

#include <algorithm>
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <vector>

#include "dinat/cam.hpp"
#include "dinat/checkpoint.hpp"
#include "dinat/metrics.hpp"
#include "dinat/png_io.hpp"
#include "dinat/train.hpp"
#include "dinat/verify.hpp"

using namespace dinat;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

void report(int criterion, const std::string& name, bool pass, const std::string& details,
            double seconds) {
  std::printf("criterion %2d [%s] %-24s %s (%.1fs)\n", criterion, pass ? "PASS" : "FAIL", name.c_str(),
              details.c_str(), seconds);
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

void run_criterion(int criterion, const std::string& name,
                   const std::function<std::pair<bool, std::string>()>& body,
                   double budget_s = 0.0) {
  const double t0 = now_s();
  bool pass = false;
  std::string details;
  try {
    auto [p, d] = body();
    pass = p;
    details = d;
  } catch (const std::exception& e) {
    details = std::string("exception: ") + e.what();
  }
  const double elapsed = now_s() - t0;
  if (pass && budget_s > 0.0 && elapsed > budget_s) {
    pass = false;
    details += " [exceeded " + std::to_string(static_cast<int>(budget_s)) + "s budget]";
  }
  report(criterion, name, pass, details, elapsed);
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof(buf), f, args);
  va_end(args);
  return buf;
}

std::vector<ImagePair> overfit_pairs(uint64_t seed) {
  std::vector<ImagePair> pairs;
  DegradationSpec spec;
  spec.blur = DegradationSpec::Blur::gaussian;
  spec.sigma = 1.0;
  spec.noise_sigma = 0.03;
  for (int i = 0; i < 4; ++i) {
    Rng rng(seed * 1000 + static_cast<uint64_t>(i));
    spec.seed = seed * 77 + static_cast<uint64_t>(i);
    pairs.push_back(synth_degrade(procedural_image(64, rng), spec, "ov" + std::to_string(i)));
  }
  return pairs;
}

TrainConfig overfit_config(uint64_t seed, int64_t iters) {
  TrainConfig tc;
  tc.iters = iters;
  tc.batch = 2;
  tc.patch_size = 64;
  tc.lr_init = 2e-3;
  tc.lr_min = 1e-6;
  tc.loss = TrainConfig::Loss::psnr;
  tc.seed = seed;
  tc.eval_every = 100;
  return tc;
}

// ----- criterion 1: dina_attend equals dense_oracle over the stated grid

std::pair<bool, std::string> c1_oracle_grid() {
  double worst = 0.0;
  int cases = 0;
  for (int H : {4, 6, 8})
    for (int W : {4, 6, 8})
      for (int k : {1, 3})
        for (int dil : {1, 2})
          for (uint64_t seed = 0; seed < 10; ++seed) {
            Rng rng(seed * 7919 + static_cast<uint64_t>(H * 1000 + W * 100 + k * 10 + dil));
            AttentionConfig cfg{k, dil, 2, 8, true};
            Tensor<double> q({1, 2, H, W, 4}), kt({1, 2, H, W, 4}), v({1, 2, H, W, 4});
            Tensor<double> b({2, 2 * k - 1, 2 * k - 1});
            fill_uniform(q, rng, -1, 1);
            fill_uniform(kt, rng, -1, 1);
            fill_uniform(v, rng, -1, 1);
            fill_uniform(b, rng, -1, 1);
            Tensor<double> fused = dina_attend<double>(nullptr, q, kt, v, b, cfg);
            Tensor<double> dense = dense_oracle<double>(q, kt, v, b, cfg);
            for (int64_t i = 0; i < fused.numel(); ++i)
              worst = std::max(worst, std::abs(fused.data()[i] - dense.data()[i]));
            ++cases;
          }
  return {worst < 1e-10, fmt("%d cases, max |dina-dense| = %.2e (tol 1e-10)", cases, worst)};
}

// ----- criterion 2: dilation 1 equals plain neighborhood attention exactly

std::pair<bool, std::string> c2_dilation_reduction() {
  Rng rng(2);
  Tensor<float> x({2, 8, 16, 16});
  fill_uniform(x, rng, -1, 1);
  Rng prng(22);
  AttentionParams<float> p = make_attention_params<float>(8, 2, 3, prng);
  AttentionConfig na{3, 1, 2, 8, true};
  AttentionConfig dina1{3, 1, 2, 8, true};
  Tensor<float> a = attn_layer<float>(nullptr, x, p, na);
  Tensor<float> d = attn_layer<float>(nullptr, x, p, dina1);
  const bool same =
      std::memcmp(a.data(), d.data(), sizeof(float) * static_cast<size_t>(a.numel())) == 0;
  return {same, same ? "NA and dilation-1 DiNA outputs are byte-identical" : "outputs differ"};
}

// ----- criterion 3: k = H = W with zero bias is dense softmax attention

std::pair<bool, std::string> c3_full_window() {
  double worst = 0.0;
  for (int k : {3, 5, 7}) {
    const int H = k, W = k, d = 4;
    Rng rng(static_cast<uint64_t>(k));
    AttentionConfig cfg{k, 1, 1, d, true};
    Tensor<double> q({1, 1, H, W, d}), kt({1, 1, H, W, d}), v({1, 1, H, W, d});
    Tensor<double> zb({1, 2 * k - 1, 2 * k - 1});
    fill_uniform(q, rng, -1, 1);
    fill_uniform(kt, rng, -1, 1);
    fill_uniform(v, rng, -1, 1);
    Tensor<double> got = dina_attend<double>(nullptr, q, kt, v, zb, cfg);

    const int64_t N = H * W;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<double> s(static_cast<size_t>(N));
    for (int64_t p = 0; p < N; ++p) {
      for (int64_t n = 0; n < N; ++n) {
        double dot = 0;
        for (int j = 0; j < d; ++j) dot += q.data()[p * d + j] * kt.data()[n * d + j];
        s[static_cast<size_t>(n)] = dot * scale;
      }
      const double mx = *std::max_element(s.begin(), s.end());
      double sum = 0;
      for (auto& e : s) {
        e = std::exp(e - mx);
        sum += e;
      }
      for (int j = 0; j < d; ++j) {
        double acc = 0;
        for (int64_t n = 0; n < N; ++n) acc += s[static_cast<size_t>(n)] / sum * v.data()[n * d + j];
        worst = std::max(worst, std::abs(acc - got.data()[p * d + j]));
      }
    }
  }
  return {worst < 1e-10, fmt("max |windowed-dense| = %.2e over k=H=W in {3,5,7} (tol 1e-10)", worst)};
}

// ----- criterion 4: gradient suite over 20 seeds

std::pair<bool, std::string> c4_gradients() {
  double worst_err = 0.0;
  std::string worst_name;
  int checks = 0;
  auto absorb = [&](const std::vector<CheckReport>& reports) {
    for (const auto& r : reports) {
      ++checks;
      if (!r.pass && r.max_err > worst_err) {
        worst_err = r.max_err;
        worst_name = r.name;
      }
    }
  };
  bool all = true;
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    for (const auto& suite :
         {grad_suite_ops(seed), grad_suite_attention(seed), grad_suite_block(seed)}) {
      absorb(suite);
      all = all && all_pass(suite);
    }
    const auto ms = grad_suite_model(seed);
    absorb(ms);
    all = all && all_pass(ms);
  }
  if (!all) return {false, fmt("%d checks; worst failure %s (err %.2e)", checks, worst_name.c_str(), worst_err)};
  return {true, fmt("%d finite-difference checks passed across 20 seeds", checks)};
}

// ----- criterion 5: CAM contracts

std::pair<bool, std::string> c5_cam_contracts() {
  Rng rng(5);
  CamParams<float> p = make_cam_params<float>(rng, 0.3);

  Tensor<float> zero({2, 6, 8, 8});
  Tensor<float> gz = cam<float>(nullptr, zero, p);
  for (int64_t i = 0; i < gz.numel(); ++i)
    if (gz.data()[i] != 0.5f) return {false, "all-zero input did not gate at exactly 0.5"};

  Tensor<float> x({1, 6, 8, 8});
  fill_uniform(x, rng, -10, 10);
  Tensor<float> g = cam<float>(nullptr, x, p);
  for (int64_t i = 0; i < g.numel(); ++i)
    if (!(g.data()[i] > 0.0f && g.data()[i] < 1.0f) || !std::isfinite(g.data()[i]))
      return {false, "gate left the open interval (0,1)"};

  // spatial permutation invariance, 10 permutations
  Tensor<float> base_in({1, 4, 6, 6});
  fill_uniform(base_in, rng, -1, 1);
  Tensor<float> base = cam<float>(nullptr, base_in, p);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<int> perm(36);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = 35; i > 0; --i) std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(rng.uniform_int(0, i))]);
    Tensor<float> shuf(base_in.shape());
    for (int64_t c = 0; c < 4; ++c)
      for (int i = 0; i < 36; ++i)
        shuf.data()[c * 36 + i] = base_in.data()[c * 36 + perm[static_cast<size_t>(i)]];
    Tensor<float> gp = cam<float>(nullptr, shuf, p);
    for (int64_t i = 0; i < gp.numel(); ++i)
      if (std::abs(gp.data()[i] - base.data()[i]) > 1e-6f)
        return {false, fmt("permutation %d moved the gate by more than 1e-6", trial)};
  }
  return {true, "range, zero-input 0.5 and permutation invariance all hold"};
}

// ----- criterion 6: parameter counts

std::pair<bool, std::string> c6_param_counts() {
  const int64_t abl = param_count(ablation_config());
  const double abl_m = abl / 1e6;
  const double abl_dev = (abl_m - 3.0) / 3.0 * 100.0;
  const int64_t full = param_count(reference_config());
  const double full_m = full / 1e6;
  const double full_dev = (full_m - 25.90) / 25.90 * 100.0;
  const bool pass = std::abs(abl_dev) < 15.0 && std::abs(full_dev) < 15.0;
  return {pass, fmt("ablation %" PRId64 " (%.2fM, %+.1f%% of 3.0M); full %" PRId64
                    " (%.2fM, %+.1f%% of 25.90M)",
                    abl, abl_m, abl_dev, full, full_m, full_dev)};
}

// ----- criterion 7: overfit smoke across 5 seeds

std::pair<bool, std::string> c7_overfit() {
  int wins = 0;
  std::string detail;
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    auto pairs = overfit_pairs(seed);
    TrainConfig tc = overfit_config(seed, 500);
    Model<float> model = build_model<float>(micro_config(8, 3), seed);
    TrainStats st = train_loop(model, tc, pairs);
    const double gain = st.final_eval_psnr - st.baseline_psnr;
    detail += fmt("%s%.2f", seed > 1 ? "/" : "", gain);
    if (gain >= 5.0) ++wins;
  }
  return {wins >= 4, fmt("PSNR gains dB [%s], %d/5 seeds >= 5 dB (need 4)", detail.c_str(), wins)};
}

// ----- criterion 8: the six ablation variants

std::pair<bool, std::string> c8_ablation() {
  struct Variant {
    const char* name;
    AttentionMode mode;
    bool cam;
  };
  const Variant variants[] = {
      {"NA w/o CAM", AttentionMode::na_only, false},
      {"NA w/ CAM", AttentionMode::na_only, true},
      {"DiNA w/o CAM", AttentionMode::dina_only, false},
      {"DiNA w/ CAM", AttentionMode::dina_only, true},
      {"NA-DiNA w/o CAM", AttentionMode::alternating, false},
      {"NA-DiNA w/ CAM", AttentionMode::alternating, true},
  };

  // every variant builds, forwards and passes a quick end-to-end grad check;
  // two blocks per stage so the alternating schedule actually alternates
  Rng rng(8);
  Tensor<float> x({1, 3, 16, 16});
  fill_uniform(x, rng, 0, 1);
  for (const auto& vr : variants) {
    ModelConfig cfg = micro_config(4, 3);
    for (auto& st : cfg.stages) st.blocks = 2;
    cfg.attention_mode = vr.mode;
    cfg.cam_enabled = vr.cam;
    Model<double> m = build_model<double>(cfg, 2);
    Rng grng(3);
    Tensor<double> xi({1, 3, 16, 16});
    fill_uniform(xi, grng, 0, 1);
    Tensor<double> probe({1, 3, 16, 16});
    fill_uniform(probe, grng, -1, 1);
    std::vector<Tensor<double>> inputs{xi};
    for (auto& pp : m.params) inputs.push_back(pp.value);
    auto f = [&m, probe](Tape<double>* t, std::vector<Tensor<double>>& in) {
      return sum_all(t, ew(t, m.forward(t, in[0]), probe, EwKind::mul));
    };
    GradCheckReport rep = grad_check(f, inputs, 1e-3, &grng, 2);
    if (!rep.pass) return {false, fmt("%s failed grad check (%.2e)", vr.name, rep.max_rel_err)};

    Model<float> mf = build_model<float>(cfg, 2);
    Tensor<float> y = mf.forward(nullptr, x);
    for (int64_t i = 0; i < y.numel(); ++i)
      if (!std::isfinite(y.data()[i])) return {false, fmt("%s produced non-finite output", vr.name)};
  }

  // short smoke training per variant; trend table only, no ordering asserts
  auto pairs = overfit_pairs(31);
  std::printf("\n  variant            PSNR(dB)   SSIM     Params(M)\n");
  for (const auto& vr : variants) {
    ModelConfig cfg = micro_config(8, 3);
    for (auto& st : cfg.stages) st.blocks = 2;
    cfg.attention_mode = vr.mode;
    cfg.cam_enabled = vr.cam;
    Model<float> m = build_model<float>(cfg, 31);
    TrainConfig tc = overfit_config(31, 120);
    tc.eval_every = 120;
    train_loop(m, tc, pairs);
    const auto [p, s] = evaluate_metrics(m, pairs);
    std::printf("  %-18s %8.2f   %.4f   %.3f\n", vr.name, p, s, param_count(cfg) / 1e6);
  }
  std::printf("  (baseline degraded-vs-clean PSNR: %.2f dB; trend reporting only)\n\n",
              [&] {
                double acc = 0;
                for (const auto& p : pairs) acc += psnr(p.degraded, p.clean);
                return acc / 4.0;
              }());
  return {true, "six variants build, forward, grad-check; comparison table emitted"};
}

// ----- criterion 9: determinism and persistence

std::pair<bool, std::string> c9_determinism() {
  const fs::path dir = fs::temp_directory_path() / "dinat_acceptance_det";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto pairs = overfit_pairs(9);

  auto run_once = [&](const std::string& tag) {
    TrainConfig tc = overfit_config(7, 40);
    tc.eval_every = 20;
    tc.out_path = (dir / (tag + ".ckpt")).string();
    Model<float> m = build_model<float>(micro_config(8, 3), tc.seed);
    train_loop(m, tc, pairs);
    std::ifstream in(tc.out_path + ".csv", std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), {});
  };
  const std::string log1 = run_once("a");
  const std::string log2 = run_once("b");
  if (log1.empty() || log1 != log2) {
    fs::remove_all(dir);
    return {false, "training logs differ between identical seeds"};
  }

  Model<float> m = load_checkpoint((dir / "a.ckpt").string());
  Rng rng(1);
  Tensor<float> x({1, 3, 64, 64});
  fill_uniform(x, rng, 0, 1);
  Tensor<float> y1 = m.forward(nullptr, x);
  save_checkpoint(m, (dir / "rt.ckpt").string());
  Model<float> r = load_checkpoint((dir / "rt.ckpt").string());
  Tensor<float> y2 = r.forward(nullptr, x);
  const bool same =
      std::memcmp(y1.data(), y2.data(), sizeof(float) * static_cast<size_t>(y1.numel())) == 0;
  fs::remove_all(dir);
  if (!same) return {false, "forward output changed across a checkpoint round trip"};
  return {true, "identical logs for identical seeds; round-trip forward is bit-exact"};
}

// ----- criterion 10: metric sanity

std::pair<bool, std::string> c10_metrics() {
  Rng rng(10);
  Tensor<double> a({3, 16, 16});
  fill_uniform(a, rng, 0.0, 0.9);
  Tensor<double> b(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) b.data()[i] = a.data()[i] + 0.1;
  const double p = psnr(a, b);
  if (std::abs(p - 20.0) > 1e-6) return {false, fmt("psnr(a, a+0.1) = %.9f, want 20 +- 1e-6", p)};

  const double s = ssim(a, a.clone());
  if (s != 1.0) return {false, fmt("ssim(a,a) = %.17g, want exactly 1.0", s)};

  const fs::path dir = fs::temp_directory_path() / "dinat_acceptance_png";
  fs::remove_all(dir);
  fs::create_directories(dir);
  Tensor<float> img({3, 24, 24});
  int v = 0;
  for (int64_t i = 0; i < img.numel(); ++i) {
    img.data()[i] = static_cast<float>(v % 256) / 255.0f;
    v += 11;
  }
  save_image(img, (dir / "x.png").string());
  Tensor<float> back = load_image((dir / "x.png").string());
  const bool bits = img.shape() == back.shape() &&
                    std::memcmp(img.data(), back.data(),
                                sizeof(float) * static_cast<size_t>(img.numel())) == 0;
  fs::remove_all(dir);
  if (!bits) return {false, "png round trip was not bit-exact"};
  return {true, fmt("psnr=%.9f dB, ssim(a,a)=1.0 exact, png round trip bit-exact", p)};
}

}  // namespace

int main() {
  set_num_threads(1);
  std::printf("acceptance suite (single-threaded)\n");
  const double t0 = now_s();

  run_criterion(1, "oracle-equivalence", c1_oracle_grid, 30.0);
  run_criterion(2, "dilation-reduction", c2_dilation_reduction);
  run_criterion(3, "full-window-reduction", c3_full_window);
  run_criterion(4, "gradient-suite", c4_gradients, 300.0);
  run_criterion(5, "casa-cam-contracts", c5_cam_contracts);
  run_criterion(6, "parameter-counts", c6_param_counts);
  run_criterion(7, "overfit-smoke", c7_overfit, 900.0);
  run_criterion(8, "ablation-apparatus", c8_ablation);
  run_criterion(9, "determinism-persistence", c9_determinism);
  run_criterion(10, "metric-checks", c10_metrics);

  std::printf("total: %.1fs, %d failure(s)\n", now_s() - t0, g_failures);
  return g_failures == 0 ? 0 : 1;
}
