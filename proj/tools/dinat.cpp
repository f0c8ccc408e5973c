// Copyright (c) 2026 The dinat-ir authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line entry point: dataset generation, training, evaluation,
// inference, gradient/oracle verification, parameter counting and kernel
// micro-benchmarks. Exit codes: 0 success, 2 usage, 3 data/format,
// 4 numerical failure.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "dinat/checkpoint.hpp"
#include "dinat/metrics.hpp"
#include "dinat/png_io.hpp"
#include "dinat/train.hpp"
#include "dinat/verify.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace dinat;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct ConfigFile {
  ModelConfig model;
  TrainConfig train;
  bool has_model = false;
};

// Config files hold {"model": {...}, "train": {...}}; either section may be
// omitted. CLI flags override file values.
ConfigFile load_config_file(const std::string& path) {
  ConfigFile out;
  if (path.empty()) return out;
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  if (j.contains("model")) {
    out.model = model_config_from_json(j.at("model").dump());
    out.has_model = true;
  }
  if (j.contains("train")) out.train = train_config_from_json(j.at("train").dump());
  return out;
}

void echo_resolved(const std::string& what, const std::string& text) {
  std::cerr << "resolved " << what << " config:\n" << text << "\n";
}

int cmd_gen_data(const std::string& out_dir, int count, int size, const std::string& blur,
                 double noise, uint64_t seed) {
  DegradationSpec spec;
  spec.noise_sigma = noise;
  if (blur.rfind("gaussian:", 0) == 0) {
    spec.blur = DegradationSpec::Blur::gaussian;
    spec.sigma = std::stod(blur.substr(9));
  } else if (blur.rfind("motion:", 0) == 0) {
    spec.blur = DegradationSpec::Blur::motion;
    const std::string rest = blur.substr(7);
    const auto comma = rest.find(',');
    if (comma == std::string::npos) throw ConfigError("motion blur needs LENGTH,ANGLE");
    spec.length = std::stod(rest.substr(0, comma));
    spec.angle_deg = std::stod(rest.substr(comma + 1));
  } else {
    throw ConfigError("blur must be gaussian:SIGMA or motion:LENGTH,ANGLE, got '" + blur + "'");
  }
  std::cerr << "gen-data: out=" << out_dir << " count=" << count << " size=" << size << " blur=" << blur
            << " noise=" << noise << " seed=" << seed << "\n";
  generate_dataset(out_dir, count, size, spec, seed);
  std::cout << "wrote " << count << " pairs to " << out_dir << "\n";
  return kExitOk;
}

int cmd_train(const std::string& data_dir, const std::string& config_path, const std::string& out,
              int64_t iters, int batch, int patch, int64_t seed, double lr, const std::string& loss) {
  ConfigFile cf = load_config_file(config_path);
  ModelConfig mc = cf.has_model ? cf.model : micro_config();
  TrainConfig tc = cf.train;
  if (!data_dir.empty()) tc.data_dir = data_dir;
  if (!out.empty()) tc.out_path = out;
  if (iters > 0) tc.iters = iters;
  if (batch > 0) tc.batch = batch;
  if (patch > 0) tc.patch_size = patch;
  if (seed >= 0) tc.seed = static_cast<uint64_t>(seed);
  if (lr > 0) tc.lr_init = lr;
  if (loss == "psnr")
    tc.loss = TrainConfig::Loss::psnr;
  else if (loss == "l1")
    tc.loss = TrainConfig::Loss::l1;
  else if (!loss.empty())
    throw ConfigError("loss must be 'psnr' or 'l1'");
  if (tc.data_dir.empty()) throw ConfigError("train: --data is required");
  if (tc.out_path.empty()) throw ConfigError("train: --out is required");
  tc.validate();
  echo_resolved("model", model_config_to_json(mc));
  echo_resolved("train", train_config_to_json(tc));

  std::vector<ImagePair> pairs = load_manifest(tc.data_dir);
  Model<float> model = build_model<float>(mc, tc.seed);
  TrainStats stats = train_loop(model, tc, pairs);
  std::cout << "baseline_psnr=" << stats.baseline_psnr << " final_eval_psnr=" << stats.final_eval_psnr
            << " best_eval_psnr=" << stats.best_eval_psnr << "\n"
            << "checkpoint: " << stats.checkpoint_path << "\nlog: " << stats.log_path << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, bool as_json) {
  std::cerr << "eval: ckpt=" << ckpt << " data=" << data_dir << (as_json ? " json=true" : "") << "\n";
  Model<float> model = load_checkpoint(ckpt);
  echo_resolved("model", model_config_to_json(model.cfg));
  std::vector<ImagePair> pairs = load_manifest(data_dir);
  const auto [p, s] = evaluate_metrics(model, pairs);
  if (as_json) {
    json j{{"psnr", p}, {"ssim", s}, {"n", pairs.size()}};
    std::cout << j.dump() << "\n";
  } else {
    std::cout << "pairs: " << pairs.size() << "\n";
    std::printf("PSNR: %.4f dB\nSSIM: %.6f\n", p, s);
  }
  return kExitOk;
}

int cmd_infer(const std::string& ckpt, const std::string& input, const std::string& output) {
  std::cerr << "infer: ckpt=" << ckpt << " input=" << input << " output=" << output << "\n";
  Model<float> model = load_checkpoint(ckpt);
  Tensor<float> img = load_image(input);
  const int64_t H = img.dim(1), W = img.dim(2);
  const int64_t Hp = (H + 7) / 8 * 8, Wp = (W + 7) / 8 * 8;

  // reflect-pad to a multiple of 8
  Tensor<float> x({1, 3, Hp, Wp});
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < Hp; ++y)
      for (int64_t xx = 0; xx < Wp; ++xx) {
        const int sy = reflect_index(static_cast<int>(y), static_cast<int>(H));
        const int sx = reflect_index(static_cast<int>(xx), static_cast<int>(W));
        x.at(0, c, y, xx) = img.at(c, sy, sx);
      }
  Tensor<float> y = model.forward(nullptr, x);
  Tensor<float> out({3, H, W});
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t yy = 0; yy < H; ++yy)
      for (int64_t xx = 0; xx < W; ++xx) out.at(c, yy, xx) = y.at(0, c, yy, xx);
  save_image(out, output);
  std::cout << "wrote " << output << "\n";
  return kExitOk;
}

void print_reports(const std::vector<CheckReport>& reports) {
  for (const auto& r : reports)
    std::printf("%-28s max_err=%.3e tol=%.1e %s\n", r.name.c_str(), r.max_err, r.tol,
                r.pass ? "PASS" : "FAIL");
}

int cmd_grad_check(const std::string& target, uint64_t seed) {
  std::cerr << "grad-check: target=" << target << " seed=" << seed << "\n";
  std::vector<CheckReport> reports;
  if (target == "ops")
    reports = grad_suite_ops(seed);
  else if (target == "attention")
    reports = grad_suite_attention(seed);
  else if (target == "block")
    reports = grad_suite_block(seed);
  else if (target == "model")
    reports = grad_suite_model(seed);
  else
    throw ConfigError("grad-check target must be ops|attention|block|model");
  print_reports(reports);
  return all_pass(reports) ? kExitOk : kExitNumeric;
}

int cmd_oracle_check(uint64_t seed) {
  std::cerr << "oracle-check: seed=" << seed << "\n";
  const auto reports = oracle_suite(seed);
  print_reports(reports);
  return all_pass(reports) ? kExitOk : kExitNumeric;
}

int cmd_param_count(const std::string& config_path, double reference_m) {
  ConfigFile cf = load_config_file(config_path);
  ModelConfig mc = cf.has_model ? cf.model : reference_config();
  echo_resolved("model", model_config_to_json(mc));
  const int64_t n = param_count(mc);
  std::printf("parameters: %lld (%.2fM)\n", static_cast<long long>(n), n / 1e6);
  if (reference_m > 0) {
    const double dev = (n / 1e6 - reference_m) / reference_m * 100.0;
    std::printf("reference: %.2fM deviation: %+.2f%%\n", reference_m, dev);
  }
  return kExitOk;
}

int cmd_bench(const std::string& op, const std::string& size, int k, int dilation, int iters) {
  const auto xpos = size.find('x');
  if (xpos == std::string::npos) throw ConfigError("--size must be HxW");
  const int H = std::stoi(size.substr(0, xpos));
  const int W = std::stoi(size.substr(xpos + 1));
  const int heads = 2, d = 16;
  std::cerr << "bench: op=" << op << " size=" << size << " k=" << k << " dilation=" << dilation
            << " iters=" << iters << "\n";
  Rng rng(0);
  Tensor<float> q({1, heads, H, W, d});
  Tensor<float> kt({1, heads, H, W, d});
  Tensor<float> v({1, heads, H, W, d});
  Tensor<float> b({heads, 2 * k - 1, 2 * k - 1});
  fill_uniform(q, rng, -1, 1);
  fill_uniform(kt, rng, -1, 1);
  fill_uniform(v, rng, -1, 1);
  fill_uniform(b, rng, -0.1, 0.1);
  AttentionConfig cfg{k, op == "na" ? 1 : dilation, heads, heads * d, true};

  auto call = [&]() {
    if (op == "dense")
      return dense_oracle<float>(q, kt, v, b, cfg);
    return dina_attend<float>(nullptr, q, kt, v, b, cfg);
  };
  if (op != "na" && op != "dina" && op != "dense")
    throw ConfigError("bench op must be na|dina|dense");

  for (int i = 0; i < 10; ++i) call();  // fixed warmup
  std::vector<double> times;
  for (int i = 0; i < iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    call();
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  double mean = 0;
  for (double t : times) mean += t;
  mean /= times.size();
  const double median = times[times.size() / 2];
  const double bytes = 4.0 * static_cast<double>(q.numel()) * 4.0;  // q,k,v,out
  std::printf("%s %dx%d k=%d dilation=%d iters=%d\n", op.c_str(), H, W, k, dilation, iters);
  std::printf("mean: %.3f ms  median: %.3f ms  effective: %.2f GB/s\n", mean * 1e3, median * 1e3,
              bytes / mean / 1e9);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dilated neighborhood attention image restoration toolkit"};
  app.require_subcommand(1);

  int threads = 1;
  if (const char* env = std::getenv("DINATIR_THREADS")) threads = std::atoi(env);
  app.add_option("--threads", threads, "intra-op worker threads");

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic clean/degraded dataset");
  std::string gen_out, gen_blur = "gaussian:1.2";
  int gen_count = 8, gen_size = 64;
  double gen_noise = 0.02;
  uint64_t gen_seed = 0;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--count", gen_count, "number of pairs");
  gen->add_option("--size", gen_size, "image size (multiple of 8)");
  gen->add_option("--blur", gen_blur, "gaussian:SIGMA or motion:LENGTH,ANGLE");
  gen->add_option("--noise", gen_noise, "additive Gaussian noise sigma");
  gen->add_option("--seed", gen_seed, "seed");

  auto* train = app.add_subcommand("train", "train a model");
  std::string tr_data, tr_config, tr_out, tr_loss;
  int64_t tr_iters = 0, tr_seed = -1;
  int tr_batch = 0, tr_patch = 0;
  double tr_lr = 0;
  train->add_option("--data", tr_data, "dataset directory (with manifest.json)");
  train->add_option("--config", tr_config, "JSON config file with model/train sections");
  train->add_option("--out", tr_out, "checkpoint output path");
  train->add_option("--iters", tr_iters, "iterations");
  train->add_option("--batch", tr_batch, "batch size");
  train->add_option("--patch", tr_patch, "patch size");
  train->add_option("--seed", tr_seed, "seed");
  train->add_option("--lr", tr_lr, "initial learning rate");
  train->add_option("--loss", tr_loss, "psnr or l1");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string ev_ckpt, ev_data;
  bool ev_json = false;
  eval->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
  eval->add_option("--data", ev_data, "dataset directory")->required();
  eval->add_flag("--json", ev_json, "machine-readable output");

  auto* infer = app.add_subcommand("infer", "restore a single image");
  std::string in_ckpt, in_png, out_png;
  infer->add_option("--ckpt", in_ckpt, "checkpoint path")->required();
  infer->add_option("--input", in_png, "input PNG")->required();
  infer->add_option("--output", out_png, "output PNG")->required();

  auto* gc = app.add_subcommand("grad-check", "finite-difference gradient verification");
  std::string gc_target = "ops";
  uint64_t gc_seed = 0;
  gc->add_option("--target", gc_target, "ops|attention|block|model");
  gc->add_option("--seed", gc_seed, "seed");

  auto* oc = app.add_subcommand("oracle-check", "attention vs dense-oracle verification");
  uint64_t oc_seed = 0;
  oc->add_option("--seed", oc_seed, "seed");

  auto* pc = app.add_subcommand("param-count", "print the exact parameter count of a config");
  std::string pc_config;
  double pc_ref = 0;
  pc->add_option("--config", pc_config, "JSON config file (default: full-scale reference)");
  pc->add_option("--reference", pc_ref, "reference count in millions to compare against");

  auto* bench = app.add_subcommand("bench", "time attention kernels");
  std::string bn_op = "dina", bn_size = "64x64";
  int bn_k = 7, bn_dil = 4, bn_iters = 20;
  bench->add_option("--op", bn_op, "na|dina|dense");
  bench->add_option("--size", bn_size, "HxW");
  bench->add_option("--k", bn_k, "window size");
  bench->add_option("--dilation", bn_dil, "dilation");
  bench->add_option("--iters", bn_iters, "timed iterations");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitUsage;
  }

  set_num_threads(threads);
  try {
    if (gen->parsed()) return cmd_gen_data(gen_out, gen_count, gen_size, gen_blur, gen_noise, gen_seed);
    if (train->parsed())
      return cmd_train(tr_data, tr_config, tr_out, tr_iters, tr_batch, tr_patch, tr_seed, tr_lr, tr_loss);
    if (eval->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_json);
    if (infer->parsed()) return cmd_infer(in_ckpt, in_png, out_png);
    if (gc->parsed()) return cmd_grad_check(gc_target, gc_seed);
    if (oc->parsed()) return cmd_oracle_check(oc_seed);
    if (pc->parsed()) return cmd_param_count(pc_config, pc_ref);
    if (bench->parsed()) return cmd_bench(bn_op, bn_size, bn_k, bn_dil, bn_iters);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitUsage;
}
