// Copyright (c) 2026 The dinat-ir authors
// SPDX-License-Identifier: Apache-2.0

#include "dinat/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace dinat {

namespace {

constexpr char kMagic[8] = {'D', 'I', 'N', 'A', 'T', 'I', 'R', '1'};

json stage_to_json(const StageSpec& s) {
  return json{{"blocks", s.blocks},
              {"channels", s.channels},
              {"heads", s.heads},
              {"dilation_pair", json::array({1, s.dilation})}};
}

StageSpec stage_from_json(const json& j) {
  StageSpec s;
  s.blocks = j.at("blocks").get<int>();
  s.channels = j.value("channels", 0);
  s.heads = j.at("heads").get<int>();
  if (j.contains("dilation_pair")) {
    const auto& p = j.at("dilation_pair");
    if (!p.is_array() || p.size() != 2 || p[0].get<int>() != 1)
      throw ConfigError("stage dilation_pair must be [1, d]");
    s.dilation = p[1].get<int>();
  } else {
    s.dilation = j.at("dilation").get<int>();
  }
  return s;
}

json config_to_json_obj(const ModelConfig& cfg) {
  json stages = json::array();
  for (const auto& s : cfg.stages) stages.push_back(stage_to_json(s));
  return json{{"in_channels", cfg.in_channels},
              {"out_channels", cfg.out_channels},
              {"base_channels", cfg.base_channels},
              {"stages", stages},
              {"refinement_blocks", cfg.refinement_blocks},
              {"gdfn_expansion", cfg.gdfn_expansion},
              {"attention_mode", to_string(cfg.attention_mode)},
              {"cam_enabled", cfg.cam_enabled},
              {"k", cfg.k},
              {"auto_clamp", cfg.auto_clamp}};
}

ModelConfig config_from_json_obj(const json& j) {
  ModelConfig cfg;
  try {
    cfg.in_channels = j.value("in_channels", 3);
    cfg.out_channels = j.value("out_channels", 3);
    cfg.base_channels = j.at("base_channels").get<int>();
    if (j.contains("stages")) {
      const auto& st = j.at("stages");
      if (!st.is_array() || st.size() != 4) throw ConfigError("config: stages must be an array of 4");
      for (size_t i = 0; i < 4; ++i) cfg.stages[i] = stage_from_json(st[i]);
    }
    cfg.refinement_blocks = j.value("refinement_blocks", cfg.refinement_blocks);
    cfg.gdfn_expansion = j.value("gdfn_expansion", cfg.gdfn_expansion);
    if (j.contains("attention_mode"))
      cfg.attention_mode = attention_mode_from_string(j.at("attention_mode").get<std::string>());
    cfg.cam_enabled = j.value("cam_enabled", cfg.cam_enabled);
    cfg.k = j.value("k", cfg.k);
    cfg.auto_clamp = j.value("auto_clamp", cfg.auto_clamp);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) { return config_to_json_obj(cfg).dump(2); }

ModelConfig model_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json_obj(j);
}

std::string train_config_to_json(const TrainConfig& cfg) {
  json j{{"iters", cfg.iters},
         {"batch", cfg.batch},
         {"patch_size", cfg.patch_size},
         {"lr_init", cfg.lr_init},
         {"lr_min", cfg.lr_min},
         {"betas", json::array({cfg.betas.first, cfg.betas.second})},
         {"weight_decay", cfg.weight_decay},
         {"loss", cfg.loss == TrainConfig::Loss::psnr ? "psnr" : "l1"},
         {"seed", cfg.seed},
         {"eval_every", cfg.eval_every},
         {"data_dir", cfg.data_dir},
         {"out_path", cfg.out_path}};
  return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  TrainConfig cfg;
  try {
    cfg.iters = j.value("iters", cfg.iters);
    cfg.batch = j.value("batch", cfg.batch);
    cfg.patch_size = j.value("patch_size", cfg.patch_size);
    cfg.lr_init = j.value("lr_init", cfg.lr_init);
    cfg.lr_min = j.value("lr_min", cfg.lr_min);
    if (j.contains("betas")) {
      const auto& b = j.at("betas");
      if (!b.is_array() || b.size() != 2) throw ConfigError("train config: betas must be [b1, b2]");
      cfg.betas = {b[0].get<double>(), b[1].get<double>()};
    }
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    if (j.contains("loss")) {
      const std::string l = j.at("loss").get<std::string>();
      if (l == "psnr")
        cfg.loss = TrainConfig::Loss::psnr;
      else if (l == "l1")
        cfg.loss = TrainConfig::Loss::l1;
      else
        throw ConfigError("train config: loss must be 'psnr' or 'l1'");
    }
    cfg.seed = j.value("seed", cfg.seed);
    cfg.eval_every = j.value("eval_every", cfg.eval_every);
    cfg.data_dir = j.value("data_dir", cfg.data_dir);
    cfg.out_path = j.value("out_path", cfg.out_path);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid train config: ") + e.what());
  }
  return cfg;
}

void save_checkpoint(const Model<float>& model, const std::string& path, uint64_t iteration,
                     uint64_t seed) {
  json header;
  header["config"] = config_to_json_obj(model.cfg);
  header["iteration"] = iteration;
  header["seed"] = seed;
  json tensors = json::array();
  uint64_t offset = 0;
  for (const auto& p : model.params) {
    tensors.push_back({{"name", p.name},
                       {"dtype", "f32"},
                       {"shape", p.value.shape()},
                       {"offset", offset}});
    offset += static_cast<uint64_t>(p.value.numel()) * sizeof(float);
  }
  header["tensors"] = tensors;
  const std::string htext = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint '" + path + "'");
  out.write(kMagic, 8);
  const uint64_t hlen = htext.size();
  out.write(reinterpret_cast<const char*>(&hlen), 8);
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  for (const auto& p : model.params)
    out.write(reinterpret_cast<const char*>(p.value.data()),
              static_cast<std::streamsize>(p.value.numel() * sizeof(float)));
  if (!out) throw DataError("failed writing checkpoint '" + path + "'");
}

Model<float> load_checkpoint(const std::string& path, CheckpointMeta* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw FormatError("'" + path + "' is not a checkpoint (bad magic)");
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 8);
  if (!in || hlen == 0 || hlen > (1ull << 30)) throw FormatError("checkpoint header length invalid");
  std::string htext(hlen, '\0');
  in.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw FormatError("checkpoint header truncated");

  json header;
  try {
    header = json::parse(htext);
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }

  ModelConfig cfg;
  uint64_t iteration = 0, seed = 0;
  try {
    cfg = config_from_json_obj(header.at("config"));
    iteration = header.value("iteration", 0ull);
    seed = header.value("seed", 0ull);
  } catch (const ConfigError&) {
    throw;
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header incomplete: ") + e.what());
  }

  struct Entry {
    std::string name;
    std::vector<int64_t> shape;
    uint64_t offset;
  };
  std::vector<Entry> entries;
  try {
    for (const auto& t : header.at("tensors")) {
      Entry e;
      e.name = t.at("name").get<std::string>();
      if (t.at("dtype").get<std::string>() != "f32")
        throw FormatError("checkpoint tensor '" + e.name + "' has unsupported dtype");
      e.shape = t.at("shape").get<std::vector<int64_t>>();
      e.offset = t.at("offset").get<uint64_t>();
      entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint manifest invalid: ") + e.what());
  }

  // manifest bounds: sorted by offset the entries must tile the payload
  std::vector<Entry> sorted = entries;
  std::sort(sorted.begin(), sorted.end(), [](const Entry& a, const Entry& b) { return a.offset < b.offset; });
  uint64_t expect = 0;
  for (const auto& e : sorted) {
    if (e.offset != expect)
      throw FormatError("checkpoint manifest offsets overlap or leave gaps at '" + e.name + "'");
    uint64_t n = 1;
    for (int64_t d : e.shape) n *= static_cast<uint64_t>(d);
    expect += n * sizeof(float);
  }

  const std::streampos payload_start = in.tellg();
  in.seekg(0, std::ios::end);
  const uint64_t payload_size = static_cast<uint64_t>(in.tellg() - payload_start);
  if (payload_size != expect)
    throw FormatError("checkpoint payload size " + std::to_string(payload_size) +
                      " does not match manifest total " + std::to_string(expect));

  Model<float> model = build_model<float>(cfg, seed);
  if (model.params.size() != entries.size())
    throw FormatError("checkpoint manifest has " + std::to_string(entries.size()) +
                      " tensors, config implies " + std::to_string(model.params.size()));
  for (auto& p : model.params) {
    const Entry* found = nullptr;
    for (const auto& e : entries)
      if (e.name == p.name) {
        found = &e;
        break;
      }
    if (!found) throw FormatError("checkpoint missing tensor '" + p.name + "'");
    if (found->shape != p.value.shape())
      throw FormatError("checkpoint tensor '" + p.name + "' shape " + shape_str(found->shape) +
                        " does not match config shape " + shape_str(p.value.shape()));
    in.seekg(payload_start + static_cast<std::streamoff>(found->offset));
    in.read(reinterpret_cast<char*>(p.value.data()),
            static_cast<std::streamsize>(p.value.numel() * sizeof(float)));
    if (!in) throw FormatError("checkpoint payload truncated at '" + p.name + "'");
  }
  if (meta) {
    meta->config = cfg;
    meta->iteration = iteration;
    meta->seed = seed;
  }
  return model;
}

}  // namespace dinat
