#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include <json.hpp>

#include "fanet/checkpoint.hpp"
#include "fanet/data.hpp"
#include "fanet/trainer.hpp"

// Declarative run configuration: one JSON document fully determines a run
// (architecture, training recipe, dataset source, augmentation, seed). The
// archived copy written into the output directory is the reproducibility
// contract.

namespace fanet {

struct SyntheticSpec {
  uint64_t seed = 7;
  int64_t train_count = 64;
  int64_t val_count = 16;
  int64_t size = 96;
};

struct DataConfig {
  std::optional<SyntheticSpec> synthetic;
  std::string images_dir, masks_dir;
  std::string val_images_dir, val_masks_dir;
  Palette palette = default_palette();
};

struct RunConfig {
  uint64_t seed = 1;
  std::string output_dir = "runs/out";
  ArchitectureSpec arch;
  TrainConfig train;
  AugmentConfig augment;
  DataConfig data;
};

namespace detail {

inline int line_of_byte(const std::string& text, size_t byte) {
  int line = 1;
  for (size_t i = 0; i < byte && i < text.size(); ++i)
    if (text[i] == '\n') ++line;
  return line;
}

}  // namespace detail

inline RunConfig parse_run_config(const std::string& text,
                                  const std::string& source) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(source + ":" +
                      std::to_string(detail::line_of_byte(text, e.byte)) +
                      ": " + e.what());
  }
  try {
    RunConfig cfg;
    cfg.seed = j.value("seed", uint64_t{1});
    cfg.output_dir = j.value("output_dir", std::string("runs/out"));

    if (j.contains("arch")) {
      const auto& a = j.at("arch");
      cfg.arch.variant =
          parse_variant(a.value("variant", std::string("fanet")));
      cfg.arch.base_width = a.value("base_width", int64_t{8});
      cfg.arch.num_classes = a.value("num_classes", int64_t{5});
      cfg.arch.input_size = a.value("input_size", int64_t{96});
      cfg.arch.fsam_r = a.value("fsam_r", int64_t{3});
      cfg.arch.fiam_factor = a.value("fiam_factor", 1.2);
      cfg.arch.grad_mode =
          parse_grad_mode(a.value("grad_mode", std::string("surrogate")));
      cfg.arch.tau = a.value("tau", 0.1);
    } else {
      cfg.arch.base_width = 8;
      cfg.arch.input_size = 96;
    }
    cfg.arch.validate();

    cfg.train = desk_recipe();
    if (j.contains("train")) {
      const auto& t = j.at("train");
      std::string preset = t.value("preset", std::string("desk"));
      if (preset == "paper")
        cfg.train = paper_recipe();
      else if (preset != "desk")
        throw ConfigError("train.preset must be 'desk' or 'paper', got '" +
                          preset + "'");
      cfg.train.epochs = t.value("epochs", cfg.train.epochs);
      cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
      cfg.train.lr0 = t.value("lr0", cfg.train.lr0);
      cfg.train.momentum = t.value("momentum", cfg.train.momentum);
      cfg.train.weight_decay =
          t.value("weight_decay", cfg.train.weight_decay);
      cfg.train.eval_every = t.value("eval_every", cfg.train.eval_every);
    }
    cfg.train.seed = cfg.seed;
    cfg.train.validate();

    if (j.contains("augment")) {
      const auto& a = j.at("augment");
      cfg.augment.p = a.value("p", 0.6);
      cfg.augment.rotation_deg = a.value("rotation_deg", 180.0);
      cfg.augment.crop_size = a.value("crop_size", int64_t{100});
      cfg.augment.crop_padding = a.value("crop_padding", int64_t{10});
    }
    cfg.augment.out_size = cfg.arch.input_size;
    if (cfg.augment.p < 0 || cfg.augment.p > 1)
      throw ConfigError("augment.p must lie in [0, 1]");

    if (j.contains("data")) {
      const auto& d = j.at("data");
      if (d.contains("synthetic")) {
        const auto& s = d.at("synthetic");
        SyntheticSpec sp;
        sp.seed = s.value("seed", uint64_t{7});
        sp.train_count = s.value("train_count", int64_t{64});
        sp.val_count = s.value("val_count", int64_t{16});
        sp.size = s.value("size", cfg.arch.input_size);
        cfg.data.synthetic = sp;
      } else {
        cfg.data.images_dir = d.value("images_dir", std::string());
        cfg.data.masks_dir = d.value("masks_dir", std::string());
        cfg.data.val_images_dir = d.value("val_images_dir", std::string());
        cfg.data.val_masks_dir = d.value("val_masks_dir", std::string());
        if (cfg.data.images_dir.empty() || cfg.data.masks_dir.empty())
          throw ConfigError(
              "data: either a 'synthetic' block or images_dir+masks_dir is "
              "required");
      }
      if (d.contains("palette")) {
        Palette pal;
        for (const auto& c : d.at("palette")) {
          if (!c.is_array() || c.size() != 3)
            throw ConfigError("data.palette entries must be [r, g, b]");
          pal.push_back({c[0].get<uint8_t>(), c[1].get<uint8_t>(),
                         c[2].get<uint8_t>()});
        }
        if (pal.empty()) throw ConfigError("data.palette must be non-empty");
        cfg.data.palette = pal;
      }
    } else {
      cfg.data.synthetic = SyntheticSpec{};
      cfg.data.synthetic->size = cfg.arch.input_size;
    }
    if (cfg.data.synthetic && cfg.data.synthetic->size != cfg.arch.input_size)
      throw ConfigError("data.synthetic.size must equal arch.input_size");
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(source + ": " + e.what());
  }
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str(), path);
}

inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  j["arch"] = arch_to_json(cfg.arch);
  j["train"] = {{"epochs", cfg.train.epochs},
                {"batch_size", cfg.train.batch_size},
                {"lr0", cfg.train.lr0},
                {"momentum", cfg.train.momentum},
                {"weight_decay", cfg.train.weight_decay},
                {"eval_every", cfg.train.eval_every}};
  j["augment"] = {{"p", cfg.augment.p},
                  {"rotation_deg", cfg.augment.rotation_deg},
                  {"crop_size", cfg.augment.crop_size},
                  {"crop_padding", cfg.augment.crop_padding}};
  nlohmann::json d;
  if (cfg.data.synthetic) {
    d["synthetic"] = {{"seed", cfg.data.synthetic->seed},
                      {"train_count", cfg.data.synthetic->train_count},
                      {"val_count", cfg.data.synthetic->val_count},
                      {"size", cfg.data.synthetic->size}};
  } else {
    d["images_dir"] = cfg.data.images_dir;
    d["masks_dir"] = cfg.data.masks_dir;
    if (!cfg.data.val_images_dir.empty()) {
      d["val_images_dir"] = cfg.data.val_images_dir;
      d["val_masks_dir"] = cfg.data.val_masks_dir;
    }
  }
  nlohmann::json pal = nlohmann::json::array();
  for (const auto& c : cfg.data.palette)
    pal.push_back({c[0], c[1], c[2]});
  d["palette"] = pal;
  j["data"] = d;
  return j;
}

inline void write_run_config(const std::string& path, const RunConfig& cfg) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write config copy: " + path);
  f << run_config_to_json(cfg).dump(2) << "\n";
}

struct LoadedData {
  std::vector<SegmentationSample> train, val;
};

// Synthetic validation draws from an independent stream of the same
// generator, so train/val never share a sample.
inline LoadedData load_data(const DataConfig& cfg) {
  LoadedData out;
  if (cfg.synthetic) {
    out.train = synth_orange(cfg.synthetic->seed, cfg.synthetic->train_count,
                             cfg.synthetic->size);
    out.val = synth_orange(derive_seed(cfg.synthetic->seed, 0x7a1ULL),
                           cfg.synthetic->val_count, cfg.synthetic->size);
  } else {
    out.train = load_voc_dir(cfg.images_dir, cfg.masks_dir, cfg.palette);
    if (!cfg.val_images_dir.empty())
      out.val = load_voc_dir(cfg.val_images_dir, cfg.val_masks_dir,
                             cfg.palette);
  }
  return out;
}

}  // namespace fanet
