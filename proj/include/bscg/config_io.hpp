#pragma once

#include <fstream>
#include <initializer_list>
#include <string>

#include <json.hpp>

#include "bscg/train.hpp"

namespace bscg {

// JSON config files for the command line tool. Parsing is strict: a key the
// schema does not know is an error, so a typo fails loudly instead of
// silently falling back to a default.

namespace cfgio {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                       const std::string& where) {
  if (!j.is_object()) throw UsageError(where + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known) throw UsageError(where + ": unknown key \"" + it.key() + "\"");
  }
}

template <class V>
void take(const nlohmann::json& j, const char* key, V& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw UsageError(where + ": key \"" + std::string(key) + "\" has the wrong type");
  }
}

}  // namespace cfgio

// Model section. Architecture widths come only from "preset" ("full" or
// "tiny"); everything else can be overridden individually.
inline ModelConfig parse_model_config(const nlohmann::json& j, const std::string& where) {
  cfgio::check_keys(j,
                    {"preset", "cb", "input_size", "use_bpc", "use_dffc", "use_afr",
                     "use_iou_loss", "seed"},
                    where);
  std::string preset = "full";
  cfgio::take(j, "preset", preset, where);
  ModelConfig mc;
  if (preset == "full")
    mc = ModelConfig::full();
  else if (preset == "tiny")
    mc = ModelConfig::tiny();
  else
    throw UsageError(where + ": preset must be \"full\" or \"tiny\", got \"" + preset + "\"");
  cfgio::take(j, "cb", mc.cb, where);
  cfgio::take(j, "input_size", mc.input_size, where);
  cfgio::take(j, "use_bpc", mc.use_bpc, where);
  cfgio::take(j, "use_dffc", mc.use_dffc, where);
  cfgio::take(j, "use_afr", mc.use_afr, where);
  cfgio::take(j, "use_iou_loss", mc.use_iou_loss, where);
  cfgio::take(j, "seed", mc.seed, where);
  if (mc.cb <= 0) throw UsageError(where + ": cb must be positive");
  if (mc.input_size < 16 || mc.input_size % 16 != 0)
    throw UsageError(where + ": input_size must be a positive multiple of 16");
  return mc;
}

inline TrainConfig parse_train_config(const nlohmann::json& j) {
  cfgio::check_keys(j,
                    {"model", "lr", "batch_size", "epochs", "lr_decay", "lr_decay_every",
                     "seed", "augment", "augmentations", "image_dir", "mask_dir", "out_dir"},
                    "config");
  TrainConfig tc;
  if (j.contains("model")) tc.model = parse_model_config(j.at("model"), "config.model");
  cfgio::take(j, "lr", tc.lr, "config");
  cfgio::take(j, "batch_size", tc.batch_size, "config");
  cfgio::take(j, "epochs", tc.epochs, "config");
  cfgio::take(j, "lr_decay", tc.lr_decay, "config");
  cfgio::take(j, "lr_decay_every", tc.lr_decay_every, "config");
  cfgio::take(j, "seed", tc.seed, "config");
  cfgio::take(j, "augment", tc.augment, "config");
  if (j.contains("augmentations")) {
    const nlohmann::json& a = j.at("augmentations");
    cfgio::check_keys(a, {"rot90", "hflip", "vflip", "blur"}, "config.augmentations");
    cfgio::take(a, "rot90", tc.aug.rot90, "config.augmentations");
    cfgio::take(a, "hflip", tc.aug.hflip, "config.augmentations");
    cfgio::take(a, "vflip", tc.aug.vflip, "config.augmentations");
    cfgio::take(a, "blur", tc.aug.blur, "config.augmentations");
  }
  cfgio::take(j, "image_dir", tc.image_dir, "config");
  cfgio::take(j, "mask_dir", tc.mask_dir, "config");
  cfgio::take(j, "out_dir", tc.out_dir, "config");
  if (tc.lr <= 0.0) throw UsageError("config: lr must be positive");
  if (tc.batch_size <= 0) throw UsageError("config: batch_size must be positive");
  if (tc.epochs <= 0) throw UsageError("config: epochs must be positive");
  if (tc.lr_decay <= 0.0) throw UsageError("config: lr_decay must be positive");
  if (tc.lr_decay_every <= 0) throw UsageError("config: lr_decay_every must be positive");
  return tc;
}

inline nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file: " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError("config file " + path + " is not valid JSON: " + e.what());
  }
}

inline TrainConfig load_train_config(const std::string& path) {
  return parse_train_config(load_json_file(path));
}

// A summary config may be a full train config (model under "model") or a
// bare model section.
inline ModelConfig load_model_config(const std::string& path) {
  nlohmann::json j = load_json_file(path);
  if (j.is_object() && j.contains("model"))
    return parse_model_config(j.at("model"), "config.model");
  return parse_model_config(j, "config");
}

inline std::string preset_name(const ModelConfig& mc) {
  if (mc.backbone.widths == BackboneConfig::full().widths) return "full";
  if (mc.backbone.widths == BackboneConfig::tiny().widths) return "tiny";
  return "custom";
}

}  // namespace bscg
