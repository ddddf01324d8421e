#include "config.hpp"

#include <algorithm>

#include "json.hpp"

namespace s3nas {

using ordered_json = nlohmann::ordered_json;

void SearchConfig::validate() const {
  if (lambda1 < 0.0 || lambda2 < 0.0) {
    throw ConfigError("loss coefficients must be non-negative");
  }
  if (target_latency_ms < 0.0) throw ConfigError("target latency must be positive");
  if (phase1_epochs < 0.0 || phase2_epochs < 0.0) {
    throw ConfigError("epoch counts must be non-negative");
  }
  if (lr <= 0.0 || lr_decay <= 0.0 || lr_decay > 1.0 || lr_decay_interval_epochs <= 0.0) {
    throw ConfigError("learning-rate schedule values out of range");
  }
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
}

SupernetSpec build_desk_supernet(int num_classes) {
  SupernetSpec spec;
  spec.stem = StemSpec{3, 1, 8};
  spec.head = HeadSpec{64, num_classes};
  spec.input_resolution = 32;
  spec.input_channels = 3;

  const int widths[3] = {8, 16, 24};
  const int depths[3] = {2, 2, 2};
  const int strides[3] = {2, 2, 2};
  const std::vector<double> expansions{0.0, 2.0};

  int prev_width = spec.stem.width;
  for (int s = 0; s < 3; ++s) {
    StageSpec stage;
    stage.width = widths[s];
    stage.depth = depths[s];
    stage.stride = strides[s];
    for (int b = 0; b < depths[s]; ++b) {
      BlockSpec block;
      block.input_width = b == 0 ? prev_width : widths[s];
      block.output_width = widths[s];
      block.stride = b == 0 ? strides[s] : 1;
      block.kind = BlockKind::MixconvMbconv;
      for (int j = 0; j < 3; ++j) {
        SuperkernelSpec sk;
        sk.kernel_sizes = j == 0 ? std::vector<int>{3, 5, 7} : std::vector<int>{3, 5};
        sk.expansion_ratios = expansions;
        block.superkernels.push_back(std::move(sk));
      }
      stage.blocks.push_back(std::move(block));
    }
    spec.stages.push_back(std::move(stage));
    prev_width = widths[s];
  }
  spec.validate();
  return spec;
}

namespace {

void check_keys(const ordered_json& j, const std::vector<std::string>& keys,
                const std::string& what) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw ConfigError("unknown key '" + key + "' in " + what + " section");
    }
  }
}

template <typename T>
void read(const ordered_json& j, const char* key, T& out) {
  if (j.contains(key)) out = j[key].get<T>();
}

}  // namespace

Config::Config() = default;

Config Config::from_json_text(const std::string& text) {
  Config cfg;
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  check_keys(j, {"version", "seed", "synth", "search", "baseline", "scale", "postprocess",
                 "latency", "supernet"},
             "config");
  if (j.contains("version") && j["version"].get<int>() != 1) {
    throw ConfigError("unknown config version");
  }
  read(j, "seed", cfg.seed_);
  if (j.contains("synth")) {
    const auto& js = j["synth"];
    check_keys(js, {"num_classes", "image_size", "channels", "samples_per_class", "noise_std",
                    "pattern_gain", "stamps_per_image", "val_fraction"},
               "synth");
    read(js, "num_classes", cfg.synth_.num_classes);
    read(js, "image_size", cfg.synth_.image_size);
    read(js, "channels", cfg.synth_.channels);
    read(js, "samples_per_class", cfg.synth_.samples_per_class);
    read(js, "noise_std", cfg.synth_.noise_std);
    read(js, "pattern_gain", cfg.synth_.pattern_gain);
    read(js, "stamps_per_image", cfg.synth_.stamps_per_image);
    read(js, "val_fraction", cfg.synth_.val_fraction);
  }
  if (j.contains("search")) {
    const auto& js = j["search"];
    check_keys(js, {"lambda1", "lambda2", "target_latency_ms", "phase1_epochs", "phase2_epochs",
                    "lr", "lr_decay", "lr_decay_interval_epochs", "batch_size", "grad_clip",
                    "momentum"},
               "search");
    read(js, "lambda1", cfg.search_.lambda1);
    read(js, "lambda2", cfg.search_.lambda2);
    read(js, "target_latency_ms", cfg.search_.target_latency_ms);
    read(js, "phase1_epochs", cfg.search_.phase1_epochs);
    read(js, "phase2_epochs", cfg.search_.phase2_epochs);
    read(js, "lr", cfg.search_.lr);
    read(js, "lr_decay", cfg.search_.lr_decay);
    read(js, "lr_decay_interval_epochs", cfg.search_.lr_decay_interval_epochs);
    read(js, "batch_size", cfg.search_.batch_size);
    read(js, "grad_clip", cfg.search_.grad_clip);
    read(js, "momentum", cfg.search_.momentum);
  }
  if (j.contains("baseline")) {
    const auto& js = j["baseline"];
    check_keys(js, {"n_models", "proxy_epochs", "full_epochs", "band_low"}, "baseline");
    read(js, "n_models", cfg.baseline_.n_models);
    read(js, "proxy_epochs", cfg.baseline_.proxy_epochs);
    read(js, "full_epochs", cfg.baseline_.full_epochs);
    read(js, "band_low", cfg.baseline_.band_low);
  }
  if (j.contains("scale")) {
    const auto& js = j["scale"];
    check_keys(js, {"depth_width_coef", "resolution_coef", "target_latency_ms"}, "scale");
    read(js, "depth_width_coef", cfg.scale_.depth_width_coef);
    read(js, "resolution_coef", cfg.scale_.resolution_coef);
    read(js, "target_latency_ms", cfg.scale_.target_latency_ms);
  }
  if (j.contains("postprocess")) {
    const auto& js = j["postprocess"];
    check_keys(js, {"se_reduction", "keep_fraction", "dispersion_samples"}, "postprocess");
    read(js, "se_reduction", cfg.postprocess_.se_reduction);
    read(js, "keep_fraction", cfg.postprocess_.keep_fraction);
    read(js, "dispersion_samples", cfg.postprocess_.dispersion_samples);
  }
  if (j.contains("latency")) {
    const auto& js = j["latency"];
    check_keys(js, {"provider", "table_file", "mac_units", "clock_ghz", "dram_bandwidth_gbps",
                    "dram_latency_us", "weight_buffer_kb", "double_buffered", "dwconv_native",
                    "se_native", "pooling_native"},
               "latency");
    if (js.contains("provider")) {
      cfg.provider_ = provider_from_string(js["provider"].get<std::string>());
    }
    read(js, "table_file", cfg.table_file_);
    read(js, "mac_units", cfg.cost_model_.mac_units);
    if (js.contains("clock_ghz")) cfg.cost_model_.clock_hz = js["clock_ghz"].get<double>() * 1e9;
    if (js.contains("dram_bandwidth_gbps")) {
      cfg.cost_model_.dram_bandwidth = js["dram_bandwidth_gbps"].get<double>() * 1e9;
    }
    if (js.contains("dram_latency_us")) {
      cfg.cost_model_.dram_latency = js["dram_latency_us"].get<double>() * 1e-6;
    }
    if (js.contains("weight_buffer_kb")) {
      cfg.cost_model_.weight_buffer = js["weight_buffer_kb"].get<double>() * 1024.0;
    }
    read(js, "double_buffered", cfg.cost_model_.double_buffered);
    read(js, "dwconv_native", cfg.cost_model_.dwconv_native);
    read(js, "se_native", cfg.cost_model_.se_native);
    read(js, "pooling_native", cfg.cost_model_.pooling_native);
  }
  if (j.contains("supernet")) {
    const auto& js = j["supernet"];
    if (js.is_string()) {
      cfg.supernet_preset_ = js.get<std::string>();
      if (cfg.supernet_preset_ != "default" && cfg.supernet_preset_ != "desk") {
        throw ConfigError("supernet preset must be 'default' or 'desk'");
      }
    } else {
      cfg.supernet_json_ = js.dump();
    }
  }
  cfg.search_.seed = cfg.seed_;
  cfg.synth_.seed = cfg.seed_;
  cfg.search_.validate();
  cfg.synth_.validate();
  cfg.cost_model_.validate();
  return cfg;
}

Config Config::load(const std::string& path) { return from_json_text(read_text_file(path)); }

void Config::set(const std::string& key, const std::string& value) {
  // Route the override through the JSON path so every key uses one parser.
  ordered_json j;
  try {
    j = ordered_json::parse(to_json_text());
  } catch (const std::exception& e) {
    throw ConfigError(std::string("internal config state invalid: ") + e.what());
  }
  const std::size_t dot = key.find('.');
  ordered_json* target = &j;
  std::string leaf = key;
  if (dot != std::string::npos) {
    const std::string section = key.substr(0, dot);
    leaf = key.substr(dot + 1);
    if (!j.contains(section)) throw ConfigError("unknown config section '" + section + "'");
    target = &j[section];
  }
  ordered_json parsed;
  try {
    parsed = ordered_json::parse(value);
  } catch (const std::exception&) {
    parsed = value;  // plain string
  }
  (*target)[leaf] = parsed;
  *this = from_json_text(j.dump());
}

SupernetSpec Config::supernet() const {
  if (!supernet_json_.empty()) {
    return deserialize_supernet(supernet_json_);
  }
  if (supernet_preset_ == "default") {
    return build_default_supernet(synth_.num_classes);
  }
  return build_desk_supernet(synth_.num_classes);
}

std::string Config::to_json_text() const {
  ordered_json j;
  j["version"] = 1;
  j["seed"] = seed_;
  {
    ordered_json js;
    js["num_classes"] = synth_.num_classes;
    js["image_size"] = synth_.image_size;
    js["channels"] = synth_.channels;
    js["samples_per_class"] = synth_.samples_per_class;
    js["noise_std"] = synth_.noise_std;
    js["pattern_gain"] = synth_.pattern_gain;
    js["stamps_per_image"] = synth_.stamps_per_image;
    js["val_fraction"] = synth_.val_fraction;
    j["synth"] = std::move(js);
  }
  {
    ordered_json js;
    js["lambda1"] = search_.lambda1;
    js["lambda2"] = search_.lambda2;
    js["target_latency_ms"] = search_.target_latency_ms;
    js["phase1_epochs"] = search_.phase1_epochs;
    js["phase2_epochs"] = search_.phase2_epochs;
    js["lr"] = search_.lr;
    js["lr_decay"] = search_.lr_decay;
    js["lr_decay_interval_epochs"] = search_.lr_decay_interval_epochs;
    js["batch_size"] = search_.batch_size;
    js["grad_clip"] = search_.grad_clip;
    js["momentum"] = search_.momentum;
    j["search"] = std::move(js);
  }
  {
    ordered_json js;
    js["n_models"] = baseline_.n_models;
    js["proxy_epochs"] = baseline_.proxy_epochs;
    js["full_epochs"] = baseline_.full_epochs;
    js["band_low"] = baseline_.band_low;
    j["baseline"] = std::move(js);
  }
  {
    ordered_json js;
    js["depth_width_coef"] = scale_.depth_width_coef;
    js["resolution_coef"] = scale_.resolution_coef;
    js["target_latency_ms"] = scale_.target_latency_ms;
    j["scale"] = std::move(js);
  }
  {
    ordered_json js;
    js["se_reduction"] = postprocess_.se_reduction;
    js["keep_fraction"] = postprocess_.keep_fraction;
    js["dispersion_samples"] = postprocess_.dispersion_samples;
    j["postprocess"] = std::move(js);
  }
  {
    ordered_json js;
    js["provider"] = to_string(provider_);
    js["table_file"] = table_file_;
    js["mac_units"] = cost_model_.mac_units;
    js["clock_ghz"] = cost_model_.clock_hz / 1e9;
    js["dram_bandwidth_gbps"] = cost_model_.dram_bandwidth / 1e9;
    js["dram_latency_us"] = cost_model_.dram_latency * 1e6;
    js["weight_buffer_kb"] = cost_model_.weight_buffer / 1024.0;
    js["double_buffered"] = cost_model_.double_buffered;
    js["dwconv_native"] = cost_model_.dwconv_native;
    js["se_native"] = cost_model_.se_native;
    js["pooling_native"] = cost_model_.pooling_native;
    j["latency"] = std::move(js);
  }
  if (!supernet_json_.empty()) {
    j["supernet"] = ordered_json::parse(supernet_json_);
  } else {
    j["supernet"] = supernet_preset_;
  }
  return j.dump(2) + "\n";
}

}  // namespace s3nas
