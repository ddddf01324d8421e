#pragma once

#include <optional>
#include <string>

#include "arch.hpp"
#include "latency.hpp"
#include "synth.hpp"

namespace s3nas {

// Eq.-(9) coefficients plus the desk-scale training schedule.
struct SearchConfig {
  double lambda1 = 15.0;
  double lambda2 = 100.0;
  double target_latency_ms = 0.0;  // 0 = derive from the space (40th percentile)
  double phase1_epochs = 8.0;
  double phase2_epochs = 2.0;
  double lr = 0.05;
  double lr_decay = 0.97;
  double lr_decay_interval_epochs = 2.4;
  int batch_size = 32;
  double grad_clip = 10.0;
  double momentum = 0.9;
  std::uint64_t seed = 1;

  void validate() const;
};

struct BaselineConfig {
  int n_models = 15;
  double proxy_epochs = 1.0;
  double full_epochs = 4.0;
  double band_low = 0.95;  // accepted latency band is [band_low * T, T]
};

struct ScaleConfig {
  double depth_width_coef = 1.2;
  double resolution_coef = 1.1;
  double target_latency_ms = 0.0;  // 0 = unconstrained
};

struct PostprocessConfig {
  double se_reduction = 0.25;
  double keep_fraction = 0.6;
  int dispersion_samples = 1000;
};

// One experiment bundle: every command reads the sections it needs. Flags
// override entries through set().
class Config {
 public:
  Config();  // built-in defaults
  static Config load(const std::string& path);
  static Config from_json_text(const std::string& text);

  // Dotted-path override, e.g. set("search.lambda1", "0").
  void set(const std::string& key, const std::string& value);

  std::uint64_t seed() const { return seed_; }
  const SynthTaskSpec& synth() const { return synth_; }
  const SearchConfig& search() const { return search_; }
  const BaselineConfig& baseline() const { return baseline_; }
  const ScaleConfig& scale() const { return scale_; }
  const PostprocessConfig& postprocess() const { return postprocess_; }
  const CostModelParams& cost_model() const { return cost_model_; }
  LatencyProvider provider() const { return provider_; }
  const std::string& table_file() const { return table_file_; }

  // The supernet described by the config: the Table-4 default, or the
  // desk-scale preset, or an explicit stage list.
  SupernetSpec supernet() const;

  std::string to_json_text() const;

 private:
  std::uint64_t seed_ = 1;
  SynthTaskSpec synth_;
  SearchConfig search_;
  BaselineConfig baseline_;
  ScaleConfig scale_;
  PostprocessConfig postprocess_;
  CostModelParams cost_model_;
  LatencyProvider provider_ = LatencyProvider::Analytical;
  std::string table_file_;
  std::string supernet_preset_ = "desk";  // "default" | "desk"
  std::string supernet_json_;             // explicit supernet section, wins over preset
};

// The six-block supernet used for desk-scale searches: 32x32 inputs, widths
// (8, 16, 24), two blocks per stage.
SupernetSpec build_desk_supernet(int num_classes);

}  // namespace s3nas
