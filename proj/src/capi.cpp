#include "s3nas/s3nas.h"

#include <cstring>
#include <filesystem>
#include <string>

#include "config.hpp"
#include "json.hpp"
#include "latency.hpp"
#include "network.hpp"
#include "scaling.hpp"
#include "search.hpp"

namespace {

using namespace s3nas;
using ordered_json = nlohmann::ordered_json;

thread_local std::string g_last_error;

s3n_status to_status(const Error& e) { return static_cast<s3n_status>(static_cast<int>(e.status())); }

template <typename Fn>
s3n_status guarded(Fn&& fn) {
  try {
    g_last_error.clear();
    fn();
    return S3N_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return to_status(e);
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return S3N_ERR_INVARIANT;
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void ensure_dir(const std::string& path) {
  std::error_code ec;
  std::filesystem::create_directories(path, ec);
  if (ec) throw ConfigError("cannot create directory '" + path + "': " + ec.message());
}

std::string join(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

}  // namespace

struct s3n_config {
  Config cfg;
};
struct s3n_supernet {
  SupernetSpec spec;
};
struct s3n_arch {
  ConcreteArchitecture arch;
};
struct s3n_latency_table {
  LatencyTable table;
};

extern "C" {

const char* s3n_last_error(void) { return g_last_error.c_str(); }

void s3n_string_free(char* s) { std::free(s); }

/* ----- configuration ---------------------------------------------------- */

s3n_status s3n_config_default(s3n_config** out) {
  return guarded([&] { *out = new s3n_config{Config()}; });
}

s3n_status s3n_config_load(const char* path, s3n_config** out) {
  return guarded([&] { *out = new s3n_config{Config::load(path)}; });
}

s3n_status s3n_config_set(s3n_config* cfg, const char* key, const char* value) {
  return guarded([&] { cfg->cfg.set(key, value); });
}

s3n_status s3n_config_dump(const s3n_config* cfg, char** json_out) {
  return guarded([&] { *json_out = dup_string(cfg->cfg.to_json_text()); });
}

void s3n_config_free(s3n_config* cfg) { delete cfg; }

/* ----- supernets --------------------------------------------------------- */

s3n_status s3n_supernet_default(s3n_supernet** out) {
  return guarded([&] { *out = new s3n_supernet{build_default_supernet()}; });
}

s3n_status s3n_supernet_from_config(const s3n_config* cfg, s3n_supernet** out) {
  return guarded([&] { *out = new s3n_supernet{cfg->cfg.supernet()}; });
}

s3n_status s3n_supernet_load(const char* path, s3n_supernet** out) {
  return guarded([&] { *out = new s3n_supernet{load_supernet(path)}; });
}

s3n_status s3n_supernet_save(const s3n_supernet* sn, const char* path) {
  return guarded([&] { save_supernet(sn->spec, path); });
}

s3n_status s3n_supernet_linear_depth_report(const s3n_supernet* sn, char** json_out) {
  return guarded([&] {
    const LinearDepthReport report = validate_linear_depth(sn->spec);
    ordered_json j;
    j["is_monotone"] = report.is_monotone;
    j["stages"] = ordered_json::array();
    for (const auto& row : report.rows) {
      ordered_json jr;
      jr["width"] = row.width;
      jr["cumulative_depth"] = row.cumulative_depth;
      jr["ratio"] = row.ratio;
      j["stages"].push_back(std::move(jr));
    }
    *json_out = dup_string(j.dump(2) + "\n");
  });
}

void s3n_supernet_free(s3n_supernet* sn) { delete sn; }

/* ----- architectures ----------------------------------------------------- */

s3n_status s3n_arch_load(const char* path, s3n_arch** out) {
  return guarded([&] { *out = new s3n_arch{load_architecture(path)}; });
}

s3n_status s3n_arch_save(const s3n_arch* arch, const char* path) {
  return guarded([&] { save_architecture(arch->arch, path); });
}

s3n_status s3n_validate_file(const char* path, const s3n_supernet* supernet, char** json_out) {
  return guarded([&] {
    const std::string text = read_text_file(path);
    ordered_json j;
    // A supernet file carries the "kind" marker; everything else is treated
    // as an architecture file.
    bool is_supernet = false;
    try {
      const auto parsed = ordered_json::parse(text);
      is_supernet = parsed.contains("kind") && parsed["kind"] == "supernet";
    } catch (const std::exception& e) {
      throw ConfigError("malformed file '" + std::string(path) + "': " + e.what());
    }
    if (is_supernet) {
      const SupernetSpec spec = deserialize_supernet(text);
      const LinearDepthReport report = validate_linear_depth(spec);
      j["file"] = "supernet";
      j["blocks"] = spec.total_blocks();
      j["linear_depth_monotone"] = report.is_monotone;
    } else {
      const ConcreteArchitecture arch =
          deserialize_architecture(text, supernet != nullptr ? &supernet->spec : nullptr);
      j["file"] = "architecture";
      j["blocks"] = arch.total_blocks();
      j["activation"] = to_string(arch.activation);
      int se = 0;
      for (const auto& ref : arch.flat_blocks()) se += ref.block->se_enabled ? 1 : 0;
      j["se_blocks"] = se;
      j["checked_against_supernet"] = supernet != nullptr;
    }
    j["valid"] = true;
    if (json_out != nullptr) *json_out = dup_string(j.dump(2) + "\n");
  });
}

void s3n_arch_free(s3n_arch* arch) { delete arch; }

/* ----- latency ------------------------------------------------------------ */

s3n_status s3n_latency_table_build(const s3n_supernet* sn, const s3n_config* cfg,
                                   s3n_latency_table** out) {
  return guarded([&] {
    *out = new s3n_latency_table{build_latency_table(sn->spec, cfg->cfg.provider(),
                                                     cfg->cfg.cost_model(),
                                                     cfg->cfg.table_file())};
  });
}

s3n_status s3n_latency_table_load(const char* path, s3n_latency_table** out) {
  return guarded([&] { *out = new s3n_latency_table{LatencyTable::load(path)}; });
}

s3n_status s3n_latency_table_save(const s3n_latency_table* table, const char* path) {
  return guarded([&] { table->table.save(path); });
}

void s3n_latency_table_free(s3n_latency_table* table) { delete table; }

s3n_status s3n_latency_estimate(const s3n_arch* arch, const s3n_latency_table* table,
                                double* ms_out) {
  return guarded([&] { *ms_out = estimate_network_latency(arch->arch, table->table); });
}

s3n_status s3n_latency_estimate_model(const s3n_arch* arch, const s3n_config* cfg,
                                      double* ms_out) {
  return guarded([&] {
    const bool simulate = cfg->cfg.provider() == LatencyProvider::Simulator;
    *ms_out = estimate_network_latency_model(arch->arch, cfg->cfg.cost_model(), simulate,
                                             cfg->cfg.postprocess().se_reduction);
  });
}

s3n_status s3n_latency_validate_model(const s3n_supernet* sn, const s3n_config* cfg, int samples,
                                      double* mape_out) {
  return guarded([&] {
    if (samples < 1) throw ConfigError("validate-model needs at least one sample");
    const LatencyTable analytical =
        build_latency_table(sn->spec, LatencyProvider::Analytical, cfg->cfg.cost_model());
    const LatencyTable simulated =
        build_latency_table(sn->spec, LatencyProvider::Simulator, cfg->cfg.cost_model());
    Rng rng = Rng::derive(cfg->cfg.seed(), 0xfa11);
    double total = 0.0;
    for (int i = 0; i < samples; ++i) {
      std::vector<Decision> decisions;
      std::vector<CanonicalConfig> configs;
      for (int l = 0; l < sn->spec.total_blocks(); ++l) {
        decisions.push_back(sample_block_decision(sn->spec.block_at(l), rng));
        configs.push_back(canonicalize(sn->spec.block_at(l), decisions.back()));
      }
      const ConcreteArchitecture arch = architecture_from_decisions(sn->spec, configs);
      const double a = estimate_network_latency(arch, analytical);
      const double s = estimate_network_latency(arch, simulated);
      total += std::abs(a - s) / s;
    }
    *mape_out = 100.0 * total / samples;
  });
}

/* ----- search and baselines ------------------------------------------------ */

s3n_status s3n_search_run(const s3n_supernet* sn, const s3n_config* cfg,
                          const s3n_latency_table* table, const char* out_dir) {
  return guarded([&] {
    ensure_dir(out_dir);
    SearchEngine engine(sn->spec, cfg->cfg.synth(), cfg->cfg.search(), table->table);
    const SearchOutputs outputs = engine.run();
    save_architecture(outputs.architecture, join(out_dir, "architecture.json"));
    write_text_file(join(out_dir, "metrics.csv"), outputs.metrics_csv);
    write_text_file(join(out_dir, "summary.json"), outputs.summary_json);
    engine.model().store().save(join(out_dir, "supernet.ckpt"));
  });
}

s3n_status s3n_baseline_run(const s3n_supernet* sn, const s3n_config* cfg,
                            const s3n_latency_table* table, int full_training,
                            const char* out_dir) {
  return guarded([&] {
    ensure_dir(out_dir);
    double target = cfg->cfg.search().target_latency_ms;
    if (target <= 0.0) {
      target = latency_percentile(sn->spec, table->table, 0.40, 1000, cfg->cfg.seed());
    }
    const BaselineOutputs outputs = random_search_baseline(
        sn->spec, cfg->cfg.synth(), table->table, cfg->cfg.search(), cfg->cfg.baseline(), target,
        full_training != 0, join(out_dir, "best.ckpt"));
    save_architecture(outputs.best.architecture, join(out_dir, "best_architecture.json"));
    write_text_file(join(out_dir, "summary.json"), outputs.summary_json);
  });
}

/* ----- scaling and post-processing ---------------------------------------- */

s3n_status s3n_scale(const s3n_arch* arch, const s3n_config* cfg, s3n_arch** out,
                     char** json_report_out) {
  return guarded([&] {
    ScalingCoefficients coefs{cfg->cfg.scale().depth_width_coef,
                              cfg->cfg.scale().resolution_coef};
    const bool simulate = cfg->cfg.provider() == LatencyProvider::Simulator;
    const LatencyEstimator estimator = model_estimator(
        cfg->cfg.cost_model(), simulate, cfg->cfg.postprocess().se_reduction);
    const ScaleReport report =
        compound_scale(arch->arch, coefs, estimator, cfg->cfg.scale().target_latency_ms);
    *out = new s3n_arch{report.architecture};
    if (json_report_out != nullptr) {
      ordered_json j;
      j["estimated_latency_ms"] = report.estimated_latency_ms;
      j["within_target"] = report.within_target;
      j["resolution_rollbacks"] = report.resolution_rollbacks;
      j["depth_rollbacks"] = report.depth_rollbacks;
      j["input_resolution"] = report.architecture.input_resolution;
      *json_report_out = dup_string(j.dump(2) + "\n");
    }
  });
}

s3n_status s3n_add_se_hswish(const s3n_arch* arch, s3n_arch** out) {
  return guarded([&] { *out = new s3n_arch{add_se_hswish(arch->arch)}; });
}

s3n_status s3n_se_dispersion(const s3n_arch* arch, const char* checkpoint_path,
                             const s3n_config* cfg, const char* report_csv_path) {
  return guarded([&] {
    if (checkpoint_path == nullptr || checkpoint_path[0] == '\0') {
      throw InvariantError("dispersion requires trained SE weights (no checkpoint given)");
    }
    PlainNetwork net(arch->arch, cfg->cfg.seed(), cfg->cfg.postprocess().se_reduction);
    net.store().load(checkpoint_path);
    const SeDispersionReport report =
        se_dispersion(net, cfg->cfg.synth(), cfg->cfg.postprocess().dispersion_samples,
                      cfg->cfg.search().batch_size);
    write_text_file(report_csv_path, report.to_csv());
  });
}

s3n_status s3n_remove_se(const s3n_arch* arch, const char* report_csv_path, double keep_fraction,
                         s3n_arch** out) {
  return guarded([&] {
    const SeDispersionReport report = SeDispersionReport::from_csv(read_text_file(report_csv_path));
    *out = new s3n_arch{remove_se(arch->arch, report, keep_fraction)};
  });
}

/* ----- training and export -------------------------------------------------- */

s3n_status s3n_train_architecture(const s3n_arch* arch, const s3n_config* cfg, double epochs,
                                  const char* checkpoint_out, double* val_accuracy_out) {
  return guarded([&] {
    PlainNetwork net(arch->arch, cfg->cfg.seed(), cfg->cfg.postprocess().se_reduction);
    TrainOptions options;
    options.epochs = epochs;
    options.batch_size = cfg->cfg.search().batch_size;
    options.lr = cfg->cfg.search().lr;
    options.momentum = cfg->cfg.search().momentum;
    options.grad_clip = cfg->cfg.search().grad_clip;
    options.cosine_decay = true;
    options.seed = cfg->cfg.seed();
    const TrainResult result = train_plain_network(net, cfg->cfg.synth(), options);
    if (checkpoint_out != nullptr && checkpoint_out[0] != '\0') {
      net.store().save(checkpoint_out);
    }
    if (val_accuracy_out != nullptr) *val_accuracy_out = result.val_accuracy;
  });
}

s3n_status s3n_export_architecture(const s3n_supernet* sn, const char* checkpoint_path,
                                   unsigned long long seed, const char* arch_out_path) {
  return guarded([&] {
    SupernetModel model(sn->spec, seed);
    model.store().load(checkpoint_path);
    const auto configs = model.extract_canonical();
    save_architecture(architecture_from_decisions(sn->spec, configs), arch_out_path);
  });
}

s3n_status s3n_report(const char* const* summary_paths, size_t count, const char* csv_out_path) {
  return guarded([&] {
    std::string csv = "source,mode,latency_ms,val_accuracy,target_latency_ms\n";
    for (size_t i = 0; i < count; ++i) {
      const std::string path = summary_paths[i];
      ordered_json j;
      try {
        j = ordered_json::parse(read_text_file(path));
      } catch (const std::exception& e) {
        throw ConfigError("malformed summary '" + path + "': " + e.what());
      }
      std::string mode = "search";
      double latency = 0.0, accuracy = 0.0, target = 0.0;
      if (j.contains("mode")) {
        mode = j["mode"].get<std::string>();
        latency = j["best_latency_ms"].get<double>();
        accuracy = j["best_val_accuracy"].get<double>();
      } else {
        latency = j["estimated_latency_ms"].get<double>();
        accuracy = j["val_accuracy"].get<double>();
      }
      if (j.contains("target_latency_ms")) target = j["target_latency_ms"].get<double>();
      csv += path + "," + mode + "," + format_exact(latency) + "," + format_exact(accuracy) +
             "," + format_exact(target) + "\n";
    }
    write_text_file(csv_out_path, csv);
  });
}

}  // extern "C"
