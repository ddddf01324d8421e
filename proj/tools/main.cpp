// s3nas command-line interface. All functionality goes through the C API in
// s3nas/s3nas.h; this translation unit only parses flags and routes files.
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "s3nas/s3nas.h"

namespace {

struct ConfigHandle {
  s3n_config* ptr = nullptr;
  ~ConfigHandle() { s3n_config_free(ptr); }
};
struct SupernetHandle {
  s3n_supernet* ptr = nullptr;
  ~SupernetHandle() { s3n_supernet_free(ptr); }
};
struct ArchHandle {
  s3n_arch* ptr = nullptr;
  ~ArchHandle() { s3n_arch_free(ptr); }
};
struct TableHandle {
  s3n_latency_table* ptr = nullptr;
  ~TableHandle() { s3n_latency_table_free(ptr); }
};

struct StringHandle {
  char* ptr = nullptr;
  ~StringHandle() { s3n_string_free(ptr); }
};

[[noreturn]] void fail(s3n_status status) {
  std::fprintf(stderr, "error code=%d: %s\n", static_cast<int>(status), s3n_last_error());
  std::exit(static_cast<int>(status));
}

void check(s3n_status status) {
  if (status != S3N_OK) fail(status);
}

// Shared options: --config plus repeated --set key=value overrides and the
// --seed shortcut.
struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  long long seed = -1;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "config file (JSON)");
    cmd->add_option("--set", overrides, "override config entries, e.g. --set search.lambda1=0");
    cmd->add_option("--seed", seed, "override the config seed");
  }

  s3n_config* make_config() const {
    s3n_config* cfg = nullptr;
    if (config_path.empty()) {
      check(s3n_config_default(&cfg));
    } else {
      check(s3n_config_load(config_path.c_str(), &cfg));
    }
    for (const auto& kv : overrides) {
      const std::size_t eq = kv.find('=');
      if (eq == std::string::npos) {
        s3n_config_free(cfg);
        std::fprintf(stderr, "error code=2: --set expects key=value, got '%s'\n", kv.c_str());
        std::exit(2);
      }
      const s3n_status status =
          s3n_config_set(cfg, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str());
      if (status != S3N_OK) {
        s3n_config_free(cfg);
        fail(status);
      }
    }
    if (seed >= 0) {
      const s3n_status status = s3n_config_set(cfg, "seed", std::to_string(seed).c_str());
      if (status != S3N_OK) {
        s3n_config_free(cfg);
        fail(status);
      }
    }
    return cfg;
  }
};

s3n_supernet* load_supernet_or_config(const std::string& path, const s3n_config* cfg) {
  s3n_supernet* sn = nullptr;
  if (path.empty()) {
    check(s3n_supernet_from_config(cfg, &sn));
  } else {
    check(s3n_supernet_load(path.c_str(), &sn));
  }
  return sn;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"s3nas: NPU-aware neural architecture search"};
  app.require_subcommand(1);

  // ----- supernet ----------------------------------------------------------
  auto* supernet_cmd = app.add_subcommand("supernet", "supernet construction and validation");
  supernet_cmd->require_subcommand(1);

  CommonOptions init_opts;
  std::string init_out = "supernet.json";
  bool init_default = false;
  auto* init_cmd = supernet_cmd->add_subcommand("init", "write a supernet file");
  init_opts.attach(init_cmd);
  init_cmd->add_option("-o,--output", init_out, "output path");
  init_cmd->add_flag("--default", init_default, "use the full-size default space");
  init_cmd->callback([&] {
    ConfigHandle cfg{init_opts.make_config()};
    SupernetHandle sn;
    if (init_default) {
      check(s3n_supernet_default(&sn.ptr));
    } else {
      check(s3n_supernet_from_config(cfg.ptr, &sn.ptr));
    }
    check(s3n_supernet_save(sn.ptr, init_out.c_str()));
    StringHandle report;
    check(s3n_supernet_linear_depth_report(sn.ptr, &report.ptr));
    std::printf("wrote %s\n%s", init_out.c_str(), report.ptr);
  });

  std::string validate_file;
  std::string validate_supernet;
  auto* validate_cmd =
      supernet_cmd->add_subcommand("validate", "validate an architecture or supernet file");
  validate_cmd->add_option("file", validate_file, "file to validate")->required();
  validate_cmd->add_option("--supernet", validate_supernet,
                           "check architecture decisions against this supernet");
  validate_cmd->callback([&] {
    SupernetHandle sn;
    if (!validate_supernet.empty()) check(s3n_supernet_load(validate_supernet.c_str(), &sn.ptr));
    StringHandle report;
    check(s3n_validate_file(validate_file.c_str(), sn.ptr, &report.ptr));
    std::printf("%s", report.ptr);
  });

  // ----- latency ------------------------------------------------------------
  auto* latency_cmd = app.add_subcommand("latency", "latency tables and estimates");
  latency_cmd->require_subcommand(1);

  CommonOptions table_opts;
  std::string table_supernet;
  std::string table_out = "latency_table.csv";
  auto* table_cmd = latency_cmd->add_subcommand("table", "build a latency table");
  table_opts.attach(table_cmd);
  table_cmd->add_option("--supernet", table_supernet, "supernet file (default: from config)");
  table_cmd->add_option("-o,--output", table_out, "output CSV path");
  table_cmd->callback([&] {
    ConfigHandle cfg{table_opts.make_config()};
    SupernetHandle sn{load_supernet_or_config(table_supernet, cfg.ptr)};
    TableHandle table;
    check(s3n_latency_table_build(sn.ptr, cfg.ptr, &table.ptr));
    check(s3n_latency_table_save(table.ptr, table_out.c_str()));
    std::printf("wrote %s\n", table_out.c_str());
  });

  CommonOptions estimate_opts;
  std::string estimate_arch;
  std::string estimate_table;
  auto* estimate_cmd = latency_cmd->add_subcommand("estimate", "estimate network latency");
  estimate_opts.attach(estimate_cmd);
  estimate_cmd->add_option("--arch", estimate_arch, "architecture file")->required();
  estimate_cmd->add_option("--table", estimate_table,
                           "latency table CSV (default: cost model from config)");
  estimate_cmd->callback([&] {
    ConfigHandle cfg{estimate_opts.make_config()};
    ArchHandle arch;
    check(s3n_arch_load(estimate_arch.c_str(), &arch.ptr));
    double ms = 0.0;
    if (estimate_table.empty()) {
      check(s3n_latency_estimate_model(arch.ptr, cfg.ptr, &ms));
    } else {
      TableHandle table;
      check(s3n_latency_table_load(estimate_table.c_str(), &table.ptr));
      check(s3n_latency_estimate(arch.ptr, table.ptr, &ms));
    }
    std::printf("estimated_latency_ms %.9g\n", ms);
  });

  CommonOptions vm_opts;
  std::string vm_supernet;
  int vm_samples = 100;
  auto* vm_cmd = latency_cmd->add_subcommand(
      "validate-model", "compare the analytical model against the simulator");
  vm_opts.attach(vm_cmd);
  vm_cmd->add_option("--supernet", vm_supernet, "supernet file (default: from config)");
  vm_cmd->add_option("--samples", vm_samples, "number of random architectures");
  vm_cmd->callback([&] {
    ConfigHandle cfg{vm_opts.make_config()};
    SupernetHandle sn{load_supernet_or_config(vm_supernet, cfg.ptr)};
    double mape = 0.0;
    check(s3n_latency_validate_model(sn.ptr, cfg.ptr, vm_samples, &mape));
    std::printf("MAPE %.4f%% over %d architectures (analytical vs simulator)\n", mape,
                vm_samples);
  });

  // ----- search --------------------------------------------------------------
  auto* search_cmd = app.add_subcommand("search", "single-path differentiable search");
  search_cmd->require_subcommand(1);

  CommonOptions run_opts;
  std::string run_supernet;
  std::string run_table;
  std::string run_out = "search_out";
  auto* run_cmd = search_cmd->add_subcommand("run", "run the two-phase search");
  run_opts.attach(run_cmd);
  run_cmd->add_option("--supernet", run_supernet, "supernet file (default: from config)");
  run_cmd->add_option("--table", run_table, "latency table CSV (default: built from config)");
  run_cmd->add_option("-o,--output", run_out, "output directory");
  run_cmd->callback([&] {
    ConfigHandle cfg{run_opts.make_config()};
    SupernetHandle sn{load_supernet_or_config(run_supernet, cfg.ptr)};
    TableHandle table;
    if (run_table.empty()) {
      check(s3n_latency_table_build(sn.ptr, cfg.ptr, &table.ptr));
    } else {
      check(s3n_latency_table_load(run_table.c_str(), &table.ptr));
    }
    check(s3n_search_run(sn.ptr, cfg.ptr, table.ptr, run_out.c_str()));
    std::printf("wrote %s/architecture.json %s/metrics.csv %s/summary.json\n", run_out.c_str(),
                run_out.c_str(), run_out.c_str());
  });

  // ----- baselines -------------------------------------------------------------
  auto* baseline_cmd = app.add_subcommand("baseline", "random baselines");
  baseline_cmd->require_subcommand(1);
  for (const bool full : {false, true}) {
    auto* cmd = baseline_cmd->add_subcommand(
        full ? "random-selection" : "random-search",
        full ? "train every random model fully, keep the best"
             : "proxy-train random models, keep the best");
    auto opts = std::make_shared<CommonOptions>();
    auto sn_path = std::make_shared<std::string>();
    auto table_path = std::make_shared<std::string>();
    auto out_dir = std::make_shared<std::string>(full ? "random_selection_out" : "random_search_out");
    opts->attach(cmd);
    cmd->add_option("--supernet", *sn_path, "supernet file (default: from config)");
    cmd->add_option("--table", *table_path, "latency table CSV (default: built from config)");
    cmd->add_option("-o,--output", *out_dir, "output directory");
    cmd->callback([opts, sn_path, table_path, out_dir, full] {
      ConfigHandle cfg{opts->make_config()};
      SupernetHandle sn{load_supernet_or_config(*sn_path, cfg.ptr)};
      TableHandle table;
      if (table_path->empty()) {
        check(s3n_latency_table_build(sn.ptr, cfg.ptr, &table.ptr));
      } else {
        check(s3n_latency_table_load(table_path->c_str(), &table.ptr));
      }
      check(s3n_baseline_run(sn.ptr, cfg.ptr, table.ptr, full ? 1 : 0, out_dir->c_str()));
      std::printf("wrote %s/best_architecture.json %s/summary.json\n", out_dir->c_str(),
                  out_dir->c_str());
    });
  }

  // ----- scale -----------------------------------------------------------------
  CommonOptions scale_opts;
  std::string scale_arch;
  std::string scale_out = "scaled_architecture.json";
  auto* scale_cmd = app.add_subcommand("scale", "compound-scale an architecture");
  scale_opts.attach(scale_cmd);
  scale_cmd->add_option("--arch", scale_arch, "architecture file")->required();
  scale_cmd->add_option("-o,--output", scale_out, "output path");
  scale_cmd->callback([&] {
    ConfigHandle cfg{scale_opts.make_config()};
    ArchHandle arch;
    check(s3n_arch_load(scale_arch.c_str(), &arch.ptr));
    ArchHandle scaled;
    StringHandle report;
    check(s3n_scale(arch.ptr, cfg.ptr, &scaled.ptr, &report.ptr));
    check(s3n_arch_save(scaled.ptr, scale_out.c_str()));
    std::printf("wrote %s\n%s", scale_out.c_str(), report.ptr);
  });

  // ----- postprocess --------------------------------------------------------------
  auto* post_cmd = app.add_subcommand("postprocess", "SE and h-swish post-processing");
  post_cmd->require_subcommand(1);

  std::string addse_arch;
  std::string addse_out = "architecture_se.json";
  auto* addse_cmd = post_cmd->add_subcommand("add-se", "enable SE everywhere, swap in h-swish");
  addse_cmd->add_option("--arch", addse_arch, "architecture file")->required();
  addse_cmd->add_option("-o,--output", addse_out, "output path");
  addse_cmd->callback([&] {
    ArchHandle arch;
    check(s3n_arch_load(addse_arch.c_str(), &arch.ptr));
    ArchHandle out;
    check(s3n_add_se_hswish(arch.ptr, &out.ptr));
    check(s3n_arch_save(out.ptr, addse_out.c_str()));
    std::printf("wrote %s\n", addse_out.c_str());
  });

  CommonOptions disp_opts;
  std::string disp_arch;
  std::string disp_checkpoint;
  std::string disp_out = "dispersion.csv";
  double disp_train_epochs = 0.0;
  auto* disp_cmd = post_cmd->add_subcommand("dispersion", "measure SE excitation dispersion");
  disp_opts.attach(disp_cmd);
  disp_cmd->add_option("--arch", disp_arch, "architecture file")->required();
  disp_cmd->add_option("--checkpoint", disp_checkpoint, "trained checkpoint for this architecture");
  disp_cmd->add_option("--train-epochs", disp_train_epochs,
                       "train in place for this many epochs when no checkpoint is given");
  disp_cmd->add_option("-o,--output", disp_out, "output CSV path");
  disp_cmd->callback([&] {
    ConfigHandle cfg{disp_opts.make_config()};
    ArchHandle arch;
    check(s3n_arch_load(disp_arch.c_str(), &arch.ptr));
    std::string checkpoint = disp_checkpoint;
    if (checkpoint.empty() && disp_train_epochs > 0.0) {
      checkpoint = disp_out + ".ckpt";
      double accuracy = 0.0;
      check(s3n_train_architecture(arch.ptr, cfg.ptr, disp_train_epochs, checkpoint.c_str(),
                                   &accuracy));
      std::printf("trained for dispersion: val_accuracy %.4f\n", accuracy);
    }
    check(s3n_se_dispersion(arch.ptr, checkpoint.c_str(), cfg.ptr, disp_out.c_str()));
    std::printf("wrote %s\n", disp_out.c_str());
  });

  std::string rmse_arch;
  std::string rmse_report;
  std::string rmse_out = "architecture_rmse.json";
  double rmse_keep = 0.6;
  auto* rmse_cmd = post_cmd->add_subcommand("remove-se", "drop low-dispersion SE blocks");
  rmse_cmd->add_option("--arch", rmse_arch, "architecture file")->required();
  rmse_cmd->add_option("--report", rmse_report, "dispersion report CSV")->required();
  rmse_cmd->add_option("--keep", rmse_keep, "fraction of SE blocks to keep");
  rmse_cmd->add_option("-o,--output", rmse_out, "output path");
  rmse_cmd->callback([&] {
    ArchHandle arch;
    check(s3n_arch_load(rmse_arch.c_str(), &arch.ptr));
    ArchHandle out;
    check(s3n_remove_se(arch.ptr, rmse_report.c_str(), rmse_keep, &out.ptr));
    check(s3n_arch_save(out.ptr, rmse_out.c_str()));
    std::printf("wrote %s\n", rmse_out.c_str());
  });

  // ----- export ---------------------------------------------------------------
  CommonOptions export_opts;
  std::string export_supernet;
  std::string export_checkpoint;
  std::string export_out = "architecture.json";
  auto* export_cmd =
      app.add_subcommand("export", "extract the decided architecture from a supernet checkpoint");
  export_opts.attach(export_cmd);
  export_cmd->add_option("--supernet", export_supernet, "supernet file (default: from config)");
  export_cmd->add_option("--checkpoint", export_checkpoint, "supernet checkpoint")->required();
  export_cmd->add_option("-o,--output", export_out, "output path");
  export_cmd->callback([&] {
    ConfigHandle cfg{export_opts.make_config()};
    SupernetHandle sn{load_supernet_or_config(export_supernet, cfg.ptr)};
    StringHandle dump;
    check(s3n_config_dump(cfg.ptr, &dump.ptr));
    // Seed must match the checkpoint's training run for the model layout.
    unsigned long long seed = 1;
    {
      const std::string text = dump.ptr;
      const std::size_t pos = text.find("\"seed\": ");
      if (pos != std::string::npos) seed = std::strtoull(text.c_str() + pos + 8, nullptr, 10);
    }
    check(s3n_export_architecture(sn.ptr, export_checkpoint.c_str(), seed, export_out.c_str()));
    std::printf("wrote %s\n", export_out.c_str());
  });

  // ----- report ---------------------------------------------------------------
  std::vector<std::string> report_inputs;
  std::string report_out = "report.csv";
  auto* report_cmd = app.add_subcommand("report", "aggregate summaries into accuracy-vs-latency CSV");
  report_cmd->add_option("--inputs", report_inputs, "summary JSON files")->required();
  report_cmd->add_option("-o,--output", report_out, "output CSV path");
  report_cmd->callback([&] {
    std::vector<const char*> paths;
    for (const auto& p : report_inputs) paths.push_back(p.c_str());
    check(s3n_report(paths.data(), paths.size(), report_out.c_str()));
    std::printf("wrote %s\n", report_out.c_str());
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return 0;  // --help
    std::fprintf(stderr, "error code=2: %s\n", e.what());
    return 2;
  }
  return 0;
}
