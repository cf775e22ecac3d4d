// Command-line front end: train / eval / ablate / inspect / synth.
// Exit codes: 0 success, 2 usage or config error, 3 runtime failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fanet/config.hpp"
#include "fanet/metrics.hpp"
#include "fanet/trainer.hpp"

namespace fs = std::filesystem;

namespace {

struct TrainOverrides {
  std::string config_path;
  std::string output_dir;
  std::string variant;
  int64_t epochs = -1;
  int64_t seed = -1;
};

struct DatasetFlags {
  std::string images_dir, masks_dir;
  int64_t synthetic_count = 0;
  uint64_t synthetic_seed = 7;

  std::vector<fanet::SegmentationSample> load(int64_t input_size) const {
    std::vector<fanet::SegmentationSample> samples;
    if (synthetic_count > 0) {
      samples = fanet::synth_orange(synthetic_seed, synthetic_count,
                                    input_size);
    } else if (!images_dir.empty()) {
      samples = fanet::load_voc_dir(images_dir, masks_dir,
                                    fanet::default_palette());
      for (auto& s : samples) s = fanet::resize_sample(s, input_size);
    } else {
      throw fanet::ConfigError(
          "no dataset given: use --images/--masks or --synthetic-count");
    }
    if (samples.empty()) throw fanet::ConfigError("dataset is empty");
    return samples;
  }
};

const char* kMetricsHeader =
    "network\tpixel acc.\tmean acc.\tmean IU\tf.w. IU\tbackground\t"
    "blossom end\tstem end\tflaw\tulcer";

fanet::RunConfig load_with_overrides(const TrainOverrides& ov) {
  fanet::RunConfig cfg = fanet::load_run_config(ov.config_path);
  if (!ov.output_dir.empty()) cfg.output_dir = ov.output_dir;
  if (!ov.variant.empty()) cfg.arch.variant = fanet::parse_variant(ov.variant);
  if (ov.epochs >= 0) cfg.train.epochs = ov.epochs;
  if (ov.seed >= 0) {
    cfg.seed = static_cast<uint64_t>(ov.seed);
    cfg.train.seed = cfg.seed;
  }
  return cfg;
}

// Trains one model per the run config into out_dir; returns the final
// validation metrics when a validation set exists.
struct TrainOutcome {
  fanet::TrainReport report;
  bool has_metrics = false;
  fanet::SegMetrics metrics;
  int64_t param_count = 0;
};

TrainOutcome run_one_training(const fanet::RunConfig& cfg,
                              const fanet::LoadedData& data,
                              const std::string& out_dir) {
  fs::create_directories(out_dir);
  auto model = fanet::Model<float>::build(cfg.arch, cfg.seed);
  std::ofstream log(fs::path(out_dir) / "train_log.csv", std::ios::trunc);
  if (!log) throw fanet::DataError("cannot open train log in " + out_dir);
  TrainOutcome out;
  out.param_count = model.parameter_count();
  out.report = fanet::train(model, data.train, data.val, cfg.train,
                            cfg.augment, out_dir, &log);
  if (!data.val.empty()) {
    std::vector<fanet::SegmentationSample> val;
    for (const auto& s : data.val)
      val.push_back(fanet::resize_sample(s, cfg.arch.input_size));
    auto cm = fanet::evaluate_model(model, val, cfg.train.batch_size);
    out.metrics = fanet::compute_metrics(cm);
    out.has_metrics = true;
  }
  return out;
}

int cmd_train(const TrainOverrides& ov) {
  fanet::RunConfig cfg = load_with_overrides(ov);
  fs::create_directories(cfg.output_dir);
  fanet::write_run_config(
      (fs::path(cfg.output_dir) / "config.json").string(), cfg);
  fanet::LoadedData data = fanet::load_data(cfg.data);
  TrainOutcome out = run_one_training(cfg, data, cfg.output_dir);
  std::cout << "trained " << fanet::variant_name(cfg.arch.variant) << " for "
            << cfg.train.epochs << " epochs (" << out.report.steps.size()
            << " steps)\n";
  if (!out.report.final_checkpoint.empty())
    std::cout << "final checkpoint: " << out.report.final_checkpoint << "\n";
  if (!out.report.best_checkpoint.empty())
    std::cout << "best checkpoint:  " << out.report.best_checkpoint
              << " (mean IU " << out.report.best_mean_iu << " at epoch "
              << out.report.best_epoch << ")\n";
  if (out.has_metrics) {
    std::ofstream mf(fs::path(cfg.output_dir) / "metrics.txt",
                     std::ios::trunc);
    mf << kMetricsHeader << "\n"
       << fanet::format_metrics_row(fanet::variant_name(cfg.arch.variant),
                                    out.metrics)
       << "\n";
    std::cout << kMetricsHeader << "\n"
              << fanet::format_metrics_row(
                     fanet::variant_name(cfg.arch.variant), out.metrics)
              << "\n";
  }
  return 0;
}

int cmd_eval(const std::string& checkpoint, const DatasetFlags& dflags,
             const std::string& out_dir) {
  auto model = fanet::load_checkpoint<float>(checkpoint);
  auto samples = dflags.load(model.spec.input_size);
  auto cm = fanet::evaluate_model(model, samples);
  auto metrics = fanet::compute_metrics(cm);
  std::cout << kMetricsHeader << "\n"
            << fanet::format_metrics_row(
                   fanet::variant_name(model.spec.variant), metrics)
            << "\n";
  auto prf = fanet::prf_matrices(cm);
  fs::create_directories(out_dir);
  fanet::write_matrix_csv((fs::path(out_dir) / "precision.csv").string(),
                          prf.k, prf.precision);
  fanet::write_matrix_csv((fs::path(out_dir) / "recall.csv").string(),
                          prf.k, prf.recall);
  fanet::write_matrix_csv((fs::path(out_dir) / "f1.csv").string(), prf.k,
                          prf.f1);
  std::cout << "wrote precision/recall/f1 CSVs to " << out_dir << "\n";
  return 0;
}

int cmd_ablate(const TrainOverrides& ov) {
  fanet::RunConfig base = load_with_overrides(ov);
  fanet::LoadedData data = fanet::load_data(base.data);
  if (data.val.empty())
    throw fanet::ConfigError("ablate needs a validation set for the report");
  fs::create_directories(base.output_dir);
  fanet::write_run_config(
      (fs::path(base.output_dir) / "config.json").string(), base);

  // Table-3 row order. One seed: every variant starts from the identical
  // backbone initialization.
  const fanet::Variant variants[] = {
      fanet::Variant::unet_se, fanet::Variant::unet, fanet::Variant::fanet_i,
      fanet::Variant::fanet_s, fanet::Variant::fanet};
  std::string report_path =
      (fs::path(base.output_dir) / "ablation_report.txt").string();
  std::ofstream rf(report_path, std::ios::trunc);
  rf << "network\tFIAM\tFSAM\tparams\tpixel acc.\tmean acc.\tmean IU\t"
        "f.w. IU\tbackground\tblossom end\tstem end\tflaw\tulcer\n";
  for (fanet::Variant v : variants) {
    fanet::RunConfig cfg = base;
    cfg.arch.variant = v;
    std::string sub =
        (fs::path(base.output_dir) / fanet::variant_name(v)).string();
    TrainOutcome out = run_one_training(cfg, data, sub);
    char row[64];
    std::snprintf(row, sizeof row, "%s\t%s\t%s\t%lld\t",
                  fanet::variant_name(v),
                  fanet::variant_has_fiam(v) ? "✓" : "✗",
                  fanet::variant_has_fsam(v) ? "✓" : "✗",
                  static_cast<long long>(out.param_count));
    std::string metrics_row =
        fanet::format_metrics_row(fanet::variant_name(v), out.metrics);
    // format_metrics_row starts with the name; strip it for this table
    std::string tail = metrics_row.substr(metrics_row.find('\t') + 1);
    rf << row << tail << "\n";
    std::cout << "ablate: " << fanet::variant_name(v) << " done (params "
              << out.param_count << ", mean IU " << out.metrics.mean_iu * 100
              << ")\n";
  }
  std::cout << "report: " << report_path << "\n";
  return 0;
}

int cmd_inspect(const std::string& checkpoint, const DatasetFlags& dflags,
                const std::string& out_dir, std::string module_id,
                const std::vector<int64_t>& channels_in) {
  auto model = fanet::load_checkpoint<float>(checkpoint);
  if (!fanet::variant_has_fiam(model.spec.variant) &&
      !fanet::variant_has_fsam(model.spec.variant)) {
    std::cout << "no attention modules in variant "
              << fanet::variant_name(model.spec.variant) << "; nothing to "
              << "inspect\n";
    return 0;
  }
  auto samples = dflags.load(model.spec.input_size);
  fs::create_directories(out_dir);

  auto stats = fanet::collect_attention_stats(model, samples);
  // One CSV per FSAM instance, one combined CSV for the FIAM instance.
  std::vector<const fanet::SiteStats*> fiam_sites;
  for (const auto& st : stats) {
    if (st.site.rfind("fsam", 0) == 0)
      fanet::write_site_stats_csv(
          (fs::path(out_dir) / (st.site + ".csv")).string(), {&st});
    else
      fiam_sites.push_back(&st);
  }
  if (!fiam_sites.empty())
    fanet::write_site_stats_csv((fs::path(out_dir) / "fiam.csv").string(),
                                fiam_sites);

  if (module_id.empty())
    module_id =
        fanet::variant_has_fsam(model.spec.variant) ? "fsam4" : "fiam4";
  std::vector<int64_t> channels = channels_in;
  if (channels.empty()) {
    // Fig.-9-style default: 4th to 6th channel, clamped to the width.
    int64_t c = model.spec.decoder_widths().back();
    for (int64_t ch : {4, 5, 6})
      if (ch < c) channels.push_back(ch);
    if (channels.empty()) channels.push_back(0);
  }
  fanet::export_excitation_maps(model, samples[0], module_id, channels,
                                (fs::path(out_dir) / "maps").string());
  std::cout << "wrote " << stats.size() << " site stats groups and "
            << channels.size() << " channel map sets for " << module_id
            << " to " << out_dir << "\n";
  return 0;
}

int cmd_synth(uint64_t seed, int64_t count, int64_t size,
              const std::string& out_dir) {
  auto samples = fanet::synth_orange(seed, count, size);
  fanet::save_voc_dir(out_dir, samples, fanet::default_palette());
  std::cout << "wrote " << samples.size() << " samples (" << size << "x"
            << size << ") to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fastidious attention segmentation experiments"};
  app.require_subcommand(1);

  TrainOverrides train_ov;
  CLI::App* train_cmd = app.add_subcommand("train", "train one model");
  train_cmd->add_option("--config", train_ov.config_path, "run config JSON")
      ->required();
  train_cmd->add_option("--output-dir", train_ov.output_dir,
                        "override output directory");
  train_cmd->add_option("--variant", train_ov.variant,
                        "override architecture variant");
  train_cmd->add_option("--epochs", train_ov.epochs, "override epoch count");
  train_cmd->add_option("--seed", train_ov.seed, "override seed");

  std::string eval_ckpt, eval_out = "eval_out";
  DatasetFlags eval_data;
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")
      ->required();
  eval_cmd->add_option("--images", eval_data.images_dir, "images directory");
  eval_cmd->add_option("--masks", eval_data.masks_dir, "masks directory");
  eval_cmd->add_option("--synthetic-count", eval_data.synthetic_count,
                       "evaluate on N synthetic samples");
  eval_cmd->add_option("--synthetic-seed", eval_data.synthetic_seed,
                       "synthetic dataset seed");
  eval_cmd->add_option("--out", eval_out, "directory for P/R/F1 CSVs");

  TrainOverrides ablate_ov;
  CLI::App* ablate_cmd = app.add_subcommand(
      "ablate", "train all five variants under one seed and dataset");
  ablate_cmd->add_option("--config", ablate_ov.config_path, "run config JSON")
      ->required();
  ablate_cmd->add_option("--output-dir", ablate_ov.output_dir,
                         "override output directory");
  ablate_cmd->add_option("--epochs", ablate_ov.epochs,
                         "override epoch count");
  ablate_cmd->add_option("--seed", ablate_ov.seed, "override seed");

  std::string inspect_ckpt, inspect_out = "inspect_out", inspect_module;
  std::vector<int64_t> inspect_channels;
  DatasetFlags inspect_data;
  CLI::App* inspect_cmd = app.add_subcommand(
      "inspect", "attention statistics and excitation maps");
  inspect_cmd->add_option("--checkpoint", inspect_ckpt, "checkpoint file")
      ->required();
  inspect_cmd->add_option("--images", inspect_data.images_dir,
                          "images directory");
  inspect_cmd->add_option("--masks", inspect_data.masks_dir,
                          "masks directory");
  inspect_cmd->add_option("--synthetic-count", inspect_data.synthetic_count,
                          "inspect over N synthetic samples");
  inspect_cmd->add_option("--synthetic-seed", inspect_data.synthetic_seed,
                          "synthetic dataset seed");
  inspect_cmd->add_option("--out", inspect_out, "output directory");
  inspect_cmd->add_option("--module", inspect_module,
                          "excitation site to export (e.g. fsam4)");
  inspect_cmd->add_option("--channels", inspect_channels,
                          "channel indices to export");

  uint64_t synth_seed = 7;
  int64_t synth_count = 64, synth_size = 96;
  std::string synth_out;
  CLI::App* synth_cmd =
      app.add_subcommand("synth", "generate a synthetic dataset");
  synth_cmd->add_option("--seed", synth_seed, "generator seed");
  synth_cmd->add_option("--count", synth_count, "sample count");
  synth_cmd->add_option("--size", synth_size, "image size (multiple of 16)");
  synth_cmd->add_option("--out", synth_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(train_ov);
    if (eval_cmd->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_out);
    if (ablate_cmd->parsed()) return cmd_ablate(ablate_ov);
    if (inspect_cmd->parsed())
      return cmd_inspect(inspect_ckpt, inspect_data, inspect_out,
                         inspect_module, inspect_channels);
    if (synth_cmd->parsed())
      return cmd_synth(synth_seed, synth_count, synth_size, synth_out);
  } catch (const fanet::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const fanet::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
