// SPDX-License-Identifier: Apache-2.0
//
// geomae command line: synthetic data generation, mask fabrication,
// training, grid evaluation, ablations, reporting, and dataset statistics.
// Exit codes: 0 success, 1 usage error, 2 runtime failure.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "geomae/data.hpp"
#include "geomae/harness.hpp"
#include "geomae/masking.hpp"
#include "geomae/rng.hpp"

namespace fs = std::filesystem;
using namespace geomae;

namespace {

void log_line(const std::string& msg) { std::cout << msg << "\n" << std::flush; }

Dataset load_dir(const std::string& dir) {
  return load_dataset(dir + "/data.csv", dir + "/schema.cfg");
}

std::vector<double> parse_doubles(const std::string& csv) {
  std::vector<double> out;
  std::istringstream is(csv);
  std::string item;
  while (std::getline(is, item, ',')) out.push_back(std::stod(item));
  return out;
}

std::vector<MaskPattern> parse_patterns(const std::string& csv) {
  std::vector<MaskPattern> out;
  std::istringstream is(csv);
  std::string item;
  while (std::getline(is, item, ',')) out.push_back(pattern_from_name(item));
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write '" + path + "'");
  os << text;
}

std::string read_text(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << is.rdbuf();
  return buf.str();
}

void write_history(const std::string& path, const std::vector<EpochStats>& history) {
  std::ostringstream os;
  os << "epoch,train_total,train_reg,train_mae_aux,val_mae,val_rmse,val_smape\n";
  os.precision(17);
  for (const auto& e : history) {
    os << e.epoch << "," << e.train_total << "," << e.train_reg << "," << e.train_mae_aux
       << "," << e.val_mae << "," << e.val_rmse << "," << e.val_smape << "\n";
  }
  write_text(path, os.str());
}

TrainConfig config_from_options(const std::string& config_path, std::int64_t seed_override) {
  TrainConfig cfg = config_path.empty()
                        ? TrainConfig{}
                        : TrainConfig::from_config(ConfigMap::load(config_path));
  if (seed_override >= 0) {
    cfg.seed = static_cast<std::uint64_t>(seed_override);
    cfg.mask_train.seed = cfg.seed;
  }
  return cfg;
}

int run(int argc, char** argv) {
  CLI::App app{"spatio-temporal forecaster robust to missing values"};
  app.require_subcommand(1);

  // --- synth ---
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  int synth_nodes = 8, synth_features = 3;
  std::int64_t synth_hours = 2000;
  std::uint64_t synth_seed = 1;
  double synth_noise = 0.1;
  std::string synth_out;
  synth->add_option("--nodes", synth_nodes, "number of stations");
  synth->add_option("--hours", synth_hours, "number of hourly steps");
  synth->add_option("--features", synth_features, "features per station");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--noise", synth_noise, "observation noise std");
  synth->add_option("--out-dir", synth_out, "output directory")->required();

  // --- masks ---
  auto* masks = app.add_subcommand("masks", "fabricate and export a missing mask");
  std::string masks_pattern = "point", masks_out;
  double masks_rate = 0.5;
  int masks_nodes = 8, masks_steps = 12, masks_features = 3;
  int masks_min_len = 2, masks_max_len = 0;
  std::uint64_t masks_seed = 0;
  masks->add_option("--pattern", masks_pattern, "point|row|column|block");
  masks->add_option("--rate", masks_rate, "target missing rate");
  masks->add_option("--nodes", masks_nodes, "node extent");
  masks->add_option("--steps", masks_steps, "time extent");
  masks->add_option("--features", masks_features, "feature extent");
  masks->add_option("--seed", masks_seed, "mask seed");
  masks->add_option("--min-len", masks_min_len, "block: minimum span length");
  masks->add_option("--max-len", masks_max_len, "block: maximum span length (0 = window)");
  masks->add_option("--out", masks_out, "output mask file")->required();

  // --- train ---
  auto* train_cmd = app.add_subcommand("train", "train a model");
  std::string train_data, train_config, train_out, train_resume;
  std::int64_t train_seed = -1;
  train_cmd->add_option("--data-dir", train_data, "directory with data.csv + schema.cfg")
      ->required();
  train_cmd->add_option("--config", train_config, "key=value config file");
  train_cmd->add_option("--seed", train_seed, "seed override");
  train_cmd->add_option("--out-dir", train_out, "output directory")->required();
  train_cmd->add_option("--resume", train_resume, "checkpoint to resume from");

  // --- eval ---
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint over a scenario grid");
  std::string eval_ckpt, eval_data, eval_out;
  std::string eval_patterns = "point,block", eval_rates = "0.25,0.5,0.75,0.9";
  int eval_seeds = 3;
  std::uint64_t eval_seed_base = 1234;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--data-dir", eval_data, "dataset directory")->required();
  eval_cmd->add_option("--patterns", eval_patterns, "comma list of corruption patterns");
  eval_cmd->add_option("--rates", eval_rates, "comma list of missing rates");
  eval_cmd->add_option("--eval-seeds", eval_seeds, "seeds per scenario");
  eval_cmd->add_option("--seed", eval_seed_base, "base seed for scenario masks");
  eval_cmd->add_option("--out", eval_out, "result csv path")->required();

  // --- ablate ---
  auto* ablate_cmd = app.add_subcommand("ablate", "train and evaluate an ablation variant");
  std::string abl_data, abl_config, abl_variant = "full", abl_out;
  std::string abl_patterns = "point", abl_rates = "0.25,0.5,0.75,0.9";
  int abl_seeds = 3;
  std::int64_t abl_seed = -1;
  std::uint64_t abl_seed_base = 1234;
  ablate_cmd->add_option("--data-dir", abl_data, "dataset directory")->required();
  ablate_cmd->add_option("--config", abl_config, "key=value config file");
  ablate_cmd->add_option("--variant", abl_variant, "full|fixed-rate|no-hint|mask01");
  ablate_cmd->add_option("--seed", abl_seed, "training seed override");
  ablate_cmd->add_option("--patterns", abl_patterns, "corruption patterns for the grid");
  ablate_cmd->add_option("--rates", abl_rates, "missing rates for the grid");
  ablate_cmd->add_option("--eval-seeds", abl_seeds, "seeds per scenario");
  ablate_cmd->add_option("--eval-seed-base", abl_seed_base, "base seed for scenario masks");
  ablate_cmd->add_option("--out-dir", abl_out, "output directory")->required();

  // --- report ---
  auto* report_cmd = app.add_subcommand("report", "aggregate result rows into tables/plots");
  std::vector<std::string> report_in;
  std::string report_out;
  report_cmd->add_option("--in", report_in, "result csv file(s)")->required();
  report_cmd->add_option("--out-dir", report_out, "output directory")->required();

  // --- stats ---
  auto* stats_cmd = app.add_subcommand("stats", "per-station missing-rate summary");
  std::string stats_data;
  stats_cmd->add_option("--data-dir", stats_data, "dataset directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  if (synth->parsed()) {
    fs::create_directories(synth_out);
    Dataset ds = synth_generate(synth_nodes, synth_hours, synth_features, synth_seed,
                                synth_noise);
    write_dataset(ds, synth_out + "/data.csv", synth_out + "/schema.cfg");
    std::cout << "wrote " << synth_out << "/data.csv: " << ds.n_nodes() << " stations x "
              << ds.n_steps() << " steps x " << ds.n_features() << " features\n";
    return 0;
  }

  if (masks->parsed()) {
    RandomStream rng(masks_seed);
    Tensor m = gen_mask(pattern_from_name(masks_pattern),
                        {masks_nodes, masks_steps, masks_features}, masks_rate, rng,
                        masks_min_len, masks_max_len);
    if (auto dir = fs::path(masks_out).parent_path(); !dir.empty()) {
      fs::create_directories(dir);
    }
    write_mask_file(masks_out, m);
    std::printf("wrote %s: pattern=%s requested=%.4f realized=%.4f\n", masks_out.c_str(),
                masks_pattern.c_str(), masks_rate, missing_fraction(m));
    return 0;
  }

  if (train_cmd->parsed()) {
    fs::create_directories(train_out);
    Dataset ds = load_dir(train_data);
    TrainConfig cfg = config_from_options(train_config, train_seed);
    std::optional<Checkpoint> resume;
    if (!train_resume.empty()) {
      resume = Checkpoint::load(train_resume);
      // without an explicit config, continue under the checkpoint's own
      if (train_config.empty()) cfg = resume->config;
    }
    TrainResult res = train(cfg, ds, resume, log_line);
    res.checkpoint.save(train_out + "/checkpoint.bin");
    write_history(train_out + "/history.csv", res.history);
    res.checkpoint.config.to_config().save(train_out + "/config.cfg");
    std::cout << "best val_mae=" << res.checkpoint.best_val_mae << " after "
              << res.checkpoint.completed_epochs << " epochs"
              << (res.early_stopped ? " (early stop)" : "") << "\n";
    return 0;
  }

  if (eval_cmd->parsed()) {
    Checkpoint ckpt = Checkpoint::load(eval_ckpt);
    Dataset ds = load_dir(eval_data);
    auto patterns = parse_patterns(eval_patterns);
    auto rates = parse_doubles(eval_rates);
    auto scenarios = scenario_grid(patterns, rates, eval_seeds, eval_seed_base);
    auto rows = evaluate_grid(ckpt, ds, scenarios);
    if (auto dir = fs::path(eval_out).parent_path(); !dir.empty()) {
      fs::create_directories(dir);
    }
    write_text(eval_out, result_rows_to_csv(rows));
    std::cout << aggregate_table(rows);
    return 0;
  }

  if (ablate_cmd->parsed()) {
    fs::create_directories(abl_out);
    Dataset ds = load_dir(abl_data);
    TrainConfig cfg =
        config_from_options(abl_config, abl_seed).with_variant(variant_from_name(abl_variant));
    auto patterns = parse_patterns(abl_patterns);
    auto rates = parse_doubles(abl_rates);
    auto scenarios = scenario_grid(patterns, rates, abl_seeds, abl_seed_base);

    TrainResult res = train(cfg, ds, std::nullopt, log_line);
    res.checkpoint.save(abl_out + "/checkpoint.bin");
    write_history(abl_out + "/history.csv", res.history);
    auto rows = evaluate_grid(res.checkpoint, ds, scenarios);
    write_text(abl_out + "/results.csv", result_rows_to_csv(rows));
    std::cout << aggregate_table(rows);
    return 0;
  }

  if (report_cmd->parsed()) {
    fs::create_directories(report_out);
    std::vector<ResultRow> rows;
    for (const auto& path : report_in) {
      auto part = result_rows_from_csv(read_text(path));
      rows.insert(rows.end(), part.begin(), part.end());
    }
    const std::string table = aggregate_table(rows);
    write_text(report_out + "/table.txt", table);
    std::cout << table;
    for (const std::string metric : {"mae", "rmse", "smape"}) {
      bool present = false;
      for (const auto& r : rows) present = present || r.metric == metric;
      if (!present) continue;
      write_text(report_out + "/plot_" + metric + ".svg",
                 plot_metric_vs_rate_svg(rows, metric));
    }
    std::cout << "wrote " << report_out << "/table.txt and plots\n";
    return 0;
  }

  if (stats_cmd->parsed()) {
    Dataset ds = load_dir(stats_data);
    auto rates = station_missing_rates(ds);
    double mean = 0.0, lo = 1.0, hi = 0.0;
    std::printf("%-12s %s\n", "station", "missing_rate");
    for (int i = 0; i < ds.n_nodes(); ++i) {
      std::printf("%-12s %.4f\n", ds.stations[i].id.c_str(), rates[i]);
      mean += rates[i];
      lo = std::min(lo, rates[i]);
      hi = std::max(hi, rates[i]);
    }
    mean /= static_cast<double>(ds.n_nodes());
    std::printf("stations=%d steps=%lld mean=%.4f min=%.4f max=%.4f\n", ds.n_nodes(),
                static_cast<long long>(ds.n_steps()), mean, lo, hi);
    return 0;
  }

  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
