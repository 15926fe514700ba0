// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "geomae/config.hpp"
#include "geomae/data.hpp"
#include "geomae/masking.hpp"
#include "geomae/metrics.hpp"
#include "geomae/objective.hpp"
#include "geomae/stafn.hpp"

namespace geomae {

struct OptimizerConfig {
  double lr = 2e-4;
  double weight_decay = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Preprocessing switches for the ablation variants.
//   kFull:      random-normal fill + standardized hint.
//   kFixedRate: full preprocessing, training mask rate pinned to 0.5.
//   kNoHint:    zero fill, hint channel all zeros.
//   kMask01:    zero fill, raw 0/1 missing indicator in the hint channel.
enum class Variant { kFull, kFixedRate, kNoHint, kMask01 };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct TrainConfig {
  ModelConfig model;
  LossConfig loss;
  MaskSpec mask_train = MaskSpec::training_default(0);
  OptimizerConfig optimizer;
  int batch_size = 32;
  int epochs = 30;
  int patience = 10;
  std::uint64_t seed = 0;
  double sigma = 0.2;
  int train_stride = 1;
  int eval_stride = 0;  // 0 -> n_out
  std::int64_t max_windows_per_epoch = 0;  // 0 -> all
  double train_frac = 0.6;
  double val_frac = 0.2;
  MaskPattern val_pattern = MaskPattern::kPoint;
  double val_rate = 0.5;
  Variant variant = Variant::kFull;

  void validate() const;
  // Flat key=value round trip; keys are documented in the README.
  static TrainConfig from_config(const ConfigMap& cfg);
  ConfigMap to_config() const;
  // Applies the ablation switches for `v` and records it in the config.
  TrainConfig with_variant(Variant v) const;
};

// Optimizer moments aligned with StafnModel::parameters() order.
struct AdamWState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::int64_t step = 0;

  static AdamWState init_for(const StafnModel& model);
};

// One AdamW update: decoupled weight decay applied first, then the
// bias-corrected adaptive step. Parameters with no gradient entry still
// decay.
void adamw_step(std::span<const Parameter> params, const Gradients& grads,
                AdamWState& state, const OptimizerConfig& cfg);

// Everything needed to resume bit-exactly: config, frozen statistics, model
// weights, optimizer moments, progress counters. Training randomness is
// derived from (seed, epoch, window), so the counters are the RNG state.
struct Checkpoint {
  TrainConfig config;
  StandardizationStats stats;
  StafnModel model;
  AdamWState opt;
  int completed_epochs = 0;
  double best_val_mae = 0.0;
  int epochs_since_best = 0;
  std::vector<double> best_weights;  // flattened best-epoch parameters

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
  // Model with the best-validation weights restored.
  StafnModel best_model() const;
};

struct EpochStats {
  int epoch = 0;
  double train_total = 0.0;
  double train_reg = 0.0;
  double train_mae_aux = 0.0;
  double val_mae = 0.0;
  double val_rmse = 0.0;
  double val_smape = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;  // final state (resume point)
  std::vector<EpochStats> history;
  bool early_stopped = false;
  // Validation MAE of the freshly initialized model on the same frozen
  // validation grid (0 when resuming).
  double untrained_val_mae = 0.0;
};

// Raw-unit metrics of `model` over `windows` under a frozen corruption: the
// per-window masks and fills are derived from `mask_seed`, so repeated calls
// score identically.
MetricReport evaluate_windows(const StafnModel& model, const Dataset& ds,
                              std::span<const WindowRef> windows,
                              const StandardizationStats& stats, const TrainConfig& cfg,
                              MaskPattern pattern, double rate, std::uint64_t mask_seed);

using LogFn = void (*)(const std::string&);

// Full training loop: fresh training masks each epoch, augmented sets for
// the auxiliary loss, a frozen validation mask grid, early stopping on
// validation MAE. Deterministic given (config, seed). Pass `resume_from` to
// continue a run; it must carry the same config text.
TrainResult train(const TrainConfig& cfg, const Dataset& ds,
                  const std::optional<Checkpoint>& resume_from = std::nullopt,
                  LogFn log = nullptr);

struct Scenario {
  MaskPattern pattern = MaskPattern::kPoint;
  double rate = 0.5;
  std::uint64_t seed = 0;
};

struct ResultRow {
  std::string variant;
  std::string pattern;
  double rate = 0.0;
  std::uint64_t seed = 0;
  std::string metric;
  double value = 0.0;
};

std::string result_rows_to_csv(std::span<const ResultRow> rows);
std::vector<ResultRow> result_rows_from_csv(const std::string& text);

// Corrupt the test split under each scenario, run inference with the
// checkpoint's best weights, and score in raw units. Scenarios run in
// parallel; row order is deterministic.
std::vector<ResultRow> evaluate_grid(const Checkpoint& ckpt, const Dataset& ds,
                                     std::span<const Scenario> scenarios);

// Builds the standard scenario grid: every (pattern, rate) pair with
// `n_seeds` seeds derived from `base_seed`.
std::vector<Scenario> scenario_grid(std::span<const MaskPattern> patterns,
                                    std::span<const double> rates, int n_seeds,
                                    std::uint64_t base_seed);

// Train the requested variant and evaluate it on the grid; rows are tagged
// with the variant name.
std::vector<ResultRow> ablate(const TrainConfig& cfg, const Dataset& ds, Variant v,
                              std::span<const Scenario> scenarios, LogFn log = nullptr);

// Model input for one already-corrupted window under the given preprocessing
// variant: full/fixed-rate use random fill + standardized hint, no-hint uses
// zero fill + zero hint, mask01 uses zero fill + the raw 0/1 indicator. The
// random draws are identical across variants for a given stream state.
ModelInput variant_input(const ReadingWindow& w, const TimeStamps& ts, double sigma,
                         Variant v, RandomStream& rng);

// mean ± std aggregation across seeds, one line per (variant, pattern, rate,
// metric), formatted for the report table.
std::string aggregate_table(std::span<const ResultRow> rows);

// Line chart of metric vs rate, one polyline per (variant, pattern), as a
// standalone SVG document.
std::string plot_metric_vs_rate_svg(std::span<const ResultRow> rows,
                                    const std::string& metric);

}  // namespace geomae
