// SPDX-License-Identifier: Apache-2.0
#include "geomae/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "geomae/error.hpp"
#include "geomae/preprocess.hpp"
#include "geomae/rng.hpp"

namespace geomae {

namespace {

// stream purposes for seed derivation
constexpr std::uint64_t kPurposeInit = 1;
constexpr std::uint64_t kPurposeShuffle = 2;
constexpr std::uint64_t kPurposeSample = 3;
constexpr std::uint64_t kPurposeValMask = 4;
constexpr std::uint64_t kPurposeEvalMask = 5;

Tensor to_time_major(const Tensor& t) {
  Tape none = Tape::inference();
  return transpose_01(none, t);
}

}  // namespace

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kFixedRate: return "fixed-rate";
    case Variant::kNoHint: return "no-hint";
    case Variant::kMask01: return "mask01";
  }
  return "?";
}

Variant variant_from_name(const std::string& name) {
  if (name == "full") return Variant::kFull;
  if (name == "fixed-rate") return Variant::kFixedRate;
  if (name == "no-hint") return Variant::kNoHint;
  if (name == "mask01") return Variant::kMask01;
  throw ParseError("unknown variant '" + name + "'");
}

void TrainConfig::validate() const {
  model.validate();
  loss.validate();
  mask_train.validate();
  if (optimizer.lr <= 0.0) throw ContractError("TrainConfig: lr must be positive");
  if (batch_size < 1) throw ContractError("TrainConfig: batch_size must be >= 1");
  if (epochs < 1) throw ContractError("TrainConfig: epochs must be >= 1");
  if (patience < 0) throw ContractError("TrainConfig: patience must be >= 0");
  if (sigma < 0.0) throw ContractError("TrainConfig: sigma must be >= 0");
  if (train_stride < 1 || eval_stride < 0) {
    throw ContractError("TrainConfig: strides must be positive");
  }
  if (val_rate < 0.0 || val_rate > 1.0) {
    throw ContractError("TrainConfig: val_rate must lie in [0, 1]");
  }
}

TrainConfig TrainConfig::from_config(const ConfigMap& c) {
  TrainConfig t;
  t.model.n_nodes = static_cast<int>(c.get_int("model.n_nodes", t.model.n_nodes));
  t.model.n_blocks = static_cast<int>(c.get_int("model.n_blocks", t.model.n_blocks));
  t.model.d_model = static_cast<int>(c.get_int("model.d_model", t.model.d_model));
  t.model.n_heads = static_cast<int>(c.get_int("model.n_heads", t.model.n_heads));
  t.model.d_in = static_cast<int>(c.get_int("model.d_in", t.model.d_in));
  t.model.d_out = static_cast<int>(c.get_int("model.d_out", t.model.d_out));
  t.model.n_in = static_cast<int>(c.get_int("data.n_in", t.model.n_in));
  t.model.n_out = static_cast<int>(c.get_int("data.n_out", t.model.n_out));
  t.model.mlp_hidden = static_cast<int>(c.get_int("model.mlp_hidden", t.model.mlp_hidden));
  t.model.residual = c.get_bool("model.residual", t.model.residual);
  t.model.layer_norm = c.get_bool("model.layer_norm", t.model.layer_norm);
  const std::string nl = c.get_string("model.nonlinearity", "gelu");
  if (nl == "relu") {
    t.model.nonlinearity = Nonlinearity::kRelu;
  } else if (nl == "gelu") {
    t.model.nonlinearity = Nonlinearity::kGelu;
  } else {
    throw ParseError("model.nonlinearity must be relu or gelu, got '" + nl + "'");
  }
  t.model.scale_by_d_model = c.get_bool("model.scale_by_d_model", false);

  t.loss.phi = c.get_double("loss.phi", t.loss.phi);
  t.loss.lambda = c.get_double("loss.lambda", t.loss.lambda);
  t.loss.k = static_cast<int>(c.get_int("loss.k", t.loss.k));
  const std::string norm = c.get_string("loss.norm", "l1");
  if (norm == "l1") {
    t.loss.norm = RegressionNorm::kL1;
  } else if (norm == "l2") {
    t.loss.norm = RegressionNorm::kL2;
  } else {
    throw ParseError("loss.norm must be l1 or l2, got '" + norm + "'");
  }

  t.mask_train.pattern = pattern_from_name(c.get_string("mask.pattern", "mixed"));
  if (c.has("mask.rate")) {
    t.mask_train.rate = c.get_double("mask.rate", 0.5);
    t.mask_train.rate_range.reset();
  } else {
    t.mask_train.rate.reset();
    t.mask_train.rate_range = {c.get_double("mask.rate_lo", 0.25),
                               c.get_double("mask.rate_hi", 0.90)};
  }
  t.mask_train.mix_weights = {c.get_double("mask.weight_point", 1.0),
                              c.get_double("mask.weight_row", 1.0),
                              c.get_double("mask.weight_column", 1.0),
                              c.get_double("mask.weight_block", 0.0)};
  t.mask_train.block_min_len =
      static_cast<int>(c.get_int("mask.block_min_len", t.mask_train.block_min_len));
  t.mask_train.block_max_len =
      static_cast<int>(c.get_int("mask.block_max_len", t.mask_train.block_max_len));

  t.optimizer.lr = c.get_double("optimizer.lr", t.optimizer.lr);
  t.optimizer.weight_decay = c.get_double("optimizer.weight_decay", t.optimizer.weight_decay);
  t.optimizer.beta1 = c.get_double("optimizer.beta1", t.optimizer.beta1);
  t.optimizer.beta2 = c.get_double("optimizer.beta2", t.optimizer.beta2);
  t.optimizer.eps = c.get_double("optimizer.eps", t.optimizer.eps);

  t.batch_size = static_cast<int>(c.get_int("train.batch_size", t.batch_size));
  t.epochs = static_cast<int>(c.get_int("train.epochs", t.epochs));
  t.patience = static_cast<int>(c.get_int("train.patience", t.patience));
  t.seed = static_cast<std::uint64_t>(c.get_int("train.seed", 0));
  t.sigma = c.get_double("train.sigma", t.sigma);
  t.train_stride = static_cast<int>(c.get_int("train.stride", t.train_stride));
  t.eval_stride = static_cast<int>(c.get_int("train.eval_stride", t.eval_stride));
  t.max_windows_per_epoch = c.get_int("train.max_windows_per_epoch", 0);
  t.train_frac = c.get_double("split.train_frac", t.train_frac);
  t.val_frac = c.get_double("split.val_frac", t.val_frac);
  t.val_pattern = pattern_from_name(c.get_string("val.pattern", "point"));
  t.val_rate = c.get_double("val.rate", t.val_rate);
  t.variant = variant_from_name(c.get_string("variant", "full"));
  t.mask_train.seed = t.seed;
  return t;
}

ConfigMap TrainConfig::to_config() const {
  ConfigMap c;
  c.set_int("model.n_nodes", model.n_nodes);
  c.set_int("model.n_blocks", model.n_blocks);
  c.set_int("model.d_model", model.d_model);
  c.set_int("model.n_heads", model.n_heads);
  c.set_int("model.d_in", model.d_in);
  c.set_int("model.d_out", model.d_out);
  c.set_int("data.n_in", model.n_in);
  c.set_int("data.n_out", model.n_out);
  c.set_int("model.mlp_hidden", model.mlp_hidden);
  c.set_bool("model.residual", model.residual);
  c.set_bool("model.layer_norm", model.layer_norm);
  c.set("model.nonlinearity", model.nonlinearity == Nonlinearity::kRelu ? "relu" : "gelu");
  c.set_bool("model.scale_by_d_model", model.scale_by_d_model);
  c.set_double("loss.phi", loss.phi);
  c.set_double("loss.lambda", loss.lambda);
  c.set_int("loss.k", loss.k);
  c.set("loss.norm", loss.norm == RegressionNorm::kL1 ? "l1" : "l2");
  c.set("mask.pattern", pattern_name(mask_train.pattern));
  if (mask_train.rate) {
    c.set_double("mask.rate", *mask_train.rate);
  } else {
    c.set_double("mask.rate_lo", mask_train.rate_range->first);
    c.set_double("mask.rate_hi", mask_train.rate_range->second);
  }
  if (mask_train.mix_weights.size() == 4) {
    c.set_double("mask.weight_point", mask_train.mix_weights[0]);
    c.set_double("mask.weight_row", mask_train.mix_weights[1]);
    c.set_double("mask.weight_column", mask_train.mix_weights[2]);
    c.set_double("mask.weight_block", mask_train.mix_weights[3]);
  }
  c.set_int("mask.block_min_len", mask_train.block_min_len);
  c.set_int("mask.block_max_len", mask_train.block_max_len);
  c.set_double("optimizer.lr", optimizer.lr);
  c.set_double("optimizer.weight_decay", optimizer.weight_decay);
  c.set_double("optimizer.beta1", optimizer.beta1);
  c.set_double("optimizer.beta2", optimizer.beta2);
  c.set_double("optimizer.eps", optimizer.eps);
  c.set_int("train.batch_size", batch_size);
  c.set_int("train.epochs", epochs);
  c.set_int("train.patience", patience);
  c.set_int("train.seed", static_cast<std::int64_t>(seed));
  c.set_double("train.sigma", sigma);
  c.set_int("train.stride", train_stride);
  c.set_int("train.eval_stride", eval_stride);
  c.set_int("train.max_windows_per_epoch", max_windows_per_epoch);
  c.set_double("split.train_frac", train_frac);
  c.set_double("split.val_frac", val_frac);
  c.set("val.pattern", pattern_name(val_pattern));
  c.set_double("val.rate", val_rate);
  c.set("variant", variant_name(variant));
  return c;
}

TrainConfig TrainConfig::with_variant(Variant v) const {
  TrainConfig out = *this;
  out.variant = v;
  if (v == Variant::kFixedRate) {
    out.mask_train.rate = 0.5;
    out.mask_train.rate_range.reset();
  }
  return out;
}

AdamWState AdamWState::init_for(const StafnModel& model) {
  AdamWState s;
  for (const auto& p : model.parameters()) {
    s.m.emplace_back(static_cast<std::size_t>(p.tensor.size()), 0.0);
    s.v.emplace_back(static_cast<std::size_t>(p.tensor.size()), 0.0);
  }
  return s;
}

void adamw_step(std::span<const Parameter> params, const Gradients& grads,
                AdamWState& state, const OptimizerConfig& cfg) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ContractError("adamw_step: state does not match parameter list");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    auto& theta = t.values_mut();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != theta.size()) {
      throw ContractError("adamw_step: moment size mismatch for " + params[i].name);
    }
    const std::vector<double>* g = grads.raw(t.id());
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double gj = g ? (*g)[j] : 0.0;
      // decoupled decay, independent of the adaptive step
      theta[j] -= cfg.lr * cfg.weight_decay * theta[j];
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      theta[j] -= cfg.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// checkpoint serialization
// ---------------------------------------------------------------------------

namespace {

constexpr char kCkptMagic[4] = {'G', 'M', 'C', 'K'};
constexpr std::uint32_t kCkptVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw ParseError("checkpoint: truncated file");
  return v;
}

void write_string(std::ostream& os, const std::string& s) {
  write_pod<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  const auto n = read_pod<std::uint64_t>(is);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw ParseError("checkpoint: truncated string");
  return s;
}

void write_doubles(std::ostream& os, const std::vector<double>& v) {
  write_pod<std::uint64_t>(os, v.size());
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_doubles(std::istream& is) {
  const auto n = read_pod<std::uint64_t>(is);
  std::vector<double> v(n);
  is.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw ParseError("checkpoint: truncated payload");
  return v;
}

}  // namespace

void Checkpoint::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("checkpoint: cannot write '" + path + "'");
  os.write(kCkptMagic, 4);
  write_pod(os, kCkptVersion);
  write_string(os, config.to_config().text());

  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(stats.mean.size()));
  for (std::size_t f = 0; f < stats.mean.size(); ++f) {
    write_pod(os, stats.mean[f]);
    write_pod(os, stats.stddev[f]);
    write_pod(os, stats.constant[f]);
  }

  const auto params = model.parameters();
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    write_string(os, p.name);
    write_doubles(os, p.tensor.values());
  }

  write_pod<std::int64_t>(os, opt.step);
  for (std::size_t i = 0; i < params.size(); ++i) {
    write_doubles(os, opt.m[i]);
    write_doubles(os, opt.v[i]);
  }

  write_pod<std::int32_t>(os, completed_epochs);
  write_pod(os, best_val_mae);
  write_pod<std::int32_t>(os, epochs_since_best);
  write_doubles(os, best_weights);
  if (!os) throw IoError("checkpoint: write failed for '" + path + "'");
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCkptMagic, 4) != 0) {
    throw ParseError("checkpoint: '" + path + "' is not a checkpoint file");
  }
  const auto version = read_pod<std::uint32_t>(is);
  if (version != kCkptVersion) {
    throw ParseError("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.config = TrainConfig::from_config(ConfigMap::from_text(read_string(is)));

  const auto n_feats = read_pod<std::uint32_t>(is);
  ckpt.stats.mean.resize(n_feats);
  ckpt.stats.stddev.resize(n_feats);
  ckpt.stats.constant.resize(n_feats);
  for (std::uint32_t f = 0; f < n_feats; ++f) {
    ckpt.stats.mean[f] = read_pod<double>(is);
    ckpt.stats.stddev[f] = read_pod<double>(is);
    ckpt.stats.constant[f] = read_pod<std::uint8_t>(is);
  }

  ckpt.model = StafnModel::init(ckpt.config.model,
                                derive_seed(ckpt.config.seed, kPurposeInit));
  auto params = ckpt.model.parameters();
  const auto n_params = read_pod<std::uint32_t>(is);
  if (n_params != params.size()) {
    throw ParseError("checkpoint: parameter count mismatch (file " +
                     std::to_string(n_params) + ", config " +
                     std::to_string(params.size()) + ")");
  }
  for (auto& p : params) {
    const std::string name = read_string(is);
    if (name != p.name) {
      throw ParseError("checkpoint: parameter order mismatch at '" + name + "'");
    }
    std::vector<double> vals = read_doubles(is);
    if (vals.size() != p.tensor.values().size()) {
      throw ParseError("checkpoint: size mismatch for '" + name + "'");
    }
    p.tensor.values_mut() = std::move(vals);
  }

  ckpt.opt.step = read_pod<std::int64_t>(is);
  for (std::size_t i = 0; i < params.size(); ++i) {
    ckpt.opt.m.push_back(read_doubles(is));
    ckpt.opt.v.push_back(read_doubles(is));
  }

  ckpt.completed_epochs = read_pod<std::int32_t>(is);
  ckpt.best_val_mae = read_pod<double>(is);
  ckpt.epochs_since_best = read_pod<std::int32_t>(is);
  ckpt.best_weights = read_doubles(is);
  return ckpt;
}

StafnModel Checkpoint::best_model() const {
  StafnModel m = StafnModel::init(config.model, derive_seed(config.seed, kPurposeInit));
  auto params = m.parameters();
  // copy current weights, then overlay the best snapshot when present
  auto src = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i].tensor.values_mut() = src[i].tensor.values();
  }
  if (!best_weights.empty()) {
    std::size_t off = 0;
    for (auto& p : params) {
      auto& v = p.tensor.values_mut();
      if (off + v.size() > best_weights.size()) {
        throw ContractError("checkpoint: best-weight snapshot is inconsistent");
      }
      std::copy(best_weights.begin() + static_cast<std::ptrdiff_t>(off),
                best_weights.begin() + static_cast<std::ptrdiff_t>(off + v.size()),
                v.begin());
      off += v.size();
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// sample preparation
// ---------------------------------------------------------------------------

namespace {

double effective_sigma(double sigma, Variant v) {
  return (v == Variant::kNoHint || v == Variant::kMask01) ? 0.0 : sigma;
}

// Replaces hint/fill content according to the ablation variant. The random
// draws happen before this step, so all variants of one seed see identical
// masks.
ModelInput finalize_input(Tensor x_hat, const Tensor& m, const TimeStamps& ts,
                          Variant variant) {
  ModelInput in;
  in.ts = ts;
  switch (variant) {
    case Variant::kFull:
    case Variant::kFixedRate:
      in.x_hat = std::move(x_hat);
      in.hint = build_hint(m).h;
      return in;
    case Variant::kNoHint:
    case Variant::kMask01: {
      auto vals = x_hat.values();
      const auto& mv = m.values();
      for (std::size_t i = 0; i < vals.size(); ++i) {
        if (mv[i] == 1.0) vals[i] = 0.0;
      }
      in.x_hat = Tensor(x_hat.shape(), std::move(vals));
      in.hint = variant == Variant::kNoHint ? Tensor::zeros(m.shape())
                                            : Tensor(m.shape(), m.values());
      return in;
    }
  }
  throw ContractError("finalize_input: unreachable");
}

}  // namespace

ModelInput variant_input(const ReadingWindow& w, const TimeStamps& ts, double sigma,
                         Variant v, RandomStream& rng) {
  // draw fills with the configured sigma regardless of variant so one stream
  // state yields identical masks/draws across all variants of a run
  Tensor x_hat = impute_random(w, sigma, rng);
  return finalize_input(std::move(x_hat), w.m, ts, v);
}

namespace {

ModelInput corrupted_input(const SampleWindow& sw, const Tensor& extra_mask, double sigma,
                           Variant variant, RandomStream& rng) {
  Tensor m = compose(sw.window.m, extra_mask);
  return variant_input(ReadingWindow{sw.window.x, m}, sw.ts, sigma, variant, rng);
}

PreparedSample prepare_training_sample(const SampleWindow& sw, const TrainConfig& cfg,
                                       RandomStream& rng) {
  // fresh base corruption from the training mask spec
  const MaskPattern pattern = cfg.mask_train.draw_pattern(rng);
  const double rate = cfg.mask_train.draw_rate(rng);
  Tensor extra = gen_mask(pattern, sw.window.m.shape(), rate, rng,
                          cfg.mask_train.block_min_len, cfg.mask_train.block_max_len);
  Tensor base_m = compose(sw.window.m, extra);

  PreparedSample out;
  out.base = variant_input(ReadingWindow{sw.window.x, base_m}, sw.ts, cfg.sigma,
                           cfg.variant, rng);
  if (cfg.loss.lambda > 0.0) {
    AugmentedSet set = make_augmented(ReadingWindow{sw.window.x, base_m}, cfg.loss.k,
                                      cfg.mask_train, effective_sigma(cfg.sigma, cfg.variant),
                                      rng);
    out.variants.reserve(set.variants.size());
    for (auto& v : set.variants) {
      out.variants.push_back(finalize_input(std::move(v.x_hat), v.m, sw.ts, cfg.variant));
    }
  }
  out.target = to_time_major(sw.target);
  Tensor missing_tm = to_time_major(sw.target_missing);
  std::vector<double> scored(missing_tm.values().size());
  for (std::size_t i = 0; i < scored.size(); ++i) {
    scored[i] = missing_tm.values()[i] == 1.0 ? 0.0 : 1.0;
  }
  out.scored = Tensor(missing_tm.shape(), std::move(scored));
  return out;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace

MetricReport evaluate_windows(const StafnModel& model, const Dataset& ds,
                              std::span<const WindowRef> windows,
                              const StandardizationStats& stats, const TrainConfig& cfg,
                              MaskPattern pattern, double rate, std::uint64_t mask_seed) {
  const int target_f = ds.schema.target_index();
  MetricAccumulator acc;
  Tape tape = Tape::inference();
  for (const auto& w : windows) {
    RandomStream rng(derive_seed(mask_seed, kPurposeEvalMask,
                                 static_cast<std::uint64_t>(w.start)));
    SampleWindow sw = materialize_window(ds, w, cfg.model.n_in, cfg.model.n_out, stats);
    Tensor extra = gen_mask(pattern, sw.window.m.shape(), rate, rng,
                            cfg.mask_train.block_min_len, cfg.mask_train.block_max_len);
    ModelInput input = corrupted_input(sw, extra, cfg.sigma, cfg.variant, rng);
    Tensor pred = forward(tape, input, model);  // [n_out, N, 1]
    Tensor target_tm = to_time_major(sw.target);
    Tensor missing_tm = to_time_major(sw.target_missing);
    for (std::int64_t i = 0; i < pred.size(); ++i) {
      if (missing_tm.values()[i] == 1.0) continue;
      acc.add_value(stats.raw_value(target_f, pred.values()[i]),
                    stats.raw_value(target_f, target_tm.values()[i]));
    }
  }
  return acc.report();
}

TrainResult train(const TrainConfig& cfg_in, const Dataset& ds,
                  const std::optional<Checkpoint>& resume_from, LogFn log) {
  TrainConfig cfg = cfg_in;
  cfg.model.n_nodes = ds.n_nodes();
  cfg.model.d_in = ds.n_features();
  cfg.model.d_out = 1;
  cfg.validate();

  const int n_in = cfg.model.n_in;
  const int n_out = cfg.model.n_out;
  const int eval_stride = cfg.eval_stride > 0 ? cfg.eval_stride : n_out;
  SplitPlan plan = SplitPlan::by_fraction(ds, cfg.train_frac, cfg.val_frac);
  SplitWindows sw = split(ds, plan, n_in, n_out, cfg.train_stride, eval_stride);
  if (sw.train.empty() || sw.validation.empty()) {
    throw ContractError("train: the split leaves no training or validation windows");
  }

  Checkpoint ckpt;
  if (resume_from) {
    ckpt = *resume_from;
    ConfigMap a = ckpt.config.to_config();
    ConfigMap b = cfg.to_config();
    a.set("train.epochs", "-");
    b.set("train.epochs", "-");
    if (a.text() != b.text()) {
      throw ContractError("train: resume checkpoint was produced by a different config");
    }
    ckpt.config.epochs = cfg.epochs;
    // tensors are shared handles; detach from the caller's checkpoint
    StafnModel own = StafnModel::init(ckpt.config.model,
                                      derive_seed(ckpt.config.seed, kPurposeInit));
    auto dst = own.parameters();
    auto src = ckpt.model.parameters();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      dst[i].tensor.values_mut() = src[i].tensor.values();
    }
    ckpt.model = own;
  } else {
    ckpt.config = cfg;
    ckpt.stats = fit_stats(ds, plan.train);
    ckpt.model = StafnModel::init(cfg.model, derive_seed(cfg.seed, kPurposeInit));
    ckpt.opt = AdamWState::init_for(ckpt.model);
    ckpt.completed_epochs = 0;
    ckpt.best_val_mae = 0.0;
    ckpt.epochs_since_best = 0;
  }
  const TrainConfig& rc = ckpt.config;
  auto params = ckpt.model.parameters();

  TrainResult result;
  result.early_stopped = false;
  if (!resume_from) {
    result.untrained_val_mae =
        evaluate_windows(ckpt.model, ds, sw.validation, ckpt.stats, rc, rc.val_pattern,
                         rc.val_rate, derive_seed(rc.seed, kPurposeValMask))
            .mae;
    if (log) log("untrained val_mae=" + fmt(result.untrained_val_mae));
  }

  for (int epoch = ckpt.completed_epochs; epoch < rc.epochs; ++epoch) {
    // deterministic shuffle, then optional cap
    std::vector<std::size_t> order(sw.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    RandomStream shuffle_rng(derive_seed(rc.seed, kPurposeShuffle,
                                         static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.integer(i)]);
    }
    if (rc.max_windows_per_epoch > 0 &&
        static_cast<std::int64_t>(order.size()) > rc.max_windows_per_epoch) {
      order.resize(static_cast<std::size_t>(rc.max_windows_per_epoch));
    }

    double total_sum = 0.0, reg_sum = 0.0, aux_sum = 0.0;
    std::int64_t seen = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(rc.batch_size)) {
      const std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(rc.batch_size));
      std::vector<PreparedSample> batch;
      batch.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i) {
        const WindowRef& w = sw.train[order[i]];
        RandomStream rng(derive_seed(rc.seed, kPurposeSample,
                                     static_cast<std::uint64_t>(epoch),
                                     static_cast<std::uint64_t>(w.start)));
        batch.push_back(prepare_training_sample(
            materialize_window(ds, w, n_in, n_out, ckpt.stats), rc, rng));
      }
      ObjectiveResult res = training_objective(batch, ckpt.model, rc.loss);
      if (!std::isfinite(res.total)) {
        throw ContractError("train: diverged at epoch " + std::to_string(epoch + 1) +
                            " (total=" + fmt(res.total) + ", reg=" + fmt(res.reg) +
                            ", aux=" + fmt(res.mae_aux) + ", step=" +
                            std::to_string(ckpt.opt.step) + ")");
      }
      adamw_step(params, res.grads, ckpt.opt, rc.optimizer);
      const auto b = static_cast<std::int64_t>(end - begin);
      total_sum += res.total * static_cast<double>(b);
      reg_sum += res.reg * static_cast<double>(b);
      aux_sum += res.mae_aux * static_cast<double>(b);
      seen += b;
    }

    MetricReport val = evaluate_windows(ckpt.model, ds, sw.validation, ckpt.stats, rc,
                                      rc.val_pattern, rc.val_rate,
                                      derive_seed(rc.seed, kPurposeValMask));
    EpochStats es;
    es.epoch = epoch + 1;
    es.train_total = total_sum / static_cast<double>(seen);
    es.train_reg = reg_sum / static_cast<double>(seen);
    es.train_mae_aux = aux_sum / static_cast<double>(seen);
    es.val_mae = val.mae;
    es.val_rmse = val.rmse;
    es.val_smape = val.smape;
    result.history.push_back(es);

    const bool improved = ckpt.completed_epochs == 0 ? true : val.mae < ckpt.best_val_mae;
    if (improved) {
      ckpt.best_val_mae = val.mae;
      ckpt.epochs_since_best = 0;
      ckpt.best_weights.clear();
      for (const auto& p : params) {
        ckpt.best_weights.insert(ckpt.best_weights.end(), p.tensor.values().begin(),
                                 p.tensor.values().end());
      }
    } else {
      ckpt.epochs_since_best += 1;
    }
    ckpt.completed_epochs = epoch + 1;

    if (log) {
      log("epoch " + std::to_string(es.epoch) + "/" + std::to_string(rc.epochs) +
          " train_total=" + fmt(es.train_total) + " train_reg=" + fmt(es.train_reg) +
          " train_aux=" + fmt(es.train_mae_aux) + " val_mae=" + fmt(es.val_mae) +
          " val_rmse=" + fmt(es.val_rmse) + (improved ? " *" : ""));
    }
    if (ckpt.epochs_since_best >= rc.patience && rc.patience > 0) {
      result.early_stopped = true;
      break;
    }
  }

  result.checkpoint = std::move(ckpt);
  return result;
}

std::vector<Scenario> scenario_grid(std::span<const MaskPattern> patterns,
                                    std::span<const double> rates, int n_seeds,
                                    std::uint64_t base_seed) {
  if (n_seeds < 1) throw ContractError("scenario_grid: need at least one seed");
  std::vector<Scenario> out;
  for (const auto& p : patterns) {
    for (double r : rates) {
      for (int s = 0; s < n_seeds; ++s) {
        out.push_back(Scenario{p, r, derive_seed(base_seed, static_cast<std::uint64_t>(s),
                                                 static_cast<std::uint64_t>(r * 1000.0),
                                                 static_cast<std::uint64_t>(p))});
      }
    }
  }
  return out;
}

std::vector<ResultRow> evaluate_grid(const Checkpoint& ckpt, const Dataset& ds,
                                     std::span<const Scenario> scenarios) {
  const TrainConfig& cfg = ckpt.config;
  const int eval_stride = cfg.eval_stride > 0 ? cfg.eval_stride : cfg.model.n_out;
  SplitPlan plan = SplitPlan::by_fraction(ds, cfg.train_frac, cfg.val_frac);
  SplitWindows sw = split(ds, plan, cfg.model.n_in, cfg.model.n_out, cfg.train_stride,
                          eval_stride);
  if (sw.test.empty()) throw ContractError("evaluate_grid: no test windows");
  const StafnModel model = ckpt.best_model();

  std::vector<std::vector<ResultRow>> slots(scenarios.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= scenarios.size()) return;
      const Scenario& sc = scenarios[i];
      MetricReport rep = evaluate_windows(model, ds, sw.test, ckpt.stats, cfg, sc.pattern,
                                        sc.rate, sc.seed);
      const std::string vn = variant_name(cfg.variant);
      const std::string pn = pattern_name(sc.pattern);
      slots[i] = {ResultRow{vn, pn, sc.rate, sc.seed, "mae", rep.mae},
                  ResultRow{vn, pn, sc.rate, sc.seed, "rmse", rep.rmse},
                  ResultRow{vn, pn, sc.rate, sc.seed, "smape", rep.smape}};
    }
  };
  const unsigned n_threads =
      std::min<unsigned>(std::max(1u, std::thread::hardware_concurrency()),
                         static_cast<unsigned>(scenarios.size()));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  std::vector<ResultRow> rows;
  for (auto& s : slots) rows.insert(rows.end(), s.begin(), s.end());
  return rows;
}

std::vector<ResultRow> ablate(const TrainConfig& cfg, const Dataset& ds, Variant v,
                              std::span<const Scenario> scenarios, LogFn log) {
  TrainResult tr = train(cfg.with_variant(v), ds, std::nullopt, log);
  return evaluate_grid(tr.checkpoint, ds, scenarios);
}

std::string result_rows_to_csv(std::span<const ResultRow> rows) {
  std::ostringstream os;
  os << "variant,pattern,rate,seed,metric,value\n";
  os.precision(17);
  for (const auto& r : rows) {
    os << r.variant << "," << r.pattern << "," << r.rate << "," << r.seed << ","
       << r.metric << "," << r.value << "\n";
  }
  return os.str();
}

std::vector<ResultRow> result_rows_from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "variant,pattern,rate,seed,metric,value") {
    throw ParseError("result rows: unexpected header");
  }
  std::vector<ResultRow> rows;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    ResultRow r;
    std::string rate, seed, value;
    if (!std::getline(ls, r.variant, ',') || !std::getline(ls, r.pattern, ',') ||
        !std::getline(ls, rate, ',') || !std::getline(ls, seed, ',') ||
        !std::getline(ls, r.metric, ',') || !std::getline(ls, value)) {
      throw ParseError("result rows: malformed line " + std::to_string(line_no));
    }
    try {
      r.rate = std::stod(rate);
      r.seed = std::stoull(seed);
      r.value = std::stod(value);
    } catch (const std::exception&) {
      throw ParseError("result rows: bad number on line " + std::to_string(line_no));
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string aggregate_table(std::span<const ResultRow> rows) {
  // (variant, pattern, rate, metric) -> values across seeds
  std::map<std::tuple<std::string, std::string, double, std::string>, std::vector<double>>
      groups;
  for (const auto& r : rows) {
    groups[{r.variant, r.pattern, r.rate, r.metric}].push_back(r.value);
  }
  std::ostringstream os;
  os << "variant      pattern  rate   metric  mean ± std           n\n";
  for (const auto& [key, vals] : groups) {
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(vals.size());
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    const double stddev =
        vals.size() > 1 ? std::sqrt(var / static_cast<double>(vals.size() - 1)) : 0.0;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-12s %-8s %-6.2f %-7s %9.4f ± %-9.4f %zu\n",
                  std::get<0>(key).c_str(), std::get<1>(key).c_str(), std::get<2>(key),
                  std::get<3>(key).c_str(), mean, stddev, vals.size());
    os << buf;
  }
  return os.str();
}

std::string plot_metric_vs_rate_svg(std::span<const ResultRow> rows,
                                    const std::string& metric) {
  // series: (variant, pattern) -> rate -> mean value
  std::map<std::pair<std::string, std::string>, std::map<double, std::vector<double>>> series;
  double lo_y = 1e300, hi_y = -1e300, lo_x = 1e300, hi_x = -1e300;
  for (const auto& r : rows) {
    if (r.metric != metric) continue;
    series[{r.variant, r.pattern}][r.rate].push_back(r.value);
  }
  if (series.empty()) throw ContractError("plot: no rows for metric '" + metric + "'");
  std::map<std::pair<std::string, std::string>, std::vector<std::pair<double, double>>> lines;
  for (const auto& [key, by_rate] : series) {
    for (const auto& [rate, vals] : by_rate) {
      double mean = 0.0;
      for (double v : vals) mean += v;
      mean /= static_cast<double>(vals.size());
      lines[key].push_back({rate, mean});
      lo_y = std::min(lo_y, mean);
      hi_y = std::max(hi_y, mean);
      lo_x = std::min(lo_x, rate);
      hi_x = std::max(hi_x, rate);
    }
  }
  if (hi_y <= lo_y) hi_y = lo_y + 1.0;
  if (hi_x <= lo_x) hi_x = lo_x + 1.0;

  const int w = 640, h = 420, ml = 70, mr = 20, mt = 40, mb = 50;
  auto px = [&](double x) { return ml + (x - lo_x) / (hi_x - lo_x) * (w - ml - mr); };
  auto py = [&](double y) { return h - mb - (y - lo_y) / (hi_y - lo_y) * (h - mt - mb); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                 "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"};

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"15\">"
     << metric << " vs missing rate</text>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr << "\" y2=\""
     << h - mb << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << h - mb
     << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double x = lo_x + (hi_x - lo_x) * i / 4.0;
    const double y = lo_y + (hi_y - lo_y) * i / 4.0;
    os << "<text x=\"" << px(x) << "\" y=\"" << h - mb + 18
       << "\" text-anchor=\"middle\">" << fmt(x) << "</text>\n";
    os << "<text x=\"" << ml - 8 << "\" y=\"" << py(y) + 4
       << "\" text-anchor=\"end\">" << fmt(y) << "</text>\n";
  }
  int color_idx = 0;
  int legend_y = mt;
  for (const auto& [key, pts] : lines) {
    const char* color = colors[color_idx % 8];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& [x, y] : pts) os << px(x) << "," << py(y) << " ";
    os << "\"/>\n";
    for (const auto& [x, y] : pts) {
      os << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"3\" fill=\"" << color
         << "\"/>\n";
    }
    os << "<text x=\"" << w - mr - 150 << "\" y=\"" << legend_y << "\" fill=\"" << color
       << "\">" << key.first << " / " << key.second << "</text>\n";
    legend_y += 16;
    ++color_idx;
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace geomae
