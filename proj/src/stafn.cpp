// SPDX-License-Identifier: Apache-2.0
#include "geomae/stafn.hpp"

#include <cmath>

#include "geomae/error.hpp"
#include "geomae/rng.hpp"

namespace geomae {

namespace {

constexpr double kTwoPi = 6.28318530717958647692;

Tensor xavier(Shape shape, RandomStream& rng) {
  const double fan_in = static_cast<double>(shape[0]);
  const double fan_out = static_cast<double>(shape[shape.size() - 1]);
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(-limit, limit);
  return Tensor(std::move(shape), std::move(v), true);
}

Linear make_linear(std::int64_t in, std::int64_t out, RandomStream& rng) {
  return Linear{xavier({in, out}, rng), Tensor::zeros({out}, true)};
}

Mlp make_mlp(const ModelConfig& cfg, RandomStream& rng) {
  return Mlp{make_linear(cfg.d_model, cfg.mlp_width(), rng),
             make_linear(cfg.mlp_width(), cfg.d_model, rng)};
}

LayerNormParams make_ln(int d_model, RandomStream& rng, bool enabled) {
  (void)rng;
  if (!enabled) return {};
  return LayerNormParams{Tensor::full({d_model}, 1.0, true), Tensor::zeros({d_model}, true)};
}

AttentionWeights make_attention(const ModelConfig& cfg, RandomStream& rng) {
  AttentionWeights w;
  w.heads.reserve(static_cast<std::size_t>(cfg.n_heads));
  for (int h = 0; h < cfg.n_heads; ++h) {
    w.heads.push_back(AttentionHead{xavier({cfg.d_model, cfg.d_head()}, rng),
                                    xavier({cfg.d_model, cfg.d_head()}, rng),
                                    xavier({cfg.d_model, cfg.d_head()}, rng)});
  }
  w.mlp = make_mlp(cfg, rng);
  w.ln_attn = make_ln(cfg.d_model, rng, cfg.layer_norm);
  w.ln_mlp = make_ln(cfg.d_model, rng, cfg.layer_norm);
  return w;
}

Tensor apply_linear(Tape& tape, const Tensor& x, const Linear& lin) {
  return add_feature_bias(tape, matmul(tape, x, lin.w), lin.b);
}

Tensor apply_nonlinearity(Tape& tape, const Tensor& x, Nonlinearity nl) {
  return nl == Nonlinearity::kRelu ? relu(tape, x) : gelu(tape, x);
}

Tensor apply_mlp(Tape& tape, const Tensor& x, const Mlp& mlp, const ModelConfig& cfg) {
  return apply_linear(tape, apply_nonlinearity(tape, apply_linear(tape, x, mlp.fc1),
                                               cfg.nonlinearity),
                      mlp.fc2);
}

// Scaled dot-product attention with per-head projections; queries from
// `q_input`, keys/values from `kv_input` (equal for self-attention), the
// token axis being axis 1 of the rank-3 operands. The concatenated head
// outputs pass through the sublayer MLP with residual/norm as configured;
// the residual source is `q_input`.
Tensor attention_sublayer(Tape& tape, const Tensor& q_input, const Tensor& kv_input,
                          const AttentionWeights& w, const ModelConfig& cfg) {
  const double denom = std::sqrt(
      static_cast<double>(cfg.scale_by_d_model ? cfg.d_model : cfg.d_head()));
  std::vector<Tensor> head_outs;
  head_outs.reserve(w.heads.size());
  for (const auto& head : w.heads) {
    Tensor q = matmul(tape, q_input, head.wq);
    Tensor k = matmul(tape, kv_input, head.wk);
    Tensor v = matmul(tape, kv_input, head.wv);
    Tensor scores = scale(tape, matmul(tape, q, transpose_last_two(tape, k)), 1.0 / denom);
    head_outs.push_back(matmul(tape, softmax_last(tape, scores), v));
  }
  Tensor attn = head_outs.size() == 1 ? head_outs[0] : concat_last(tape, head_outs);
  if (cfg.residual) attn = add(tape, q_input, attn);
  if (cfg.layer_norm) attn = layer_norm(tape, attn, w.ln_attn.gain, w.ln_attn.bias);
  Tensor out = apply_mlp(tape, attn, w.mlp, cfg);
  if (cfg.residual) out = add(tape, attn, out);
  if (cfg.layer_norm) out = layer_norm(tape, out, w.ln_mlp.gain, w.ln_mlp.bias);
  return out;
}

void require_rank3(const char* op, const Tensor& t) {
  if (t.rank() != 3) {
    throw ShapeError(std::string(op) + ": expected rank-3 input, got " +
                     shape_str(t.shape()));
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (n_nodes < 1 || d_model < 1 || n_heads < 1 || d_in < 1 || d_out < 1 || n_in < 1 ||
      n_out < 1) {
    throw ContractError("ModelConfig: extents must be >= 1");
  }
  if (n_blocks < 0) throw ContractError("ModelConfig: n_blocks must be >= 0");
  if (d_model % n_heads != 0) {
    throw ContractError("ModelConfig: n_heads (" + std::to_string(n_heads) +
                        ") must divide d_model (" + std::to_string(d_model) + ")");
  }
}

StafnModel StafnModel::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  RandomStream rng(derive_seed(seed, 0x57af));
  StafnModel m;
  m.cfg = cfg;
  m.input_proj = make_linear(2 * cfg.d_in, cfg.d_model, rng);
  m.time_proj = make_linear(8, cfg.d_model, rng);
  m.node_embedding = Tensor::randn({cfg.n_nodes, cfg.d_model}, rng, 0.5, true);
  for (int i = 0; i < cfg.n_blocks; ++i) {
    EncoderBlock b;
    b.temporal = make_attention(cfg, rng);
    b.spatial = make_attention(cfg, rng);
    b.fusion = make_mlp(cfg, rng);
    b.ln_fusion = make_ln(cfg.d_model, rng, cfg.layer_norm);
    m.encoder.push_back(std::move(b));
    DecoderBlock d;
    d.forecast = make_attention(cfg, rng);
    d.spatial = make_attention(cfg, rng);
    m.decoder.push_back(std::move(d));
  }
  m.head = make_linear(cfg.d_model, cfg.d_out, rng);
  return m;
}

namespace {

void collect_linear(std::vector<Parameter>& out, const std::string& prefix,
                    const Linear& lin) {
  out.push_back({prefix + ".w", lin.w});
  out.push_back({prefix + ".b", lin.b});
}

void collect_attention(std::vector<Parameter>& out, const std::string& prefix,
                       const AttentionWeights& w) {
  for (std::size_t h = 0; h < w.heads.size(); ++h) {
    const std::string p = prefix + ".h" + std::to_string(h);
    out.push_back({p + ".wq", w.heads[h].wq});
    out.push_back({p + ".wk", w.heads[h].wk});
    out.push_back({p + ".wv", w.heads[h].wv});
  }
  collect_linear(out, prefix + ".mlp.fc1", w.mlp.fc1);
  collect_linear(out, prefix + ".mlp.fc2", w.mlp.fc2);
  if (w.ln_attn.gain.defined()) {
    out.push_back({prefix + ".ln_attn.gain", w.ln_attn.gain});
    out.push_back({prefix + ".ln_attn.bias", w.ln_attn.bias});
    out.push_back({prefix + ".ln_mlp.gain", w.ln_mlp.gain});
    out.push_back({prefix + ".ln_mlp.bias", w.ln_mlp.bias});
  }
}

}  // namespace

std::vector<Parameter> StafnModel::parameters() const {
  std::vector<Parameter> out;
  collect_linear(out, "input_proj", input_proj);
  collect_linear(out, "time_proj", time_proj);
  out.push_back({"node_embedding", node_embedding});
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    const std::string p = "enc" + std::to_string(i);
    collect_attention(out, p + ".temporal", encoder[i].temporal);
    collect_attention(out, p + ".spatial", encoder[i].spatial);
    collect_linear(out, p + ".fusion.fc1", encoder[i].fusion.fc1);
    collect_linear(out, p + ".fusion.fc2", encoder[i].fusion.fc2);
    if (encoder[i].ln_fusion.gain.defined()) {
      out.push_back({p + ".ln_fusion.gain", encoder[i].ln_fusion.gain});
      out.push_back({p + ".ln_fusion.bias", encoder[i].ln_fusion.bias});
    }
  }
  for (std::size_t i = 0; i < decoder.size(); ++i) {
    const std::string p = "dec" + std::to_string(i);
    collect_attention(out, p + ".forecast", decoder[i].forecast);
    collect_attention(out, p + ".spatial", decoder[i].spatial);
  }
  collect_linear(out, "head", head);
  return out;
}

std::int64_t StafnModel::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.size();
  return n;
}

Tensor calendar_features(std::span<const CivilTime> steps) {
  if (steps.empty()) throw ContractError("calendar_features: no steps");
  std::vector<double> v;
  v.reserve(steps.size() * 8);
  for (const auto& t : steps) {
    const double pairs[4][2] = {{static_cast<double>(t.month), 12.0},
                                {static_cast<double>(t.day), 31.0},
                                {static_cast<double>(t.hour), 24.0},
                                {static_cast<double>(weekday(t)), 7.0}};
    for (const auto& p : pairs) {
      const double phase = kTwoPi * p[0] / p[1];
      v.push_back(std::sin(phase));
      v.push_back(std::cos(phase));
    }
  }
  return Tensor({static_cast<std::int64_t>(steps.size()), 8}, std::move(v));
}

Tensor temporal_encoding(Tape& tape, std::span<const CivilTime> steps, const Linear& proj) {
  if (proj.w.shape()[1] % 2 != 0) {
    throw ContractError("temporal_encoding: d_model must be even");
  }
  return apply_linear(tape, calendar_features(steps), proj);
}

Tensor spatial_attention(Tape& tape, const Tensor& h, const AttentionWeights& w,
                         const ModelConfig& cfg) {
  require_rank3("spatial_attention", h);
  return attention_sublayer(tape, h, h, w, cfg);
}

Tensor temporal_attention(Tape& tape, const Tensor& h, const AttentionWeights& w,
                          const ModelConfig& cfg) {
  require_rank3("temporal_attention", h);
  Tensor by_node = transpose_01(tape, h);
  Tensor out = attention_sublayer(tape, by_node, by_node, w, cfg);
  return transpose_01(tape, out);
}

Tensor forecast_attention(Tape& tape, const Tensor& h_fur, const Tensor& h_his,
                          const AttentionWeights& w, const ModelConfig& cfg) {
  require_rank3("forecast_attention", h_fur);
  require_rank3("forecast_attention", h_his);
  if (h_fur.shape()[1] != h_his.shape()[1] || h_fur.shape()[2] != h_his.shape()[2]) {
    throw ShapeError("forecast_attention: node/feature extents disagree, " +
                     shape_str(h_fur.shape()) + " vs " + shape_str(h_his.shape()));
  }
  Tensor q_by_node = transpose_01(tape, h_fur);
  Tensor kv_by_node = transpose_01(tape, h_his);
  Tensor out = attention_sublayer(tape, q_by_node, kv_by_node, w, cfg);
  return transpose_01(tape, out);
}

Tensor encode_history(Tape& tape, const ModelInput& input, const StafnModel& model) {
  const ModelConfig& cfg = model.cfg;
  const Shape expected{cfg.n_nodes, cfg.n_in, cfg.d_in};
  if (input.x_hat.shape() != expected || input.hint.shape() != expected) {
    throw ShapeError("encode_history: inputs must be " + shape_str(expected) + ", got " +
                     shape_str(input.x_hat.shape()) + " and " +
                     shape_str(input.hint.shape()));
  }
  if (static_cast<int>(input.ts.history.size()) != cfg.n_in) {
    throw ContractError("encode_history: history timestamps do not match n_in");
  }
  const std::vector<Tensor> channels{input.x_hat, input.hint};
  Tensor projected = apply_linear(tape, concat_last(tape, channels), model.input_proj);
  Tensor h = transpose_01(tape, projected);  // [n_in, N, d_model]
  Tensor te = temporal_encoding(tape, input.ts.history, model.time_proj);
  h = add(tape, h, expand_mid(tape, te, cfg.n_nodes));
  h = add(tape, h, expand_front(tape, model.node_embedding, cfg.n_in));
  for (const auto& block : model.encoder) {
    Tensor ta = temporal_attention(tape, h, block.temporal, cfg);
    Tensor sa = spatial_attention(tape, h, block.spatial, cfg);
    Tensor fused = add(tape, ta, sa);
    Tensor out = apply_mlp(tape, fused, block.fusion, cfg);
    if (cfg.residual) out = add(tape, fused, out);
    if (cfg.layer_norm) {
      out = layer_norm(tape, out, block.ln_fusion.gain, block.ln_fusion.bias);
    }
    h = out;
  }
  return h;
}

Tensor decode_future(Tape& tape, const Tensor& h_his_n, const TimeStamps& ts,
                     const StafnModel& model) {
  const ModelConfig& cfg = model.cfg;
  if (static_cast<int>(ts.horizon.size()) != cfg.n_out) {
    throw ContractError("decode_future: horizon timestamps do not match n_out");
  }
  Tensor te = temporal_encoding(tape, ts.horizon, model.time_proj);
  Tensor h = add(tape, expand_mid(tape, te, cfg.n_nodes),
                 expand_front(tape, model.node_embedding, cfg.n_out));
  for (const auto& block : model.decoder) {
    h = forecast_attention(tape, h, h_his_n, block.forecast, cfg);
    h = spatial_attention(tape, h, block.spatial, cfg);
  }
  return h;
}

Tensor predict(Tape& tape, const Tensor& h_fur_n, const StafnModel& model) {
  return apply_linear(tape, h_fur_n, model.head);
}

ForwardResult forward_with_representation(Tape& tape, const ModelInput& input,
                                          const StafnModel& model) {
  Tensor h_his = encode_history(tape, input, model);
  Tensor h_fur = decode_future(tape, h_his, input.ts, model);
  return ForwardResult{predict(tape, h_fur, model), h_fur};
}

Tensor forward(Tape& tape, const ModelInput& input, const StafnModel& model) {
  return forward_with_representation(tape, input, model).prediction;
}

}  // namespace geomae
