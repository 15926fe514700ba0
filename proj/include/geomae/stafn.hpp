// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "geomae/tensor.hpp"
#include "geomae/timeinfo.hpp"

namespace geomae {

enum class Nonlinearity { kRelu, kGelu };

struct ModelConfig {
  int n_nodes = 8;
  int n_blocks = 1;
  int d_model = 16;
  int n_heads = 2;
  int d_in = 1;
  int d_out = 1;
  int n_in = 12;
  int n_out = 12;
  int mlp_hidden = 0;  // 0 -> 2 * d_model
  bool residual = true;
  bool layer_norm = true;
  Nonlinearity nonlinearity = Nonlinearity::kGelu;
  // Score scaling: 1/sqrt(d_head) by default; true switches to the literal
  // 1/sqrt(d_model) denominator used by the equation-level oracle tests.
  bool scale_by_d_model = false;

  int d_head() const { return d_model / n_heads; }
  int mlp_width() const { return mlp_hidden > 0 ? mlp_hidden : 2 * d_model; }
  void validate() const;
};

struct Linear {
  Tensor w;
  Tensor b;
};

struct AttentionHead {
  Tensor wq, wk, wv;  // each [d_model, d_head]
};

struct Mlp {
  Linear fc1;
  Linear fc2;
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;
};

// One multi-head attention sublayer: per-head Q/K/V maps, the position-wise
// MLP applied to the concatenated heads, and optional norm parameters.
struct AttentionWeights {
  std::vector<AttentionHead> heads;
  Mlp mlp;
  LayerNormParams ln_attn;  // defined only when layer_norm is configured
  LayerNormParams ln_mlp;
};

// Encoder block: temporal and spatial attention in parallel, outputs summed
// and passed through a fusion MLP.
struct EncoderBlock {
  AttentionWeights temporal;
  AttentionWeights spatial;
  Mlp fusion;
  LayerNormParams ln_fusion;
};

// Decoder block: forecast attention against the encoded history, then
// spatial attention, serially.
struct DecoderBlock {
  AttentionWeights forecast;
  AttentionWeights spatial;
};

struct Parameter {
  std::string name;
  Tensor tensor;
};

// All learnable state: input projection over readings ⊕ hint, the shared
// temporal-encoding projection, per-node embeddings, attention blocks, and
// the prediction head.
struct StafnModel {
  ModelConfig cfg;
  Linear input_proj;     // [2*d_in -> d_model]
  Linear time_proj;      // [8 -> d_model]
  Tensor node_embedding; // [n_nodes, d_model]
  std::vector<EncoderBlock> encoder;
  std::vector<DecoderBlock> decoder;
  Linear head;           // [d_model -> d_out]

  static StafnModel init(const ModelConfig& cfg, std::uint64_t seed);
  // Stable name -> tensor listing; the single source of truth for the
  // optimizer, gradient checks, and checkpoints.
  std::vector<Parameter> parameters() const;
  std::int64_t parameter_count() const;
};

// Raw sin/cos calendar channels, [T, 8]: (month, day-of-month, hour,
// day-of-week) pairs in that order.
Tensor calendar_features(std::span<const CivilTime> steps);

// Calendar channels projected to d_model by the learnable map. [T, d_model].
Tensor temporal_encoding(Tape& tape, std::span<const CivilTime> steps, const Linear& proj);

// Self-attention across nodes, independently per time step. [T, N, D] in/out.
Tensor spatial_attention(Tape& tape, const Tensor& h, const AttentionWeights& w,
                         const ModelConfig& cfg);
// Self-attention across time steps, independently per node. [T, N, D] in/out.
Tensor temporal_attention(Tape& tape, const Tensor& h, const AttentionWeights& w,
                          const ModelConfig& cfg);
// Cross-attention: horizon queries attend to encoded-history keys/values,
// independently per node. h_fur [N_out, N, D], h_his [N_in, N, D].
Tensor forecast_attention(Tape& tape, const Tensor& h_fur, const Tensor& h_his,
                          const AttentionWeights& w, const ModelConfig& cfg);

struct ModelInput {
  Tensor x_hat;  // [n_nodes, n_in, d_in]
  Tensor hint;   // [n_nodes, n_in, d_in]
  TimeStamps ts;
};

// H^0 = W_in(x_hat ⊕ hint) + temporal encoding + node embedding, then the
// encoder blocks. Returns [n_in, N, d_model].
Tensor encode_history(Tape& tape, const ModelInput& input, const StafnModel& model);
// H_fur^0 = temporal encoding + node embedding (no reading information),
// then the decoder blocks against h_his_n. Returns [n_out, N, d_model].
Tensor decode_future(Tape& tape, const Tensor& h_his_n, const TimeStamps& ts,
                     const StafnModel& model);
// Affine map per (step, node); no output activation. [n_out, N, d_out].
Tensor predict(Tape& tape, const Tensor& h_fur_n, const StafnModel& model);

struct ForwardResult {
  Tensor prediction;      // [n_out, N, d_out]
  Tensor representation;  // decoder output H_fur^n, [n_out, N, d_model]
};

ForwardResult forward_with_representation(Tape& tape, const ModelInput& input,
                                          const StafnModel& model);
Tensor forward(Tape& tape, const ModelInput& input, const StafnModel& model);

}  // namespace geomae
