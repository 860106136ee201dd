#pragma once

#include <memory>
#include <vector>

#include "mmt/rng.hpp"
#include "mmt/tensor.hpp"

namespace mmt {

// Per-head projections (d x d_k each) plus the shared output projection.
struct AttentionParams {
  std::vector<Tensor> query_proj, key_proj, value_proj;
  Tensor output_proj;  // d x d

  std::int64_t heads() const { return static_cast<std::int64_t>(query_proj.size()); }
  std::int64_t model_dim() const { return output_proj.rows(); }
  std::int64_t head_dim() const { return query_proj.front().cols(); }
};

// Captures the post-softmax attention weights (one L_q x L_k matrix per
// head) for normalization checks.
struct AttentionProbe {
  std::vector<Tensor> weights;
};

// Scaled dot-product attention per head, heads concatenated and projected.
// Masked keys receive exactly zero weight.
Tensor multi_head_attention(Tape* tape, const Tensor& query, const Tensor& key,
                            const Tensor& value, const Mask& key_mask,
                            const AttentionParams& params, AttentionProbe* probe = nullptr);

struct FfnParams {
  Tensor w_inner, b_inner;  // d x d_ff, 1 x d_ff
  Tensor w_outer, b_outer;  // d_ff x d, 1 x d
};

// Rowwise w_outer . relu(w_inner . h + b_inner) + b_outer.
Tensor position_wise_ffn(Tape* tape, const Tensor& h, const FfnParams& params);

// Linear transform (k*d -> k*d) whose output is normalized per feature
// dimension across the k slices; produces convex combination weights.
struct GateParams {
  Tensor weight;  // (k*d) x (k*d)
  Tensor bias;    // 1 x (k*d)
};

// Convex per-dimension combination of k same-shaped inputs. weights_out,
// when given, receives the normalized gate activations.
Tensor fusional_gate(Tape* tape, const std::vector<Tensor>& inputs, const GateParams& params,
                     Tensor* weights_out = nullptr);

struct LayerNormParams {
  Tensor gain, bias;  // 1 x d each
};

// One stream's slice of a matching block: self-attention, inner FFN, cross
// attention onto every other stream, fusional gate, output FFN, with a
// residual + layer-norm around each of the four sub-layers (post-norm).
struct StreamBlockParams {
  AttentionParams self_attn;
  FfnParams ffn_inner;
  std::vector<AttentionParams> cross;  // one per other stream, state order
  GateParams gate;
  FfnParams ffn_out;
  LayerNormParams ln_self, ln_inner, ln_cross, ln_out;
};

// Streams hold shared_ptrs so tests can tie parameters across streams.
struct MatchingBlockParams {
  std::vector<std::shared_ptr<StreamBlockParams>> streams;
};

struct StreamState {
  std::vector<Tensor> h;  // one L x d per stream
  std::vector<Mask> mask;
};

struct BlockRunOptions {
  double dropout_rate = 0.0;
  bool training = false;
  Rng* rng = nullptr;
  double ln_eps = 1e-5;
  std::vector<AttentionProbe>* attention_probes = nullptr;  // appended per call
  std::vector<Tensor>* gate_probes = nullptr;               // appended per call
};

// Shape-preserving. Cross attention reads the intermediate representations
// that all streams produced in this same block, so stream order is
// irrelevant.
StreamState matching_block(Tape* tape, const StreamState& state,
                           const MatchingBlockParams& params,
                           const BlockRunOptions& options = {});

StreamState matching_stack(Tape* tape, const StreamState& state,
                           const std::vector<MatchingBlockParams>& blocks,
                           const BlockRunOptions& options = {});

}  // namespace mmt
