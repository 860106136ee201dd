#include "mmt/matching.hpp"

#include <cmath>

namespace mmt {

Tensor multi_head_attention(Tape* tape, const Tensor& query, const Tensor& key,
                            const Tensor& value, const Mask& key_mask,
                            const AttentionParams& params, AttentionProbe* probe) {
  const std::int64_t h = params.heads();
  if (h < 1) throw ConfigError("attention: no heads configured");
  const std::int64_t d = params.model_dim();
  const std::int64_t d_k = params.head_dim();
  if (h * d_k != d) {
    throw ShapeError("attention: heads*head_dim " + std::to_string(h * d_k) +
                     " does not equal model dim " + std::to_string(d));
  }
  if (query.cols() != d || key.cols() != d || value.cols() != d) {
    throw ShapeError("attention: input width mismatch with model dim " + std::to_string(d));
  }
  if (key.rows() != value.rows()) {
    throw ShapeError("attention: key/value row mismatch " + shape_str(key.shape()) + " vs " +
                     shape_str(value.shape()));
  }
  if (static_cast<std::int64_t>(key_mask.size()) != key.rows()) {
    throw ShapeError("attention: key mask length " + std::to_string(key_mask.size()) +
                     " vs keys " + std::to_string(key.rows()));
  }
  bool any_valid = false;
  for (auto m : key_mask) any_valid = any_valid || m;
  if (!any_valid) throw MaskError("attention: fully masked keys");

  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(d_k));
  std::vector<Tensor> head_outputs;
  head_outputs.reserve(h);
  for (std::int64_t i = 0; i < h; ++i) {
    Tensor q_i = matmul(tape, query, params.query_proj[i]);
    Tensor k_i = matmul(tape, key, params.key_proj[i]);
    Tensor v_i = matmul(tape, value, params.value_proj[i]);
    Tensor scores = scale(tape, matmul(tape, q_i, transpose(tape, k_i)), inv_sqrt_dk);
    Tensor weights = softmax(tape, scores, &key_mask);
    if (probe) probe->weights.push_back(Tensor(weights.shape(), weights.values()));
    head_outputs.push_back(matmul(tape, weights, v_i));
  }
  return matmul(tape, concat_cols(tape, head_outputs), params.output_proj);
}

Tensor position_wise_ffn(Tape* tape, const Tensor& h, const FfnParams& params) {
  Tensor inner = relu(tape, add_rowvec(tape, matmul(tape, h, params.w_inner), params.b_inner));
  return add_rowvec(tape, matmul(tape, inner, params.w_outer), params.b_outer);
}

Tensor fusional_gate(Tape* tape, const std::vector<Tensor>& inputs, const GateParams& params,
                     Tensor* weights_out) {
  if (inputs.empty()) throw ShapeError("fusional_gate: no inputs");
  const std::int64_t k = static_cast<std::int64_t>(inputs.size());
  const std::int64_t rows = inputs.front().rows();
  const std::int64_t d = inputs.front().cols();
  for (const auto& x : inputs) {
    if (x.rows() != rows || x.cols() != d) {
      throw ShapeError("fusional_gate: input shape mismatch " + shape_str(x.shape()) + " vs " +
                       shape_str(inputs.front().shape()));
    }
  }
  if (params.weight.rows() != k * d || params.weight.cols() != k * d) {
    throw ShapeError("fusional_gate: gate transform " + shape_str(params.weight.shape()) +
                     " does not match k*d = " + std::to_string(k * d));
  }

  Tensor stacked = concat_cols(tape, inputs);
  Tensor logits = add_rowvec(tape, matmul(tape, stacked, params.weight), params.bias);
  Tensor weights = gate_softmax(tape, logits, k);
  if (weights_out) *weights_out = Tensor(weights.shape(), weights.values());

  Tensor out;
  for (std::int64_t i = 0; i < k; ++i) {
    Tensor slice = slice_cols(tape, weights, i * d, (i + 1) * d);
    Tensor term = mul(tape, slice, inputs[static_cast<std::size_t>(i)]);
    out = i == 0 ? term : add(tape, out, term);
  }
  return out;
}

namespace {

Tensor residual_norm(Tape* tape, const Tensor& x, const Tensor& sublayer,
                     const LayerNormParams& ln, const BlockRunOptions& opt) {
  Tensor dropped = dropout(tape, sublayer, opt.dropout_rate, opt.training, opt.rng);
  return layer_norm(tape, add(tape, x, dropped), ln.gain, ln.bias, opt.ln_eps);
}

}  // namespace

StreamState matching_block(Tape* tape, const StreamState& state,
                           const MatchingBlockParams& params, const BlockRunOptions& opt) {
  const std::size_t n_streams = state.h.size();
  if (n_streams < 2) throw ConfigError("matching_block: needs at least two streams");
  if (state.mask.size() != n_streams || params.streams.size() != n_streams) {
    throw ShapeError("matching_block: stream/params count mismatch");
  }

  // (i) Self-attention and inner FFN produce this block's intermediate
  // representation for every stream before any cross attention reads it.
  std::vector<Tensor> intermediate(n_streams);
  for (std::size_t s = 0; s < n_streams; ++s) {
    const auto& p = *params.streams[s];
    AttentionProbe* probe = nullptr;
    if (opt.attention_probes) {
      opt.attention_probes->emplace_back();
      probe = &opt.attention_probes->back();
    }
    Tensor self_out =
        multi_head_attention(tape, state.h[s], state.h[s], state.h[s], state.mask[s],
                             p.self_attn, probe);
    Tensor x = residual_norm(tape, state.h[s], self_out, p.ln_self, opt);
    intermediate[s] = residual_norm(tape, x, position_wise_ffn(tape, x, p.ffn_inner),
                                    p.ln_inner, opt);
  }

  // (ii)-(iv) Cross attention onto every other stream, fusional gate, output
  // FFN.
  StreamState out;
  out.h.resize(n_streams);
  out.mask = state.mask;
  for (std::size_t s = 0; s < n_streams; ++s) {
    const auto& p = *params.streams[s];
    std::vector<Tensor> attended;
    attended.reserve(n_streams - 1);
    std::size_t cross_idx = 0;
    for (std::size_t o = 0; o < n_streams; ++o) {
      if (o == s) continue;
      if (cross_idx >= p.cross.size()) {
        throw ShapeError("matching_block: missing cross-attention params for stream " +
                         std::to_string(s));
      }
      AttentionProbe* probe = nullptr;
      if (opt.attention_probes) {
        opt.attention_probes->emplace_back();
        probe = &opt.attention_probes->back();
      }
      attended.push_back(multi_head_attention(tape, intermediate[s], intermediate[o],
                                              intermediate[o], state.mask[o],
                                              p.cross[cross_idx], probe));
      ++cross_idx;
    }
    Tensor gate_weights;
    Tensor fused = fusional_gate(tape, attended, p.gate,
                                 opt.gate_probes ? &gate_weights : nullptr);
    if (opt.gate_probes) opt.gate_probes->push_back(gate_weights);
    Tensor x = residual_norm(tape, intermediate[s], fused, p.ln_cross, opt);
    out.h[s] = residual_norm(tape, x, position_wise_ffn(tape, x, p.ffn_out), p.ln_out, opt);
  }
  return out;
}

StreamState matching_stack(Tape* tape, const StreamState& state,
                           const std::vector<MatchingBlockParams>& blocks,
                           const BlockRunOptions& opt) {
  if (blocks.empty()) throw ConfigError("matching_stack: needs at least one block");
  StreamState current = state;
  for (const auto& block : blocks) {
    current = matching_block(tape, current, block, opt);
  }
  return current;
}

}  // namespace mmt
