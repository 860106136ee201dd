#pragma once

#include <array>
#include <span>
#include <utility>

#include "mmt/tensor.hpp"

namespace mmt {

// Fixed sinusoidal positional embedding: element 2i holds
// sin(pos / 10000^(2i/d_model)), element 2i+1 the cosine of the same
// argument. d_model must be even.
std::vector<double> positional_embedding(std::int64_t pos, std::int64_t d_model);

// Constant length x d_model tensor whose row t is positional_embedding(t).
Tensor positional_rows(std::int64_t length, std::int64_t d_model);

// Gated recurrent cell: update gate z, reset gate r, candidate state via
// tanh, biases on the input transforms.
struct GruParams {
  Tensor w_update, u_update, b_update;
  Tensor w_reset, u_reset, b_reset;
  Tensor w_cand, u_cand, b_cand;
};

struct EncoderParams {
  Tensor embedding;      // |V| x d, shared by surrounding comments and candidate
  Tensor vision_proj_w;  // D_v x d; left undefined when D_v == d (identity bypass)
  Tensor vision_proj_b;  // 1 x d
  GruParams gru;         // audio cell, input width D_a, hidden width d
};

// Row t = embedding[id_t] + PE(t). PAD rows carry only the positional part.
Tensor encode_comment(Tape* tape, std::span<const std::int32_t> ids,
                      const EncoderParams& params);

// Row i = projection(features[i]) + PE(i); identity projection when the
// feature width already matches the model width.
Tensor encode_vision(Tape* tape, const Tensor& features, const EncoderParams& params);

Tensor gru_step(Tape* tape, const Tensor& input_row, const Tensor& hidden,
                const GruParams& params);

// Runs the shared cell over each of the 5 frame slices from a zero initial
// state; output row t is the slice's last hidden state plus PE(t). Frames
// are fixed inputs and do not receive gradients.
Tensor encode_audio(Tape* tape, const Tensor& frames,
                    const std::array<std::pair<std::int32_t, std::int32_t>, 5>& slices,
                    const EncoderParams& params);

}  // namespace mmt
