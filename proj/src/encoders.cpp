#include "mmt/encoders.hpp"

#include <cmath>

namespace mmt {

std::vector<double> positional_embedding(std::int64_t pos, std::int64_t d_model) {
  if (d_model < 2 || d_model % 2 != 0) {
    throw ConfigError("positional_embedding: d_model must be even and >= 2, got " +
                      std::to_string(d_model));
  }
  if (pos < 0) throw ConfigError("positional_embedding: negative position");
  std::vector<double> pe(static_cast<std::size_t>(d_model));
  for (std::int64_t i = 0; 2 * i < d_model; ++i) {
    const double exponent = static_cast<double>(2 * i) / static_cast<double>(d_model);
    const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
    pe[static_cast<std::size_t>(2 * i)] = std::sin(angle);
    pe[static_cast<std::size_t>(2 * i + 1)] = std::cos(angle);
  }
  return pe;
}

Tensor positional_rows(std::int64_t length, std::int64_t d_model) {
  Tensor rows({length, d_model});
  for (std::int64_t t = 0; t < length; ++t) {
    const auto pe = positional_embedding(t, d_model);
    for (std::int64_t j = 0; j < d_model; ++j) rows.at(t, j) = pe[static_cast<std::size_t>(j)];
  }
  return rows;
}

Tensor encode_comment(Tape* tape, std::span<const std::int32_t> ids,
                      const EncoderParams& params) {
  Tensor embedded = embedding_lookup(tape, params.embedding, ids);
  return add(tape, embedded, positional_rows(embedded.rows(), embedded.cols()));
}

Tensor encode_vision(Tape* tape, const Tensor& features, const EncoderParams& params) {
  const std::int64_t d = params.embedding.cols();
  Tensor projected;
  if (params.vision_proj_w.defined()) {
    if (features.cols() != params.vision_proj_w.rows()) {
      throw ShapeError("encode_vision: feature width " + std::to_string(features.cols()) +
                       " does not match projection input " +
                       std::to_string(params.vision_proj_w.rows()));
    }
    projected = add_rowvec(tape, matmul(tape, features, params.vision_proj_w),
                           params.vision_proj_b);
  } else {
    if (features.cols() != d) {
      throw ShapeError("encode_vision: feature width " + std::to_string(features.cols()) +
                       " does not match model width " + std::to_string(d));
    }
    projected = features;
  }
  return add(tape, projected, positional_rows(projected.rows(), d));
}

Tensor gru_step(Tape* tape, const Tensor& input_row, const Tensor& hidden,
                const GruParams& p) {
  Tensor z = sigmoid(tape, add(tape,
                               add(tape, matmul(tape, input_row, p.w_update),
                                   matmul(tape, hidden, p.u_update)),
                               p.b_update));
  Tensor r = sigmoid(tape, add(tape,
                               add(tape, matmul(tape, input_row, p.w_reset),
                                   matmul(tape, hidden, p.u_reset)),
                               p.b_reset));
  Tensor cand = tanh_op(tape, add(tape,
                                  add(tape, matmul(tape, input_row, p.w_cand),
                                      matmul(tape, mul(tape, r, hidden), p.u_cand)),
                                  p.b_cand));
  Tensor keep = sub(tape, Tensor(hidden.shape(), 1.0), z);
  return add(tape, mul(tape, keep, hidden), mul(tape, z, cand));
}

Tensor encode_audio(Tape* tape, const Tensor& frames,
                    const std::array<std::pair<std::int32_t, std::int32_t>, 5>& slices,
                    const EncoderParams& params) {
  const std::int64_t n = frames.rows(), in_dim = frames.cols();
  const std::int64_t d = params.gru.u_update.rows();
  std::int32_t expected_start = 0;
  for (const auto& [lo, hi] : slices) {
    if (lo != expected_start || hi <= lo) {
      throw DataError("encode_audio: slices must be nonempty, ordered, and contiguous");
    }
    expected_start = hi;
  }
  if (expected_start != n) {
    throw DataError("encode_audio: slices cover " + std::to_string(expected_start) +
                    " frames but input has " + std::to_string(n));
  }
  if (params.gru.w_update.rows() != in_dim) {
    throw ShapeError("encode_audio: frame width " + std::to_string(in_dim) +
                     " does not match cell input " + std::to_string(params.gru.w_update.rows()));
  }

  std::vector<Tensor> last_states;
  last_states.reserve(5);
  for (const auto& [lo, hi] : slices) {
    Tensor hidden({1, d});  // zero state per slice
    for (std::int32_t f = lo; f < hi; ++f) {
      Tensor row({1, in_dim});
      const double* src = frames.data() + static_cast<std::int64_t>(f) * in_dim;
      std::copy(src, src + in_dim, row.data());
      hidden = gru_step(tape, row, hidden, params.gru);
    }
    last_states.push_back(hidden);
  }
  Tensor stacked = concat_rows(tape, last_states);
  return add(tape, stacked, positional_rows(5, d));
}

}  // namespace mmt
