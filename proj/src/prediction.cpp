#include "mmt/prediction.hpp"

namespace mmt {

Tensor weighted_pool(Tape* tape, const Tensor& h, const Mask& mask, const PoolParams& params,
                     Tensor* weights_out) {
  if (static_cast<std::int64_t>(mask.size()) != h.rows()) {
    throw ShapeError("weighted_pool: mask length " + std::to_string(mask.size()) + " vs rows " +
                     std::to_string(h.rows()));
  }
  bool any = false;
  for (auto m : mask) any = any || m;
  if (!any) throw MaskError("weighted_pool: all positions masked");

  Tensor hidden = relu(tape, add_rowvec(tape, matmul(tape, h, params.w_hidden), params.b_hidden));
  Tensor logits = add_rowvec(tape, matmul(tape, hidden, params.w_score), params.b_score);
  Tensor weights = softmax(tape, transpose(tape, logits), &mask);  // 1 x L
  if (weights_out) *weights_out = Tensor(weights.shape(), weights.values());
  return matmul(tape, weights, h);  // 1 x d
}

Tensor fuse_context(Tape* tape, const std::vector<Tensor>& pooled, const GateParams& params,
                    Tensor* weights_out) {
  return fusional_gate(tape, pooled, params, weights_out);
}

Tensor cosine_score(Tape* tape, const Tensor& u, const Tensor& v, double eps) {
  if (u.numel() != v.numel()) {
    throw ShapeError("cosine_score: dimension mismatch " + shape_str(u.shape()) + " vs " +
                     shape_str(v.shape()));
  }
  Tensor dot = matmul(tape, u, transpose(tape, v));
  Tensor norm_u = sqrt_op(tape, matmul(tape, u, transpose(tape, u)));
  Tensor norm_v = sqrt_op(tape, matmul(tape, v, transpose(tape, v)));
  Tensor denom = add_const(tape, mul(tape, norm_u, norm_v), eps);
  return divide(tape, dot, denom);
}

}  // namespace mmt
