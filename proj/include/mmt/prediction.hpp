#pragma once

#include "mmt/matching.hpp"

namespace mmt {

// Weighted-pooling parameters: ReLU MLP to per-position logits, softmax over
// unmasked positions, convex combination of the rows.
struct PoolParams {
  Tensor w_hidden, b_hidden;  // d x d_p, 1 x d_p (d_p = d)
  Tensor w_score, b_score;    // d_p x 1, 1 x 1
};

Tensor weighted_pool(Tape* tape, const Tensor& h, const Mask& mask, const PoolParams& params,
                     Tensor* weights_out = nullptr);

// Same gate mechanism as the matching blocks, applied to pooled vectors.
Tensor fuse_context(Tape* tape, const std::vector<Tensor>& pooled, const GateParams& params,
                    Tensor* weights_out = nullptr);

// u.v / (|u||v| + eps); the epsilon keeps zero vectors defined (score 0).
Tensor cosine_score(Tape* tape, const Tensor& u, const Tensor& v, double eps = 1e-12);

}  // namespace mmt
