#pragma once

#include <functional>
#include <vector>

#include "diffe/tensor.hpp"

namespace diffe {

// Elementwise; shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor abs(const Tensor& a);
Tensor silu(const Tensor& a);

// Mean over all elements -> shape {1}.
Tensor mean_all(const Tensor& a);

// Copy into a new shape with the same element count.
Tensor reshape(const Tensor& a, Shape shape);

// Concatenate [B,C_i,L] tensors along the channel axis.
Tensor concat_channels(const std::vector<Tensor>& xs);

// Time-axis helpers for [B,C,L] tensors.
Tensor pad_right(const Tensor& x, int new_len);   // zero-pad to new_len >= L
Tensor crop_right(const Tensor& x, int new_len);  // keep first new_len samples
Tensor upsample2(const Tensor& x);                // nearest neighbour, factor 2

// 1-D cross-correlation (no kernel flip): x [B,Cin,L], w [Cout,Cin,K],
// b [Cout] or undefined for no bias. L_out = (L + 2*padding - K)/stride + 1.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 1, int padding = 0);

// x [B,F], w [O,F], b [O] -> [B,O].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Group normalization over [B,C,L]; gamma/beta are per-channel [C].
// `groups` must divide C.
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups, double eps = 1e-5);

// Mean over contiguous bins that partition [0,L); bin i covers
// [floor(i*L/out), floor((i+1)*L/out)). Requires 1 <= out_len <= L.
Tensor adaptive_avg_pool1d(const Tensor& x, int out_len);

// x [B,C,L] + bias [B,C] broadcast over the time axis.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

// Finite-difference check of reverse-mode gradients. Runs `fn` once with the
// tape on, then probes every element of every requires_grad input with a
// central difference of step `epsilon`. Non-scalar outputs are reduced by a
// fixed pseudo-random linear functional so the whole Jacobian is exercised.
// Returns max over parameters of |analytic - numeric| / max(1, |analytic|).
double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& fn, std::vector<Tensor> inputs,
                  double epsilon);

}  // namespace diffe
