#pragma once
// Differentiable primitives. Every op takes the Graph that records it.
//
// Shapes are row-major; "rows" means the product of all leading dimensions.
// Broadcasting is limited to a trailing-dimension vector applied to every row
// (bias, layer-norm gain); everything else needs identical shapes.

#include <cstdint>
#include <span>
#include <vector>

#include "inpk/tensor.hpp"

namespace inpk {

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b);
Tensor transpose(Graph& g, const Tensor& x);
Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor sub(Graph& g, const Tensor& a, const Tensor& b);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);
Tensor scale(Graph& g, const Tensor& x, double factor);
// x[rows x n] + bias[n] on every row.
Tensor add_bias(Graph& g, const Tensor& x, const Tensor& bias);

// Smooth activation used inside every feed-forward block: the tanh form
//   gelu(x) = 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Tensor gelu(Graph& g, const Tensor& x);
Tensor abs(Graph& g, const Tensor& x);  // subgradient 0 at 0
Tensor log(Graph& g, const Tensor& x);  // DomainError unless x > 0

// Softmax along `axis`, max-shifted.
Tensor softmax(Graph& g, const Tensor& x, std::size_t axis);
// Per-row normalization over the last dimension followed by gain/bias.
Tensor layer_norm(Graph& g, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

Tensor sum(Graph& g, const Tensor& x);
Tensor mean(Graph& g, const Tensor& x);

// Row gather from a matrix (or any tensor viewed as rows x cols). Backward
// scatter-adds, so repeated indices accumulate.
Tensor gather_rows(Graph& g, const Tensor& x, std::span<const std::size_t> index);
Tensor concat_rows(Graph& g, const Tensor& a, const Tensor& b);
Tensor reshape(Graph& g, const Tensor& x, Shape shape);

// Unit-L2 rows. DomainError on a zero row.
Tensor l2_normalize_rows(Graph& g, const Tensor& x);
// a.b / (|a| |b|) for two vectors of equal length, as a scalar tensor.
Tensor cosine_sim(Graph& g, const Tensor& a, const Tensor& b);

// -(1/B) sum_i log probs[i, labels[i]] for probs[B x C].
Tensor nll_mean(Graph& g, const Tensor& probs, std::span<const std::size_t> labels);

// Batched scaled dot-product attention over packed sequences.
//   q: [batch*query_len x d], k and v: [batch*key_len x d]
// d is split into `heads` contiguous column groups.
struct AttentionLayout {
  std::size_t batch = 1;
  std::size_t query_len = 0;
  std::size_t key_len = 0;
  std::size_t heads = 1;
  // Query i may only attend to keys j <= i. Requires query_len == key_len.
  bool causal = false;
  // batch*key_len flags; empty means every key is visible.
  std::vector<std::uint8_t> key_valid;
};

struct AttentionResult {
  Tensor output;
  // [batch*heads*query_len x key_len] softmax weights (values only).
  Tensor weights;
};

AttentionResult scaled_dot_attention(Graph& g, const Tensor& q, const Tensor& k, const Tensor& v,
                                     const AttentionLayout& layout);

}  // namespace inpk
