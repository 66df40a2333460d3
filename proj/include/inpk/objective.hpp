#pragma once
// Cosine-similarity classifier head and the composite training loss:
//   p(y = i | x) = softmax_i(cos(x, f_i) / tau)
//   L = CE + lambda * mean_c sum_d |f_tilde[c] - f[c]|

#include <span>

#include "inpk/ops.hpp"

namespace inpk {

struct LossConfig {
  double tau = 0.01;
  double lambda = 25.0;
};

void validate(const LossConfig& cfg);

// x: [B x d] (or one [d] vector), f: [C x d] -> [B x C] probabilities.
Tensor class_probs(Graph& g, const Tensor& x, const Tensor& f, double tau);
Tensor loss_ce(Graph& g, const Tensor& probs, std::span<const std::size_t> labels);
// Per-class L1 sums averaged over classes.
Tensor loss_text(Graph& g, const Tensor& f_tilde, const Tensor& f);
Tensor loss_total(Graph& g, const Tensor& ce, const Tensor& text, double lambda);

// argmax per row of a [B x C] tensor (first maximum wins).
std::vector<std::size_t> argmax_rows(const Tensor& scores);

}  // namespace inpk
