#include "inpk/objective.hpp"

#include <cmath>

#include "inpk/errors.hpp"

namespace inpk {

void validate(const LossConfig& cfg) {
  if (!(cfg.tau > 0.0) || !std::isfinite(cfg.tau))
    throw ConfigError("temperature must be positive, got " + std::to_string(cfg.tau));
  if (!(cfg.lambda >= 0.0) || !std::isfinite(cfg.lambda))
    throw ConfigError("text loss weight must be non-negative, got " + std::to_string(cfg.lambda));
}

Tensor class_probs(Graph& g, const Tensor& x, const Tensor& f, double tau) {
  if (!(tau > 0.0)) throw DomainError("temperature must be positive");
  const Tensor xs = x.rank() == 1 ? reshape(g, x, {1, x.numel()}) : x;
  if (xs.cols() != f.cols())
    throw DimensionError("image features " + shape_str(x.shape()) + " and text features " +
                         shape_str(f.shape()) + " differ in width");
  const Tensor sims =
      matmul(g, l2_normalize_rows(g, xs), transpose(g, l2_normalize_rows(g, f)));
  return softmax(g, scale(g, sims, 1.0 / tau), 1);
}

Tensor loss_ce(Graph& g, const Tensor& probs, std::span<const std::size_t> labels) {
  return nll_mean(g, probs, labels);
}

Tensor loss_text(Graph& g, const Tensor& f_tilde, const Tensor& f) {
  if (f_tilde.shape() != f.shape())
    throw DimensionError("text features " + shape_str(f_tilde.shape()) + " vs reference " +
                         shape_str(f.shape()));
  return scale(g, sum(g, abs(g, sub(g, f_tilde, f))), 1.0 / static_cast<double>(f.rows()));
}

Tensor loss_total(Graph& g, const Tensor& ce, const Tensor& text, double lambda) {
  if (!(lambda >= 0.0)) throw DomainError("text loss weight must be non-negative");
  return add(g, ce, scale(g, text, lambda));
}

std::vector<std::size_t> argmax_rows(const Tensor& scores) {
  const std::size_t r = scores.rows(), c = scores.cols();
  const auto v = scores.values();
  std::vector<std::size_t> out(r, 0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 1; j < c; ++j)
      if (v[i * c + j] > v[i * c + out[i]]) out[i] = j;
  return out;
}

}  // namespace inpk
