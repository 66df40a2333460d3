#include "inpk/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "inpk/errors.hpp"
#include "inpk/kernels.hpp"

namespace inpk {
namespace {

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw DimensionError(std::string(op) + " expects a matrix, got shape " + shape_str(t.shape()));
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

// Mutable gradient buffer of an input, or an empty span when it takes none.
std::span<double> grad_of(Tensor t) {
  return t.requires_grad() ? t.grad_mut() : std::span<double>{};
}

template <class F>
Tensor unary(Graph& g, const char* kind, const Tensor& x, F&& fwd_deriv) {
  const auto xv = x.values();
  std::vector<double> y(xv.size());
  std::vector<double> dydx(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) fwd_deriv(xv[i], y[i], dydx[i]);
  return g.emit(kind, x.shape(), std::move(y), {x},
                [x, dydx = std::move(dydx)](const Tensor& out) {
                  auto gx = grad_of(x);
                  if (gx.empty()) return;
                  const auto go = out.grad();
                  for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * dydx[i];
                });
}

}  // namespace

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  std::vector<double> c(m * n, 0.0);
  kernels::active().gemm_nn(m, n, k, a.values().data(), b.values().data(), c.data());
  return g.emit("matmul", {m, n}, std::move(c), {a, b}, [a, b, m, n, k](const Tensor& out) {
    const auto& kt = kernels::active();
    const double* go = out.grad().data();
    if (auto ga = grad_of(a); !ga.empty()) kt.gemm_nt(m, k, n, go, b.values().data(), ga.data());
    if (auto gb = grad_of(b); !gb.empty()) kt.gemm_tn(k, n, m, a.values().data(), go, gb.data());
  });
}

Tensor transpose(Graph& g, const Tensor& x) {
  require_rank2(x, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  const auto xv = x.values();
  std::vector<double> y(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y[j * r + i] = xv[i * c + j];
  return g.emit("transpose", {c, r}, std::move(y), {x}, [x, r, c](const Tensor& out) {
    auto gx = grad_of(x);
    if (gx.empty()) return;
    const auto go = out.grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += go[j * r + i];
  });
}

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  const auto av = a.values(), bv = b.values();
  std::vector<double> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  return g.emit("add", a.shape(), std::move(y), {a, b}, [a, b](const Tensor& out) {
    const auto go = out.grad();
    if (auto ga = grad_of(a); !ga.empty())
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    if (auto gb = grad_of(b); !gb.empty())
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
  });
}

Tensor sub(Graph& g, const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  const auto av = a.values(), bv = b.values();
  std::vector<double> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] - bv[i];
  return g.emit("sub", a.shape(), std::move(y), {a, b}, [a, b](const Tensor& out) {
    const auto go = out.grad();
    if (auto ga = grad_of(a); !ga.empty())
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    if (auto gb = grad_of(b); !gb.empty())
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
  });
}

Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  const auto av = a.values(), bv = b.values();
  std::vector<double> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
  return g.emit("mul", a.shape(), std::move(y), {a, b}, [a, b](const Tensor& out) {
    const auto go = out.grad();
    const auto av = a.values(), bv = b.values();
    if (auto ga = grad_of(a); !ga.empty())
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv[i];
    if (auto gb = grad_of(b); !gb.empty())
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av[i];
  });
}

Tensor scale(Graph& g, const Tensor& x, double factor) {
  const auto xv = x.values();
  std::vector<double> y(xv.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] * factor;
  return g.emit("scale", x.shape(), std::move(y), {x}, [x, factor](const Tensor& out) {
    auto gx = grad_of(x);
    if (gx.empty()) return;
    const auto go = out.grad();
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * factor;
  });
}

Tensor add_bias(Graph& g, const Tensor& x, const Tensor& bias) {
  const std::size_t n = x.cols(), rows = x.rows();
  if (bias.numel() != n)
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match rows of " +
                         shape_str(x.shape()));
  const auto xv = x.values(), bv = bias.values();
  std::vector<double> y(xv.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] = xv[r * n + j] + bv[j];
  return g.emit("add_bias", x.shape(), std::move(y), {x, bias},
                [x, bias, rows, n](const Tensor& out) {
                  const auto go = out.grad();
                  if (auto gx = grad_of(x); !gx.empty())
                    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
                  if (auto gb = grad_of(bias); !gb.empty())
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t j = 0; j < n; ++j) gb[j] += go[r * n + j];
                });
}

Tensor gelu(Graph& g, const Tensor& x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double a = 0.044715;
  return unary(g, "gelu", x, [](double v, double& y, double& d) {
    const double u = c * (v + a * v * v * v);
    const double t = std::tanh(u);
    y = 0.5 * v * (1.0 + t);
    d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * a * v * v);
  });
}

Tensor abs(Graph& g, const Tensor& x) {
  return unary(g, "abs", x, [](double v, double& y, double& d) {
    y = std::fabs(v);
    d = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
  });
}

Tensor log(Graph& g, const Tensor& x) {
  for (double v : x.values())
    if (v <= 0.0) throw DomainError("log of non-positive value " + std::to_string(v));
  return unary(g, "log", x, [](double v, double& y, double& d) {
    y = std::log(v);
    d = 1.0 / v;
  });
}

Tensor softmax(Graph& g, const Tensor& x, std::size_t axis) {
  const auto& s = x.shape();
  if (axis >= s.size())
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  const auto xv = x.values();
  std::vector<double> y(xv.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, xv[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(xv[base + j * inner] - mx);
        y[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < n; ++j) y[base + j * inner] /= z;
    }
  return g.emit("softmax", s, std::move(y), {x}, [x, outer, inner, n](const Tensor& out) {
    auto gx = grad_of(x);
    if (gx.empty()) return;
    const auto go = out.grad();
    const auto yv = out.values();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double dotp = 0.0;
        for (std::size_t j = 0; j < n; ++j) dotp += go[base + j * inner] * yv[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t idx = base + j * inner;
          gx[idx] += yv[idx] * (go[idx] - dotp);
        }
      }
  });
}

Tensor layer_norm(Graph& g, const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t d = x.cols(), rows = x.rows();
  if (d == 0) throw DimensionError("layer_norm over an empty dimension");
  if (gain.numel() != d || bias.numel() != d)
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
                         shape_str(bias.shape()) + " do not match " + shape_str(x.shape()));
  const auto xv = x.values(), gv = gain.values(), bv = bias.values();
  std::vector<double> y(xv.size()), xhat(xv.size()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * is;
      xhat[r * d + j] = h;
      y[r * d + j] = h * gv[j] + bv[j];
    }
  }
  return g.emit(
      "layer_norm", x.shape(), std::move(y), {x, gain, bias},
      [x, gain, bias, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          const Tensor& out) {
        const auto go = out.grad();
        const auto gv = gain.values();
        auto gx = grad_of(x);
        auto gg = grad_of(gain);
        auto gb = grad_of(bias);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gr = go.data() + r * d;
          const double* hr = xhat.data() + r * d;
          if (!gg.empty())
            for (std::size_t j = 0; j < d; ++j) gg[j] += gr[j] * hr[j];
          if (!gb.empty())
            for (std::size_t j = 0; j < d; ++j) gb[j] += gr[j];
          if (gx.empty()) continue;
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = gr[j] * gv[j];
            m1 += dh;
            m2 += dh * hr[j];
          }
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j)
            gx[r * d + j] += inv_std[r] * (gr[j] * gv[j] - m1 - hr[j] * m2);
        }
      });
}

Tensor sum(Graph& g, const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return g.emit("sum", {1}, {s}, {x}, [x](const Tensor& out) {
    auto gx = grad_of(x);
    if (gx.empty()) return;
    const double go = out.grad()[0];
    for (auto& v : gx) v += go;
  });
}

Tensor mean(Graph& g, const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  double s = 0.0;
  for (double v : x.values()) s += v;
  return g.emit("mean", {1}, {s / n}, {x}, [x, n](const Tensor& out) {
    auto gx = grad_of(x);
    if (gx.empty()) return;
    const double go = out.grad()[0] / n;
    for (auto& v : gx) v += go;
  });
}

Tensor gather_rows(Graph& g, const Tensor& x, std::span<const std::size_t> index) {
  const std::size_t c = x.cols(), rows = x.rows();
  const auto xv = x.values();
  std::vector<double> y(index.size() * c);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows)
      throw LookupError("gather_rows: row " + std::to_string(index[i]) + " out of range for " +
                        shape_str(x.shape()));
    std::copy_n(xv.data() + index[i] * c, c, y.data() + i * c);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return g.emit("gather_rows", {index.size(), c}, std::move(y), {x},
                [x, c, idx = std::move(idx)](const Tensor& out) {
                  auto gx = grad_of(x);
                  if (gx.empty()) return;
                  const auto go = out.grad();
                  for (std::size_t i = 0; i < idx.size(); ++i) {
                    double* dst = gx.data() + idx[i] * c;
                    const double* src = go.data() + i * c;
                    for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
                  }
                });
}

Tensor concat_rows(Graph& g, const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols())
    throw DimensionError("concat_rows: column mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  const std::size_t c = a.cols(), ra = a.rows(), rb = b.rows();
  std::vector<double> y;
  y.reserve((ra + rb) * c);
  y.insert(y.end(), a.values().begin(), a.values().end());
  y.insert(y.end(), b.values().begin(), b.values().end());
  return g.emit("concat_rows", {ra + rb, c}, std::move(y), {a, b}, [a, b, c, ra](const Tensor& out) {
    const auto go = out.grad();
    if (auto ga = grad_of(a); !ga.empty())
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
    if (auto gb = grad_of(b); !gb.empty())
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[ra * c + i];
  });
}

Tensor reshape(Graph& g, const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                         " changes the element count");
  std::vector<double> y(x.values().begin(), x.values().end());
  return g.emit("reshape", std::move(shape), std::move(y), {x}, [x](const Tensor& out) {
    auto gx = grad_of(x);
    if (gx.empty()) return;
    const auto go = out.grad();
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
  });
}

Tensor l2_normalize_rows(Graph& g, const Tensor& x) {
  const std::size_t c = x.cols(), rows = x.rows();
  const auto xv = x.values();
  std::vector<double> y(xv.size()), inv(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double n2 = kernels::active().dot(xv.data() + r * c, xv.data() + r * c, c);
    if (n2 == 0.0) throw DomainError("l2_normalize_rows: row " + std::to_string(r) + " has zero norm");
    inv[r] = 1.0 / std::sqrt(n2);
    for (std::size_t j = 0; j < c; ++j) y[r * c + j] = xv[r * c + j] * inv[r];
  }
  return g.emit("l2_normalize_rows", x.shape(), std::move(y), {x},
                [x, c, rows, inv = std::move(inv)](const Tensor& out) {
                  auto gx = grad_of(x);
                  if (gx.empty()) return;
                  const auto go = out.grad();
                  const auto yv = out.values();
                  for (std::size_t r = 0; r < rows; ++r) {
                    double dotp = 0.0;
                    for (std::size_t j = 0; j < c; ++j) dotp += go[r * c + j] * yv[r * c + j];
                    for (std::size_t j = 0; j < c; ++j)
                      gx[r * c + j] += inv[r] * (go[r * c + j] - yv[r * c + j] * dotp);
                  }
                });
}

Tensor cosine_sim(Graph& g, const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel())
    throw DimensionError("cosine_sim: length mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  const auto av = a.values(), bv = b.values();
  const double na = std::sqrt(kernels::dot(av, av));
  const double nb = std::sqrt(kernels::dot(bv, bv));
  if (na == 0.0 || nb == 0.0) throw DomainError("cosine_sim of a zero-norm vector");
  const double ab = kernels::dot(av, bv);
  const double cs = std::clamp(ab / (na * nb), -1.0, 1.0);
  return g.emit("cosine_sim", {1}, {cs}, {a, b}, [a, b, na, nb, cs](const Tensor& out) {
    const double go = out.grad()[0];
    const auto av = a.values(), bv = b.values();
    if (auto ga = grad_of(a); !ga.empty())
      for (std::size_t i = 0; i < ga.size(); ++i)
        ga[i] += go * (bv[i] / (na * nb) - cs * av[i] / (na * na));
    if (auto gb = grad_of(b); !gb.empty())
      for (std::size_t i = 0; i < gb.size(); ++i)
        gb[i] += go * (av[i] / (na * nb) - cs * bv[i] / (nb * nb));
  });
}

Tensor nll_mean(Graph& g, const Tensor& probs, std::span<const std::size_t> labels) {
  require_rank2(probs, "nll_mean");
  const std::size_t b = probs.dim(0), c = probs.dim(1);
  if (labels.size() != b)
    throw DimensionError("nll_mean: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(b) + " rows");
  if (b == 0) throw DimensionError("nll_mean over an empty batch");
  const auto pv = probs.values();
  double s = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] >= c)
      throw DomainError("label " + std::to_string(labels[i]) + " out of range for " +
                        std::to_string(c) + " classes");
    const double p = pv[i * c + labels[i]];
    if (p <= 0.0) throw DomainError("probability of the true class underflowed to zero");
    s -= std::log(p);
  }
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return g.emit("nll_mean", {1}, {s / static_cast<double>(b)}, {probs},
                [probs, b, c, lab = std::move(lab)](const Tensor& out) {
                  auto gp = grad_of(probs);
                  if (gp.empty()) return;
                  const double go = out.grad()[0] / static_cast<double>(b);
                  const auto pv = probs.values();
                  for (std::size_t i = 0; i < b; ++i) gp[i * c + lab[i]] -= go / pv[i * c + lab[i]];
                });
}

AttentionResult scaled_dot_attention(Graph& g, const Tensor& q, const Tensor& k, const Tensor& v,
                                     const AttentionLayout& lay) {
  require_rank2(q, "attention");
  require_rank2(k, "attention");
  require_rank2(v, "attention");
  const std::size_t d = q.dim(1), B = lay.batch, Lq = lay.query_len, Lk = lay.key_len,
                    H = lay.heads;
  if (H == 0 || d % H != 0)
    throw ConfigError("attention: width " + std::to_string(d) + " is not divisible by " +
                      std::to_string(H) + " heads");
  if (q.dim(0) != B * Lq || k.dim(0) != B * Lk || v.dim(0) != B * Lk || k.dim(1) != d ||
      v.dim(1) != d)
    throw DimensionError("attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
                         ", v " + shape_str(v.shape()) + " do not match batch " +
                         std::to_string(B) + " x (" + std::to_string(Lq) + ", " +
                         std::to_string(Lk) + ")");
  if (lay.causal && Lq != Lk) throw ConfigError("causal attention needs equal query/key lengths");
  if (!lay.key_valid.empty() && lay.key_valid.size() != B * Lk)
    throw DimensionError("attention: key mask has " + std::to_string(lay.key_valid.size()) +
                         " entries, expected " + std::to_string(B * Lk));

  const std::size_t dh = d / H;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto& kt = kernels::active();
  const double* qv = q.values().data();
  const double* kv = k.values().data();
  const double* vv = v.values().data();
  std::vector<double> w(B * H * Lq * Lk, 0.0);
  std::vector<double> o(B * Lq * d, 0.0);
  std::vector<double> srow(Lk);

  auto visible = [&](std::size_t b, std::size_t i, std::size_t j) {
    if (lay.causal && j > i) return false;
    return lay.key_valid.empty() || lay.key_valid[b * Lk + j] != 0;
  };

  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t i = 0; i < Lq; ++i) {
        const double* qi = qv + (b * Lq + i) * d + h * dh;
        double mx = -std::numeric_limits<double>::infinity();
        bool any = false;
        for (std::size_t j = 0; j < Lk; ++j) {
          if (!visible(b, i, j)) continue;
          srow[j] = kt.dot(qi, kv + (b * Lk + j) * d + h * dh, dh) * sc;
          mx = std::max(mx, srow[j]);
          any = true;
        }
        if (!any)
          throw DegenerateAttentionError("attention: every key is masked for query " +
                                         std::to_string(i) + " of sequence " + std::to_string(b));
        double* wi = w.data() + ((b * H + h) * Lq + i) * Lk;
        double z = 0.0;
        for (std::size_t j = 0; j < Lk; ++j) {
          if (!visible(b, i, j)) continue;
          wi[j] = std::exp(srow[j] - mx);
          z += wi[j];
        }
        double* oi = o.data() + (b * Lq + i) * d + h * dh;
        for (std::size_t j = 0; j < Lk; ++j) {
          if (wi[j] == 0.0) continue;
          wi[j] /= z;
          kt.axpy(wi[j], vv + (b * Lk + j) * d + h * dh, oi, dh);
        }
      }

  Tensor weights({B * H * Lq, Lk}, w, false);
  Tensor out = g.emit(
      "attention", {B * Lq, d}, std::move(o), {q, k, v},
      [q, k, v, B, Lq, Lk, H, d, dh, sc, w = std::move(w)](const Tensor& out) {
        const auto& kt = kernels::active();
        const double* go = out.grad().data();
        auto gq = grad_of(q);
        auto gk = grad_of(k);
        auto gv = grad_of(v);
        const double* qv = q.values().data();
        const double* kv = k.values().data();
        const double* vv = v.values().data();
        std::vector<double> ds(Lk);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t h = 0; h < H; ++h)
            for (std::size_t i = 0; i < Lq; ++i) {
              const double* wi = w.data() + ((b * H + h) * Lq + i) * Lk;
              const double* goi = go + (b * Lq + i) * d + h * dh;
              double acc = 0.0;
              for (std::size_t j = 0; j < Lk; ++j) {
                if (wi[j] == 0.0) {
                  ds[j] = 0.0;
                  continue;
                }
                ds[j] = kt.dot(goi, vv + (b * Lk + j) * d + h * dh, dh);
                acc += wi[j] * ds[j];
                if (!gv.empty()) kt.axpy(wi[j], goi, gv.data() + (b * Lk + j) * d + h * dh, dh);
              }
              const double* qi = qv + (b * Lq + i) * d + h * dh;
              for (std::size_t j = 0; j < Lk; ++j) {
                if (wi[j] == 0.0) continue;
                const double dsj = wi[j] * (ds[j] - acc) * sc;
                if (!gq.empty())
                  kt.axpy(dsj, kv + (b * Lk + j) * d + h * dh, gq.data() + (b * Lq + i) * d + h * dh,
                          dh);
                if (!gk.empty()) kt.axpy(dsj, qi, gk.data() + (b * Lk + j) * d + h * dh, dh);
              }
            }
      });
  return {out, weights};
}

}  // namespace inpk
