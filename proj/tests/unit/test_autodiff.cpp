#include <boost/multiprecision/cpp_dec_float.hpp>
#include <cmath>
#include <limits>
#include <numeric>

#include "doctest.h"
#include "inpk/errors.hpp"
#include "inpk/kernels.hpp"
#include "inpk/nn.hpp"
#include "inpk/ops.hpp"
#include "../support/testing.hpp"

using namespace inpk;
using namespace inpk::testing;

namespace {

constexpr int kTrials = 100;
constexpr double kFdTol = 1e-4;
constexpr double kEps = std::numeric_limits<double>::epsilon();

Tensor make(Shape s, std::vector<double> v, bool grad = false) { return Tensor(std::move(s), std::move(v), grad); }

// Pairs every op with a random, differentiable scalar readout (weighted sum)
// so that no gradient is trivially constant.
Tensor readout(Graph& g, const Tensor& y, const Tensor& w) { return sum(g, mul(g, y, w)); }

void expect_fd(const std::vector<GradReport>& reps, double tol = kFdTol) {
  for (const auto& r : reps) CHECK(r.worst_rel < tol);
}

struct KernelGuard {
  kernels::Isa saved = kernels::active().isa;
  ~KernelGuard() { kernels::select(saved); }
};

}  // namespace

TEST_SUITE("kernels") {
  TEST_CASE("avx2 kernels agree with the scalar reference") {
    const auto* avx = kernels::avx2_table();
    if (!avx || !kernels::cpu_supports(kernels::Isa::avx2)) {
      MESSAGE("AVX2 variant unavailable on this machine; equivalence not exercised");
      return;
    }
    const auto& ref = kernels::scalar_table();
    Rng rng(42);
    std::normal_distribution<double> n(0.0, 1.0);
    for (std::size_t len : {0, 1, 3, 4, 5, 7, 8, 15, 16, 33, 100}) {
      std::vector<double> a(len), b(len);
      for (auto& x : a) x = n(rng);
      for (auto& x : b) x = n(rng);
      const double d0 = ref.dot(a.data(), b.data(), len), d1 = avx->dot(a.data(), b.data(), len);
      CHECK(std::abs(d0 - d1) <= 1e-12 * (1.0 + std::abs(d0)));
      std::vector<double> y0(len, 0.5), y1(len, 0.5);
      ref.axpy(-1.7, a.data(), y0.data(), len);
      avx->axpy(-1.7, a.data(), y1.data(), len);
      CHECK(max_abs_diff(y0, y1) <= 1e-12);
    }
    for (auto [m, nn_, k] : {std::tuple{1, 1, 1}, {3, 5, 7}, {8, 8, 8}, {13, 9, 17}, {32, 64, 32}}) {
      const std::size_t M = m, N = nn_, K = k;
      std::vector<double> a(M * K), b(K * N), bt(N * K), at(K * M);
      for (auto& x : a) x = n(rng);
      for (auto& x : b) x = n(rng);
      for (auto& x : bt) x = n(rng);
      for (auto& x : at) x = n(rng);
      std::vector<double> c0(M * N, 0.25), c1(M * N, 0.25);
      ref.gemm_nn(M, N, K, a.data(), b.data(), c0.data());
      avx->gemm_nn(M, N, K, a.data(), b.data(), c1.data());
      CHECK(max_abs_diff(c0, c1) <= 1e-11);
      std::fill(c0.begin(), c0.end(), 0.0);
      std::fill(c1.begin(), c1.end(), 0.0);
      ref.gemm_nt(M, N, K, a.data(), bt.data(), c0.data());
      avx->gemm_nt(M, N, K, a.data(), bt.data(), c1.data());
      CHECK(max_abs_diff(c0, c1) <= 1e-11);
      std::fill(c0.begin(), c0.end(), 0.0);
      std::fill(c1.begin(), c1.end(), 0.0);
      ref.gemm_tn(M, N, K, at.data(), b.data(), c0.data());
      avx->gemm_tn(M, N, K, at.data(), b.data(), c1.data());
      CHECK(max_abs_diff(c0, c1) <= 1e-11);
    }
  }

  TEST_CASE("a full forward pass agrees across kernel variants") {
    if (!kernels::cpu_supports(kernels::Isa::avx2)) return;
    KernelGuard guard;
    Rng rng(5);
    const Tensor x = random_tensor({12, 16}, rng, 1.0, false);
    const TransformerLayer layer = make_transformer_layer(16, 4, 32, rng);
    AttentionLayout lay{2, 6, 6, 4, true, {}};
    auto run = [&] {
      Graph g(GradMode::inference);
      return transformer_layer(g, x, layer, lay);
    };
    kernels::select(kernels::Isa::scalar);
    const Tensor a = run();
    kernels::select(kernels::Isa::avx2);
    const Tensor b = run();
    CHECK(max_abs_diff(a.values(), b.values()) < 1e-12);
  }

  TEST_CASE("each variant is deterministic") {
    Rng rng(6);
    std::vector<double> a(77), b(77);
    std::normal_distribution<double> n;
    for (auto& x : a) x = n(rng);
    for (auto& x : b) x = n(rng);
    CHECK(kernels::active().dot(a.data(), b.data(), 77) == kernels::active().dot(a.data(), b.data(), 77));
  }

  TEST_CASE("selecting an unavailable ISA is a configuration error") {
    if (kernels::avx2_table() && kernels::cpu_supports(kernels::Isa::avx2)) return;
    CHECK_THROWS_AS(kernels::select(kernels::Isa::avx2), ConfigError);
  }
}

TEST_SUITE("tensor") {
  TEST_CASE("values length must equal the shape product") {
    CHECK_THROWS_AS(make({2, 3}, {1, 2, 3}), DimensionError);
    const Tensor t({2, 3});
    CHECK(t.numel() == 6);
    CHECK(t.values().size() == 6);
  }

  TEST_CASE("gradients share the value shape") {
    Tensor x = make({2, 2}, {1, 2, 3, 4}, true);
    Graph g;
    g.backward(sum(g, mul(g, x, x)));
    REQUIRE(x.has_grad());
    CHECK(x.grad().size() == x.numel());
  }

  TEST_CASE("backward of sum gives ones; of x*x at 3 gives 6") {
    Tensor x = make({3}, {1, -2, 5}, true);
    {
      Graph g;
      g.backward(sum(g, x));
    }
    for (double v : x.grad()) CHECK(v == 1.0);
    Tensor s = Tensor::scalar(3.0, true);
    Graph g;
    g.backward(mul(g, s, s));
    CHECK(s.grad()[0] == 6.0);
  }

  TEST_CASE("repeated backward accumulates until zeroed") {
    Tensor x = make({2}, {1, 2}, true);
    Graph g;
    const Tensor l = sum(g, x);
    g.backward(l);
    g.backward(l);
    CHECK(x.grad()[0] == 2.0);
    x.zero_grad();
    g.backward(l);
    CHECK(x.grad()[0] == 1.0);
  }

  TEST_CASE("backward needs a scalar loss") {
    Tensor x = make({2}, {1, 2}, true);
    Graph g;
    const Tensor y = scale(g, x, 2.0);
    CHECK_THROWS_AS(g.backward(y), UsageError);
  }

  TEST_CASE("the tape is in insertion order and each op is replayed once") {
    Rng rng(1);
    Tensor a = random_tensor({3, 3}, rng);
    Graph g;
    const Tensor b = matmul(g, a, a);
    const Tensor c = add(g, b, a);
    const Tensor l = sum(g, c);
    REQUIRE(g.size() == 3);
    CHECK(g.records()[0].output == b.node_id());
    CHECK(g.records()[1].output == c.node_id());
    CHECK(g.records()[2].output == l.node_id());
    for (const auto& r : g.records())
      for (auto in : r.inputs) CHECK(in < r.output);
    // d/da sum(a a + a) = (1 1^T) a^T + a^T (1 1^T) + 1; checks single replay.
    g.backward(l);
    Graph h;
    h.backward(sum(h, add(h, matmul(h, a, a), a)));
    // second graph adds the same amount again
    const Tensor a2 = a.detach();
    std::vector<double> expect(9, 1.0);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        double row = 0, col = 0;
        for (std::size_t k = 0; k < 3; ++k) {
          row += a2.at(j, k);  // (1 1^T a^T)[i, j] = sum_k a[j, k]
          col += a2.at(k, i);  // (a^T 1 1^T)[i, j] = sum_k a[k, i]
        }
        expect[i * 3 + j] += row + col;
      }
    for (std::size_t i = 0; i < 9; ++i) CHECK(a.grad()[i] == doctest::Approx(2.0 * expect[i]).epsilon(1e-12));
  }

  TEST_CASE("inference mode records nothing") {
    Rng rng(2);
    Tensor a = random_tensor({2, 2}, rng);
    Graph g(GradMode::inference);
    const Tensor b = matmul(g, a, a);
    CHECK(b.values().size() == 4);
    CHECK(g.size() == 0);
  }

  TEST_CASE("ops are bit-deterministic") {
    Rng rng(3);
    const Tensor x = random_tensor({5, 8}, rng, 1.0, false);
    const Tensor gain = random_tensor({8}, rng, 1.0, false), bias = random_tensor({8}, rng, 1.0, false);
    Graph g1, g2;
    CHECK(bit_equal(layer_norm(g1, softmax(g1, x, 1), gain, bias), layer_norm(g2, softmax(g2, x, 1), gain, bias)));
  }
}

TEST_SUITE("matmul") {
  TEST_CASE("hand-computed products") {
    Graph g;
    const Tensor i2 = make({2, 2}, {1, 0, 0, 1}), b = make({2, 2}, {3, 4, 5, 6});
    CHECK(bit_equal(matmul(g, i2, b).values(), std::vector<double>{3, 4, 5, 6}));
    CHECK(matmul(g, make({1, 2}, {1, 2}), make({2, 1}, {3, 4})).item() == 11.0);
  }

  TEST_CASE("shape mismatch names both shapes") {
    Graph g;
    try {
      matmul(g, Tensor({2, 3}), Tensor({4, 2}));
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      const std::string w = e.what();
      CHECK(w.find("[2x3]") != std::string::npos);
      CHECK(w.find("[4x2]") != std::string::npos);
    }
  }

  TEST_CASE("4x5 by 5x3 gradients against central differences") {
    Rng rng(11);
    for (int t = 0; t < kTrials; ++t) {
      Tensor a = random_tensor({4, 5}, rng), b = random_tensor({5, 3}, rng);
      const Tensor w = random_tensor({4, 3}, rng, 1.0, false);
      expect_fd(check_op({a, b}, [&](Graph& g) { return readout(g, matmul(g, a, b), w); }), 1e-6);
    }
  }
}

TEST_SUITE("softmax") {
  TEST_CASE("symmetric and shifted inputs") {
    Graph g;
    const Tensor u = softmax(g, make({3}, {0, 0, 0}), 0);
    for (double v : u.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    const Tensor big = softmax(g, make({2}, {1000, 1000}), 0);
    CHECK(big.values()[0] == 0.5);
    CHECK(big.values()[1] == 0.5);
  }

  TEST_CASE("[1,2,3] matches a 50-digit evaluation") {
    using boost::multiprecision::cpp_dec_float_50;
    Graph g;
    const Tensor s = softmax(g, make({3}, {1, 2, 3}), 0);
    cpp_dec_float_50 z = 0;
    for (int i = 1; i <= 3; ++i) z += boost::multiprecision::exp(cpp_dec_float_50(i));
    for (int i = 1; i <= 3; ++i) {
      const double ref = static_cast<double>(boost::multiprecision::exp(cpp_dec_float_50(i)) / z);
      CHECK(std::abs(s.values()[static_cast<std::size_t>(i - 1)] - ref) <= 2.0 * kEps * ref);
    }
  }

  TEST_CASE("rows are points of the simplex, along either axis") {
    Rng rng(12);
    for (int t = 0; t < kTrials; ++t) {
      const Tensor x = random_tensor({4, 6}, rng, 5.0, false);
      Graph g;
      const Tensor r = softmax(g, x, 1), c = softmax(g, x, 0);
      for (std::size_t i = 0; i < 4; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < 6; ++j) {
          CHECK(r.at(i, j) > 0.0);
          s += r.at(i, j);
        }
        CHECK(std::abs(s - 1.0) <= 1e-12);
      }
      for (std::size_t j = 0; j < 6; ++j) {
        double s = 0;
        for (std::size_t i = 0; i < 4; ++i) s += c.at(i, j);
        CHECK(std::abs(s - 1.0) <= 1e-12);
      }
    }
  }

  TEST_CASE("gradients against central differences") {
    Rng rng(13);
    for (int t = 0; t < kTrials; ++t) {
      Tensor x = random_tensor({3, 5}, rng, 2.0);
      const Tensor w = random_tensor({3, 5}, rng, 1.0, false);
      const std::size_t axis = static_cast<std::size_t>(t % 2);
      expect_fd(check_op({x}, [&](Graph& g) { return readout(g, softmax(g, x, axis), w); }));
    }
  }
}

TEST_SUITE("layer_norm") {
  TEST_CASE("constant rows normalize to zero") {
    Graph g;
    const Tensor y = layer_norm(g, make({1, 4}, {2, 2, 2, 2}), Tensor::full({4}, 1.0), Tensor({4}));
    for (double v : y.values()) CHECK(v == 0.0);
  }

  TEST_CASE("[1,-1] is already normalized") {
    Graph g;
    const Tensor y = layer_norm(g, make({1, 2}, {1, -1}), Tensor::full({2}, 1.0), Tensor({2}), 0.0);
    CHECK(y.values()[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(y.values()[1] == doctest::Approx(-1.0).epsilon(1e-15));
  }

  TEST_CASE("output rows have zero mean and unit variance") {
    // eps enters the denominator, so the exact output variance is
    // var / (var + eps); with eps = 1e-8 that is within 1e-6 of one.
    Rng rng(14);
    for (int t = 0; t < kTrials; ++t) {
      const Tensor x = random_tensor({3, 8}, rng, 3.0, false);
      for (double eps : {1e-8, 1e-5}) {
        Graph g;
        const Tensor y = layer_norm(g, x, Tensor::full({8}, 1.0), Tensor({8}), eps);
        for (std::size_t i = 0; i < 3; ++i) {
          double m = 0, v = 0, mx = 0, vx = 0;
          for (std::size_t j = 0; j < 8; ++j) m += y.at(i, j), mx += x.at(i, j);
          m /= 8, mx /= 8;
          for (std::size_t j = 0; j < 8; ++j) {
            v += (y.at(i, j) - m) * (y.at(i, j) - m);
            vx += (x.at(i, j) - mx) * (x.at(i, j) - mx);
          }
          v /= 8, vx /= 8;
          CHECK(std::abs(m) < 1e-10);
          CHECK(std::abs(v - vx / (vx + eps)) < 1e-12);
          if (eps == 1e-8) CHECK(std::abs(v - 1.0) < 1e-6);
        }
      }
    }
  }

  TEST_CASE("gradients reach x, gain and bias") {
    Rng rng(15);
    for (int t = 0; t < kTrials; ++t) {
      Tensor x = random_tensor({3, 6}, rng), gain = random_tensor({6}, rng), bias = random_tensor({6}, rng);
      const Tensor w = random_tensor({3, 6}, rng, 1.0, false);
      expect_fd(check_op({x, gain, bias}, [&](Graph& g) { return readout(g, layer_norm(g, x, gain, bias), w); }));
    }
  }
}

TEST_SUITE("attention") {
  TEST_CASE("zero output projection gives zero output") {
    Rng rng(16);
    AttnParams p = make_attention(8, 2, 0.5, rng);
    for (auto& v : p.out.weight.values_mut()) v = 0.0;
    for (auto& v : p.out.bias.values_mut()) v = 0.0;
    const Tensor x = random_tensor({3, 8}, rng, 1.0, false);
    Graph g;
    const auto r = multi_head_attention(g, x, x, x, p, {1, 3, 3, 2, false, {}});
    for (double v : r.output.values()) CHECK(v == 0.0);
  }

  TEST_CASE("a single key gets weight one") {
    Rng rng(17);
    const AttnParams p = make_attention(4, 1, 0.5, rng);
    const Tensor q = random_tensor({3, 4}, rng, 1.0, false), kv = random_tensor({1, 4}, rng, 1.0, false);
    Graph g;
    const auto r = multi_head_attention(g, q, kv, kv, p, {1, 3, 1, 1, false, {}});
    for (double w : r.weights.values()) CHECK(w == 1.0);
    const Tensor expect = linear(g, linear(g, kv, p.v), p.out);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j) CHECK(r.output.at(i, j) == doctest::Approx(expect.at(0, j)).epsilon(1e-14));
  }

  TEST_CASE("width not divisible by heads is a configuration error") {
    Rng rng(18);
    CHECK_THROWS_AS(make_attention(6, 4, 0.5, rng), ConfigError);
    const Tensor x = random_tensor({2, 6}, rng, 1.0, false);
    Graph g;
    CHECK_THROWS_AS(scaled_dot_attention(g, x, x, x, {1, 2, 2, 4, false, {}}), ConfigError);
  }

  TEST_CASE("fully masked queries are degenerate") {
    Rng rng(19);
    const Tensor x = random_tensor({2, 4}, rng, 1.0, false);
    Graph g;
    CHECK_THROWS_AS(scaled_dot_attention(g, x, x, x, {1, 2, 2, 1, false, {0, 0}}), DegenerateAttentionError);
  }

  TEST_CASE("weight rows sum to one under masks and causality") {
    Rng rng(20);
    for (int t = 0; t < kTrials; ++t) {
      const Tensor x = random_tensor({2 * 5, 8}, rng, 2.0, false);
      std::vector<std::uint8_t> valid{1, 1, 1, 0, 0, 1, 0, 1, 1, 0};
      Graph g;
      const auto r = scaled_dot_attention(g, x, x, x, {2, 5, 5, 2, t % 2 == 0, valid});
      const std::size_t rows = r.weights.rows(), cols = r.weights.cols();
      for (std::size_t i = 0; i < rows; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < cols; ++j) s += r.weights.at(i, j);
        CHECK(std::abs(s - 1.0) <= 1e-10);
      }
    }
  }

  TEST_CASE("multi-head attention gradients against central differences") {
    Rng rng(21);
    for (int t = 0; t < kTrials; ++t) {
      AttnParams p = make_attention(4, 2, 0.7, rng);
      ParamList ps;
      append_params(ps, "a", p);
      set_requires_grad(ps, true);
      Tensor q = random_tensor({3, 4}, rng), kv = random_tensor({4, 4}, rng);
      const Tensor w = random_tensor({3, 4}, rng, 1.0, false);
      std::vector<Tensor> inputs{q, kv};
      for (auto& nt : ps) inputs.push_back(nt.tensor);
      const AttentionLayout lay{1, 3, 4, 2, false, {1, 1, 0, 1}};
      // The key bias has an identically zero gradient (softmax is shift
      // invariant), where only FD round-off (~1e-10) remains; the larger
      // floor judges those elements on absolute error.
      expect_fd(check_op(inputs, [&](Graph& g) {
        return readout(g, multi_head_attention(g, q, kv, kv, p, lay).output, w);
      }, 1e-5, 1e-5));
    }
  }

  TEST_CASE("causal self-attention gradients") {
    Rng rng(22);
    for (int t = 0; t < kTrials; ++t) {
      Tensor x = random_tensor({2 * 3, 4}, rng);
      const Tensor w = random_tensor({6, 4}, rng, 1.0, false);
      expect_fd(check_op({x}, [&](Graph& g) {
        return readout(g, scaled_dot_attention(g, x, x, x, {2, 3, 3, 2, true, {}}).output, w);
      }));
    }
  }
}

TEST_SUITE("ffn") {
  TEST_CASE("zero down-map gives zero output") {
    Rng rng(23);
    FfnParams p = make_ffn(4, 8, rng);
    for (auto& v : p.down.weight.values_mut()) v = 0.0;
    for (auto& v : p.down.bias.values_mut()) v = 0.0;
    Graph g;
    const Tensor y = ffn(g, random_tensor({3, 4}, rng, 1.0, false), p);
    for (double v : y.values()) CHECK(v == 0.0);
  }

  TEST_CASE("identity maps pass large positive inputs through") {
    // gelu(x) -> x for x >> 0, so identity weights reproduce the input.
    Rng rng(24);
    FfnParams p = make_ffn(3, 3, rng);
    for (auto* lin : {&p.up, &p.down}) {
      auto w = lin->weight.values_mut();
      std::fill(w.begin(), w.end(), 0.0);
      for (std::size_t i = 0; i < 3; ++i) w[i * 3 + i] = 1.0;
      for (auto& b : lin->bias.values_mut()) b = 0.0;
    }
    Graph g;
    const Tensor x = make({1, 3}, {8, 9, 10});
    const Tensor y = ffn(g, x, p);
    for (std::size_t j = 0; j < 3; ++j) CHECK(y.values()[j] == doctest::Approx(x.values()[j]).epsilon(1e-12));
  }

  TEST_CASE("ffn gradients against central differences") {
    Rng rng(25);
    for (int t = 0; t < kTrials; ++t) {
      FfnParams p = make_ffn(4, 6, rng);
      ParamList ps;
      append_params(ps, "f", p);
      set_requires_grad(ps, true);
      Tensor x = random_tensor({3, 4}, rng);
      const Tensor w = random_tensor({3, 4}, rng, 1.0, false);
      std::vector<Tensor> inputs{x};
      for (auto& nt : ps) inputs.push_back(nt.tensor);
      expect_fd(check_op(inputs, [&](Graph& g) { return readout(g, ffn(g, x, p), w); }));
    }
  }
}

TEST_SUITE("elementwise and structural ops") {
  TEST_CASE("cosine similarity special cases") {
    Graph g;
    const Tensor a = make({3}, {1, 2, 3});
    CHECK(cosine_sim(g, a, a).item() == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(cosine_sim(g, make({2}, {1, 0}), make({2}, {0, 1})).item() == 0.0);
    CHECK(cosine_sim(g, a, scale(g, a, -1.0)).item() == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK_THROWS_AS(cosine_sim(g, a, Tensor({3})), DomainError);
  }

  TEST_CASE("abs has subgradient zero at zero") {
    Tensor x = make({3}, {-2, 0, 3}, true);
    Graph g;
    g.backward(sum(g, abs(g, x)));
    CHECK(x.grad()[0] == -1.0);
    CHECK(x.grad()[1] == 0.0);
    CHECK(x.grad()[2] == 1.0);
  }

  TEST_CASE("log outside its domain") {
    Graph g;
    CHECK_THROWS_AS(log(g, make({2}, {1, 0})), DomainError);
  }

  TEST_CASE("gather rows rejects out-of-range indices") {
    Graph g;
    const std::vector<std::size_t> idx{0, 3};
    CHECK_THROWS_AS(gather_rows(g, Tensor({3, 2}), idx), LookupError);
  }

  TEST_CASE("every remaining op against central differences") {
    Rng rng(26);
    for (int t = 0; t < kTrials; ++t) {
      Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng), bias = random_tensor({4}, rng);
      Tensor pos = Tensor({3, 4}, true);
      {
        auto v = pos.values_mut();
        std::uniform_real_distribution<double> u(0.5, 2.0);
        for (auto& x : v) x = u(rng);
      }
      const Tensor w = random_tensor({3, 4}, rng, 1.0, false);
      const Tensor wt = random_tensor({4, 3}, rng, 1.0, false);
      const Tensor w6 = random_tensor({6, 4}, rng, 1.0, false);
      const std::vector<std::size_t> idx{2, 0, 2, 1};
      const Tensor w_idx = random_tensor({4, 4}, rng, 1.0, false);
      expect_fd(check_op({a, b}, [&](Graph& g) { return readout(g, add(g, a, b), w); }));
      expect_fd(check_op({a, b}, [&](Graph& g) { return readout(g, sub(g, a, b), w); }));
      expect_fd(check_op({a, b}, [&](Graph& g) { return readout(g, mul(g, a, b), w); }));
      expect_fd(check_op({a}, [&](Graph& g) { return readout(g, scale(g, a, -1.3), w); }));
      expect_fd(check_op({a, bias}, [&](Graph& g) { return readout(g, add_bias(g, a, bias), w); }));
      expect_fd(check_op({a}, [&](Graph& g) { return readout(g, gelu(g, a), w); }));
      expect_fd(check_op({pos}, [&](Graph& g) { return readout(g, log(g, pos), w); }));
      expect_fd(check_op({a}, [&](Graph& g) { return readout(g, transpose(g, a), wt); }));
      expect_fd(check_op({a}, [&](Graph& g) { return mean(g, mul(g, a, w)); }));
      expect_fd(check_op({a}, [&](Graph& g) { return readout(g, gather_rows(g, a, idx), w_idx); }));
      expect_fd(check_op({a, b}, [&](Graph& g) { return readout(g, concat_rows(g, a, b), w6); }));
      expect_fd(check_op({a}, [&](Graph& g) { return readout(g, reshape(g, a, {4, 3}), wt); }));
      expect_fd(check_op({a}, [&](Graph& g) { return readout(g, l2_normalize_rows(g, a), w); }));
      Tensor u = random_tensor({5}, rng), v = random_tensor({5}, rng);
      expect_fd(check_op({u, v}, [&](Graph& g) { return cosine_sim(g, u, v); }));
      // abs away from its kink
      Tensor k = random_tensor({3, 4}, rng);
      for (auto& x : k.values_mut())
        if (std::abs(x) < 1e-2) x = 0.5;
      expect_fd(check_op({k}, [&](Graph& g) { return readout(g, abs(g, k), w); }));
      // nll over a proper probability table
      Tensor logits = random_tensor({3, 4}, rng);
      const std::vector<std::size_t> labels{1, 3, 0};
      expect_fd(check_op({logits}, [&](Graph& g) { return nll_mean(g, softmax(g, logits, 1), labels); }));
    }
  }

  TEST_CASE("finite inputs give finite values and gradients") {
    Rng rng(27);
    Tensor x = random_tensor({4, 8}, rng, 30.0);
    const Tensor gain = Tensor::full({8}, 1.0), bias({8});
    Graph g;
    const Tensor y = layer_norm(g, softmax(g, gelu(g, x), 1), gain, bias);
    const Tensor l = sum(g, mul(g, y, y));
    g.backward(l);
    for (double v : y.values()) CHECK(std::isfinite(v));
    for (double v : x.grad()) CHECK(std::isfinite(v));
  }
}
