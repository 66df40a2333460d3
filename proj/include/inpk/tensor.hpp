#pragma once
// Dense 64-bit tensors and the reverse-mode tape that differentiates them.
//
// A Tensor is a shared handle: copies alias the same storage, so parameter
// structs can hand out their tensors and still observe gradient updates.
// Leaves are created directly; every other tensor is produced by an op that
// records itself on a Graph.

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace inpk {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Graph;

class Tensor {
 public:
  Tensor() = default;
  // Zero-filled.
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(Shape shape, double stddev, Rng& rng, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  std::size_t numel() const;
  // Product of all but the last dimension; a rank-1 tensor is one row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const;
  // Writable view for leaves (parameter init and optimizer updates).
  std::span<double> values_mut();
  double item() const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  // Allocates a zero gradient on first use.
  std::span<double> grad_mut();
  void zero_grad();

  std::uint64_t node_id() const;
  bool is_leaf() const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  // Fresh leaf with a copy of the values and no gradient.
  Tensor detach() const;

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
  friend class Graph;
};

enum class GradMode { record, inference };

struct OpRecord {
  std::string kind;
  std::vector<std::uint64_t> inputs;
  std::uint64_t output = 0;
};

// Tape of differentiable ops. Ops are recorded in execution order, which is a
// topological order; backward replays it in reverse, visiting each op once.
// Single-threaded per instance.
class Graph {
 public:
  using BackwardFn = std::function<void(const Tensor& output)>;

  explicit Graph(GradMode mode = GradMode::record) : mode_(mode) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return mode_ == GradMode::record; }

  // Wraps freshly computed values as an op output. The backward closure is
  // kept only when recording and some input requires a gradient.
  Tensor emit(std::string_view kind, Shape shape, std::vector<double> values,
              std::initializer_list<Tensor> inputs, BackwardFn backward);

  // Accumulates d(loss)/d(leaf) into every reachable leaf that requires a
  // gradient. Intermediate gradients are reset at the start of each call, so
  // calling twice without zeroing the leaves doubles their gradients.
  void backward(const Tensor& loss);

  const std::vector<OpRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }

 private:
  struct Entry {
    Tensor output;
    BackwardFn fn;
  };
  GradMode mode_;
  std::vector<OpRecord> records_;
  std::vector<Entry> entries_;
};

void zero_grad(std::span<Tensor> tensors);

}  // namespace inpk
