#include "inpk/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>

#include "inpk/errors.hpp"

namespace inpk {

namespace {
std::atomic<std::uint64_t> g_next_node_id{1};
}

struct Tensor::Impl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until needed
  bool requires_grad = false;
  bool leaf = true;
  std::uint64_t node_id = g_next_node_id.fetch_add(1, std::memory_order_relaxed);
};

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, bool requires_grad) : impl_(std::make_shared<Impl>()) {
  impl_->values.assign(shape_numel(shape), 0.0);
  impl_->shape = std::move(shape);
  impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : impl_(std::make_shared<Impl>()) {
  if (values.size() != shape_numel(shape))
    throw DimensionError("tensor of shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  impl_->shape = std::move(shape);
  impl_->values = std::move(values);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<double>{value}, requires_grad);
}

Tensor Tensor::randn(Shape shape, double stddev, Rng& rng, bool requires_grad) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> v(shape_numel(shape), value);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

const Shape& Tensor::shape() const { return impl_->shape; }
std::size_t Tensor::numel() const { return impl_->values.size(); }

std::size_t Tensor::rows() const {
  const auto& s = impl_->shape;
  if (s.size() <= 1) return 1;
  std::size_t r = 1;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) r *= s[i];
  return r;
}

std::size_t Tensor::cols() const {
  const auto& s = impl_->shape;
  return s.empty() ? 1 : s.back();
}

std::span<const double> Tensor::values() const { return impl_->values; }
std::span<double> Tensor::values_mut() { return impl_->values; }

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
  return impl_->values[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  return impl_->values.at(row * cols() + col);
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
void Tensor::set_requires_grad(bool flag) { impl_->requires_grad = flag; }
bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::span<const double> Tensor::grad() const { return impl_->grad; }

std::span<double> Tensor::grad_mut() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

std::uint64_t Tensor::node_id() const { return impl_->node_id; }
bool Tensor::is_leaf() const { return impl_->leaf; }

Tensor Tensor::detach() const {
  return Tensor(impl_->shape, impl_->values, false);
}

Tensor Graph::emit(std::string_view kind, Shape shape, std::vector<double> values,
                   std::initializer_list<Tensor> inputs, BackwardFn backward) {
  Tensor out(std::move(shape), std::move(values), false);
  out.impl_->leaf = false;
  if (!recording()) return out;
  bool needs = false;
  for (const auto& t : inputs) needs = needs || t.requires_grad();
  if (!needs) return out;
  out.impl_->requires_grad = true;
  OpRecord rec;
  rec.kind = std::string(kind);
  rec.output = out.node_id();
  for (const auto& t : inputs) rec.inputs.push_back(t.node_id());
  records_.push_back(std::move(rec));
  entries_.push_back(Entry{out, std::move(backward)});
  return out;
}

void Graph::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw UsageError("backward needs a scalar loss, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  if (!loss.requires_grad())
    throw UsageError("loss does not depend on any tensor that requires a gradient");
  if (!loss.is_leaf()) {
    bool found = false;
    for (const auto& e : entries_) found = found || e.output.same_storage(loss);
    if (!found) throw UsageError("loss was not recorded on this graph");
  }
  for (auto& e : entries_) {
    auto g = e.output.grad_mut();
    std::fill(g.begin(), g.end(), 0.0);
  }
  Tensor seed = loss;
  seed.grad_mut()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->fn(it->output);
}

void zero_grad(std::span<Tensor> tensors) {
  for (auto& t : tensors) t.zero_grad();
}

}  // namespace inpk
