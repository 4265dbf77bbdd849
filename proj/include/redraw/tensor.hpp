#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace redraw {

class TensorError : public std::runtime_error {
public:
  explicit TensorError(const std::string& what) : std::runtime_error(what) {}
};

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated lazily during backward
  bool requires_grad = false;
  bool consumed = false;  // set once backward has run through this node
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
};

void ensure_grad(Node& n);

}  // namespace detail

// Disables graph recording in scope; ops compute values only.
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

// Dense row-major f64 tensor. Shared-value semantics: copies are cheap
// handles onto the same immutable payload. Mutation is only allowed on
// leaf tensors (parameters) via mutable_values().
class Tensor {
public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar_value(double v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int dim(int i) const;
  int rank() const;
  int64_t size() const;
  const std::vector<double>& values() const;
  std::vector<double>& mutable_values();  // leaves only
  bool requires_grad() const;
  bool is_leaf() const;
  double scalar() const;

  // Gradient of the last backward() pass; zeros if this leaf was not
  // reached by the loss.
  const std::vector<double>& grad() const;
  void zero_grad();

  std::shared_ptr<detail::Node> node() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::Node> node);

private:
  std::shared_ptr<detail::Node> node_;
};

// ---- primitives ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor matmul(const Tensor& a, const Tensor& b);  // {n,k}x{k,m}->{n,m}
Tensor silu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
// Cross-correlation, NCHW input, FCkk kernel.
Tensor conv2d(const Tensor& x, const Tensor& w, int padding, int stride);
// b is {C}: one bias per channel, shared over batch and space.
Tensor add_channel_bias(const Tensor& x, const Tensor& b);
// b is {N,C}: per-sample per-channel bias, broadcast over space.
Tensor add_sample_bias(const Tensor& x, const Tensor& b);
Tensor avg_pool2(const Tensor& x);   // {N,C,H,W}->{N,C,H/2,W/2}
Tensor upsample2(const Tensor& x);   // nearest, {N,C,H,W}->{N,C,2H,2W}
Tensor concat_channels(const Tensor& a, const Tensor& b);
// Gathers rows of table {V,D} at idx -> {N,D}.
Tensor embedding(const Tensor& table, const std::vector<int>& idx);
// Mean squared error over all elements.
Tensor mse(const Tensor& pred, const Tensor& target);
// Per-sample masked squared error: (1/N) sum_b sum_i m*(p-t)^2 / denom[b].
Tensor masked_mse(const Tensor& pred, const Tensor& target, const Tensor& mask,
                  const std::vector<double>& denom);
// Mean of the numerically stable binary cross-entropy on logits.
Tensor sigmoid_bce(const Tensor& logits, const Tensor& targets);

// Reverse pass from a scalar loss. Populates grads on every leaf that the
// loss depends on; each graph may be consumed exactly once.
void backward(const Tensor& loss);

// Named parameter list with stable iteration order.
class ParameterStore {
public:
  Tensor add(const std::string& name, Tensor t);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;
  size_t size() const { return items_.size(); }
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }
  void zero_grads();
  int64_t parameter_count() const;

private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

}  // namespace redraw
