#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "taco/errors.hpp"
#include "taco/rng.hpp"

namespace taco {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

namespace autograd {

// One node of the implicit compute graph: cached forward value, gradient
// accumulator, and a closure that pushes this node's gradient into its inputs.
// Leaves (parameters, constants) have no inputs and no backward closure.
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated lazily by backward()
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward_fn;

    std::int64_t numel() const { return static_cast<std::int64_t>(value.size()); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

// While alive, primitives run forward-only: no inputs are linked and no
// backward closures are recorded. Used for finite differences and inference
// over the training-path code.
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
    static bool active();
};

}  // namespace autograd

// Dense row-major tensor of doubles with reverse-mode autodiff.
//
// Tensors are cheap handles onto shared nodes. Ops never mutate a node that
// participates in a live graph; every primitive produces a fresh node.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double fill);
    static Tensor from_data(Shape shape, std::vector<double> data);
    static Tensor scalar(double v);
    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    std::int64_t numel() const { return node_->numel(); }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        node_->requires_grad = v;
        return *this;
    }

    std::span<const double> values() const { return node_->value; }
    std::span<double> mutable_values() { return node_->value; }
    std::span<const double> grad() const { return node_->grad; }
    double item() const;
    double at(std::initializer_list<std::int64_t> idx) const;

    void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

    std::shared_ptr<autograd::Node> node() const { return node_; }
    explicit Tensor(std::shared_ptr<autograd::Node> n) : node_(std::move(n)) {}

  private:
    std::shared_ptr<autograd::Node> node_;
};

namespace autograd {

// Topological view over the graph reaching a root. Nodes are ordered so that
// every node's inputs precede it; backward walks the order in reverse.
class ComputeGraph {
  public:
    explicit ComputeGraph(const Tensor& root);
    const std::vector<Node*>& nodes() const { return order_; }

    // Seeds d(root)/d(root) = 1 and accumulates gradients into every
    // requires_grad node reachable from the root. Root must be scalar.
    void backward();

  private:
    std::shared_ptr<Node> root_;
    std::vector<Node*> order_;
};

}  // namespace autograd

// Convenience wrapper: builds the graph for `loss` and runs backward.
void backward(const Tensor& loss);

// ---- primitives ----
// Shape mismatches throw ShapeError naming the op and offending shapes.

Tensor matmul(const Tensor& a, const Tensor& b);       // [m,k] x [k,n] -> [m,n]
Tensor bmm(const Tensor& a, const Tensor& b);          // [g,m,k] x [g,k,n] -> [g,m,n]
Tensor add(const Tensor& a, const Tensor& b);          // equal shapes, or b broadcast over trailing dims
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);          // elementwise, equal shapes
Tensor scale(const Tensor& a, double s);
Tensor softmax_lastdim(const Tensor& a);               // max-subtracted, stable
Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor gelu(const Tensor& a);                          // exact erf form
Tensor embedding_lookup(const Tensor& table, const std::vector<std::int64_t>& ids);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, std::int64_t start, std::int64_t len);
Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<int>& perm);
Tensor mean_all(const Tensor& a);
Tensor sum_all(const Tensor& a);
// Per-row negative log-likelihood, fused log-softmax: [t,c] + labels -> [t]
Tensor cross_entropy_with_logits(const Tensor& logits, const std::vector<int>& labels);

}  // namespace taco
