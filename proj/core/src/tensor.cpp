#include "taco/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace taco {

namespace {

using RowMajorMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMajorMatrix>;
using ConstMatMap = Eigen::Map<const RowMajorMatrix>;

thread_local int g_no_grad_depth = 0;

std::shared_ptr<autograd::Node> make_node(Shape shape, const char* op) {
    for (std::int64_t d : shape) {
        if (d < 1) throw ShapeError(std::string(op) + ": dimension sizes must be >= 1, got " + shape_str(shape));
    }
    auto n = std::make_shared<autograd::Node>();
    n->op = op;
    n->value.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0);
    n->shape = std::move(shape);
    return n;
}

// Links inputs and the backward closure only when gradients can flow.
Tensor finish(std::shared_ptr<autograd::Node> out, std::vector<Tensor> inputs,
              std::function<void(autograd::Node&)> backward_fn) {
    bool needs = false;
    for (const Tensor& t : inputs) needs = needs || t.requires_grad();
    if (needs && !autograd::NoGradGuard::active()) {
        out->requires_grad = true;
        out->inputs.reserve(inputs.size());
        for (const Tensor& t : inputs) out->inputs.push_back(t.node());
        out->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(out));
}

std::int64_t prod(const Shape& s, std::size_t lo, std::size_t hi) {
    std::int64_t p = 1;
    for (std::size_t i = lo; i < hi; ++i) p *= s[i];
    return p;
}

void check(bool ok, const char* op, const std::string& detail) {
    if (!ok) throw ShapeError(std::string(op) + ": " + detail);
}

}  // namespace

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

std::int64_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::int64_t{1}, std::multiplies<>());
}

namespace autograd {

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool NoGradGuard::active() { return g_no_grad_depth > 0; }

ComputeGraph::ComputeGraph(const Tensor& root) : root_(root.node()) {
    // Iterative post-order DFS; inputs end up before their consumers.
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root_.get(), 0);
    visited.insert(root_.get());
    while (!stack.empty()) {
        auto& [node, next_input] = stack.back();
        if (next_input < node->inputs.size()) {
            Node* in = node->inputs[next_input++].get();
            if (visited.insert(in).second) stack.emplace_back(in, 0);
        } else {
            order_.push_back(node);
            stack.pop_back();
        }
    }
}

void ComputeGraph::backward() {
    if (root_->numel() != 1)
        throw ShapeError("backward: loss must be scalar, got " + shape_str(root_->shape));
    root_->ensure_grad();
    root_->grad[0] = 1.0;
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

}  // namespace autograd

void backward(const Tensor& loss) {
    autograd::ComputeGraph graph(loss);
    graph.backward();
}

// ---- constructors ----

Tensor Tensor::zeros(Shape shape) { return Tensor(make_node(std::move(shape), "zeros")); }

Tensor Tensor::full(Shape shape, double fill) {
    auto n = make_node(std::move(shape), "full");
    std::fill(n->value.begin(), n->value.end(), fill);
    return Tensor(std::move(n));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
        throw ShapeError("from_data: shape " + shape_str(shape) + " does not match buffer of " +
                         std::to_string(data.size()) + " elements");
    auto n = make_node(std::move(shape), "leaf");
    n->value = std::move(data);
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v) { return full({1}, v); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
    auto n = make_node(std::move(shape), "randn");
    for (double& v : n->value) v = rng.normal() * stddev;
    return Tensor(std::move(n));
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item: tensor has " + std::to_string(numel()) + " elements");
    return node_->value[0];
}

double Tensor::at(std::initializer_list<std::int64_t> idx) const {
    const Shape& s = node_->shape;
    check(idx.size() == s.size(), "at", "rank mismatch");
    std::int64_t flat = 0;
    std::size_t i = 0;
    for (std::int64_t v : idx) {
        flat = flat * s[i] + v;
        ++i;
    }
    return node_->value[static_cast<std::size_t>(flat)];
}

// ---- primitives ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    check(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(0), "matmul",
          "lhs " + shape_str(a.shape()) + " rhs " + shape_str(b.shape()));
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    auto out = make_node({m, n}, "matmul");
    ConstMatMap A(a.values().data(), m, k), B(b.values().data(), k, n);
    MatMap(out->value.data(), m, n).noalias() = A * B;
    return finish(std::move(out), {a, b}, [m, k, n](autograd::Node& self) {
        auto& ia = *self.inputs[0];
        auto& ib = *self.inputs[1];
        ConstMatMap A(ia.value.data(), m, k), B(ib.value.data(), k, n);
        ConstMatMap dY(self.grad.data(), m, n);
        if (ia.requires_grad) {
            ia.ensure_grad();
            MatMap(ia.grad.data(), m, k).noalias() += dY * B.transpose();
        }
        if (ib.requires_grad) {
            ib.ensure_grad();
            MatMap(ib.grad.data(), k, n).noalias() += A.transpose() * dY;
        }
    });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    check(a.ndim() == 3 && b.ndim() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(1), "bmm",
          "lhs " + shape_str(a.shape()) + " rhs " + shape_str(b.shape()));
    const std::int64_t g = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    auto out = make_node({g, m, n}, "bmm");
    for (std::int64_t i = 0; i < g; ++i) {
        ConstMatMap A(a.values().data() + i * m * k, m, k);
        ConstMatMap B(b.values().data() + i * k * n, k, n);
        MatMap(out->value.data() + i * m * n, m, n).noalias() = A * B;
    }
    return finish(std::move(out), {a, b}, [g, m, k, n](autograd::Node& self) {
        auto& ia = *self.inputs[0];
        auto& ib = *self.inputs[1];
        if (ia.requires_grad) ia.ensure_grad();
        if (ib.requires_grad) ib.ensure_grad();
        for (std::int64_t i = 0; i < g; ++i) {
            ConstMatMap A(ia.value.data() + i * m * k, m, k);
            ConstMatMap B(ib.value.data() + i * k * n, k, n);
            ConstMatMap dY(self.grad.data() + i * m * n, m, n);
            if (ia.requires_grad)
                MatMap(ia.grad.data() + i * m * k, m, k).noalias() += dY * B.transpose();
            if (ib.requires_grad)
                MatMap(ib.grad.data() + i * k * n, k, n).noalias() += A.transpose() * dY;
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    const bool same = a.shape() == b.shape();
    // b may broadcast over a's leading dims when its shape is a suffix of a's.
    bool suffix = b.ndim() <= a.ndim();
    if (suffix) {
        for (int i = 0; i < b.ndim(); ++i)
            suffix = suffix && a.dim(a.ndim() - b.ndim() + i) == b.dim(i);
    }
    check(same || suffix, "add", "lhs " + shape_str(a.shape()) + " rhs " + shape_str(b.shape()));
    auto out = make_node(a.shape(), "add");
    const std::int64_t nb = b.numel(), na = a.numel();
    for (std::int64_t i = 0; i < na; ++i)
        out->value[i] = a.values()[i] + b.values()[i % nb];
    return finish(std::move(out), {a, b}, [na, nb](autograd::Node& self) {
        auto& ia = *self.inputs[0];
        auto& ib = *self.inputs[1];
        if (ia.requires_grad) {
            ia.ensure_grad();
            for (std::int64_t i = 0; i < na; ++i) ia.grad[i] += self.grad[i];
        }
        if (ib.requires_grad) {
            ib.ensure_grad();
            for (std::int64_t i = 0; i < na; ++i) ib.grad[i % nb] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(), "sub",
          "lhs " + shape_str(a.shape()) + " rhs " + shape_str(b.shape()));
    auto out = make_node(a.shape(), "sub");
    for (std::int64_t i = 0; i < a.numel(); ++i) out->value[i] = a.values()[i] - b.values()[i];
    return finish(std::move(out), {a, b}, [](autograd::Node& self) {
        auto& ia = *self.inputs[0];
        auto& ib = *self.inputs[1];
        if (ia.requires_grad) {
            ia.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) ia.grad[i] += self.grad[i];
        }
        if (ib.requires_grad) {
            ib.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) ib.grad[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(), "mul",
          "lhs " + shape_str(a.shape()) + " rhs " + shape_str(b.shape()));
    auto out = make_node(a.shape(), "mul");
    for (std::int64_t i = 0; i < a.numel(); ++i) out->value[i] = a.values()[i] * b.values()[i];
    return finish(std::move(out), {a, b}, [](autograd::Node& self) {
        auto& ia = *self.inputs[0];
        auto& ib = *self.inputs[1];
        if (ia.requires_grad) {
            ia.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                ia.grad[i] += self.grad[i] * ib.value[i];
        }
        if (ib.requires_grad) {
            ib.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                ib.grad[i] += self.grad[i] * ia.value[i];
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    auto out = make_node(a.shape(), "scale");
    for (std::int64_t i = 0; i < a.numel(); ++i) out->value[i] = a.values()[i] * s;
    return finish(std::move(out), {a}, [s](autograd::Node& self) {
        auto& ia = *self.inputs[0];
        if (!ia.requires_grad) return;
        ia.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) ia.grad[i] += s * self.grad[i];
    });
}

Tensor softmax_lastdim(const Tensor& a) {
    check(a.ndim() >= 1, "softmax", "rank-0 input");
    const std::int64_t l = a.dim(a.ndim() - 1);
    const std::int64_t rows = a.numel() / l;
    auto out = make_node(a.shape(), "softmax");
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* x = a.values().data() + r * l;
        double* y = out->value.data() + r * l;
        double mx = x[0];
        for (std::int64_t i = 1; i < l; ++i) mx = std::max(mx, x[i]);
        double sum = 0.0;
        for (std::int64_t i = 0; i < l; ++i) {
            y[i] = std::exp(x[i] - mx);
            sum += y[i];
        }
        const double inv = 1.0 / sum;
        for (std::int64_t i = 0; i < l; ++i) y[i] *= inv;
    }
    return finish(std::move(out), {a}, [rows, l](autograd::Node& self) {
        auto& ia = *self.inputs[0];
        if (!ia.requires_grad) return;
        ia.ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* p = self.value.data() + r * l;
            const double* dy = self.grad.data() + r * l;
            double* dx = ia.grad.data() + r * l;
            double dot = 0.0;
            for (std::int64_t i = 0; i < l; ++i) dot += dy[i] * p[i];
            for (std::int64_t i = 0; i < l; ++i) dx[i] += p[i] * (dy[i] - dot);
        }
    });
}

Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps) {
    const std::int64_t l = a.dim(a.ndim() - 1);
    check(gamma.ndim() == 1 && gamma.dim(0) == l && beta.ndim() == 1 && beta.dim(0) == l,
          "layer_norm",
          "input " + shape_str(a.shape()) + " gamma " + shape_str(gamma.shape()) + " beta " +
              shape_str(beta.shape()));
    const std::int64_t rows = a.numel() / l;
    auto out = make_node(a.shape(), "layer_norm");
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* x = a.values().data() + r * l;
        double* y = out->value.data() + r * l;
        double mean = 0.0;
        for (std::int64_t i = 0; i < l; ++i) mean += x[i];
        mean /= static_cast<double>(l);
        double var = 0.0;
        for (std::int64_t i = 0; i < l; ++i) var += (x[i] - mean) * (x[i] - mean);
        var /= static_cast<double>(l);
        const double inv_std = 1.0 / std::sqrt(var + eps);
        for (std::int64_t i = 0; i < l; ++i)
            y[i] = gamma.values()[i] * (x[i] - mean) * inv_std + beta.values()[i];
    }
    return finish(std::move(out), {a, gamma, beta}, [rows, l, eps](autograd::Node& self) {
        auto& ix = *self.inputs[0];
        auto& ig = *self.inputs[1];
        auto& ib = *self.inputs[2];
        if (ix.requires_grad) ix.ensure_grad();
        if (ig.requires_grad) ig.ensure_grad();
        if (ib.requires_grad) ib.ensure_grad();
        const double ln = static_cast<double>(l);
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* x = ix.value.data() + r * l;
            const double* dy = self.grad.data() + r * l;
            double mean = 0.0;
            for (std::int64_t i = 0; i < l; ++i) mean += x[i];
            mean /= ln;
            double var = 0.0;
            for (std::int64_t i = 0; i < l; ++i) var += (x[i] - mean) * (x[i] - mean);
            var /= ln;
            const double inv_std = 1.0 / std::sqrt(var + eps);
            // dxhat
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (std::int64_t i = 0; i < l; ++i) {
                const double xhat = (x[i] - mean) * inv_std;
                const double dxhat = dy[i] * ig.value[i];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xhat;
                if (ig.requires_grad) ig.grad[i] += dy[i] * xhat;
                if (ib.requires_grad) ib.grad[i] += dy[i];
            }
            if (ix.requires_grad) {
                double* dx = ix.grad.data() + r * l;
                for (std::int64_t i = 0; i < l; ++i) {
                    const double xhat = (x[i] - mean) * inv_std;
                    const double dxhat = dy[i] * ig.value[i];
                    dx[i] += inv_std * (dxhat - sum_dxhat / ln - xhat * sum_dxhat_xhat / ln);
                }
            }
        }
    });
}

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

Tensor gelu(const Tensor& a) {
    auto out = make_node(a.shape(), "gelu");
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        const double x = a.values()[i];
        out->value[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    return finish(std::move(out), {a}, [](autograd::Node& self) {
        auto& ia = *self.inputs[0];
        if (!ia.requires_grad) return;
        ia.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double x = ia.value[i];
            const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            ia.grad[i] += self.grad[i] * (cdf + x * pdf);
        }
    });
}

Tensor embedding_lookup(const Tensor& table, const std::vector<std::int64_t>& ids) {
    check(table.ndim() == 2, "embedding_lookup", "table " + shape_str(table.shape()));
    const std::int64_t v = table.dim(0), l = table.dim(1);
    for (std::int64_t id : ids)
        check(id >= 0 && id < v, "embedding_lookup",
              "id " + std::to_string(id) + " out of range [0," + std::to_string(v) + ")");
    auto out = make_node({static_cast<std::int64_t>(ids.size()), l}, "embedding_lookup");
    for (std::size_t r = 0; r < ids.size(); ++r)
        std::copy_n(table.values().data() + ids[r] * l, l, out->value.data() + r * l);
    return finish(std::move(out), {table}, [ids, l](autograd::Node& self) {
        auto& it = *self.inputs[0];
        if (!it.requires_grad) return;
        it.ensure_grad();
        for (std::size_t r = 0; r < ids.size(); ++r)
            for (std::int64_t i = 0; i < l; ++i)
                it.grad[ids[r] * l + i] += self.grad[r * l + i];
    });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    check(!parts.empty(), "concat", "no inputs");
    const Shape& s0 = parts[0].shape();
    const int rank = parts[0].ndim();
    check(axis >= 0 && axis < rank, "concat", "axis out of range");
    Shape out_shape = s0;
    std::int64_t total = 0;
    for (const Tensor& p : parts) {
        check(p.ndim() == rank, "concat", "rank mismatch");
        for (int i = 0; i < rank; ++i)
            check(i == axis || p.dim(i) == s0[i], "concat",
                  "part " + shape_str(p.shape()) + " vs " + shape_str(s0));
        total += p.dim(axis);
    }
    out_shape[axis] = total;
    auto out = make_node(out_shape, "concat");
    const std::int64_t outer = prod(out_shape, 0, static_cast<std::size_t>(axis));
    const std::int64_t inner = prod(out_shape, static_cast<std::size_t>(axis) + 1, out_shape.size());
    std::int64_t offset = 0;
    for (const Tensor& p : parts) {
        const std::int64_t mid = p.dim(axis);
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy_n(p.values().data() + o * mid * inner, mid * inner,
                        out->value.data() + (o * total + offset) * inner);
        offset += mid;
    }
    std::vector<std::int64_t> mids;
    for (const Tensor& p : parts) mids.push_back(p.dim(axis));
    return finish(std::move(out), parts, [outer, inner, total, mids](autograd::Node& self) {
        std::int64_t offset = 0;
        for (std::size_t pi = 0; pi < self.inputs.size(); ++pi) {
            auto& in = *self.inputs[pi];
            const std::int64_t mid = mids[pi];
            if (in.requires_grad) {
                in.ensure_grad();
                for (std::int64_t o = 0; o < outer; ++o)
                    for (std::int64_t i = 0; i < mid * inner; ++i)
                        in.grad[o * mid * inner + i] +=
                            self.grad[(o * total + offset) * inner + i];
            }
            offset += mid;
        }
    });
}

Tensor slice(const Tensor& a, int axis, std::int64_t start, std::int64_t len) {
    check(axis >= 0 && axis < a.ndim(), "slice", "axis out of range");
    check(start >= 0 && len >= 1 && start + len <= a.dim(axis), "slice",
          "range [" + std::to_string(start) + "," + std::to_string(start + len) + ") on " +
              shape_str(a.shape()));
    Shape out_shape = a.shape();
    out_shape[axis] = len;
    auto out = make_node(out_shape, "slice");
    const std::int64_t outer = prod(a.shape(), 0, static_cast<std::size_t>(axis));
    const std::int64_t mid = a.dim(axis);
    const std::int64_t inner = prod(a.shape(), static_cast<std::size_t>(axis) + 1, a.shape().size());
    for (std::int64_t o = 0; o < outer; ++o)
        std::copy_n(a.values().data() + (o * mid + start) * inner, len * inner,
                    out->value.data() + o * len * inner);
    return finish(std::move(out), {a}, [outer, mid, inner, start, len](autograd::Node& self) {
        auto& ia = *self.inputs[0];
        if (!ia.requires_grad) return;
        ia.ensure_grad();
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t i = 0; i < len * inner; ++i)
                ia.grad[(o * mid + start) * inner + i] += self.grad[o * len * inner + i];
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    check(shape_numel(shape) == a.numel(), "reshape",
          shape_str(a.shape()) + " -> " + shape_str(shape));
    auto out = make_node(std::move(shape), "reshape");
    out->value = std::vector<double>(a.values().begin(), a.values().end());
    return finish(std::move(out), {a}, [](autograd::Node& self) {
        auto& ia = *self.inputs[0];
        if (!ia.requires_grad) return;
        ia.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) ia.grad[i] += self.grad[i];
    });
}

namespace {

// Row-major strides.
std::vector<std::int64_t> strides_of(const Shape& s) {
    std::vector<std::int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
    return st;
}

// out[idx] = in[perm(idx)]; walks output indices with an odometer.
template <typename F>
void permute_walk(const Shape& out_shape, const std::vector<std::int64_t>& in_strides,
                  const std::vector<int>& perm, F&& f) {
    const int rank = static_cast<int>(out_shape.size());
    std::vector<std::int64_t> idx(rank, 0);
    const std::int64_t n = shape_numel(out_shape);
    std::int64_t in_flat = 0;
    for (std::int64_t out_flat = 0; out_flat < n; ++out_flat) {
        f(out_flat, in_flat);
        for (int d = rank - 1; d >= 0; --d) {
            ++idx[d];
            in_flat += in_strides[perm[d]];
            if (idx[d] < out_shape[d]) break;
            in_flat -= in_strides[perm[d]] * out_shape[d];
            idx[d] = 0;
        }
    }
}

}  // namespace

Tensor permute(const Tensor& a, const std::vector<int>& perm) {
    const int rank = a.ndim();
    check(static_cast<int>(perm.size()) == rank, "permute", "perm rank mismatch");
    std::vector<bool> seen(rank, false);
    for (int p : perm) {
        check(p >= 0 && p < rank && !seen[p], "permute", "invalid permutation");
        seen[p] = true;
    }
    Shape out_shape(rank);
    for (int i = 0; i < rank; ++i) out_shape[i] = a.dim(perm[i]);
    auto out = make_node(out_shape, "permute");
    const auto in_strides = strides_of(a.shape());
    permute_walk(out_shape, in_strides, perm,
                 [&](std::int64_t of, std::int64_t inf) { out->value[of] = a.values()[inf]; });
    return finish(std::move(out), {a}, [out_shape, in_strides, perm](autograd::Node& self) {
        auto& ia = *self.inputs[0];
        if (!ia.requires_grad) return;
        ia.ensure_grad();
        permute_walk(out_shape, in_strides, perm,
                     [&](std::int64_t of, std::int64_t inf) { ia.grad[inf] += self.grad[of]; });
    });
}

Tensor sum_all(const Tensor& a) {
    auto out = make_node({1}, "sum");
    double s = 0.0;
    for (double v : a.values()) s += v;
    out->value[0] = s;
    return finish(std::move(out), {a}, [](autograd::Node& self) {
        auto& ia = *self.inputs[0];
        if (!ia.requires_grad) return;
        ia.ensure_grad();
        for (double& g : ia.grad) g += self.grad[0];
    });
}

Tensor mean_all(const Tensor& a) {
    auto out = make_node({1}, "mean");
    double s = 0.0;
    for (double v : a.values()) s += v;
    const double inv_n = 1.0 / static_cast<double>(a.numel());
    out->value[0] = s * inv_n;
    return finish(std::move(out), {a}, [inv_n](autograd::Node& self) {
        auto& ia = *self.inputs[0];
        if (!ia.requires_grad) return;
        ia.ensure_grad();
        for (double& g : ia.grad) g += self.grad[0] * inv_n;
    });
}

Tensor cross_entropy_with_logits(const Tensor& logits, const std::vector<int>& labels) {
    check(logits.ndim() == 2, "cross_entropy", "logits " + shape_str(logits.shape()));
    const std::int64_t t = logits.dim(0), c = logits.dim(1);
    check(static_cast<std::int64_t>(labels.size()) == t, "cross_entropy",
          std::to_string(labels.size()) + " labels for " + std::to_string(t) + " rows");
    for (int y : labels)
        check(y >= 0 && y < c, "cross_entropy", "label " + std::to_string(y) + " out of range");
    auto out = make_node({t}, "cross_entropy");
    for (std::int64_t r = 0; r < t; ++r) {
        const double* x = logits.values().data() + r * c;
        double mx = x[0];
        for (std::int64_t i = 1; i < c; ++i) mx = std::max(mx, x[i]);
        double sum = 0.0;
        for (std::int64_t i = 0; i < c; ++i) sum += std::exp(x[i] - mx);
        out->value[r] = mx + std::log(sum) - x[labels[r]];
    }
    return finish(std::move(out), {logits}, [t, c, labels](autograd::Node& self) {
        auto& il = *self.inputs[0];
        if (!il.requires_grad) return;
        il.ensure_grad();
        for (std::int64_t r = 0; r < t; ++r) {
            const double* x = il.value.data() + r * c;
            double mx = x[0];
            for (std::int64_t i = 1; i < c; ++i) mx = std::max(mx, x[i]);
            double sum = 0.0;
            for (std::int64_t i = 0; i < c; ++i) sum += std::exp(x[i] - mx);
            for (std::int64_t i = 0; i < c; ++i) {
                const double p = std::exp(x[i] - mx) / sum;
                il.grad[r * c + i] += self.grad[r] * (p - (i == labels[r] ? 1.0 : 0.0));
            }
        }
    });
}

}  // namespace taco
