#pragma once
// Dense 64-bit float tensors with reverse-mode differentiation.
//
// Each op builds a node in an implicit DAG; backward() on a scalar root
// runs the chain rule in reverse topological order and accumulates into
// leaf gradients, then drops the recorded edges. Ops record only when some
// operand requires a gradient and recording is not suppressed (NoGradGuard).
// Reductions run in fixed left-to-right order so results are reproducible.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "mfas/errors.hpp"
#include "mfas/rng.hpp"

namespace mfas {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

namespace detail {

struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backprop;  // pushes node.grad into parents

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

inline thread_local int no_grad_depth = 0;

inline bool grad_enabled() { return no_grad_depth == 0; }

}  // namespace detail

// Suppresses tape recording for forward-only passes (labeling, evaluation).
struct NoGradGuard {
    NoGradGuard() { ++detail::no_grad_depth; }
    ~NoGradGuard() { --detail::no_grad_depth; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape) { return filled(std::move(shape), 0.0); }

    static Tensor filled(Shape shape, double v) {
        auto n = std::make_shared<detail::TensorNode>();
        n->value.assign(shape_numel(shape), v);
        n->shape = std::move(shape);
        return Tensor(std::move(n));
    }

    static Tensor from(Shape shape, std::vector<double> data) {
        if (shape_numel(shape) != data.size())
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        auto n = std::make_shared<detail::TensorNode>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        return Tensor(std::move(n));
    }

    static Tensor scalar(double v) { return from({1}, {v}); }

    static Tensor row_vector(std::vector<double> data) {
        Shape s{data.size()};
        return from(std::move(s), std::move(data));
    }

    // Result node of an op: value plus, when recording, the parent edges and
    // the pullback that distributes node.grad into the parents' grads.
    static Tensor make_op(Shape shape, std::vector<double> value,
                          std::vector<Tensor> parents,
                          std::function<void(detail::TensorNode&)> backprop) {
        auto n = std::make_shared<detail::TensorNode>();
        n->shape = std::move(shape);
        n->value = std::move(value);
        bool any_grad = false;
        for (const Tensor& p : parents) any_grad = any_grad || p.requires_grad();
        if (detail::grad_enabled() && any_grad) {
            n->requires_grad = true;
            n->parents.reserve(parents.size());
            for (const Tensor& p : parents) n->parents.push_back(p.node_);
            n->backprop = std::move(backprop);
        }
        return Tensor(std::move(n));
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t size() const { return node_->value.size(); }
    std::size_t rank() const { return node_->shape.size(); }

    const std::vector<double>& value() const { return node_->value; }
    std::vector<double>& value() { return node_->value; }

    double item() const {
        if (size() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
        return node_->value[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool b) {
        node_->requires_grad = b;
        return *this;
    }

    bool has_grad() const { return node_ && !node_->grad.empty(); }
    const std::vector<double>& grad() const {
        if (!has_grad()) throw ContractError("tensor has no accumulated gradient");
        return node_->grad;
    }
    void zero_grad() {
        if (node_ && !node_->grad.empty())
            std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }

    // Deep copy (data, grad buffer, requires_grad) as a fresh leaf.
    Tensor clone() const {
        auto n = std::make_shared<detail::TensorNode>();
        n->shape = node_->shape;
        n->value = node_->value;
        n->grad = node_->grad;
        n->requires_grad = node_->requires_grad;
        return Tensor(std::move(n));
    }

    // Copy of the values with no graph link and no gradient requirement.
    Tensor detach() const {
        auto n = std::make_shared<detail::TensorNode>();
        n->shape = node_->shape;
        n->value = node_->value;
        return Tensor(std::move(n));
    }

    // Reverse-mode sweep from a scalar root. Accumulates into the grad of
    // every reachable node that requires one, then clears the recorded tape
    // (interior edges and pullbacks are dropped; leaves keep their grads).
    void backward() const {
        if (size() != 1)
            throw ContractError("backward() requires a scalar root, got shape " +
                                shape_str(shape()));
        std::vector<detail::TensorNode*> order;
        topo_sort(node_.get(), order);
        node_->ensure_grad();
        node_->grad[0] += 1.0;
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            if ((*it)->backprop) (*it)->backprop(**it);
        }
        for (detail::TensorNode* n : order) {
            if (n->backprop) {
                n->backprop = nullptr;
                n->parents.clear();
                n->grad.clear();
            }
        }
    }

    detail::TensorNode* node() const { return node_.get(); }

private:
    explicit Tensor(std::shared_ptr<detail::TensorNode> n) : node_(std::move(n)) {}

    static void topo_sort(detail::TensorNode* root, std::vector<detail::TensorNode*>& order) {
        // Iterative post-order DFS; child order is the recorded parent order,
        // so traversal does not depend on heap addresses.
        struct Frame {
            detail::TensorNode* node;
            std::size_t next_parent;
        };
        std::vector<Frame> stack;
        std::vector<detail::TensorNode*> seen;
        auto visited = [&seen](detail::TensorNode* n) {
            return std::find(seen.begin(), seen.end(), n) != seen.end();
        };
        stack.push_back({root, 0});
        seen.push_back(root);
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.next_parent < f.node->parents.size()) {
                detail::TensorNode* p = f.node->parents[f.next_parent++].get();
                if (!visited(p)) {
                    seen.push_back(p);
                    stack.push_back({p, 0});
                }
            } else {
                order.push_back(f.node);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<detail::TensorNode> node_;
};

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

inline double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
    return Tensor::make_op(a.shape(), std::move(out), {a, b}, [](detail::TensorNode& n) {
        for (int k = 0; k < 2; ++k) {
            auto& p = *n.parents[k];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
    return Tensor::make_op(a.shape(), std::move(out), {a, b}, [](detail::TensorNode& n) {
        auto& pa = *n.parents[0];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i];
        }
        auto& pb = *n.parents[1];
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] -= n.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
    return Tensor::make_op(a.shape(), std::move(out), {a, b}, [](detail::TensorNode& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] += n.grad[i] * pa.value[i];
        }
    });
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * c;
    return Tensor::make_op(a.shape(), std::move(out), {a}, [c](detail::TensorNode& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += c * n.grad[i];
    });
}

// Elementwise product with a constant mask (dropout application).
inline Tensor mask_mul(const Tensor& a, std::vector<double> mask) {
    if (mask.size() != a.size())
        throw ShapeError("mask_mul: mask length " + std::to_string(mask.size()) +
                         " vs tensor " + shape_str(a.shape()));
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * mask[i];
    return Tensor::make_op(a.shape(), std::move(out), {a},
                           [m = std::move(mask)](detail::TensorNode& n) {
                               auto& p = *n.parents[0];
                               if (!p.requires_grad) return;
                               p.ensure_grad();
                               for (std::size_t i = 0; i < n.grad.size(); ++i)
                                   p.grad[i] += n.grad[i] * m[i];
                           });
}

// input [B x I] (or [I], treated as one row) times weight [I x O] plus bias [O].
inline Tensor affine(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    if (weight.rank() != 2) throw ShapeError("affine: weight must be rank 2, got " + shape_str(weight.shape()));
    const std::size_t in_dim = weight.shape()[0];
    const std::size_t out_dim = weight.shape()[1];
    if (bias.size() != out_dim)
        throw ShapeError("affine: bias " + shape_str(bias.shape()) + " vs weight " + shape_str(weight.shape()));
    const bool rowvec = input.rank() == 1;
    const std::size_t batch = rowvec ? 1 : input.shape()[0];
    if ((rowvec && input.size() != in_dim) ||
        (!rowvec && (input.rank() != 2 || input.shape()[1] != in_dim)))
        throw ShapeError("affine: input " + shape_str(input.shape()) + " vs weight " + shape_str(weight.shape()));

    std::vector<double> out(batch * out_dim);
    const auto& x = input.value();
    const auto& w = weight.value();
    const auto& b = bias.value();
    for (std::size_t r = 0; r < batch; ++r) {
        for (std::size_t o = 0; o < out_dim; ++o) {
            double acc = b[o];
            for (std::size_t i = 0; i < in_dim; ++i) acc += x[r * in_dim + i] * w[i * out_dim + o];
            out[r * out_dim + o] = acc;
        }
    }
    Shape out_shape = rowvec ? Shape{out_dim} : Shape{batch, out_dim};
    return Tensor::make_op(
        std::move(out_shape), std::move(out), {input, weight, bias},
        [batch, in_dim, out_dim](detail::TensorNode& n) {
            auto& px = *n.parents[0];
            auto& pw = *n.parents[1];
            auto& pb = *n.parents[2];
            if (px.requires_grad) {
                px.ensure_grad();
                for (std::size_t r = 0; r < batch; ++r)
                    for (std::size_t i = 0; i < in_dim; ++i) {
                        double acc = 0.0;
                        for (std::size_t o = 0; o < out_dim; ++o)
                            acc += n.grad[r * out_dim + o] * pw.value[i * out_dim + o];
                        px.grad[r * in_dim + i] += acc;
                    }
            }
            if (pw.requires_grad) {
                pw.ensure_grad();
                for (std::size_t i = 0; i < in_dim; ++i)
                    for (std::size_t o = 0; o < out_dim; ++o) {
                        double acc = 0.0;
                        for (std::size_t r = 0; r < batch; ++r)
                            acc += px.value[r * in_dim + i] * n.grad[r * out_dim + o];
                        pw.grad[i * out_dim + o] += acc;
                    }
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (std::size_t o = 0; o < out_dim; ++o) {
                    double acc = 0.0;
                    for (std::size_t r = 0; r < batch; ++r) acc += n.grad[r * out_dim + o];
                    pb.grad[o] += acc;
                }
            }
        });
}

inline Tensor relu(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] > 0.0 ? a.value()[i] : 0.0;
    return Tensor::make_op(a.shape(), std::move(out), {a}, [](detail::TensorNode& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            if (p.value[i] > 0.0) p.grad[i] += n.grad[i];
    });
}

inline Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::stable_sigmoid(a.value()[i]);
    return Tensor::make_op(a.shape(), std::move(out), {a}, [](detail::TensorNode& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            const double s = n.value[i];
            p.grad[i] += n.grad[i] * s * (1.0 - s);
        }
    });
}

// softplus(x) = (1/beta) * ln(1 + exp(beta*x)), with stable branches so that
// beta on the order of 500 cannot overflow: identity above beta*x > 30,
// exp(beta*x)/beta below beta*x < -30.
inline double softplus_value(double x, double beta) {
    const double z = beta * x;
    if (z > 30.0) return x;
    if (z < -30.0) return std::exp(z) / beta;
    return std::log1p(std::exp(z)) / beta;
}

inline Tensor softplus(const Tensor& a, double beta) {
    if (!(beta > 0.0)) throw ContractError("softplus: beta must be positive");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = softplus_value(a.value()[i], beta);
    return Tensor::make_op(a.shape(), std::move(out), {a}, [beta](detail::TensorNode& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            p.grad[i] += n.grad[i] * detail::stable_sigmoid(beta * p.value[i]);
    });
}

// Softmax over a rank-1 tensor, max-shifted for stability.
inline Tensor softmax(const Tensor& a) {
    if (a.rank() != 1) throw ShapeError("softmax: expects rank-1 tensor, got " + shape_str(a.shape()));
    const auto& x = a.value();
    const double m = *std::max_element(x.begin(), x.end());
    std::vector<double> out(x.size());
    double denom = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = std::exp(x[i] - m);
        denom += out[i];
    }
    for (double& v : out) v /= denom;
    return Tensor::make_op(a.shape(), std::move(out), {a}, [](detail::TensorNode& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        double dot = 0.0;
        for (std::size_t j = 0; j < n.grad.size(); ++j) dot += n.grad[j] * n.value[j];
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            p.grad[i] += n.value[i] * (n.grad[i] - dot);
    });
}

inline Tensor abs(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(a.value()[i]);
    return Tensor::make_op(a.shape(), std::move(out), {a}, [](detail::TensorNode& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            if (p.value[i] > 0.0)
                p.grad[i] += n.grad[i];
            else if (p.value[i] < 0.0)
                p.grad[i] -= n.grad[i];
        }
    });
}

inline Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.value()) acc += v;  // fixed left-to-right
    return Tensor::make_op({1}, {acc}, {a}, [](detail::TensorNode& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += n.grad[0];
    });
}

inline Tensor mean(const Tensor& a) {
    if (a.size() == 0) throw ContractError("mean of empty tensor");
    const double inv = 1.0 / static_cast<double>(a.size());
    double acc = 0.0;
    for (double v : a.value()) acc += v;
    return Tensor::make_op({1}, {acc * inv}, {a}, [inv](detail::TensorNode& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += n.grad[0] * inv;
    });
}

constexpr double kProbClip = 1e-7;  // probability clamp before logs

// Elementwise two-term cross-entropy against fixed 0/1 labels; predictions
// are clipped to [kProbClip, 1-kProbClip] and the clip has zero gradient.
inline Tensor binary_cross_entropy(const Tensor& p, const std::vector<double>& labels) {
    if (p.size() != labels.size())
        throw ShapeError("binary_cross_entropy: " + std::to_string(labels.size()) +
                         " labels vs predictions " + shape_str(p.shape()));
    std::vector<double> out(p.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double q = std::clamp(p.value()[i], kProbClip, 1.0 - kProbClip);
        out[i] = -labels[i] * std::log(q) - (1.0 - labels[i]) * std::log(1.0 - q);
    }
    return Tensor::make_op(p.shape(), std::move(out), {p}, [labels](detail::TensorNode& n) {
        auto& pp = *n.parents[0];
        if (!pp.requires_grad) return;
        pp.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            const double raw = pp.value[i];
            if (raw < kProbClip || raw > 1.0 - kProbClip) continue;  // clipped: flat
            pp.grad[i] += n.grad[i] * (-labels[i] / raw + (1.0 - labels[i]) / (1.0 - raw));
        }
    });
}

constexpr double kNormEps = 1e-12;  // below this a vector counts as zero-norm

// Cosine similarity of two equal-length rank-1 tensors, as a scalar tensor.
// A zero-norm operand makes the similarity 0 by definition (alignment loss 1);
// that branch is constant and carries no gradient. `degenerate`, when given,
// reports whether it was taken.
inline Tensor cosine_similarity(const Tensor& a, const Tensor& b, bool* degenerate = nullptr) {
    detail::check_same_shape(a, b, "cosine_similarity");
    if (a.rank() != 1) throw ShapeError("cosine_similarity: expects rank-1 tensors");
    double dot = 0.0, na2 = 0.0, nb2 = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a.value()[i] * b.value()[i];
        na2 += a.value()[i] * a.value()[i];
        nb2 += b.value()[i] * b.value()[i];
    }
    const double na = std::sqrt(na2);
    const double nb = std::sqrt(nb2);
    if (degenerate) *degenerate = false;
    if (na <= kNormEps || nb <= kNormEps) {
        if (degenerate) *degenerate = true;
        return Tensor::scalar(0.0);
    }
    const double c = dot / (na * nb);
    return Tensor::make_op({1}, {c}, {a, b}, [na, nb, c](detail::TensorNode& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        const double g = n.grad[0];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < pa.value.size(); ++i)
                pa.grad[i] += g * (pb.value[i] / (na * nb) - c * pa.value[i] / (na * na));
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < pb.value.size(); ++i)
                pb.grad[i] += g * (pa.value[i] / (na * nb) - c * pb.value[i] / (nb * nb));
        }
    });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }

// Inverted-scale dropout mask: each entry is 0 with probability `rate`,
// otherwise 1/(1-rate), so the masked feature keeps its expectation.
inline std::vector<double> dropout_mask(std::size_t n, double rate, RngStream& rng) {
    if (!(rate >= 0.0 && rate < 1.0))
        throw ContractError("dropout_mask: rate must lie in [0, 1), got " + std::to_string(rate));
    std::vector<double> mask(n);
    const double keep_scale = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < n; ++i)
        mask[i] = rng.next_double() < rate ? 0.0 : keep_scale;
    return mask;
}

}  // namespace mfas
