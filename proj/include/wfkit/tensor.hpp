#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "wfkit/error.hpp"
#include "wfkit/feature.hpp"
#include "wfkit/rng.hpp"
#include "wfkit/trace.hpp"

namespace wfkit {

// Reverse-mode autodiff over dense row-major tensors. Scalar type S is float
// in production; tests instantiate double for finite-difference checks. All
// reductions accumulate in double regardless of S.

namespace detail {

inline std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) n *= d;
    return n;
}

template <typename S>
inline void ensure_finite(const std::vector<S>& v, const char* op) {
    for (S x : v)
        if (!std::isfinite(static_cast<double>(x)))
            throw NumericError(std::string(op) + " produced a non-finite value");
}

inline std::string shape_str(const std::vector<std::int64_t>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

} // namespace detail

template <typename S>
class Tensor {
  public:
    struct Node {
        std::vector<std::int64_t> shape;
        std::vector<S> value;
        std::vector<S> grad; // sized lazily, only when requires_grad
        bool requires_grad = false;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backward_fn; // reads own grad, accumulates into parents

        std::int64_t numel() const { return static_cast<std::int64_t>(value.size()); }
        void ensure_grad() {
            if (grad.size() != value.size()) grad.assign(value.size(), S(0));
        }
    };

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Tensor leaf(std::vector<std::int64_t> shape, std::vector<S> data, bool requires_grad = false) {
        if (detail::shape_numel(shape) != static_cast<std::int64_t>(data.size()))
            throw ShapeError("leaf tensor data size does not match shape " + detail::shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor zeros(std::vector<std::int64_t> shape, bool requires_grad = false) {
        const auto n = detail::shape_numel(shape);
        return leaf(std::move(shape), std::vector<S>(static_cast<std::size_t>(n), S(0)), requires_grad);
    }

    bool defined() const { return static_cast<bool>(node_); }
    const std::vector<std::int64_t>& shape() const { return node_->shape; }
    std::int64_t dim(std::size_t i) const { return node_->shape[i]; }
    std::int64_t numel() const { return node_->numel(); }
    std::vector<S>& value() { return node_->value; }
    const std::vector<S>& value() const { return node_->value; }
    std::vector<S>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    bool requires_grad() const { return node_->requires_grad; }
    std::shared_ptr<Node> node() const { return node_; }

    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), S(0));
    }

    /// Reverse pass from a scalar. Seeds d(this)/d(this) = 1 and propagates
    /// through the recorded graph in reverse topological order.
    void backward() {
        if (node_->numel() != 1) throw ShapeError("backward requires a scalar tensor");
        std::vector<Node*> order;
        std::unordered_set<Node*> seen;
        std::vector<std::pair<Node*, std::size_t>> stack;
        stack.push_back({node_.get(), 0});
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, idx] = stack.back();
            if (idx < n->parents.size()) {
                Node* p = n->parents[idx++].get();
                if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
        for (Node* n : order) n->ensure_grad();
        node_->grad[0] = S(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it)
            if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }

  private:
    std::shared_ptr<Node> node_;
};

namespace detail {

template <typename S>
std::shared_ptr<typename Tensor<S>::Node> make_op_node(std::vector<std::int64_t> shape,
                                                       std::vector<S> value,
                                                       std::vector<std::shared_ptr<typename Tensor<S>::Node>> parents,
                                                       const char* op) {
    ensure_finite(value, op);
    auto n = std::make_shared<typename Tensor<S>::Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    bool rg = false;
    for (auto& p : parents) rg = rg || p->requires_grad;
    n->requires_grad = rg;
    n->parents = std::move(parents);
    return n;
}

} // namespace detail

// ----- convolution ------------------------------------------------------------

/// conv2d, cross-correlation convention: input [N,Cin,H,W], weight
/// [Cout,Cin,kh,kw], bias [Cout]; output H' = floor((H+2ph-kh)/sh)+1, W'
/// analogous.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias,
                 int ph, int pw, int sh = 1, int sw = 1) {
    if (input.shape().size() != 4) throw ShapeError("conv2d input must be [N,Cin,H,W]");
    if (weight.shape().size() != 4) throw ShapeError("conv2d weight must be [Cout,Cin,kh,kw]");
    const std::int64_t N = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
    const std::int64_t Cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    if (weight.dim(1) != Cin)
        throw ShapeError("conv2d channel mismatch: input Cin " + std::to_string(Cin) + " vs weight " +
                         std::to_string(weight.dim(1)));
    if (bias.shape() != std::vector<std::int64_t>{Cout}) throw ShapeError("conv2d bias must be [Cout]");
    if (kh > H + 2 * ph || kw > W + 2 * pw) throw ShapeError("conv2d kernel larger than padded input");
    if (ph < 0 || pw < 0 || sh < 1 || sw < 1) throw ShapeError("conv2d invalid pad/stride");
    const std::int64_t Ho = (H + 2 * ph - kh) / sh + 1;
    const std::int64_t Wo = (W + 2 * pw - kw) / sw + 1;

    std::vector<S> out(static_cast<std::size_t>(N * Cout * Ho * Wo));
    const S* in = input.value().data();
    const S* wt = weight.value().data();
    const S* bs = bias.value().data();
    std::vector<double> acc(static_cast<std::size_t>(Ho * Wo));
    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t co = 0; co < Cout; ++co) {
            std::fill(acc.begin(), acc.end(), static_cast<double>(bs[co]));
            for (std::int64_t ci = 0; ci < Cin; ++ci) {
                const S* in_plane = in + ((n * Cin + ci) * H) * W;
                const S* w_plane = wt + ((co * Cin + ci) * kh) * kw;
                for (std::int64_t r = 0; r < kh; ++r) {
                    for (std::int64_t c = 0; c < kw; ++c) {
                        const double wv = static_cast<double>(w_plane[r * kw + c]);
                        if (wv == 0.0) continue;
                        for (std::int64_t oh = 0; oh < Ho; ++oh) {
                            const std::int64_t ih = oh * sh - ph + r;
                            if (ih < 0 || ih >= H) continue;
                            double* arow = acc.data() + oh * Wo;
                            const S* irow = in_plane + ih * W;
                            for (std::int64_t ow = 0; ow < Wo; ++ow) {
                                const std::int64_t iw = ow * sw - pw + c;
                                if (iw < 0 || iw >= W) continue;
                                arow[ow] += wv * static_cast<double>(irow[iw]);
                            }
                        }
                    }
                }
            }
            S* orow = out.data() + ((n * Cout + co) * Ho) * Wo;
            for (std::int64_t i = 0; i < Ho * Wo; ++i) orow[i] = static_cast<S>(acc[static_cast<std::size_t>(i)]);
        }
    }

    auto node = detail::make_op_node<S>({N, Cout, Ho, Wo}, std::move(out),
                                        {input.node(), weight.node(), bias.node()}, "conv2d");
    auto xin = input.node();
    auto wn = weight.node();
    auto bn = bias.node();
    node->backward_fn = [xin, wn, bn, N, Cin, Cout, H, W, Ho, Wo, kh, kw, ph, pw, sh, sw](auto& self) {
        const S* g = self.grad.data();
        const S* in = xin->value.data();
        const S* wt = wn->value.data();
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::int64_t co = 0; co < Cout; ++co) {
                double a = 0.0;
                for (std::int64_t n = 0; n < N; ++n) {
                    const S* grow = g + ((n * Cout + co) * Ho) * Wo;
                    for (std::int64_t i = 0; i < Ho * Wo; ++i) a += static_cast<double>(grow[i]);
                }
                bn->grad[static_cast<std::size_t>(co)] += static_cast<S>(a);
            }
        }
        if (wn->requires_grad) {
            wn->ensure_grad();
            for (std::int64_t co = 0; co < Cout; ++co)
                for (std::int64_t ci = 0; ci < Cin; ++ci)
                    for (std::int64_t r = 0; r < kh; ++r)
                        for (std::int64_t c = 0; c < kw; ++c) {
                            double a = 0.0;
                            for (std::int64_t n = 0; n < N; ++n) {
                                const S* grow = g + ((n * Cout + co) * Ho) * Wo;
                                const S* in_plane = in + ((n * Cin + ci) * H) * W;
                                for (std::int64_t oh = 0; oh < Ho; ++oh) {
                                    const std::int64_t ih = oh * sh - ph + r;
                                    if (ih < 0 || ih >= H) continue;
                                    for (std::int64_t ow = 0; ow < Wo; ++ow) {
                                        const std::int64_t iw = ow * sw - pw + c;
                                        if (iw < 0 || iw >= W) continue;
                                        a += static_cast<double>(grow[oh * Wo + ow]) *
                                             static_cast<double>(in_plane[ih * W + iw]);
                                    }
                                }
                            }
                            wn->grad[static_cast<std::size_t>(((co * Cin + ci) * kh + r) * kw + c)] +=
                                static_cast<S>(a);
                        }
        }
        if (xin->requires_grad) {
            xin->ensure_grad();
            for (std::int64_t n = 0; n < N; ++n)
                for (std::int64_t ci = 0; ci < Cin; ++ci) {
                    S* gi_plane = xin->grad.data() + ((n * Cin + ci) * H) * W;
                    for (std::int64_t co = 0; co < Cout; ++co) {
                        const S* grow = g + ((n * Cout + co) * Ho) * Wo;
                        const S* w_plane = wt + ((co * Cin + ci) * kh) * kw;
                        for (std::int64_t r = 0; r < kh; ++r)
                            for (std::int64_t c = 0; c < kw; ++c) {
                                const double wv = static_cast<double>(w_plane[r * kw + c]);
                                if (wv == 0.0) continue;
                                for (std::int64_t oh = 0; oh < Ho; ++oh) {
                                    const std::int64_t ih = oh * sh - ph + r;
                                    if (ih < 0 || ih >= H) continue;
                                    for (std::int64_t ow = 0; ow < Wo; ++ow) {
                                        const std::int64_t iw = ow * sw - pw + c;
                                        if (iw < 0 || iw >= W) continue;
                                        gi_plane[ih * W + iw] +=
                                            static_cast<S>(wv * static_cast<double>(grow[oh * Wo + ow]));
                                    }
                                }
                            }
                    }
                }
        }
    };
    return Tensor<S>(node);
}

/// conv1d: input [N,Cin,T], weight [Cout,Cin,k], bias [Cout].
template <typename S>
Tensor<S> conv1d(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias,
                 int pad, int stride = 1) {
    if (input.shape().size() != 3) throw ShapeError("conv1d input must be [N,Cin,T]");
    if (weight.shape().size() != 3) throw ShapeError("conv1d weight must be [Cout,Cin,k]");
    const std::int64_t N = input.dim(0), Cin = input.dim(1), T = input.dim(2);
    const std::int64_t Cout = weight.dim(0), k = weight.dim(2);
    if (weight.dim(1) != Cin) throw ShapeError("conv1d channel mismatch");
    if (bias.shape() != std::vector<std::int64_t>{Cout}) throw ShapeError("conv1d bias must be [Cout]");
    if (k > T + 2 * pad) throw ShapeError("conv1d kernel larger than padded input");
    if (pad < 0 || stride < 1) throw ShapeError("conv1d invalid pad/stride");
    const std::int64_t To = (T + 2 * pad - k) / stride + 1;

    std::vector<S> out(static_cast<std::size_t>(N * Cout * To));
    const S* in = input.value().data();
    const S* wt = weight.value().data();
    const S* bs = bias.value().data();
    std::vector<double> acc(static_cast<std::size_t>(To));
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t co = 0; co < Cout; ++co) {
            std::fill(acc.begin(), acc.end(), static_cast<double>(bs[co]));
            for (std::int64_t ci = 0; ci < Cin; ++ci) {
                const S* irow = in + (n * Cin + ci) * T;
                const S* wrow = wt + (co * Cin + ci) * k;
                for (std::int64_t r = 0; r < k; ++r) {
                    const double wv = static_cast<double>(wrow[r]);
                    if (wv == 0.0) continue;
                    const std::int64_t off = r - pad;
                    // valid ot range: 0 <= ot*stride + off < T
                    std::int64_t lo = 0;
                    while (lo < To && lo * stride + off < 0) ++lo;
                    std::int64_t hi = To;
                    while (hi > lo && (hi - 1) * stride + off >= T) --hi;
                    const S* src = irow + lo * stride + off;
                    double* dst = acc.data() + lo;
                    if (stride == 1) {
                        for (std::int64_t i = 0; i < hi - lo; ++i) dst[i] += wv * static_cast<double>(src[i]);
                    } else {
                        for (std::int64_t i = 0; i < hi - lo; ++i)
                            dst[i] += wv * static_cast<double>(src[i * stride]);
                    }
                }
            }
            S* orow = out.data() + (n * Cout + co) * To;
            for (std::int64_t i = 0; i < To; ++i) orow[i] = static_cast<S>(acc[static_cast<std::size_t>(i)]);
        }

    auto node = detail::make_op_node<S>({N, Cout, To}, std::move(out),
                                        {input.node(), weight.node(), bias.node()}, "conv1d");
    auto xin = input.node();
    auto wn = weight.node();
    auto bn = bias.node();
    node->backward_fn = [xin, wn, bn, N, Cin, Cout, T, To, k, pad, stride](auto& self) {
        const S* g = self.grad.data();
        const S* in = xin->value.data();
        const S* wt = wn->value.data();
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::int64_t co = 0; co < Cout; ++co) {
                double a = 0.0;
                for (std::int64_t n = 0; n < N; ++n) {
                    const S* grow = g + (n * Cout + co) * To;
                    for (std::int64_t i = 0; i < To; ++i) a += static_cast<double>(grow[i]);
                }
                bn->grad[static_cast<std::size_t>(co)] += static_cast<S>(a);
            }
        }
        if (wn->requires_grad) {
            wn->ensure_grad();
            for (std::int64_t co = 0; co < Cout; ++co)
                for (std::int64_t ci = 0; ci < Cin; ++ci) {
                    S* gw = wn->grad.data() + (co * Cin + ci) * k;
                    for (std::int64_t r = 0; r < k; ++r) {
                        const std::int64_t off = r - pad;
                        double a = 0.0;
                        for (std::int64_t n = 0; n < N; ++n) {
                            const S* grow = g + (n * Cout + co) * To;
                            const S* irow = in + (n * Cin + ci) * T;
                            std::int64_t lo = 0;
                            while (lo < To && lo * stride + off < 0) ++lo;
                            std::int64_t hi = To;
                            while (hi > lo && (hi - 1) * stride + off >= T) --hi;
                            const S* src = irow + lo * stride + off;
                            const S* gsrc = grow + lo;
                            if (stride == 1) {
                                for (std::int64_t i = 0; i < hi - lo; ++i)
                                    a += static_cast<double>(gsrc[i]) * static_cast<double>(src[i]);
                            } else {
                                for (std::int64_t i = 0; i < hi - lo; ++i)
                                    a += static_cast<double>(gsrc[i]) * static_cast<double>(src[i * stride]);
                            }
                        }
                        gw[r] += static_cast<S>(a);
                    }
                }
        }
        if (xin->requires_grad) {
            xin->ensure_grad();
            for (std::int64_t n = 0; n < N; ++n)
                for (std::int64_t ci = 0; ci < Cin; ++ci) {
                    S* gi = xin->grad.data() + (n * Cin + ci) * T;
                    for (std::int64_t co = 0; co < Cout; ++co) {
                        const S* grow = g + (n * Cout + co) * To;
                        const S* wrow = wt + (co * Cin + ci) * k;
                        for (std::int64_t r = 0; r < k; ++r) {
                            const double wv = static_cast<double>(wrow[r]);
                            if (wv == 0.0) continue;
                            const std::int64_t off = r - pad;
                            std::int64_t lo = 0;
                            while (lo < To && lo * stride + off < 0) ++lo;
                            std::int64_t hi = To;
                            while (hi > lo && (hi - 1) * stride + off >= T) --hi;
                            S* dst = gi + lo * stride + off;
                            const S* gsrc = grow + lo;
                            if (stride == 1) {
                                for (std::int64_t i = 0; i < hi - lo; ++i)
                                    dst[i] += static_cast<S>(wv * static_cast<double>(gsrc[i]));
                            } else {
                                for (std::int64_t i = 0; i < hi - lo; ++i)
                                    dst[i * stride] += static_cast<S>(wv * static_cast<double>(gsrc[i]));
                            }
                        }
                    }
                }
        }
    };
    return Tensor<S>(node);
}

// ----- batch normalization ----------------------------------------------------

/// Batchnorm over channel axis 1 of an [N,C,...] tensor. Train mode
/// normalizes with biased batch variance and updates running stats in place
/// (running <- (1-momentum)*running + momentum*batch, unbiased variance for
/// the running update). Eval mode normalizes with the running stats.
template <typename S>
Tensor<S> batchnorm(const Tensor<S>& input, const Tensor<S>& gamma, const Tensor<S>& beta,
                    std::vector<double>& running_mean, std::vector<double>& running_var,
                    bool train, double momentum = 0.1, double eps = 1e-5) {
    if (input.shape().size() < 2) throw ShapeError("batchnorm input must be [N,C,...]");
    const std::int64_t N = input.dim(0), C = input.dim(1);
    std::int64_t spatial = 1;
    for (std::size_t i = 2; i < input.shape().size(); ++i) spatial *= input.shape()[i];
    if (gamma.shape() != std::vector<std::int64_t>{C} || beta.shape() != std::vector<std::int64_t>{C})
        throw ShapeError("batchnorm gamma/beta must be [C]");
    if (running_mean.size() != static_cast<std::size_t>(C) || running_var.size() != static_cast<std::size_t>(C))
        throw ShapeError("batchnorm running stats must be [C]");
    const std::int64_t m = N * spatial;
    if (train && m <= 1) throw ShapeError("batchnorm train mode needs more than one element per channel");

    std::vector<double> mean(static_cast<std::size_t>(C)), invstd(static_cast<std::size_t>(C));
    const S* in = input.value().data();
    if (train) {
        for (std::int64_t c = 0; c < C; ++c) {
            double s = 0.0;
            for (std::int64_t n = 0; n < N; ++n) {
                const S* row = in + (n * C + c) * spatial;
                for (std::int64_t i = 0; i < spatial; ++i) s += static_cast<double>(row[i]);
            }
            const double mu = s / static_cast<double>(m);
            double v = 0.0;
            for (std::int64_t n = 0; n < N; ++n) {
                const S* row = in + (n * C + c) * spatial;
                for (std::int64_t i = 0; i < spatial; ++i) {
                    const double d = static_cast<double>(row[i]) - mu;
                    v += d * d;
                }
            }
            const double var = v / static_cast<double>(m);
            mean[static_cast<std::size_t>(c)] = mu;
            invstd[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(var + eps);
            const double var_unbiased = v / static_cast<double>(m - 1);
            running_mean[static_cast<std::size_t>(c)] =
                (1.0 - momentum) * running_mean[static_cast<std::size_t>(c)] + momentum * mu;
            running_var[static_cast<std::size_t>(c)] =
                (1.0 - momentum) * running_var[static_cast<std::size_t>(c)] + momentum * var_unbiased;
        }
    } else {
        for (std::int64_t c = 0; c < C; ++c) {
            mean[static_cast<std::size_t>(c)] = running_mean[static_cast<std::size_t>(c)];
            invstd[static_cast<std::size_t>(c)] =
                1.0 / std::sqrt(running_var[static_cast<std::size_t>(c)] + eps);
        }
    }

    std::vector<S> out(input.value().size());
    const S* gm = gamma.value().data();
    const S* bt = beta.value().data();
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 0; c < C; ++c) {
            const S* row = in + (n * C + c) * spatial;
            S* orow = out.data() + (n * C + c) * spatial;
            const double mu = mean[static_cast<std::size_t>(c)];
            const double is = invstd[static_cast<std::size_t>(c)];
            const double gv = static_cast<double>(gm[c]);
            const double bv = static_cast<double>(bt[c]);
            for (std::int64_t i = 0; i < spatial; ++i)
                orow[i] = static_cast<S>((static_cast<double>(row[i]) - mu) * is * gv + bv);
        }

    auto node = detail::make_op_node<S>(input.shape(), std::move(out),
                                        {input.node(), gamma.node(), beta.node()}, "batchnorm");
    auto xin = input.node();
    auto gn = gamma.node();
    auto btn = beta.node();
    node->backward_fn = [xin, gn, btn, N, C, spatial, m, mean, invstd, train](auto& self) {
        const S* g = self.grad.data();
        const S* in = xin->value.data();
        const S* gm = gn->value.data();
        for (std::int64_t c = 0; c < C; ++c) {
            const double mu = mean[static_cast<std::size_t>(c)];
            const double is = invstd[static_cast<std::size_t>(c)];
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (std::int64_t n = 0; n < N; ++n) {
                const S* grow = g + (n * C + c) * spatial;
                const S* row = in + (n * C + c) * spatial;
                for (std::int64_t i = 0; i < spatial; ++i) {
                    const double dy = static_cast<double>(grow[i]);
                    sum_dy += dy;
                    sum_dy_xhat += dy * (static_cast<double>(row[i]) - mu) * is;
                }
            }
            if (gn->requires_grad) {
                gn->ensure_grad();
                gn->grad[static_cast<std::size_t>(c)] += static_cast<S>(sum_dy_xhat);
            }
            if (btn->requires_grad) {
                btn->ensure_grad();
                btn->grad[static_cast<std::size_t>(c)] += static_cast<S>(sum_dy);
            }
            if (xin->requires_grad) {
                xin->ensure_grad();
                const double gv = static_cast<double>(gm[c]);
                const double inv_m = 1.0 / static_cast<double>(m);
                for (std::int64_t n = 0; n < N; ++n) {
                    const S* grow = g + (n * C + c) * spatial;
                    const S* row = in + (n * C + c) * spatial;
                    S* girow = xin->grad.data() + (n * C + c) * spatial;
                    for (std::int64_t i = 0; i < spatial; ++i) {
                        const double dy = static_cast<double>(grow[i]);
                        const double xhat = (static_cast<double>(row[i]) - mu) * is;
                        const double dx = train
                                              ? gv * is * (dy - inv_m * sum_dy - xhat * inv_m * sum_dy_xhat)
                                              : gv * is * dy;
                        girow[i] += static_cast<S>(dx);
                    }
                }
            }
        }
    };
    return Tensor<S>(node);
}

// ----- pointwise activations ---------------------------------------------------

/// Exact Gaussian-CDF GELU: x * Phi(x).
template <typename S>
Tensor<S> gelu(const Tensor<S>& input) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    std::vector<S> out(input.value().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = static_cast<double>(input.value()[i]);
        out[i] = static_cast<S>(x * 0.5 * (1.0 + std::erf(x * inv_sqrt2)));
    }
    auto node = detail::make_op_node<S>(input.shape(), std::move(out), {input.node()}, "gelu");
    auto xin = input.node();
    node->backward_fn = [xin, inv_sqrt2, inv_sqrt2pi](auto& self) {
        if (!xin->requires_grad) return;
        xin->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double x = static_cast<double>(xin->value[i]);
            const double phi = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            xin->grad[i] += static_cast<S>(static_cast<double>(self.grad[i]) * (phi + x * pdf));
        }
    };
    return Tensor<S>(node);
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& input) {
    std::vector<S> out(input.value().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = static_cast<double>(input.value()[i]);
        out[i] = static_cast<S>(x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                         : std::exp(x) / (1.0 + std::exp(x)));
    }
    auto node = detail::make_op_node<S>(input.shape(), std::move(out), {input.node()}, "sigmoid");
    auto xin = input.node();
    node->backward_fn = [xin](auto& self) {
        if (!xin->requires_grad) return;
        xin->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double y = static_cast<double>(self.value[i]);
            xin->grad[i] += static_cast<S>(static_cast<double>(self.grad[i]) * y * (1.0 - y));
        }
    };
    return Tensor<S>(node);
}

// ----- pooling -----------------------------------------------------------------

/// 2-D average pooling on [N,C,H,W], no padding.
template <typename S>
Tensor<S> avgpool2d(const Tensor<S>& input, int wh, int ww, int sh = -1, int sw = -1) {
    if (input.shape().size() != 4) throw ShapeError("avgpool2d input must be [N,C,H,W]");
    if (sh < 0) sh = wh;
    if (sw < 0) sw = ww;
    if (wh < 1 || ww < 1 || sh < 1 || sw < 1) throw ShapeError("avgpool2d invalid window/stride");
    const std::int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (wh > H || ww > W) throw ShapeError("avgpool2d window larger than input");
    const std::int64_t Ho = (H - wh) / sh + 1;
    const std::int64_t Wo = (W - ww) / sw + 1;
    std::vector<S> out(static_cast<std::size_t>(N * C * Ho * Wo));
    const S* in = input.value().data();
    const double inv = 1.0 / (static_cast<double>(wh) * ww);
    for (std::int64_t nc = 0; nc < N * C; ++nc) {
        const S* plane = in + nc * H * W;
        S* oplane = out.data() + nc * Ho * Wo;
        for (std::int64_t oh = 0; oh < Ho; ++oh)
            for (std::int64_t ow = 0; ow < Wo; ++ow) {
                double a = 0.0;
                for (std::int64_t r = 0; r < wh; ++r)
                    for (std::int64_t c = 0; c < ww; ++c)
                        a += static_cast<double>(plane[(oh * sh + r) * W + ow * sw + c]);
                oplane[oh * Wo + ow] = static_cast<S>(a * inv);
            }
    }
    auto node = detail::make_op_node<S>({N, C, Ho, Wo}, std::move(out), {input.node()}, "avgpool2d");
    auto xin = input.node();
    node->backward_fn = [xin, N, C, H, W, Ho, Wo, wh, ww, sh, sw, inv](auto& self) {
        if (!xin->requires_grad) return;
        xin->ensure_grad();
        const S* g = self.grad.data();
        for (std::int64_t nc = 0; nc < N * C; ++nc) {
            S* gplane = xin->grad.data() + nc * H * W;
            const S* grow = g + nc * Ho * Wo;
            for (std::int64_t oh = 0; oh < Ho; ++oh)
                for (std::int64_t ow = 0; ow < Wo; ++ow) {
                    const double gv = static_cast<double>(grow[oh * Wo + ow]) * inv;
                    for (std::int64_t r = 0; r < wh; ++r)
                        for (std::int64_t c = 0; c < ww; ++c)
                            gplane[(oh * sh + r) * W + ow * sw + c] += static_cast<S>(gv);
                }
        }
    };
    return Tensor<S>(node);
}

/// 1-D average pooling on [N,C,T], no padding.
template <typename S>
Tensor<S> avgpool1d(const Tensor<S>& input, int w, int stride = -1) {
    if (input.shape().size() != 3) throw ShapeError("avgpool1d input must be [N,C,T]");
    if (stride < 0) stride = w;
    if (w < 1 || stride < 1) throw ShapeError("avgpool1d invalid window/stride");
    const std::int64_t N = input.dim(0), C = input.dim(1), T = input.dim(2);
    if (w > T) throw ShapeError("avgpool1d window larger than input");
    const std::int64_t To = (T - w) / stride + 1;
    std::vector<S> out(static_cast<std::size_t>(N * C * To));
    const S* in = input.value().data();
    const double inv = 1.0 / static_cast<double>(w);
    for (std::int64_t nc = 0; nc < N * C; ++nc) {
        const S* row = in + nc * T;
        S* orow = out.data() + nc * To;
        for (std::int64_t ot = 0; ot < To; ++ot) {
            double a = 0.0;
            for (std::int64_t r = 0; r < w; ++r) a += static_cast<double>(row[ot * stride + r]);
            orow[ot] = static_cast<S>(a * inv);
        }
    }
    auto node = detail::make_op_node<S>({N, C, To}, std::move(out), {input.node()}, "avgpool1d");
    auto xin = input.node();
    node->backward_fn = [xin, N, C, T, To, w, stride, inv](auto& self) {
        if (!xin->requires_grad) return;
        xin->ensure_grad();
        const S* g = self.grad.data();
        for (std::int64_t nc = 0; nc < N * C; ++nc) {
            S* grow = xin->grad.data() + nc * T;
            const S* gout = g + nc * To;
            for (std::int64_t ot = 0; ot < To; ++ot) {
                const double gv = static_cast<double>(gout[ot]) * inv;
                for (std::int64_t r = 0; r < w; ++r) grow[ot * stride + r] += static_cast<S>(gv);
            }
        }
    };
    return Tensor<S>(node);
}

/// Global average pool over all trailing dims of an [N,C,...] tensor -> [N,C].
template <typename S>
Tensor<S> global_avg_pool(const Tensor<S>& input) {
    if (input.shape().size() < 3) throw ShapeError("global_avg_pool input must be [N,C,...]");
    const std::int64_t N = input.dim(0), C = input.dim(1);
    std::int64_t spatial = 1;
    for (std::size_t i = 2; i < input.shape().size(); ++i) spatial *= input.shape()[i];
    std::vector<S> out(static_cast<std::size_t>(N * C));
    const S* in = input.value().data();
    const double inv = 1.0 / static_cast<double>(spatial);
    for (std::int64_t nc = 0; nc < N * C; ++nc) {
        double a = 0.0;
        const S* row = in + nc * spatial;
        for (std::int64_t i = 0; i < spatial; ++i) a += static_cast<double>(row[i]);
        out[static_cast<std::size_t>(nc)] = static_cast<S>(a * inv);
    }
    auto node = detail::make_op_node<S>({N, C}, std::move(out), {input.node()}, "global_avg_pool");
    auto xin = input.node();
    node->backward_fn = [xin, N, C, spatial, inv](auto& self) {
        if (!xin->requires_grad) return;
        xin->ensure_grad();
        for (std::int64_t nc = 0; nc < N * C; ++nc) {
            const double gv = static_cast<double>(self.grad[static_cast<std::size_t>(nc)]) * inv;
            S* grow = xin->grad.data() + nc * spatial;
            for (std::int64_t i = 0; i < spatial; ++i) grow[i] += static_cast<S>(gv);
        }
    };
    return Tensor<S>(node);
}

// ----- dropout -------------------------------------------------------------------

/// Inverted dropout: train mode zeroes with probability p and scales
/// survivors by 1/(1-p); eval mode is the identity. Randomness comes from
/// the caller's stream.
template <typename S>
Tensor<S> dropout(const Tensor<S>& input, double p, bool train, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout p must be in [0, 1)");
    if (!train || p == 0.0) {
        std::vector<S> out = input.value();
        auto node = detail::make_op_node<S>(input.shape(), std::move(out), {input.node()}, "dropout");
        auto xin = input.node();
        node->backward_fn = [xin](auto& self) {
            if (!xin->requires_grad) return;
            xin->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) xin->grad[i] += self.grad[i];
        };
        return Tensor<S>(node);
    }
    const double scale = 1.0 / (1.0 - p);
    std::vector<S> mask(input.value().size());
    std::vector<S> out(input.value().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const bool keep = rng.uniform() >= p;
        mask[i] = keep ? static_cast<S>(scale) : S(0);
        out[i] = static_cast<S>(static_cast<double>(input.value()[i]) * static_cast<double>(mask[i]));
    }
    auto node = detail::make_op_node<S>(input.shape(), std::move(out), {input.node()}, "dropout");
    auto xin = input.node();
    node->backward_fn = [xin, mask = std::move(mask)](auto& self) {
        if (!xin->requires_grad) return;
        xin->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            xin->grad[i] += static_cast<S>(static_cast<double>(self.grad[i]) * static_cast<double>(mask[i]));
    };
    return Tensor<S>(node);
}

// ----- linear --------------------------------------------------------------------

/// input [N,F] x weight [F,F'] + bias [F'] -> [N,F'].
template <typename S>
Tensor<S> linear(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias) {
    if (input.shape().size() != 2 || weight.shape().size() != 2)
        throw ShapeError("linear expects input [N,F] and weight [F,F']");
    const std::int64_t N = input.dim(0), F = input.dim(1), Fo = weight.dim(1);
    if (weight.dim(0) != F) throw ShapeError("linear weight rows must match input features");
    if (bias.shape() != std::vector<std::int64_t>{Fo}) throw ShapeError("linear bias must be [F']");
    std::vector<S> out(static_cast<std::size_t>(N * Fo));
    const S* in = input.value().data();
    const S* wt = weight.value().data();
    const S* bs = bias.value().data();
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t o = 0; o < Fo; ++o) {
            double a = static_cast<double>(bs[o]);
            for (std::int64_t f = 0; f < F; ++f)
                a += static_cast<double>(in[n * F + f]) * static_cast<double>(wt[f * Fo + o]);
            out[static_cast<std::size_t>(n * Fo + o)] = static_cast<S>(a);
        }
    auto node = detail::make_op_node<S>({N, Fo}, std::move(out),
                                        {input.node(), weight.node(), bias.node()}, "linear");
    auto xin = input.node();
    auto wn = weight.node();
    auto bn = bias.node();
    node->backward_fn = [xin, wn, bn, N, F, Fo](auto& self) {
        const S* g = self.grad.data();
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::int64_t o = 0; o < Fo; ++o) {
                double a = 0.0;
                for (std::int64_t n = 0; n < N; ++n) a += static_cast<double>(g[n * Fo + o]);
                bn->grad[static_cast<std::size_t>(o)] += static_cast<S>(a);
            }
        }
        if (wn->requires_grad) {
            wn->ensure_grad();
            for (std::int64_t f = 0; f < F; ++f)
                for (std::int64_t o = 0; o < Fo; ++o) {
                    double a = 0.0;
                    for (std::int64_t n = 0; n < N; ++n)
                        a += static_cast<double>(xin->value[static_cast<std::size_t>(n * F + f)]) *
                             static_cast<double>(g[n * Fo + o]);
                    wn->grad[static_cast<std::size_t>(f * Fo + o)] += static_cast<S>(a);
                }
        }
        if (xin->requires_grad) {
            xin->ensure_grad();
            for (std::int64_t n = 0; n < N; ++n)
                for (std::int64_t f = 0; f < F; ++f) {
                    double a = 0.0;
                    for (std::int64_t o = 0; o < Fo; ++o)
                        a += static_cast<double>(g[n * Fo + o]) *
                             static_cast<double>(wn->value[static_cast<std::size_t>(f * Fo + o)]);
                    xin->grad[static_cast<std::size_t>(n * F + f)] += static_cast<S>(a);
                }
        }
    };
    return Tensor<S>(node);
}

// ----- structural ops ---------------------------------------------------------------

/// Concatenate along the channel axis (dim 1); all other dims must match.
template <typename S>
Tensor<S> concat_channels(const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw ShapeError("concat_channels needs at least one tensor");
    const auto& s0 = parts[0].shape();
    if (s0.size() < 2) throw ShapeError("concat_channels needs rank >= 2");
    std::int64_t C = 0;
    for (const auto& p : parts) {
        if (p.shape().size() != s0.size()) throw ShapeError("concat_channels rank mismatch");
        for (std::size_t i = 0; i < s0.size(); ++i)
            if (i != 1 && p.shape()[i] != s0[i]) throw ShapeError("concat_channels non-channel dim mismatch");
        C += p.shape()[1];
    }
    const std::int64_t N = s0[0];
    std::int64_t spatial = 1;
    for (std::size_t i = 2; i < s0.size(); ++i) spatial *= s0[i];
    std::vector<std::int64_t> oshape = s0;
    oshape[1] = C;
    std::vector<S> out(static_cast<std::size_t>(N * C * spatial));
    std::vector<std::shared_ptr<typename Tensor<S>::Node>> parents;
    std::int64_t coff = 0;
    for (const auto& p : parts) {
        const std::int64_t pc = p.shape()[1];
        const S* in = p.value().data();
        for (std::int64_t n = 0; n < N; ++n)
            std::memcpy(out.data() + (n * C + coff) * spatial, in + n * pc * spatial,
                        static_cast<std::size_t>(pc * spatial) * sizeof(S));
        coff += pc;
        parents.push_back(p.node());
    }
    auto node = detail::make_op_node<S>(std::move(oshape), std::move(out), std::move(parents), "concat");
    auto kept = node->parents;
    node->backward_fn = [kept, N, C, spatial](auto& self) {
        std::int64_t coff = 0;
        for (auto& p : kept) {
            const std::int64_t pc = p->shape[1];
            if (p->requires_grad) {
                p->ensure_grad();
                for (std::int64_t n = 0; n < N; ++n) {
                    const S* g = self.grad.data() + (n * C + coff) * spatial;
                    S* dst = p->grad.data() + n * pc * spatial;
                    for (std::int64_t i = 0; i < pc * spatial; ++i) dst[i] += g[i];
                }
            }
            coff += pc;
        }
    };
    return Tensor<S>(node);
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& input, std::vector<std::int64_t> new_shape) {
    if (detail::shape_numel(new_shape) != input.numel())
        throw ShapeError("reshape element count mismatch: " + detail::shape_str(input.shape()) + " -> " +
                         detail::shape_str(new_shape));
    std::vector<S> out = input.value();
    auto node = detail::make_op_node<S>(std::move(new_shape), std::move(out), {input.node()}, "reshape");
    auto xin = input.node();
    node->backward_fn = [xin](auto& self) {
        if (!xin->requires_grad) return;
        xin->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) xin->grad[i] += self.grad[i];
    };
    return Tensor<S>(node);
}

/// Channel-wise gating: input [N,C,...] scaled per (n,c) by gate [N,C].
template <typename S>
Tensor<S> channel_scale(const Tensor<S>& input, const Tensor<S>& gate) {
    if (input.shape().size() < 2 || gate.shape().size() != 2)
        throw ShapeError("channel_scale expects input [N,C,...] and gate [N,C]");
    const std::int64_t N = input.dim(0), C = input.dim(1);
    if (gate.dim(0) != N || gate.dim(1) != C) throw ShapeError("channel_scale gate shape mismatch");
    std::int64_t spatial = 1;
    for (std::size_t i = 2; i < input.shape().size(); ++i) spatial *= input.shape()[i];
    std::vector<S> out(input.value().size());
    const S* in = input.value().data();
    const S* gt = gate.value().data();
    for (std::int64_t nc = 0; nc < N * C; ++nc) {
        const double gv = static_cast<double>(gt[nc]);
        const S* row = in + nc * spatial;
        S* orow = out.data() + nc * spatial;
        for (std::int64_t i = 0; i < spatial; ++i)
            orow[i] = static_cast<S>(static_cast<double>(row[i]) * gv);
    }
    auto node =
        detail::make_op_node<S>(input.shape(), std::move(out), {input.node(), gate.node()}, "channel_scale");
    auto xin = input.node();
    auto gn = gate.node();
    node->backward_fn = [xin, gn, N, C, spatial](auto& self) {
        const S* g = self.grad.data();
        if (xin->requires_grad) {
            xin->ensure_grad();
            for (std::int64_t nc = 0; nc < N * C; ++nc) {
                const double gv = static_cast<double>(gn->value[static_cast<std::size_t>(nc)]);
                const S* grow = g + nc * spatial;
                S* dst = xin->grad.data() + nc * spatial;
                for (std::int64_t i = 0; i < spatial; ++i)
                    dst[i] += static_cast<S>(static_cast<double>(grow[i]) * gv);
            }
        }
        if (gn->requires_grad) {
            gn->ensure_grad();
            for (std::int64_t nc = 0; nc < N * C; ++nc) {
                double a = 0.0;
                const S* grow = g + nc * spatial;
                const S* row = xin->value.data() + nc * spatial;
                for (std::int64_t i = 0; i < spatial; ++i)
                    a += static_cast<double>(grow[i]) * static_cast<double>(row[i]);
                gn->grad[static_cast<std::size_t>(nc)] += static_cast<S>(a);
            }
        }
    };
    return Tensor<S>(node);
}

/// Fixed-projection scalar: sum_i input[i] * weights[i]. The projection is a
/// constant, so the backward is just the weights; used to reduce arbitrary
/// outputs to a scalar for probes and finite-difference checks.
template <typename S>
Tensor<S> weighted_sum(const Tensor<S>& input, const std::vector<S>& weights) {
    if (weights.size() != input.value().size()) throw ShapeError("weighted_sum weight count mismatch");
    double a = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i)
        a += static_cast<double>(input.value()[i]) * static_cast<double>(weights[i]);
    auto node = detail::make_op_node<S>({1}, {static_cast<S>(a)}, {input.node()}, "weighted_sum");
    auto xin = input.node();
    node->backward_fn = [xin, weights](auto& self) {
        if (!xin->requires_grad) return;
        xin->ensure_grad();
        const double g = static_cast<double>(self.grad[0]);
        for (std::size_t i = 0; i < weights.size(); ++i)
            xin->grad[i] += static_cast<S>(g * static_cast<double>(weights[i]));
    };
    return Tensor<S>(node);
}

template <typename S>
Tensor<S> sum_all(const Tensor<S>& input) {
    return weighted_sum(input, std::vector<S>(input.value().size(), S(1)));
}

// ----- softmax / loss ------------------------------------------------------------

/// Row softmax of [N,C] logits, forward only (prediction path).
template <typename S>
std::vector<double> softmax_rows(const Tensor<S>& logits) {
    if (logits.shape().size() != 2) throw ShapeError("softmax_rows expects [N,C]");
    const std::int64_t N = logits.dim(0), C = logits.dim(1);
    std::vector<double> out(static_cast<std::size_t>(N * C));
    const S* in = logits.value().data();
    for (std::int64_t n = 0; n < N; ++n) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::int64_t c = 0; c < C; ++c) mx = std::max(mx, static_cast<double>(in[n * C + c]));
        double z = 0.0;
        for (std::int64_t c = 0; c < C; ++c) {
            const double e = std::exp(static_cast<double>(in[n * C + c]) - mx);
            out[static_cast<std::size_t>(n * C + c)] = e;
            z += e;
        }
        for (std::int64_t c = 0; c < C; ++c) out[static_cast<std::size_t>(n * C + c)] /= z;
    }
    return out;
}

/// Mean over the batch of -log softmax(logits)[label], log-sum-exp
/// stabilized; the backward is the fused (softmax - onehot) / N.
template <typename S>
Tensor<S> softmax_cross_entropy(const Tensor<S>& logits, const std::vector<int>& labels) {
    if (logits.shape().size() != 2) throw ShapeError("softmax_cross_entropy expects [N,C] logits");
    const std::int64_t N = logits.dim(0), C = logits.dim(1);
    if (static_cast<std::int64_t>(labels.size()) != N)
        throw ShapeError("softmax_cross_entropy label count mismatch");
    for (int l : labels)
        if (l < 0 || l >= C) throw DataError("softmax_cross_entropy label out of range");
    const S* in = logits.value().data();
    std::vector<double> probs(static_cast<std::size_t>(N * C));
    double loss = 0.0;
    for (std::int64_t n = 0; n < N; ++n) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::int64_t c = 0; c < C; ++c) mx = std::max(mx, static_cast<double>(in[n * C + c]));
        double z = 0.0;
        for (std::int64_t c = 0; c < C; ++c) {
            const double e = std::exp(static_cast<double>(in[n * C + c]) - mx);
            probs[static_cast<std::size_t>(n * C + c)] = e;
            z += e;
        }
        for (std::int64_t c = 0; c < C; ++c) probs[static_cast<std::size_t>(n * C + c)] /= z;
        loss += -(static_cast<double>(in[n * C + labels[static_cast<std::size_t>(n)]]) - mx - std::log(z));
    }
    loss /= static_cast<double>(N);
    auto node = detail::make_op_node<S>({1}, {static_cast<S>(loss)}, {logits.node()}, "softmax_cross_entropy");
    auto xin = logits.node();
    node->backward_fn = [xin, probs = std::move(probs), labels, N, C](auto& self) {
        if (!xin->requires_grad) return;
        xin->ensure_grad();
        const double g = static_cast<double>(self.grad[0]) / static_cast<double>(N);
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t c = 0; c < C; ++c) {
                const double p = probs[static_cast<std::size_t>(n * C + c)];
                const double onehot = (c == labels[static_cast<std::size_t>(n)]) ? 1.0 : 0.0;
                xin->grad[static_cast<std::size_t>(n * C + c)] += static_cast<S>(g * (p - onehot));
            }
    };
    return Tensor<S>(node);
}

// ----- parameters & Adam -----------------------------------------------------------

template <typename S>
struct Parameter {
    std::string name;
    Tensor<S> tensor;
    bool trainable = true;
    std::vector<double> m, v; // Adam moments

    Parameter() = default;
    Parameter(std::string n, Tensor<S> t, bool train = true)
        : name(std::move(n)), tensor(std::move(t)), trainable(train) {
        if (trainable) {
            m.assign(tensor.value().size(), 0.0);
            v.assign(tensor.value().size(), 0.0);
        }
    }
};

/// One Adam update on a single buffer. Weight decay is coupled (L2 added to
/// the gradient) unless `decoupled` is set, in which case it is applied
/// directly to the parameters after the adaptive step.
template <typename S>
void adam_step(std::vector<S>& param, const std::vector<S>& grad, std::vector<double>& m,
               std::vector<double>& v, std::int64_t t, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.0,
               bool decoupled = false) {
    if (param.size() != grad.size() || param.size() != m.size() || param.size() != v.size())
        throw ShapeError("adam_step buffer size mismatch");
    if (t < 1) throw ConfigError("adam_step timestep must be >= 1");
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < param.size(); ++i) {
        double g = static_cast<double>(grad[i]);
        if (!decoupled) g += weight_decay * static_cast<double>(param[i]);
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        double p = static_cast<double>(param[i]) - lr * mhat / (std::sqrt(vhat) + eps);
        if (decoupled) p -= lr * weight_decay * static_cast<double>(param[i]);
        param[i] = static_cast<S>(p);
    }
}

template <typename S>
class Adam {
  public:
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    bool decoupled = false;

    explicit Adam(std::vector<Parameter<S>*> params) : params_(std::move(params)) {}

    std::int64_t step_count() const { return t_; }
    void set_step_count(std::int64_t t) { t_ = t; }

    /// Applies one update from the accumulated gradients, then clears them.
    void step() {
        ++t_;
        for (Parameter<S>* p : params_) {
            if (!p->trainable) continue;
            adam_step(p->tensor.value(), p->tensor.grad(), p->m, p->v, t_, lr, beta1, beta2, eps,
                      weight_decay, decoupled);
            detail::ensure_finite(p->tensor.value(), "adam_step");
            p->tensor.zero_grad();
        }
    }

    void zero_grad() {
        for (Parameter<S>* p : params_) p->tensor.zero_grad();
    }

    const std::vector<Parameter<S>*>& params() const { return params_; }

  private:
    std::vector<Parameter<S>*> params_;
    std::int64_t t_ = 0;
};

// ----- checkpoint I/O ---------------------------------------------------------------
//
// Model checkpoint: magic "WFM1", u32 entry count, per entry u32 name length,
// name bytes, u32 rank, u32 dims[rank], float32 payload. Optimizer state is
// optionally appended with the same record layout under magic "WFO1".

struct NamedBuffer {
    std::string name;
    std::vector<std::int64_t> shape;
    std::vector<float> data;
};

namespace detail {

inline void put_named_section(std::string& out, const char* magic, const std::vector<NamedBuffer>& entries) {
    out += magic;
    put_u32(out, static_cast<std::uint32_t>(entries.size()));
    for (const NamedBuffer& e : entries) {
        put_u32(out, static_cast<std::uint32_t>(e.name.size()));
        out += e.name;
        put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
        for (std::int64_t d : e.shape) put_u32(out, static_cast<std::uint32_t>(d));
        const std::size_t bytes = e.data.size() * sizeof(float);
        const std::size_t off = out.size();
        out.resize(off + bytes);
        std::memcpy(out.data() + off, e.data.data(), bytes);
    }
}

inline std::vector<NamedBuffer> get_named_section(const std::string& in, std::size_t& pos,
                                                  const char* magic, const std::string& path) {
    if (pos + 4 > in.size() || in.compare(pos, 4, magic) != 0)
        throw ParseError(path + ": bad checkpoint magic (want " + magic + ")");
    pos += 4;
    const std::uint32_t count = get_u32(in, pos, "entry count");
    std::vector<NamedBuffer> entries;
    entries.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedBuffer e;
        const std::uint32_t nlen = get_u32(in, pos, "name length");
        if (pos + nlen > in.size()) throw ParseError(path + ": checkpoint truncated reading name");
        e.name.assign(in.data() + pos, nlen);
        pos += nlen;
        const std::uint32_t rank = get_u32(in, pos, "rank");
        std::uint64_t n = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            const std::uint32_t d = get_u32(in, pos, "dimension");
            e.shape.push_back(static_cast<std::int64_t>(d));
            n *= d;
        }
        const std::size_t bytes = static_cast<std::size_t>(n) * sizeof(float);
        if (pos + bytes > in.size()) throw ParseError(path + ": checkpoint truncated reading payload");
        e.data.resize(static_cast<std::size_t>(n));
        std::memcpy(e.data.data(), in.data() + pos, bytes);
        pos += bytes;
        entries.push_back(std::move(e));
    }
    return entries;
}

} // namespace detail

/// Writes model buffers (and, when non-empty, optimizer buffers) atomically:
/// temp file in the same directory, then rename.
inline void write_checkpoint(const std::string& path, const std::vector<NamedBuffer>& model,
                             const std::vector<NamedBuffer>& optimizer = {}) {
    std::string out;
    detail::put_named_section(out, "WFM1", model);
    if (!optimizer.empty()) detail::put_named_section(out, "WFO1", optimizer);
    const std::string tmp = path + ".tmp";
    write_file(tmp, out);
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

struct Checkpoint {
    std::vector<NamedBuffer> model;
    std::vector<NamedBuffer> optimizer; // empty when absent
};

inline Checkpoint read_checkpoint(const std::string& path) {
    const std::string in = read_file(path);
    std::size_t pos = 0;
    Checkpoint ck;
    ck.model = detail::get_named_section(in, pos, "WFM1", path);
    if (pos < in.size()) ck.optimizer = detail::get_named_section(in, pos, "WFO1", path);
    return ck;
}

} // namespace wfkit
