#include "bdg/autograd.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace bdg {

namespace {

thread_local FlopTally* active_tally = nullptr;

template <typename T>
bool wants_grad(const std::shared_ptr<Node<T>>& n) {
    return n && n->requires_grad;
}

void count(std::int64_t flops) { FlopTally::add(flops); }

}  // namespace

FlopTally::FlopTally() : previous_(active_tally) { active_tally = this; }
FlopTally::~FlopTally() { active_tally = previous_; }
void FlopTally::add(std::int64_t flops) {
    if (active_tally != nullptr) active_tally->total_ += flops;
}

template <typename T>
void backward(const Var<T>& root) {
    if (!root.defined() || root.value().numel() != 1) {
        throw std::invalid_argument("backward: root must be a single-element value");
    }
    if (!root.requires_grad()) return;
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node().get(), 0}};
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node<T>* child = node->inputs[next++].get();
            if (child != nullptr && child->requires_grad && seen.insert(child).second) {
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root.node()->grad_buffer()[0] += T{1};
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (node->backward && !node->grad.empty()) node->backward(*node);
    }
}

namespace ops {

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>* bias, const ConvGeometry& geom) {
    const Tensor<T>& in = x.value();
    const Tensor<T>& w = weight.value();
    Tensor<T> out = kernels::conv2d_forward(in, w, bias ? bias->value().data() : nullptr, geom);
    const std::int64_t outputs = static_cast<std::int64_t>(out.numel());
    count(2 * outputs * w.c() * w.h() * w.w() + (bias ? outputs : 0));
    std::vector<std::shared_ptr<Node<T>>> inputs{x.node(), weight.node()};
    if (bias) inputs.push_back(bias->node());
    return make_node<T>(std::move(out), std::move(inputs), [geom](Node<T>& self) {
        auto& xin = self.inputs[0];
        auto& win = self.inputs[1];
        Node<T>* bin = self.inputs.size() > 2 ? self.inputs[2].get() : nullptr;
        kernels::conv2d_backward(xin->value, win->value, self.grad, geom,
                                 wants_grad(xin) ? &xin->grad_buffer() : nullptr,
                                 wants_grad(win) ? &win->grad_buffer() : nullptr,
                                 (bin && bin->requires_grad) ? bin->grad_buffer().data() : nullptr);
    });
}

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, bool training, T momentum, T eps) {
    const Tensor<T>& in = x.value();
    const int n = in.n(), c = in.c();
    const std::size_t plane = in.shape().plane();
    const double m = static_cast<double>(n) * plane;
    Tensor<T> xhat(in.shape());
    Tensor<T> out(in.shape());
    std::vector<T> invstd(c);
    const T* g = gamma.value().data();
    const T* b = beta.value().data();
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c; ++ch) {
        T mean, var;
        if (training) {
            double s = 0;
            for (int i = 0; i < n; ++i) {
                const T* p = in.plane(i, ch);
                for (std::size_t k = 0; k < plane; ++k) s += p[k];
            }
            mean = static_cast<T>(s / m);
            double sq = 0;
            for (int i = 0; i < n; ++i) {
                const T* p = in.plane(i, ch);
                for (std::size_t k = 0; k < plane; ++k) {
                    const double d = p[k] - mean;
                    sq += d * d;
                }
            }
            var = static_cast<T>(sq / m);
            const T unbiased = m > 1 ? static_cast<T>(sq / (m - 1)) : var;
            running_mean[ch] = (T(1) - momentum) * running_mean[ch] + momentum * mean;
            running_var[ch] = (T(1) - momentum) * running_var[ch] + momentum * unbiased;
        } else {
            mean = running_mean[ch];
            var = running_var[ch];
        }
        const T is = T(1) / std::sqrt(var + eps);
        invstd[ch] = is;
        for (int i = 0; i < n; ++i) {
            const T* p = in.plane(i, ch);
            T* xh = xhat.plane(i, ch);
            T* o = out.plane(i, ch);
            for (std::size_t k = 0; k < plane; ++k) {
                xh[k] = (p[k] - mean) * is;
                o[k] = g[ch] * xh[k] + b[ch];
            }
        }
    }
    count(2 * static_cast<std::int64_t>(in.numel()));
    return make_node<T>(
        std::move(out), {x.node(), gamma.node(), beta.node()},
        [xhat = std::move(xhat), invstd = std::move(invstd), training](Node<T>& self) {
            const Tensor<T>& gy = self.grad;
            const int n = gy.n(), c = gy.c();
            const std::size_t plane = gy.shape().plane();
            const T m = static_cast<T>(static_cast<double>(n) * plane);
            auto& xin = self.inputs[0];
            auto& gin = self.inputs[1];
            auto& bin = self.inputs[2];
            const T* gam = gin->value.data();
            Tensor<T>* gx = wants_grad(xin) ? &xin->grad_buffer() : nullptr;
            T* ggam = wants_grad(gin) ? gin->grad_buffer().data() : nullptr;
            T* gbet = wants_grad(bin) ? bin->grad_buffer().data() : nullptr;
#pragma omp parallel for schedule(static)
            for (int ch = 0; ch < c; ++ch) {
                T sum_dy{0}, sum_dy_xhat{0};
                for (int i = 0; i < n; ++i) {
                    const T* d = gy.plane(i, ch);
                    const T* xh = xhat.plane(i, ch);
                    for (std::size_t k = 0; k < plane; ++k) {
                        sum_dy += d[k];
                        sum_dy_xhat += d[k] * xh[k];
                    }
                }
                if (ggam) ggam[ch] += sum_dy_xhat;
                if (gbet) gbet[ch] += sum_dy;
                if (!gx) continue;
                const T scale = gam[ch] * invstd[ch];
                for (int i = 0; i < n; ++i) {
                    const T* d = gy.plane(i, ch);
                    const T* xh = xhat.plane(i, ch);
                    T* o = gx->plane(i, ch);
                    if (training) {
                        for (std::size_t k = 0; k < plane; ++k) {
                            o[k] += scale * (d[k] - (sum_dy + xh[k] * sum_dy_xhat) / m);
                        }
                    } else {
                        for (std::size_t k = 0; k < plane; ++k) o[k] += scale * d[k];
                    }
                }
            }
        });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
    const Tensor<T>& in = x.value();
    Tensor<T> out(in.shape());
    const std::size_t count_elems = in.numel();
    const T* src = in.data();
    T* dst = out.data();
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < count_elems; ++i) dst[i] = src[i] > T{0} ? src[i] : T{0};
    count(static_cast<std::int64_t>(count_elems));
    return make_node<T>(std::move(out), {x.node()}, [](Node<T>& self) {
        Tensor<T>& gx = self.inputs[0]->grad_buffer();
        const T* v = self.value.data();
        const T* g = self.grad.data();
        const std::size_t len = self.value.numel();
        for (std::size_t i = 0; i < len; ++i) {
            if (v[i] > T{0}) gx[i] += g[i];
        }
    });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
    const Tensor<T>& in = x.value();
    Tensor<T> out(in.shape());
    for (std::size_t i = 0; i < in.numel(); ++i) {
        const T v = in[i];
        if (v >= T{0}) {
            out[i] = T(1) / (T(1) + std::exp(-v));
        } else {
            const T e = std::exp(v);
            out[i] = e / (T(1) + e);
        }
    }
    count(static_cast<std::int64_t>(in.numel()));
    return make_node<T>(std::move(out), {x.node()}, [](Node<T>& self) {
        Tensor<T>& gx = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < self.value.numel(); ++i) {
            const T s = self.value[i];
            gx[i] += self.grad[i] * s * (T(1) - s);
        }
    });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    return add(std::vector<Var<T>>{a, b});
}

template <typename T>
Var<T> add(const std::vector<Var<T>>& terms) {
    if (terms.empty()) throw std::invalid_argument("add: no terms");
    Tensor<T> out = terms[0].value();
    for (std::size_t t = 1; t < terms.size(); ++t) {
        const Tensor<T>& v = terms[t].value();
        if (v.shape() != out.shape()) {
            throw std::invalid_argument("add: shape mismatch " + out.shape().str() + " vs " + v.shape().str());
        }
        T* o = out.data();
        const T* s = v.data();
        const std::size_t len = out.numel();
        for (std::size_t i = 0; i < len; ++i) o[i] += s[i];
    }
    count(static_cast<std::int64_t>(terms.size() - 1) * static_cast<std::int64_t>(out.numel()));
    std::vector<std::shared_ptr<Node<T>>> inputs;
    for (const auto& t : terms) inputs.push_back(t.node());
    return make_node<T>(std::move(out), std::move(inputs), [](Node<T>& self) {
        for (auto& in : self.inputs) {
            if (!wants_grad(in)) continue;
            T* g = in->grad_buffer().data();
            const T* s = self.grad.data();
            const std::size_t len = self.grad.numel();
            for (std::size_t i = 0; i < len; ++i) g[i] += s[i];
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& x, const Var<T>& gate) {
    const Tensor<T>& xv = x.value();
    const Tensor<T>& gv = gate.value();
    const bool broadcast = gv.c() == 1 && xv.c() != 1;
    if (gv.n() != xv.n() || gv.h() != xv.h() || gv.w() != xv.w() || (!broadcast && gv.c() != xv.c())) {
        throw std::invalid_argument("mul: gate " + gv.shape().str() + " incompatible with " + xv.shape().str());
    }
    Tensor<T> out(xv.shape());
    const std::size_t plane = xv.shape().plane();
    for (int n = 0; n < xv.n(); ++n) {
        for (int c = 0; c < xv.c(); ++c) {
            const T* a = xv.plane(n, c);
            const T* g = gv.plane(n, broadcast ? 0 : c);
            T* o = out.plane(n, c);
            for (std::size_t k = 0; k < plane; ++k) o[k] = a[k] * g[k];
        }
    }
    count(static_cast<std::int64_t>(out.numel()));
    return make_node<T>(std::move(out), {x.node(), gate.node()}, [broadcast](Node<T>& self) {
        auto& xin = self.inputs[0];
        auto& gin = self.inputs[1];
        const Tensor<T>& xv = xin->value;
        const Tensor<T>& gv = gin->value;
        const std::size_t plane = xv.shape().plane();
        Tensor<T>* gx = wants_grad(xin) ? &xin->grad_buffer() : nullptr;
        Tensor<T>* gg = wants_grad(gin) ? &gin->grad_buffer() : nullptr;
        for (int n = 0; n < xv.n(); ++n) {
            for (int c = 0; c < xv.c(); ++c) {
                const int gc = broadcast ? 0 : c;
                const T* d = self.grad.plane(n, c);
                if (gx) {
                    const T* g = gv.plane(n, gc);
                    T* o = gx->plane(n, c);
                    for (std::size_t k = 0; k < plane; ++k) o[k] += d[k] * g[k];
                }
                if (gg) {
                    const T* a = xv.plane(n, c);
                    T* o = gg->plane(n, gc);
                    for (std::size_t k = 0; k < plane; ++k) o[k] += d[k] * a[k];
                }
            }
        }
    });
}

template <typename T>
Var<T> avg_pool2(const Var<T>& x) {
    Tensor<T> out = kernels::avg_pool2_forward(x.value());
    count(8 * static_cast<std::int64_t>(out.numel()));
    return make_node<T>(std::move(out), {x.node()}, [](Node<T>& self) {
        kernels::avg_pool2_backward(self.grad, self.inputs[0]->grad_buffer());
    });
}

template <typename T>
Var<T> resize_bilinear(const Var<T>& x, int out_h, int out_w) {
    if (x.value().h() == out_h && x.value().w() == out_w) return x;
    Tensor<T> out = kernels::resize_bilinear_forward(x.value(), out_h, out_w);
    count(8 * static_cast<std::int64_t>(out.numel()));
    return make_node<T>(std::move(out), {x.node()}, [](Node<T>& self) {
        kernels::resize_bilinear_backward(self.grad, self.inputs[0]->grad_buffer());
    });
}

template <typename T>
Var<T> upsample(const Var<T>& x, int factor) {
    return resize_bilinear(x, x.value().h() * factor, x.value().w() * factor);
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat: no parts");
    Shape s = parts[0].shape();
    int channels = 0;
    for (const auto& p : parts) {
        if (p.shape().n != s.n || p.shape().h != s.h || p.shape().w != s.w) {
            throw std::invalid_argument("concat: spatial mismatch");
        }
        channels += p.shape().c;
    }
    Tensor<T> out(Shape{s.n, channels, s.h, s.w});
    const std::size_t plane = s.plane();
    for (int n = 0; n < s.n; ++n) {
        T* dst = out.sample(n);
        for (const auto& p : parts) {
            const std::size_t len = plane * p.shape().c;
            std::copy(p.value().sample(n), p.value().sample(n) + len, dst);
            dst += len;
        }
    }
    std::vector<std::shared_ptr<Node<T>>> inputs;
    for (const auto& p : parts) inputs.push_back(p.node());
    return make_node<T>(std::move(out), std::move(inputs), [](Node<T>& self) {
        const std::size_t plane = self.value.shape().plane();
        for (int n = 0; n < self.value.n(); ++n) {
            const T* src = self.grad.sample(n);
            for (auto& in : self.inputs) {
                const std::size_t len = plane * in->value.c();
                if (wants_grad(in)) {
                    T* dst = in->grad_buffer().sample(n);
                    for (std::size_t k = 0; k < len; ++k) dst[k] += src[k];
                }
                src += len;
            }
        }
    });
}

template <typename T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& weights) {
    if (weights.shape() != x.shape()) throw std::invalid_argument("weighted_sum: shape mismatch");
    T acc{0};
    for (std::size_t i = 0; i < weights.numel(); ++i) acc += x.value()[i] * weights[i];
    return make_node<T>(Tensor<T>(Shape{1, 1, 1, 1}, acc), {x.node()}, [weights](Node<T>& self) {
        Tensor<T>& g = self.inputs[0]->grad_buffer();
        const T d = self.grad[0];
        for (std::size_t i = 0; i < weights.numel(); ++i) g[i] += d * weights[i];
    });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
    return weighted_sum(x, Tensor<T>(x.shape(), T{1}));
}

}  // namespace ops

#define BDG_INSTANTIATE(T)                                                                          \
    template void backward<T>(const Var<T>&);                                                       \
    template Var<T> ops::conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>*, const ConvGeometry&); \
    template Var<T> ops::batch_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, Tensor<T>&,      \
                                       Tensor<T>&, bool, T, T);                                      \
    template Var<T> ops::relu<T>(const Var<T>&);                                                    \
    template Var<T> ops::sigmoid<T>(const Var<T>&);                                                 \
    template Var<T> ops::add<T>(const Var<T>&, const Var<T>&);                                      \
    template Var<T> ops::add<T>(const std::vector<Var<T>>&);                                        \
    template Var<T> ops::mul<T>(const Var<T>&, const Var<T>&);                                      \
    template Var<T> ops::avg_pool2<T>(const Var<T>&);                                               \
    template Var<T> ops::resize_bilinear<T>(const Var<T>&, int, int);                               \
    template Var<T> ops::upsample<T>(const Var<T>&, int);                                           \
    template Var<T> ops::concat_channels<T>(const std::vector<Var<T>>&);                            \
    template Var<T> ops::weighted_sum<T>(const Var<T>&, const Tensor<T>&);                          \
    template Var<T> ops::sum<T>(const Var<T>&);

BDG_INSTANTIATE(float)
BDG_INSTANTIATE(double)
#undef BDG_INSTANTIATE

}  // namespace bdg
