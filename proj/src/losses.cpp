#include "bdg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace bdg {

namespace {

template <typename T>
void require_same(const Shape& a, const Shape& b, const char* what) {
    if (a != b) throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
}

template <typename T>
Var<T> scalar(T v) {
    return Var<T>(Tensor<T>(Shape{1, 1, 1, 1}, v), false);
}

/// Mirror index including the edge sample: -1 -> 0, n -> n-1.
int reflect(int i, int n) {
    const int period = 2 * n;
    int m = i % period;
    if (m < 0) m += period;
    return m < n ? m : period - 1 - m;
}

/// Box mean of a single plane with mirror padding, accumulated in double.
std::vector<double> box_mean(const std::vector<double>& src, int h, int w, int k) {
    const int r = k / 2;
    std::vector<double> rows(src.size());
    for (int y = 0; y < h; ++y) {
        const double* in = src.data() + static_cast<std::size_t>(y) * w;
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int d = -r; d <= r; ++d) acc += in[reflect(x + d, w)];
            rows[static_cast<std::size_t>(y) * w + x] = acc;
        }
    }
    std::vector<double> out(src.size());
    const double norm = 1.0 / (static_cast<double>(k) * k);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int d = -r; d <= r; ++d) acc += rows[static_cast<std::size_t>(reflect(y + d, h)) * w + x];
            out[static_cast<std::size_t>(y) * w + x] = acc * norm;
        }
    }
    return out;
}

}  // namespace

void LossConfig::validate() const {
    if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
    if (weight_kernel < 1 || weight_kernel % 2 == 0) throw std::invalid_argument("weight_kernel must be odd");
    if (!std::isfinite(weight_gain)) throw std::invalid_argument("weight_gain must be finite");
}

template <typename T>
Tensor<T> weight_map(const Tensor<T>& gt, const LossConfig& cfg) {
    cfg.validate();
    if (gt.c() != 1) throw std::invalid_argument("weight_map: expected a single-channel mask");
    Tensor<T> w(gt.shape());
    const int h = gt.h(), wd = gt.w();
#pragma omp parallel for schedule(static)
    for (int n = 0; n < gt.n(); ++n) {
        const T* g = gt.plane(n, 0);
        std::vector<double> plane(g, g + gt.shape().plane());
        const std::vector<double> mean = box_mean(plane, h, wd, cfg.weight_kernel);
        T* o = w.plane(n, 0);
        for (std::size_t i = 0; i < plane.size(); ++i) {
            o[i] = static_cast<T>(1.0 + cfg.weight_gain * std::abs(mean[i] - plane[i]));
        }
    }
    return w;
}

template <typename T>
Var<T> l_bdm(const Var<T>& pred, const Tensor<T>& ideal, const LossConfig& cfg) {
    require_same<T>(pred.shape(), ideal.shape(), "l_bdm");
    const Tensor<T>& p = pred.value();
    const std::size_t total = p.numel();
    const std::size_t per_image = total / static_cast<std::size_t>(p.n());
    // Mean form divides by every pixel; sum form by the batch size only.
    const T scale = cfg.bdm_sum ? T(1) / static_cast<T>(p.n()) : T(1) / static_cast<T>(total);
    const T lambda = static_cast<T>(cfg.lambda);
    std::vector<T> keep(total);
    T acc{0};
    for (int n = 0; n < p.n(); ++n) {
        T image{0};
        for (std::size_t i = n * per_image; i < (n + 1) * per_image; ++i) {
            const T r = p[i] - ideal[i];
            const T sq = r * r;
            keep[i] = sq > lambda ? r : T{0};
            if (sq > lambda) image += sq;
        }
        acc += image;
    }
    return make_node<T>(Tensor<T>(Shape{1, 1, 1, 1}, acc * scale), {pred.node()},
                        [keep = std::move(keep), scale](Node<T>& self) {
                            Tensor<T>& g = self.inputs[0]->grad_buffer();
                            const T d = self.grad[0] * scale * T(2);
                            for (std::size_t i = 0; i < keep.size(); ++i) g[i] += d * keep[i];
                        });
}

template <typename T>
Var<T> l_wbce_logits(const Var<T>& logits, const Tensor<T>& gt, const Tensor<T>& w, bool unnormalized) {
    require_same<T>(logits.shape(), gt.shape(), "l_wbce");
    require_same<T>(logits.shape(), w.shape(), "l_wbce");
    const Tensor<T>& x = logits.value();
    const int batch = x.n();
    const std::size_t per_image = x.numel() / batch;
    std::vector<T> denom(batch);
    T acc{0};
    for (int n = 0; n < batch; ++n) {
        T num{0}, wsum{0};
        for (std::size_t i = n * per_image; i < (n + 1) * per_image; ++i) {
            const T v = x[i];
            const T l = std::max(v, T{0}) - v * gt[i] + std::log1p(std::exp(-std::abs(v)));
            num += w[i] * l;
            wsum += w[i];
        }
        denom[n] = unnormalized ? T(batch) : T(batch) * wsum;
        if (denom[n] > T{0}) acc += num / (unnormalized ? T(1) : wsum);
    }
    acc /= static_cast<T>(batch);
    return make_node<T>(Tensor<T>(Shape{1, 1, 1, 1}, acc), {logits.node()},
                        [gt, w, denom = std::move(denom), per_image](Node<T>& self) {
                            const Tensor<T>& xv = self.inputs[0]->value;
                            Tensor<T>& g = self.inputs[0]->grad_buffer();
                            for (std::size_t n = 0; n < denom.size(); ++n) {
                                if (!(denom[n] > T{0})) continue;
                                const T d = self.grad[0] / denom[n];
                                for (std::size_t i = n * per_image; i < (n + 1) * per_image; ++i) {
                                    const T v = xv[i];
                                    const T s = v >= T{0} ? T(1) / (T(1) + std::exp(-v))
                                                          : std::exp(v) / (T(1) + std::exp(v));
                                    g[i] += d * w[i] * (s - gt[i]);
                                }
                            }
                        });
}

template <typename T>
Var<T> l_wbce(const Var<T>& prob, const Tensor<T>& gt, const Tensor<T>& w, bool unnormalized) {
    require_same<T>(prob.shape(), gt.shape(), "l_wbce");
    require_same<T>(prob.shape(), w.shape(), "l_wbce");
    const Tensor<T>& s = prob.value();
    const int batch = s.n();
    const std::size_t per_image = s.numel() / batch;
    const T lo = static_cast<T>(kProbClamp), hi = T(1) - static_cast<T>(kProbClamp);
    std::vector<T> denom(batch);
    T acc{0};
    for (int n = 0; n < batch; ++n) {
        T num{0}, wsum{0};
        for (std::size_t i = n * per_image; i < (n + 1) * per_image; ++i) {
            const T p = std::clamp(s[i], lo, hi);
            num -= w[i] * (gt[i] * std::log(p) + (T(1) - gt[i]) * std::log(T(1) - p));
            wsum += w[i];
        }
        denom[n] = unnormalized ? T(batch) : T(batch) * wsum;
        if (denom[n] > T{0}) acc += num / (unnormalized ? T(1) : wsum);
    }
    acc /= static_cast<T>(batch);
    return make_node<T>(Tensor<T>(Shape{1, 1, 1, 1}, acc), {prob.node()},
                        [gt, w, denom = std::move(denom), per_image, lo, hi](Node<T>& self) {
                            const Tensor<T>& sv = self.inputs[0]->value;
                            Tensor<T>& g = self.inputs[0]->grad_buffer();
                            for (std::size_t n = 0; n < denom.size(); ++n) {
                                if (!(denom[n] > T{0})) continue;
                                const T d = self.grad[0] / denom[n];
                                for (std::size_t i = n * per_image; i < (n + 1) * per_image; ++i) {
                                    const T p = sv[i];
                                    if (p < lo || p > hi) continue;
                                    g[i] -= d * w[i] * (gt[i] / p - (T(1) - gt[i]) / (T(1) - p));
                                }
                            }
                        });
}

template <typename T>
Var<T> l_wiou(const Var<T>& prob, const Tensor<T>& gt, const Tensor<T>& w) {
    require_same<T>(prob.shape(), gt.shape(), "l_wiou");
    require_same<T>(prob.shape(), w.shape(), "l_wiou");
    const Tensor<T>& s = prob.value();
    const int batch = s.n();
    const std::size_t per_image = s.numel() / batch;
    std::vector<T> inter(batch), uni(batch);
    T acc{0};
    for (int n = 0; n < batch; ++n) {
        T a{0}, b{0};
        for (std::size_t i = n * per_image; i < (n + 1) * per_image; ++i) {
            a += w[i] * gt[i] * s[i];
            b += w[i] * (gt[i] + s[i] - gt[i] * s[i]);
        }
        inter[n] = a;
        uni[n] = b;
        if (b != T{0}) acc += T(1) - a / b;
    }
    acc /= static_cast<T>(batch);
    return make_node<T>(Tensor<T>(Shape{1, 1, 1, 1}, acc), {prob.node()},
                        [gt, w, inter = std::move(inter), uni = std::move(uni), per_image](Node<T>& self) {
                            Tensor<T>& g = self.inputs[0]->grad_buffer();
                            const T d = self.grad[0] / static_cast<T>(inter.size());
                            for (std::size_t n = 0; n < inter.size(); ++n) {
                                const T u = uni[n];
                                if (u == T{0}) continue;
                                const T in = inter[n];
                                for (std::size_t i = n * per_image; i < (n + 1) * per_image; ++i) {
                                    const T dinter = w[i] * gt[i];
                                    const T dunion = w[i] * (T(1) - gt[i]);
                                    g[i] -= d * (dinter * u - in * dunion) / (u * u);
                                }
                            }
                        });
}

template <typename T>
LossTerms<T> l_total(const SegmentationOutput<T>& pred, const Tensor<T>& gt, const Tensor<T>& ideal_bdm,
                     const LossConfig& cfg) {
    const Tensor<T> w = weight_map(gt, cfg);
    LossTerms<T> out;
    out.bdm = pred.has_bdm ? l_bdm(pred.bdm, ideal_bdm, cfg) : scalar<T>(T{0});
    out.wbce = l_wbce_logits(pred.logits, gt, w, cfg.wbce_unnormalized);
    out.wiou = l_wiou(ops::sigmoid(pred.logits), gt, w);
    out.total = ops::add(ops::add(out.bdm, out.wbce), out.wiou);
    return out;
}

#define BDG_INSTANTIATE(T)                                                                              \
    template Tensor<T> weight_map<T>(const Tensor<T>&, const LossConfig&);                              \
    template Var<T> l_bdm<T>(const Var<T>&, const Tensor<T>&, const LossConfig&);                       \
    template Var<T> l_wbce_logits<T>(const Var<T>&, const Tensor<T>&, const Tensor<T>&, bool);          \
    template Var<T> l_wbce<T>(const Var<T>&, const Tensor<T>&, const Tensor<T>&, bool);                 \
    template Var<T> l_wiou<T>(const Var<T>&, const Tensor<T>&, const Tensor<T>&);                       \
    template LossTerms<T> l_total<T>(const SegmentationOutput<T>&, const Tensor<T>&, const Tensor<T>&, \
                                     const LossConfig&);

BDG_INSTANTIATE(float)
BDG_INSTANTIATE(double)
#undef BDG_INSTANTIATE

}  // namespace bdg
