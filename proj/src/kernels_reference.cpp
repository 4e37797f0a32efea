#include "bdg/kernels.hpp"

#include <algorithm>

namespace bdg::kernels::reference {

template <typename T>
void gemm(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            T acc = accumulate ? c[static_cast<std::size_t>(i) * n + j] : T{0};
            for (int p = 0; p < k; ++p) {
                acc += a[static_cast<std::size_t>(i) * k + p] * b[static_cast<std::size_t>(p) * n + j];
            }
            c[static_cast<std::size_t>(i) * n + j] = acc;
        }
    }
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weight, const T* bias,
                         const ConvGeometry& g) {
    const int oh = g.out_h(input.h()), ow = g.out_w(input.w());
    Tensor<T> out(Shape{input.n(), weight.n(), oh, ow});
    for (int s = 0; s < input.n(); ++s) {
        for (int co = 0; co < weight.n(); ++co) {
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    T acc = bias != nullptr ? bias[co] : T{0};
                    for (int ci = 0; ci < input.c(); ++ci) {
                        for (int ky = 0; ky < g.kernel_h; ++ky) {
                            const int iy = oy * g.stride - g.pad_h + ky * g.dilation;
                            if (iy < 0 || iy >= input.h()) continue;
                            for (int kx = 0; kx < g.kernel_w; ++kx) {
                                const int ix = ox * g.stride - g.pad_w + kx * g.dilation;
                                if (ix < 0 || ix >= input.w()) continue;
                                acc += weight.at(co, ci, ky, kx) * input.at(s, ci, iy, ix);
                            }
                        }
                    }
                    out.at(s, co, oy, ox) = acc;
                }
            }
        }
    }
    return out;
}

template <typename T>
void conv2d_backward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& grad_out,
                     const ConvGeometry& g, Tensor<T>* grad_input, Tensor<T>* grad_weight,
                     T* grad_bias) {
    for (int s = 0; s < input.n(); ++s) {
        for (int co = 0; co < weight.n(); ++co) {
            for (int oy = 0; oy < grad_out.h(); ++oy) {
                for (int ox = 0; ox < grad_out.w(); ++ox) {
                    const T go = grad_out.at(s, co, oy, ox);
                    if (grad_bias != nullptr) grad_bias[co] += go;
                    for (int ci = 0; ci < input.c(); ++ci) {
                        for (int ky = 0; ky < g.kernel_h; ++ky) {
                            const int iy = oy * g.stride - g.pad_h + ky * g.dilation;
                            if (iy < 0 || iy >= input.h()) continue;
                            for (int kx = 0; kx < g.kernel_w; ++kx) {
                                const int ix = ox * g.stride - g.pad_w + kx * g.dilation;
                                if (ix < 0 || ix >= input.w()) continue;
                                if (grad_weight != nullptr) {
                                    grad_weight->at(co, ci, ky, kx) += go * input.at(s, ci, iy, ix);
                                }
                                if (grad_input != nullptr) {
                                    grad_input->at(s, ci, iy, ix) += go * weight.at(co, ci, ky, kx);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
Tensor<T> resize_bilinear_forward(const Tensor<T>& input, int out_h, int out_w) {
    Tensor<T> out(Shape{input.n(), input.c(), out_h, out_w});
    const double sy = static_cast<double>(input.h()) / out_h;
    const double sx = static_cast<double>(input.w()) / out_w;
    for (int s = 0; s < input.n(); ++s) {
        for (int c = 0; c < input.c(); ++c) {
            for (int y = 0; y < out_h; ++y) {
                const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
                const int y0 = std::min(static_cast<int>(fy), input.h() - 1);
                const int y1 = std::min(y0 + 1, input.h() - 1);
                const double wy = fy - y0;
                for (int x = 0; x < out_w; ++x) {
                    const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
                    const int x0 = std::min(static_cast<int>(fx), input.w() - 1);
                    const int x1 = std::min(x0 + 1, input.w() - 1);
                    const double wx = fx - x0;
                    const double v = (1 - wy) * ((1 - wx) * input.at(s, c, y0, x0) + wx * input.at(s, c, y0, x1)) +
                                     wy * ((1 - wx) * input.at(s, c, y1, x0) + wx * input.at(s, c, y1, x1));
                    out.at(s, c, y, x) = static_cast<T>(v);
                }
            }
        }
    }
    return out;
}

#define BDG_INSTANTIATE(T)                                                                          \
    template void gemm<T>(int, int, int, const T*, const T*, T*, bool);                           \
    template Tensor<T> conv2d_forward<T>(const Tensor<T>&, const Tensor<T>&, const T*,              \
                                         const ConvGeometry&);                                      \
    template void conv2d_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                     const ConvGeometry&, Tensor<T>*, Tensor<T>*, T*);              \
    template Tensor<T> resize_bilinear_forward<T>(const Tensor<T>&, int, int);

BDG_INSTANTIATE(float)
BDG_INSTANTIATE(double)
#undef BDG_INSTANTIATE

}  // namespace bdg::kernels::reference
