#include "bdg/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace bdg::kernels {

namespace {

#if defined(__AVX512F__)
constexpr int kVecBytes = 64;
#else
constexpr int kVecBytes = 32;
#endif

template <typename T>
struct VecOf {
    typedef T type __attribute__((vector_size(kVecBytes)));
};
template <typename T>
using Vec = typename VecOf<T>::type;

template <typename T>
constexpr int kLanes = kVecBytes / static_cast<int>(sizeof(T));

// Register tile: kMR rows by two vectors. Packed panels keep both operands
// contiguous in the inner loop.
constexpr int kMR = 6;
template <typename T>
constexpr int kNR = 2 * kLanes<T>;
constexpr int kKC = 256;
constexpr int kMC = 120;
constexpr int kNC = 1024;

template <typename T>
inline Vec<T> load(const T* p) {
    Vec<T> v;
    __builtin_memcpy(&v, p, sizeof(v));
    return v;
}

template <typename T, typename V>
inline void store(T* p, const V& v) {
    __builtin_memcpy(p, &v, sizeof(v));
}

/// c[0:mr, 0:nr] += ap^T * bp over kc steps. ap holds kMR values per step,
/// bp holds kNR values per step (both zero-padded).
template <typename T>
inline void micro_kernel(int kc, const T* __restrict ap, const T* __restrict bp, T* __restrict c, int ldc,
                         int mr, int nr) {
    constexpr int L = kLanes<T>;
    constexpr int NR = kNR<T>;
    Vec<T> acc[kMR][2] = {};
    for (int p = 0; p < kc; ++p) {
        const Vec<T> b0 = load(bp);
        const Vec<T> b1 = load(bp + L);
#pragma GCC unroll 6
        for (int r = 0; r < kMR; ++r) {
            const T av = ap[r];
            acc[r][0] += b0 * av;
            acc[r][1] += b1 * av;
        }
        ap += kMR;
        bp += NR;
    }
    if (mr == kMR && nr == NR) {
        for (int r = 0; r < kMR; ++r) {
            T* cr = c + static_cast<std::size_t>(r) * ldc;
            store(cr, load(cr) + acc[r][0]);
            store(cr + L, load(cr + L) + acc[r][1]);
        }
        return;
    }
    alignas(64) T tile[kMR][NR];
    for (int r = 0; r < kMR; ++r) {
        store(&tile[r][0], acc[r][0]);
        store(&tile[r][L], acc[r][1]);
    }
    for (int r = 0; r < mr; ++r) {
        T* cr = c + static_cast<std::size_t>(r) * ldc;
        for (int j = 0; j < nr; ++j) cr[j] += tile[r][j];
    }
}

template <typename T>
void pack_b(const T* b, int ldb, int kc, int nc, T* dst) {
    constexpr int NR = kNR<T>;
    for (int j0 = 0; j0 < nc; j0 += NR) {
        const int nr = std::min(NR, nc - j0);
        for (int p = 0; p < kc; ++p) {
            const T* src = b + static_cast<std::size_t>(p) * ldb + j0;
            int j = 0;
            for (; j < nr; ++j) dst[j] = src[j];
            for (; j < NR; ++j) dst[j] = T{0};
            dst += NR;
        }
    }
}

template <typename T>
void pack_a(const T* a, int lda, int mc, int kc, T* dst) {
    for (int i0 = 0; i0 < mc; i0 += kMR) {
        const int mr = std::min(kMR, mc - i0);
        for (int p = 0; p < kc; ++p) {
            int r = 0;
            for (; r < mr; ++r) dst[r] = a[static_cast<std::size_t>(i0 + r) * lda + p];
            for (; r < kMR; ++r) dst[r] = T{0};
            dst += kMR;
        }
    }
}

template <typename T>
void gemm_block(int m, int n, int k, const T* a, const T* b, T* c, int j0, int j1) {
    constexpr int NR = kNR<T>;
    thread_local std::vector<T> apack;
    thread_local std::vector<T> bpack;
    const int nc = j1 - j0;
    const int nc_pad = (nc + NR - 1) / NR * NR;
    bpack.resize(static_cast<std::size_t>(kKC) * nc_pad);
    apack.resize(static_cast<std::size_t>(kKC) * kMC);
    for (int p0 = 0; p0 < k; p0 += kKC) {
        const int kc = std::min(kKC, k - p0);
        pack_b(b + static_cast<std::size_t>(p0) * n + j0, n, kc, nc, bpack.data());
        for (int i0 = 0; i0 < m; i0 += kMC) {
            const int mc = std::min(kMC, m - i0);
            pack_a(a + static_cast<std::size_t>(i0) * k + p0, k, mc, kc, apack.data());
            for (int jj = 0; jj < nc; jj += NR) {
                const T* bp = bpack.data() + static_cast<std::size_t>(jj) * kc;
                for (int ii = 0; ii < mc; ii += kMR) {
                    const T* ap = apack.data() + static_cast<std::size_t>(ii) * kc;
                    T* cp = c + static_cast<std::size_t>(i0 + ii) * n + j0 + jj;
                    micro_kernel(kc, ap, bp, cp, n, std::min(kMR, mc - ii), std::min(NR, nc - jj));
                }
            }
        }
    }
}

template <typename T>
void transpose(const T* src, int rows, int cols, T* dst) {
    constexpr int B = 32;
    for (int i0 = 0; i0 < rows; i0 += B) {
        const int i1 = std::min(rows, i0 + B);
        for (int j0 = 0; j0 < cols; j0 += B) {
            const int j1 = std::min(cols, j0 + B);
            for (int i = i0; i < i1; ++i) {
                for (int j = j0; j < j1; ++j) {
                    dst[static_cast<std::size_t>(j) * rows + i] = src[static_cast<std::size_t>(i) * cols + j];
                }
            }
        }
    }
}

template <typename T>
void im2col(const T* in, int channels, int h, int w, const ConvGeometry& g, int oh, int ow, T* col) {
    const int p = oh * ow;
    for (int ci = 0; ci < channels; ++ci) {
        const T* plane = in + static_cast<std::size_t>(ci) * h * w;
        for (int ky = 0; ky < g.kernel_h; ++ky) {
            for (int kx = 0; kx < g.kernel_w; ++kx) {
                T* row = col + (static_cast<std::size_t>(ci * g.kernel_h + ky) * g.kernel_w + kx) * p;
                const int dy = ky * g.dilation - g.pad_h;
                const int dx = kx * g.dilation - g.pad_w;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * g.stride + dy;
                    T* dst = row + static_cast<std::size_t>(oy) * ow;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst, dst + ow, T{0});
                        continue;
                    }
                    const T* src = plane + static_cast<std::size_t>(iy) * w;
                    if (g.stride == 1) {
                        const int lo = std::clamp(-dx, 0, ow);
                        const int hi = std::clamp(w - dx, lo, ow);
                        std::fill(dst, dst + lo, T{0});
                        std::copy(src + lo + dx, src + hi + dx, dst + lo);
                        std::fill(dst + hi, dst + ow, T{0});
                    } else {
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * g.stride + dx;
                            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T{0};
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* col, int channels, int h, int w, const ConvGeometry& g, int oh, int ow, T* in) {
    const int p = oh * ow;
    for (int ci = 0; ci < channels; ++ci) {
        T* plane = in + static_cast<std::size_t>(ci) * h * w;
        for (int ky = 0; ky < g.kernel_h; ++ky) {
            for (int kx = 0; kx < g.kernel_w; ++kx) {
                const T* row = col + (static_cast<std::size_t>(ci * g.kernel_h + ky) * g.kernel_w + kx) * p;
                const int dy = ky * g.dilation - g.pad_h;
                const int dx = kx * g.dilation - g.pad_w;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * g.stride + dy;
                    if (iy < 0 || iy >= h) continue;
                    const T* src = row + static_cast<std::size_t>(oy) * ow;
                    T* dst = plane + static_cast<std::size_t>(iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * g.stride + dx;
                        if (ix >= 0 && ix < w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

bool is_pointwise(const ConvGeometry& g) {
    return g.kernel_h == 1 && g.kernel_w == 1 && g.stride == 1 && g.pad_h == 0 && g.pad_w == 0;
}

template <typename T>
void check_conv_shapes(const Tensor<T>& input, const Tensor<T>& weight, const ConvGeometry& g) {
    if (weight.c() != input.c() || weight.h() != g.kernel_h || weight.w() != g.kernel_w) {
        throw std::invalid_argument("conv2d: weight " + weight.shape().str() +
                                    " does not match input " + input.shape().str());
    }
    if (g.out_h(input.h()) < 1 || g.out_w(input.w()) < 1) {
        throw std::invalid_argument("conv2d: input " + input.shape().str() + " too small for kernel");
    }
}

struct AxisTable {
    std::vector<int> lo;
    std::vector<int> hi;
    std::vector<double> frac;
};

AxisTable bilinear_axis(int in, int out) {
    AxisTable t{std::vector<int>(out), std::vector<int>(out), std::vector<double>(out)};
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        if (src < 0) src = 0;
        int i0 = static_cast<int>(src);
        if (i0 > in - 1) i0 = in - 1;
        t.lo[o] = i0;
        t.hi[o] = i0 < in - 1 ? i0 + 1 : i0;
        t.frac[o] = src - i0;
    }
    return t;
}

}  // namespace

template <typename T>
void gemm(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
    if (!accumulate) std::fill(c, c + static_cast<std::size_t>(m) * n, T{0});
    if (m == 0 || n == 0 || k == 0) return;
    const int blocks = (n + kNC - 1) / kNC;
    const bool parallel = static_cast<double>(m) * n * k > 1e6 && blocks > 1;
#pragma omp parallel for schedule(static) if (parallel)
    for (int bj = 0; bj < blocks; ++bj) {
        const int j0 = bj * kNC;
        gemm_block(m, n, k, a, b, c, j0, std::min(n, j0 + kNC));
    }
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weight, const T* bias,
                         const ConvGeometry& geom) {
    check_conv_shapes(input, weight, geom);
    const int n = input.n(), cin = input.c(), h = input.h(), w = input.w();
    const int cout = weight.n();
    const int oh = geom.out_h(h), ow = geom.out_w(w);
    const int kdim = cin * geom.kernel_h * geom.kernel_w;
    const int p = oh * ow;
    Tensor<T> out(Shape{n, cout, oh, ow});
    const bool pointwise = is_pointwise(geom);
#pragma omp parallel
    {
        std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(kdim) * p);
#pragma omp for schedule(static)
        for (int s = 0; s < n; ++s) {
            const T* bmat = input.sample(s);
            if (!pointwise) {
                im2col(input.sample(s), cin, h, w, geom, oh, ow, col.data());
                bmat = col.data();
            }
            T* o = out.sample(s);
            if (bias != nullptr) {
                for (int co = 0; co < cout; ++co) std::fill(o + static_cast<std::size_t>(co) * p, o + static_cast<std::size_t>(co + 1) * p, bias[co]);
            }
            gemm(cout, p, kdim, weight.data(), bmat, o, bias != nullptr);
        }
    }
    return out;
}

template <typename T>
void conv2d_backward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& grad_out,
                     const ConvGeometry& geom, Tensor<T>* grad_input, Tensor<T>* grad_weight,
                     T* grad_bias) {
    const int n = input.n(), cin = input.c(), h = input.h(), w = input.w();
    const int cout = weight.n();
    const int oh = grad_out.h(), ow = grad_out.w();
    const int kdim = cin * geom.kernel_h * geom.kernel_w;
    const int p = oh * ow;
    const bool pointwise = is_pointwise(geom);

    if (grad_bias != nullptr) {
        for (int co = 0; co < cout; ++co) {
            T acc{0};
            for (int s = 0; s < n; ++s) {
                const T* g = grad_out.plane(s, co);
                T part{0};
                for (int i = 0; i < p; ++i) part += g[i];
                acc += part;
            }
            grad_bias[co] += acc;
        }
    }
    if (grad_input == nullptr && grad_weight == nullptr) return;

    std::vector<T> weight_t;
    if (grad_input != nullptr) {
        weight_t.resize(static_cast<std::size_t>(kdim) * cout);
        transpose(weight.data(), cout, kdim, weight_t.data());
    }
    const std::size_t wsize = static_cast<std::size_t>(cout) * kdim;
    std::vector<T> partial(grad_weight != nullptr ? wsize * n : 0);

#pragma omp parallel
    {
        std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(kdim) * p);
        std::vector<T> col_t(grad_weight != nullptr ? static_cast<std::size_t>(kdim) * p : 0);
#pragma omp for schedule(static)
        for (int s = 0; s < n; ++s) {
            const T* go = grad_out.sample(s);
            if (grad_weight != nullptr) {
                const T* cmat = input.sample(s);
                if (!pointwise) {
                    im2col(input.sample(s), cin, h, w, geom, oh, ow, col.data());
                    cmat = col.data();
                }
                transpose(cmat, kdim, p, col_t.data());
                gemm(cout, kdim, p, go, col_t.data(), partial.data() + wsize * s, false);
            }
            if (grad_input != nullptr) {
                if (pointwise) {
                    gemm(cin, p, cout, weight_t.data(), go, grad_input->sample(s), true);
                } else {
                    gemm(kdim, p, cout, weight_t.data(), go, col.data(), false);
                    col2im(col.data(), cin, h, w, geom, oh, ow, grad_input->sample(s));
                }
            }
        }
    }
    if (grad_weight != nullptr) {
        T* gw = grad_weight->data();
        for (int s = 0; s < n; ++s) {
            const T* src = partial.data() + wsize * s;
            for (std::size_t i = 0; i < wsize; ++i) gw[i] += src[i];
        }
    }
}

template <typename T>
Tensor<T> avg_pool2_forward(const Tensor<T>& input) {
    if (input.h() % 2 != 0 || input.w() % 2 != 0) {
        throw std::invalid_argument("avg_pool2: extents must be even, got " + input.shape().str());
    }
    const int oh = input.h() / 2, ow = input.w() / 2;
    Tensor<T> out(Shape{input.n(), input.c(), oh, ow});
    const int planes = input.n() * input.c();
#pragma omp parallel for schedule(static)
    for (int pl = 0; pl < planes; ++pl) {
        const T* src = input.data() + static_cast<std::size_t>(pl) * input.h() * input.w();
        T* dst = out.data() + static_cast<std::size_t>(pl) * oh * ow;
        for (int y = 0; y < oh; ++y) {
            const T* r0 = src + static_cast<std::size_t>(2 * y) * input.w();
            const T* r1 = r0 + input.w();
            for (int x = 0; x < ow; ++x) {
                dst[y * ow + x] = T(0.25) * (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]);
            }
        }
    }
    return out;
}

template <typename T>
void avg_pool2_backward(const Tensor<T>& grad_out, Tensor<T>& grad_input) {
    const int oh = grad_out.h(), ow = grad_out.w();
    const int w = grad_input.w();
    const int planes = grad_out.n() * grad_out.c();
#pragma omp parallel for schedule(static)
    for (int pl = 0; pl < planes; ++pl) {
        const T* src = grad_out.data() + static_cast<std::size_t>(pl) * oh * ow;
        T* dst = grad_input.data() + static_cast<std::size_t>(pl) * grad_input.h() * w;
        for (int y = 0; y < oh; ++y) {
            T* r0 = dst + static_cast<std::size_t>(2 * y) * w;
            T* r1 = r0 + w;
            for (int x = 0; x < ow; ++x) {
                const T g = T(0.25) * src[y * ow + x];
                r0[2 * x] += g;
                r0[2 * x + 1] += g;
                r1[2 * x] += g;
                r1[2 * x + 1] += g;
            }
        }
    }
}

template <typename T>
Tensor<T> resize_bilinear_forward(const Tensor<T>& input, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize: output extents must be >= 1");
    const int h = input.h(), w = input.w();
    Tensor<T> out(Shape{input.n(), input.c(), out_h, out_w});
    if (h == out_h && w == out_w) {
        out.vec() = input.vec();
        return out;
    }
    const AxisTable ty = bilinear_axis(h, out_h);
    const AxisTable tx = bilinear_axis(w, out_w);
    const int planes = input.n() * input.c();
#pragma omp parallel for schedule(static)
    for (int pl = 0; pl < planes; ++pl) {
        const T* src = input.data() + static_cast<std::size_t>(pl) * h * w;
        T* dst = out.data() + static_cast<std::size_t>(pl) * out_h * out_w;
        for (int y = 0; y < out_h; ++y) {
            const T fy = static_cast<T>(ty.frac[y]);
            const T* r0 = src + static_cast<std::size_t>(ty.lo[y]) * w;
            const T* r1 = src + static_cast<std::size_t>(ty.hi[y]) * w;
            for (int x = 0; x < out_w; ++x) {
                const T fx = static_cast<T>(tx.frac[x]);
                const T top = (T(1) - fx) * r0[tx.lo[x]] + fx * r0[tx.hi[x]];
                const T bot = (T(1) - fx) * r1[tx.lo[x]] + fx * r1[tx.hi[x]];
                dst[static_cast<std::size_t>(y) * out_w + x] = (T(1) - fy) * top + fy * bot;
            }
        }
    }
    return out;
}

template <typename T>
void resize_bilinear_backward(const Tensor<T>& grad_out, Tensor<T>& grad_input) {
    const int h = grad_input.h(), w = grad_input.w();
    const int out_h = grad_out.h(), out_w = grad_out.w();
    if (h == out_h && w == out_w) {
        for (std::size_t i = 0; i < grad_out.numel(); ++i) grad_input[i] += grad_out[i];
        return;
    }
    const AxisTable ty = bilinear_axis(h, out_h);
    const AxisTable tx = bilinear_axis(w, out_w);
    const int planes = grad_out.n() * grad_out.c();
#pragma omp parallel for schedule(static)
    for (int pl = 0; pl < planes; ++pl) {
        const T* src = grad_out.data() + static_cast<std::size_t>(pl) * out_h * out_w;
        T* dst = grad_input.data() + static_cast<std::size_t>(pl) * h * w;
        for (int y = 0; y < out_h; ++y) {
            const T fy = static_cast<T>(ty.frac[y]);
            T* r0 = dst + static_cast<std::size_t>(ty.lo[y]) * w;
            T* r1 = dst + static_cast<std::size_t>(ty.hi[y]) * w;
            for (int x = 0; x < out_w; ++x) {
                const T fx = static_cast<T>(tx.frac[x]);
                const T g = src[static_cast<std::size_t>(y) * out_w + x];
                const T gt = (T(1) - fy) * g;
                const T gb = fy * g;
                r0[tx.lo[x]] += (T(1) - fx) * gt;
                r0[tx.hi[x]] += fx * gt;
                r1[tx.lo[x]] += (T(1) - fx) * gb;
                r1[tx.hi[x]] += fx * gb;
            }
        }
    }
}

#define BDG_INSTANTIATE(T)                                                                          \
    template void gemm<T>(int, int, int, const T*, const T*, T*, bool);                           \
    template Tensor<T> conv2d_forward<T>(const Tensor<T>&, const Tensor<T>&, const T*,              \
                                         const ConvGeometry&);                                      \
    template void conv2d_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                     const ConvGeometry&, Tensor<T>*, Tensor<T>*, T*);              \
    template Tensor<T> avg_pool2_forward<T>(const Tensor<T>&);                                      \
    template void avg_pool2_backward<T>(const Tensor<T>&, Tensor<T>&);                              \
    template Tensor<T> resize_bilinear_forward<T>(const Tensor<T>&, int, int);                      \
    template void resize_bilinear_backward<T>(const Tensor<T>&, Tensor<T>&);

BDG_INSTANTIATE(float)
BDG_INSTANTIATE(double)
#undef BDG_INSTANTIATE

}  // namespace bdg::kernels
