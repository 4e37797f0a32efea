#pragma once

#include "bdg/tensor.hpp"

namespace bdg {

struct ConvGeometry {
    int kernel_h = 1;
    int kernel_w = 1;
    int stride = 1;
    int pad_h = 0;
    int pad_w = 0;
    int dilation = 1;

    int out_h(int in_h) const { return (in_h + 2 * pad_h - dilation * (kernel_h - 1) - 1) / stride + 1; }
    int out_w(int in_w) const { return (in_w + 2 * pad_w - dilation * (kernel_w - 1) - 1) / stride + 1; }
    /// k x k kernel, "same" padding for stride 1.
    static ConvGeometry square(int k, int stride = 1, int dilation = 1) {
        return {k, k, stride, dilation * (k - 1) / 2, dilation * (k - 1) / 2, dilation};
    }
};

/// OpenMP kernels used by the autograd ops. Every kernel partitions work so
/// that each output element is produced by exactly one thread in a fixed
/// summation order; results are identical for any thread count.
namespace kernels {

/// C (+)= A * B with A: m x k, B: k x n, C: m x n, all row-major.
template <typename T>
void gemm(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate);

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weight, const T* bias,
                         const ConvGeometry& geom);

/// Accumulates into whichever of grad_input / grad_weight / grad_bias is non-null.
template <typename T>
void conv2d_backward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& grad_out,
                     const ConvGeometry& geom, Tensor<T>* grad_input, Tensor<T>* grad_weight,
                     T* grad_bias);

/// 2x2 average pooling, stride 2. Input extents must be even.
template <typename T>
Tensor<T> avg_pool2_forward(const Tensor<T>& input);
template <typename T>
void avg_pool2_backward(const Tensor<T>& grad_out, Tensor<T>& grad_input);

/// Bilinear resampling with half-pixel centres (no corner alignment).
template <typename T>
Tensor<T> resize_bilinear_forward(const Tensor<T>& input, int out_h, int out_w);
template <typename T>
void resize_bilinear_backward(const Tensor<T>& grad_out, Tensor<T>& grad_input);

}  // namespace kernels

/// Serial, loop-nest transcriptions of the kernels above. Kept for tests and
/// the benchmark; never called on the training path.
namespace kernels::reference {

template <typename T>
void gemm(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate);

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weight, const T* bias,
                         const ConvGeometry& geom);

template <typename T>
void conv2d_backward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& grad_out,
                     const ConvGeometry& geom, Tensor<T>* grad_input, Tensor<T>* grad_weight,
                     T* grad_bias);

template <typename T>
Tensor<T> resize_bilinear_forward(const Tensor<T>& input, int out_h, int out_w);

}  // namespace kernels::reference

}  // namespace bdg
