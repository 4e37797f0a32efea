#pragma once

#include "bdg/autograd.hpp"
#include "bdg/network.hpp"

namespace bdg {

struct LossConfig {
    /// Squared BDM residuals at or below this are ignored.
    double lambda = 0.01;
    /// Side of the box filter in the pixel weight map; must be odd.
    int weight_kernel = 31;
    double weight_gain = 5.0;
    /// Sum the BDM term per image instead of averaging over pixels.
    bool bdm_sum = false;
    /// Report the weighted BCE as a plain weighted sum per image.
    bool wbce_unnormalized = false;

    void validate() const;
};

/// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] before logs.
inline constexpr double kProbClamp = 1e-7;

/// w = 1 + gain * |boxmean_k(gt) - gt| with mirror padding, per image.
/// gt is (B, 1, H, W) with values in {0, 1}.
template <typename T>
Tensor<T> weight_map(const Tensor<T>& gt, const LossConfig& cfg);

/// Squared error against the ideal map, keeping only residuals with
/// r^2 > lambda. Mean over all pixels, or per-image sum averaged over the
/// batch when cfg.bdm_sum.
template <typename T>
Var<T> l_bdm(const Var<T>& pred, const Tensor<T>& ideal, const LossConfig& cfg);

/// Weighted BCE on logits, stable fused form. Normalised by the weight sum
/// of each image unless `unnormalized`; averaged over the batch.
template <typename T>
Var<T> l_wbce_logits(const Var<T>& logits, const Tensor<T>& gt, const Tensor<T>& w, bool unnormalized = false);

/// Weighted BCE on probabilities, with clamping.
template <typename T>
Var<T> l_wbce(const Var<T>& prob, const Tensor<T>& gt, const Tensor<T>& w, bool unnormalized = false);

/// 1 - sum(w g s) / sum(w (g + s - g s)) per image, averaged over the batch.
/// An image with zero denominator contributes 0.
template <typename T>
Var<T> l_wiou(const Var<T>& prob, const Tensor<T>& gt, const Tensor<T>& w);

template <typename T>
struct LossTerms {
    Var<T> total;
    Var<T> bdm;
    Var<T> wbce;
    Var<T> wiou;
};

/// total = bdm + wbce + wiou. The BDM term is 0 when the output carries no
/// generated map.
template <typename T>
LossTerms<T> l_total(const SegmentationOutput<T>& pred, const Tensor<T>& gt, const Tensor<T>& ideal_bdm,
                     const LossConfig& cfg);

}  // namespace bdg
