#include "bdg/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace bdg {

namespace {

std::int64_t numel(const Shape& s) { return static_cast<std::int64_t>(s.numel()); }

Shape with_channels(Shape s, int c) {
    s.c = c;
    return s;
}

Shape scaled(Shape s, int num, int den) {
    s.h = s.h * num / den;
    s.w = s.w * num / den;
    return s;
}

std::int64_t resize_flops(const Shape& out, bool identity) { return identity ? 0 : 8 * numel(out); }

}  // namespace

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(int in_ch, int out_ch, ConvGeometry g, bool with_bias, InitRng& rng)
    : in_channels(in_ch), out_channels(out_ch), geom(g), has_bias(with_bias) {
    Tensor<T> w(Shape{out_ch, in_ch, g.kernel_h, g.kernel_w});
    const double fan_in = static_cast<double>(in_ch) * g.kernel_h * g.kernel_w;
    const double bound = std::sqrt(6.0 / fan_in);
    for (std::size_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(bound * rng.symmetric());
    weight = Var<T>(std::move(w), true);
    if (has_bias) bias = Var<T>(Tensor<T>(Shape{1, out_ch, 1, 1}), true);
}

template <typename T>
Var<T> Conv2d<T>::forward(const Var<T>& x) const {
    if (x.shape().c != in_channels) {
        throw std::invalid_argument("conv: expected " + std::to_string(in_channels) + " channels, got " +
                                    x.shape().str());
    }
    return ops::conv2d(x, weight, has_bias ? &bias : nullptr, geom);
}

template <typename T>
Shape Conv2d<T>::output_shape(const Shape& in) const {
    return Shape{in.n, out_channels, geom.out_h(in.h), geom.out_w(in.w)};
}

template <typename T>
std::int64_t Conv2d<T>::flops(const Shape& in) const {
    const std::int64_t outputs = numel(output_shape(in));
    return 2 * outputs * in_channels * geom.kernel_h * geom.kernel_w + (has_bias ? outputs : 0);
}

template <typename T>
std::int64_t Conv2d<T>::parameter_count() const {
    return static_cast<std::int64_t>(out_channels) * in_channels * geom.kernel_h * geom.kernel_w +
           (has_bias ? out_channels : 0);
}

template <typename T>
void Conv2d<T>::collect(const std::string& prefix, StateList<T>& out) {
    out.push_back({prefix + "weight", &weight.mutable_value(), &weight});
    if (has_bias) out.push_back({prefix + "bias", &bias.mutable_value(), &bias});
}

// ----------------------------------------------------------- BatchNorm2d

template <typename T>
BatchNorm2d<T>::BatchNorm2d(int channels)
    : gamma(Tensor<T>(Shape{1, channels, 1, 1}, T{1}), true),
      beta(Tensor<T>(Shape{1, channels, 1, 1}, T{0}), true),
      running_mean(Shape{1, channels, 1, 1}, T{0}),
      running_var(Shape{1, channels, 1, 1}, T{1}) {}

template <typename T>
Var<T> BatchNorm2d<T>::forward(const Var<T>& x, const ForwardContext& ctx) {
    return ops::batch_norm(x, gamma, beta, running_mean, running_var, ctx.training);
}

template <typename T>
void BatchNorm2d<T>::collect(const std::string& prefix, StateList<T>& out) {
    out.push_back({prefix + "gamma", &gamma.mutable_value(), &gamma});
    out.push_back({prefix + "beta", &beta.mutable_value(), &beta});
    out.push_back({prefix + "running_mean", &running_mean, nullptr});
    out.push_back({prefix + "running_var", &running_var, nullptr});
}

// ------------------------------------------------------------- ConvBlock

template <typename T>
ConvBlock<T>::ConvBlock(int in_ch, int out_ch, ConvGeometry geom, InitRng& rng, bool with_relu)
    : conv(in_ch, out_ch, geom, false, rng), bn(out_ch), relu(with_relu) {}

template <typename T>
Var<T> ConvBlock<T>::forward(const Var<T>& x, const ForwardContext& ctx) {
    Var<T> y = bn.forward(conv.forward(x), ctx);
    return relu ? ops::relu(y) : y;
}

template <typename T>
std::int64_t ConvBlock<T>::flops(const Shape& in) const {
    const Shape out = conv.output_shape(in);
    return conv.flops(in) + bn.flops(out) + (relu ? numel(out) : 0);
}

template <typename T>
void ConvBlock<T>::collect(const std::string& prefix, StateList<T>& out) {
    conv.collect(prefix + "conv.", out);
    bn.collect(prefix + "bn.", out);
}

// --------------------------------------------------- ReceptiveFieldBlock

template <typename T>
ReceptiveFieldBlock<T>::ReceptiveFieldBlock(int in_ch, int out_ch, InitRng& rng) : out_channels(out_ch) {
    auto lin = [&](int cin, ConvGeometry g) { return ConvBlock<T>(cin, out_ch, g, rng, false); };
    branches.push_back({lin(in_ch, ConvGeometry::square(1))});
    for (int k : {3, 5, 7}) {
        const int half = k / 2;
        branches.push_back({
            lin(in_ch, ConvGeometry::square(1)),
            lin(out_ch, ConvGeometry{1, k, 1, 0, half, 1}),
            lin(out_ch, ConvGeometry{k, 1, 1, half, 0, 1}),
            lin(out_ch, ConvGeometry::square(3, 1, k)),
        });
    }
    fuse = ConvBlock<T>(4 * out_ch, out_ch, ConvGeometry::square(1), rng, false);
    shortcut = ConvBlock<T>(in_ch, out_ch, ConvGeometry::square(1), rng, false);
}

template <typename T>
Var<T> ReceptiveFieldBlock<T>::forward(const Var<T>& x, const ForwardContext& ctx) {
    std::vector<Var<T>> outs;
    for (auto& branch : branches) {
        Var<T> y = x;
        for (auto& block : branch) y = block.forward(y, ctx);
        outs.push_back(y);
    }
    Var<T> fused = fuse.forward(ops::concat_channels(outs), ctx);
    return ops::relu(ops::add(fused, shortcut.forward(x, ctx)));
}

template <typename T>
std::int64_t ReceptiveFieldBlock<T>::flops(const Shape& in) const {
    std::int64_t total = 0;
    for (const auto& branch : branches) {
        Shape s = in;
        for (const auto& block : branch) {
            total += block.flops(s);
            s = block.output_shape(s);
        }
    }
    const Shape out = with_channels(in, out_channels);
    total += fuse.flops(with_channels(in, 4 * out_channels));
    total += shortcut.flops(in);
    return total + 2 * numel(out);
}

template <typename T>
std::int64_t ReceptiveFieldBlock<T>::parameter_count() const {
    std::int64_t total = fuse.parameter_count() + shortcut.parameter_count();
    for (const auto& branch : branches) {
        for (const auto& block : branch) total += block.parameter_count();
    }
    return total;
}

template <typename T>
void ReceptiveFieldBlock<T>::collect(const std::string& prefix, StateList<T>& out) {
    for (std::size_t b = 0; b < branches.size(); ++b) {
        for (std::size_t i = 0; i < branches[b].size(); ++i) {
            branches[b][i].collect(prefix + "branch" + std::to_string(b) + "." + std::to_string(i) + ".", out);
        }
    }
    fuse.collect(prefix + "fuse.", out);
    shortcut.collect(prefix + "shortcut.", out);
}

// ----------------------------------------------------------- Aggregation

template <typename T>
Aggregation<T>::Aggregation(int ch, InitRng& rng) : channels(ch) {
    const auto g = ConvGeometry::square(3);
    high_conv = ConvBlock<T>(ch, ch, g, rng);
    low_up_conv = ConvBlock<T>(ch, ch, g, rng);
    low_conv = ConvBlock<T>(ch, ch, g, rng);
    high_down_conv = ConvBlock<T>(ch, ch, g, rng);
    high_out_conv = ConvBlock<T>(ch, ch, g, rng);
    low_out_conv = ConvBlock<T>(ch, ch, g, rng);
}

template <typename T>
Var<T> Aggregation<T>::forward(const Var<T>& high, const Var<T>& low, const ForwardContext& ctx) {
    const Shape& hs = high.shape();
    const Shape& ls = low.shape();
    if (hs.c != channels || ls.c != channels || hs.n != ls.n || hs.h != 2 * ls.h || hs.w != 2 * ls.w) {
        throw std::invalid_argument("aggregation: expected high at twice the low resolution with " +
                                    std::to_string(channels) + " channels, got " + hs.str() + " and " +
                                    ls.str());
    }
    const Var<T> low_up = ops::upsample(low, 2);
    const Var<T> high_down = ops::avg_pool2(high);
    const Var<T> high_mix = ops::add(high_conv.forward(high, ctx), low_up_conv.forward(low_up, ctx));
    const Var<T> low_mix = ops::add(low_conv.forward(low, ctx), high_down_conv.forward(high_down, ctx));
    return ops::add(high_out_conv.forward(high_mix, ctx),
                    low_out_conv.forward(ops::upsample(low_mix, 2), ctx));
}

template <typename T>
std::int64_t Aggregation<T>::flops(const Shape& high) const {
    const Shape low = scaled(high, 1, 2);
    std::int64_t total = 0;
    total += resize_flops(high, false) + high_conv.flops(high) + low_up_conv.flops(high) + numel(high);
    total += 8 * numel(low) + low_conv.flops(low) + high_down_conv.flops(low) + numel(low);
    total += high_out_conv.flops(high) + resize_flops(high, false) + low_out_conv.flops(high) + numel(high);
    return total;
}

template <typename T>
std::int64_t Aggregation<T>::parameter_count() const {
    return high_conv.parameter_count() + low_up_conv.parameter_count() + low_conv.parameter_count() +
           high_down_conv.parameter_count() + high_out_conv.parameter_count() +
           low_out_conv.parameter_count();
}

template <typename T>
void Aggregation<T>::collect(const std::string& prefix, StateList<T>& out) {
    high_conv.collect(prefix + "high_conv.", out);
    low_up_conv.collect(prefix + "low_up_conv.", out);
    low_conv.collect(prefix + "low_conv.", out);
    high_down_conv.collect(prefix + "high_down_conv.", out);
    high_out_conv.collect(prefix + "high_out_conv.", out);
    low_out_conv.collect(prefix + "low_out_conv.", out);
}

// -------------------------------------------------------- GuidedDecoderA

template <typename T>
GuidedDecoderA<T>::GuidedDecoderA(int skip_ch, int prev_ch, int ch, InitRng& rng) : channels(ch) {
    const auto g = ConvGeometry::square(3);
    skip_proj = ConvBlock<T>(skip_ch, ch, g, rng);
    prev_proj = ConvBlock<T>(prev_ch, ch, g, rng);
    up_block = ConvBlock<T>(ch, ch, g, rng);
    down_block = ConvBlock<T>(ch, ch, g, rng);
    out_block = ConvBlock<T>(ch, ch, g, rng);
}

template <typename T>
Var<T> GuidedDecoderA<T>::forward(const Var<T>& skip, const Var<T>& prev, const Var<T>& bdm,
                                  const ForwardContext& ctx) {
    const Shape& ss = skip.shape();
    const Shape& ps = prev.shape();
    if (ss.n != ps.n || ss.h != 2 * ps.h || ss.w != 2 * ps.w) {
        throw std::invalid_argument("decoder A: skip " + ss.str() + " must be twice the resolution of " +
                                    ps.str());
    }
    if (bdm.shape().c != 1 || bdm.shape().n != ss.n) {
        throw std::invalid_argument("decoder A: boundary map must be single-channel, got " + bdm.shape().str());
    }
    const Var<T> gate_high = ops::resize_bilinear(bdm, ss.h, ss.w);
    const Var<T> gate_low = ops::avg_pool2(gate_high);

    const Var<T> skip_feat = skip_proj.forward(skip, ctx);
    const Var<T> prev_feat = prev_proj.forward(prev, ctx);
    const Var<T> skip_gated = ops::mul(skip_feat, gate_high);
    const Var<T> prev_gated = ops::mul(prev_feat, gate_low);

    const Var<T> high = ops::add(up_block.forward(ops::upsample(prev_feat, 2), ctx), skip_gated);
    const Var<T> low = ops::add(down_block.forward(ops::avg_pool2(skip_feat), ctx), prev_gated);
    const Var<T> fused = ops::add(ops::upsample(low, 2), high);
    return ops::add(fused, out_block.forward(fused, ctx));
}

template <typename T>
std::int64_t GuidedDecoderA<T>::flops(const Shape& skip, const Shape& prev, const Shape& bdm) const {
    const Shape hi = with_channels(skip, channels);
    const Shape lo = with_channels(prev, channels);
    const Shape gate_hi = with_channels(skip, 1);
    std::int64_t total = resize_flops(gate_hi, bdm.h == skip.h && bdm.w == skip.w) + 8 * numel(with_channels(prev, 1));
    total += skip_proj.flops(skip) + prev_proj.flops(prev) + numel(hi) + numel(lo);
    total += 8 * numel(hi) + up_block.flops(hi) + numel(hi);
    total += 8 * numel(lo) + down_block.flops(lo) + numel(lo);
    total += 8 * numel(hi) + numel(hi);
    total += out_block.flops(hi) + numel(hi);
    return total;
}

template <typename T>
std::int64_t GuidedDecoderA<T>::parameter_count() const {
    return skip_proj.parameter_count() + prev_proj.parameter_count() + up_block.parameter_count() +
           down_block.parameter_count() + out_block.parameter_count();
}

template <typename T>
void GuidedDecoderA<T>::collect(const std::string& prefix, StateList<T>& out) {
    skip_proj.collect(prefix + "skip_proj.", out);
    prev_proj.collect(prefix + "prev_proj.", out);
    up_block.collect(prefix + "up_block.", out);
    down_block.collect(prefix + "down_block.", out);
    out_block.collect(prefix + "out_block.", out);
}

// -------------------------------------------------------- GuidedDecoderB

template <typename T>
GuidedDecoderB<T>::GuidedDecoderB(int prev_ch, int ch, InitRng& rng) : channels(ch) {
    const auto g = ConvGeometry::square(3);
    prev_proj = ConvBlock<T>(prev_ch, ch, g, rng);
    up_block = ConvBlock<T>(ch, ch, g, rng);
    out_block = ConvBlock<T>(ch, ch, g, rng);
}

template <typename T>
Var<T> GuidedDecoderB<T>::forward(const Var<T>& prev, const Var<T>& bdm, const ForwardContext& ctx) {
    const Shape& ps = prev.shape();
    if (bdm.shape().c != 1 || bdm.shape().n != ps.n) {
        throw std::invalid_argument("decoder B: boundary map must be single-channel, got " + bdm.shape().str());
    }
    const Var<T> gate_high = ops::resize_bilinear(bdm, 2 * ps.h, 2 * ps.w);
    const Var<T> gate_low = ops::avg_pool2(gate_high);
    const Var<T> prev_feat = prev_proj.forward(prev, ctx);
    const Var<T> prev_gated = ops::mul(prev_feat, gate_low);
    const Var<T> high = up_block.forward(ops::upsample(prev_feat, 2), ctx);
    const Var<T> fused = ops::add(ops::upsample(prev_gated, 2), high);
    return ops::add(fused, out_block.forward(fused, ctx));
}

template <typename T>
std::int64_t GuidedDecoderB<T>::flops(const Shape& prev, const Shape& bdm) const {
    const Shape lo = with_channels(prev, channels);
    const Shape hi = scaled(lo, 2, 1);
    const Shape gate_hi = with_channels(hi, 1);
    std::int64_t total = resize_flops(gate_hi, bdm.h == hi.h && bdm.w == hi.w) + 8 * numel(with_channels(prev, 1));
    total += prev_proj.flops(prev) + numel(lo);
    total += 8 * numel(hi) + up_block.flops(hi);
    total += 8 * numel(hi) + numel(hi);
    total += out_block.flops(hi) + numel(hi);
    return total;
}

template <typename T>
std::int64_t GuidedDecoderB<T>::parameter_count() const {
    return prev_proj.parameter_count() + up_block.parameter_count() + out_block.parameter_count();
}

template <typename T>
void GuidedDecoderB<T>::collect(const std::string& prefix, StateList<T>& out) {
    prev_proj.collect(prefix + "prev_proj.", out);
    up_block.collect(prefix + "up_block.", out);
    out_block.collect(prefix + "out_block.", out);
}

// ---------------------------------------------------------- PlainDecoder

template <typename T>
PlainDecoder<T>::PlainDecoder(int skip_ch, int prev_ch, int ch, InitRng& rng)
    : has_skip(skip_ch > 0), channels(ch) {
    const auto g = ConvGeometry::square(3);
    prev_proj = ConvBlock<T>(prev_ch, ch, g, rng);
    up_block = ConvBlock<T>(ch, ch, g, rng);
    if (has_skip) skip_proj = ConvBlock<T>(skip_ch, ch, g, rng);
}

template <typename T>
Var<T> PlainDecoder<T>::forward(const Var<T>* skip, const Var<T>& prev, const ForwardContext& ctx) {
    Var<T> out = up_block.forward(ops::upsample(prev_proj.forward(prev, ctx), 2), ctx);
    if (has_skip) {
        if (skip == nullptr) throw std::invalid_argument("plain decoder: missing skip input");
        out = ops::add(out, skip_proj.forward(*skip, ctx));
    }
    return out;
}

template <typename T>
std::int64_t PlainDecoder<T>::flops(const Shape* skip, const Shape& prev) const {
    const Shape lo = with_channels(prev, channels);
    const Shape hi = scaled(lo, 2, 1);
    std::int64_t total = prev_proj.flops(prev) + 8 * numel(hi) + up_block.flops(hi);
    if (has_skip && skip != nullptr) total += skip_proj.flops(*skip) + numel(hi);
    return total;
}

template <typename T>
std::int64_t PlainDecoder<T>::parameter_count() const {
    return prev_proj.parameter_count() + up_block.parameter_count() +
           (has_skip ? skip_proj.parameter_count() : 0);
}

template <typename T>
void PlainDecoder<T>::collect(const std::string& prefix, StateList<T>& out) {
    prev_proj.collect(prefix + "prev_proj.", out);
    up_block.collect(prefix + "up_block.", out);
    if (has_skip) skip_proj.collect(prefix + "skip_proj.", out);
}

template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;
template class ConvBlock<float>;
template class ConvBlock<double>;
template class ReceptiveFieldBlock<float>;
template class ReceptiveFieldBlock<double>;
template class Aggregation<float>;
template class Aggregation<double>;
template class GuidedDecoderA<float>;
template class GuidedDecoderA<double>;
template class GuidedDecoderB<float>;
template class GuidedDecoderB<double>;
template class PlainDecoder<float>;
template class PlainDecoder<double>;

}  // namespace bdg
