#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bdg/autograd.hpp"

namespace bdg {

/// Shapes recorded during a forward pass, for tests that pin the resolution
/// ladder.
struct ForwardTrace {
    Shape aggregation_low;   // first aggregation output (stride 16)
    Shape aggregation_high;  // second aggregation output (stride 8)
    Shape bdm;
    std::vector<Shape> encoder_stages;
    std::vector<Shape> decoder_stages;
};

struct ForwardContext {
    bool training = false;
    ForwardTrace* trace = nullptr;
};

/// Named handle on a persisted tensor. `var` is null for non-trainable
/// buffers such as normalisation running statistics.
template <typename T>
struct StateEntry {
    std::string name;
    Tensor<T>* tensor;
    Var<T>* var;
};

template <typename T>
using StateList = std::vector<StateEntry<T>>;

/// splitmix64 stream used for weight initialisation. Values are produced in
/// double precision so float and double networks built from the same seed
/// hold the same weights up to rounding.
class InitRng {
public:
    explicit InitRng(std::uint64_t seed) : state_(seed) {}
    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }
    /// Uniform in [-1, 1).
    double symmetric() { return static_cast<double>(next() >> 11) * 0x1.0p-52 - 1.0; }

private:
    std::uint64_t state_;
};

template <typename T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(int in_channels, int out_channels, ConvGeometry geom, bool bias, InitRng& rng);

    Var<T> forward(const Var<T>& x) const;
    Shape output_shape(const Shape& in) const;
    std::int64_t flops(const Shape& in) const;
    std::int64_t parameter_count() const;
    void collect(const std::string& prefix, StateList<T>& out);

    int in_channels = 0;
    int out_channels = 0;
    ConvGeometry geom;
    bool has_bias = false;
    Var<T> weight;
    Var<T> bias;
};

template <typename T>
class BatchNorm2d {
public:
    BatchNorm2d() = default;
    explicit BatchNorm2d(int channels);

    Var<T> forward(const Var<T>& x, const ForwardContext& ctx);
    std::int64_t flops(const Shape& in) const { return 2 * static_cast<std::int64_t>(in.numel()); }
    std::int64_t parameter_count() const { return 2 * static_cast<std::int64_t>(gamma.value().numel()); }
    void collect(const std::string& prefix, StateList<T>& out);

    Var<T> gamma;
    Var<T> beta;
    Tensor<T> running_mean;
    Tensor<T> running_var;
};

/// Convolution, batch normalisation and (optionally) ReLU.
template <typename T>
class ConvBlock {
public:
    ConvBlock() = default;
    ConvBlock(int in_channels, int out_channels, ConvGeometry geom, InitRng& rng, bool relu = true);

    Var<T> forward(const Var<T>& x, const ForwardContext& ctx);
    Shape output_shape(const Shape& in) const { return conv.output_shape(in); }
    std::int64_t flops(const Shape& in) const;
    std::int64_t parameter_count() const { return conv.parameter_count() + bn.parameter_count(); }
    void collect(const std::string& prefix, StateList<T>& out);

    Conv2d<T> conv;
    BatchNorm2d<T> bn;
    bool relu = true;
};

/// Receptive field block: four parallel branches with growing dilation,
/// concatenated, fused by a 1x1 conv and added to a 1x1 shortcut.
template <typename T>
class ReceptiveFieldBlock {
public:
    ReceptiveFieldBlock() = default;
    ReceptiveFieldBlock(int in_channels, int out_channels, InitRng& rng);

    Var<T> forward(const Var<T>& x, const ForwardContext& ctx);
    std::int64_t flops(const Shape& in) const;
    std::int64_t parameter_count() const;
    void collect(const std::string& prefix, StateList<T>& out);

    std::vector<std::vector<ConvBlock<T>>> branches;
    ConvBlock<T> fuse;
    ConvBlock<T> shortcut;
    int out_channels = 0;
};

/// Two-scale aggregation. With f_h at twice the resolution of f_l:
///   h' = Conv(f_h) + Conv(Up(f_l))
///   l' = Conv(f_l) + Conv(Pool(f_h))
///   out = Conv(h') + Conv(Up(l'))
/// where each Conv is a 3x3 ConvBlock.
template <typename T>
class Aggregation {
public:
    Aggregation() = default;
    Aggregation(int channels, InitRng& rng);

    Var<T> forward(const Var<T>& high, const Var<T>& low, const ForwardContext& ctx);
    std::int64_t flops(const Shape& high) const;
    std::int64_t parameter_count() const;
    void collect(const std::string& prefix, StateList<T>& out);

    ConvBlock<T> high_conv, low_up_conv, low_conv, high_down_conv, high_out_conv, low_out_conv;
    int channels = 0;
};

/// Decoder stage fusing an encoder skip with the previous decoder output under
/// the boundary gate, at both the skip's scale and the decoder's scale.
template <typename T>
class GuidedDecoderA {
public:
    GuidedDecoderA() = default;
    GuidedDecoderA(int skip_channels, int prev_channels, int channels, InitRng& rng);

    /// `bdm` is any single-channel map; it is resampled to the skip's size.
    Var<T> forward(const Var<T>& skip, const Var<T>& prev, const Var<T>& bdm, const ForwardContext& ctx);
    std::int64_t flops(const Shape& skip, const Shape& prev, const Shape& bdm) const;
    std::int64_t parameter_count() const;
    void collect(const std::string& prefix, StateList<T>& out);

    ConvBlock<T> skip_proj, prev_proj, up_block, down_block, out_block;
    int channels = 0;
};

/// The same stage with every skip-sourced branch removed; output at twice the
/// previous decoder's resolution.
template <typename T>
class GuidedDecoderB {
public:
    GuidedDecoderB() = default;
    GuidedDecoderB(int prev_channels, int channels, InitRng& rng);

    Var<T> forward(const Var<T>& prev, const Var<T>& bdm, const ForwardContext& ctx);
    std::int64_t flops(const Shape& prev, const Shape& bdm) const;
    std::int64_t parameter_count() const;
    void collect(const std::string& prefix, StateList<T>& out);

    ConvBlock<T> prev_proj, up_block, out_block;
    int channels = 0;
};

/// Ungated upsample-and-add stage used when the guided decoder is ablated.
template <typename T>
class PlainDecoder {
public:
    PlainDecoder() = default;
    PlainDecoder(int skip_channels, int prev_channels, int channels, InitRng& rng);

    /// `skip` may be undefined when the stage has no skip path.
    Var<T> forward(const Var<T>* skip, const Var<T>& prev, const ForwardContext& ctx);
    std::int64_t flops(const Shape* skip, const Shape& prev) const;
    std::int64_t parameter_count() const;
    void collect(const std::string& prefix, StateList<T>& out);

    ConvBlock<T> prev_proj, up_block;
    ConvBlock<T> skip_proj;
    bool has_skip = false;
    int channels = 0;
};

}  // namespace bdg
