#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "bdg/layers.hpp"

namespace bdg {

enum class EncoderKind { toy, external };

struct NetworkConfig {
    int decoder_channels = 32;
    /// Decoder skip levels; level l feeds the decoder stage whose output has
    /// stride 2^l (4: 1/16, 3: 1/8, 2: 1/4, 1: 1/2).
    std::vector<int> skip_levels{3, 4};
    /// Boundary-map width used for supervision targets.
    double sigma = 5.0;
    int input_size = 352;
    EncoderKind encoder_kind = EncoderKind::toy;
    /// false: no boundary branch, decoder gates are constant 1.
    bool use_bdgm = true;
    /// false: decoder stages are plain upsample-and-add blocks.
    bool use_bdgd = true;
    /// Whether decoder gating back-propagates into the boundary branch.
    bool gate_gradients = true;

    bool has_skip(int level) const;
    /// Number of guided stages that fuse an encoder skip.
    int bdgd_a_stages() const;
    /// Throws std::invalid_argument on an inconsistent configuration.
    void validate() const;
};

std::string to_string(EncoderKind kind);
EncoderKind encoder_kind_from_string(const std::string& s);

template <typename T>
struct EncoderOutput {
    /// Stride-2 feature, used only by a level-1 skip.
    Var<T> stem;
    /// Strides 4, 8, 16, 32.
    std::array<Var<T>, 4> stages;
};

/// Backbone contract: four stages at strides 4/8/16/32 plus a stride-2 stem
/// feature, with declared channel counts.
template <typename T>
class Encoder {
public:
    virtual ~Encoder() = default;
    virtual EncoderOutput<T> forward(const Var<T>& image, const ForwardContext& ctx) = 0;
    virtual std::array<int, 4> stage_channels() const = 0;
    virtual int stem_channels() const = 0;
    virtual std::int64_t flops(const Shape& image) const = 0;
    virtual void collect(const std::string& prefix, StateList<T>& out) = 0;
};

/// Small CPU-trainable backbone: stride-4 stem, then three stride-2 stages,
/// 16/32/64/128 channels, two 3x3 conv blocks per stage.
template <typename T>
class ToyEncoder final : public Encoder<T> {
public:
    explicit ToyEncoder(InitRng& rng);

    EncoderOutput<T> forward(const Var<T>& image, const ForwardContext& ctx) override;
    std::array<int, 4> stage_channels() const override { return {16, 32, 64, 128}; }
    int stem_channels() const override { return 16; }
    std::int64_t flops(const Shape& image) const override;
    void collect(const std::string& prefix, StateList<T>& out) override;

private:
    ConvBlock<T> stem1_, stem2_;
    std::array<std::array<ConvBlock<T>, 2>, 4> stages_;
};

/// Boundary branch: RFB-reduced stride 8/16/32 features aggregated twice,
/// projected to one channel, upsampled x8 and squashed into [0, 1].
template <typename T>
class BoundaryGenerator {
public:
    BoundaryGenerator() = default;
    BoundaryGenerator(const std::array<int, 4>& encoder_channels, int channels, InitRng& rng);

    Var<T> forward(const Var<T>& e2, const Var<T>& e3, const Var<T>& e4, const ForwardContext& ctx);
    std::int64_t flops(const Shape& e2, const Shape& e3, const Shape& e4) const;
    std::int64_t parameter_count() const;
    void collect(const std::string& prefix, StateList<T>& out);

    ReceptiveFieldBlock<T> reduce2, reduce3, reduce4;
    Aggregation<T> agg_low, agg_high;
    Conv2d<T> head;
};

template <typename T>
using DecoderStage = std::variant<GuidedDecoderA<T>, GuidedDecoderB<T>, PlainDecoder<T>>;

template <typename T>
struct SegmentationOutput {
    Var<T> logits;  // (B, 1, H, W)
    Var<T> bdm;     // (B, 1, H, W), in [0, 1]
    bool has_bdm = true;
};

struct FlopBreakdown {
    std::int64_t encoder = 0;
    std::int64_t boundary = 0;
    std::vector<std::int64_t> decoder;
    std::int64_t head = 0;

    std::int64_t total() const {
        std::int64_t t = encoder + boundary + head;
        for (auto d : decoder) t += d;
        return t;
    }
};

template <typename T>
class BDGNet {
public:
    BDGNet(NetworkConfig cfg, std::uint64_t seed);
    BDGNet(NetworkConfig cfg, std::unique_ptr<Encoder<T>> encoder, std::uint64_t seed);
    BDGNet(const BDGNet&) = delete;
    BDGNet& operator=(const BDGNet&) = delete;

    SegmentationOutput<T> forward(const Var<T>& image, const ForwardContext& ctx);
    EncoderOutput<T> encode(const Var<T>& image, const ForwardContext& ctx);

    FlopBreakdown flops(const Shape& image) const;
    const NetworkConfig& config() const noexcept { return cfg_; }
    StateList<T> state();
    std::vector<Var<T>*> parameters();

    Encoder<T>& encoder() { return *encoder_; }
    BoundaryGenerator<T>& boundary() { return boundary_; }
    std::vector<DecoderStage<T>>& decoder() { return decoder_; }

private:
    void build(InitRng& rng);
    /// Skip feature for decoder level `level` (4 = stride 16 ... 1 = stride 2).
    static const Var<T>& skip_for(const EncoderOutput<T>& enc, int level);

    NetworkConfig cfg_;
    std::unique_ptr<Encoder<T>> encoder_;
    BoundaryGenerator<T> boundary_;
    std::vector<DecoderStage<T>> decoder_;
    Conv2d<T> head_;
};

/// Analytic FLOP count of the configured network at cfg.input_size with the
/// toy encoder, batch 1. Two FLOPs per multiply-add; see README for the
/// per-op conventions.
FlopBreakdown count_flops(const NetworkConfig& cfg);

}  // namespace bdg
