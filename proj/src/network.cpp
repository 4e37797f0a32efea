#include "bdg/network.hpp"

#include <algorithm>
#include <stdexcept>

namespace bdg {

namespace {

std::int64_t numel(const Shape& s) { return static_cast<std::int64_t>(s.numel()); }

Shape at_stride(const Shape& image, int channels, int stride) {
    return Shape{image.n, channels, image.h / stride, image.w / stride};
}

/// Output stride of decoder stage `i` (0 = deepest).
int stage_level(int i) { return 4 - i; }

template <typename T>
Var<T> detached(const Var<T>& v) {
    return Var<T>(v.value(), false);
}

}  // namespace

bool NetworkConfig::has_skip(int level) const {
    return std::find(skip_levels.begin(), skip_levels.end(), level) != skip_levels.end();
}

int NetworkConfig::bdgd_a_stages() const { return static_cast<int>(skip_levels.size()); }

void NetworkConfig::validate() const {
    if (decoder_channels < 1) throw std::invalid_argument("decoder_channels must be >= 1");
    if (input_size < 32 || input_size % 32 != 0) {
        throw std::invalid_argument("input_size must be a positive multiple of 32, got " +
                                    std::to_string(input_size));
    }
    if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be > 0");
    if (skip_levels.empty()) throw std::invalid_argument("skip_levels must not be empty");
    for (std::size_t i = 0; i < skip_levels.size(); ++i) {
        const int level = skip_levels[i];
        if (level < 1 || level > 4) {
            throw std::invalid_argument("skip level " + std::to_string(level) + " outside 1..4");
        }
        for (std::size_t j = 0; j < i; ++j) {
            if (skip_levels[j] == level) {
                throw std::invalid_argument("duplicate skip level " + std::to_string(level));
            }
        }
    }
}

std::string to_string(EncoderKind kind) { return kind == EncoderKind::toy ? "toy" : "external"; }

EncoderKind encoder_kind_from_string(const std::string& s) {
    if (s == "toy") return EncoderKind::toy;
    if (s == "external") return EncoderKind::external;
    throw std::invalid_argument("unknown encoder kind '" + s + "'");
}

// ------------------------------------------------------------ ToyEncoder

template <typename T>
ToyEncoder<T>::ToyEncoder(InitRng& rng) {
    const auto g = ConvGeometry::square(3);
    const auto g2 = ConvGeometry::square(3, 2);
    stem1_ = ConvBlock<T>(3, 16, g2, rng);
    stem2_ = ConvBlock<T>(16, 16, g2, rng);
    const auto ch = stage_channels();
    stages_[0] = {ConvBlock<T>(16, 16, g, rng), ConvBlock<T>(16, 16, g, rng)};
    for (int s = 1; s < 4; ++s) {
        stages_[s] = {ConvBlock<T>(ch[s - 1], ch[s], g2, rng), ConvBlock<T>(ch[s], ch[s], g, rng)};
    }
}

template <typename T>
EncoderOutput<T> ToyEncoder<T>::forward(const Var<T>& image, const ForwardContext& ctx) {
    EncoderOutput<T> out;
    out.stem = stem1_.forward(image, ctx);
    Var<T> x = stem2_.forward(out.stem, ctx);
    for (int s = 0; s < 4; ++s) {
        x = stages_[s][1].forward(stages_[s][0].forward(x, ctx), ctx);
        out.stages[s] = x;
    }
    return out;
}

template <typename T>
std::int64_t ToyEncoder<T>::flops(const Shape& image) const {
    Shape s = image;
    std::int64_t total = stem1_.flops(s);
    s = stem1_.output_shape(s);
    total += stem2_.flops(s);
    s = stem2_.output_shape(s);
    for (const auto& stage : stages_) {
        for (const auto& block : stage) {
            total += block.flops(s);
            s = block.output_shape(s);
        }
    }
    return total;
}

template <typename T>
void ToyEncoder<T>::collect(const std::string& prefix, StateList<T>& out) {
    stem1_.collect(prefix + "stem1.", out);
    stem2_.collect(prefix + "stem2.", out);
    for (int s = 0; s < 4; ++s) {
        for (int b = 0; b < 2; ++b) {
            stages_[s][b].collect(prefix + "stage" + std::to_string(s + 1) + "." + std::to_string(b) + ".", out);
        }
    }
}

// ----------------------------------------------------- BoundaryGenerator

template <typename T>
BoundaryGenerator<T>::BoundaryGenerator(const std::array<int, 4>& ch, int c, InitRng& rng)
    : reduce2(ch[1], c, rng),
      reduce3(ch[2], c, rng),
      reduce4(ch[3], c, rng),
      agg_low(c, rng),
      agg_high(c, rng),
      head(c, 1, ConvGeometry::square(1), true, rng) {}

template <typename T>
Var<T> BoundaryGenerator<T>::forward(const Var<T>& e2, const Var<T>& e3, const Var<T>& e4,
                                     const ForwardContext& ctx) {
    const Var<T> r2 = reduce2.forward(e2, ctx);
    const Var<T> r3 = reduce3.forward(e3, ctx);
    const Var<T> r4 = reduce4.forward(e4, ctx);
    const Var<T> first = agg_low.forward(r3, r4, ctx);
    const Var<T> second = agg_high.forward(r2, first, ctx);
    const Var<T> out = ops::sigmoid(ops::upsample(head.forward(second), 8));
    if (ctx.trace != nullptr) {
        ctx.trace->aggregation_low = first.shape();
        ctx.trace->aggregation_high = second.shape();
        ctx.trace->bdm = out.shape();
    }
    return out;
}

template <typename T>
std::int64_t BoundaryGenerator<T>::flops(const Shape& e2, const Shape& e3, const Shape& e4) const {
    const int c = agg_low.channels;
    Shape s2 = e2, s3 = e3;
    s2.c = c;
    s3.c = c;
    std::int64_t total = reduce2.flops(e2) + reduce3.flops(e3) + reduce4.flops(e4);
    total += agg_low.flops(s3) + agg_high.flops(s2);
    const Shape full{e2.n, 1, e2.h * 8, e2.w * 8};
    total += head.flops(s2) + 8 * numel(full) + numel(full);
    return total;
}

template <typename T>
std::int64_t BoundaryGenerator<T>::parameter_count() const {
    return reduce2.parameter_count() + reduce3.parameter_count() + reduce4.parameter_count() +
           agg_low.parameter_count() + agg_high.parameter_count() + head.parameter_count();
}

template <typename T>
void BoundaryGenerator<T>::collect(const std::string& prefix, StateList<T>& out) {
    reduce2.collect(prefix + "reduce2.", out);
    reduce3.collect(prefix + "reduce3.", out);
    reduce4.collect(prefix + "reduce4.", out);
    agg_low.collect(prefix + "agg_low.", out);
    agg_high.collect(prefix + "agg_high.", out);
    head.collect(prefix + "head.", out);
}

// ---------------------------------------------------------------- BDGNet

template <typename T>
BDGNet<T>::BDGNet(NetworkConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (cfg_.encoder_kind != EncoderKind::toy) {
        throw std::invalid_argument("an external encoder must be supplied explicitly");
    }
    InitRng rng(seed);
    encoder_ = std::make_unique<ToyEncoder<T>>(rng);
    build(rng);
}

template <typename T>
BDGNet<T>::BDGNet(NetworkConfig cfg, std::unique_ptr<Encoder<T>> encoder, std::uint64_t seed)
    : cfg_(std::move(cfg)), encoder_(std::move(encoder)) {
    cfg_.validate();
    if (!encoder_) throw std::invalid_argument("encoder must not be null");
    InitRng rng(seed);
    build(rng);
}

template <typename T>
void BDGNet<T>::build(InitRng& rng) {
    const int c = cfg_.decoder_channels;
    const auto ch = encoder_->stage_channels();
    if (cfg_.use_bdgm) boundary_ = BoundaryGenerator<T>(ch, c, rng);
    const std::array<int, 5> skip_channels{0, encoder_->stem_channels(), ch[0], ch[1], ch[2]};
    for (int i = 0; i < 4; ++i) {
        const int level = stage_level(i);
        const int prev = i == 0 ? ch[3] : c;
        const bool skip = cfg_.has_skip(level);
        if (!cfg_.use_bdgd) {
            decoder_.emplace_back(PlainDecoder<T>(skip ? skip_channels[level] : 0, prev, c, rng));
        } else if (skip) {
            decoder_.emplace_back(GuidedDecoderA<T>(skip_channels[level], prev, c, rng));
        } else {
            decoder_.emplace_back(GuidedDecoderB<T>(prev, c, rng));
        }
    }
    head_ = Conv2d<T>(c, 1, ConvGeometry::square(1), true, rng);
}

template <typename T>
const Var<T>& BDGNet<T>::skip_for(const EncoderOutput<T>& enc, int level) {
    return level == 1 ? enc.stem : enc.stages[level - 2];
}

template <typename T>
EncoderOutput<T> BDGNet<T>::encode(const Var<T>& image, const ForwardContext& ctx) {
    const Shape& s = image.shape();
    if (s.c != 3 || s.h % 32 != 0 || s.w % 32 != 0 || s.h < 32 || s.w < 32) {
        throw std::invalid_argument("encoder input must be (B,3,H,W) with H, W multiples of 32, got " + s.str());
    }
    EncoderOutput<T> enc = encoder_->forward(image, ctx);
    const auto ch = encoder_->stage_channels();
    for (int i = 0; i < 4; ++i) {
        const Shape expect = at_stride(s, ch[i], 4 << i);
        if (enc.stages[i].shape() != expect) {
            throw std::logic_error("encoder stage " + std::to_string(i + 1) + " has shape " +
                                   enc.stages[i].shape().str() + ", expected " + expect.str());
        }
    }
    if (ctx.trace != nullptr) {
        ctx.trace->encoder_stages.clear();
        for (const auto& st : enc.stages) ctx.trace->encoder_stages.push_back(st.shape());
    }
    return enc;
}

template <typename T>
SegmentationOutput<T> BDGNet<T>::forward(const Var<T>& image, const ForwardContext& ctx) {
    const Shape& s = image.shape();
    const EncoderOutput<T> enc = encode(image, ctx);

    SegmentationOutput<T> out;
    Var<T> gate;
    if (cfg_.use_bdgm) {
        out.bdm = boundary_.forward(enc.stages[1], enc.stages[2], enc.stages[3], ctx);
        gate = cfg_.gate_gradients ? out.bdm : detached(out.bdm);
    } else {
        out.has_bdm = false;
        gate = Var<T>(Tensor<T>(Shape{s.n, 1, s.h, s.w}, T{1}), false);
    }

    if (ctx.trace != nullptr) ctx.trace->decoder_stages.clear();
    Var<T> d = enc.stages[3];
    for (int i = 0; i < 4; ++i) {
        const int level = stage_level(i);
        const Var<T>* skip = cfg_.has_skip(level) ? &skip_for(enc, level) : nullptr;
        d = std::visit(
            [&](auto& stage) -> Var<T> {
                using Stage = std::decay_t<decltype(stage)>;
                if constexpr (std::is_same_v<Stage, GuidedDecoderA<T>>) {
                    return stage.forward(*skip, d, gate, ctx);
                } else if constexpr (std::is_same_v<Stage, GuidedDecoderB<T>>) {
                    return stage.forward(d, gate, ctx);
                } else {
                    return stage.forward(skip, d, ctx);
                }
            },
            decoder_[i]);
        if (ctx.trace != nullptr) ctx.trace->decoder_stages.push_back(d.shape());
    }
    out.logits = ops::upsample(head_.forward(d), 2);
    return out;
}

template <typename T>
FlopBreakdown BDGNet<T>::flops(const Shape& image) const {
    FlopBreakdown fb;
    const auto ch = encoder_->stage_channels();
    const int c = cfg_.decoder_channels;
    fb.encoder = encoder_->flops(image);
    const Shape gate{image.n, 1, image.h, image.w};
    if (cfg_.use_bdgm) {
        fb.boundary = boundary_.flops(at_stride(image, ch[1], 8), at_stride(image, ch[2], 16),
                                      at_stride(image, ch[3], 32));
    }
    const std::array<int, 5> skip_channels{0, encoder_->stem_channels(), ch[0], ch[1], ch[2]};
    Shape prev = at_stride(image, ch[3], 32);
    for (int i = 0; i < 4; ++i) {
        const int level = stage_level(i);
        const Shape skip = at_stride(image, skip_channels[level], 1 << level);
        const bool has = cfg_.has_skip(level);
        fb.decoder.push_back(std::visit(
            [&](const auto& stage) -> std::int64_t {
                using Stage = std::decay_t<decltype(stage)>;
                if constexpr (std::is_same_v<Stage, GuidedDecoderA<T>>) {
                    return stage.flops(skip, prev, gate);
                } else if constexpr (std::is_same_v<Stage, GuidedDecoderB<T>>) {
                    return stage.flops(prev, gate);
                } else {
                    return stage.flops(has ? &skip : nullptr, prev);
                }
            },
            decoder_[i]));
        prev = at_stride(image, c, 1 << level);
    }
    fb.head = head_.flops(prev) + 8 * numel(gate);
    return fb;
}

template <typename T>
StateList<T> BDGNet<T>::state() {
    StateList<T> out;
    encoder_->collect("encoder.", out);
    if (cfg_.use_bdgm) boundary_.collect("boundary.", out);
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
        const std::string prefix = "decoder" + std::to_string(i) + ".";
        std::visit([&](auto& stage) { stage.collect(prefix, out); }, decoder_[i]);
    }
    head_.collect("head.", out);
    return out;
}

template <typename T>
std::vector<Var<T>*> BDGNet<T>::parameters() {
    std::vector<Var<T>*> out;
    for (const auto& e : state()) {
        if (e.var != nullptr) out.push_back(e.var);
    }
    return out;
}

FlopBreakdown count_flops(const NetworkConfig& cfg) {
    NetworkConfig c = cfg;
    c.encoder_kind = EncoderKind::toy;
    const BDGNet<float> net(c, 0);
    return net.flops(Shape{1, 3, cfg.input_size, cfg.input_size});
}

template class ToyEncoder<float>;
template class ToyEncoder<double>;
template class BoundaryGenerator<float>;
template class BoundaryGenerator<double>;
template class BDGNet<float>;
template class BDGNet<double>;

}  // namespace bdg
