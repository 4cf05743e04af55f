#ifndef MEMDEBLUR_MEMORY_CODEC_HPP
#define MEMDEBLUR_MEMORY_CODEC_HPP

#include <optional>
#include <stdexcept>
#include <string>

#include "memdeblur/config.hpp"
#include "memdeblur/memory_bank.hpp"
#include "memdeblur/nn.hpp"

namespace memdeblur {

// Shared architecture for the key and value encoders: a strided entry
// convolution followed by residual blocks, each with its own parameters.
template <typename T>
struct LatentEncoder {
    Conv2d<T> entry;
    std::vector<ResBlock<T>> blocks;
    int stride = 4;

    LatentEncoder() = default;
    LatentEncoder(ParamRegistry<T>& reg, const std::string& name, int c_in, int c_out,
                  const CodecConfig& cfg, Rng& rng)
        : entry(reg, name + ".entry", c_in, c_out, cfg.encoder_stride, cfg.encoder_stride, 0,
                rng),
          stride(cfg.encoder_stride) {
        for (int i = 0; i < cfg.block_count; ++i)
            blocks.emplace_back(reg, name + ".rb" + std::to_string(i), c_out, rng);
    }

    Var<T> operator()(const Var<T>& x) const {
        if (x.value().dim(1) % stride != 0 || x.value().dim(2) % stride != 0)
            throw std::logic_error("latent encoder: input dims not divisible by stride");
        Var<T> y = leaky_relu(entry(x), static_cast<T>(kLeakySlope));
        for (const auto& b : blocks) y = b(y);
        return y;
    }
};

// Lifts a readout value back to feature resolution: residual blocks, a
// projection conv, and a pixel-shuffle upscale.
template <typename T>
struct MemoryDecoder {
    std::vector<ResBlock<T>> blocks;
    Conv2d<T> proj;
    int upscale = 4;
    int out_channels = 8;

    MemoryDecoder() = default;
    MemoryDecoder(ParamRegistry<T>& reg, const std::string& name, const CodecConfig& cfg,
                  Rng& rng)
        : upscale(cfg.decoder_upscale), out_channels(cfg.decoded_channels) {
        for (int i = 0; i < cfg.block_count; ++i)
            blocks.emplace_back(reg, name + ".rb" + std::to_string(i), cfg.value_channels, rng);
        proj = Conv2d<T>(reg, name + ".proj", cfg.value_channels,
                         cfg.decoded_channels * upscale * upscale, 3, 1, 1, rng);
        // start near-silent so untrained memory does not perturb the cells
        proj.w.value() *= T(0.1);
    }

    Var<T> operator()(const Var<T>& v) const {
        Var<T> y = v;
        for (const auto& b : blocks) y = b(y);
        return pixel_shuffle(proj(y), upscale);
    }
};

// k_i = K(x_i)
template <typename T>
MemoryKey<T> encode_key(const Var<T>& x, const LatentEncoder<T>& key_encoder) {
    return key_encoder(x);
}

// v_r = V_r([x, r]) with r the downsampled restored frame
template <typename T>
MemoryValue<T> encode_value_r(const Var<T>& x, const Var<T>& r,
                              const LatentEncoder<T>& value_r_encoder) {
    if (!x.value().same_shape(r.value()))
        throw ValidationError("encode_value_r: x and r shapes differ");
    return value_r_encoder(concat_channels<T>({x, r}));
}

// v_h = V_h([x, h])
template <typename T>
MemoryValue<T> encode_value_h(const Var<T>& x, const Var<T>& h,
                              const LatentEncoder<T>& value_h_encoder) {
    if (!x.value().same_shape(h.value()))
        throw ValidationError("encode_value_h: x and h shapes differ");
    return value_h_encoder(concat_channels<T>({x, h}));
}

// m = [G_r(v_r), G_h(v_h)] at feature resolution. When v_r is absent
// (backward memory) the r half is zero-filled so the channel contract stays
// fixed.
template <typename T>
Var<T> decode_memory(const std::optional<MemoryValue<T>>& v_r, const MemoryValue<T>& v_h,
                     const MemoryDecoder<T>& decoder_r, const MemoryDecoder<T>& decoder_h) {
    Var<T> m_h = decoder_h(v_h);
    Var<T> m_r;
    if (v_r) {
        if (v_r->value().dim(1) != v_h.value().dim(1) ||
            v_r->value().dim(2) != v_h.value().dim(2))
            throw ValidationError("decode_memory: value spatial dims differ");
        m_r = decoder_r(*v_r);
    } else {
        m_r = zeros_var<T>(
            {decoder_r.out_channels, m_h.value().dim(1), m_h.value().dim(2)});
    }
    return concat_channels<T>({m_r, m_h});
}

} // namespace memdeblur

#endif
