#ifndef MEMDEBLUR_MODEL_HPP
#define MEMDEBLUR_MODEL_HPP

#include <cstdint>

#include "memdeblur/config.hpp"
#include "memdeblur/deblur_branch.hpp"
#include "memdeblur/memory_codec.hpp"

namespace memdeblur {

// The full parameter set. One instance of each module is shared by all
// scales and, for the codec, by both directions.
template <typename T>
struct Model {
    ModelConfig cfg;
    ParamRegistry<T> params;

    Downsampler<T> downsampler;
    RecurrentCell<T> fwd_cell;
    RecurrentCell<T> bwd_cell;
    FusionLayer<T> fusion;
    Upsampler<T> upsampler;
    LatentEncoder<T> key_encoder;
    LatentEncoder<T> value_r_encoder;
    LatentEncoder<T> value_h_encoder;
    MemoryDecoder<T> decoder_r;
    MemoryDecoder<T> decoder_h;

    explicit Model(ModelConfig config, std::uint64_t seed = 0)
        : cfg(std::move(config)) {
        cfg.validate();
        Rng rng(seed ^ 0x6d656d6f72794221ULL);
        const int c = cfg.branch.base_channels;
        const int m = memory_channels();

        downsampler = Downsampler<T>(params, "downsampler", cfg.branch, rng);
        const int fwd_in = (cfg.drop_recurrent_carry ? 3 : 4) * c + 2 * m;
        fwd_cell = RecurrentCell<T>(params, "fwd_cell", fwd_in, c,
                                    cfg.branch.res_block_count, rng);
        bwd_cell = RecurrentCell<T>(params, "bwd_cell", 4 * c + m, c,
                                    cfg.branch.res_block_count, rng);
        fusion = FusionLayer<T>(params, "fusion", c, cfg.branch.fuse_kernel, rng);
        upsampler = Upsampler<T>(params, "upsampler", cfg.branch, rng);
        key_encoder = LatentEncoder<T>(params, "key_encoder", c, cfg.codec.key_channels,
                                       cfg.codec, rng);
        value_r_encoder = LatentEncoder<T>(params, "value_r_encoder", 2 * c,
                                           cfg.codec.value_channels, cfg.codec, rng);
        value_h_encoder = LatentEncoder<T>(params, "value_h_encoder", 2 * c,
                                           cfg.codec.value_channels, cfg.codec, rng);
        decoder_r = MemoryDecoder<T>(params, "decoder_r", cfg.codec, rng);
        decoder_h = MemoryDecoder<T>(params, "decoder_h", cfg.codec, rng);
    }

    // Channels of one decoded memory output m (both streams concatenated).
    int memory_channels() const { return 2 * cfg.codec.decoded_channels; }

    // Zero the final residual layer so the branch maps frames to themselves.
    void zero_final_layers() { upsampler.out.zero(); }
};

} // namespace memdeblur

#endif
