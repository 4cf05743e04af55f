#ifndef MEMDEBLUR_DEBLUR_BRANCH_HPP
#define MEMDEBLUR_DEBLUR_BRANCH_HPP

#include <stdexcept>
#include <string>
#include <vector>

#include "memdeblur/config.hpp"
#include "memdeblur/nn.hpp"

namespace memdeblur {

// D: learned encoding at 1/stride resolution. Strided entry convs, then
// residual dense blocks at feature resolution.
template <typename T>
struct Downsampler {
    std::vector<Conv2d<T>> entries; // one stride-2 conv per halving
    std::vector<ResidualDenseBlock<T>> blocks;
    int stride = 4;

    Downsampler() = default;
    Downsampler(ParamRegistry<T>& reg, const std::string& name, const BranchConfig& cfg,
                Rng& rng)
        : stride(cfg.downsample_stride) {
        int c_in = 3;
        for (int s = stride; s > 1; s /= 2) {
            entries.emplace_back(reg, name + ".entry" + std::to_string(entries.size()), c_in,
                                 cfg.base_channels, 3, 2, 1, rng);
            c_in = cfg.base_channels;
        }
        for (int i = 0; i < cfg.dense_block_count; ++i)
            blocks.emplace_back(reg, name + ".rdb" + std::to_string(i), cfg.base_channels,
                                cfg.base_channels, 2, rng);
    }

    Var<T> operator()(const Var<T>& frame) const {
        if (frame.value().dim(1) % stride != 0 || frame.value().dim(2) % stride != 0)
            throw std::logic_error("downsample: frame dims not divisible by stride");
        Var<T> y = frame;
        for (const auto& e : entries) y = leaky_relu(e(y), static_cast<T>(kLeakySlope));
        for (const auto& b : blocks) y = b(y);
        return y;
    }
};

// F_f / F_b: reduce the concatenated inputs with a 1x1 conv, then residual
// blocks. The input arity is fixed at construction.
template <typename T>
struct RecurrentCell {
    Conv2d<T> reduce;
    std::vector<ResBlock<T>> blocks;

    RecurrentCell() = default;
    RecurrentCell(ParamRegistry<T>& reg, const std::string& name, int c_in, int c_out,
                  int res_block_count, Rng& rng)
        : reduce(reg, name + ".reduce", c_in, c_out, 1, 1, 0, rng) {
        for (int i = 0; i < res_block_count; ++i)
            blocks.emplace_back(reg, name + ".rb" + std::to_string(i), c_out, rng);
    }

    Var<T> operator()(const std::vector<Var<T>>& inputs) const {
        const auto& s0 = inputs.front().value();
        for (const auto& in : inputs)
            if (in.value().dim(1) != s0.dim(1) || in.value().dim(2) != s0.dim(2))
                throw ValidationError("recurrent cell: input spatial dims differ");
        Var<T> y = leaky_relu(reduce(concat_channels(inputs)), static_cast<T>(kLeakySlope));
        for (const auto& b : blocks) y = b(y);
        return y;
    }
};

// h = conv([h_f, h_b]); one convolutional layer.
template <typename T>
struct FusionLayer {
    Conv2d<T> conv;

    FusionLayer() = default;
    FusionLayer(ParamRegistry<T>& reg, const std::string& name, int channels, int kernel,
                Rng& rng)
        : conv(reg, name + ".conv", 2 * channels, channels, kernel, 1, kernel / 2, rng) {}

    Var<T> operator()(const Var<T>& h_f, const Var<T>& h_b) const {
        if (!h_f.value().same_shape(h_b.value()))
            throw ValidationError("fuse: hidden state shapes differ");
        return conv(concat_channels<T>({h_f, h_b}));
    }
};

// U: transposed convolutions back to frame resolution plus a global residual
// connection, so a zeroed final layer makes the whole branch the identity.
// The default init shrinks the final conv instead of zeroing it: the output
// starts near the identity while gradients still reach the rest of the net.
template <typename T>
struct Upsampler {
    std::vector<ConvTranspose2d<T>> ups;
    Conv2d<T> out;

    Upsampler() = default;
    Upsampler(ParamRegistry<T>& reg, const std::string& name, const BranchConfig& cfg,
              Rng& rng, bool zero_init_final = false) {
        int c = cfg.base_channels;
        for (int s = cfg.downsample_stride; s > 1; s /= 2)
            ups.emplace_back(reg, name + ".up" + std::to_string(ups.size()), c, c, 2, 2, rng);
        out = Conv2d<T>(reg, name + ".out", c, 3, 3, 1, 1, rng, zero_init_final);
        if (!zero_init_final) out.w.value() *= T(0.1);
    }

    Var<T> operator()(const Var<T>& h, const Var<T>& frame) const {
        Var<T> y = h;
        for (const auto& u : ups) y = leaky_relu(u(y), static_cast<T>(kLeakySlope));
        Var<T> correction = out(y);
        if (!correction.value().same_shape(frame.value()))
            throw ValidationError("upsample: correction dims differ from frame");
        return add(frame, correction);
    }
};

template <typename T>
Var<T> downsample(const Var<T>& frame, const Downsampler<T>& d) {
    return d(frame);
}

// Eq-10 style backward step over [x_i, x_next, h_next_b, m_b, x_coarse_up].
template <typename T>
Var<T> backward_cell(const Var<T>& x_i, const Var<T>& x_next, const Var<T>& h_next_b,
                     const Var<T>& m_b, const Var<T>& x_coarse_up,
                     const RecurrentCell<T>& cell) {
    return cell({x_i, x_next, h_next_b, m_b, x_coarse_up});
}

// Eq-11/13 style forward step. The recurrent carry h_prev_f is dropped when
// the cell was built with drop_recurrent_carry.
template <typename T>
Var<T> forward_cell(const Var<T>& x_i, const Var<T>& x_prev, const Var<T>& h_prev_f,
                    const Var<T>& m_f, const Var<T>& m_b, const Var<T>& x_coarse_up,
                    const RecurrentCell<T>& cell, bool drop_recurrent_carry = false) {
    if (drop_recurrent_carry) return cell({x_i, x_prev, m_f, m_b, x_coarse_up});
    return cell({x_i, x_prev, h_prev_f, m_f, m_b, x_coarse_up});
}

template <typename T>
Var<T> fuse(const Var<T>& h_f, const Var<T>& h_b, const FusionLayer<T>& fusion) {
    return fusion(h_f, h_b);
}

template <typename T>
Var<T> upsample(const Var<T>& h, const Var<T>& frame, const Upsampler<T>& u) {
    return u(h, frame);
}

} // namespace memdeblur

#endif
