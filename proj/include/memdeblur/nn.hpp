#ifndef MEMDEBLUR_NN_HPP
#define MEMDEBLUR_NN_HPP

#include <string>
#include <utility>
#include <vector>

#include "memdeblur/ops.hpp"
#include "memdeblur/rng.hpp"

namespace memdeblur {

// Named parameter store. Registration order is fixed by construction order,
// which keeps checkpoints and optimizer state stable across runs.
template <typename T>
class ParamRegistry {
public:
    Var<T> add(const std::string& name, Tensor<T> init) {
        Var<T> v(std::move(init), true);
        items_.emplace_back(name, v);
        return v;
    }

    const std::vector<std::pair<std::string, Var<T>>>& items() const { return items_; }
    std::vector<std::pair<std::string, Var<T>>>& items() { return items_; }

    Var<T>* find(const std::string& name) {
        for (auto& [n, v] : items_)
            if (n == name) return &v;
        return nullptr;
    }

    std::size_t total_parameters() const {
        std::size_t n = 0;
        for (const auto& [_, v] : items_) n += v.value().numel();
        return n;
    }

    void zero_grad() {
        for (auto& [_, v] : items_) v.zero_grad();
    }

private:
    std::vector<std::pair<std::string, Var<T>>> items_;
};

namespace detail {

template <typename T>
Tensor<T> he_normal(std::vector<int> shape, int fan_in, Rng& rng) {
    Tensor<T> t(std::move(shape));
    const double stddev = std::sqrt(2.0 / fan_in);
    for (std::size_t i = 0; i < t.numel(); ++i)
        t[i] = static_cast<T>(rng.normal() * stddev);
    return t;
}

} // namespace detail

inline constexpr double kLeakySlope = 0.1;

template <typename T>
struct Conv2d {
    Var<T> w, b;
    int stride = 1, pad = 0;

    Conv2d() = default;
    Conv2d(ParamRegistry<T>& reg, const std::string& name, int c_in, int c_out, int k,
           int stride_, int pad_, Rng& rng, bool zero_init = false)
        : stride(stride_), pad(pad_) {
        Tensor<T> wt = zero_init ? Tensor<T>::zeros({c_out, c_in, k, k})
                                 : detail::he_normal<T>({c_out, c_in, k, k}, c_in * k * k, rng);
        w = reg.add(name + ".w", std::move(wt));
        b = reg.add(name + ".b", Tensor<T>::zeros({c_out}));
    }

    Var<T> operator()(const Var<T>& x) const { return conv2d(x, w, b, stride, pad); }

    void zero() {
        w.value().fill(T(0));
        b.value().fill(T(0));
    }
};

template <typename T>
struct ConvTranspose2d {
    Var<T> w, b;
    int stride = 2;

    ConvTranspose2d() = default;
    ConvTranspose2d(ParamRegistry<T>& reg, const std::string& name, int c_in, int c_out,
                    int k, int stride_, Rng& rng)
        : stride(stride_) {
        w = reg.add(name + ".w", detail::he_normal<T>({c_in, c_out, k, k}, c_in * k * k, rng));
        b = reg.add(name + ".b", Tensor<T>::zeros({c_out}));
    }

    Var<T> operator()(const Var<T>& x) const { return conv_transpose2d(x, w, b, stride); }
};

// conv-lrelu-conv with identity skip
template <typename T>
struct ResBlock {
    Conv2d<T> c1, c2;

    ResBlock() = default;
    ResBlock(ParamRegistry<T>& reg, const std::string& name, int channels, Rng& rng)
        : c1(reg, name + ".c1", channels, channels, 3, 1, 1, rng),
          c2(reg, name + ".c2", channels, channels, 3, 1, 1, rng) {}

    Var<T> operator()(const Var<T>& x) const {
        return add(x, c2(leaky_relu(c1(x), static_cast<T>(kLeakySlope))));
    }
};

// Densely connected conv layers, 1x1 local fusion, identity skip.
template <typename T>
struct ResidualDenseBlock {
    std::vector<Conv2d<T>> layers;
    Conv2d<T> fusion;

    ResidualDenseBlock() = default;
    ResidualDenseBlock(ParamRegistry<T>& reg, const std::string& name, int channels,
                       int growth, int layer_count, Rng& rng) {
        int c = channels;
        for (int i = 0; i < layer_count; ++i) {
            layers.emplace_back(reg, name + ".d" + std::to_string(i), c, growth, 3, 1, 1, rng);
            c += growth;
        }
        fusion = Conv2d<T>(reg, name + ".fusion", c, channels, 1, 1, 0, rng);
    }

    Var<T> operator()(const Var<T>& x) const {
        std::vector<Var<T>> feats{x};
        for (const auto& layer : layers) {
            Var<T> cat = feats.size() == 1 ? feats[0] : concat_channels(feats);
            feats.push_back(leaky_relu(layer(cat), static_cast<T>(kLeakySlope)));
        }
        return add(x, fusion(concat_channels(feats)));
    }
};

} // namespace memdeblur

#endif
