#ifndef MEMDEBLUR_EVALUATION_HPP
#define MEMDEBLUR_EVALUATION_HPP

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "memdeblur/config.hpp"
#include "memdeblur/memory_bank.hpp"
#include "memdeblur/parallel.hpp"
#include "memdeblur/pipeline.hpp"
#include "memdeblur/png_io.hpp"

namespace memdeblur {

// ---------------------------------------------------------------------------
// quality metrics
// ---------------------------------------------------------------------------

// 10*log10(peak^2 / MSE), channels pooled into one MSE. Identical frames
// report +infinity rather than erroring.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak = 1.0) {
    if (!a.same_shape(b)) throw ValidationError("psnr: shape mismatch");
    if (!(peak > 0)) throw ValidationError("psnr: peak must be positive");
    double mse = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse == 0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

namespace detail {

template <typename T>
std::vector<double> luminance(const Tensor<T>& frame) {
    const int h = frame.dim(1), w = frame.dim(2);
    std::vector<double> y(static_cast<std::size_t>(h) * w);
    if (frame.dim(0) == 3) {
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c)
                y[static_cast<std::size_t>(r) * w + c] = 0.299 * frame.at(0, r, c) +
                                                         0.587 * frame.at(1, r, c) +
                                                         0.114 * frame.at(2, r, c);
    } else {
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c)
                y[static_cast<std::size_t>(r) * w + c] = frame.at(0, r, c);
    }
    return y;
}

inline std::vector<double> gaussian_kernel(int window, double sigma) {
    std::vector<double> k(static_cast<std::size_t>(window));
    const int half = window / 2;
    double sum = 0;
    for (int i = 0; i < window; ++i) {
        const double d = i - half;
        k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * sigma * sigma));
        sum += k[static_cast<std::size_t>(i)];
    }
    for (auto& v : k) v /= sum;
    return k;
}

// separable valid-region Gaussian filter on a [h,w] plane
inline std::vector<double> gauss_filter_valid(const std::vector<double>& img, int h, int w,
                                              const std::vector<double>& k) {
    const int win = static_cast<int>(k.size());
    const int oh = h - win + 1, ow = w - win + 1;
    std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0;
            for (int i = 0; i < win; ++i)
                acc += k[static_cast<std::size_t>(i)] * img[static_cast<std::size_t>(y) * w + x + i];
            tmp[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0;
            for (int i = 0; i < win; ++i)
                acc += k[static_cast<std::size_t>(i)] * tmp[static_cast<std::size_t>(y + i) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    return out;
}

} // namespace detail

// Mean local SSIM over the luminance plane, Gaussian-weighted windows
// (11x11, sigma 1.5 by default), k1=0.01, k2=0.03, dynamic range 1.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, int window = 11, double k1 = 0.01,
            double k2 = 0.03) {
    if (!a.same_shape(b)) throw ValidationError("ssim: shape mismatch");
    if (window % 2 != 1) throw UsageError("ssim: window must be odd");
    const int h = a.dim(1), w = a.dim(2);
    if (h < window || w < window) throw UsageError("ssim: frame smaller than window");

    const auto ya = detail::luminance(a);
    const auto yb = detail::luminance(b);
    const auto kern = detail::gaussian_kernel(window, 1.5);

    std::vector<double> aa(ya.size()), bb(yb.size()), ab(ya.size());
    for (std::size_t i = 0; i < ya.size(); ++i) {
        aa[i] = ya[i] * ya[i];
        bb[i] = yb[i] * yb[i];
        ab[i] = ya[i] * yb[i];
    }
    const auto mu_a = detail::gauss_filter_valid(ya, h, w, kern);
    const auto mu_b = detail::gauss_filter_valid(yb, h, w, kern);
    const auto s_aa = detail::gauss_filter_valid(aa, h, w, kern);
    const auto s_bb = detail::gauss_filter_valid(bb, h, w, kern);
    const auto s_ab = detail::gauss_filter_valid(ab, h, w, kern);

    const double c1 = k1 * k1, c2 = k2 * k2; // range L = 1
    double total = 0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double va = s_aa[i] - mu_a[i] * mu_a[i];
        const double vb = s_bb[i] - mu_b[i] * mu_b[i];
        const double cov = s_ab[i] - mu_a[i] * mu_b[i];
        total += ((2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2)) /
                 ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
    }
    return total / static_cast<double>(mu_a.size());
}

struct MetricReport {
    double psnr_db = 0;
    double ssim_value = 0;
    std::vector<double> per_frame_psnr;
    std::vector<double> per_frame_ssim;
};

template <typename T>
MetricReport evaluate_sequence(const std::vector<Tensor<T>>& restored,
                               const std::vector<Tensor<T>>& reference) {
    if (restored.size() != reference.size())
        throw ValidationError("evaluate_sequence: length mismatch");
    if (restored.empty()) throw UsageError("evaluate_sequence: empty sequences");
    MetricReport rep;
    rep.per_frame_psnr.resize(restored.size());
    rep.per_frame_ssim.resize(restored.size());
    detail::parallel_for(static_cast<int>(restored.size()), [&](int i) {
        const auto idx = static_cast<std::size_t>(i);
        rep.per_frame_psnr[idx] = psnr(restored[idx], reference[idx]);
        rep.per_frame_ssim[idx] = ssim(restored[idx], reference[idx]);
    });
    double ps = 0, ss = 0;
    for (double v : rep.per_frame_psnr) ps += v;
    for (double v : rep.per_frame_ssim) ss += v;
    rep.psnr_db = ps / static_cast<double>(restored.size());
    rep.ssim_value = ss / static_cast<double>(restored.size());
    return rep;
}

// ---------------------------------------------------------------------------
// compute accounting
// ---------------------------------------------------------------------------

struct ComputeProfile {
    double gmacs = 0;
    long long params = 0;
    double wall_seconds = 0;
    std::map<std::string, double> breakdown; // gmacs per module
};

namespace detail {

struct MacCounter {
    std::map<std::string, double>* breakdown;
    void add(const std::string& key, double macs) { (*breakdown)[key] += macs; }
};

inline double conv_macs(int cin, int cout, int k, int ho, int wo) {
    return static_cast<double>(cin) * cout * k * k * ho * wo;
}

// Parameter count of one conv layer (weights + bias).
inline long long conv_params(int cin, int cout, int k) {
    return static_cast<long long>(cin) * cout * k * k + cout;
}

} // namespace detail

// Analytic MAC/parameter counts walking the same schedule as
// restore_sequence: per scale, a backward then a forward sweep, with
// period-gated writes and FIFO eviction governing the location count P seen
// by each readout.
inline ComputeProfile count_macs(const ModelConfig& cfg, int height, int width, int n) {
    cfg.validate();
    if (n < 1) throw UsageError("count_macs: frame count must be >= 1");
    ComputeProfile prof;
    detail::MacCounter mc{&prof.breakdown};

    const int c = cfg.branch.base_channels;
    const int ck = cfg.codec.key_channels;
    const int cv = cfg.codec.value_channels;
    const int cg = cfg.codec.decoded_channels;
    const int up2 = cfg.codec.decoder_upscale * cfg.codec.decoder_upscale;
    const int mult = cfg.frame_stride();

    // --- parameter count (mirrors Model construction) ---
    long long params = 0;
    {
        int cin = 3;
        for (int s = cfg.branch.downsample_stride; s > 1; s /= 2) {
            params += detail::conv_params(cin, c, 3);
            cin = c;
        }
        for (int i = 0; i < cfg.branch.dense_block_count; ++i) {
            params += detail::conv_params(c, c, 3) + detail::conv_params(2 * c, c, 3) +
                      detail::conv_params(3 * c, c, 1);
        }
        const int m = 2 * cg;
        const int fwd_in = (cfg.drop_recurrent_carry ? 3 : 4) * c + 2 * m;
        params += detail::conv_params(fwd_in, c, 1);
        params += detail::conv_params(4 * c + m, c, 1);
        // each cell owns res_block_count blocks of two 3x3 convs
        params += 2LL * cfg.branch.res_block_count * 2LL * detail::conv_params(c, c, 3);
        params += detail::conv_params(2 * c, c, cfg.branch.fuse_kernel);
        for (int s = cfg.branch.downsample_stride; s > 1; s /= 2)
            params += detail::conv_params(c, c, 2);
        params += detail::conv_params(c, 3, 3);
        params += detail::conv_params(c, ck, cfg.codec.encoder_stride) +
                  cfg.codec.block_count * 2LL * detail::conv_params(ck, ck, 3);
        params += 2 * (detail::conv_params(2 * c, cv, cfg.codec.encoder_stride) +
                       cfg.codec.block_count * 2LL * detail::conv_params(cv, cv, 3));
        params += 2 * (cfg.codec.block_count * 2LL * detail::conv_params(cv, cv, 3) +
                       detail::conv_params(cv, cg * up2, 3));
    }
    prof.params = params;

    // --- MAC schedule ---
    const auto downsampler_macs = [&](int h, int w) {
        double macs = 0;
        int cin = 3, hh = h, ww = w;
        for (int s = cfg.branch.downsample_stride; s > 1; s /= 2) {
            hh /= 2;
            ww /= 2;
            macs += detail::conv_macs(cin, c, 3, hh, ww);
            cin = c;
        }
        for (int i = 0; i < cfg.branch.dense_block_count; ++i)
            macs += detail::conv_macs(c, c, 3, hh, ww) + detail::conv_macs(2 * c, c, 3, hh, ww) +
                    detail::conv_macs(3 * c, c, 1, hh, ww);
        return macs;
    };
    const auto resblocks_macs = [&](int ch, int count, int h, int w) {
        return count * 2.0 * detail::conv_macs(ch, ch, 3, h, w);
    };
    const auto cell_macs = [&](int cin, int fh, int fw) {
        return detail::conv_macs(cin, c, 1, fh, fw) +
               resblocks_macs(c, cfg.branch.res_block_count, fh, fw);
    };
    const auto upsampler_macs = [&](int fh, int fw, int h, int w) {
        double macs = 0;
        int hh = fh, ww = fw;
        for (int s = cfg.branch.downsample_stride; s > 1; s /= 2) {
            macs += detail::conv_macs(c, c, 2, hh, ww); // per input position
            hh *= 2;
            ww *= 2;
        }
        macs += detail::conv_macs(c, 3, 3, h, w);
        return macs;
    };
    const auto key_encoder_macs = [&](int hk, int wk) {
        return detail::conv_macs(c, ck, cfg.codec.encoder_stride, hk, wk) +
               resblocks_macs(ck, cfg.codec.block_count, hk, wk);
    };
    const auto value_encoder_macs = [&](int hk, int wk) {
        return detail::conv_macs(2 * c, cv, cfg.codec.encoder_stride, hk, wk) +
               resblocks_macs(cv, cfg.codec.block_count, hk, wk);
    };
    const auto decoder_macs = [&](int hk, int wk) {
        return resblocks_macs(cv, cfg.codec.block_count, hk, wk) +
               detail::conv_macs(cv, cg * up2, 3, hk, wk);
    };

    const int m = 2 * cg;
    std::deque<int> fwd_locs, bwd_locs; // per-entry location counts, write order
    const auto locs_total = [](const std::deque<int>& d) {
        double p = 0;
        for (int v : d) p += v;
        return p;
    };
    const auto push_entry = [&](std::deque<int>& d, int locs) {
        d.push_back(locs);
        while (static_cast<int>(d.size()) > cfg.capacity) d.pop_front();
    };

    for (int s = cfg.scales; s >= 1; --s) {
        int h = height, w = width;
        for (int i = 1; i < s; ++i) {
            h = (h + 1) / 2;
            w = (w + 1) / 2;
        }
        h += (mult - h % mult) % mult;
        w += (mult - w % mult) % mult;
        const int fh = h / cfg.branch.downsample_stride;
        const int fw = w / cfg.branch.downsample_stride;
        const int hk = fh / cfg.codec.encoder_stride;
        const int wk = fw / cfg.codec.encoder_stride;
        const int q = hk * wk;

        mc.add("downsampler", n * downsampler_macs(h, w)); // blurry features
        if (cfg.use_memory) mc.add("key_encoder", n * key_encoder_macs(hk, wk));

        // backward sweep
        for (int i = n; i >= 1; --i) {
            if (cfg.use_memory) {
                const double p = locs_total(bwd_locs);
                if (p > 0) {
                    mc.add("memory_attention", q * p * ck + q * p * cv);
                    mc.add("memory_decoders", decoder_macs(hk, wk));
                }
            }
            mc.add("cells", cell_macs(4 * c + m, fh, fw));
            if (cfg.use_memory && should_memorize(i, s, cfg.periods)) {
                mc.add("value_encoders", value_encoder_macs(hk, wk));
                push_entry(bwd_locs, q);
            }
        }

        // forward sweep
        const int fwd_in = (cfg.drop_recurrent_carry ? 3 : 4) * c + 2 * m;
        for (int i = 1; i <= n; ++i) {
            if (cfg.use_memory) {
                const double pf = locs_total(fwd_locs);
                if (pf > 0) {
                    mc.add("memory_attention", q * pf * ck + 2.0 * q * pf * cv);
                    mc.add("memory_decoders", 2.0 * decoder_macs(hk, wk));
                }
                const double pb = locs_total(bwd_locs);
                if (pb > 0) {
                    mc.add("memory_attention", q * pb * ck + q * pb * cv);
                    mc.add("memory_decoders", decoder_macs(hk, wk));
                }
            }
            mc.add("cells", cell_macs(fwd_in, fh, fw));
            mc.add("fusion", detail::conv_macs(2 * c, c, cfg.branch.fuse_kernel, fh, fw));
            mc.add("upsampler", upsampler_macs(fh, fw, h, w));
            mc.add("downsampler", downsampler_macs(h, w)); // restored features
            if (cfg.use_memory && should_memorize(i, s, cfg.periods)) {
                mc.add("value_encoders", 2.0 * value_encoder_macs(hk, wk));
                push_entry(fwd_locs, q);
            }
        }
    }

    double total = 0;
    for (auto& [k, v] : prof.breakdown) {
        v /= 1e9;
        total += v;
    }
    prof.gmacs = total;
    return prof;
}

// ---------------------------------------------------------------------------
// attention visualization
// ---------------------------------------------------------------------------

// Render the attention row of one query location as per-memory-frame
// heatmaps. For each entry this writes `<prefix>_entryK_heat.png` at the
// memory frame's resolution (nearest upscale, so the argmax survives) and
// `<prefix>_entryK_pair.png` with the matched frame alongside.
template <typename T>
std::vector<std::string> attention_heatmap(const AttentionTrace<T>& trace, int query_y,
                                           int query_x, const std::string& prefix) {
    if (query_y < 0 || query_y >= trace.query_h || query_x < 0 || query_x >= trace.query_w)
        throw UsageError("attention_heatmap: query location outside the key grid");
    const int q = query_y * trace.query_w + query_x;

    // display normalization over the whole row
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (int p = 0; p < trace.weights.dim(1); ++p) {
        const double v = trace.weights.at(q, p);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double range = hi > lo ? hi - lo : 1.0;

    std::vector<std::string> written;
    int off = 0;
    for (std::size_t e = 0; e < trace.entries.size(); ++e) {
        const auto& g = trace.entries[e];
        const int p_entry = g.key_h * g.key_w;
        const int th = g.thumbnail.dim(1), tw = g.thumbnail.dim(2);

        Tensor<T> heat({3, th, tw});
        for (int y = 0; y < th; ++y)
            for (int x = 0; x < tw; ++x) {
                const int ky = std::min(y * g.key_h / th, g.key_h - 1);
                const int kx = std::min(x * g.key_w / tw, g.key_w - 1);
                const double v =
                    (trace.weights.at(q, off + ky * g.key_w + kx) - lo) / range;
                heat.at(0, y, x) = static_cast<T>(v);
                heat.at(1, y, x) = static_cast<T>(v);
                heat.at(2, y, x) = static_cast<T>(v);
            }

        const std::string heat_path = prefix + "_entry" + std::to_string(e) + "_heat.png";
        write_png(heat_path, heat);
        written.push_back(heat_path);

        Tensor<T> pair({3, th, 2 * tw});
        for (int ch = 0; ch < 3; ++ch)
            for (int y = 0; y < th; ++y) {
                for (int x = 0; x < tw; ++x) pair.at(ch, y, x) = heat.at(ch, y, x);
                for (int x = 0; x < tw; ++x) pair.at(ch, y, tw + x) = g.thumbnail.at(ch, y, x);
            }
        const std::string pair_path = prefix + "_entry" + std::to_string(e) + "_pair.png";
        write_png(pair_path, pair);
        written.push_back(pair_path);
        off += p_entry;
    }
    return written;
}

} // namespace memdeblur

#endif
