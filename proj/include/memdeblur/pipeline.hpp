#ifndef MEMDEBLUR_PIPELINE_HPP
#define MEMDEBLUR_PIPELINE_HPP

#include <utility>
#include <vector>

#include "memdeblur/model.hpp"

namespace memdeblur {

// One resolution level: frames padded (reflective) to a stride multiple,
// with the pre-padding dims kept for cropping outputs back.
template <typename T>
struct PyramidLevel {
    std::vector<Var<T>> frames;
    int orig_h = 0, orig_w = 0;
};

// levels[0] is the full-resolution input; each following level halves the
// spatial dims (bilinear), padded independently.
template <typename T>
struct ScalePyramid {
    std::vector<PyramidLevel<T>> levels;

    int scale_count() const { return static_cast<int>(levels.size()); }
    int frame_count() const { return static_cast<int>(levels.front().frames.size()); }
};

namespace detail {

inline std::pair<int, int> pad_amount(int dim, int multiple) {
    const int rem = dim % multiple;
    const int total = rem == 0 ? 0 : multiple - rem;
    return {total / 2, total - total / 2};
}

} // namespace detail

// Deterministic bilinear x0.5 per level; level s dims are ceil(dims/2^(s-1)),
// each level reflect-padded to a multiple of `stride_multiple`.
template <typename T>
ScalePyramid<T> build_pyramid(const std::vector<Tensor<T>>& frames, int scales,
                              int stride_multiple) {
    if (frames.empty()) throw UsageError("build_pyramid: empty frame sequence");
    if (scales < 1 || scales > 3) throw UsageError("build_pyramid: scales must be in {1,2,3}");

    ScalePyramid<T> pyr;
    std::vector<Var<T>> prev; // unpadded frames of the previous level
    for (int s = 1; s <= scales; ++s) {
        PyramidLevel<T> lvl;
        std::vector<Var<T>> unpadded;
        unpadded.reserve(frames.size());
        if (s == 1) {
            for (const auto& f : frames) {
                if (f.rank() != 3) throw ValidationError("build_pyramid: frames must be rank-3");
                unpadded.emplace_back(f);
            }
        } else {
            const int h = (prev.front().value().dim(1) + 1) / 2;
            const int w = (prev.front().value().dim(2) + 1) / 2;
            for (const auto& f : prev) unpadded.push_back(bilinear_resize(f, h, w));
        }
        lvl.orig_h = unpadded.front().value().dim(1);
        lvl.orig_w = unpadded.front().value().dim(2);
        const auto [pt, pb] = detail::pad_amount(lvl.orig_h, stride_multiple);
        const auto [pl, pr] = detail::pad_amount(lvl.orig_w, stride_multiple);
        for (const auto& f : unpadded)
            lvl.frames.push_back(pt + pb + pl + pr == 0 ? f : reflect_pad(f, pt, pb, pl, pr));
        pyr.levels.push_back(std::move(lvl));
        prev = std::move(unpadded);
    }
    return pyr;
}

// Hidden states for every scale, zeroed; shapes follow the padded feature
// dims for the given input size.
template <typename T>
struct RecurrentState {
    std::vector<Tensor<T>> h_f, h_b; // index 0 = scale 1
};

template <typename T>
struct ResetProduct {
    RecurrentState<T> state;
    MemoryBank<T> forward_bank;
    MemoryBank<T> backward_bank;
};

template <typename T>
ResetProduct<T> reset_state(const ModelConfig& cfg, int height, int width) {
    cfg.validate();
    ResetProduct<T> out{RecurrentState<T>{},
                        MemoryBank<T>(Direction::forward, cfg.capacity),
                        MemoryBank<T>(Direction::backward, cfg.capacity)};
    const int mult = cfg.frame_stride();
    for (int s = 1; s <= cfg.scales; ++s) {
        int h = height, w = width;
        for (int i = 1; i < s; ++i) {
            h = (h + 1) / 2;
            w = (w + 1) / 2;
        }
        const auto [pt, pb] = detail::pad_amount(h, mult);
        const auto [pl, pr] = detail::pad_amount(w, mult);
        const int fh = (h + pt + pb) / cfg.branch.downsample_stride;
        const int fw = (w + pl + pr) / cfg.branch.downsample_stride;
        out.state.h_f.push_back(Tensor<T>::zeros({cfg.branch.base_channels, fh, fw}));
        out.state.h_b.push_back(Tensor<T>::zeros({cfg.branch.base_channels, fh, fw}));
    }
    return out;
}

// Geometry (and a display thumbnail) of one bank entry at readout time.
template <typename T>
struct TraceEntryGeom {
    Direction direction = Direction::forward;
    int scale = 1;
    int frame_index = 1;
    int key_h = 0, key_w = 0;
    Tensor<T> thumbnail; // blurry input frame at the entry's scale
};

// One recorded readout: the attention matrix plus enough bank geometry to
// split its columns back into per-memory-frame maps.
template <typename T>
struct AttentionTrace {
    int frame_index = 1;
    int scale = 1;
    Direction bank_direction = Direction::forward;
    AttentionMode mode = AttentionMode::verbatim;
    int query_h = 0, query_w = 0;
    Tensor<T> weights; // [Q, P]
    std::vector<TraceEntryGeom<T>> entries;
};

template <typename T>
struct RestoreOptions {
    bool record_traces = false;
};

// Graph-producing result: restored frames stay Vars so training can attach a
// loss; restore_sequence() below extracts plain tensors.
template <typename T>
struct RestoreGraph {
    std::vector<std::vector<Var<T>>> restored; // [scale-1][frame], cropped
    std::vector<AttentionTrace<T>> traces;
    std::vector<std::pair<int, int>> forward_write_log, backward_write_log;
    int forward_max_size = 0, backward_max_size = 0;
};

template <typename T>
struct RestorationResult {
    std::vector<std::vector<Tensor<T>>> restored; // [scale-1][frame], cropped
    std::vector<AttentionTrace<T>> traces;
    std::vector<std::pair<int, int>> forward_write_log, backward_write_log;
    int forward_max_size = 0, backward_max_size = 0;
};

namespace detail {

// Readout + decode, substituting a zero memory when the bank is empty.
template <typename T>
Var<T> read_memory(const MemoryBank<T>& bank, const MemoryKey<T>& query, const Model<T>& model,
                   int fh, int fw, int frame_index, int scale, const ScalePyramid<T>& pyr,
                   bool record, std::vector<AttentionTrace<T>>* traces) {
    auto res = readout(bank, query, model.cfg.attention_mode, model.cfg.similarity);
    if (!res) return zeros_var<T>({model.memory_channels(), fh, fw});
    if (record && traces) {
        AttentionTrace<T> tr;
        tr.frame_index = frame_index;
        tr.scale = scale;
        tr.bank_direction = bank.direction();
        tr.mode = model.cfg.attention_mode;
        tr.query_h = query.value().dim(1);
        tr.query_w = query.value().dim(2);
        tr.weights = res->attention.value();
        for (const auto& e : bank.entries()) {
            TraceEntryGeom<T> g;
            g.direction = e.direction;
            g.scale = e.scale;
            g.frame_index = e.frame_index;
            g.key_h = e.key.value().dim(1);
            g.key_w = e.key.value().dim(2);
            const auto& lvl = pyr.levels[static_cast<std::size_t>(e.scale - 1)];
            g.thumbnail = lvl.frames[static_cast<std::size_t>(e.frame_index - 1)].value();
            tr.entries.push_back(std::move(g));
        }
        traces->push_back(std::move(tr));
    }
    return decode_memory(res->v_r, res->v_h, model.decoder_r, model.decoder_h);
}

} // namespace detail

// Full bidirectional multi-scale restoration. Scales run coarsest-first; per
// scale a backward sweep fills the backward bank, then a forward sweep
// restores frames and fills the forward bank. Banks persist across scales.
template <typename T>
RestoreGraph<T> restore_sequence_graph(const std::vector<Tensor<T>>& frames,
                                       const Model<T>& model,
                                       const RestoreOptions<T>& opts = {}) {
    const auto& cfg = model.cfg;
    const int n = static_cast<int>(frames.size());
    if (n < 1) throw UsageError("restore_sequence: empty sequence");

    ScalePyramid<T> pyr = build_pyramid(frames, cfg.scales, cfg.frame_stride());
    MemoryBank<T> fwd_bank(Direction::forward, cfg.capacity);
    MemoryBank<T> bwd_bank(Direction::backward, cfg.capacity);

    RestoreGraph<T> out;
    out.restored.resize(static_cast<std::size_t>(cfg.scales));

    const int c = cfg.branch.base_channels;
    const int m = model.memory_channels();
    std::vector<Var<T>> coarse_feats; // D(R_i^{s+1}) from the previous (coarser) scale

    for (int s = cfg.scales; s >= 1; --s) {
        const auto& lvl = pyr.levels[static_cast<std::size_t>(s - 1)];
        const int fh = lvl.frames.front().value().dim(1) / cfg.branch.downsample_stride;
        const int fw = lvl.frames.front().value().dim(2) / cfg.branch.downsample_stride;

        // blurry features and query keys, shared by both sweeps
        std::vector<Var<T>> x(static_cast<std::size_t>(n));
        std::vector<Var<T>> keys(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            x[static_cast<std::size_t>(i)] = model.downsampler(lvl.frames[static_cast<std::size_t>(i)]);
            if (cfg.use_memory)
                keys[static_cast<std::size_t>(i)] =
                    encode_key(x[static_cast<std::size_t>(i)], model.key_encoder);
        }

        // cross-scale lift: upscaled features of the coarser restorations
        std::vector<Var<T>> coarse(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i)
            coarse[static_cast<std::size_t>(i)] =
                coarse_feats.empty() ? zeros_var<T>({c, fh, fw})
                                     : bilinear_resize(coarse_feats[static_cast<std::size_t>(i)], fh, fw);

        const Var<T> zero_feat = zeros_var<T>({c, fh, fw});
        const Var<T> zero_mem = zeros_var<T>({m, fh, fw});

        // backward sweep: i = N..1
        std::vector<Var<T>> h_b(static_cast<std::size_t>(n));
        Var<T> h_next = zero_feat;
        for (int i = n - 1; i >= 0; --i) {
            const Var<T>& x_next = i + 1 < n ? x[static_cast<std::size_t>(i + 1)] : zero_feat;
            Var<T> m_b = cfg.use_memory
                             ? detail::read_memory(bwd_bank, keys[static_cast<std::size_t>(i)],
                                                   model, fh, fw, i + 1, s, pyr,
                                                   opts.record_traces, &out.traces)
                             : zero_mem;
            h_b[static_cast<std::size_t>(i)] = backward_cell(
                x[static_cast<std::size_t>(i)], x_next, h_next, m_b, coarse[static_cast<std::size_t>(i)],
                model.bwd_cell);
            if (cfg.use_memory && should_memorize(i + 1, s, cfg.periods)) {
                MemoryEntry<T> e;
                e.key = keys[static_cast<std::size_t>(i)];
                e.value_h = encode_value_h(x[static_cast<std::size_t>(i)],
                                           h_b[static_cast<std::size_t>(i)], model.value_h_encoder);
                e.frame_index = i + 1;
                e.scale = s;
                e.direction = Direction::backward;
                bwd_bank.write(std::move(e));
            }
            h_next = h_b[static_cast<std::size_t>(i)];
        }

        // forward sweep: i = 1..N
        std::vector<Var<T>> restored_feats(static_cast<std::size_t>(n));
        std::vector<Var<T>>& level_out = out.restored[static_cast<std::size_t>(s - 1)];
        level_out.resize(static_cast<std::size_t>(n));
        Var<T> h_prev = zero_feat;
        Var<T> x_prev = zero_feat;
        for (int i = 0; i < n; ++i) {
            Var<T> m_f = zero_mem, m_b = zero_mem;
            if (cfg.use_memory) {
                m_f = detail::read_memory(fwd_bank, keys[static_cast<std::size_t>(i)], model, fh,
                                          fw, i + 1, s, pyr, opts.record_traces, &out.traces);
                m_b = detail::read_memory(bwd_bank, keys[static_cast<std::size_t>(i)], model, fh,
                                          fw, i + 1, s, pyr, opts.record_traces, &out.traces);
            }
            Var<T> h_f = forward_cell(x[static_cast<std::size_t>(i)], x_prev, h_prev, m_f, m_b,
                                      coarse[static_cast<std::size_t>(i)], model.fwd_cell,
                                      cfg.drop_recurrent_carry);
            Var<T> h = fuse(h_f, h_b[static_cast<std::size_t>(i)], model.fusion);
            Var<T> restored = upsample(h, lvl.frames[static_cast<std::size_t>(i)], model.upsampler);
            restored_feats[static_cast<std::size_t>(i)] = model.downsampler(restored);

            if (cfg.use_memory && should_memorize(i + 1, s, cfg.periods)) {
                MemoryEntry<T> e;
                e.key = keys[static_cast<std::size_t>(i)];
                e.value_r = encode_value_r(x[static_cast<std::size_t>(i)],
                                           restored_feats[static_cast<std::size_t>(i)],
                                           model.value_r_encoder);
                e.value_h = encode_value_h(x[static_cast<std::size_t>(i)], h, model.value_h_encoder);
                e.frame_index = i + 1;
                e.scale = s;
                e.direction = Direction::forward;
                fwd_bank.write(std::move(e));
            }

            // crop back to the pre-padding dims of this level
            const int ph = lvl.frames.front().value().dim(1);
            const int pw = lvl.frames.front().value().dim(2);
            const auto [pt, pb] = detail::pad_amount(lvl.orig_h, cfg.frame_stride());
            const auto [pl, pr] = detail::pad_amount(lvl.orig_w, cfg.frame_stride());
            (void)pb;
            (void)pr;
            level_out[static_cast<std::size_t>(i)] =
                (ph == lvl.orig_h && pw == lvl.orig_w)
                    ? restored
                    : slice_hw(restored, pt, pl, lvl.orig_h, lvl.orig_w);

            h_prev = h_f;
            x_prev = restored_feats[static_cast<std::size_t>(i)];
        }
        coarse_feats = std::move(restored_feats);
    }

    out.forward_write_log = fwd_bank.write_log();
    out.backward_write_log = bwd_bank.write_log();
    out.forward_max_size = fwd_bank.max_size_seen();
    out.backward_max_size = bwd_bank.max_size_seen();
    return out;
}

// Inference entry point: no autograd history, plain tensors out.
template <typename T>
RestorationResult<T> restore_sequence(const std::vector<Tensor<T>>& frames,
                                      const Model<T>& model, const RestoreOptions<T>& opts = {}) {
    NoGradGuard ng;
    RestoreGraph<T> g = restore_sequence_graph(frames, model, opts);
    RestorationResult<T> res;
    res.restored.resize(g.restored.size());
    for (std::size_t s = 0; s < g.restored.size(); ++s) {
        res.restored[s].reserve(g.restored[s].size());
        for (auto& v : g.restored[s]) res.restored[s].push_back(v.value());
    }
    res.traces = std::move(g.traces);
    res.forward_write_log = std::move(g.forward_write_log);
    res.backward_write_log = std::move(g.backward_write_log);
    res.forward_max_size = g.forward_max_size;
    res.backward_max_size = g.backward_max_size;
    return res;
}

} // namespace memdeblur

#endif
