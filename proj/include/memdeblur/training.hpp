#ifndef MEMDEBLUR_TRAINING_HPP
#define MEMDEBLUR_TRAINING_HPP

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "memdeblur/checkpoint.hpp"
#include "memdeblur/evaluation.hpp"
#include "memdeblur/pipeline.hpp"

namespace memdeblur {

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

// mean over all elements of sqrt((pred-target)^2 + eps^2)
template <typename T>
double charbonnier(const Tensor<T>& pred, const Tensor<T>& target, double eps) {
    if (!pred.same_shape(target)) throw ValidationError("charbonnier: shape mismatch");
    if (!(eps > 0)) throw ValidationError("charbonnier: eps must be positive");
    double acc = 0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
        acc += std::sqrt(d * d + eps * eps);
    }
    return acc / static_cast<double>(pred.numel());
}

struct LossReport {
    double total = 0;
    std::vector<double> per_scale; // index 0 = scale 1
    std::vector<double> per_frame; // scale-weighted sum per frame
};

// Weighted multi-scale content loss: per scale the mean Charbonnier over
// frames, combined with the configured scale weights (uniform by default).
template <typename T>
LossReport multiscale_loss(const std::vector<std::vector<Tensor<T>>>& preds,
                           const std::vector<std::vector<Tensor<T>>>& targets,
                           const TrainConfig& cfg) {
    if (preds.size() != targets.size())
        throw ValidationError("multiscale_loss: scale count mismatch");
    if (preds.empty()) throw UsageError("multiscale_loss: no scales");
    const int scales = static_cast<int>(preds.size());
    const std::size_t n = preds.front().size();

    LossReport rep;
    rep.per_scale.assign(static_cast<std::size_t>(scales), 0.0);
    rep.per_frame.assign(n, 0.0);
    for (int s = 0; s < scales; ++s) {
        if (preds[static_cast<std::size_t>(s)].size() != n ||
            targets[static_cast<std::size_t>(s)].size() != n)
            throw ValidationError("multiscale_loss: frame count mismatch");
        const double w = cfg.scale_weight(scales, s + 1);
        double sum = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double l = charbonnier(preds[static_cast<std::size_t>(s)][i],
                                         targets[static_cast<std::size_t>(s)][i],
                                         cfg.charbonnier_eps);
            sum += l;
            rep.per_frame[i] += w * l;
        }
        rep.per_scale[static_cast<std::size_t>(s)] = sum / static_cast<double>(n);
        rep.total += w * rep.per_scale[static_cast<std::size_t>(s)];
    }
    return rep;
}

// Graph form used by the optimizer; numbers match multiscale_loss.
template <typename T>
Var<T> multiscale_loss_graph(const std::vector<std::vector<Var<T>>>& preds,
                             const std::vector<std::vector<Tensor<T>>>& targets,
                             const TrainConfig& cfg) {
    if (preds.size() != targets.size())
        throw ValidationError("multiscale_loss: scale count mismatch");
    const int scales = static_cast<int>(preds.size());
    Var<T> total;
    for (int s = 0; s < scales; ++s) {
        const std::size_t n = preds[static_cast<std::size_t>(s)].size();
        if (targets[static_cast<std::size_t>(s)].size() != n)
            throw ValidationError("multiscale_loss: frame count mismatch");
        const T w = static_cast<T>(cfg.scale_weight(scales, s + 1) / static_cast<double>(n));
        for (std::size_t i = 0; i < n; ++i) {
            Var<T> term = scale(
                charbonnier_op(preds[static_cast<std::size_t>(s)][i],
                               constant(targets[static_cast<std::size_t>(s)][i]),
                               static_cast<T>(cfg.charbonnier_eps)),
                w);
            total = total.defined() ? add(total, term) : term;
        }
    }
    return total;
}

// Per-scale ground-truth targets: pyramid levels cropped back to their
// pre-padding dims, matching the restored outputs.
template <typename T>
std::vector<std::vector<Tensor<T>>> pyramid_targets(const std::vector<Tensor<T>>& sharp,
                                                    int scales, int stride_multiple) {
    NoGradGuard ng;
    ScalePyramid<T> pyr = build_pyramid(sharp, scales, stride_multiple);
    std::vector<std::vector<Tensor<T>>> out(static_cast<std::size_t>(scales));
    for (int s = 0; s < scales; ++s) {
        const auto& lvl = pyr.levels[static_cast<std::size_t>(s)];
        const auto [pt, pb] = detail::pad_amount(lvl.orig_h, stride_multiple);
        const auto [pl, pr] = detail::pad_amount(lvl.orig_w, stride_multiple);
        (void)pb;
        (void)pr;
        for (const auto& f : lvl.frames) {
            const bool padded =
                f.value().dim(1) != lvl.orig_h || f.value().dim(2) != lvl.orig_w;
            out[static_cast<std::size_t>(s)].push_back(
                padded ? slice_hw(Var<T>(f.value()), pt, pl, lvl.orig_h, lvl.orig_w).value()
                       : f.value());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// data plumbing
// ---------------------------------------------------------------------------

template <typename T>
struct SequencePair {
    std::vector<Tensor<T>> blurry, sharp;
};

template <typename T>
using Dataset = std::vector<SequencePair<T>>;

template <typename T>
Tensor<T> rotate90(const Tensor<T>& t, int quarter_turns) {
    const int k = ((quarter_turns % 4) + 4) % 4;
    if (k == 0) return t;
    const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
    // counter-clockwise: (y,x) -> (h-1-? ...) applied k times
    Tensor<T> out(k % 2 == 0 ? std::vector<int>{c, h, w} : std::vector<int>{c, w, h});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const T v = t.at(ch, y, x);
                if (k == 1)
                    out.at(ch, w - 1 - x, y) = v;
                else if (k == 2)
                    out.at(ch, h - 1 - y, w - 1 - x) = v;
                else
                    out.at(ch, x, h - 1 - y) = v;
            }
    return out;
}

template <typename T>
Tensor<T> flip_horizontal(const Tensor<T>& t) {
    const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
    Tensor<T> out({c, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(ch, y, w - 1 - x) = t.at(ch, y, x);
    return out;
}

template <typename T>
Tensor<T> flip_vertical(const Tensor<T>& t) {
    const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
    Tensor<T> out({c, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(ch, h - 1 - y, x) = t.at(ch, y, x);
    return out;
}

struct AugmentDraw {
    int quarter_turns = 0;
    bool hflip = false;
    bool vflip = false;
};

inline AugmentDraw draw_augment(Rng& rng) {
    AugmentDraw d;
    d.quarter_turns = static_cast<int>(rng.uniform_index(4));
    d.hflip = rng.coin();
    d.vflip = rng.coin();
    return d;
}

template <typename T>
Tensor<T> apply_augment(const Tensor<T>& t, const AugmentDraw& d) {
    Tensor<T> out = rotate90(t, d.quarter_turns);
    if (d.hflip) out = flip_horizontal(out);
    if (d.vflip) out = flip_vertical(out);
    return out;
}

// One geometric transform (rotation + flips), drawn once, applied to every
// frame of both streams.
template <typename T>
void augment(std::vector<Tensor<T>>& blurry, std::vector<Tensor<T>>& sharp, Rng& rng) {
    if (blurry.size() != sharp.size()) throw ValidationError("augment: length mismatch");
    const AugmentDraw d = draw_augment(rng);
    for (auto& f : blurry) f = apply_augment(f, d);
    for (auto& f : sharp) f = apply_augment(f, d);
}

template <typename T>
Tensor<T> crop_tensor(const Tensor<T>& t, int y0, int x0, int h, int w) {
    Tensor<T> out({t.dim(0), h, w});
    for (int c = 0; c < t.dim(0); ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(c, y, x) = t.at(c, y0 + y, x0 + x);
    return out;
}

// Contiguous temporal window plus one spatial crop shared by all frames and
// both streams.
template <typename T>
SequencePair<T> sample_subsequence(const SequencePair<T>& seq, int subseq_len, int patch,
                                   Rng& rng) {
    const int n = static_cast<int>(seq.blurry.size());
    if (n < subseq_len) throw UsageError("sample_subsequence: sequence shorter than subseq_len");
    const int h = seq.blurry.front().dim(1), w = seq.blurry.front().dim(2);
    if (h < patch || w < patch) throw UsageError("sample_subsequence: frames smaller than patch");

    const int t0 = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n - subseq_len + 1)));
    const int y0 = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(h - patch + 1)));
    const int x0 = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(w - patch + 1)));

    SequencePair<T> out;
    for (int i = 0; i < subseq_len; ++i) {
        out.blurry.push_back(crop_tensor(seq.blurry[static_cast<std::size_t>(t0 + i)], y0, x0, patch, patch));
        out.sharp.push_back(crop_tensor(seq.sharp[static_cast<std::size_t>(t0 + i)], y0, x0, patch, patch));
    }
    return out;
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

template <typename T>
class Adam {
public:
    Adam(ParamRegistry<T>& params, const TrainConfig& cfg)
        : params_(&params), beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.adam_eps) {
        for (const auto& [name, v] : params.items()) {
            m_.emplace_back(name, Tensor<T>::zeros(v.value().shape()));
            v_.emplace_back(name, Tensor<T>::zeros(v.value().shape()));
        }
    }

    void step(double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        auto& items = params_->items();
        for (std::size_t i = 0; i < items.size(); ++i) {
            Var<T>& p = items[i].second;
            Tensor<T>& m = m_[i].second;
            Tensor<T>& v = v_[i].second;
            const bool has_grad = p.has_grad();
            for (std::size_t j = 0; j < p.value().numel(); ++j) {
                const double g = has_grad ? static_cast<double>(p.grad()[j]) : 0.0;
                const double mj = beta1_ * m[j] + (1 - beta1_) * g;
                const double vj = beta2_ * v[j] + (1 - beta2_) * g * g;
                m[j] = static_cast<T>(mj);
                v[j] = static_cast<T>(vj);
                p.value()[j] -= static_cast<T>(lr * (mj / bc1) / (std::sqrt(vj / bc2) + eps_));
            }
        }
    }

    void zero_grad() { params_->zero_grad(); }

    int t() const { return t_; }
    void set_t(int t) { t_ = t; }
    std::vector<std::pair<std::string, Tensor<T>>>& m() { return m_; }
    std::vector<std::pair<std::string, Tensor<T>>>& v() { return v_; }

private:
    ParamRegistry<T>* params_;
    double beta1_, beta2_, eps_;
    int t_ = 0;
    std::vector<std::pair<std::string, Tensor<T>>> m_, v_;
};

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct MetricsRecord {
    int epoch = 0;
    long long step = 0;
    double loss = 0;
    double lr = 0;
    double psnr_val = 0;

    std::string to_line() const {
        nlohmann::json j{{"epoch", epoch}, {"step", step}, {"loss", loss},
                         {"lr", lr},       {"psnr_val", psnr_val}};
        return j.dump();
    }
};

template <typename T>
struct TrainResult {
    Checkpoint checkpoint;
    std::vector<double> loss_curve; // per optimizer step
    std::vector<MetricsRecord> metrics;
};

namespace detail {

template <typename T>
Checkpoint snapshot(const Model<T>& model, Adam<T>& opt, const TrainConfig& tcfg, int epoch,
                    long long step, const Rng& rng) {
    Checkpoint ckpt;
    collect_params(model, ckpt);
    ckpt.train = tcfg;
    ckpt.epoch = epoch;
    ckpt.global_step = step;
    ckpt.adam_t = opt.t();
    ckpt.rng_state = rng.serialize();
    for (const auto& [n, t] : opt.m()) ckpt.adam_m.emplace_back(n, t.template cast<float>());
    for (const auto& [n, t] : opt.v()) ckpt.adam_v.emplace_back(n, t.template cast<float>());
    return ckpt;
}

template <typename T>
void dump_diagnostic_batch(const std::string& out_dir,
                           const std::vector<SequencePair<T>>& batch) {
    ArrayStore store;
    store.meta = {{"kind", "diagnostic_batch"}};
    for (std::size_t b = 0; b < batch.size(); ++b)
        for (std::size_t i = 0; i < batch[b].blurry.size(); ++i) {
            store.add("batch" + std::to_string(b) + ".blurry" + std::to_string(i),
                      batch[b].blurry[i]);
            store.add("batch" + std::to_string(b) + ".sharp" + std::to_string(i),
                      batch[b].sharp[i]);
        }
    save_array_store(out_dir + "/diagnostic_batch.mdar", store);
}

} // namespace detail

// Milestone-decayed Adam training over random augmented subsequences.
// Deterministic for a fixed seed; epochs checkpoint to `out_dir` when given.
// Pass `resume` to continue a run: parameters, moments, rng state and epoch
// counter all restore, so the loss curve continues exactly.
template <typename T>
TrainResult<T> train_loop(const Dataset<T>& dataset, Model<T>& model, const TrainConfig& tcfg,
                          std::uint64_t rng_seed, const std::string& out_dir = "",
                          const std::optional<Checkpoint>& resume = std::nullopt) {
    tcfg.validate();
    if (dataset.empty()) throw UsageError("train_loop: empty dataset");
    for (const auto& seq : dataset)
        if (seq.blurry.size() != seq.sharp.size() || seq.blurry.empty())
            throw ValidationError("train_loop: malformed sequence pair");

    Adam<T> opt(model.params, tcfg);
    Rng rng(rng_seed ^ 0x747261696e21ULL);
    int start_epoch = 0;
    long long global_step = 0;
    if (resume) {
        apply_params(*resume, model);
        opt.set_t(resume->adam_t);
        for (std::size_t i = 0; i < resume->adam_m.size(); ++i) {
            opt.m()[i].second = resume->adam_m[i].second.template cast<T>();
            opt.v()[i].second = resume->adam_v[i].second.template cast<T>();
        }
        rng.deserialize(resume->rng_state);
        start_epoch = resume->epoch;
        global_step = resume->global_step;
    }

    long long total_frames = 0;
    for (const auto& seq : dataset) total_frames += static_cast<long long>(seq.blurry.size());
    const int steps_per_epoch =
        tcfg.steps_per_epoch > 0
            ? tcfg.steps_per_epoch
            : std::max<int>(1, static_cast<int>(total_frames /
                                                (static_cast<long long>(tcfg.subseq_len) *
                                                 tcfg.batch_size)));

    std::ofstream metrics_file;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        metrics_file.open(out_dir + "/metrics.jsonl", std::ios::app);
    }

    TrainResult<T> result;
    for (int epoch = start_epoch + 1; epoch <= tcfg.total_epochs; ++epoch) {
        const double lr = tcfg.lr_at_epoch(epoch);
        double epoch_loss = 0;
        for (int step = 0; step < steps_per_epoch; ++step) {
            std::vector<SequencePair<T>> batch;
            for (int b = 0; b < tcfg.batch_size; ++b) {
                const auto& seq = dataset[rng.uniform_index(dataset.size())];
                SequencePair<T> sample = sample_subsequence(seq, tcfg.subseq_len, tcfg.patch, rng);
                if (tcfg.augment) augment(sample.blurry, sample.sharp, rng);
                batch.push_back(std::move(sample));
            }

            Var<T> loss;
            try {
                for (const auto& sample : batch) {
                    RestoreGraph<T> graph = restore_sequence_graph(sample.blurry, model);
                    auto targets = pyramid_targets(sample.sharp, model.cfg.scales,
                                                   model.cfg.frame_stride());
                    Var<T> term = multiscale_loss_graph(graph.restored, targets, tcfg);
                    loss = loss.defined() ? add(loss, term) : term;
                }
            } catch (const ValidationError& e) {
                // non-finite activations trip bank validation before the loss
                if (!out_dir.empty()) detail::dump_diagnostic_batch(out_dir, batch);
                throw TrainingError(std::string("forward pass failed at epoch ") +
                                    std::to_string(epoch) + " step " + std::to_string(step) +
                                    ": " + e.what());
            }
            loss = scale(loss, static_cast<T>(1.0 / tcfg.batch_size));

            const double loss_value = static_cast<double>(loss.value()[0]);
            if (!std::isfinite(loss_value)) {
                if (!out_dir.empty()) detail::dump_diagnostic_batch(out_dir, batch);
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) +
                                    " step " + std::to_string(step) +
                                    (out_dir.empty() ? "" : "; offending batch dumped to " +
                                                                out_dir + "/diagnostic_batch.mdar"));
            }

            opt.zero_grad();
            backward(loss);
            opt.step(lr);
            ++global_step;
            epoch_loss += loss_value;
            result.loss_curve.push_back(loss_value);
        }

        // held-out probe: restore the head of the first sequence
        double psnr_val = 0;
        {
            const auto& val = dataset.front();
            const int nv = std::min<int>(tcfg.val_frames, static_cast<int>(val.blurry.size()));
            std::vector<Tensor<T>> vb(val.blurry.begin(), val.blurry.begin() + nv);
            std::vector<Tensor<T>> vs(val.sharp.begin(), val.sharp.begin() + nv);
            auto res = restore_sequence(vb, model);
            double acc = 0;
            for (int i = 0; i < nv; ++i)
                acc += psnr(res.restored[0][static_cast<std::size_t>(i)],
                            vs[static_cast<std::size_t>(i)]);
            psnr_val = acc / nv;
        }

        MetricsRecord rec{epoch, global_step, epoch_loss / steps_per_epoch, lr, psnr_val};
        result.metrics.push_back(rec);
        if (metrics_file) metrics_file << rec.to_line() << '\n' << std::flush;

        if (!out_dir.empty() && (epoch % tcfg.checkpoint_interval == 0 ||
                                 epoch == tcfg.total_epochs)) {
            char name[32];
            std::snprintf(name, sizeof name, "ckpt_epoch_%04d.mdar", epoch);
            save_checkpoint(out_dir + "/" + name,
                            detail::snapshot(model, opt, tcfg, epoch, global_step, rng));
        }
    }

    result.checkpoint = detail::snapshot(model, opt, tcfg,
                                         std::max(start_epoch, tcfg.total_epochs), global_step, rng);
    return result;
}

} // namespace memdeblur

#endif
