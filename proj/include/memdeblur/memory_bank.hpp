#ifndef MEMDEBLUR_MEMORY_BANK_HPP
#define MEMDEBLUR_MEMORY_BANK_HPP

#include <array>
#include <deque>
#include <optional>
#include <utility>
#include <vector>

#include "memdeblur/config.hpp"
#include "memdeblur/ops.hpp"

namespace memdeblur {

// Keys and values are rank-3 latent arrays at key resolution. Keys match,
// values transport: a key [C_k,H_k,W_k] is paired with one value per stream
// [C_v,H_k,W_k], and readout attends over every stored location.
template <typename T>
using MemoryKey = Var<T>;
template <typename T>
using MemoryValue = Var<T>;

// One memorized frame. Forward entries carry both the restored-frame value
// and the hidden value; backward entries carry the hidden value only (no
// restored frames exist during the backward pass).
template <typename T>
struct MemoryEntry {
    MemoryKey<T> key;
    std::optional<MemoryValue<T>> value_r;
    MemoryValue<T> value_h;
    int frame_index = 0;
    int scale = 1;
    Direction direction = Direction::forward;

    int locations() const { return key.value().dim(1) * key.value().dim(2); }

    void validate() const {
        if (key.value().rank() != 3 || value_h.value().rank() != 3)
            throw ValidationError("memory entry: key/value must be rank-3");
        const int hk = key.value().dim(1), wk = key.value().dim(2);
        if (value_h.value().dim(1) != hk || value_h.value().dim(2) != wk)
            throw ValidationError("memory entry: value_h spatial dims differ from key");
        if (direction == Direction::forward) {
            if (!value_r)
                throw ValidationError("memory entry: forward entries need value_r");
            if (value_r->value().dim(1) != hk || value_r->value().dim(2) != wk)
                throw ValidationError("memory entry: value_r spatial dims differ from key");
        } else if (value_r) {
            throw ValidationError("memory entry: backward entries store value_h only");
        }
        if (frame_index < 1) throw ValidationError("memory entry: frame_index must be >= 1");
        if (scale < 1 || scale > 3) throw ValidationError("memory entry: scale out of range");
        if (!key.value().all_finite() || !value_h.value().all_finite() ||
            (value_r && !value_r->value().all_finite()))
            throw ValidationError("memory entry: non-finite values");
    }
};

// Bounded FIFO store of memorized frames, one per temporal direction and
// shared by all scales: entries written at any scale are matched by queries
// from any other scale.
template <typename T>
class MemoryBank {
public:
    explicit MemoryBank(Direction dir, int capacity = 5)
        : direction_(dir), capacity_(capacity) {
        if (capacity_ < 1) throw ConfigError("memory bank capacity must be >= 1");
    }

    Direction direction() const { return direction_; }
    int capacity() const { return capacity_; }
    int size() const { return static_cast<int>(entries_.size()); }
    bool empty() const { return entries_.empty(); }
    const std::deque<MemoryEntry<T>>& entries() const { return entries_; }

    int total_locations() const {
        int p = 0;
        for (const auto& e : entries_) p += e.locations();
        return p;
    }

    // Append; evict oldest-first beyond capacity.
    void write(MemoryEntry<T> entry) {
        if (entry.direction != direction_)
            throw UsageError("memory bank: entry direction does not match bank");
        entry.validate();
        write_log_.emplace_back(entry.scale, entry.frame_index);
        entries_.push_back(std::move(entry));
        while (static_cast<int>(entries_.size()) > capacity_) entries_.pop_front();
        max_size_seen_ = std::max(max_size_seen_, static_cast<int>(entries_.size()));
    }

    void clear() {
        entries_.clear();
        write_log_.clear();
        max_size_seen_ = 0;
    }

    // Full history of (scale, frame_index) writes including evicted ones.
    const std::vector<std::pair<int, int>>& write_log() const { return write_log_; }
    int max_size_seen() const { return max_size_seen_; }

private:
    Direction direction_;
    int capacity_;
    std::deque<MemoryEntry<T>> entries_;
    std::vector<std::pair<int, int>> write_log_;
    int max_size_seen_ = 0;
};

// Write gate: frame 1 is always memorized, then every `period` frames.
inline bool should_memorize(int frame_index, int scale, const std::array<int, 3>& periods) {
    if (frame_index < 1) throw UsageError("should_memorize: frame_index must be >= 1");
    if (scale < 1 || scale > 3) throw ConfigError("should_memorize: unknown scale");
    const int period = periods[static_cast<std::size_t>(scale - 1)];
    if (period < 1) throw ConfigError("should_memorize: period must be >= 1");
    return (frame_index - 1) % period == 0;
}

// Affinity between every query location and every stored memory location, in
// write order. dot: channel inner product; neg_l2: negated squared distance.
template <typename T>
Var<T> affinity(const MemoryKey<T>& query, const MemoryBank<T>& bank, Similarity similarity) {
    if (bank.empty()) throw UsageError("affinity: bank is empty (no memory)");
    const int c_k = query.value().dim(0);
    std::vector<Var<T>> keys;
    keys.reserve(bank.entries().size());
    for (const auto& e : bank.entries()) {
        if (e.key.value().dim(0) != c_k)
            throw ValidationError("affinity: key channel width mismatch");
        keys.push_back(flatten_locations(e.key));
    }
    Var<T> mem = concat_locations(keys);
    Var<T> q = flatten_locations(query);
    return similarity == Similarity::dot ? affinity_dot(q, mem) : affinity_neg_l2(q, mem);
}

// Normalized attention. verbatim keeps sqrt(C_k) outside the softmax (rows
// sum to 1/sqrt(C_k)); standard scales the affinities before the softmax
// (rows sum to 1).
template <typename T>
Var<T> attention_weights(const Var<T>& s, int c_k, AttentionMode mode) {
    return attention_normalize(s, c_k, mode == AttentionMode::standard);
}

template <typename T>
struct ReadoutResult {
    std::optional<MemoryValue<T>> v_r; // absent for backward banks
    MemoryValue<T> v_h;
    Var<T> attention; // [Q, P]
};

// Attention-weighted sum of stored values per query location. One attention
// matrix is computed from the keys and shared by both value streams.
template <typename T>
std::optional<ReadoutResult<T>> readout(const MemoryBank<T>& bank, const MemoryKey<T>& query,
                                        AttentionMode mode, Similarity similarity) {
    if (bank.empty()) return std::nullopt;
    const int c_k = query.value().dim(0);
    const int hq = query.value().dim(1), wq = query.value().dim(2);

    Var<T> s = affinity(query, bank, similarity);
    Var<T> w = attention_weights(s, c_k, mode);

    std::vector<Var<T>> vh;
    vh.reserve(bank.entries().size());
    for (const auto& e : bank.entries()) vh.push_back(flatten_locations(e.value_h));
    const int c_v = bank.entries().front().value_h.value().dim(0);
    Var<T> vh_mat = concat_locations(vh);
    Var<T> out_h = reshape(readout_apply(vh_mat, w), {c_v, hq, wq});

    ReadoutResult<T> res{std::nullopt, out_h, w};
    if (bank.direction() == Direction::forward) {
        std::vector<Var<T>> vr;
        vr.reserve(bank.entries().size());
        for (const auto& e : bank.entries()) vr.push_back(flatten_locations(*e.value_r));
        Var<T> vr_mat = concat_locations(vr);
        res.v_r = reshape(readout_apply(vr_mat, w), {c_v, hq, wq});
    }
    return res;
}

} // namespace memdeblur

#endif
