#ifndef MEMDEBLUR_CHECKPOINT_HPP
#define MEMDEBLUR_CHECKPOINT_HPP

#include <string>
#include <utility>
#include <vector>

#include "memdeblur/memory_bank.hpp"
#include "memdeblur/model.hpp"
#include "memdeblur/pipeline.hpp"
#include "memdeblur/serialize.hpp"

namespace memdeblur {

inline constexpr int kCheckpointFormatVersion = 1;

// Everything needed to resume: config echo, named parameter arrays, Adam
// moments, RNG state and epoch counter. Arrays are float32 on disk and in
// this struct, so save -> load -> save is byte-identical.
struct Checkpoint {
    int format_version = kCheckpointFormatVersion;
    ModelConfig model;
    TrainConfig train;
    int epoch = 0;
    long long global_step = 0;
    int adam_t = 0;
    std::string rng_state;
    std::vector<std::pair<std::string, Tensor<float>>> params;
    std::vector<std::pair<std::string, Tensor<float>>> adam_m, adam_v;
};

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    ArrayStore store;
    store.meta = {{"kind", "checkpoint"},
                  {"format_version", ckpt.format_version},
                  {"model_config", ckpt.model},
                  {"train_config", ckpt.train},
                  {"epoch", ckpt.epoch},
                  {"global_step", ckpt.global_step},
                  {"adam_t", ckpt.adam_t},
                  {"rng_state", ckpt.rng_state}};
    for (const auto& [n, t] : ckpt.params) store.add("param." + n, t);
    for (const auto& [n, t] : ckpt.adam_m) store.add("adam.m." + n, t);
    for (const auto& [n, t] : ckpt.adam_v) store.add("adam.v." + n, t);
    save_array_store(path, store);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    ArrayStore store = load_array_store(path);
    if (store.meta.value("kind", "") != "checkpoint")
        throw IoError("not a checkpoint file: " + path);
    Checkpoint ckpt;
    ckpt.format_version = store.meta.at("format_version");
    if (ckpt.format_version != kCheckpointFormatVersion)
        throw IoError("unsupported checkpoint format version in " + path);
    store.meta.at("model_config").get_to(ckpt.model);
    store.meta.at("train_config").get_to(ckpt.train);
    ckpt.epoch = store.meta.at("epoch");
    ckpt.global_step = store.meta.at("global_step");
    ckpt.adam_t = store.meta.at("adam_t");
    ckpt.rng_state = store.meta.at("rng_state");
    for (const auto& [name, t] : store.arrays) {
        if (name.rfind("param.", 0) == 0)
            ckpt.params.emplace_back(name.substr(6), t);
        else if (name.rfind("adam.m.", 0) == 0)
            ckpt.adam_m.emplace_back(name.substr(7), t);
        else if (name.rfind("adam.v.", 0) == 0)
            ckpt.adam_v.emplace_back(name.substr(7), t);
    }
    return ckpt;
}

// Copy model parameters into checkpoint form (float32).
template <typename T>
void collect_params(const Model<T>& model, Checkpoint& ckpt) {
    ckpt.model = model.cfg;
    ckpt.params.clear();
    for (const auto& [name, v] : model.params.items())
        ckpt.params.emplace_back(name, v.value().template cast<float>());
}

// Load parameter arrays back into a model built from the checkpoint config.
template <typename T>
void apply_params(const Checkpoint& ckpt, Model<T>& model) {
    for (const auto& [name, t] : ckpt.params) {
        Var<T>* p = model.params.find(name);
        if (!p) throw IoError("checkpoint parameter has no model slot: " + name);
        if (p->value().shape() != t.shape())
            throw IoError("checkpoint parameter shape mismatch for " + name);
        p->value() = t.template cast<T>();
    }
    if (ckpt.params.size() != model.params.items().size())
        throw IoError("checkpoint parameter count does not match the model");
}

// --- memory bank snapshots (attention-visualization replay) ---

template <typename T>
void append_bank(ArrayStore& store, const MemoryBank<T>& bank, const std::string& prefix) {
    nlohmann::json entries = nlohmann::json::array();
    int i = 0;
    for (const auto& e : bank.entries()) {
        const std::string base = prefix + ".entry" + std::to_string(i);
        entries.push_back({{"direction", to_string(e.direction)},
                           {"scale", e.scale},
                           {"frame_index", e.frame_index},
                           {"has_value_r", e.value_r.has_value()}});
        store.add(base + ".key", e.key.value());
        store.add(base + ".value_h", e.value_h.value());
        if (e.value_r) store.add(base + ".value_r", e.value_r->value());
        ++i;
    }
    store.meta[prefix] = {{"direction", to_string(bank.direction())},
                          {"capacity", bank.capacity()},
                          {"entries", entries}};
}

template <typename T>
MemoryBank<T> extract_bank(const ArrayStore& store, const std::string& prefix) {
    const auto& meta = store.meta.at(prefix);
    MemoryBank<T> bank(direction_from_string(meta.at("direction")), meta.at("capacity"));
    int i = 0;
    for (const auto& em : meta.at("entries")) {
        const std::string base = prefix + ".entry" + std::to_string(i);
        MemoryEntry<T> e;
        e.direction = direction_from_string(em.at("direction"));
        e.scale = em.at("scale");
        e.frame_index = em.at("frame_index");
        e.key = Var<T>(store.at(base + ".key").template cast<T>());
        e.value_h = Var<T>(store.at(base + ".value_h").template cast<T>());
        if (em.at("has_value_r").get<bool>())
            e.value_r = Var<T>(store.at(base + ".value_r").template cast<T>());
        bank.write(std::move(e));
        ++i;
    }
    return bank;
}

// --- attention trace files (consumed by the heatmap command) ---

template <typename T>
void save_traces(const std::string& path, const std::vector<AttentionTrace<T>>& traces) {
    ArrayStore store;
    store.meta["kind"] = "attention_trace";
    store.meta["format_version"] = kCheckpointFormatVersion;
    nlohmann::json list = nlohmann::json::array();
    for (std::size_t t = 0; t < traces.size(); ++t) {
        const auto& tr = traces[t];
        const std::string base = "trace" + std::to_string(t);
        nlohmann::json entries = nlohmann::json::array();
        for (std::size_t e = 0; e < tr.entries.size(); ++e) {
            const auto& g = tr.entries[e];
            entries.push_back({{"direction", to_string(g.direction)},
                               {"scale", g.scale},
                               {"frame_index", g.frame_index},
                               {"key_h", g.key_h},
                               {"key_w", g.key_w}});
            store.add(base + ".thumb" + std::to_string(e), g.thumbnail);
        }
        list.push_back({{"frame_index", tr.frame_index},
                        {"scale", tr.scale},
                        {"bank_direction", to_string(tr.bank_direction)},
                        {"mode", to_string(tr.mode)},
                        {"query_h", tr.query_h},
                        {"query_w", tr.query_w},
                        {"entries", entries}});
        store.add(base + ".weights", tr.weights);
    }
    store.meta["traces"] = list;
    save_array_store(path, store);
}

template <typename T>
std::vector<AttentionTrace<T>> load_traces(const std::string& path) {
    ArrayStore store = load_array_store(path);
    if (store.meta.value("kind", "") != "attention_trace")
        throw IoError("not an attention trace file: " + path);
    std::vector<AttentionTrace<T>> traces;
    const auto& list = store.meta.at("traces");
    for (std::size_t t = 0; t < list.size(); ++t) {
        const auto& jm = list[t];
        const std::string base = "trace" + std::to_string(t);
        AttentionTrace<T> tr;
        tr.frame_index = jm.at("frame_index");
        tr.scale = jm.at("scale");
        tr.bank_direction = direction_from_string(jm.at("bank_direction"));
        tr.mode = attention_mode_from_string(jm.at("mode"));
        tr.query_h = jm.at("query_h");
        tr.query_w = jm.at("query_w");
        tr.weights = store.at(base + ".weights").template cast<T>();
        std::size_t e = 0;
        for (const auto& em : jm.at("entries")) {
            TraceEntryGeom<T> g;
            g.direction = direction_from_string(em.at("direction"));
            g.scale = em.at("scale");
            g.frame_index = em.at("frame_index");
            g.key_h = em.at("key_h");
            g.key_w = em.at("key_w");
            g.thumbnail = store.at(base + ".thumb" + std::to_string(e)).template cast<T>();
            tr.entries.push_back(std::move(g));
            ++e;
        }
        traces.push_back(std::move(tr));
    }
    return traces;
}

} // namespace memdeblur

#endif
