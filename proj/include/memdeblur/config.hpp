#ifndef MEMDEBLUR_CONFIG_HPP
#define MEMDEBLUR_CONFIG_HPP

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "memdeblur/errors.hpp"

namespace memdeblur {

enum class Similarity { dot, neg_l2 };
enum class AttentionMode { verbatim, standard };
enum class Direction { forward, backward };

inline const char* to_string(Similarity s) { return s == Similarity::dot ? "dot" : "neg_l2"; }
inline const char* to_string(AttentionMode m) {
    return m == AttentionMode::verbatim ? "verbatim" : "standard";
}
inline const char* to_string(Direction d) {
    return d == Direction::forward ? "forward" : "backward";
}

inline Similarity similarity_from_string(const std::string& s) {
    if (s == "dot") return Similarity::dot;
    if (s == "neg_l2") return Similarity::neg_l2;
    throw ConfigError("unknown similarity: " + s);
}

inline AttentionMode attention_mode_from_string(const std::string& s) {
    if (s == "verbatim") return AttentionMode::verbatim;
    if (s == "standard") return AttentionMode::standard;
    throw ConfigError("unknown attention mode: " + s);
}

inline Direction direction_from_string(const std::string& s) {
    if (s == "forward") return Direction::forward;
    if (s == "backward") return Direction::backward;
    throw ConfigError("unknown direction: " + s);
}

// Key/value codec widths. encoder_stride must equal decoder_upscale so the
// decoded memory lands back at feature resolution.
struct CodecConfig {
    int key_channels = 16;
    int value_channels = 32;
    int encoder_stride = 4;
    int decoder_upscale = 4;
    int block_count = 1;
    int decoded_channels = 8; // per decoded stream (r and h)

    void validate() const {
        if (key_channels < 1 || value_channels < 1 || decoded_channels < 1)
            throw ConfigError("codec channel widths must be >= 1");
        if (encoder_stride != decoder_upscale)
            throw ConfigError("codec encoder_stride must equal decoder_upscale");
        if (block_count < 1) throw ConfigError("codec block_count must be >= 1");
    }
};

struct BranchConfig {
    int base_channels = 16;
    int dense_block_count = 1;
    int res_block_count = 2;
    int downsample_stride = 4;
    int fuse_kernel = 3;

    void validate() const {
        if (base_channels < 1 || dense_block_count < 1 || res_block_count < 1)
            throw ConfigError("branch counts must be >= 1");
        if (downsample_stride != 2 && downsample_stride != 4)
            throw ConfigError("downsample_stride must be 2 or 4");
        if (fuse_kernel % 2 != 1) throw ConfigError("fuse_kernel must be odd");
    }
};

struct ModelConfig {
    int scales = 3;
    BranchConfig branch;
    CodecConfig codec;
    int capacity = 5;
    std::array<int, 3> periods{5, 2, 1}; // per scale, scale 1 = finest
    Similarity similarity = Similarity::dot;
    AttentionMode attention_mode = AttentionMode::verbatim;
    bool drop_recurrent_carry = false; // drop the recurrent carry from the forward cell
    bool use_memory = true;

    void validate() const {
        if (scales < 1 || scales > 3) throw ConfigError("scales must be in {1,2,3}");
        if (capacity < 1) throw ConfigError("capacity must be >= 1");
        for (int p : periods)
            if (p < 1) throw ConfigError("memorization periods must be >= 1");
        branch.validate();
        codec.validate();
    }

    // Total spatial stride from frame to key grid; frame dims are padded to a
    // multiple of this per pyramid level.
    int frame_stride() const { return branch.downsample_stride * codec.encoder_stride; }

    static ModelConfig toy() {
        ModelConfig c;
        c.scales = 2;
        c.branch.base_channels = 16;
        c.branch.dense_block_count = 1;
        c.branch.res_block_count = 1;
        c.codec.key_channels = 8;
        c.codec.value_channels = 16;
        c.codec.block_count = 1;
        c.codec.decoded_channels = 8;
        return c;
    }

    // Documented full-scale widths used for compute profiling.
    static ModelConfig full_scale() {
        ModelConfig c;
        c.scales = 3;
        c.branch.base_channels = 64;
        c.branch.dense_block_count = 3;
        c.branch.res_block_count = 4;
        c.codec.key_channels = 32;
        c.codec.value_channels = 64;
        c.codec.block_count = 2;
        c.codec.decoded_channels = 32;
        return c;
    }
};

// Training protocol settings. Full-scale defaults follow the documented
// schedule: Adam(0.9, 0.999, 1e-8), lr 5e-4 halved at epochs 200/350/450/500,
// 600 epochs, batch 8, 256x256 patches, 8-frame subsequences.
struct TrainConfig {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::vector<int> decay_epochs{200, 350, 450, 500};
    double decay_factor = 0.5;
    int total_epochs = 600;
    int batch_size = 8;
    int patch = 256;
    int subseq_len = 8;
    double charbonnier_eps = 1e-3;
    bool augment = true; // random rotations and flips
    std::vector<double> scale_weights; // empty -> uniform 1/scales
    int steps_per_epoch = 0;           // 0 -> derived from dataset size
    int checkpoint_interval = 1;       // epochs between checkpoints
    int val_frames = 8;                // frames of the held-out clip scored per epoch

    void validate() const {
        if (!(lr > 0) || !(beta1 > 0) || !(beta2 > 0) || !(adam_eps > 0))
            throw ConfigError("optimizer settings must be positive");
        if (!(charbonnier_eps > 0)) throw ConfigError("charbonnier_eps must be positive");
        if (total_epochs < 1 || batch_size < 1 || patch < 1 || subseq_len < 1)
            throw ConfigError("training sizes must be >= 1");
        for (std::size_t i = 1; i < decay_epochs.size(); ++i)
            if (decay_epochs[i] <= decay_epochs[i - 1])
                throw ConfigError("decay_epochs must be strictly increasing");
    }

    // Step schedule: lr is halved once per milestone epoch reached.
    double lr_at_epoch(int epoch) const {
        double v = lr;
        for (int m : decay_epochs)
            if (epoch >= m) v *= decay_factor;
        return v;
    }

    double scale_weight(int scale_count, int level) const {
        if (scale_weights.empty()) return 1.0 / scale_count;
        if (static_cast<int>(scale_weights.size()) < scale_count)
            throw ConfigError("scale_weights shorter than scale count");
        return scale_weights[static_cast<std::size_t>(level - 1)];
    }

    static TrainConfig toy() {
        TrainConfig c;
        c.lr = 1e-3;
        c.decay_epochs = {20, 35, 45};
        c.total_epochs = 50;
        c.batch_size = 2;
        c.patch = 64;
        c.val_frames = 4;
        return c;
    }
};

// --- JSON (nlohmann) ---

inline void to_json(nlohmann::json& j, const CodecConfig& c) {
    j = {{"key_channels", c.key_channels},
         {"value_channels", c.value_channels},
         {"encoder_stride", c.encoder_stride},
         {"decoder_upscale", c.decoder_upscale},
         {"block_count", c.block_count},
         {"decoded_channels", c.decoded_channels}};
}

inline void from_json(const nlohmann::json& j, CodecConfig& c) {
    c.key_channels = j.value("key_channels", c.key_channels);
    c.value_channels = j.value("value_channels", c.value_channels);
    c.encoder_stride = j.value("encoder_stride", c.encoder_stride);
    c.decoder_upscale = j.value("decoder_upscale", c.decoder_upscale);
    c.block_count = j.value("block_count", c.block_count);
    c.decoded_channels = j.value("decoded_channels", c.decoded_channels);
}

inline void to_json(nlohmann::json& j, const BranchConfig& c) {
    j = {{"base_channels", c.base_channels},
         {"dense_block_count", c.dense_block_count},
         {"res_block_count", c.res_block_count},
         {"downsample_stride", c.downsample_stride},
         {"fuse_kernel", c.fuse_kernel}};
}

inline void from_json(const nlohmann::json& j, BranchConfig& c) {
    c.base_channels = j.value("base_channels", c.base_channels);
    c.dense_block_count = j.value("dense_block_count", c.dense_block_count);
    c.res_block_count = j.value("res_block_count", c.res_block_count);
    c.downsample_stride = j.value("downsample_stride", c.downsample_stride);
    c.fuse_kernel = j.value("fuse_kernel", c.fuse_kernel);
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"scales", c.scales},
         {"branch", c.branch},
         {"codec", c.codec},
         {"capacity", c.capacity},
         {"periods", c.periods},
         {"similarity", to_string(c.similarity)},
         {"attention_mode", to_string(c.attention_mode)},
         {"drop_recurrent_carry", c.drop_recurrent_carry},
         {"use_memory", c.use_memory}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    c.scales = j.value("scales", c.scales);
    if (j.contains("branch")) j.at("branch").get_to(c.branch);
    if (j.contains("codec")) j.at("codec").get_to(c.codec);
    c.capacity = j.value("capacity", c.capacity);
    if (j.contains("periods")) j.at("periods").get_to(c.periods);
    if (j.contains("similarity")) c.similarity = similarity_from_string(j.at("similarity"));
    if (j.contains("attention_mode"))
        c.attention_mode = attention_mode_from_string(j.at("attention_mode"));
    c.drop_recurrent_carry = j.value("drop_recurrent_carry", c.drop_recurrent_carry);
    c.use_memory = j.value("use_memory", c.use_memory);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"lr", c.lr},
         {"beta1", c.beta1},
         {"beta2", c.beta2},
         {"adam_eps", c.adam_eps},
         {"decay_epochs", c.decay_epochs},
         {"decay_factor", c.decay_factor},
         {"total_epochs", c.total_epochs},
         {"batch_size", c.batch_size},
         {"patch", c.patch},
         {"subseq_len", c.subseq_len},
         {"charbonnier_eps", c.charbonnier_eps},
         {"augment", c.augment},
         {"scale_weights", c.scale_weights},
         {"steps_per_epoch", c.steps_per_epoch},
         {"checkpoint_interval", c.checkpoint_interval},
         {"val_frames", c.val_frames}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    c.lr = j.value("lr", c.lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    if (j.contains("decay_epochs")) j.at("decay_epochs").get_to(c.decay_epochs);
    c.decay_factor = j.value("decay_factor", c.decay_factor);
    c.total_epochs = j.value("total_epochs", c.total_epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.patch = j.value("patch", c.patch);
    c.subseq_len = j.value("subseq_len", c.subseq_len);
    c.charbonnier_eps = j.value("charbonnier_eps", c.charbonnier_eps);
    c.augment = j.value("augment", c.augment);
    if (j.contains("scale_weights")) j.at("scale_weights").get_to(c.scale_weights);
    c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
    c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
    c.val_frames = j.value("val_frames", c.val_frames);
}

} // namespace memdeblur

#endif
