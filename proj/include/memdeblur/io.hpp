#ifndef MEMDEBLUR_IO_HPP
#define MEMDEBLUR_IO_HPP

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "memdeblur/parallel.hpp"
#include "memdeblur/png_io.hpp"
#include "memdeblur/training.hpp"

namespace memdeblur {

namespace detail {

inline std::string frame_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%06d.png", index);
    return buf;
}

} // namespace detail

// Load frame_%06d.png (contiguous from 0) as [0,1] float frames. Gaps,
// mixed dims and unreadable files raise IoError naming the offender.
template <typename T>
std::vector<Tensor<T>> load_sequence(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);

    int count = 0;
    while (fs::exists(fs::path(dir) / detail::frame_name(count))) ++count;
    if (count == 0) throw IoError("no frame_000000.png in " + dir);

    // a frame beyond the contiguous prefix means a numbering gap
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        int idx = -1;
        if (std::sscanf(name.c_str(), "frame_%d.png", &idx) == 1 && idx >= count)
            throw IoError("gap in frame numbering in " + dir + ": missing " +
                          detail::frame_name(count) + " but found " + name);
    }

    std::vector<Tensor<T>> frames(static_cast<std::size_t>(count));
    detail::parallel_for(count, [&](int i) {
        frames[static_cast<std::size_t>(i)] =
            read_png<T>((fs::path(dir) / detail::frame_name(i)).string());
    });
    for (int i = 1; i < count; ++i)
        if (!frames[static_cast<std::size_t>(i)].same_shape(frames[0]))
            throw IoError("mixed frame dims in " + dir + " at " + detail::frame_name(i));
    return frames;
}

template <typename T>
void save_sequence(const std::string& dir, const std::vector<Tensor<T>>& frames) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    detail::parallel_for(static_cast<int>(frames.size()), [&](int i) {
        write_png((fs::path(dir) / detail::frame_name(i)).string(),
                  frames[static_cast<std::size_t>(i)]);
    });
}

// Synthetic blur: blurry[i] = mean of the sharp frames in an odd window
// centered at i; targets are the center frames. Output length is
// len - window + 1.
template <typename T>
SequencePair<T> synthesize_blur(const std::vector<Tensor<T>>& sharp, int window) {
    if (window < 1 || window % 2 != 1) throw UsageError("synthesize_blur: window must be odd");
    if (static_cast<int>(sharp.size()) < window)
        throw UsageError("synthesize_blur: window larger than the sequence");
    const int half = window / 2;
    const int out_len = static_cast<int>(sharp.size()) - window + 1;

    SequencePair<T> out;
    for (int i = 0; i < out_len; ++i) {
        const int center = i + half;
        Tensor<double> acc(sharp.front().shape());
        for (int j = center - half; j <= center + half; ++j)
            for (std::size_t p = 0; p < acc.numel(); ++p)
                acc[p] += static_cast<double>(sharp[static_cast<std::size_t>(j)][p]);
        Tensor<T> blurry(sharp.front().shape());
        for (std::size_t p = 0; p < acc.numel(); ++p)
            blurry[p] = static_cast<T>(acc[p] / window);
        out.blurry.push_back(std::move(blurry));
        out.sharp.push_back(sharp[static_cast<std::size_t>(center)]);
    }
    return out;
}

// Dataset layout: a sequence directory holds blurry/ and sharp/ siblings;
// a dataset directory holds sequence directories.
template <typename T>
Dataset<T> load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    const auto is_pair_dir = [](const fs::path& p) {
        return fs::is_directory(p / "blurry") && fs::is_directory(p / "sharp");
    };

    std::vector<fs::path> seq_dirs;
    if (is_pair_dir(dir)) {
        seq_dirs.emplace_back(dir);
    } else if (fs::is_directory(dir)) {
        for (const auto& entry : fs::directory_iterator(dir))
            if (entry.is_directory() && is_pair_dir(entry.path()))
                seq_dirs.push_back(entry.path());
        std::sort(seq_dirs.begin(), seq_dirs.end());
    }
    if (seq_dirs.empty())
        throw IoError("no sequence directories with blurry/ and sharp/ under " + dir);

    Dataset<T> dataset;
    for (const auto& sd : seq_dirs) {
        SequencePair<T> pair;
        pair.blurry = load_sequence<T>((sd / "blurry").string());
        pair.sharp = load_sequence<T>((sd / "sharp").string());
        if (pair.blurry.size() != pair.sharp.size())
            throw IoError("blurry/sharp length mismatch in " + sd.string());
        dataset.push_back(std::move(pair));
    }
    return dataset;
}

} // namespace memdeblur

#endif
