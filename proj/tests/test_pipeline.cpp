#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "memdeblur/pipeline.hpp"
#include "testutil.hpp"

using namespace memdeblur;
using testutil::random_tensor;

using D = double;
using F = float;

namespace {

template <typename T>
std::vector<Tensor<T>> random_frames(int n, int h, int w, Rng& rng) {
    std::vector<Tensor<T>> out;
    for (int i = 0; i < n; ++i)
        out.push_back(testutil::random_tensor<T>({3, h, w}, rng, 0.0, 1.0));
    return out;
}

ModelConfig tiny_cfg(int scales) {
    ModelConfig c = ModelConfig::toy();
    c.scales = scales;
    c.branch.base_channels = 8;
    c.codec.key_channels = 4;
    c.codec.value_channels = 8;
    c.codec.decoded_channels = 4;
    return c;
}

} // namespace

TEST_CASE("build_pyramid level dims and padding") {
    Rng rng(61);
    auto frames = random_frames<D>(2, 64, 64, rng);
    auto pyr = build_pyramid(frames, 3, 16);
    REQUIRE(pyr.levels[0].frames[0].value().shape() == std::vector<int>{3, 64, 64});
    REQUIRE(pyr.levels[1].frames[0].value().shape() == std::vector<int>{3, 32, 32});
    REQUIRE(pyr.levels[2].frames[0].value().shape() == std::vector<int>{3, 16, 16});

    // non-multiple dims: ceil halving then pad to the stride multiple
    auto odd = random_frames<D>(1, 70, 52, rng);
    auto p2 = build_pyramid(odd, 3, 16);
    REQUIRE(p2.levels[0].orig_h == 70);
    REQUIRE(p2.levels[0].frames[0].value().dim(1) == 80);
    REQUIRE(p2.levels[1].orig_h == 35);
    REQUIRE(p2.levels[1].orig_w == 26);
    REQUIRE(p2.levels[1].frames[0].value().dim(1) == 48);
    REQUIRE(p2.levels[2].orig_h == 18);

    CHECK_THROWS_AS(build_pyramid(std::vector<Tensor<D>>{}, 3, 16), UsageError);
}

TEST_CASE("build_pyramid keeps constants constant") {
    std::vector<Tensor<D>> frames{Tensor<D>::full({3, 32, 32}, 0.42)};
    auto pyr = build_pyramid(frames, 3, 4);
    for (const auto& lvl : pyr.levels)
        for (std::size_t i = 0; i < lvl.frames[0].value().numel(); ++i)
            REQUIRE_THAT(lvl.frames[0].value()[i], Catch::Matchers::WithinAbs(0.42, 1e-12));
}

TEST_CASE("build_pyramid bilinear halving matches the box-average oracle") {
    Tensor<D> ramp({3, 4, 4});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) ramp.at(c, y, x) = c + 0.25 * y + 0.0625 * x;
    auto pyr = build_pyramid(std::vector<Tensor<D>>{ramp}, 2, 2);
    const auto& half = pyr.levels[1].frames[0].value();
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 2; ++y)
            for (int x = 0; x < 2; ++x) {
                const double avg = (ramp.at(c, 2 * y, 2 * x) + ramp.at(c, 2 * y, 2 * x + 1) +
                                    ramp.at(c, 2 * y + 1, 2 * x) +
                                    ramp.at(c, 2 * y + 1, 2 * x + 1)) /
                                   4.0;
                REQUIRE_THAT(half.at(c, y, x), Catch::Matchers::WithinAbs(avg, 1e-12));
            }
}

TEST_CASE("reset_state produces zero states and independent empty banks") {
    auto cfg = tiny_cfg(2);
    auto a = reset_state<F>(cfg, 64, 64);
    auto b = reset_state<F>(cfg, 64, 64);
    REQUIRE(a.forward_bank.empty());
    REQUIRE(a.backward_bank.empty());
    REQUIRE(static_cast<int>(a.state.h_f.size()) == cfg.scales);
    REQUIRE(a.state.h_f[0].shape() == std::vector<int>{8, 16, 16});
    REQUIRE(a.state.h_b[1].shape() == std::vector<int>{8, 8, 8});
    for (const auto& t : a.state.h_f)
        for (std::size_t i = 0; i < t.numel(); ++i) REQUIRE(t[i] == 0.0f);

    // writing into one bank leaves the other reset product untouched
    Rng rng(62);
    MemoryEntry<F> e;
    e.key = Var<F>(testutil::random_tensor<F>({4, 2, 2}, rng));
    e.value_h = Var<F>(testutil::random_tensor<F>({8, 2, 2}, rng));
    e.frame_index = 1;
    e.direction = Direction::backward;
    a.backward_bank.write(std::move(e));
    REQUIRE(a.backward_bank.size() == 1);
    REQUIRE(b.backward_bank.empty());
}

TEST_CASE("identity at initialization: zeroed final layer returns the input") {
    Rng rng(63);
    auto cfg = tiny_cfg(2);
    Model<F> model(cfg, 7);
    model.zero_final_layers();

    SECTION("single frame") {
        auto frames = random_frames<F>(1, 64, 64, rng);
        auto res = restore_sequence(frames, model);
        REQUIRE(bitwise_equal(res.restored[0][0], frames[0]));
    }
    SECTION("six frames, all scales") {
        auto frames = random_frames<F>(6, 64, 64, rng);
        auto res = restore_sequence(frames, model);
        REQUIRE(res.restored.size() == 2);
        for (int i = 0; i < 6; ++i)
            REQUIRE(bitwise_equal(res.restored[0][static_cast<std::size_t>(i)],
                                  frames[static_cast<std::size_t>(i)]));
    }
    SECTION("non-multiple dims crop back exactly") {
        auto frames = random_frames<F>(2, 70, 52, rng);
        auto res = restore_sequence(frames, model);
        for (int i = 0; i < 2; ++i)
            REQUIRE(bitwise_equal(res.restored[0][static_cast<std::size_t>(i)],
                                  frames[static_cast<std::size_t>(i)]));
    }
}

TEST_CASE("restore_sequence output contract on a toy sequence") {
    Rng rng(64);
    auto cfg = tiny_cfg(2);
    Model<F> model(cfg, 3);
    auto frames = random_frames<F>(6, 64, 64, rng);
    auto res = restore_sequence(frames, model);

    REQUIRE(res.restored[0].size() == 6);
    for (const auto& r : res.restored[0]) {
        REQUIRE(r.shape() == std::vector<int>{3, 64, 64});
        REQUIRE(r.all_finite());
    }
    REQUIRE(res.restored[1][0].shape() == std::vector<int>{3, 32, 32});
    REQUIRE(res.forward_max_size <= cfg.capacity);
    REQUIRE(res.backward_max_size <= cfg.capacity);
}

TEST_CASE("memory write schedule matches the enumeration oracle") {
    Rng rng(65);
    auto cfg = tiny_cfg(3);
    cfg.periods = {5, 2, 1};
    cfg.capacity = 5;
    Model<F> model(cfg, 5);
    auto frames = random_frames<F>(8, 64, 64, rng);
    auto res = restore_sequence(frames, model);

    // enumeration oracle over should_memorize, in pipeline visit order:
    // backward sweeps visit i = N..1; forward sweeps i = 1..N
    std::vector<std::pair<int, int>> expect_bwd, expect_fwd;
    for (int s = 3; s >= 1; --s) {
        for (int i = 8; i >= 1; --i)
            if ((i - 1) % cfg.periods[static_cast<std::size_t>(s - 1)] == 0)
                expect_bwd.emplace_back(s, i);
        for (int i = 1; i <= 8; ++i)
            if ((i - 1) % cfg.periods[static_cast<std::size_t>(s - 1)] == 0)
                expect_fwd.emplace_back(s, i);
    }
    REQUIRE(res.backward_write_log == expect_bwd);
    REQUIRE(res.forward_write_log == expect_fwd);

    // scale-level membership: 1 -> {1,6}, 2 -> {1,3,5,7}, 3 -> all
    std::set<int> s1, s2, s3;
    for (auto [s, f] : res.forward_write_log) {
        if (s == 1) s1.insert(f);
        if (s == 2) s2.insert(f);
        if (s == 3) s3.insert(f);
    }
    REQUIRE(s1 == std::set<int>{1, 6});
    REQUIRE(s2 == std::set<int>{1, 3, 5, 7});
    REQUIRE(s3 == std::set<int>{1, 2, 3, 4, 5, 6, 7, 8});

    REQUIRE(res.forward_max_size <= 5);
    REQUIRE(res.backward_max_size <= 5);
}

TEST_CASE("restoration is deterministic") {
    Rng rng(66);
    auto cfg = tiny_cfg(2);
    Model<F> model(cfg, 11);
    auto frames = random_frames<F>(4, 48, 48, rng);
    auto r1 = restore_sequence(frames, model);
    auto r2 = restore_sequence(frames, model);
    for (std::size_t s = 0; s < r1.restored.size(); ++s)
        for (std::size_t i = 0; i < r1.restored[s].size(); ++i)
            REQUIRE(bitwise_equal(r1.restored[s][i], r2.restored[s][i]));
}

TEST_CASE("scales share one bank: finer queries attend over coarser entries") {
    Rng rng(67);
    auto cfg = tiny_cfg(3);
    Model<F> model(cfg, 13);
    auto frames = random_frames<F>(4, 64, 64, rng);
    RestoreOptions<F> opts;
    opts.record_traces = true;
    auto res = restore_sequence(frames, model, opts);

    bool found = false;
    for (const auto& tr : res.traces) {
        if (tr.scale != 2) continue;
        // column offsets of scale-3 entries inside W
        int off = 0;
        double mass = 0;
        bool has_coarser = false;
        for (const auto& e : tr.entries) {
            const int p = e.key_h * e.key_w;
            if (e.scale == 3) {
                has_coarser = true;
                for (int q = 0; q < tr.weights.dim(0); ++q)
                    for (int j = 0; j < p; ++j) mass += tr.weights.at(q, off + j);
            }
            off += p;
        }
        if (has_coarser) {
            found = true;
            REQUIRE(mass > 0.0);
        }
    }
    REQUIRE(found);
}

TEST_CASE("recorded attention traces satisfy the row-sum invariant") {
    Rng rng(68);
    auto cfg = tiny_cfg(2);
    Model<F> model(cfg, 17);
    auto frames = random_frames<F>(5, 32, 32, rng);
    RestoreOptions<F> opts;
    opts.record_traces = true;
    auto res = restore_sequence(frames, model, opts);
    REQUIRE_FALSE(res.traces.empty());
    for (const auto& tr : res.traces) {
        const double expect =
            tr.mode == AttentionMode::verbatim
                ? 1.0 / std::sqrt(static_cast<double>(cfg.codec.key_channels))
                : 1.0;
        for (int q = 0; q < tr.weights.dim(0); ++q) {
            double sum = 0;
            for (int p = 0; p < tr.weights.dim(1); ++p) sum += tr.weights.at(q, p);
            REQUIRE_THAT(sum, Catch::Matchers::WithinAbs(expect, 1e-5));
        }
    }
}
