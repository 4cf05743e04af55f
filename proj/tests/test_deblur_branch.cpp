#include <catch2/catch_amalgamated.hpp>

#include "memdeblur/deblur_branch.hpp"
#include "testutil.hpp"

using namespace memdeblur;
using testutil::random_tensor;
using testutil::random_var;

using D = double;

namespace {

BranchConfig small_branch(int stride = 4) {
    BranchConfig c;
    c.base_channels = 16;
    c.dense_block_count = 1;
    c.res_block_count = 1;
    c.downsample_stride = stride;
    return c;
}

template <typename T>
void zero_params(ParamRegistry<T>& reg) {
    for (auto& [_, v] : reg.items()) v.value().fill(T(0));
}

} // namespace

TEST_CASE("downsample shape contract and determinism") {
    Rng rng(51);
    ParamRegistry<D> reg;
    Downsampler<D> d(reg, "d", small_branch(), rng);

    auto frame = random_var<D>({3, 64, 64}, rng, false);
    auto x1 = downsample(frame, d);
    REQUIRE(x1.value().shape() == std::vector<int>{16, 16, 16});
    auto x2 = downsample(frame, d);
    REQUIRE(bitwise_equal(x1.value(), x2.value()));

    CHECK_THROWS_AS(downsample(random_var<D>({3, 63, 64}, rng, false), d), std::logic_error);
}

TEST_CASE("downsample gradient check on an 8x8 input") {
    Rng rng(52);
    ParamRegistry<D> reg;
    auto cfg = small_branch();
    cfg.base_channels = 4;
    Downsampler<D> d(reg, "d", cfg, rng);

    auto frame = random_var<D>({3, 8, 8}, rng, true);
    auto fn = [&]() { return mean_all(downsample(frame, d)); };
    std::vector<Var<D>> leaves{frame};
    for (auto& [_, v] : reg.items()) leaves.push_back(v);
    REQUIRE(testutil::fd_check(fn, leaves, rng, 5) < 1e-4);
}

TEST_CASE("backward_cell contracts") {
    Rng rng(53);
    const int c = 8, m = 4;
    ParamRegistry<D> reg;
    RecurrentCell<D> cell(reg, "bwd", 4 * c + m, c, 1, rng);

    SECTION("all-zero inputs with zeroed params give a zero state") {
        zero_params(reg);
        auto z = zeros_var<D>({c, 4, 4});
        auto zm = zeros_var<D>({m, 4, 4});
        auto h = backward_cell(z, z, z, zm, z, cell);
        for (std::size_t i = 0; i < h.value().numel(); ++i) REQUIRE(h.value()[i] == 0.0);
    }

    SECTION("sequence-edge call with zero arrays succeeds") {
        auto x = random_var<D>({c, 4, 4}, rng, false);
        auto z = zeros_var<D>({c, 4, 4});
        auto zm = zeros_var<D>({m, 4, 4});
        auto h = backward_cell(x, z, z, zm, z, cell);
        REQUIRE(h.value().shape() == std::vector<int>{c, 4, 4});
        REQUIRE(h.value().all_finite());
    }

    SECTION("output is sensitive to the memory input") {
        auto x = random_var<D>({c, 4, 4}, rng, false);
        auto z = zeros_var<D>({c, 4, 4});
        auto m1 = random_var<D>({m, 4, 4}, rng, false);
        auto m2 = random_var<D>({m, 4, 4}, rng, false);
        auto h1 = backward_cell(x, z, z, m1, z, cell);
        auto h2 = backward_cell(x, z, z, m2, z, cell);
        REQUIRE(max_abs_diff(h1.value(), h2.value()) > 1e-8);
    }

    SECTION("spatial mismatch is rejected") {
        auto x = random_var<D>({c, 4, 4}, rng, false);
        auto bad = random_var<D>({c, 2, 4}, rng, false);
        auto zm = zeros_var<D>({m, 4, 4});
        CHECK_THROWS_AS(backward_cell(x, bad, x, zm, x, cell), ValidationError);
    }
}

TEST_CASE("forward_cell contracts") {
    Rng rng(54);
    const int c = 8, m = 4;
    ParamRegistry<D> reg;
    RecurrentCell<D> cell(reg, "fwd", 4 * c + 2 * m, c, 1, rng);

    SECTION("all-zero inputs with zeroed params give a zero state") {
        zero_params(reg);
        auto z = zeros_var<D>({c, 4, 4});
        auto zm = zeros_var<D>({m, 4, 4});
        auto h = forward_cell(z, z, z, zm, zm, z, cell);
        for (std::size_t i = 0; i < h.value().numel(); ++i) REQUIRE(h.value()[i] == 0.0);
    }

    SECTION("first frame: zero x_prev, h_prev, m_f with nonzero m_b succeeds") {
        auto x = random_var<D>({c, 4, 4}, rng, false);
        auto z = zeros_var<D>({c, 4, 4});
        auto zm = zeros_var<D>({m, 4, 4});
        auto m_b = random_var<D>({m, 4, 4}, rng, false);
        auto h = forward_cell(x, z, z, zm, m_b, z, cell);
        REQUIRE(h.value().shape() == std::vector<int>{c, 4, 4});
        REQUIRE(h.value().all_finite());
    }

    SECTION("output is sensitive to the forward memory") {
        auto x = random_var<D>({c, 4, 4}, rng, false);
        auto z = zeros_var<D>({c, 4, 4});
        auto zm = zeros_var<D>({m, 4, 4});
        auto m1 = random_var<D>({m, 4, 4}, rng, false);
        auto m2 = random_var<D>({m, 4, 4}, rng, false);
        auto h1 = forward_cell(x, z, z, m1, zm, z, cell);
        auto h2 = forward_cell(x, z, z, m2, zm, z, cell);
        REQUIRE(max_abs_diff(h1.value(), h2.value()) > 1e-8);
    }

    SECTION("drop_recurrent_carry drops the recurrent carry") {
        ParamRegistry<D> reg13;
        RecurrentCell<D> cell13(reg13, "fwd13", 3 * c + 2 * m, c, 1, rng);
        auto x = random_var<D>({c, 4, 4}, rng, false);
        auto z = zeros_var<D>({c, 4, 4});
        auto zm = zeros_var<D>({m, 4, 4});
        auto h = forward_cell(x, z, z, zm, zm, z, cell13, true);
        REQUIRE(h.value().shape() == std::vector<int>{c, 4, 4});
    }
}

TEST_CASE("fuse is a single convolutional layer") {
    Rng rng(55);
    const int c = 6;

    SECTION("zeroed params give zero output") {
        ParamRegistry<D> reg;
        FusionLayer<D> fusion(reg, "fuse", c, 3, rng);
        zero_params(reg);
        auto h = fuse(random_var<D>({c, 4, 4}, rng, false),
                      random_var<D>({c, 4, 4}, rng, false), fusion);
        for (std::size_t i = 0; i < h.value().numel(); ++i) REQUIRE(h.value()[i] == 0.0);
    }

    SECTION("linearity with zero bias") {
        ParamRegistry<D> reg;
        FusionLayer<D> fusion(reg, "fuse", c, 3, rng);
        fusion.conv.b.value().fill(0.0);
        auto hf = random_var<D>({c, 4, 4}, rng, false);
        auto hb = random_var<D>({c, 4, 4}, rng, false);
        const double alpha = 1.618;
        auto base = fuse(hf, hb, fusion);
        auto scaled = fuse(scale(hf, alpha), scale(hb, alpha), fusion);
        Tensor<D> expect = base.value();
        expect *= alpha;
        REQUIRE(max_abs_diff(expect, scaled.value()) < 1e-10);
    }

    SECTION("1x1 kernel equals a per-pixel matrix multiply") {
        ParamRegistry<D> reg;
        FusionLayer<D> fusion(reg, "fuse", c, 1, rng);
        auto hf = random_var<D>({c, 3, 2}, rng, false);
        auto hb = random_var<D>({c, 3, 2}, rng, false);
        auto out = fuse(hf, hb, fusion);
        const auto& w = fusion.conv.w.value(); // [c, 2c, 1, 1]
        const auto& b = fusion.conv.b.value();
        for (int oc = 0; oc < c; ++oc)
            for (int y = 0; y < 3; ++y)
                for (int x = 0; x < 2; ++x) {
                    double acc = b[static_cast<std::size_t>(oc)];
                    for (int ic = 0; ic < c; ++ic) {
                        acc += w[static_cast<std::size_t>(oc) * 2 * c + ic] *
                               hf.value().at(ic, y, x);
                        acc += w[static_cast<std::size_t>(oc) * 2 * c + c + ic] *
                               hb.value().at(ic, y, x);
                    }
                    REQUIRE_THAT(out.value().at(oc, y, x),
                                 Catch::Matchers::WithinAbs(acc, 1e-10));
                }
    }

    SECTION("shape mismatch is rejected") {
        ParamRegistry<D> reg;
        FusionLayer<D> fusion(reg, "fuse", c, 3, rng);
        CHECK_THROWS_AS(fuse(random_var<D>({c, 4, 4}, rng, false),
                             random_var<D>({c, 2, 4}, rng, false), fusion),
                        ValidationError);
    }
}

TEST_CASE("upsample restores frame resolution with a global residual") {
    Rng rng(56);
    ParamRegistry<D> reg;
    Upsampler<D> up(reg, "up", small_branch(), rng, /*zero_init_final=*/false);

    auto h = random_var<D>({16, 16, 16}, rng, false);
    auto frame = random_var<D>({3, 64, 64}, rng, false, 0.0, 1.0);
    auto out = upsample(h, frame, up);
    REQUIRE(out.value().shape() == std::vector<int>{3, 64, 64});

    SECTION("zeroed final layer reproduces the input exactly") {
        up.out.zero();
        auto out2 = upsample(h, frame, up);
        REQUIRE(bitwise_equal(out2.value(), frame.value()));
    }
}

TEST_CASE("upsample gradient check on an 8x8 toy") {
    Rng rng(57);
    ParamRegistry<D> reg;
    auto cfg = small_branch(2);
    cfg.base_channels = 4;
    Upsampler<D> up(reg, "up", cfg, rng, false);

    auto h = random_var<D>({4, 4, 4}, rng, true);
    auto frame = random_var<D>({3, 8, 8}, rng, true);
    auto fn = [&]() { return mean_all(upsample(h, frame, up)); };
    std::vector<Var<D>> leaves{h, frame};
    for (auto& [_, v] : reg.items()) leaves.push_back(v);
    REQUIRE(testutil::fd_check(fn, leaves, rng, 5) < 1e-4);
}
