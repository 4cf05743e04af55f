#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <set>

#include "memdeblur/io.hpp"
#include "memdeblur/training.hpp"
#include "testutil.hpp"

using namespace memdeblur;
using testutil::random_tensor;

using D = double;
using F = float;

namespace {

ModelConfig train_cfg() {
    ModelConfig c = ModelConfig::toy();
    c.scales = 2;
    c.branch.base_channels = 8;
    c.codec.key_channels = 4;
    c.codec.value_channels = 8;
    c.codec.decoded_channels = 4;
    return c;
}

template <typename T>
Dataset<T> ramp_dataset(int frames, int h, int w, Rng& rng) {
    // a moving bright square over a noisy background, blurred temporally
    std::vector<Tensor<T>> sharp;
    for (int i = 0; i < frames + 4; ++i) {
        Tensor<T> f = testutil::random_tensor<T>({3, h, w}, rng, 0.1, 0.3);
        const int cx = 4 + (2 * i) % (w - 12);
        for (int c = 0; c < 3; ++c)
            for (int y = 6; y < h - 6; ++y)
                for (int x = cx; x < cx + 6; ++x) f.at(c, y, x) = T(0.9);
        sharp.push_back(std::move(f));
    }
    Dataset<T> d;
    d.push_back(synthesize_blur(sharp, 5));
    return d;
}

} // namespace

TEST_CASE("charbonnier closed forms and oracle") {
    Rng rng(71);

    Tensor<D> a = random_tensor<D>({3, 4, 4}, rng);
    REQUIRE_THAT(charbonnier(a, a, 1e-3), Catch::Matchers::WithinAbs(1e-3, 1e-15));

    // |diff| = 3, eps = 4: the 3-4-5 triangle
    Tensor<D> x = Tensor<D>::scalar(3.0);
    Tensor<D> y = Tensor<D>::scalar(0.0);
    REQUIRE_THAT(charbonnier(x, y, 4.0), Catch::Matchers::WithinAbs(5.0, 1e-12));

    Tensor<D> b = random_tensor<D>({3, 4, 4}, rng);
    double oracle = 0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        oracle += std::sqrt((a[i] - b[i]) * (a[i] - b[i]) + 1e-6);
    oracle /= static_cast<double>(a.numel());
    REQUIRE_THAT(charbonnier(a, b, 1e-3), Catch::Matchers::WithinAbs(oracle, 1e-10));

    CHECK_THROWS_AS(charbonnier(a, Tensor<D>({3, 4, 5}), 1e-3), ValidationError);
    CHECK_THROWS_AS(charbonnier(a, b, 0.0), ValidationError);
}

TEST_CASE("charbonnier is bounded below by eps and monotone in |diff|") {
    Rng rng(72);
    for (int t = 0; t < 20; ++t) {
        Tensor<D> a = random_tensor<D>({2, 3, 3}, rng, -2, 2);
        Tensor<D> b = random_tensor<D>({2, 3, 3}, rng, -2, 2);
        const double eps = rng.uniform(1e-4, 1e-1);
        REQUIRE(charbonnier(a, b, eps) >= eps);

        // growing one |diff| strictly grows the loss
        Tensor<D> worse = a;
        worse[0] = b[0] + (a[0] - b[0]) * 2 + (a[0] >= b[0] ? 0.5 : -0.5);
        REQUIRE(charbonnier(worse, b, eps) > charbonnier(a, b, eps));
    }
}

TEST_CASE("multiscale_loss composes charbonnier per scale") {
    Rng rng(73);
    TrainConfig cfg;
    cfg.charbonnier_eps = 1e-3;

    SECTION("identical inputs give eps at every scale") {
        std::vector<std::vector<Tensor<D>>> seq{
            {random_tensor<D>({3, 8, 8}, rng), random_tensor<D>({3, 8, 8}, rng)},
            {random_tensor<D>({3, 4, 4}, rng), random_tensor<D>({3, 4, 4}, rng)}};
        auto rep = multiscale_loss(seq, seq, cfg);
        REQUIRE_THAT(rep.total, Catch::Matchers::WithinAbs(1e-3, 1e-12));
        for (double s : rep.per_scale)
            REQUIRE_THAT(s, Catch::Matchers::WithinAbs(1e-3, 1e-12));
    }

    SECTION("single scale with weight 1 equals charbonnier") {
        cfg.scale_weights = {1.0};
        std::vector<std::vector<Tensor<D>>> p{{random_tensor<D>({3, 6, 6}, rng)}};
        std::vector<std::vector<Tensor<D>>> t{{random_tensor<D>({3, 6, 6}, rng)}};
        auto rep = multiscale_loss(p, t, cfg);
        REQUIRE_THAT(rep.total,
                     Catch::Matchers::WithinAbs(charbonnier(p[0][0], t[0][0], 1e-3), 1e-12));
    }

    SECTION("two scales match the hand-computed weighted sum") {
        cfg.scale_weights = {0.7, 0.3};
        std::vector<std::vector<Tensor<D>>> p{{random_tensor<D>({3, 6, 6}, rng)},
                                              {random_tensor<D>({3, 3, 3}, rng)}};
        std::vector<std::vector<Tensor<D>>> t{{random_tensor<D>({3, 6, 6}, rng)},
                                              {random_tensor<D>({3, 3, 3}, rng)}};
        auto rep = multiscale_loss(p, t, cfg);
        const double expect = 0.7 * charbonnier(p[0][0], t[0][0], 1e-3) +
                              0.3 * charbonnier(p[1][0], t[1][0], 1e-3);
        REQUIRE_THAT(rep.total, Catch::Matchers::WithinAbs(expect, 1e-12));
        REQUIRE_THAT(rep.total,
                     Catch::Matchers::WithinAbs(0.7 * rep.per_scale[0] + 0.3 * rep.per_scale[1],
                                                1e-12));
    }

    SECTION("length mismatch is rejected") {
        std::vector<std::vector<Tensor<D>>> p{{random_tensor<D>({3, 4, 4}, rng)}};
        std::vector<std::vector<Tensor<D>>> t{
            {random_tensor<D>({3, 4, 4}, rng), random_tensor<D>({3, 4, 4}, rng)}};
        CHECK_THROWS_AS(multiscale_loss(p, t, cfg), ValidationError);
    }
}

TEST_CASE("graph and plain multiscale losses agree") {
    Rng rng(74);
    TrainConfig cfg;
    std::vector<std::vector<Var<D>>> pv{{Var<D>(random_tensor<D>({3, 6, 6}, rng))},
                                        {Var<D>(random_tensor<D>({3, 3, 3}, rng))}};
    std::vector<std::vector<Tensor<D>>> p{{pv[0][0].value()}, {pv[1][0].value()}};
    std::vector<std::vector<Tensor<D>>> t{{random_tensor<D>({3, 6, 6}, rng)},
                                          {random_tensor<D>({3, 3, 3}, rng)}};
    auto graph = multiscale_loss_graph(pv, t, cfg);
    auto rep = multiscale_loss(p, t, cfg);
    REQUIRE_THAT(graph.value()[0], Catch::Matchers::WithinAbs(rep.total, 1e-12));
}

TEST_CASE("augment applies one transform to both streams") {
    Rng rng(75);

    SECTION("identity draw leaves the pair unchanged") {
        Tensor<D> f = random_tensor<D>({3, 6, 6}, rng);
        AugmentDraw identity{};
        REQUIRE(bitwise_equal(apply_augment(f, identity), f));
    }

    SECTION("180-degree rotation is an involution") {
        Tensor<D> f = random_tensor<D>({3, 5, 7}, rng);
        REQUIRE(bitwise_equal(rotate90(rotate90(f, 2), 2), f));
    }

    SECTION("marker pixels land at the same target location in both streams") {
        for (int trial = 0; trial < 10; ++trial) {
            std::vector<Tensor<D>> blurry{Tensor<D>::zeros({3, 8, 8}),
                                          Tensor<D>::zeros({3, 8, 8})};
            std::vector<Tensor<D>> sharp{Tensor<D>::zeros({3, 8, 8}),
                                         Tensor<D>::zeros({3, 8, 8})};
            const int r = static_cast<int>(rng.uniform_index(8));
            const int c = static_cast<int>(rng.uniform_index(8));
            for (auto* seq : {&blurry, &sharp})
                for (auto& f : *seq) f.at(0, r, c) = 1.0;
            augment(blurry, sharp, rng);
            // find the marker in every frame; all four must agree
            std::set<std::pair<int, int>> found;
            for (auto* seq : {&blurry, &sharp})
                for (auto& f : *seq)
                    for (int y = 0; y < 8; ++y)
                        for (int x = 0; x < 8; ++x)
                            if (f.at(0, y, x) == 1.0) found.insert({y, x});
            REQUIRE(found.size() == 1);
        }
    }
}

TEST_CASE("sample_subsequence windows and crops") {
    Rng rng(76);
    SequencePair<D> seq;
    for (int i = 0; i < 8; ++i) {
        // encode the frame index into the tensor so order is observable
        seq.blurry.push_back(Tensor<D>::full({3, 16, 16}, i));
        seq.sharp.push_back(Tensor<D>::full({3, 16, 16}, i + 100));
    }

    SECTION("whole sequence when lengths match") {
        auto s = sample_subsequence(seq, 8, 16, rng);
        REQUIRE(s.blurry.size() == 8);
        for (int i = 0; i < 8; ++i) REQUIRE(s.blurry[static_cast<std::size_t>(i)][0] == i);
    }

    SECTION("crops stay in bounds and windows are contiguous") {
        for (int t = 0; t < 1000; ++t) {
            auto s = sample_subsequence(seq, 3, 5, rng);
            REQUIRE(s.blurry.size() == 3);
            REQUIRE(s.blurry[0].shape() == std::vector<int>{3, 5, 5});
            const int start = static_cast<int>(s.blurry[0][0]);
            for (int i = 0; i < 3; ++i) {
                REQUIRE(s.blurry[static_cast<std::size_t>(i)][0] == start + i);
                REQUIRE(s.sharp[static_cast<std::size_t>(i)][0] == start + i + 100);
            }
        }
    }

    SECTION("too-short sequences are a usage error") {
        CHECK_THROWS_AS(sample_subsequence(seq, 9, 8, rng), UsageError);
        CHECK_THROWS_AS(sample_subsequence(seq, 4, 17, rng), UsageError);
    }
}

TEST_CASE("learning-rate schedule halves at the milestones") {
    TrainConfig cfg; // lr 5e-4, milestones 200/350/450/500
    REQUIRE_THAT(cfg.lr_at_epoch(199), Catch::Matchers::WithinAbs(5e-4, 1e-15));
    REQUIRE_THAT(cfg.lr_at_epoch(200), Catch::Matchers::WithinAbs(2.5e-4, 1e-15));
    REQUIRE_THAT(cfg.lr_at_epoch(500), Catch::Matchers::WithinAbs(3.125e-5, 1e-15));

    // non-increasing step function taking exactly milestones+1 distinct values
    std::set<double> values;
    double prev = cfg.lr_at_epoch(1);
    for (int e = 1; e <= cfg.total_epochs; ++e) {
        const double lr = cfg.lr_at_epoch(e);
        REQUIRE(lr <= prev);
        prev = lr;
        values.insert(lr);
    }
    REQUIRE(values.size() == cfg.decay_epochs.size() + 1);
}

TEST_CASE("one optimizer step on a frozen batch decreases the loss") {
    Rng data_rng(77);
    auto dataset = ramp_dataset<F>(10, 32, 32, data_rng);
    TrainConfig tcfg = TrainConfig::toy();
    tcfg.subseq_len = 3;
    tcfg.patch = 32;
    tcfg.charbonnier_eps = 1e-3;

    for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
        Model<F> model(train_cfg(), seed);
        Adam<F> opt(model.params, tcfg);
        Rng rng(seed);
        auto sample = sample_subsequence(dataset[0], tcfg.subseq_len, tcfg.patch, rng);

        const auto batch_loss = [&]() {
            auto graph = restore_sequence_graph(sample.blurry, model);
            auto targets =
                pyramid_targets(sample.sharp, model.cfg.scales, model.cfg.frame_stride());
            return multiscale_loss_graph(graph.restored, targets, tcfg);
        };

        Var<F> loss = batch_loss();
        const double before = loss.value()[0];
        opt.zero_grad();
        backward(loss);
        opt.step(1e-4);

        NoGradGuard ng;
        const double after = batch_loss().value()[0];
        REQUIRE(after < before);
    }
}

TEST_CASE("training is deterministic and resumable") {
    namespace fs = std::filesystem;
    Rng data_rng(78);
    auto dataset = ramp_dataset<F>(8, 32, 32, data_rng);

    TrainConfig tcfg = TrainConfig::toy();
    tcfg.total_epochs = 4;
    tcfg.steps_per_epoch = 2;
    tcfg.batch_size = 1;
    tcfg.subseq_len = 3;
    tcfg.patch = 32;
    tcfg.checkpoint_interval = 1;
    tcfg.val_frames = 2;

    const std::string dir = (fs::temp_directory_path() / "memdeblur_train_test").string();
    fs::remove_all(dir);

    Model<F> m1(train_cfg(), 9);
    auto r1 = train_loop(dataset, m1, tcfg, 1234, dir);

    SECTION("same seed reproduces the loss curve") {
        Model<F> m2(train_cfg(), 9);
        auto r2 = train_loop(dataset, m2, tcfg, 1234);
        REQUIRE(r1.loss_curve == r2.loss_curve);
    }

    SECTION("different seeds explore different batches") {
        Model<F> m3(train_cfg(), 9);
        auto r3 = train_loop(dataset, m3, tcfg, 999);
        REQUIRE(r1.loss_curve != r3.loss_curve);
    }

    SECTION("resume from an epoch checkpoint continues the same curve") {
        auto ckpt = load_checkpoint(dir + "/ckpt_epoch_0002.mdar");
        REQUIRE(ckpt.epoch == 2);
        Model<F> m4(ckpt.model, 777); // fresh init, then overwritten by resume
        auto r4 = train_loop(dataset, m4, tcfg, 1234, "", ckpt);
        // epochs 3..4: the tail of the uninterrupted curve
        std::vector<double> tail(r1.loss_curve.end() - 4, r1.loss_curve.end());
        REQUIRE(r4.loss_curve == tail);
    }

    SECTION("metrics lines carry epoch, loss, lr and validation psnr") {
        REQUIRE(r1.metrics.size() == 4);
        for (const auto& rec : r1.metrics) {
            REQUIRE(rec.lr > 0);
            REQUIRE(std::isfinite(rec.loss));
            REQUIRE(std::isfinite(rec.psnr_val));
            REQUIRE(rec.to_line().find("psnr_val") != std::string::npos);
        }
    }
}

TEST_CASE("non-finite loss aborts with a diagnostic dump") {
    namespace fs = std::filesystem;
    Rng data_rng(79);
    auto dataset = ramp_dataset<F>(6, 32, 32, data_rng);

    TrainConfig tcfg = TrainConfig::toy();
    tcfg.total_epochs = 1;
    tcfg.steps_per_epoch = 1;
    tcfg.batch_size = 1;
    tcfg.subseq_len = 2;
    tcfg.patch = 32;

    Model<F> model(train_cfg(), 21);
    model.params.items()[0].second.value()[0] = std::numeric_limits<F>::quiet_NaN();

    const std::string dir = (fs::temp_directory_path() / "memdeblur_nan_test").string();
    fs::remove_all(dir);
    CHECK_THROWS_AS(train_loop(dataset, model, tcfg, 5, dir), TrainingError);
    REQUIRE(fs::exists(dir + "/diagnostic_batch.mdar"));
}
