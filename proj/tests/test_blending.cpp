#include "faceswap/blending.hpp"

#include "doctest.h"
#include "oracles.hpp"

#include <random>

using namespace fswap;

namespace {

Landmarks outline(std::vector<Point> pts) {
    Landmarks lm;
    const int n = int(pts.size());
    lm.points = std::move(pts);
    lm.index_groups[groups::kOutline] = {0, n};
    return lm;
}

Landmarks span(double width) { return outline({{0, 0}, {width, 0}, {width / 2, width}}); }

Plane<double> random_mask(int rows, int cols, std::mt19937_64& rng, bool binary) {
    std::uniform_real_distribution<double> u(0, 1);
    Plane<double> m(rows, cols);
    for (int y = 0; y < rows; ++y)
        for (int x = 0; x < cols; ++x) m(y, x) = binary ? double(u(rng) < 0.4) : u(rng);
    return m;
}

ImageF random_image(int rows, int cols, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> u(-1, 1);
    ImageF img(rows, cols, 3);
    for (int c = 0; c < 3; ++c) img.plane(c) = img.plane(c).unaryExpr([&](float) { return u(rng); });
    return img;
}

FrameSwapInputs<float> swap_inputs(std::mt19937_64& rng, const ImageF& frame) {
    FrameSwapInputs<float> in;
    in.frame = frame;
    in.generated_crop = random_image(16, 16, rng);
    in.transform = AffineTransform::similarity(0.5, 0.1, -2, -1);
    in.mask_crop = binary_mask_from_outline<float>(outline({{3, 3}, {13, 3}, {13, 13}, {3, 13}}), 16, 16);
    in.landmarks_gen = span(10);
    in.landmarks_tgt = span(10);
    return in;
}

} // namespace

TEST_CASE("binary_mask_from_outline examples") {
    const auto tri = binary_mask_from_outline<float>(outline({{0, 0}, {8, 0}, {0, 8}}), 16, 16);
    CHECK(tri.values(1, 1) == 1.0f);
    CHECK(tri.values(12, 12) == 0.0f);
    CHECK(tri.values(0, 8) == 1.0f);
    CHECK(tri.values(0, 9) == 0.0f);
    CHECK(tri.in_unit_range());

    const auto full = binary_mask_from_outline<float>(outline({{-1, -1}, {20, -1}, {20, 20}, {-1, 20}}), 16, 16);
    CHECK((full.values == 1.0f).all());

    CHECK_THROWS_AS(binary_mask_from_outline<float>(outline({{0, 0}, {1, 1}, {2, 2}, {5, 5}}), 8, 8), DegenerateOutline);
    CHECK_THROWS_AS(binary_mask_from_outline<float>(outline({{0, 0}, {1, 1}}), 8, 8), DegenerateOutline);
}

TEST_CASE("binary_mask_from_outline matches point-in-polygon") {
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 30; ++trial) {
        const Point c{8 + 16 * u(rng), 8 + 16 * u(rng)};
        const double rx = 3 + 12 * u(rng), ry = 3 + 12 * u(rng);
        std::vector<double> angles(std::size_t(5 + trial % 7));
        for (auto& a : angles) a = 2 * M_PI * u(rng);
        std::sort(angles.begin(), angles.end());
        std::vector<Point> poly;
        for (double a : angles) poly.push_back(c + Point{rx * std::cos(a), ry * std::sin(a)});
        // Shuffle the outline order; the hull must not care.
        std::vector<Point> shuffled = poly;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        const auto m = binary_mask_from_outline<double>(outline(shuffled), 32, 32);
        int mismatches = 0;
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x)
                mismatches += (m.values(y, x) == 1.0) != oracle::inside_polygon(poly, x, y);
        CHECK(mismatches == 0);
    }
}

TEST_CASE("gaussian_soften examples") {
    FaceMask<double> ones{Plane<double>::Ones(16, 16)};
    const auto soft = gaussian_soften(ones, 2.0, 6);
    CHECK((soft.values == 1.0).all());

    std::mt19937_64 rng(42);
    FaceMask<double> m{random_mask(16, 16, rng, true)};
    CHECK((gaussian_soften(m, 2.0, 0).values == m.values).all());
    BlendConfig cfg;
    cfg.kernel_radius = 0;
    CHECK((gaussian_soften(m, cfg).values == m.values).all());
}

TEST_CASE("gaussian_soften equals the dense 2-D oracle and keeps mass") {
    std::mt19937_64 rng(43);
    for (int i = 0; i < 20; ++i) {
        FaceMask<double> m{random_mask(16, 16, rng, i % 2 == 0)};
        for (double sigma : {0.7, 2.0, 6.0}) {
            const int radius = int(std::ceil(3 * sigma));
            const auto soft = gaussian_soften(m, sigma, radius);
            CHECK((soft.values - oracle::gaussian_dense(m.values, sigma, radius)).abs().maxCoeff() <= 1e-6);
            CHECK(std::abs(soft.values.sum() - m.values.sum()) <= 1e-6 * 256);
            CHECK(soft.in_unit_range());
        }
    }
}

TEST_CASE("morph_scale examples") {
    std::mt19937_64 rng(44);
    FaceMask<float> m{random_mask(12, 12, rng, true).cast<float>()};
    CHECK((morph_scale(m, MaskMode::enlarge, 0).values == m.values).all());
    CHECK((morph_scale(m, MaskMode::keep, 3).values == m.values).all());

    FaceMask<float> dot{Plane<float>::Zero(7, 7)};
    dot.values(3, 3) = 1;
    const auto plus = morph_scale(dot, MaskMode::enlarge, 1);
    CHECK(plus.values.sum() == 5.0f);
    CHECK(plus.values(2, 3) == 1.0f);
    CHECK(plus.values(4, 3) == 1.0f);
    CHECK(plus.values(3, 2) == 1.0f);
    CHECK(plus.values(3, 4) == 1.0f);
    CHECK(plus.values(2, 2) == 0.0f);
}

TEST_CASE("morph_scale equals brute-force disk max/min") {
    std::mt19937_64 rng(45);
    for (int i = 0; i < 20; ++i) {
        FaceMask<double> m{random_mask(14 + i % 5, 16, rng, true)};
        for (int r : {1, 2, 3}) {
            const auto d = morph_scale(m, MaskMode::enlarge, r);
            const auto e = morph_scale(m, MaskMode::shrink, r);
            CHECK((d.values == oracle::morph_disk(m.values, r, true)).all());
            CHECK((e.values == oracle::morph_disk(m.values, r, false)).all());
            CHECK((d.values >= m.values).all());
            CHECK((e.values <= m.values).all());
        }
    }
}

TEST_CASE("mask_adaptation examples") {
    BlendConfig cfg;
    cfg.max_scale_px = 50;
    CHECK(mask_adaptation(span(100), span(100), cfg) == MaskAdaptation{MaskMode::keep, 0, cfg.sigma});
    CHECK(mask_adaptation(span(120), span(100), cfg) == MaskAdaptation{MaskMode::enlarge, 10, cfg.sigma});
    CHECK(mask_adaptation(span(80), span(100), cfg) == MaskAdaptation{MaskMode::shrink, 10, 1.5 * cfg.sigma});

    cfg.max_scale_px = 4;
    CHECK(mask_adaptation(span(120), span(100), cfg).radius_px == 4);
    // Inside the dead band.
    CHECK(mask_adaptation(span(104), span(100), cfg).mode == MaskMode::keep);
    CHECK(mask_adaptation(span(96), span(100), cfg).mode == MaskMode::keep);
    CHECK_THROWS_AS(mask_adaptation(span(10), outline({{3, 0}, {3, 9}, {3, 4}}), cfg), ZeroTargetWidth);
}

TEST_CASE("mask_adaptation mode is scale consistent") {
    std::mt19937_64 rng(46);
    std::uniform_real_distribution<double> u(20, 200);
    const BlendConfig cfg;
    for (int i = 0; i < 200; ++i) {
        const double g = u(rng), t = u(rng);
        const MaskMode mode = mask_adaptation(span(g), span(t), cfg).mode;
        for (double s : {0.25, 3.0}) CHECK(mask_adaptation(span(g * s), span(t * s), cfg).mode == mode);
    }
}

TEST_CASE("blend config") {
    const BlendConfig c = BlendConfig::for_crop_size(64);
    CHECK(c.sigma == doctest::Approx(1.25));
    CHECK(c.radius_for(c.sigma) == 4);
    CHECK(c.max_scale_px == 8);
    BlendConfig bad;
    bad.shrink_threshold = 1.2;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("composite null and full blends") {
    std::mt19937_64 rng(47);
    const ImageF frame = random_image(24, 20, rng);
    FrameSwapInputs<float> in = swap_inputs(rng, frame);
    in.mask_crop.values.setZero();
    CHECK(composite(in, BlendConfig::for_crop_size(16)) == frame);

    FrameSwapInputs<float> full = swap_inputs(rng, frame);
    full.transform = AffineTransform::identity();
    full.mask_crop.values.setOnes();
    const ImageF out = composite(full, BlendConfig::for_crop_size(16));
    for (int c = 0; c < 3; ++c) {
        CHECK((out.plane(c).topLeftCorner(16, 16) == full.generated_crop.plane(c)).all());
        CHECK((out.plane(c).bottomRows(8) == frame.plane(c).bottomRows(8)).all());
        CHECK((out.plane(c).rightCols(4) == frame.plane(c).rightCols(4)).all());
    }
}

TEST_CASE("composite blend band arithmetic") {
    FrameSwapInputs<float> in;
    in.frame = ImageF(8, 8, 3, 0.0f);
    in.generated_crop = ImageF(8, 8, 3, 1.0f);
    in.mask_crop.values = Plane<float>::Zero(8, 8);
    in.mask_crop.values.col(4).setConstant(0.25f);
    in.landmarks_gen = span(6);
    in.landmarks_tgt = span(6);
    BlendConfig cfg;
    cfg.kernel_radius = 0;
    const ImageF out = composite(in, cfg);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 8; ++y) {
            CHECK(out(c, y, 4) == 0.25f * 1.0f + 0.75f * 0.0f);
            CHECK(out(c, y, 3) == 0.0f);
        }
}

TEST_CASE("composite leaves zero-mask pixels untouched") {
    std::mt19937_64 rng(48);
    const ImageF frame = random_image(32, 32, rng);
    FrameSwapInputs<float> in = swap_inputs(rng, frame);
    const BlendConfig cfg = BlendConfig::for_crop_size(16);
    const ImageF out = composite(in, cfg);
    const auto soft = prepare_crop_mask(in, cfg);
    ImageF m(16, 16, 1);
    m.plane(0) = soft.values;
    const ImageF warped = warp(m, invert(in.transform), 32, 32);
    int untouched = 0;
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
            if (warped(0, y, x) == 0.0f) {
                ++untouched;
                for (int c = 0; c < 3; ++c) CHECK(out(c, y, x) == frame(c, y, x));
            }
    CHECK(untouched > 0);
    CHECK_FALSE(out == frame);

    FrameSwapInputs<float> singular = in;
    singular.transform.matrix.setZero();
    CHECK_THROWS_AS(composite(singular, cfg), SingularTransform);
}

TEST_CASE("mask values stay in [0, 1] through every stage") {
    std::mt19937_64 rng(49);
    for (int i = 0; i < 10; ++i) {
        FaceMask<float> m{random_mask(16, 16, rng, true).cast<float>()};
        for (MaskMode mode : {MaskMode::enlarge, MaskMode::shrink}) {
            const auto scaled = morph_scale(m, mode, 2);
            CHECK(scaled.in_unit_range());
            CHECK(gaussian_soften(scaled, 1.5, 5).in_unit_range());
        }
    }
}

TEST_CASE("swap_video_frames order, passthrough and determinism") {
    std::mt19937_64 rng(50);
    const BlendConfig cfg = BlendConfig::for_crop_size(16);
    const ImageF frame = random_image(24, 24, rng);
    const auto in = swap_inputs(rng, frame);

    const auto same = swap_video_frames<float>({frame, frame, frame}, {in, in, in}, cfg, 1);
    CHECK(same.frames[0] == same.frames[1]);
    CHECK(same.frames[1] == same.frames[2]);
    CHECK(same.errors.empty());

    const auto pass = swap_video_frames<float>({frame}, {std::nullopt}, cfg, 1);
    CHECK(pass.frames[0] == frame);

    std::vector<ImageF> frames;
    std::vector<std::optional<FrameSwapInputs<float>>> inputs;
    for (int i = 0; i < 16; ++i) {
        frames.push_back(random_image(24, 24, rng));
        if (i % 5 == 3) {
            inputs.emplace_back(std::nullopt);
        } else {
            auto fi = swap_inputs(rng, frames.back());
            fi.landmarks_gen = span(8 + i);
            inputs.emplace_back(fi);
        }
    }
    // A broken input is recorded and its frame passes through.
    inputs[7]->mask_crop.values = Plane<float>::Zero(4, 4);
    const auto serial = swap_video_frames(frames, inputs, cfg, 1);
    const auto parallel = swap_video_frames(frames, inputs, cfg, 4);
    REQUIRE(serial.frames.size() == 16);
    for (std::size_t i = 0; i < 16; ++i) CHECK(serial.frames[i] == parallel.frames[i]);
    REQUIRE(serial.errors.size() == 1);
    CHECK(serial.errors[0].frame == 7);
    CHECK(parallel.errors.size() == 1);
    CHECK(serial.frames[7] == frames[7]);
    CHECK(serial.frames[3] == frames[3]);
    CHECK_THROWS_AS(swap_video_frames(frames, {}, cfg, 1), InvalidArgument);
}
