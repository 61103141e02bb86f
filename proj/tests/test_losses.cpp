#include "faceswap/losses.hpp"

#include "doctest.h"
#include "gradient_suite.hpp"
#include "oracles.hpp"

#include <Eigen/Geometry>

#include <random>

using namespace fswap;
using T = ad::Tensor<double>;

namespace {

IdentityVector unit(std::initializer_list<double> v) {
    Eigen::VectorXd x(Eigen::Index(v.size()));
    int i = 0;
    for (double e : v) x(i++) = e;
    return IdentityVector::normalized(x);
}

IdentityVector random_unit(int d, std::mt19937_64& rng) {
    std::normal_distribution<double> n;
    Eigen::VectorXd v(d);
    for (int i = 0; i < d; ++i) v(i) = n(rng);
    return IdentityVector::normalized(v);
}

AttributeFeatureStack<double> stack_of(const std::vector<ad::Shape>& shapes, std::mt19937_64& rng) {
    AttributeFeatureStack<double> s;
    for (const auto& sh : shapes) s.levels.push_back(T::from(sh, oracle::random_buffer(sh.size(), rng)));
    return s;
}

RealismScores<double> scores(const std::vector<ad::Shape>& shapes, std::mt19937_64& rng) {
    RealismScores<double> s;
    for (const auto& sh : shapes) s.maps.push_back(T::from(sh, oracle::random_buffer(sh.size(), rng, -2, 2)));
    return s;
}

RealismScores<double> constant_scores(double v) {
    return {{T::constant({2, 1, 4, 4}, v), T::constant({2, 1, 2, 2}, v)}};
}

} // namespace

TEST_CASE("identity_loss examples and properties") {
    CHECK(identity_loss(unit({1, 0, 0}), unit({1, 0, 0})) == doctest::Approx(0.0));
    CHECK(identity_loss(unit({1, 0, 0}), unit({0, 1, 0})) == doctest::Approx(1.0));
    CHECK(identity_loss(unit({1, 0, 0}), unit({-1, 0, 0})) == doctest::Approx(2.0));

    std::mt19937_64 rng(31);
    const Eigen::Matrix3d r = Eigen::AngleAxisd(0.7, Eigen::Vector3d(1, 2, 3).normalized()).toRotationMatrix();
    for (int i = 0; i < 50; ++i) {
        const auto a = random_unit(3, rng), b = random_unit(3, rng);
        const double l = identity_loss(a, b);
        CHECK(l >= 0.0);
        CHECK(l <= 2.0);
        CHECK(l == doctest::Approx(identity_loss(b, a)).epsilon(1e-12));
        const IdentityVector ra{r * a.values}, rb{r * b.values};
        CHECK(std::abs(identity_loss(ra, rb) - l) < 1e-12);
    }
    IdentityVector off{Eigen::Vector3d(1.01, 0, 0)};
    CHECK_THROWS_AS(identity_loss(off, unit({1, 0, 0})), NonNormalizedInput);
    const T bad = T::constant({1, 3, 1, 1}, 1.0);
    CHECK_THROWS_AS(identity_loss(bad, bad), NonNormalizedInput);
}

TEST_CASE("attribute_loss examples") {
    std::mt19937_64 rng(32);
    const std::vector<ad::Shape> shapes{{2, 4, 2, 2}, {2, 3, 4, 4}, {2, 2, 8, 8}};
    const auto a = stack_of(shapes, rng);
    CHECK(attribute_loss(a, a).item() == 0.0);

    AttributeFeatureStack<double> b;
    for (const auto& l : a.levels) b.levels.push_back(l + 2.0);
    CHECK(attribute_loss(b, a).item() == doctest::Approx(6.0).epsilon(1e-12));

    const auto c = stack_of(shapes, rng);
    double loop = 0;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        double acc = 0;
        for (Eigen::Index k = 0; k < a.levels[i].value().size(); ++k) {
            const double d = a.levels[i].value()(k) - c.levels[i].value()(k);
            acc += d * d;
        }
        loop += 0.5 * acc / double(a.levels[i].value().size());
    }
    CHECK(std::abs(attribute_loss(a, c).item() - loop) <= 1e-6);

    AttributeFeatureStack<double> shorter = c;
    shorter.levels.pop_back();
    CHECK_THROWS_AS(attribute_loss(a, shorter), ShapeMismatch);
}

TEST_CASE("reconstruction_loss examples") {
    std::mt19937_64 rng(33);
    const ad::Shape s{3, 3, 8, 8};
    const T x = T::from(s, oracle::random_buffer(s.size(), rng));
    const T y = T::from(s, oracle::random_buffer(s.size(), rng));
    CHECK(reconstruction_loss(x, x, {true, true, true}).item() == 0.0);
    CHECK(reconstruction_loss(y, x, {false, false, false}).item() == 0.0);
    CHECK(reconstruction_loss(x + 1.0, x, {true, true, true}).item() == doctest::Approx(0.5).epsilon(1e-12));

    // Per sample ½·mean, masked, averaged over the batch.
    double loop = 0;
    const std::vector<bool> flags{true, false, true};
    for (int n = 0; n < 3; ++n) {
        if (!flags[std::size_t(n)]) continue;
        double acc = 0;
        for (Eigen::Index k = 0; k < s.sample(); ++k) {
            const double d = y.value()(n * s.sample() + k) - x.value()(n * s.sample() + k);
            acc += d * d;
        }
        loop += 0.5 * acc / double(s.sample());
    }
    CHECK(std::abs(reconstruction_loss(y, x, flags).item() - loop / 3) < 1e-12);
    CHECK_THROWS_AS(reconstruction_loss(y, T::zeros({3, 3, 4, 4}), flags), ShapeMismatch);
}

TEST_CASE("eye_loss examples") {
    // 16×16 image, left eye box (4,4)-(8,8), right eye box (10,10)-(14,14).
    Landmarks lm;
    lm.points = {{4, 4}, {8, 8}, {10, 10}, {14, 14}, {0, 8}, {15, 8}};
    lm.index_groups = {{groups::kLeftEye, {0, 2}}, {groups::kRightEye, {2, 4}}, {groups::kOutline, {4, 6}}};
    EyeLossSettings settings;
    settings.margin = 0;
    std::mt19937_64 rng(34);
    const ad::Shape s{1, 3, 16, 16};
    const T x = T::from(s, oracle::random_buffer(s.size(), rng));
    CHECK(eye_loss(x, x, {lm}, settings).item() == 0.0);

    ad::Buffer<double> v = x.value();
    for (int c = 0; c < 3; ++c)
        for (int yy = 4; yy < 8; ++yy)
            for (int xx = 4; xx < 8; ++xx) v((c * 16 + yy) * 16 + xx) += 3.0;
    CHECK(eye_loss(T::from(s, v), x, {lm}, settings).item() == doctest::Approx(4.5).epsilon(1e-12));

    // Changes outside both boxes are invisible.
    ad::Buffer<double> outside = x.value();
    outside(0) += 5;
    outside((2 * 16 + 15) * 16 + 2) -= 2;
    CHECK(eye_loss(T::from(s, outside), x, {lm}, settings).item() == 0.0);

    Landmarks blind = lm;
    blind.index_groups[groups::kLeftEye] = {0, 0};
    CHECK_THROWS_AS(eye_loss(x, x, {blind}, settings), MissingEyeLandmarks);
}

TEST_CASE("eye_loss locality holds for random perturbations outside the boxes") {
    std::mt19937_64 rng(35);
    Landmarks lm = testing::eye_landmarks_8x8();
    EyeLossSettings settings;
    settings.margin = 1;
    const ad::Shape s{1, 3, 8, 8};
    const auto [l, r] = eye_regions(lm, settings.margin, 8, 8);
    for (int trial = 0; trial < 20; ++trial) {
        const T x = T::from(s, oracle::random_buffer(s.size(), rng));
        ad::Buffer<double> v = x.value();
        const ad::Buffer<double> noise = oracle::random_buffer(s.size(), rng);
        for (int c = 0; c < 3; ++c)
            for (int yy = 0; yy < 8; ++yy)
                for (int xx = 0; xx < 8; ++xx) {
                    bool inside = false;
                    for (const auto& b : {l.box.pixels(), r.box.pixels()})
                        inside = inside || (xx >= b.x0 && xx < b.x1 && yy >= b.y0 && yy < b.y1);
                    if (!inside) v((c * 8 + yy) * 8 + xx) += noise((c * 8 + yy) * 8 + xx);
                }
        CHECK(eye_loss(T::from(s, v), x, {lm}, settings).item() == 0.0);
    }
}

TEST_CASE("adversarial_losses examples") {
    const auto a = adversarial_losses(constant_scores(1), constant_scores(-1));
    CHECK(a.discriminator.item() == 0.0);
    CHECK(a.generator.item() == 1.0);
    const auto b = adversarial_losses(constant_scores(0), constant_scores(0));
    CHECK(b.discriminator.item() == 2.0);
    CHECK(b.generator.item() == 0.0);

    std::mt19937_64 rng(36);
    const std::vector<ad::Shape> shapes{{2, 1, 8, 8}, {2, 1, 4, 4}};
    const auto real = scores(shapes, rng);
    const auto fake = scores(shapes, rng);
    double d = 0, g = 0;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        const auto& rv = real.maps[i].value();
        const auto& fv = fake.maps[i].value();
        double dr = 0, df = 0, gf = 0;
        for (Eigen::Index k = 0; k < rv.size(); ++k) {
            dr += std::max(0.0, 1 - rv(k));
            df += std::max(0.0, 1 + fv(k));
            gf += fv(k);
        }
        d += dr / double(rv.size()) + df / double(fv.size());
        g += -gf / double(fv.size());
    }
    const auto c = adversarial_losses(real, fake);
    CHECK(std::abs(c.discriminator.item() - d / 2) <= 1e-6);
    CHECK(std::abs(c.generator.item() - g / 2) <= 1e-6);

    RealismScores<double> one{{real.maps[0]}};
    CHECK_THROWS_AS(adversarial_losses(one, fake), ShapeMismatch);
}

TEST_CASE("total_loss") {
    const LossWeights w;
    CHECK(total_loss({}, w).total == 0.0);
    CHECK(total_loss({1, 1, 1, 1, 1}, w).total == 27.0);

    std::mt19937_64 rng(37);
    std::uniform_real_distribution<double> u(0, 3);
    for (int i = 0; i < 100; ++i) {
        const LossTerms t{u(rng), u(rng), u(rng), u(rng), u(rng)};
        const LossWeights ww{u(rng), u(rng), u(rng), u(rng), u(rng)};
        const Eigen::Matrix<double, 5, 1> tv(t.id, t.adv, t.rec, t.att, t.eye);
        const Eigen::Matrix<double, 5, 1> wv(ww.w_id, ww.w_adv, ww.w_rec, ww.w_att, ww.w_eye);
        const LossReport r = total_loss(t, ww);
        CHECK(std::abs(r.total - tv.dot(wv)) <= 1e-9);
        CHECK(r.terms.eye == t.eye);
    }
    CHECK_THROWS_AS(total_loss({1, std::nan(""), 0, 0, 0}, w), NonFiniteTerm);
    CHECK_THROWS_AS(total_loss({1, 0, HUGE_VAL, 0, 0}, w), NonFiniteTerm);
    LossWeights neg;
    neg.w_id = -1;
    CHECK_THROWS_AS(neg.validate(), InvalidArgument);
    CHECK_THROWS_AS((LossWeights{0, 0, 0, 0, 0}.validate()), InvalidArgument);
}

TEST_CASE("every loss term's gradient matches finite differences") {
    for (const auto& c : testing::loss_gradient_suite()) {
        INFO(c.term);
        CHECK(c.relative_error <= 1e-3);
    }
}
