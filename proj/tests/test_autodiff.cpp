#include "faceswap/autodiff.hpp"
#include "faceswap/error.hpp"

#include "doctest.h"
#include "oracles.hpp"

#include <random>

using namespace fswap::ad;
using T = Tensor<double>;

namespace {

// Scalar probe Σ w ⊙ out with fixed random weights, so every output element
// contributes a distinct amount to the checked gradient.
T probe(const T& out, std::uint64_t seed = 99) {
    std::mt19937_64 rng(seed);
    return sum(out * T::from(out.shape(), oracle::random_buffer(out.shape().size(), rng)));
}

double check(const std::function<T(const T&)>& f, const Shape& s, std::uint64_t seed = 1, double lo = -1,
             double hi = 1) {
    std::mt19937_64 rng(seed);
    return oracle::gradient_error([&](const T& x) { return probe(f(x)); }, s, oracle::random_buffer(s.size(), rng, lo, hi),
                                  1e-6);
}

} // namespace

TEST_CASE("elementwise ops match finite differences") {
    const Shape s{2, 3, 4, 4};
    std::mt19937_64 rng(5);
    const T other = T::from(s, oracle::random_buffer(s.size(), rng));
    const T row = T::from(Shape{1, 3, 1, 1}, oracle::random_buffer(3, rng));
    CHECK(check([&](const T& x) { return x + other; }, s) < 1e-8);
    CHECK(check([&](const T& x) { return x - row; }, s) < 1e-8);
    CHECK(check([&](const T& x) { return x * other; }, s) < 1e-8);
    CHECK(check([&](const T& x) { return other * x * x; }, s) < 1e-8);
    CHECK(check([&](const T& x) { return -x * 2.5 + 1.0; }, s) < 1e-8);
    CHECK(check([&](const T& x) { return square(x); }, s) < 1e-8);
    CHECK(check([&](const T& x) { return sigmoid(x); }, s) < 1e-8);
    CHECK(check([&](const T& x) { return tanh(x); }, s) < 1e-8);
    // Kinks at zero; keep inputs away from them.
    CHECK(check([&](const T& x) { return relu(x); }, s, 1, 0.1, 1) < 1e-8);
    CHECK(check([&](const T& x) { return leaky_relu(x + (-2.0), 0.2); }, s, 1, 0.1, 1) < 1e-8);
}

TEST_CASE("broadcast gradient sums over the broadcast axes") {
    const Shape s{2, 3, 4, 4};
    std::mt19937_64 rng(6);
    const T big = T::from(s, oracle::random_buffer(s.size(), rng));
    CHECK(check([&](const T& r) { return big * r; }, Shape{1, 3, 1, 1}) < 1e-8);
    CHECK(check([&](const T& r) { return big + r; }, Shape{2, 1, 4, 1}) < 1e-8);
}

TEST_CASE("reductions and structural ops") {
    const Shape s{2, 3, 4, 4};
    CHECK(check([](const T& x) { return sum(x); }, s) < 1e-8);
    CHECK(check([](const T& x) { return mean(square(x)); }, s) < 1e-8);
    CHECK(check([](const T& x) { return sample_mean(x); }, s) < 1e-8);
    CHECK(check([](const T& x) { return channel_sum(x); }, s) < 1e-8);
    CHECK(check([](const T& x) { return reshape(x, Shape{2, 48, 1, 1}); }, s) < 1e-8);
    CHECK(check([](const T& x) { return concat_channels(x, square(x)); }, s) < 1e-8);
    CHECK(check([](const T& x) { return stack_samples(std::vector<T>{select_sample(x, 1), select_sample(x, 0)}); },
                s) < 1e-8);
}

TEST_CASE("spatial ops") {
    const Shape s{2, 3, 8, 8};
    std::mt19937_64 rng(7);
    const T w = T::from(Shape{4, 3, 3, 3}, oracle::random_buffer(4 * 27, rng));
    const T b = T::from(Shape{1, 4, 1, 1}, oracle::random_buffer(4, rng));
    CHECK(check([&](const T& x) { return conv2d(x, w, b, 1, 1); }, s) < 1e-8);
    CHECK(check([&](const T& x) { return conv2d(x, w, b, 2, 1); }, s) < 1e-8);
    CHECK(check([&](const T& x) { return upsample_nearest2x(x); }, s) < 1e-8);
    CHECK(check([&](const T& x) { return avg_pool(x, 2); }, s) < 1e-8);
    CHECK(check([&](const T& x) { return instance_norm(x, 1e-5); }, s) < 1e-6);
    CHECK(check([&](const T& x) { return l2_normalize(x, 1e-12); }, s) < 1e-8);
    CHECK(check([&](const T& x) { return crop_resize(x, 1, PixelBox{1, 2, 5, 6}, 6, 6); }, s) < 1e-8);
    CHECK(check([&](const T& x) { return cross_entropy(x, {2, 0}); }, Shape{2, 3, 1, 1}) < 1e-8);
}

TEST_CASE("conv weight and bias gradients") {
    const Shape xs{2, 2, 5, 5};
    std::mt19937_64 rng(8);
    const T x = T::from(xs, oracle::random_buffer(xs.size(), rng));
    const T b = T::from(Shape{1, 3, 1, 1}, oracle::random_buffer(3, rng));
    CHECK(check([&](const T& w) { return conv2d(x, w, b, 2, 1); }, Shape{3, 2, 3, 3}) < 1e-8);
    const T w = T::from(Shape{3, 2, 3, 3}, oracle::random_buffer(54, rng));
    CHECK(check([&](const T& bb) { return conv2d(x, w, bb, 1, 0); }, Shape{1, 3, 1, 1}) < 1e-8);
}

TEST_CASE("conv2d forward equals the direct loop") {
    std::mt19937_64 rng(9);
    for (int stride : {1, 2})
        for (int pad : {0, 1}) {
            const Shape xs{2, 3, 7, 6};
            const Buffer<double> xv = oracle::random_buffer(xs.size(), rng);
            const Buffer<double> wv = oracle::random_buffer(5 * 3 * 9, rng);
            const Buffer<double> bv = oracle::random_buffer(5, rng);
            const T y = conv2d(T::from(xs, xv), T::from(Shape{5, 3, 3, 3}, wv), T::from(Shape{1, 5, 1, 1}, bv),
                               stride, pad);
            Shape os;
            const Buffer<double> ref = oracle::conv2d(xv, xs, wv, 5, 3, bv, stride, pad, os);
            REQUIRE(y.shape() == os);
            CHECK((y.value() - ref).abs().maxCoeff() < 1e-12);
        }
}

TEST_CASE("leaf gradients accumulate across backward passes") {
    T x = T::constant(Shape{1, 1, 2, 2}, 3.0, true);
    sum(x * 2.0).backward();
    sum(x * 2.0).backward();
    CHECK(x.grad()(0) == doctest::Approx(4.0));
    x.zero_grad();
    CHECK(x.grad()(0) == 0.0);
}

TEST_CASE("detach cuts the graph") {
    T x = T::constant(Shape{1, 1, 1, 3}, 1.0, true);
    T y = sum(x.detach() * x);
    y.backward();
    CHECK(x.grad()(0) == doctest::Approx(1.0));
}

TEST_CASE("shape errors") {
    CHECK_THROWS_AS(T::zeros(Shape{1, 2, 3, 3}) + T::zeros(Shape{1, 3, 3, 3}), fswap::ShapeMismatch);
    T x = T::zeros(Shape{1, 1, 2, 2}, true);
    CHECK_THROWS_AS((x * 1.0).backward(), fswap::ShapeMismatch);
    CHECK_THROWS_AS(avg_pool(T::zeros(Shape{1, 1, 5, 5}), 2), fswap::ShapeMismatch);
}
