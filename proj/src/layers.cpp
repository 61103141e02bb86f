#include "faceswap/layers.hpp"

#include "faceswap/error.hpp"

#include <cmath>
#include <cstring>

namespace fswap::nn {

template <typename Scalar>
Tensor<Scalar> ParameterSet<Scalar>::add(const std::string& name, const Shape& shape, std::mt19937_64& rng,
                                         Scalar init_std) {
    if (contains(name)) throw InvalidArgument("duplicate parameter " + name);
    std::normal_distribution<double> normal(0.0, double(init_std));
    ad::Buffer<Scalar> values(shape.size());
    for (Eigen::Index i = 0; i < values.size(); ++i) values(i) = Scalar(normal(rng));
    auto t = Tensor<Scalar>::from(shape, std::move(values), true);
    params_.emplace(name, t);
    return t;
}

template <typename Scalar>
Tensor<Scalar> ParameterSet<Scalar>::add_constant(const std::string& name, const Shape& shape, Scalar value) {
    if (contains(name)) throw InvalidArgument("duplicate parameter " + name);
    auto t = Tensor<Scalar>::constant(shape, value, true);
    params_.emplace(name, t);
    return t;
}

template <typename Scalar>
Tensor<Scalar> ParameterSet<Scalar>::at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw InvalidArgument("unknown parameter " + name);
    return it->second;
}

template <typename Scalar>
void ParameterSet<Scalar>::zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
}

template <typename Scalar>
std::size_t ParameterSet<Scalar>::count() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_) n += std::size_t(p.value().size());
    return n;
}

template <typename Scalar>
std::uint64_t ParameterSet<Scalar>::checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& [name, p] : params_) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(p.value().data());
        const std::size_t len = std::size_t(p.value().size()) * sizeof(Scalar);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    }
    return h;
}

template <typename Scalar>
Conv2d<Scalar>::Conv2d(ParameterSet<Scalar>& params, const std::string& name, int in_channels, int out_channels,
                       int kernel, int stride_, std::mt19937_64& rng)
    : stride(stride_), padding(kernel / 2) {
    const Scalar std_dev = Scalar(std::sqrt(2.0 / double(in_channels * kernel * kernel)));
    weight = params.add(name + ".weight", Shape{out_channels, in_channels, kernel, kernel}, rng, std_dev);
    bias = params.add_constant(name + ".bias", Shape{out_channels, 1, 1, 1}, Scalar(0));
}

template <typename Scalar>
Tensor<Scalar> Conv2d<Scalar>::operator()(const Tensor<Scalar>& x) const {
    return ad::conv2d(x, weight, bias, stride, padding);
}

template <typename Scalar>
Linear<Scalar>::Linear(ParameterSet<Scalar>& params, const std::string& name, int in, int out, std::mt19937_64& rng)
    : in_features(in) {
    const Scalar std_dev = Scalar(std::sqrt(1.0 / double(in)));
    weight = params.add(name + ".weight", Shape{out, in, 1, 1}, rng, std_dev);
    bias = params.add_constant(name + ".bias", Shape{out, 1, 1, 1}, Scalar(0));
}

template <typename Scalar>
Tensor<Scalar> Linear<Scalar>::operator()(const Tensor<Scalar>& x) const {
    const Shape s = x.shape();
    if (s.sample() != in_features)
        throw ShapeMismatch("linear expects " + std::to_string(in_features) + " features, got " + s.str());
    const auto flat = (s.h == 1 && s.w == 1) ? x : ad::reshape(x, Shape{s.n, int(s.sample()), 1, 1});
    return ad::conv2d(flat, weight, bias, 1, 0);
}

template <typename Scalar>
Adam<Scalar>::Adam(ParameterSet<Scalar>& params, Options options) : params_(&params), options_(options) {
    for (const auto& [name, p] : params.items()) {
        m_[name] = ad::Buffer<Scalar>::Zero(p.value().size());
        v_[name] = ad::Buffer<Scalar>::Zero(p.value().size());
    }
}

template <typename Scalar>
void Adam<Scalar>::step() {
    ++steps_;
    const double b1 = options_.beta1;
    const double b2 = options_.beta2;
    const Scalar bias1 = Scalar(1.0 - std::pow(b1, double(steps_)));
    const Scalar bias2 = Scalar(1.0 - std::pow(b2, double(steps_)));
    const Scalar lr = Scalar(options_.lr);
    const Scalar eps = Scalar(options_.eps);
    for (auto& [name, p] : params_->items()) {
        auto& m = m_.at(name);
        auto& v = v_.at(name);
        const auto& g = p.grad();
        m = Scalar(b1) * m + Scalar(1 - b1) * g;
        v = Scalar(b2) * v + Scalar(1 - b2) * g.square();
        p.mutable_value() -= lr * (m / bias1) / ((v / bias2).sqrt() + eps);
    }
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template class Conv2d<float>;
template class Conv2d<double>;
template class Linear<float>;
template class Linear<double>;
template class Adam<float>;
template class Adam<double>;

} // namespace fswap::nn
