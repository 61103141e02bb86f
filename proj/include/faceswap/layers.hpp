#ifndef FACESWAP_LAYERS_HPP
#define FACESWAP_LAYERS_HPP

#include "faceswap/autodiff.hpp"

#include <cstdint>
#include <map>
#include <random>
#include <string>

namespace fswap::nn {

using ad::Shape;
using ad::Tensor;

// Named, ordered collection of trainable tensors. Names are hierarchical
// ("gen.level0.aad1.mask.weight") and double as checkpoint keys.
template <typename Scalar>
class ParameterSet {
public:
    Tensor<Scalar> add(const std::string& name, const Shape& shape, std::mt19937_64& rng, Scalar init_std);
    Tensor<Scalar> add_constant(const std::string& name, const Shape& shape, Scalar value);

    const std::map<std::string, Tensor<Scalar>>& items() const { return params_; }
    std::map<std::string, Tensor<Scalar>>& items() { return params_; }
    Tensor<Scalar> at(const std::string& name) const;
    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    void zero_grad();
    std::size_t count() const;
    // Order-sensitive FNV-1a over the raw value bytes.
    std::uint64_t checksum() const;

private:
    std::map<std::string, Tensor<Scalar>> params_;
};

template <typename Scalar>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(ParameterSet<Scalar>& params, const std::string& name, int in_channels, int out_channels, int kernel,
           int stride, std::mt19937_64& rng);

    Tensor<Scalar> operator()(const Tensor<Scalar>& x) const;

    Tensor<Scalar> weight;
    Tensor<Scalar> bias;
    int stride = 1;
    int padding = 0;
};

// Fully connected layer over N×D×1×1 inputs (any N×C×H×W input is flattened).
template <typename Scalar>
class Linear {
public:
    Linear() = default;
    Linear(ParameterSet<Scalar>& params, const std::string& name, int in_features, int out_features,
           std::mt19937_64& rng);

    Tensor<Scalar> operator()(const Tensor<Scalar>& x) const;

    Tensor<Scalar> weight;
    Tensor<Scalar> bias;
    int in_features = 0;
};

// Adaptive-moment optimizer over one ParameterSet.
template <typename Scalar>
class Adam {
public:
    struct Options {
        double lr = 4e-4;
        double beta1 = 0.0;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    Adam() = default;
    Adam(ParameterSet<Scalar>& params, Options options);

    void step();
    std::int64_t steps() const { return steps_; }
    void set_steps(std::int64_t steps) { steps_ = steps; }
    Options& options() { return options_; }

    // Moment buffers keyed like the parameters, for checkpointing.
    std::map<std::string, ad::Buffer<Scalar>>& first_moments() { return m_; }
    std::map<std::string, ad::Buffer<Scalar>>& second_moments() { return v_; }

private:
    ParameterSet<Scalar>* params_ = nullptr;
    Options options_;
    std::int64_t steps_ = 0;
    std::map<std::string, ad::Buffer<Scalar>> m_;
    std::map<std::string, ad::Buffer<Scalar>> v_;
};

} // namespace fswap::nn

#endif // FACESWAP_LAYERS_HPP
