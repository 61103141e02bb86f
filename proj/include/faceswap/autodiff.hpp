#ifndef FACESWAP_AUTODIFF_HPP
#define FACESWAP_AUTODIFF_HPP

// Minimal reverse-mode automatic differentiation over dense NCHW tensors.
//
// A Tensor is a shared handle to a graph node. Operations on tensors that
// require gradients record a backward closure; calling backward() on a
// scalar result accumulates gradients into every reachable leaf. The graph
// is released as soon as the last handle to the result goes away.

#include <Eigen/Core>

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace fswap::ad {

struct Shape {
    int n = 1;
    int c = 1;
    int h = 1;
    int w = 1;

    Eigen::Index size() const { return Eigen::Index(n) * c * h * w; }
    Eigen::Index plane() const { return Eigen::Index(h) * w; }
    Eigen::Index sample() const { return Eigen::Index(c) * h * w; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

template <typename Scalar>
using Buffer = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct Node {
    Shape shape;
    Buffer<Scalar> value;
    Buffer<Scalar> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    Buffer<Scalar>& grad_buffer() {
        if (grad.size() != value.size()) grad = Buffer<Scalar>::Zero(value.size());
        return grad;
    }
};

template <typename Scalar>
class Tensor {
public:
    using NodeType = Node<Scalar>;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<NodeType> node) : node_(std::move(node)) {}

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor constant(const Shape& shape, Scalar fill, bool requires_grad = false);
    static Tensor from(const Shape& shape, Buffer<Scalar> values, bool requires_grad = false);
    static Tensor scalar(Scalar v) { return constant(Shape{}, v); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    const Buffer<Scalar>& value() const { return node_->value; }
    Buffer<Scalar>& mutable_value() { return node_->value; }
    const Buffer<Scalar>& grad() const { return node_->grad_buffer(); }
    Buffer<Scalar>& mutable_grad() { return node_->grad_buffer(); }
    bool requires_grad() const { return node_->requires_grad; }
    Scalar item() const { return node_->value(0); }

    // Element (n, c, y, x).
    Scalar at(int n, int c, int y, int x) const;

    Tensor detach() const;
    void zero_grad();
    void backward();

    const std::shared_ptr<NodeType>& node() const { return node_; }

private:
    std::shared_ptr<NodeType> node_;
};

// Creates the result node of an operation. The backward closure is kept
// only if any input requires gradients.
template <typename Scalar>
Tensor<Scalar> make_result(const Shape& shape, Buffer<Scalar> value,
                           std::vector<Tensor<Scalar>> inputs,
                           std::function<void(Node<Scalar>&)> backward);

// Elementwise arithmetic with size-1 broadcasting on every axis.
template <typename Scalar> Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar> Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar> Tensor<Scalar> operator*(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar> Tensor<Scalar> operator-(const Tensor<Scalar>& a);
template <typename Scalar> Tensor<Scalar> operator*(const Tensor<Scalar>& a, Scalar s);
template <typename Scalar> Tensor<Scalar> operator*(Scalar s, const Tensor<Scalar>& a) { return a * s; }
template <typename Scalar> Tensor<Scalar> operator+(const Tensor<Scalar>& a, Scalar s);
template <typename Scalar> Tensor<Scalar> operator+(Scalar s, const Tensor<Scalar>& a) { return a + s; }

template <typename Scalar> Tensor<Scalar> square(const Tensor<Scalar>& a);
template <typename Scalar> Tensor<Scalar> relu(const Tensor<Scalar>& a);
template <typename Scalar> Tensor<Scalar> leaky_relu(const Tensor<Scalar>& a, Scalar slope);
template <typename Scalar> Tensor<Scalar> sigmoid(const Tensor<Scalar>& a);
template <typename Scalar> Tensor<Scalar> tanh(const Tensor<Scalar>& a);

// Reductions.
template <typename Scalar> Tensor<Scalar> sum(const Tensor<Scalar>& a);
template <typename Scalar> Tensor<Scalar> mean(const Tensor<Scalar>& a);
// Mean over (c, h, w) per sample: N×1×1×1.
template <typename Scalar> Tensor<Scalar> sample_mean(const Tensor<Scalar>& a);
// Sum over channels: N×1×H×W.
template <typename Scalar> Tensor<Scalar> channel_sum(const Tensor<Scalar>& a);

// Structural.
template <typename Scalar> Tensor<Scalar> reshape(const Tensor<Scalar>& a, const Shape& shape);
template <typename Scalar> Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar> Tensor<Scalar> select_sample(const Tensor<Scalar>& a, int n);
template <typename Scalar> Tensor<Scalar> stack_samples(const std::vector<Tensor<Scalar>>& samples);

// Spatial.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias,
                      int stride, int padding);
template <typename Scalar> Tensor<Scalar> upsample_nearest2x(const Tensor<Scalar>& x);
template <typename Scalar> Tensor<Scalar> avg_pool(const Tensor<Scalar>& x, int factor);
template <typename Scalar> Tensor<Scalar> instance_norm(const Tensor<Scalar>& x, Scalar eps);
// L2-normalizes each sample over (c, h, w).
template <typename Scalar> Tensor<Scalar> l2_normalize(const Tensor<Scalar>& x, Scalar eps);

// Mean softmax cross-entropy of N×K×1×1 logits against class labels.
template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& logits, const std::vector<int>& labels);

struct PixelBox {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0; // exclusive
    int y1 = 0; // exclusive
};

// Crops pixels [x0,x1)×[y0,y1) of sample n and bilinearly resamples them to
// out_h×out_w (half-pixel centers, edge-clamped inside the crop). The result
// is 1×C×out_h×out_w.
template <typename Scalar>
Tensor<Scalar> crop_resize(const Tensor<Scalar>& x, int n, const PixelBox& box, int out_h, int out_w);

} // namespace fswap::ad

#endif // FACESWAP_AUTODIFF_HPP
