#ifndef FACESWAP_IMAGE_HPP
#define FACESWAP_IMAGE_HPP

#include "faceswap/autodiff.hpp"
#include "faceswap/error.hpp"

#include <Eigen/Core>

#include <vector>

namespace fswap {

template <typename Scalar>
using Plane = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Planar H×W×C image. Pixel values live in [-1, 1] by convention; masks use
// a single-channel Plane with values in [0, 1].
template <typename Scalar>
class Image {
public:
    Image() = default;
    Image(int rows, int cols, int channels, Scalar fill = Scalar(0))
        : planes_(std::size_t(channels), Plane<Scalar>::Constant(rows, cols, fill)) {}

    int rows() const { return planes_.empty() ? 0 : int(planes_.front().rows()); }
    int cols() const { return planes_.empty() ? 0 : int(planes_.front().cols()); }
    int channels() const { return int(planes_.size()); }
    bool empty() const { return planes_.empty() || rows() == 0 || cols() == 0; }

    Plane<Scalar>& plane(int c) { return planes_[std::size_t(c)]; }
    const Plane<Scalar>& plane(int c) const { return planes_[std::size_t(c)]; }

    Scalar& operator()(int c, int y, int x) { return planes_[std::size_t(c)](y, x); }
    Scalar operator()(int c, int y, int x) const { return planes_[std::size_t(c)](y, x); }

    bool same_shape(const Image& other) const {
        return rows() == other.rows() && cols() == other.cols() && channels() == other.channels();
    }

    bool operator==(const Image& other) const {
        if (!same_shape(other)) return false;
        for (int c = 0; c < channels(); ++c)
            if (!(plane(c) == other.plane(c)).all()) return false;
        return true;
    }

    template <typename Other>
    Image<Other> cast() const {
        Image<Other> out(rows(), cols(), channels());
        for (int c = 0; c < channels(); ++c) out.plane(c) = plane(c).template cast<Other>();
        return out;
    }

private:
    std::vector<Plane<Scalar>> planes_;
};

using ImageF = Image<float>;
using ImageD = Image<double>;

// Packs equally sized images into an N×C×H×W tensor.
template <typename Scalar>
ad::Tensor<Scalar> to_tensor(const std::vector<Image<Scalar>>& images, bool requires_grad = false) {
    if (images.empty()) throw ShapeMismatch("to_tensor of an empty batch");
    const auto& first = images.front();
    const ad::Shape shape{int(images.size()), first.channels(), first.rows(), first.cols()};
    ad::Buffer<Scalar> values(shape.size());
    Eigen::Index offset = 0;
    for (const auto& img : images) {
        if (!img.same_shape(first)) throw ShapeMismatch("to_tensor batch with mixed image sizes");
        for (int c = 0; c < img.channels(); ++c) {
            Eigen::Map<Plane<Scalar>>(values.data() + offset, img.rows(), img.cols()) = img.plane(c);
            offset += shape.plane();
        }
    }
    return ad::Tensor<Scalar>::from(shape, std::move(values), requires_grad);
}

template <typename Scalar>
Image<Scalar> to_image(const ad::Tensor<Scalar>& t, int n = 0) {
    const ad::Shape s = t.shape();
    Image<Scalar> img(s.h, s.w, s.c);
    for (int c = 0; c < s.c; ++c)
        img.plane(c) = Eigen::Map<const Plane<Scalar>>(t.value().data() + (Eigen::Index(n) * s.c + c) * s.plane(), s.h, s.w);
    return img;
}

} // namespace fswap

#endif // FACESWAP_IMAGE_HPP
