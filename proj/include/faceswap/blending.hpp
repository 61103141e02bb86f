#ifndef FACESWAP_BLENDING_HPP
#define FACESWAP_BLENDING_HPP

// Face-mask construction and compositing of a generated crop back into its
// frame: binary outline mask, landmark-driven enlarge/shrink, Gaussian edge
// softening, inverse warp and alpha blend.

#include "faceswap/geometry.hpp"
#include "faceswap/image.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace fswap {

enum class MaskSpace { crop, frame };

template <typename Scalar>
struct FaceMask {
    Plane<Scalar> values;
    MaskSpace space = MaskSpace::crop;

    int rows() const { return int(values.rows()); }
    int cols() const { return int(values.cols()); }
    bool in_unit_range() const { return values.allFinite() && (values >= 0).all() && (values <= 1).all(); }
};

struct BlendConfig {
    double sigma = 5.0;
    // Fixed truncation radius; when unset the kernel reaches ⌈3σ⌉.
    std::optional<int> kernel_radius;
    double enlarge_threshold = 1.05;
    double shrink_threshold = 0.95;
    int max_scale_px = 32;
    double shrink_sigma_gain = 1.5;

    // Defaults above are for 256-pixel crops; pixel quantities scale with S.
    static BlendConfig for_crop_size(int crop_size);
    int radius_for(double sigma_eff) const;
    void validate() const;
};

enum class MaskMode { keep, enlarge, shrink };
std::string to_string(MaskMode mode);

struct MaskAdaptation {
    MaskMode mode = MaskMode::keep;
    int radius_px = 0;
    double sigma = 0;

    bool operator==(const MaskAdaptation&) const = default;
};

// Width-ratio test between generated and target faces.
MaskAdaptation mask_adaptation(const Landmarks& generated, const Landmarks& target, const BlendConfig& config);

// Filled convex hull of the face_outline group.
template <typename Scalar>
FaceMask<Scalar> binary_mask_from_outline(const Landmarks& landmarks, int rows, int cols);

// External segmentation masks arrive as 8-bit grayscale; ≥128 means face.
template <typename Scalar>
FaceMask<Scalar> binary_mask_from_gray(const Plane<unsigned char>& gray, MaskSpace space = MaskSpace::crop) {
    FaceMask<Scalar> m;
    m.space = space;
    m.values = (gray >= 128).template cast<Scalar>();
    return m;
}

namespace detail {

// Half-sample symmetric reflection (…b a | a b c … z | z y…), any distance.
inline int reflect_index(int i, int n) {
    const int period = 2 * n;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - 1 - i;
}

inline std::vector<double> gaussian_weights(double sigma, int radius) {
    std::vector<double> w(std::size_t(2 * radius + 1));
    for (int k = -radius; k <= radius; ++k) w[std::size_t(k + radius)] = std::exp(-double(k * k) / (2.0 * sigma * sigma));
    return w;
}

} // namespace detail

// Separable Gaussian blur with a truncated kernel of the given radius,
// reflective boundary, renormalized so constant masks stay constant.
template <typename Scalar>
FaceMask<Scalar> gaussian_soften(const FaceMask<Scalar>& mask, double sigma, int radius) {
    if (radius <= 0 || !(sigma > 0.0)) return mask;
    const auto w = detail::gaussian_weights(sigma, radius);
    double norm = 0;
    for (double v : w) norm += v;
    const int rows = mask.rows();
    const int cols = mask.cols();
    Plane<double> tmp(rows, cols);
    for (int y = 0; y < rows; ++y)
        for (int x = 0; x < cols; ++x) {
            double acc = 0;
            for (int k = -radius; k <= radius; ++k)
                acc += w[std::size_t(k + radius)] * double(mask.values(y, detail::reflect_index(x + k, cols)));
            tmp(y, x) = acc / norm;
        }
    FaceMask<Scalar> out{Plane<Scalar>(rows, cols), mask.space};
    for (int y = 0; y < rows; ++y)
        for (int x = 0; x < cols; ++x) {
            double acc = 0;
            for (int k = -radius; k <= radius; ++k)
                acc += w[std::size_t(k + radius)] * tmp(detail::reflect_index(y + k, rows), x);
            out.values(y, x) = Scalar(std::clamp(acc / norm, 0.0, 1.0));
        }
    return out;
}

template <typename Scalar>
FaceMask<Scalar> gaussian_soften(const FaceMask<Scalar>& mask, const BlendConfig& config) {
    return gaussian_soften(mask, config.sigma, config.radius_for(config.sigma));
}

// Dilation (enlarge) or erosion (shrink) with a disk of radius_px.
// Neighbors outside the mask are ignored.
template <typename Scalar>
FaceMask<Scalar> morph_scale(const FaceMask<Scalar>& mask, MaskMode mode, int radius_px) {
    if (mode == MaskMode::keep || radius_px <= 0) return mask;
    std::vector<std::pair<int, int>> disk;
    for (int dy = -radius_px; dy <= radius_px; ++dy)
        for (int dx = -radius_px; dx <= radius_px; ++dx)
            if (dx * dx + dy * dy <= radius_px * radius_px) disk.emplace_back(dy, dx);
    const bool dilate = mode == MaskMode::enlarge;
    const int rows = mask.rows();
    const int cols = mask.cols();
    FaceMask<Scalar> out{Plane<Scalar>(rows, cols), mask.space};
    for (int y = 0; y < rows; ++y)
        for (int x = 0; x < cols; ++x) {
            Scalar v = mask.values(y, x);
            for (const auto& [dy, dx] : disk) {
                const int yy = y + dy, xx = x + dx;
                if (yy < 0 || yy >= rows || xx < 0 || xx >= cols) continue;
                v = dilate ? std::max(v, mask.values(yy, xx)) : std::min(v, mask.values(yy, xx));
            }
            out.values(y, x) = v;
        }
    return out;
}

template <typename Scalar>
struct FrameSwapInputs {
    Image<Scalar> frame;
    Image<Scalar> generated_crop;
    AffineTransform transform; // frame → crop
    FaceMask<Scalar> mask_crop;
    Landmarks landmarks_gen;
    Landmarks landmarks_tgt;
};

// Soft mask in crop space after adaptation and softening.
template <typename Scalar>
FaceMask<Scalar> prepare_crop_mask(const FrameSwapInputs<Scalar>& in, const BlendConfig& config) {
    const MaskAdaptation adapt = mask_adaptation(in.landmarks_gen, in.landmarks_tgt, config);
    const FaceMask<Scalar> scaled = morph_scale(in.mask_crop, adapt.mode, adapt.radius_px);
    return gaussian_soften(scaled, adapt.sigma, config.radius_for(adapt.sigma));
}

// out = m·crop + (1−m)·frame with the mask and crop warped back into the
// frame. Pixels whose mask is exactly 0 (or 1) copy the frame (or crop).
template <typename Scalar>
Image<Scalar> composite(const FrameSwapInputs<Scalar>& in, const BlendConfig& config) {
    const auto& crop = in.generated_crop;
    if (crop.rows() != in.mask_crop.rows() || crop.cols() != in.mask_crop.cols())
        throw ShapeMismatch("crop and mask sizes differ");
    if (crop.channels() != in.frame.channels()) throw ShapeMismatch("crop and frame channel counts differ");
    const AffineTransform to_frame = invert(in.transform);

    const FaceMask<Scalar> soft = prepare_crop_mask(in, config);
    Image<Scalar> mask_img(soft.rows(), soft.cols(), 1);
    mask_img.plane(0) = soft.values;
    const int rows = in.frame.rows();
    const int cols = in.frame.cols();
    const Plane<Scalar> m = warp(mask_img, to_frame, rows, cols).plane(0).cwiseMax(Scalar(0)).cwiseMin(Scalar(1));
    const Image<Scalar> warped = warp(crop, to_frame, rows, cols);

    Image<Scalar> out = in.frame;
    for (int y = 0; y < rows; ++y)
        for (int x = 0; x < cols; ++x) {
            const Scalar a = m(y, x);
            if (a == Scalar(0)) continue;
            for (int c = 0; c < out.channels(); ++c)
                out(c, y, x) = a == Scalar(1) ? warped(c, y, x) : a * warped(c, y, x) + (Scalar(1) - a) * in.frame(c, y, x);
        }
    return out;
}

struct FrameError {
    std::size_t frame = 0;
    std::string message;
};

template <typename Scalar>
struct VideoSwapResult {
    std::vector<Image<Scalar>> frames;
    std::vector<FrameError> errors;
};

// Composites every frame that has inputs; frames without a face (or whose
// compositing fails) pass through unchanged. Output order matches input
// order for any worker count.
template <typename Scalar>
VideoSwapResult<Scalar> swap_video_frames(const std::vector<Image<Scalar>>& frames,
                                          const std::vector<std::optional<FrameSwapInputs<Scalar>>>& inputs,
                                          const BlendConfig& config, int workers = 1) {
    if (frames.size() != inputs.size()) throw InvalidArgument("one input slot per frame expected");
    VideoSwapResult<Scalar> result;
    result.frames.resize(frames.size());
    std::vector<std::optional<std::string>> failures(frames.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < frames.size(); i = next++) {
            if (!inputs[i]) {
                result.frames[i] = frames[i];
                continue;
            }
            try {
                FrameSwapInputs<Scalar> in = *inputs[i];
                in.frame = frames[i];
                result.frames[i] = composite(in, config);
            } catch (const std::exception& e) {
                failures[i] = e.what();
                result.frames[i] = frames[i];
            }
        }
    };
    const int n = std::max(1, std::min<int>(workers, int(frames.size())));
    if (n == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (std::size_t i = 0; i < failures.size(); ++i)
        if (failures[i]) result.errors.push_back({i, *failures[i]});
    return result;
}

} // namespace fswap

#endif // FACESWAP_BLENDING_HPP
