#ifndef FACESWAP_GEOMETRY_HPP
#define FACESWAP_GEOMETRY_HPP

#include "faceswap/error.hpp"
#include "faceswap/image.hpp"

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace fswap {

using Point = Eigen::Vector2d;

// Half-open index range [begin, end) into a landmark list.
struct IndexRange {
    int begin = 0;
    int end = 0;

    int size() const { return end - begin; }
    bool operator==(const IndexRange&) const = default;
};

using IndexGroups = std::map<std::string, IndexRange>;

namespace groups {
inline constexpr const char* kLeftEye = "left_eye";
inline constexpr const char* kRightEye = "right_eye";
inline constexpr const char* kOutline = "face_outline";
} // namespace groups

struct Landmarks {
    std::vector<Point> points;
    IndexGroups index_groups;

    int size() const { return int(points.size()); }
    std::vector<Point> group(const std::string& name) const;
    bool has_group(const std::string& name) const;

    // Throws InvalidArgument when coordinates are non-finite, groups overlap
    // or fall outside the point list.
    void validate() const;
};

// How a K-point landmark list is organized, plus which indices average into
// each of the five alignment anchors (left eye, right eye, nose, left and
// right mouth corner).
struct LandmarkLayout {
    int num_points = 0;
    IndexGroups index_groups;
    std::array<std::vector<int>, 5> alignment_anchors;

    static LandmarkLayout synthetic();
    Landmarks wrap(std::vector<Point> points) const;
};

// Frame→crop mapping x' = A·x + t stored as a 2×3 matrix [A | t].
struct AffineTransform {
    Eigen::Matrix<double, 2, 3> matrix = Eigen::Matrix<double, 2, 3>::Identity();

    static AffineTransform identity() { return {}; }
    static AffineTransform translation(double tx, double ty);
    static AffineTransform similarity(double scale, double angle, double tx, double ty);

    Eigen::Matrix2d linear() const { return matrix.leftCols<2>(); }
    Eigen::Vector2d offset() const { return matrix.col(2); }
    Point apply(const Point& p) const { return linear() * p + offset(); }
    double determinant() const { return linear().determinant(); }
};

AffineTransform compose(const AffineTransform& outer, const AffineTransform& inner);
AffineTransform invert(const AffineTransform& transform);

// Least-squares similarity (rotation, uniform scale, translation) taking
// `landmarks` onto `reference`.
AffineTransform estimate_alignment(const Landmarks& landmarks, const Landmarks& reference);

// Five anchor points of `landmarks` according to `layout`, as a 5-point set.
Landmarks alignment_anchors(const Landmarks& landmarks, const LandmarkLayout& layout);

// Canonical 5-point template (eyes, nose tip, mouth corners) for an S×S crop.
Landmarks canonical_template(int crop_size);

Landmarks transform_landmarks(const Landmarks& landmarks, const AffineTransform& transform);
Landmarks scale_about_centroid(const Landmarks& landmarks, double factor);

struct Box {
    double x0 = 0;
    double y0 = 0;
    double x1 = 0;
    double y1 = 0;

    ad::PixelBox pixels() const;
};

enum class EyeSide { left, right };

struct EyeRegion {
    Box box;
    EyeSide side = EyeSide::left;
};

// Bounding box of each eye's points grown by `margin`, clamped to width×height.
std::pair<EyeRegion, EyeRegion> eye_regions(const Landmarks& landmarks, double margin, int width, int height);

// Horizontal extent of the face outline.
double face_width(const Landmarks& landmarks);

// Landmark CSV rows: `frame_index, point_index, x, y`.
std::map<int, std::vector<Point>> read_landmark_rows(std::istream& in);
void write_landmark_rows(std::ostream& out, int frame_index, const std::vector<Point>& points);

// Bilinear resampling: output(q) = image(T⁻¹ q). Samples that fall outside
// the source read as zero.
template <typename Scalar>
Image<Scalar> warp(const Image<Scalar>& image, const AffineTransform& transform, int out_rows, int out_cols) {
    if (image.empty()) throw InvalidArgument("warp of an empty image");
    const AffineTransform inv = invert(transform);
    const Eigen::Matrix2d a = inv.linear();
    const Eigen::Vector2d t = inv.offset();
    const int rows = image.rows();
    const int cols = image.cols();
    Image<Scalar> out(out_rows, out_cols, image.channels());
    for (int y = 0; y < out_rows; ++y) {
        for (int x = 0; x < out_cols; ++x) {
            const double u = a(0, 0) * x + a(0, 1) * y + t(0);
            const double v = a(1, 0) * x + a(1, 1) * y + t(1);
            if (!(u > -1.0 && v > -1.0 && u < cols && v < rows)) continue;
            const double fu = std::floor(u);
            const double fv = std::floor(v);
            const int x0 = int(fu);
            const int y0 = int(fv);
            const Scalar wx = Scalar(u - fu);
            const Scalar wy = Scalar(v - fv);
            const bool in_x0 = x0 >= 0, in_x1 = x0 + 1 < cols, in_y0 = y0 >= 0, in_y1 = y0 + 1 < rows;
            for (int c = 0; c < image.channels(); ++c) {
                const auto& p = image.plane(c);
                const Scalar v00 = (in_y0 && in_x0) ? p(y0, x0) : Scalar(0);
                const Scalar v01 = (in_y0 && in_x1 && wx != 0) ? p(y0, x0 + 1) : Scalar(0);
                const Scalar v10 = (in_y1 && in_x0 && wy != 0) ? p(y0 + 1, x0) : Scalar(0);
                const Scalar v11 = (in_y1 && in_x1 && wx != 0 && wy != 0) ? p(y0 + 1, x0 + 1) : Scalar(0);
                out(c, y, x) = (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
            }
        }
    }
    return out;
}

} // namespace fswap

#endif // FACESWAP_GEOMETRY_HPP
