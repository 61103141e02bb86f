#include "faceswap/blending.hpp"

#include <cmath>

namespace fswap {

BlendConfig BlendConfig::for_crop_size(int crop_size) {
    BlendConfig c;
    const double scale = double(crop_size) / 256.0;
    c.sigma *= scale;
    c.max_scale_px = std::max(1, int(std::lround(c.max_scale_px * scale)));
    return c;
}

int BlendConfig::radius_for(double sigma_eff) const {
    if (!(sigma_eff > 0.0)) return 0;
    if (kernel_radius) return int(std::ceil(double(*kernel_radius) * sigma_eff / sigma - 1e-9));
    return int(std::ceil(3.0 * sigma_eff - 1e-9));
}

void BlendConfig::validate() const {
    if (!(sigma > 0.0)) throw InvalidArgument("blend sigma must be positive");
    if (!(shrink_threshold < 1.0 && 1.0 < enlarge_threshold))
        throw InvalidArgument("blend thresholds must satisfy shrink < 1 < enlarge");
    if (!(shrink_sigma_gain >= 1.0)) throw InvalidArgument("shrink_sigma_gain must be >= 1");
    if (max_scale_px < 0) throw InvalidArgument("max_scale_px must be >= 0");
    if (kernel_radius && *kernel_radius < 0) throw InvalidArgument("kernel_radius must be >= 0");
}

std::string to_string(MaskMode mode) {
    switch (mode) {
    case MaskMode::keep: return "keep";
    case MaskMode::enlarge: return "enlarge";
    case MaskMode::shrink: return "shrink";
    }
    return "keep";
}

MaskAdaptation mask_adaptation(const Landmarks& generated, const Landmarks& target, const BlendConfig& config) {
    const double w_gen = face_width(generated);
    const double w_tgt = face_width(target);
    if (!(w_tgt > 0.0)) throw ZeroTargetWidth("target face has no horizontal extent");
    const double ratio = w_gen / w_tgt;
    // (r − 1)·w_tgt / 2 is evaluated as (w_gen − w_tgt) / 2 to keep integer
    // widths exact.
    if (ratio > config.enlarge_threshold) {
        const int r = int(std::ceil((w_gen - w_tgt) / 2.0));
        return {MaskMode::enlarge, std::min(r, config.max_scale_px), config.sigma};
    }
    if (ratio < config.shrink_threshold) {
        const int r = int(std::ceil((w_tgt - w_gen) / 2.0));
        return {MaskMode::shrink, std::min(r, config.max_scale_px), config.sigma * config.shrink_sigma_gain};
    }
    return {MaskMode::keep, 0, config.sigma};
}

namespace {

double cross(const Point& o, const Point& a, const Point& b) {
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

// Counter-clockwise hull (monotone chain); collinear points dropped.
std::vector<Point> convex_hull(std::vector<Point> pts) {
    std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) {
        return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
    });
    if (pts.size() < 3) return pts;
    std::vector<Point> hull(2 * pts.size());
    std::size_t k = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    for (std::size_t i = pts.size() - 1, t = k + 1; i > 0; --i) {
        while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i - 1]) <= 0) --k;
        hull[k++] = pts[i - 1];
    }
    hull.resize(k - 1);
    return hull;
}

} // namespace

template <typename Scalar>
FaceMask<Scalar> binary_mask_from_outline(const Landmarks& landmarks, int rows, int cols) {
    const auto outline = landmarks.group(groups::kOutline);
    if (outline.size() < 3) throw DegenerateOutline("face_outline needs at least three points");
    const auto hull = convex_hull(outline);
    double area = 0;
    for (std::size_t i = 0; i < hull.size(); ++i) {
        const Point& a = hull[i];
        const Point& b = hull[(i + 1) % hull.size()];
        area += a.x() * b.y() - b.x() * a.y();
    }
    if (hull.size() < 3 || std::abs(area) < 1e-9) throw DegenerateOutline("face_outline points are collinear");

    FaceMask<Scalar> mask{Plane<Scalar>::Zero(rows, cols), MaskSpace::crop};
    const double eps = 1e-9;
    for (int y = 0; y < rows; ++y)
        for (int x = 0; x < cols; ++x) {
            const Point p(x, y);
            bool inside = true;
            for (std::size_t i = 0; i < hull.size() && inside; ++i)
                inside = cross(hull[i], hull[(i + 1) % hull.size()], p) >= -eps;
            if (inside) mask.values(y, x) = Scalar(1);
        }
    return mask;
}

template FaceMask<float> binary_mask_from_outline<float>(const Landmarks&, int, int);
template FaceMask<double> binary_mask_from_outline<double>(const Landmarks&, int, int);

} // namespace fswap
