#include "faceswap/geometry.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace fswap {

std::vector<Point> Landmarks::group(const std::string& name) const {
    auto it = index_groups.find(name);
    if (it == index_groups.end()) return {};
    const IndexRange r = it->second;
    return {points.begin() + r.begin, points.begin() + r.end};
}

bool Landmarks::has_group(const std::string& name) const {
    auto it = index_groups.find(name);
    return it != index_groups.end() && it->second.size() > 0;
}

void Landmarks::validate() const {
    for (const auto& p : points)
        if (!p.allFinite()) throw InvalidArgument("landmark coordinate is not finite");
    std::vector<IndexRange> ranges;
    for (const auto& [name, r] : index_groups) {
        if (r.begin < 0 || r.end > size() || r.begin > r.end)
            throw InvalidArgument("landmark group '" + name + "' outside " + std::to_string(size()) + " points");
        ranges.push_back(r);
    }
    std::sort(ranges.begin(), ranges.end(), [](auto a, auto b) { return a.begin < b.begin; });
    for (std::size_t i = 1; i < ranges.size(); ++i)
        if (ranges[i].begin < ranges[i - 1].end) throw InvalidArgument("landmark groups overlap");
}

LandmarkLayout LandmarkLayout::synthetic() {
    // 10 outline points, then per eye (outer corner, inner corner, pupil),
    // nose tip, two mouth corners.
    LandmarkLayout layout;
    layout.num_points = 19;
    layout.index_groups = {
        {groups::kOutline, {0, 10}}, {groups::kLeftEye, {10, 13}}, {groups::kRightEye, {13, 16}},
        {"nose", {16, 17}},          {"mouth", {17, 19}},
    };
    layout.alignment_anchors = {std::vector<int>{10, 11}, {13, 14}, {16}, {17}, {18}};
    return layout;
}

Landmarks LandmarkLayout::wrap(std::vector<Point> points) const {
    if (int(points.size()) != num_points)
        throw InvalidArgument("expected " + std::to_string(num_points) + " landmarks, got " +
                              std::to_string(points.size()));
    Landmarks lm{std::move(points), index_groups};
    lm.validate();
    return lm;
}

AffineTransform AffineTransform::translation(double tx, double ty) {
    AffineTransform t;
    t.matrix(0, 2) = tx;
    t.matrix(1, 2) = ty;
    return t;
}

AffineTransform AffineTransform::similarity(double scale, double angle, double tx, double ty) {
    AffineTransform t;
    const double c = scale * std::cos(angle);
    const double s = scale * std::sin(angle);
    t.matrix << c, -s, tx, s, c, ty;
    return t;
}

AffineTransform compose(const AffineTransform& outer, const AffineTransform& inner) {
    AffineTransform t;
    t.matrix.leftCols<2>() = outer.linear() * inner.linear();
    t.matrix.col(2) = outer.linear() * inner.offset() + outer.offset();
    return t;
}

AffineTransform invert(const AffineTransform& transform) {
    const Eigen::Matrix2d a = transform.linear();
    const double det = a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
    if (det == 0.0 || !std::isfinite(det)) throw SingularTransform("determinant " + std::to_string(det));
    Eigen::Matrix2d inv;
    inv << a(1, 1) / det, -a(0, 1) / det, -a(1, 0) / det, a(0, 0) / det;
    AffineTransform out;
    out.matrix.leftCols<2>() = inv;
    out.matrix.col(2) = -(inv * transform.offset());
    return out;
}

AffineTransform estimate_alignment(const Landmarks& landmarks, const Landmarks& reference) {
    if (landmarks.size() != reference.size() || landmarks.index_groups != reference.index_groups)
        throw InvalidArgument("alignment needs matching landmark layouts");
    const int k = landmarks.size();
    if (k < 2) throw DegenerateConfiguration("fewer than two points");

    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    for (const auto& p : landmarks.points) mean += p;
    mean /= double(k);
    Eigen::MatrixXd centered(k, 2);
    for (int i = 0; i < k; ++i) centered.row(i) = (landmarks.points[std::size_t(i)] - mean).transpose();
    const Eigen::Vector2d sv = Eigen::JacobiSVD<Eigen::MatrixXd>(centered).singularValues();
    if (sv(0) <= 1e-12 || sv(1) <= 1e-9 * sv(0))
        throw DegenerateConfiguration("landmarks are collinear or coincident");

    // Unknowns (a, b, tx, ty) of [[a, -b, tx], [b, a, ty]].
    Eigen::MatrixXd design(2 * k, 4);
    Eigen::VectorXd rhs(2 * k);
    for (int i = 0; i < k; ++i) {
        const Point& p = landmarks.points[std::size_t(i)];
        const Point& q = reference.points[std::size_t(i)];
        design.row(2 * i) << p.x(), -p.y(), 1.0, 0.0;
        design.row(2 * i + 1) << p.y(), p.x(), 0.0, 1.0;
        rhs(2 * i) = q.x();
        rhs(2 * i + 1) = q.y();
    }
    const Eigen::Vector4d sol = design.colPivHouseholderQr().solve(rhs);
    AffineTransform t;
    t.matrix << sol(0), -sol(1), sol(2), sol(1), sol(0), sol(3);
    return t;
}

Landmarks alignment_anchors(const Landmarks& landmarks, const LandmarkLayout& layout) {
    if (landmarks.size() != layout.num_points)
        throw InvalidArgument("landmark count does not match layout");
    Landmarks out;
    for (const auto& anchor : layout.alignment_anchors) {
        Point sum = Point::Zero();
        for (int idx : anchor) sum += landmarks.points.at(std::size_t(idx));
        out.points.push_back(sum / double(anchor.size()));
    }
    out.index_groups = canonical_template(112).index_groups;
    return out;
}

Landmarks canonical_template(int crop_size) {
    // Widely used 5-point face template defined on a 112×112 crop.
    static const std::array<Point, 5> kTemplate112 = {
        Point{38.2946, 51.6963}, Point{73.5318, 51.5014}, Point{56.0252, 71.7366},
        Point{41.5493, 92.3655}, Point{70.7299, 92.2041},
    };
    Landmarks out;
    const double scale = double(crop_size) / 112.0;
    for (const auto& p : kTemplate112) out.points.push_back(p * scale);
    out.index_groups = {{groups::kLeftEye, {0, 1}}, {groups::kRightEye, {1, 2}}, {"nose", {2, 3}}, {"mouth", {3, 5}}};
    return out;
}

Landmarks transform_landmarks(const Landmarks& landmarks, const AffineTransform& transform) {
    Landmarks out = landmarks;
    for (auto& p : out.points) p = transform.apply(p);
    return out;
}

Landmarks scale_about_centroid(const Landmarks& landmarks, double factor) {
    Point centroid = Point::Zero();
    for (const auto& p : landmarks.points) centroid += p;
    centroid /= double(std::max(1, landmarks.size()));
    Landmarks out = landmarks;
    for (auto& p : out.points) p = centroid + factor * (p - centroid);
    return out;
}

ad::PixelBox Box::pixels() const {
    ad::PixelBox b;
    b.x0 = int(std::floor(x0));
    b.y0 = int(std::floor(y0));
    b.x1 = std::max(b.x0 + 1, int(std::ceil(x1)));
    b.y1 = std::max(b.y0 + 1, int(std::ceil(y1)));
    return b;
}

namespace {

EyeRegion eye_box(const Landmarks& landmarks, const char* group, EyeSide side, double margin, int width,
                  int height) {
    const auto pts = landmarks.group(group);
    if (pts.empty()) throw MissingEyeLandmarks(std::string("group '") + group + "' is empty");
    Box b{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
          -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (const auto& p : pts) {
        b.x0 = std::min(b.x0, p.x());
        b.y0 = std::min(b.y0, p.y());
        b.x1 = std::max(b.x1, p.x());
        b.y1 = std::max(b.y1, p.y());
    }
    b.x0 = std::clamp(b.x0 - margin, 0.0, double(width));
    b.y0 = std::clamp(b.y0 - margin, 0.0, double(height));
    b.x1 = std::clamp(b.x1 + margin, 0.0, double(width));
    b.y1 = std::clamp(b.y1 + margin, 0.0, double(height));
    // Keep at least one pixel inside the image.
    if (b.x1 - b.x0 < 1.0) {
        b.x0 = std::min(b.x0, double(width) - 1.0);
        b.x1 = b.x0 + 1.0;
    }
    if (b.y1 - b.y0 < 1.0) {
        b.y0 = std::min(b.y0, double(height) - 1.0);
        b.y1 = b.y0 + 1.0;
    }
    return EyeRegion{b, side};
}

} // namespace

std::pair<EyeRegion, EyeRegion> eye_regions(const Landmarks& landmarks, double margin, int width, int height) {
    return {eye_box(landmarks, groups::kLeftEye, EyeSide::left, margin, width, height),
            eye_box(landmarks, groups::kRightEye, EyeSide::right, margin, width, height)};
}

double face_width(const Landmarks& landmarks) {
    const auto outline = landmarks.group(groups::kOutline);
    if (outline.size() < 2) throw MissingOutlineLandmarks("face_outline needs at least two points");
    double lo = outline.front().x();
    double hi = lo;
    for (const auto& p : outline) {
        lo = std::min(lo, p.x());
        hi = std::max(hi, p.x());
    }
    return hi - lo;
}

std::map<int, std::vector<Point>> read_landmark_rows(std::istream& in) {
    std::map<int, std::map<int, Point>> rows;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream fields(line);
        int frame = 0, index = 0;
        double x = 0, y = 0;
        if (!(fields >> frame >> index >> x >> y)) {
            // Tolerate a single header row.
            if (line_no == 1) continue;
            throw IoFailure("malformed landmark row " + std::to_string(line_no));
        }
        rows[frame][index] = Point{x, y};
    }
    std::map<int, std::vector<Point>> out;
    for (auto& [frame, pts] : rows) {
        std::vector<Point> list;
        for (auto& [index, p] : pts) {
            if (index != int(list.size())) throw IoFailure("landmark indices of frame " + std::to_string(frame) + " have gaps");
            list.push_back(p);
        }
        out.emplace(frame, std::move(list));
    }
    return out;
}

void write_landmark_rows(std::ostream& out, int frame_index, const std::vector<Point>& points) {
    const auto old_precision = out.precision(10);
    for (std::size_t i = 0; i < points.size(); ++i)
        out << frame_index << ',' << i << ',' << points[i].x() << ',' << points[i].y() << '\n';
    out.precision(old_precision);
}

} // namespace fswap
