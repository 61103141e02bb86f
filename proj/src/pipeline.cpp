#include "faceswap/pipeline.hpp"

#include "faceswap/serialization.hpp"

#include <png.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

namespace fswap {

// ---------------------------------------------------------------------------
// Configuration

void PipelineConfig::validate() const {
    generator.validate();
    train.validate();
    weights.validate();
    blend.validate();
    if (workers < 1) throw InvalidArgument("workers must be >= 1");
    if (plugins.identity_embedder != "model" && plugins.identity_embedder != "file")
        throw InvalidArgument("unknown identity embedder '" + plugins.identity_embedder + "'");
    if (plugins.identity_embedder == "file" && plugins.embedding_file.empty())
        throw InvalidArgument("identity_embedder 'file' needs embedding_file");
    if (plugins.landmarks != "synthetic" && plugins.landmarks != "file")
        throw InvalidArgument("unknown landmark provider '" + plugins.landmarks + "'");
    if (plugins.landmarks == "file" && plugins.landmarks_file.empty())
        throw InvalidArgument("landmark provider 'file' needs landmarks_file");
    if (plugins.segmentation != "outline" && plugins.segmentation != "mask_files")
        throw InvalidArgument("unknown segmentation provider '" + plugins.segmentation + "'");
    if (plugins.postprocessor != "identity" && plugins.postprocessor != "bicubic2x")
        throw InvalidArgument("unknown post-processor '" + plugins.postprocessor + "'");
}

void to_json(nlohmann::json& j, const PipelineConfig& c) {
    j = {{"generator", c.generator},
         {"train", c.train},
         {"weights", c.weights},
         {"eye_loss", c.eye_loss},
         {"blend", c.blend},
         {"plugins",
          {{"identity_embedder", c.plugins.identity_embedder},
           {"embedding_file", c.plugins.embedding_file},
           {"landmarks", c.plugins.landmarks},
           {"landmarks_file", c.plugins.landmarks_file},
           {"segmentation", c.plugins.segmentation},
           {"postprocessor", c.plugins.postprocessor}}},
         {"seed", c.seed},
         {"workers", c.workers},
         {"paths", {{"data", c.data_dir}, {"out", c.out_dir}}}};
}

void from_json(const nlohmann::json& j, PipelineConfig& c) {
    detail::check_keys(j, {"generator", "train", "weights", "eye_loss", "blend", "plugins", "seed", "workers", "paths"},
                       "pipeline config");
    if (j.contains("generator")) c.generator = j.at("generator").get<GeneratorConfig>();
    if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
    if (j.contains("weights")) c.weights = j.at("weights").get<LossWeights>();
    if (j.contains("eye_loss")) c.eye_loss = j.at("eye_loss").get<EyeLossSettings>();
    c.blend = BlendConfig::for_crop_size(c.generator.crop_size);
    if (j.contains("blend")) from_json(j.at("blend"), c.blend);
    if (j.contains("plugins")) {
        const auto& p = j.at("plugins");
        detail::check_keys(p,
                           {"identity_embedder", "embedding_file", "landmarks", "landmarks_file", "segmentation",
                            "postprocessor"},
                           "plugins");
        detail::read_optional(p, "identity_embedder", c.plugins.identity_embedder);
        detail::read_optional(p, "embedding_file", c.plugins.embedding_file);
        detail::read_optional(p, "landmarks", c.plugins.landmarks);
        detail::read_optional(p, "landmarks_file", c.plugins.landmarks_file);
        detail::read_optional(p, "segmentation", c.plugins.segmentation);
        detail::read_optional(p, "postprocessor", c.plugins.postprocessor);
    }
    detail::read_optional(j, "seed", c.seed);
    detail::read_optional(j, "workers", c.workers);
    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        detail::check_keys(p, {"data", "out"}, "paths");
        detail::read_optional(p, "data", c.data_dir);
        detail::read_optional(p, "out", c.out_dir);
    }
    c.validate();
}

PipelineConfig load_pipeline_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoFailure("cannot open config " + path.string());
    try {
        return nlohmann::json::parse(in).get<PipelineConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument("config " + path.string() + ": " + e.what());
    }
}

void save_pipeline_config(const fs::path& path, const PipelineConfig& config) {
    std::ofstream out(path);
    if (!out) throw IoFailure("cannot write " + path.string());
    out << nlohmann::json(config).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Image IO

namespace {

std::vector<unsigned char> read_png_bytes(const fs::path& path, png_uint_32 format, int& rows, int& cols) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str()))
        throw IoFailure("cannot read " + path.string() + ": " + img.message);
    img.format = format;
    std::vector<unsigned char> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&img);
        throw IoFailure("cannot decode " + path.string() + ": " + img.message);
    }
    rows = int(img.height);
    cols = int(img.width);
    return buf;
}

void write_png_bytes(const fs::path& path, png_uint_32 format, int rows, int cols, const unsigned char* data) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = png_uint_32(cols);
    img.height = png_uint_32(rows);
    img.format = format;
    if (!png_image_write_to_file(&img, path.c_str(), 0, data, 0, nullptr))
        throw IoFailure("cannot write " + path.string() + ": " + img.message);
}

} // namespace

ImageF read_png(const fs::path& path) {
    int rows = 0, cols = 0;
    const auto buf = read_png_bytes(path, PNG_FORMAT_RGB, rows, cols);
    ImageF out(rows, cols, 3);
    for (int y = 0; y < rows; ++y)
        for (int x = 0; x < cols; ++x)
            for (int c = 0; c < 3; ++c) out(c, y, x) = from_byte(buf[(std::size_t(y) * cols + x) * 3 + c]);
    return out;
}

void write_png(const fs::path& path, const ImageF& image) {
    if (image.channels() != 3 && image.channels() != 1) throw ShapeMismatch("PNG output needs 1 or 3 channels");
    const int rows = image.rows(), cols = image.cols(), ch = image.channels();
    std::vector<unsigned char> buf(std::size_t(rows) * cols * ch);
    for (int y = 0; y < rows; ++y)
        for (int x = 0; x < cols; ++x)
            for (int c = 0; c < ch; ++c) buf[(std::size_t(y) * cols + x) * ch + c] = to_byte(image(c, y, x));
    write_png_bytes(path, ch == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY, rows, cols, buf.data());
}

Plane<unsigned char> read_png_gray(const fs::path& path) {
    int rows = 0, cols = 0;
    const auto buf = read_png_bytes(path, PNG_FORMAT_GRAY, rows, cols);
    Plane<unsigned char> out(rows, cols);
    std::copy(buf.begin(), buf.end(), out.data());
    return out;
}

void write_png_gray(const fs::path& path, const Plane<unsigned char>& gray) {
    write_png_bytes(path, PNG_FORMAT_GRAY, int(gray.rows()), int(gray.cols()), gray.data());
}

std::string frame_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%06d.png", index);
    return buf;
}

std::optional<int> frame_index_of(const fs::path& path) {
    const std::string stem = path.stem().string();
    if (stem.empty() || !std::all_of(stem.begin(), stem.end(), [](unsigned char c) { return std::isdigit(c); }))
        return std::nullopt;
    return std::stoi(stem);
}

std::vector<fs::path> list_frames(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoFailure(dir.string() + " is not a directory");
    std::vector<fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".png" && frame_index_of(entry.path()))
            out.push_back(entry.path());
    std::sort(out.begin(), out.end(), [](const fs::path& a, const fs::path& b) {
        return *frame_index_of(a) < *frame_index_of(b);
    });
    return out;
}

std::optional<double> read_fps(const fs::path& dir) {
    std::ifstream in(dir / "meta.txt");
    if (!in) return std::nullopt;
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("fps=", 0) == 0) {
            try {
                return std::stod(line.substr(4));
            } catch (const std::exception&) {
                throw IoFailure("bad fps line in " + (dir / "meta.txt").string());
            }
        }
    }
    return std::nullopt;
}

void write_fps(const fs::path& dir, double fps) {
    std::ofstream out(dir / "meta.txt");
    if (!out) throw IoFailure("cannot write " + (dir / "meta.txt").string());
    out << "fps=" << std::setprecision(10) << fps << '\n';
}

// ---------------------------------------------------------------------------
// Synthetic faces

namespace {

struct PersonLook {
    Eigen::Vector3d skin, background, hair, iris;
    double a, b;          // face half-axes
    double eye_dx, eye_y; // eye centers at (±eye_dx, eye_y)
    double eye_w, eye_h;  // sclera width (corner to corner) and height
    double pupil_r;
    double nose_y, mouth_y, mouth_w;
};

struct FramePose {
    double tx, ty, angle, scale;
    double gaze_x, gaze_y, mouth_open, light;
};

double uni(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

PersonLook person_look(std::uint64_t seed) {
    std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ull + 0x5eedull);
    PersonLook p;
    p.skin = {uni(rng, 0.2, 0.75), uni(rng, -0.15, 0.4), uni(rng, -0.45, 0.15)};
    p.background = {uni(rng, -0.4, 0.6), uni(rng, -0.4, 0.6), uni(rng, -0.4, 0.6)};
    p.hair = {uni(rng, -0.9, -0.3), uni(rng, -0.95, -0.4), uni(rng, -0.95, -0.4)};
    p.iris = {uni(rng, -0.6, 0.2), uni(rng, -0.5, 0.3), uni(rng, -0.4, 0.5)};
    p.a = uni(rng, 12.5, 16.5);
    p.b = p.a * uni(rng, 1.25, 1.45);
    p.eye_dx = p.a * uni(rng, 0.5, 0.58);
    p.eye_y = uni(rng, -7.5, -5.5);
    p.eye_w = p.a * uni(rng, 0.42, 0.5);
    p.eye_h = uni(rng, 3.0, 3.8);
    p.pupil_r = uni(rng, 1.2, 1.6);
    p.nose_y = uni(rng, 3.5, 5.5);
    p.mouth_y = uni(rng, 14.5, 17.0);
    p.mouth_w = uni(rng, 4.0, 6.0);
    return p;
}

FramePose frame_pose(std::uint64_t seed, int frame) {
    std::mt19937_64 rng((seed + 0x632be59bd9b4e019ull * std::uint64_t(frame)) ^ 0xf4a3eull);
    FramePose f;
    f.tx = uni(rng, -2.5, 2.5);
    f.ty = uni(rng, -2.5, 2.5);
    f.angle = uni(rng, -0.08, 0.08);
    f.scale = uni(rng, 0.96, 1.04);
    f.gaze_x = uni(rng, -1.0, 1.0);
    f.gaze_y = uni(rng, -0.3, 0.3);
    f.mouth_open = uni(rng, 0.0, 1.5);
    f.light = uni(rng, -0.08, 0.08);
    return f;
}

bool in_ellipse(double x, double y, double cx, double cy, double rx, double ry) {
    const double u = (x - cx) / rx, v = (y - cy) / ry;
    return u * u + v * v <= 1.0;
}

} // namespace

SyntheticFrame render_synthetic(const SyntheticFaceSpec& spec, int frame_index) {
    if (spec.image_size < 16) throw InvalidArgument("synthetic image_size must be >= 16");
    const PersonLook p = person_look(spec.seed);
    const FramePose f = frame_pose(spec.seed, frame_index);
    const int n = spec.image_size;
    // All geometry is authored for 64-pixel frames and scaled.
    const double unit = double(n) / 64.0;
    const Point center{n / 2.0 - 0.5 + f.tx * unit, n * 36.0 / 64.0 - 0.5 + f.ty * unit};
    Eigen::Matrix2d rot;
    rot << std::cos(f.angle), -std::sin(f.angle), std::sin(f.angle), std::cos(f.angle);
    const double s = f.scale * unit;
    auto to_frame = [&](const Point& q) -> Point { return center + s * (rot * q); };

    // Pupil offset stays inside the sclera.
    const double gx = f.gaze_x * (p.eye_w / 2 - p.pupil_r * 1.5) * 0.6;
    const double gy = f.gaze_y * (p.eye_h / 2 - p.pupil_r) * 0.6;

    auto shade = [&](const Point& q) -> Eigen::Vector3d {
        const double x = q.x(), y = q.y();
        Eigen::Vector3d c = p.background + Eigen::Vector3d::Constant(0.15 * y / 32.0);
        if (in_ellipse(x, y, 0, -0.25 * p.b, 1.12 * p.a, 0.95 * p.b)) c = p.hair;
        if (in_ellipse(x, y, 0, 0, p.a, p.b)) {
            c = p.skin + Eigen::Vector3d::Constant(f.light);
            for (double side : {-1.0, 1.0}) {
                const double ex = side * p.eye_dx;
                // Eyebrow well above the eye box.
                if (std::abs(x - ex) <= p.eye_w / 2 && std::abs(y - (p.eye_y - p.eye_h / 2 - 2.8)) <= 0.6) c = p.hair;
                if (in_ellipse(x, y, ex, p.eye_y, p.eye_w / 2, p.eye_h / 2)) {
                    c = Eigen::Vector3d::Constant(0.85);
                    const double px = ex + gx, py = p.eye_y + gy;
                    if (in_ellipse(x, y, px, py, 1.6 * p.pupil_r, 1.6 * p.pupil_r)) c = p.iris;
                    if (in_ellipse(x, y, px, py, p.pupil_r, p.pupil_r)) c = Eigen::Vector3d::Constant(-0.92);
                }
            }
            if (in_ellipse(x, y, 0, p.nose_y, 1.4, 2.4)) c = p.skin - Eigen::Vector3d::Constant(0.25);
            if (in_ellipse(x, y, 0, p.mouth_y, p.mouth_w, 0.7 + f.mouth_open / 2))
                c = Eigen::Vector3d(0.35, -0.7, -0.6);
        }
        return c.cwiseMax(-1.0).cwiseMin(1.0);
    };

    SyntheticFrame out;
    out.image = ImageF(n, n, 3);
    out.mask = Plane<unsigned char>::Zero(n, n);
    const Eigen::Matrix2d inv_rot = rot.transpose();
    constexpr int kSuper = 3;
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            Eigen::Vector3d acc = Eigen::Vector3d::Zero();
            for (int sy = 0; sy < kSuper; ++sy)
                for (int sx = 0; sx < kSuper; ++sx) {
                    const Point sample{x + (sx - 1) / 3.0, y + (sy - 1) / 3.0};
                    acc += shade(inv_rot * (sample - center) / s);
                }
            acc /= double(kSuper * kSuper);
            for (int c = 0; c < 3; ++c) out.image(c, y, x) = float(acc(c));
            const Point q = inv_rot * (Point{double(x), double(y)} - center) / s;
            if (in_ellipse(q.x(), q.y(), 0, 0, p.a, p.b)) out.mask(y, x) = 255;
        }
    }

    std::vector<Point> pts;
    for (int k = 0; k < 10; ++k) {
        const double t = 2.0 * std::numbers::pi * k / 10.0;
        pts.push_back(to_frame({p.a * std::cos(t), p.b * std::sin(t)}));
    }
    // Image-left eye first: outer corner, inner corner, pupil.
    pts.push_back(to_frame({-p.eye_dx - p.eye_w / 2, p.eye_y}));
    pts.push_back(to_frame({-p.eye_dx + p.eye_w / 2, p.eye_y}));
    pts.push_back(to_frame({-p.eye_dx + gx, p.eye_y + gy}));
    pts.push_back(to_frame({p.eye_dx + p.eye_w / 2, p.eye_y}));
    pts.push_back(to_frame({p.eye_dx - p.eye_w / 2, p.eye_y}));
    pts.push_back(to_frame({p.eye_dx + gx, p.eye_y + gy}));
    pts.push_back(to_frame({0.0, p.nose_y + 1.0}));
    pts.push_back(to_frame({-p.mouth_w, p.mouth_y}));
    pts.push_back(to_frame({p.mouth_w, p.mouth_y}));
    out.landmarks = LandmarkLayout::synthetic().wrap(std::move(pts));
    return out;
}

std::vector<SyntheticFaceSpec> default_synthetic_specs(int persons, int frames, int image_size, std::uint64_t seed) {
    if (persons < 1 || frames < 1) throw InvalidArgument("need at least one person and one frame");
    std::vector<SyntheticFaceSpec> specs;
    for (int i = 0; i < persons; ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "person%02d", i);
        specs.push_back({id, seed * 1000003ull + std::uint64_t(i) + 1, frames, image_size});
    }
    return specs;
}

void make_synthetic(const std::vector<SyntheticFaceSpec>& specs, const fs::path& out_dir) {
    try {
        for (const auto& spec : specs) {
            if (spec.person_id.empty() || spec.frames < 1) throw InvalidArgument("invalid synthetic spec");
            const fs::path dir = out_dir / spec.person_id;
            fs::create_directories(dir / "masks");
            std::ofstream lm(dir / "landmarks.csv");
            if (!lm) throw IoFailure("cannot write " + (dir / "landmarks.csv").string());
            lm << "frame_index,point_index,x,y\n";
            for (int i = 1; i <= spec.frames; ++i) {
                const SyntheticFrame frame = render_synthetic(spec, i);
                write_png(dir / frame_name(i), frame.image);
                write_png_gray(dir / "masks" / frame_name(i), frame.mask);
                write_landmark_rows(lm, i, frame.landmarks.points);
            }
            if (!lm) throw IoFailure("failed writing " + (dir / "landmarks.csv").string());
            write_fps(dir, 25.0);
        }
    } catch (const fs::filesystem_error& e) {
        throw IoFailure(e.what());
    }
}

// ---------------------------------------------------------------------------
// Plugins

namespace {

std::map<int, std::vector<Point>> read_rows_file(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw IoFailure("cannot open " + file.string());
    return read_landmark_rows(in);
}

} // namespace

std::optional<Landmarks> SidecarLandmarks::detect(const ImageF&, const fs::path& path) const {
    const fs::path own = path.parent_path() / (path.stem().string() + ".landmarks.csv");
    if (fs::exists(own)) {
        const auto rows = read_rows_file(own);
        if (rows.empty()) return std::nullopt;
        return layout_.wrap(rows.begin()->second);
    }
    const fs::path shared = path.parent_path() / "landmarks.csv";
    const auto index = frame_index_of(path);
    if (!index || !fs::exists(shared)) return std::nullopt;
    const auto rows = read_rows_file(shared);
    auto it = rows.find(*index);
    if (it == rows.end()) return std::nullopt;
    return layout_.wrap(it->second);
}

FileLandmarks::FileLandmarks(const fs::path& file, LandmarkLayout layout)
    : layout_(std::move(layout)), rows_(read_rows_file(file)) {}

std::optional<Landmarks> FileLandmarks::detect(const ImageF&, const fs::path& path) const {
    auto it = rows_.find(frame_index_of(path).value_or(0));
    if (it == rows_.end()) return std::nullopt;
    return layout_.wrap(it->second);
}

FaceMask<float> OutlineSegmentation::crop_mask(const fs::path&, const AffineTransform&,
                                               const Landmarks& crop_landmarks, int crop_size) const {
    return binary_mask_from_outline<float>(crop_landmarks, crop_size, crop_size);
}

FaceMask<float> MaskFileSegmentation::crop_mask(const fs::path& frame_path, const AffineTransform& frame_to_crop,
                                                const Landmarks& crop_landmarks, int crop_size) const {
    const fs::path file = frame_path.parent_path() / "masks" / frame_path.filename();
    if (!fs::exists(file)) return binary_mask_from_outline<float>(crop_landmarks, crop_size, crop_size);
    const auto frame_mask = binary_mask_from_gray<float>(read_png_gray(file), MaskSpace::frame);
    ImageF img(frame_mask.rows(), frame_mask.cols(), 1);
    img.plane(0) = frame_mask.values;
    const ImageF warped = warp(img, frame_to_crop, crop_size, crop_size);
    return {(warped.plane(0) >= 0.5f).cast<float>(), MaskSpace::crop};
}

namespace {

double cubic_weight(double t) {
    constexpr double a = -0.5;
    t = std::abs(t);
    if (t <= 1) return ((a + 2) * t - (a + 3)) * t * t + 1;
    if (t < 2) return ((a * t - 5 * a) * t + 8 * a) * t - 4 * a;
    return 0;
}

} // namespace

ImageF Bicubic2xPostProcessor::operator()(const ImageF& image) const {
    const int rows = image.rows(), cols = image.cols();
    ImageF out(2 * rows, 2 * cols, image.channels());
    // Output pixel i samples input coordinate (i + 0.5) / 2 − 0.5.
    for (int c = 0; c < image.channels(); ++c) {
        const auto& p = image.plane(c);
        for (int y = 0; y < 2 * rows; ++y) {
            const double v = (y + 0.5) / 2.0 - 0.5;
            const int y0 = int(std::floor(v));
            for (int x = 0; x < 2 * cols; ++x) {
                const double u = (x + 0.5) / 2.0 - 0.5;
                const int x0 = int(std::floor(u));
                double acc = 0;
                for (int j = -1; j <= 2; ++j) {
                    const double wy = cubic_weight(v - (y0 + j));
                    const int yy = std::clamp(y0 + j, 0, rows - 1);
                    for (int i = -1; i <= 2; ++i)
                        acc += wy * cubic_weight(u - (x0 + i)) * double(p(yy, std::clamp(x0 + i, 0, cols - 1)));
                }
                out(c, y, x) = float(std::clamp(acc, -1.0, 1.0));
            }
        }
    }
    return out;
}

EmbeddingFile::EmbeddingFile(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw IoFailure("cannot open embedding file " + file.string());
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream fields(line);
        std::string key, cell;
        std::getline(fields, key, ',');
        std::vector<double> values;
        try {
            while (std::getline(fields, cell, ',')) values.push_back(std::stod(cell));
        } catch (const std::exception&) {
            throw IoFailure("malformed embedding row " + std::to_string(line_no));
        }
        if (values.empty()) throw IoFailure("embedding row " + std::to_string(line_no) + " has no values");
        rows_[key] = IdentityVector::normalized(Eigen::Map<Eigen::VectorXd>(values.data(), Eigen::Index(values.size())));
    }
}

std::optional<IdentityVector> EmbeddingFile::lookup(const fs::path& image_path) const {
    for (const std::string& key : {image_path.filename().string(), image_path.stem().string()})
        if (auto it = rows_.find(key); it != rows_.end()) return it->second;
    return std::nullopt;
}

std::unique_ptr<LandmarkProvider> make_landmark_provider(const PluginConfig& plugins) {
    if (plugins.landmarks == "file") return std::make_unique<FileLandmarks>(plugins.landmarks_file);
    return std::make_unique<SidecarLandmarks>();
}

std::unique_ptr<SegmentationProvider> make_segmentation_provider(const PluginConfig& plugins) {
    if (plugins.segmentation == "mask_files") return std::make_unique<MaskFileSegmentation>();
    return std::make_unique<OutlineSegmentation>();
}

std::unique_ptr<PostProcessor> make_postprocessor(const PluginConfig& plugins) {
    if (plugins.postprocessor == "bicubic2x") return std::make_unique<Bicubic2xPostProcessor>();
    return std::make_unique<IdentityPostProcessor>();
}

// ---------------------------------------------------------------------------
// Data

AlignedFace align_face(const ImageF& image, const Landmarks& frame_landmarks, int crop_size, int frame_index,
                       const LandmarkLayout& layout) {
    AlignedFace face;
    face.transform = estimate_alignment(alignment_anchors(frame_landmarks, layout), canonical_template(crop_size));
    face.crop = warp(image, face.transform, crop_size, crop_size);
    face.landmarks = transform_landmarks(frame_landmarks, face.transform);
    face.frame_index = frame_index;
    return face;
}

Dataset load_dataset(const fs::path& root, const LandmarkProvider& provider, int crop_size) {
    if (!fs::is_directory(root)) throw IoFailure(root.string() + " is not a directory");
    Dataset data;
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());
    for (const auto& dir : dirs) {
        std::vector<AlignedFace> faces;
        for (const auto& frame : list_frames(dir)) {
            const ImageF image = read_png(frame);
            const auto lm = provider.detect(image, frame);
            if (!lm) continue;
            faces.push_back(align_face(image, *lm, crop_size, *frame_index_of(frame)));
        }
        if (!faces.empty()) data.persons.emplace(dir.filename().string(), std::move(faces));
    }
    data.validate();
    return data;
}

Landmarks refine_pupils(const ImageF& image, const Landmarks& landmarks, double margin, float dark_threshold) {
    Landmarks out = landmarks;
    const auto [left, right] = eye_regions(landmarks, margin, image.cols(), image.rows());
    for (const auto& [eye, name] : {std::pair{left, groups::kLeftEye}, std::pair{right, groups::kRightEye}}) {
        const IndexRange range = landmarks.index_groups.at(name);
        const ad::PixelBox box = eye.box.pixels();
        double sw = 0, sx = 0, sy = 0;
        for (int y = box.y0; y < box.y1; ++y)
            for (int x = box.x0; x < box.x1; ++x) {
                float v = 0;
                for (int c = 0; c < image.channels(); ++c) v += image(c, y, x);
                v /= float(image.channels());
                if (v < dark_threshold) {
                    const double w = double(dark_threshold - v);
                    sw += w;
                    sx += w * x;
                    sy += w * y;
                }
            }
        if (sw > 0) out.points[std::size_t(range.end - 1)] = Point{sx / sw, sy / sw};
    }
    return out;
}

// ---------------------------------------------------------------------------
// Swapping

namespace {

template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
    std::atomic<std::size_t> next{0};
    auto run = [&] {
        for (std::size_t i = next++; i < n; i = next++) fn(i);
    };
    const int count = std::max(1, std::min<int>(workers, int(n)));
    if (count == 1) {
        run();
        return;
    }
    std::vector<std::thread> pool;
    for (int t = 0; t < count; ++t) pool.emplace_back(run);
    for (auto& t : pool) t.join();
}

// Crop → upscaled crop for a post-processor factor f with half-pixel
// centers: u = f·x + (f − 1)/2.
AffineTransform upscale_transform(int factor) {
    const double f = factor;
    return AffineTransform::similarity(f, 0.0, (f - 1) / 2, (f - 1) / 2);
}

} // namespace

SwapEngine::SwapEngine(const PipelineConfig& config, const CheckpointData& checkpoint) : config_(config) {
    config_.validate();
    if (!(checkpoint.config == config_.generator))
        throw ConfigMismatch("checkpoint was trained with a different generator config");
    model_ = std::make_unique<FaceSwapModel<float>>(config_.generator, config_.seed);
    load_model(*model_, checkpoint);
    landmarks_ = make_landmark_provider(config_.plugins);
    segmentation_ = make_segmentation_provider(config_.plugins);
    post_ = make_postprocessor(config_.plugins);
    if (config_.plugins.identity_embedder == "file")
        embeddings_ = std::make_unique<EmbeddingFile>(config_.plugins.embedding_file);
}

AlignedFace SwapEngine::detect_and_align(const FaceInput& input, const char* role) const {
    const auto lm = landmarks_->detect(input.image, input.path);
    if (!lm) throw NoFaceDetected(role);
    return align_face(input.image, *lm, config_.generator.crop_size, frame_index_of(input.path).value_or(0));
}

IdentityVector SwapEngine::source_identity(const FaceInput& source) const {
    if (embeddings_) {
        auto z = embeddings_->lookup(source.path);
        if (!z) throw NoFaceDetected("source (no precomputed embedding for " + source.path.filename().string() + ")");
        if (z->dim() != config_.generator.identity_dim) throw ConfigMismatch("embedding dimension differs from config");
        return *z;
    }
    const AlignedFace face = detect_and_align(source, "source");
    return encode_identity(model_->identity_encoder(), face.crop, config_.generator.crop_size);
}

FrameSwapInputs<float> SwapEngine::prepare(const IdentityVector& z_src, const AlignedFace& source_face,
                                           const FaceInput& target) const {
    const GeneratorConfig& g = config_.generator;
    const AlignedFace tgt = detect_and_align(target, "target");
    const auto att = extract_attributes(model_->attribute_encoder(), tgt.crop, g);
    const ImageF generated = generate(model_->generator(), z_src, att, g);

    FrameSwapInputs<float> in;
    in.generated_crop = (*post_)(generated);
    if (in.generated_crop.rows() != in.generated_crop.cols() || in.generated_crop.rows() % g.crop_size != 0 ||
        in.generated_crop.rows() < g.crop_size)
        throw ShapeMismatch("post-processor must upscale the crop by an integer factor");
    const int factor = in.generated_crop.rows() / g.crop_size;
    const AffineTransform up = upscale_transform(factor);
    in.transform = compose(up, tgt.transform);
    in.frame = target.image;
    in.landmarks_tgt = transform_landmarks(tgt.landmarks, up);
    // The generator keeps the source's face shape, so the generated face is
    // described by the target's inner landmarks and the source's outline.
    in.landmarks_gen = in.landmarks_tgt;
    const IndexRange outline = in.landmarks_gen.index_groups.at(groups::kOutline);
    const Landmarks src_up = transform_landmarks(source_face.landmarks, up);
    for (int i = outline.begin; i < outline.end; ++i) in.landmarks_gen.points[std::size_t(i)] = src_up.points[std::size_t(i)];
    in.mask_crop = segmentation_->crop_mask(target.path, in.transform, in.landmarks_tgt, g.crop_size * factor);
    return in;
}

namespace {

BlendConfig blend_for_factor(BlendConfig blend, int factor) {
    blend.sigma *= factor;
    blend.max_scale_px *= factor;
    if (blend.kernel_radius) *blend.kernel_radius *= factor;
    return blend;
}

} // namespace

ImageF SwapEngine::swap_image(const FaceInput& source, const FaceInput& target) const {
    const AlignedFace src = detect_and_align(source, "source");
    const IdentityVector z = source_identity(source);
    const FrameSwapInputs<float> in = prepare(z, src, target);
    return composite(in, blend_for_factor(config_.blend, in.generated_crop.rows() / config_.generator.crop_size));
}

VideoSwapResult<float> SwapEngine::swap_frames(const FaceInput& source, const std::vector<FaceInput>& frames,
                                               int workers) const {
    const AlignedFace src = detect_and_align(source, "source");
    const IdentityVector z = source_identity(source);
    std::vector<std::optional<FrameSwapInputs<float>>> inputs(frames.size());
    std::vector<std::string> failures(frames.size());
    parallel_for(frames.size(), workers, [&](std::size_t i) {
        try {
            inputs[i] = prepare(z, src, frames[i]);
        } catch (const std::exception& e) {
            failures[i] = e.what();
        }
    });
    std::vector<ImageF> images;
    images.reserve(frames.size());
    for (const auto& f : frames) images.push_back(f.image);
    int factor = 1;
    for (const auto& in : inputs)
        if (in) {
            factor = in->generated_crop.rows() / config_.generator.crop_size;
            break;
        }
    auto result = swap_video_frames(images, inputs, blend_for_factor(config_.blend, factor), workers);
    for (std::size_t i = 0; i < failures.size(); ++i)
        if (!failures[i].empty()) result.errors.push_back({i, failures[i]});
    std::sort(result.errors.begin(), result.errors.end(),
              [](const FrameError& a, const FrameError& b) { return a.frame < b.frame; });
    return result;
}

VideoSwapSummary SwapEngine::swap_video(const FaceInput& source, const fs::path& frames_dir, const fs::path& out_dir,
                                        int workers) const {
    const auto paths = list_frames(frames_dir);
    fs::create_directories(out_dir);
    VideoSwapSummary summary;
    summary.fps = read_fps(frames_dir);
    if (summary.fps) write_fps(out_dir, *summary.fps);
    if (paths.empty()) {
        std::cerr << "warning: no frames in " << frames_dir.string() << '\n';
        return summary;
    }
    std::vector<FaceInput> frames;
    for (const auto& p : paths) frames.push_back({read_png(p), p});
    const auto result = swap_frames(source, frames, workers);
    for (std::size_t i = 0; i < paths.size(); ++i) write_png(out_dir / paths[i].filename(), result.frames[i]);
    summary.frames = paths.size();
    summary.errors = result.errors;
    std::set<std::size_t> failed;
    for (const auto& e : result.errors) failed.insert(e.frame);
    summary.swapped = paths.size() - failed.size();
    return summary;
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<ManifestRow> read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoFailure("cannot open manifest " + path.string());
    const fs::path base = path.parent_path();
    auto resolve = [&](std::string s) {
        s.erase(0, s.find_first_not_of(" \t"));
        s.erase(s.find_last_not_of(" \t\r") + 1);
        fs::path p(s);
        return p.is_absolute() ? p : base / p;
    };
    std::vector<ManifestRow> rows;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> cells;
        std::istringstream fields(line);
        std::string cell;
        while (std::getline(fields, cell, ',')) cells.push_back(cell);
        if (cells.size() != 3) throw IoFailure("manifest row " + std::to_string(line_no) + " needs three paths");
        if (line_no == 1 && cells[0].find("source") != std::string::npos) continue;
        rows.push_back({resolve(cells[0]), resolve(cells[1]), resolve(cells[2])});
    }
    return rows;
}

void write_manifest(const fs::path& path, const std::vector<ManifestRow>& rows) {
    std::ofstream out(path);
    if (!out) throw IoFailure("cannot write " + path.string());
    out << "source_path,target_path,swap_path\n";
    for (const auto& r : rows) out << r.source.string() << ',' << r.target.string() << ',' << r.swap.string() << '\n';
}

std::string person_of(const fs::path& image_path) { return image_path.parent_path().filename().string(); }

MetricReport evaluate(const SwapEngine& engine, const std::vector<ManifestRow>& rows,
                      const ExternalEstimators& estimators) {
    if (rows.empty()) throw InvalidArgument("evaluation manifest is empty");
    const int S = engine.config().generator.crop_size;
    std::vector<GalleryEntry> gallery;
    std::set<fs::path> seen;
    std::vector<IdentityVector> probes;
    std::vector<std::string> probe_persons;
    std::vector<EvalTriple> triples;
    double eye_total = 0;
    for (const auto& row : rows) {
        const FaceInput source{read_png(row.source), row.source};
        const FaceInput target{read_png(row.target), row.target};
        const ImageF swap = read_png(row.swap);
        if (!swap.same_shape(target.image)) throw ShapeMismatch("swap and target sizes differ for " + row.swap.string());
        if (seen.insert(row.source).second) gallery.push_back({person_of(row.source), engine.source_identity(source)});

        // The swap keeps the target's pose, so the target's detection locates it.
        const AlignedFace tgt = engine.detect_and_align(target, "target");
        const ImageF swap_crop = warp(swap, tgt.transform, S, S);
        probes.push_back(encode_identity(engine.model().identity_encoder(), swap_crop, S));
        probe_persons.push_back(person_of(row.source));

        const Landmarks lm_t = transform_landmarks(tgt.landmarks, invert(tgt.transform));
        const double margin = 2.0 * double(target.image.cols()) / 64.0;
        eye_total += eye_ldmk(refine_pupils(swap, lm_t, margin), refine_pupils(target.image, lm_t, margin));
        triples.push_back({source.image, target.image, swap, std::nullopt, std::nullopt, std::nullopt});
    }
    MetricReport report;
    report.id_retrieval_pct = id_retrieval(probes, probe_persons, gallery);
    report.eye_ldmk = eye_total / double(rows.size());
    if (estimators.shape) report.shape_ringnet = external_metric(triples, estimators.shape, MetricReference::source);
    if (estimators.expression)
        report.exp_ringnet = external_metric(triples, estimators.expression, MetricReference::target);
    if (estimators.pose) report.pose_ringnet = external_metric(triples, estimators.pose, MetricReference::target);
    if (estimators.shape_hn) report.shape_hn = external_metric(triples, estimators.shape_hn, MetricReference::source);
    return report;
}

} // namespace fswap
