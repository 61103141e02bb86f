#ifndef FACESWAP_PIPELINE_HPP
#define FACESWAP_PIPELINE_HPP

// End-to-end orchestration: configuration, image and frame-directory IO,
// the synthetic face generator, landmark/segmentation/post-processing
// plugins, image and video swapping, and evaluation from a manifest.

#include "faceswap/blending.hpp"
#include "faceswap/geometry.hpp"
#include "faceswap/losses.hpp"
#include "faceswap/metrics.hpp"
#include "faceswap/network.hpp"
#include "faceswap/training.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace fswap {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

struct PluginConfig {
    std::string identity_embedder = "model"; // model | file
    std::string embedding_file;
    std::string landmarks = "synthetic";      // synthetic | file
    std::string landmarks_file;
    std::string segmentation = "outline";     // outline | mask_files
    std::string postprocessor = "identity";   // identity | bicubic2x
};

struct PipelineConfig {
    GeneratorConfig generator;
    TrainConfig train;
    LossWeights weights;
    EyeLossSettings eye_loss;
    BlendConfig blend = BlendConfig::for_crop_size(64);
    PluginConfig plugins;
    std::uint64_t seed = 0;
    int workers = 1;
    std::string data_dir;
    std::string out_dir;

    void validate() const;
};

void to_json(nlohmann::json& j, const PipelineConfig& c);
// Blend defaults follow the configured crop size unless overridden.
void from_json(const nlohmann::json& j, PipelineConfig& c);

PipelineConfig load_pipeline_config(const fs::path& path);
void save_pipeline_config(const fs::path& path, const PipelineConfig& config);

// ---------------------------------------------------------------------------
// Image IO (8-bit PNG ↔ [-1, 1] floats)

ImageF read_png(const fs::path& path);
void write_png(const fs::path& path, const ImageF& image);
// 8-bit single channel, as used for segmentation masks.
Plane<unsigned char> read_png_gray(const fs::path& path);
void write_png_gray(const fs::path& path, const Plane<unsigned char>& gray);

inline unsigned char to_byte(float v) {
    const float c = std::clamp(v, -1.0f, 1.0f);
    return static_cast<unsigned char>(std::lround((c + 1.0f) * 127.5f));
}
inline float from_byte(unsigned char b) { return float(b) / 127.5f - 1.0f; }

// Frame directories: 000001.png, 000002.png, … plus meta.txt with fps=<float>.
std::string frame_name(int index);
std::vector<fs::path> list_frames(const fs::path& dir);
std::optional<double> read_fps(const fs::path& dir);
void write_fps(const fs::path& dir, double fps);
// Numeric frame index of a path like …/000007.png, else nullopt.
std::optional<int> frame_index_of(const fs::path& path);

// ---------------------------------------------------------------------------
// Synthetic cartoon faces

struct SyntheticFaceSpec {
    std::string person_id;
    std::uint64_t seed = 0;
    int frames = 8;
    int image_size = 64;
};

struct SyntheticFrame {
    ImageF image;
    Landmarks landmarks;
    Plane<unsigned char> mask; // face ellipse, 255 inside
};

// Deterministic rendering of one frame (frame_index from 1).
SyntheticFrame render_synthetic(const SyntheticFaceSpec& spec, int frame_index);

// Writes <out>/<person>/<frame>.png, <person>/landmarks.csv,
// <person>/masks/<frame>.png and <person>/meta.txt.
void make_synthetic(const std::vector<SyntheticFaceSpec>& specs, const fs::path& out_dir);

std::vector<SyntheticFaceSpec> default_synthetic_specs(int persons, int frames, int image_size, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Plugins

// Supplies frame-space landmarks for an image, or nullopt when no face is found.
class LandmarkProvider {
public:
    virtual ~LandmarkProvider() = default;
    virtual std::optional<Landmarks> detect(const ImageF& image, const fs::path& path) const = 0;
};

// Reads the sidecars written by make_synthetic: <dir>/<stem>.landmarks.csv
// if present, else row frame_index_of(path) of <dir>/landmarks.csv.
class SidecarLandmarks final : public LandmarkProvider {
public:
    explicit SidecarLandmarks(LandmarkLayout layout = LandmarkLayout::synthetic()) : layout_(std::move(layout)) {}
    std::optional<Landmarks> detect(const ImageF& image, const fs::path& path) const override;

private:
    LandmarkLayout layout_;
};

// One precomputed detection file; rows keyed by frame index (0 for stills).
class FileLandmarks final : public LandmarkProvider {
public:
    FileLandmarks(const fs::path& file, LandmarkLayout layout = LandmarkLayout::synthetic());
    std::optional<Landmarks> detect(const ImageF& image, const fs::path& path) const override;

private:
    LandmarkLayout layout_;
    std::map<int, std::vector<Point>> rows_;
};

// Binary face mask in crop space.
class SegmentationProvider {
public:
    virtual ~SegmentationProvider() = default;
    virtual FaceMask<float> crop_mask(const fs::path& frame_path, const AffineTransform& frame_to_crop,
                                      const Landmarks& crop_landmarks, int crop_size) const = 0;
};

class OutlineSegmentation final : public SegmentationProvider {
public:
    FaceMask<float> crop_mask(const fs::path& frame_path, const AffineTransform& frame_to_crop,
                              const Landmarks& crop_landmarks, int crop_size) const override;
};

// Grayscale masks at <dir>/masks/<name>; falls back to the outline hull
// when a frame has no mask file.
class MaskFileSegmentation final : public SegmentationProvider {
public:
    FaceMask<float> crop_mask(const fs::path& frame_path, const AffineTransform& frame_to_crop,
                              const Landmarks& crop_landmarks, int crop_size) const override;
};

// Super-resolution hook: output at least as large as the input, in [-1, 1].
class PostProcessor {
public:
    virtual ~PostProcessor() = default;
    virtual ImageF operator()(const ImageF& image) const = 0;
};

class IdentityPostProcessor final : public PostProcessor {
public:
    ImageF operator()(const ImageF& image) const override { return image; }
};

// Keys cubic (a = −0.5) 2× upscaling with clamped borders.
class Bicubic2xPostProcessor final : public PostProcessor {
public:
    ImageF operator()(const ImageF& image) const override;
};

// Externally computed identity embeddings: rows `key,v1,…,vD`, looked up by
// image file stem (or full file name).
class EmbeddingFile {
public:
    explicit EmbeddingFile(const fs::path& file);
    std::optional<IdentityVector> lookup(const fs::path& image_path) const;

private:
    std::map<std::string, IdentityVector> rows_;
};

std::unique_ptr<LandmarkProvider> make_landmark_provider(const PluginConfig& plugins);
std::unique_ptr<SegmentationProvider> make_segmentation_provider(const PluginConfig& plugins);
std::unique_ptr<PostProcessor> make_postprocessor(const PluginConfig& plugins);

// ---------------------------------------------------------------------------
// Data

struct FaceInput {
    ImageF image;
    fs::path path;
};

// Aligns frame-space landmarks to the canonical template of an S crop.
AlignedFace align_face(const ImageF& image, const Landmarks& frame_landmarks, int crop_size, int frame_index = 0,
                       const LandmarkLayout& layout = LandmarkLayout::synthetic());

// Loads <root>/<person>/<frame>.png with landmarks from the provider.
// Frames without a detection are skipped.
Dataset load_dataset(const fs::path& root, const LandmarkProvider& provider, int crop_size);

// Moves the last point of each eye group (the pupil in the synthetic layout)
// to the centroid of dark pixels inside the eye box. Used to measure gaze on
// images that have no landmark sidecar, such as swaps.
Landmarks refine_pupils(const ImageF& image, const Landmarks& landmarks, double margin = 1.0,
                        float dark_threshold = -0.5f);

// ---------------------------------------------------------------------------
// Swapping

struct VideoSwapSummary {
    std::size_t frames = 0;
    std::size_t swapped = 0;
    std::vector<FrameError> errors;
    std::optional<double> fps;
};

class SwapEngine {
public:
    SwapEngine(const PipelineConfig& config, const CheckpointData& checkpoint);

    const PipelineConfig& config() const { return config_; }
    const FaceSwapModel<float>& model() const { return *model_; }

    // Throws NoFaceDetected("source") / NoFaceDetected("target").
    AlignedFace detect_and_align(const FaceInput& input, const char* role) const;
    IdentityVector source_identity(const FaceInput& source) const;

    // Everything composite() needs for one target frame.
    FrameSwapInputs<float> prepare(const IdentityVector& z_src, const AlignedFace& source_face,
                                   const FaceInput& target) const;

    ImageF swap_image(const FaceInput& source, const FaceInput& target) const;

    // Source identity is encoded once; frames fan out to `workers` threads
    // and come back in input order. Per-frame failures pass the frame through.
    VideoSwapResult<float> swap_frames(const FaceInput& source, const std::vector<FaceInput>& frames,
                                       int workers) const;
    VideoSwapSummary swap_video(const FaceInput& source, const fs::path& frames_dir, const fs::path& out_dir,
                                int workers) const;

private:
    PipelineConfig config_;
    std::unique_ptr<FaceSwapModel<float>> model_;
    std::unique_ptr<LandmarkProvider> landmarks_;
    std::unique_ptr<SegmentationProvider> segmentation_;
    std::unique_ptr<PostProcessor> post_;
    std::unique_ptr<EmbeddingFile> embeddings_;
};

// ---------------------------------------------------------------------------
// Evaluation

struct ManifestRow {
    fs::path source;
    fs::path target;
    fs::path swap;
};

// Rows `source_path,target_path,swap_path`; relative paths resolve against
// the manifest's directory. A header row is skipped.
std::vector<ManifestRow> read_manifest(const fs::path& path);
void write_manifest(const fs::path& path, const std::vector<ManifestRow>& rows);

// Person id of an image: its parent directory name.
std::string person_of(const fs::path& image_path);

// Optional external estimators; shape metrics compare against the source,
// expression and pose against the target.
struct ExternalEstimators {
    const ParameterEstimator* shape = nullptr;
    const ParameterEstimator* expression = nullptr;
    const ParameterEstimator* pose = nullptr;
    const ParameterEstimator* shape_hn = nullptr;
};

// id_retrieval against a gallery of the distinct source images and
// eye_ldmk between pupil-refined swap and target landmarks. External
// metrics appear only for the estimators supplied.
MetricReport evaluate(const SwapEngine& engine, const std::vector<ManifestRow>& rows,
                      const ExternalEstimators& estimators = {});

} // namespace fswap

#endif // FACESWAP_PIPELINE_HPP
