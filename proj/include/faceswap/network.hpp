#ifndef FACESWAP_NETWORK_HPP
#define FACESWAP_NETWORK_HPP

// Identity encoder, U-Net attribute encoder, AAD generator and the
// multi-scale patch discriminator. Everything is templated on the scalar
// type: float for training and inference, double for gradient checks.

#include "faceswap/image.hpp"
#include "faceswap/layers.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace fswap {

enum class EncoderVariant { unet, linknet, resnet };
enum class IdentityEncoderKind { conv, toy };

std::string to_string(EncoderVariant v);
std::string to_string(IdentityEncoderKind k);
EncoderVariant parse_encoder_variant(const std::string& s);
IdentityEncoderKind parse_identity_encoder(const std::string& s);

struct GeneratorConfig {
    int crop_size = 64;
    int identity_dim = 64;
    int n_levels = 3;
    int base_channels = 16;
    int aad_blocks_per_level = 2;
    EncoderVariant encoder_variant = EncoderVariant::unet;
    IdentityEncoderKind identity_encoder = IdentityEncoderKind::conv;
    int discriminator_channels = 16;
    int discriminator_scales = 2;

    void validate() const;
    // Spatial size of attribute level i (0 = coarsest).
    int level_size(int level) const { return crop_size >> (n_levels - level); }
    // Width of encoder stage at resolution S/2^depth, depth in [1, n_levels].
    int encoder_channels(int depth) const;
    int hidden_channels(int level) const { return encoder_channels(n_levels - level); }
    int attribute_channels(int level) const;

    bool operator==(const GeneratorConfig&) const = default;
};

// Unit-norm identity embedding (z_id).
struct IdentityVector {
    Eigen::VectorXd values;

    int dim() const { return int(values.size()); }
    // Throws NonNormalizedInput when the norm deviates from 1 by more than tol.
    void check_normalized(double tol = 1e-3) const;
    static IdentityVector normalized(Eigen::VectorXd v);
};

// Multi-resolution attribute maps, coarsest first.
template <typename Scalar>
struct AttributeFeatureStack {
    std::vector<ad::Tensor<Scalar>> levels;

    int size() const { return int(levels.size()); }
    void check(const GeneratorConfig& config) const;
};

template <typename Scalar>
struct RealismScores {
    std::vector<ad::Tensor<Scalar>> maps;
};

// Embeds S×S crops into unit-norm identity vectors (N×D×1×1).
template <typename Scalar>
class IdentityEncoder {
public:
    virtual ~IdentityEncoder() = default;
    virtual ad::Tensor<Scalar> operator()(const ad::Tensor<Scalar>& crops) const = 0;
    virtual int dim() const = 0;
};

// Small trainable convolutional embedder; stands in for a pretrained face
// recognition network at desk scale.
template <typename Scalar>
class ConvIdentityEncoder final : public IdentityEncoder<Scalar> {
public:
    ConvIdentityEncoder(nn::ParameterSet<Scalar>& params, const GeneratorConfig& config, std::mt19937_64& rng);
    ad::Tensor<Scalar> operator()(const ad::Tensor<Scalar>& crops) const override;
    int dim() const override { return dim_; }

private:
    std::vector<nn::Conv2d<Scalar>> convs_;
    nn::Linear<Scalar> head_;
    int dim_;
};

// Frozen embedder: average-pool to 8×8, fixed Gaussian projection, normalize.
template <typename Scalar>
class ToyIdentityEmbedder final : public IdentityEncoder<Scalar> {
public:
    static constexpr int kPooledSize = 8;

    ToyIdentityEmbedder(int crop_size, int dim, std::uint64_t seed);
    ad::Tensor<Scalar> operator()(const ad::Tensor<Scalar>& crops) const override;
    int dim() const override { return int(projection_.rows()); }

    int pool_factor() const { return pool_factor_; }
    // D × (3·8·8) matrix applied to the pooled pixels in C,H,W order.
    const Eigen::MatrixXd& projection() const { return projection_; }

private:
    int pool_factor_;
    Eigen::MatrixXd projection_;
    ad::Tensor<Scalar> weight_;
    ad::Tensor<Scalar> bias_;
};

// Produces z_att^1..n from the target crop.
template <typename Scalar>
class AttributeEncoder {
public:
    AttributeEncoder() = default;
    AttributeEncoder(nn::ParameterSet<Scalar>& params, const GeneratorConfig& config, std::mt19937_64& rng);
    AttributeFeatureStack<Scalar> operator()(const ad::Tensor<Scalar>& crops) const;

private:
    GeneratorConfig config_;
    std::vector<nn::Conv2d<Scalar>> down_;
    std::vector<nn::Conv2d<Scalar>> up_;
};

template <typename Scalar>
struct AadParts {
    ad::Tensor<Scalar> attribute; // A
    ad::Tensor<Scalar> identity;  // I
    ad::Tensor<Scalar> mask;      // M, N×1×H×W in [0, 1]
    ad::Tensor<Scalar> output;    // M·I + (1−M)·A
};

// Adaptive attention denormalization layer.
template <typename Scalar>
class AadLayer {
public:
    AadLayer() = default;
    AadLayer(nn::ParameterSet<Scalar>& params, const std::string& name, int hidden_channels, int attribute_channels,
             int identity_dim, std::mt19937_64& rng);

    AadParts<Scalar> parts(const ad::Tensor<Scalar>& hidden, const ad::Tensor<Scalar>& z_att,
                           const ad::Tensor<Scalar>& z_id) const;
    ad::Tensor<Scalar> operator()(const ad::Tensor<Scalar>& hidden, const ad::Tensor<Scalar>& z_att,
                                  const ad::Tensor<Scalar>& z_id) const {
        return parts(hidden, z_att, z_id).output;
    }

    nn::Conv2d<Scalar> gamma_att;
    nn::Conv2d<Scalar> beta_att;
    nn::Linear<Scalar> gamma_id;
    nn::Linear<Scalar> beta_id;
    nn::Conv2d<Scalar> mask;
};

template <typename Scalar>
class AadGenerator {
public:
    AadGenerator() = default;
    AadGenerator(nn::ParameterSet<Scalar>& params, const GeneratorConfig& config, std::mt19937_64& rng);

    // z_id: N×D×1×1. Returns N×3×S×S in [-1, 1].
    ad::Tensor<Scalar> operator()(const ad::Tensor<Scalar>& z_id, const AttributeFeatureStack<Scalar>& z_att) const;

    const std::vector<std::vector<AadLayer<Scalar>>>& aad_layers() const { return aad_; }

private:
    GeneratorConfig config_;
    nn::Linear<Scalar> stem_;
    std::vector<nn::Conv2d<Scalar>> transition_;
    std::vector<std::vector<AadLayer<Scalar>>> aad_;
    std::vector<std::vector<nn::Conv2d<Scalar>>> convs_;
    nn::Conv2d<Scalar> to_rgb_;
};

template <typename Scalar>
class Discriminator {
public:
    Discriminator() = default;
    Discriminator(nn::ParameterSet<Scalar>& params, const GeneratorConfig& config, std::mt19937_64& rng);
    RealismScores<Scalar> operator()(const ad::Tensor<Scalar>& images) const;

private:
    int crop_size_ = 0;
    std::vector<std::vector<nn::Conv2d<Scalar>>> scales_;
};

// The whole trainable model with its three disjoint parameter partitions:
// generator side (attribute encoder + generator), discriminator, identity.
template <typename Scalar>
class FaceSwapModel {
public:
    FaceSwapModel(const GeneratorConfig& config, std::uint64_t seed);
    FaceSwapModel(const FaceSwapModel&) = delete;
    FaceSwapModel& operator=(const FaceSwapModel&) = delete;

    const GeneratorConfig& config() const { return config_; }

    nn::ParameterSet<Scalar> generator_params;
    nn::ParameterSet<Scalar> discriminator_params;
    nn::ParameterSet<Scalar> identity_params;

    const IdentityEncoder<Scalar>& identity_encoder() const { return *identity_; }
    const AttributeEncoder<Scalar>& attribute_encoder() const { return attributes_; }
    const AadGenerator<Scalar>& generator() const { return generator_; }
    const Discriminator<Scalar>& discriminator() const { return discriminator_; }

    // Full forward pass for a batch of source and target crops.
    ad::Tensor<Scalar> swap(const ad::Tensor<Scalar>& sources, const ad::Tensor<Scalar>& targets) const;

private:
    GeneratorConfig config_;
    std::unique_ptr<IdentityEncoder<Scalar>> identity_;
    AttributeEncoder<Scalar> attributes_;
    AadGenerator<Scalar> generator_;
    Discriminator<Scalar> discriminator_;
};

// Single-image conveniences over a model.
template <typename Scalar>
IdentityVector encode_identity(const IdentityEncoder<Scalar>& encoder, const Image<Scalar>& crop, int crop_size);

template <typename Scalar>
AttributeFeatureStack<Scalar> extract_attributes(const AttributeEncoder<Scalar>& encoder, const Image<Scalar>& crop,
                                                 const GeneratorConfig& config);

template <typename Scalar>
Image<Scalar> generate(const AadGenerator<Scalar>& generator, const IdentityVector& z_id,
                       const AttributeFeatureStack<Scalar>& z_att, const GeneratorConfig& config);

template <typename Scalar>
RealismScores<Scalar> discriminate(const Discriminator<Scalar>& discriminator, const Image<Scalar>& image,
                                   int crop_size);

template <typename Scalar>
ad::Tensor<Scalar> identity_tensor(const IdentityVector& z);

// Checkpoint archive: every parameter tensor under its hierarchical name,
// optional extra named buffers (optimizer state), and the generator config
// plus free-form metadata as embedded JSON.
struct CheckpointData {
    GeneratorConfig config;
    std::map<std::string, std::string> metadata;
    std::map<std::string, std::pair<ad::Shape, std::vector<float>>> tensors;
};

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData read_checkpoint(const std::filesystem::path& path);

template <typename Scalar>
void export_parameters(const nn::ParameterSet<Scalar>& params, CheckpointData& data);
// Loads every parameter of `params` from `data`; throws ConfigMismatch on
// missing names or shape differences.
template <typename Scalar>
void import_parameters(nn::ParameterSet<Scalar>& params, const CheckpointData& data);

} // namespace fswap

#endif // FACESWAP_NETWORK_HPP
