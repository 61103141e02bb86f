#include "faceswap/network.hpp"

#include "faceswap/error.hpp"
#include "faceswap/serialization.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace fswap {

using ad::Shape;
using ad::Tensor;

namespace {
constexpr float kLeakySlope = 0.2f;
constexpr double kNormEps = 1e-5;
} // namespace

std::string to_string(EncoderVariant v) {
    switch (v) {
    case EncoderVariant::unet: return "unet";
    case EncoderVariant::linknet: return "linknet";
    case EncoderVariant::resnet: return "resnet";
    }
    return "unet";
}

std::string to_string(IdentityEncoderKind k) {
    return k == IdentityEncoderKind::conv ? "conv" : "toy";
}

EncoderVariant parse_encoder_variant(const std::string& s) {
    if (s == "unet") return EncoderVariant::unet;
    if (s == "linknet") return EncoderVariant::linknet;
    if (s == "resnet") return EncoderVariant::resnet;
    throw InvalidArgument("unknown encoder_variant '" + s + "'");
}

IdentityEncoderKind parse_identity_encoder(const std::string& s) {
    if (s == "conv") return IdentityEncoderKind::conv;
    if (s == "toy") return IdentityEncoderKind::toy;
    throw InvalidArgument("unknown identity encoder '" + s + "'");
}

void GeneratorConfig::validate() const {
    if (crop_size < 8 || (crop_size & (crop_size - 1)) != 0)
        throw ConfigMismatch("crop_size must be a power of two >= 8, got " + std::to_string(crop_size));
    const int log2s = int(std::lround(std::log2(double(crop_size))));
    if (n_levels < 1 || n_levels > log2s - 1)
        throw ConfigMismatch("n_levels must lie in [1, log2(S)-1], got " + std::to_string(n_levels));
    if (aad_blocks_per_level < 1) throw ConfigMismatch("aad_blocks_per_level must be >= 1");
    if (identity_dim < 1 || base_channels < 1 || discriminator_channels < 1)
        throw ConfigMismatch("dimensions must be positive");
    if (discriminator_scales < 1) throw ConfigMismatch("discriminator needs at least one scale");
}

int GeneratorConfig::encoder_channels(int depth) const {
    return std::min(base_channels << (depth - 1), base_channels * 8);
}

int GeneratorConfig::attribute_channels(int level) const {
    const int depth = n_levels - level;
    if (level == 0) return encoder_channels(depth);
    return encoder_variant == EncoderVariant::unet ? 2 * encoder_channels(depth) : encoder_channels(depth);
}

void IdentityVector::check_normalized(double tol) const {
    if (!values.allFinite()) throw NonNormalizedInput("identity vector is not finite");
    const double norm = values.norm();
    if (std::abs(norm - 1.0) > tol) throw NonNormalizedInput("identity vector norm " + std::to_string(norm));
}

IdentityVector IdentityVector::normalized(Eigen::VectorXd v) {
    const double norm = v.norm();
    if (!(norm > 0.0)) throw NonNormalizedInput("cannot normalize a zero vector");
    return IdentityVector{v / norm};
}

template <typename Scalar>
void AttributeFeatureStack<Scalar>::check(const GeneratorConfig& config) const {
    if (size() != config.n_levels)
        throw ConfigMismatch("attribute stack has " + std::to_string(size()) + " levels, config expects " +
                             std::to_string(config.n_levels));
    for (int i = 0; i < size(); ++i) {
        const Shape s = levels[std::size_t(i)].shape();
        if (s.h != config.level_size(i) || s.w != config.level_size(i) || s.c != config.attribute_channels(i))
            throw ConfigMismatch("attribute level " + std::to_string(i) + " has shape " + s.str());
    }
}

namespace {

template <typename Scalar>
void check_crops(const Tensor<Scalar>& crops, int crop_size) {
    const Shape s = crops.shape();
    if (s.c != 3 || s.h != crop_size || s.w != crop_size)
        throw ShapeMismatch("expected N×3×" + std::to_string(crop_size) + "×" + std::to_string(crop_size) +
                            " crops, got " + s.str());
}

template <typename Scalar>
Tensor<Scalar> lrelu(const Tensor<Scalar>& x) {
    return ad::leaky_relu(x, Scalar(kLeakySlope));
}

} // namespace

template <typename Scalar>
ConvIdentityEncoder<Scalar>::ConvIdentityEncoder(nn::ParameterSet<Scalar>& params, const GeneratorConfig& config,
                                                 std::mt19937_64& rng)
    : dim_(config.identity_dim) {
    int in = 3;
    for (int i = 0; i < 3; ++i) {
        const int out = config.base_channels << i;
        convs_.emplace_back(params, "id.conv" + std::to_string(i), in, out, 3, 2, rng);
        in = out;
    }
    head_ = nn::Linear<Scalar>(params, "id.head", in, dim_, rng);
}

template <typename Scalar>
Tensor<Scalar> ConvIdentityEncoder<Scalar>::operator()(const Tensor<Scalar>& crops) const {
    Tensor<Scalar> h = crops;
    for (const auto& conv : convs_) h = lrelu(conv(h));
    h = ad::avg_pool(h, h.shape().h);
    return ad::l2_normalize(head_(h), Scalar(1e-12));
}

template <typename Scalar>
ToyIdentityEmbedder<Scalar>::ToyIdentityEmbedder(int crop_size, int dim, std::uint64_t seed)
    : pool_factor_(crop_size / kPooledSize) {
    if (crop_size < kPooledSize || crop_size % kPooledSize != 0)
        throw ConfigMismatch("toy embedder needs a crop size divisible by 8");
    const int features = 3 * kPooledSize * kPooledSize;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    projection_.resize(dim, features);
    for (int r = 0; r < dim; ++r)
        for (int c = 0; c < features; ++c) projection_(r, c) = normal(rng);
    ad::Buffer<Scalar> w(Eigen::Index(dim) * features);
    for (int r = 0; r < dim; ++r)
        for (int c = 0; c < features; ++c) w(Eigen::Index(r) * features + c) = Scalar(projection_(r, c));
    weight_ = Tensor<Scalar>::from(Shape{dim, features, 1, 1}, w);
    bias_ = Tensor<Scalar>::zeros(Shape{dim, 1, 1, 1});
}

template <typename Scalar>
Tensor<Scalar> ToyIdentityEmbedder<Scalar>::operator()(const Tensor<Scalar>& crops) const {
    const Tensor<Scalar> pooled = ad::avg_pool(crops, pool_factor_);
    const Shape s = pooled.shape();
    const auto flat = ad::reshape(pooled, Shape{s.n, int(s.sample()), 1, 1});
    return ad::l2_normalize(ad::conv2d(flat, weight_, bias_, 1, 0), Scalar(1e-12));
}

template <typename Scalar>
AttributeEncoder<Scalar>::AttributeEncoder(nn::ParameterSet<Scalar>& params, const GeneratorConfig& config,
                                           std::mt19937_64& rng)
    : config_(config) {
    if (config.encoder_variant == EncoderVariant::resnet)
        throw NotImplemented("resnet attribute encoder is not available; use unet or linknet");
    int in = 3;
    for (int depth = 1; depth <= config.n_levels; ++depth) {
        const int out = config.encoder_channels(depth);
        down_.emplace_back(params, "att.down" + std::to_string(depth), in, out, 3, 2, rng);
        in = out;
    }
    for (int level = 1; level < config.n_levels; ++level) {
        const int depth = config.n_levels - level;
        up_.emplace_back(params, "att.up" + std::to_string(level), config.attribute_channels(level - 1),
                         config.encoder_channels(depth), 3, 1, rng);
    }
}

template <typename Scalar>
AttributeFeatureStack<Scalar> AttributeEncoder<Scalar>::operator()(const Tensor<Scalar>& crops) const {
    check_crops(crops, config_.crop_size);
    std::vector<Tensor<Scalar>> skips;
    Tensor<Scalar> h = crops;
    for (const auto& conv : down_) {
        h = lrelu(conv(h));
        skips.push_back(h);
    }
    AttributeFeatureStack<Scalar> stack;
    stack.levels.push_back(h);
    for (int level = 1; level < config_.n_levels; ++level) {
        const int depth = config_.n_levels - level;
        Tensor<Scalar> up = lrelu(up_[std::size_t(level - 1)](ad::upsample_nearest2x(stack.levels.back())));
        const Tensor<Scalar>& skip = skips[std::size_t(depth - 1)];
        stack.levels.push_back(config_.encoder_variant == EncoderVariant::unet ? ad::concat_channels(up, skip)
                                                                               : up + skip);
    }
    return stack;
}

template <typename Scalar>
AadLayer<Scalar>::AadLayer(nn::ParameterSet<Scalar>& params, const std::string& name, int hidden_channels,
                           int attribute_channels, int identity_dim, std::mt19937_64& rng)
    : gamma_att(params, name + ".gamma_att", attribute_channels, hidden_channels, 3, 1, rng),
      beta_att(params, name + ".beta_att", attribute_channels, hidden_channels, 3, 1, rng),
      gamma_id(params, name + ".gamma_id", identity_dim, hidden_channels, rng),
      beta_id(params, name + ".beta_id", identity_dim, hidden_channels, rng),
      mask(params, name + ".mask", hidden_channels, 1, 3, 1, rng) {}

template <typename Scalar>
AadParts<Scalar> AadLayer<Scalar>::parts(const Tensor<Scalar>& hidden, const Tensor<Scalar>& z_att,
                                         const Tensor<Scalar>& z_id) const {
    const Shape sh = hidden.shape();
    const Shape sa = z_att.shape();
    if (sh.n != sa.n || sh.h != sa.h || sh.w != sa.w)
        throw ShapeMismatch("AAD hidden " + sh.str() + " vs attributes " + sa.str());
    if (z_id.shape().n != sh.n) throw ShapeMismatch("AAD identity batch " + z_id.shape().str());
    AadParts<Scalar> p;
    const Tensor<Scalar> normalized = ad::instance_norm(hidden, Scalar(kNormEps));
    p.attribute = gamma_att(z_att) * normalized + beta_att(z_att);
    p.identity = gamma_id(z_id) * normalized + beta_id(z_id);
    p.mask = ad::sigmoid(mask(normalized));
    p.output = p.mask * p.identity + (Scalar(1) + (-p.mask)) * p.attribute;
    return p;
}

template <typename Scalar>
AadGenerator<Scalar>::AadGenerator(nn::ParameterSet<Scalar>& params, const GeneratorConfig& config,
                                   std::mt19937_64& rng)
    : config_(config) {
    const int s0 = config.level_size(0);
    stem_ = nn::Linear<Scalar>(params, "gen.stem", config.identity_dim, config.hidden_channels(0) * s0 * s0, rng);
    for (int level = 0; level < config.n_levels; ++level) {
        const std::string prefix = "gen.level" + std::to_string(level);
        const int hidden = config.hidden_channels(level);
        if (level > 0)
            transition_.emplace_back(params, prefix + ".transition", config.hidden_channels(level - 1), hidden, 3, 1, rng);
        std::vector<AadLayer<Scalar>> layers;
        std::vector<nn::Conv2d<Scalar>> convs;
        for (int b = 0; b < config.aad_blocks_per_level; ++b) {
            const std::string block = prefix + ".aad" + std::to_string(b);
            layers.emplace_back(params, block, hidden, config.attribute_channels(level), config.identity_dim, rng);
            convs.emplace_back(params, block + ".conv", hidden, hidden, 3, 1, rng);
        }
        aad_.push_back(std::move(layers));
        convs_.push_back(std::move(convs));
    }
    to_rgb_ = nn::Conv2d<Scalar>(params, "gen.to_rgb", config.hidden_channels(config.n_levels - 1), 3, 3, 1, rng);
}

template <typename Scalar>
Tensor<Scalar> AadGenerator<Scalar>::operator()(const Tensor<Scalar>& z_id,
                                                const AttributeFeatureStack<Scalar>& z_att) const {
    z_att.check(config_);
    const Shape sz = z_id.shape();
    if (sz.c != config_.identity_dim || sz.h != 1 || sz.w != 1)
        throw ConfigMismatch("identity input " + sz.str() + " does not match identity_dim " +
                             std::to_string(config_.identity_dim));
    const int s0 = config_.level_size(0);
    Tensor<Scalar> h = ad::reshape(stem_(z_id), Shape{sz.n, config_.hidden_channels(0), s0, s0});
    for (int level = 0; level < config_.n_levels; ++level) {
        if (level > 0) h = lrelu(transition_[std::size_t(level - 1)](ad::upsample_nearest2x(h)));
        const Tensor<Scalar>& att = z_att.levels[std::size_t(level)];
        Tensor<Scalar> x = h;
        for (std::size_t b = 0; b < aad_[std::size_t(level)].size(); ++b)
            x = convs_[std::size_t(level)][b](ad::relu(aad_[std::size_t(level)][b](x, att, z_id)));
        h = h + x;
    }
    return ad::tanh(to_rgb_(ad::upsample_nearest2x(h)));
}

template <typename Scalar>
Discriminator<Scalar>::Discriminator(nn::ParameterSet<Scalar>& params, const GeneratorConfig& config,
                                     std::mt19937_64& rng)
    : crop_size_(config.crop_size) {
    for (int s = 0; s < config.discriminator_scales; ++s) {
        const std::string prefix = "disc.scale" + std::to_string(s);
        std::vector<nn::Conv2d<Scalar>> layers;
        int in = 3;
        for (int l = 0; l < 3; ++l) {
            const int out = config.discriminator_channels << l;
            layers.emplace_back(params, prefix + ".conv" + std::to_string(l), in, out, 3, 2, rng);
            in = out;
        }
        layers.emplace_back(params, prefix + ".score", in, 1, 3, 1, rng);
        scales_.push_back(std::move(layers));
    }
}

template <typename Scalar>
RealismScores<Scalar> Discriminator<Scalar>::operator()(const Tensor<Scalar>& images) const {
    check_crops(images, crop_size_);
    RealismScores<Scalar> out;
    for (std::size_t s = 0; s < scales_.size(); ++s) {
        Tensor<Scalar> h = s == 0 ? images : ad::avg_pool(images, 1 << s);
        const auto& layers = scales_[s];
        for (std::size_t l = 0; l + 1 < layers.size(); ++l) h = lrelu(layers[l](h));
        out.maps.push_back(layers.back()(h));
    }
    return out;
}

template <typename Scalar>
FaceSwapModel<Scalar>::FaceSwapModel(const GeneratorConfig& config, std::uint64_t seed) : config_(config) {
    config.validate();
    // Independent streams per partition so that e.g. changing the
    // discriminator width leaves generator initialization untouched.
    std::mt19937_64 id_rng(seed ^ 0x1d1d1d1dull);
    std::mt19937_64 gen_rng(seed ^ 0x9e3779b97f4a7c15ull);
    std::mt19937_64 disc_rng(seed ^ 0xd15cd15cull);
    if (config.identity_encoder == IdentityEncoderKind::conv)
        identity_ = std::make_unique<ConvIdentityEncoder<Scalar>>(identity_params, config, id_rng);
    else
        identity_ = std::make_unique<ToyIdentityEmbedder<Scalar>>(config.crop_size, config.identity_dim, seed ^ 0x70e7ull);
    attributes_ = AttributeEncoder<Scalar>(generator_params, config, gen_rng);
    generator_ = AadGenerator<Scalar>(generator_params, config, gen_rng);
    discriminator_ = Discriminator<Scalar>(discriminator_params, config, disc_rng);
}

template <typename Scalar>
Tensor<Scalar> FaceSwapModel<Scalar>::swap(const Tensor<Scalar>& sources, const Tensor<Scalar>& targets) const {
    const Tensor<Scalar> z_id = identity_->operator()(sources);
    return generator_(z_id, attributes_(targets));
}

template <typename Scalar>
Tensor<Scalar> identity_tensor(const IdentityVector& z) {
    return Tensor<Scalar>::from(Shape{1, z.dim(), 1, 1}, z.values.template cast<Scalar>().array());
}

template <typename Scalar>
IdentityVector encode_identity(const IdentityEncoder<Scalar>& encoder, const Image<Scalar>& crop, int crop_size) {
    if (crop.rows() != crop_size || crop.cols() != crop_size || crop.channels() != 3)
        throw ShapeMismatch("identity crop must be " + std::to_string(crop_size) + "×" + std::to_string(crop_size) + "×3");
    const Tensor<Scalar> z = encoder(to_tensor(std::vector<Image<Scalar>>{crop}));
    Eigen::VectorXd v = z.value().template cast<double>().matrix();
    // Re-normalize in double so the contract holds at 1e-6 for float models.
    return IdentityVector::normalized(std::move(v));
}

template <typename Scalar>
AttributeFeatureStack<Scalar> extract_attributes(const AttributeEncoder<Scalar>& encoder, const Image<Scalar>& crop,
                                                 const GeneratorConfig& config) {
    if (crop.rows() != config.crop_size || crop.cols() != config.crop_size)
        throw ShapeMismatch("target crop must be " + std::to_string(config.crop_size) + " square");
    return encoder(to_tensor(std::vector<Image<Scalar>>{crop}));
}

template <typename Scalar>
Image<Scalar> generate(const AadGenerator<Scalar>& generator, const IdentityVector& z_id,
                       const AttributeFeatureStack<Scalar>& z_att, const GeneratorConfig& config) {
    if (z_id.dim() != config.identity_dim) throw ConfigMismatch("identity dimension mismatch");
    return to_image(generator(identity_tensor<Scalar>(z_id), z_att));
}

template <typename Scalar>
RealismScores<Scalar> discriminate(const Discriminator<Scalar>& discriminator, const Image<Scalar>& image,
                                   int crop_size) {
    if (image.rows() != crop_size || image.cols() != crop_size)
        throw ShapeMismatch("discriminator input must be " + std::to_string(crop_size) + " square");
    return discriminator(to_tensor(std::vector<Image<Scalar>>{image}));
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'F', 'S', 'W', 'P', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw IoFailure("truncated checkpoint");
    return v;
}

} // namespace

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
    nlohmann::json meta;
    meta["generator"] = data.config;
    meta["metadata"] = data.metadata;
    const std::string header = meta.dump();

    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoFailure("cannot write " + tmp.string());
        out.write(kMagic, sizeof(kMagic));
        put(out, kVersion);
        put(out, std::uint32_t(header.size()));
        out.write(header.data(), std::streamsize(header.size()));
        put(out, std::uint32_t(data.tensors.size()));
        for (const auto& [name, entry] : data.tensors) {
            const auto& [shape, values] = entry;
            put(out, std::uint32_t(name.size()));
            out.write(name.data(), std::streamsize(name.size()));
            for (int d : {shape.n, shape.c, shape.h, shape.w}) put(out, std::int32_t(d));
            out.write(reinterpret_cast<const char*>(values.data()), std::streamsize(values.size() * sizeof(float)));
        }
        if (!out) throw IoFailure("failed writing " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoFailure("cannot move checkpoint into place: " + ec.message());
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot open checkpoint " + path.string());
    char magic[sizeof(kMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw IoFailure(path.string() + " is not a checkpoint");
    if (get<std::uint32_t>(in) != kVersion) throw IoFailure("unsupported checkpoint version");
    const auto header_len = get<std::uint32_t>(in);
    std::string header(header_len, '\0');
    in.read(header.data(), header_len);
    CheckpointData data;
    try {
        const auto meta = nlohmann::json::parse(header);
        data.config = meta.at("generator").get<GeneratorConfig>();
        data.metadata = meta.at("metadata").get<std::map<std::string, std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw IoFailure(std::string("corrupt checkpoint header: ") + e.what());
    }
    const auto count = get<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = get<std::uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        Shape shape;
        shape.n = get<std::int32_t>(in);
        shape.c = get<std::int32_t>(in);
        shape.h = get<std::int32_t>(in);
        shape.w = get<std::int32_t>(in);
        std::vector<float> values(std::size_t(shape.size()));
        in.read(reinterpret_cast<char*>(values.data()), std::streamsize(values.size() * sizeof(float)));
        if (!in) throw IoFailure("truncated checkpoint tensor " + name);
        data.tensors.emplace(std::move(name), std::make_pair(shape, std::move(values)));
    }
    return data;
}

template <typename Scalar>
void export_parameters(const nn::ParameterSet<Scalar>& params, CheckpointData& data) {
    for (const auto& [name, t] : params.items()) {
        std::vector<float> values(std::size_t(t.value().size()));
        for (std::size_t i = 0; i < values.size(); ++i) values[i] = float(t.value()(Eigen::Index(i)));
        data.tensors[name] = {t.shape(), std::move(values)};
    }
}

template <typename Scalar>
void import_parameters(nn::ParameterSet<Scalar>& params, const CheckpointData& data) {
    for (auto& [name, t] : params.items()) {
        auto it = data.tensors.find(name);
        if (it == data.tensors.end()) throw ConfigMismatch("checkpoint lacks parameter " + name);
        const auto& [shape, values] = it->second;
        if (!(shape == t.shape())) throw ConfigMismatch("parameter " + name + " has shape " + shape.str());
        for (std::size_t i = 0; i < values.size(); ++i) t.mutable_value()(Eigen::Index(i)) = Scalar(values[i]);
    }
}

#define FSWAP_INSTANTIATE(S)                                                                                       \
    template struct AttributeFeatureStack<S>;                                                                      \
    template class ConvIdentityEncoder<S>;                                                                         \
    template class ToyIdentityEmbedder<S>;                                                                         \
    template class AttributeEncoder<S>;                                                                            \
    template class AadLayer<S>;                                                                                    \
    template class AadGenerator<S>;                                                                                \
    template class Discriminator<S>;                                                                               \
    template class FaceSwapModel<S>;                                                                               \
    template Tensor<S> identity_tensor<S>(const IdentityVector&);                                                  \
    template IdentityVector encode_identity(const IdentityEncoder<S>&, const Image<S>&, int);                      \
    template AttributeFeatureStack<S> extract_attributes(const AttributeEncoder<S>&, const Image<S>&,              \
                                                         const GeneratorConfig&);                                  \
    template Image<S> generate(const AadGenerator<S>&, const IdentityVector&, const AttributeFeatureStack<S>&,     \
                               const GeneratorConfig&);                                                            \
    template RealismScores<S> discriminate(const Discriminator<S>&, const Image<S>&, int);                         \
    template void export_parameters(const nn::ParameterSet<S>&, CheckpointData&);                                  \
    template void import_parameters(nn::ParameterSet<S>&, const CheckpointData&);

FSWAP_INSTANTIATE(float)
FSWAP_INSTANTIATE(double)

#undef FSWAP_INSTANTIATE

} // namespace fswap
