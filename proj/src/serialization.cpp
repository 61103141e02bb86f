#include "faceswap/serialization.hpp"

#include "faceswap/blending.hpp"
#include "faceswap/losses.hpp"
#include "faceswap/network.hpp"

namespace fswap {

namespace detail {

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const char* what) {
    if (!j.is_object()) throw InvalidArgument(std::string(what) + " must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        bool known = false;
        for (const char* a : allowed) known = known || key == a;
        if (!known) throw InvalidArgument(std::string("unknown key '") + key + "' in " + what);
    }
}

} // namespace detail

using detail::read_optional;

void to_json(nlohmann::json& j, const GeneratorConfig& c) {
    j = {{"crop_size", c.crop_size},
         {"identity_dim", c.identity_dim},
         {"n_levels", c.n_levels},
         {"base_channels", c.base_channels},
         {"aad_blocks_per_level", c.aad_blocks_per_level},
         {"encoder_variant", to_string(c.encoder_variant)},
         {"identity_encoder", to_string(c.identity_encoder)},
         {"discriminator_channels", c.discriminator_channels},
         {"discriminator_scales", c.discriminator_scales}};
}

void from_json(const nlohmann::json& j, GeneratorConfig& c) {
    detail::check_keys(j,
                       {"crop_size", "identity_dim", "n_levels", "base_channels", "aad_blocks_per_level",
                        "encoder_variant", "identity_encoder", "discriminator_channels", "discriminator_scales"},
                       "generator config");
    read_optional(j, "crop_size", c.crop_size);
    read_optional(j, "identity_dim", c.identity_dim);
    read_optional(j, "n_levels", c.n_levels);
    read_optional(j, "base_channels", c.base_channels);
    read_optional(j, "aad_blocks_per_level", c.aad_blocks_per_level);
    if (j.contains("encoder_variant")) c.encoder_variant = parse_encoder_variant(j.at("encoder_variant").get<std::string>());
    if (j.contains("identity_encoder"))
        c.identity_encoder = parse_identity_encoder(j.at("identity_encoder").get<std::string>());
    read_optional(j, "discriminator_channels", c.discriminator_channels);
    read_optional(j, "discriminator_scales", c.discriminator_scales);
}

void to_json(nlohmann::json& j, const LossWeights& w) {
    j = {{"w_id", w.w_id}, {"w_adv", w.w_adv}, {"w_rec", w.w_rec}, {"w_att", w.w_att}, {"w_eye", w.w_eye}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
    detail::check_keys(j, {"w_id", "w_adv", "w_rec", "w_att", "w_eye"}, "loss weights");
    read_optional(j, "w_id", w.w_id);
    read_optional(j, "w_adv", w.w_adv);
    read_optional(j, "w_rec", w.w_rec);
    read_optional(j, "w_att", w.w_att);
    read_optional(j, "w_eye", w.w_eye);
}

void to_json(nlohmann::json& j, const EyeLossSettings& s) {
    j = {{"margin", s.margin}, {"patch_size", s.patch_size}, {"extractor", s.extractor}};
}

void from_json(const nlohmann::json& j, EyeLossSettings& s) {
    detail::check_keys(j, {"margin", "patch_size", "extractor"}, "eye loss settings");
    read_optional(j, "margin", s.margin);
    read_optional(j, "patch_size", s.patch_size);
    read_optional(j, "extractor", s.extractor);
    if (s.extractor != "pixels") throw InvalidArgument("unknown eye feature extractor '" + s.extractor + "'");
    if (s.patch_size < 1) throw InvalidArgument("eye patch_size must be >= 1");
}

void to_json(nlohmann::json& j, const BlendConfig& c) {
    j = {{"sigma", c.sigma},
         {"enlarge_threshold", c.enlarge_threshold},
         {"shrink_threshold", c.shrink_threshold},
         {"max_scale_px", c.max_scale_px},
         {"shrink_sigma_gain", c.shrink_sigma_gain}};
    if (c.kernel_radius) j["kernel_radius"] = *c.kernel_radius;
}

void from_json(const nlohmann::json& j, BlendConfig& c) {
    detail::check_keys(j,
                       {"sigma", "kernel_radius", "enlarge_threshold", "shrink_threshold", "max_scale_px",
                        "shrink_sigma_gain"},
                       "blend config");
    read_optional(j, "sigma", c.sigma);
    if (j.contains("kernel_radius")) c.kernel_radius = j.at("kernel_radius").get<int>();
    read_optional(j, "enlarge_threshold", c.enlarge_threshold);
    read_optional(j, "shrink_threshold", c.shrink_threshold);
    read_optional(j, "max_scale_px", c.max_scale_px);
    read_optional(j, "shrink_sigma_gain", c.shrink_sigma_gain);
    c.validate();
}

} // namespace fswap
