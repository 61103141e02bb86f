#ifndef FACESWAP_SERIALIZATION_HPP
#define FACESWAP_SERIALIZATION_HPP

// JSON mapping for the configuration structs. Missing keys keep their
// defaults; unknown keys are rejected so typos in config files surface.

#include "json.hpp"

#include <initializer_list>

namespace fswap {

struct GeneratorConfig;
struct LossWeights;
struct EyeLossSettings;
struct BlendConfig;

void to_json(nlohmann::json& j, const GeneratorConfig& c);
void from_json(const nlohmann::json& j, GeneratorConfig& c);
void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);
void to_json(nlohmann::json& j, const EyeLossSettings& s);
void from_json(const nlohmann::json& j, EyeLossSettings& s);
void to_json(nlohmann::json& j, const BlendConfig& c);
void from_json(const nlohmann::json& j, BlendConfig& c);

namespace detail {

// Throws InvalidArgument naming the first key of `j` not in `allowed`.
void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const char* what);

template <typename T>
void read_optional(const nlohmann::json& j, const char* key, T& field) {
    if (auto it = j.find(key); it != j.end()) field = it->template get<T>();
}

} // namespace detail

} // namespace fswap

#endif // FACESWAP_SERIALIZATION_HPP
