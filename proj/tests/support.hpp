#ifndef FACESWAP_TESTS_SUPPORT_HPP
#define FACESWAP_TESTS_SUPPORT_HPP

#include "faceswap/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>

namespace testing {

// Aligned crops of rendered synthetic persons, without touching the disk.
inline fswap::Dataset synthetic_dataset(int persons, int frames, int crop_size = 64, std::uint64_t seed = 0,
                                       int image_size = 64) {
    fswap::Dataset d;
    for (const auto& spec : fswap::default_synthetic_specs(persons, frames, image_size, seed))
        for (int f = 1; f <= frames; ++f) {
            const auto frame = fswap::render_synthetic(spec, f);
            d.persons[spec.person_id].push_back(fswap::align_face(frame.image, frame.landmarks, crop_size, f));
        }
    return d;
}

// Smallest generator the gradient checks can afford.
inline fswap::GeneratorConfig tiny_config(int crop_size = 8, int levels = 1) {
    fswap::GeneratorConfig c;
    c.crop_size = crop_size;
    c.n_levels = levels;
    c.identity_dim = 4;
    c.base_channels = 2;
    c.aad_blocks_per_level = 1;
    c.discriminator_channels = 2;
    return c;
}

// Fresh per-process scratch directory.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() /
                     ("fswap_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

} // namespace testing

#endif // FACESWAP_TESTS_SUPPORT_HPP
