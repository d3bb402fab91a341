#pragma once

#include "vfa/synthdata.hpp"
#include "vfa/types.hpp"

#include <filesystem>
#include <string>

namespace fixtures {

/// Four identities, one face and one voice sample each, two per attribute.
/// Identities 0, 1 train; 2 validation; 3 test.
inline vfa::SyntheticDataset tiny() {
    vfa::SyntheticDataset ds;
    ds.latent_dim = 2;
    ds.input_dim = 3;
    for (std::size_t id = 0; id < 4; ++id) {
        vfa::Identity ident;
        ident.id = id;
        ident.latent = {static_cast<double>(id), 1.0};
        ident.voice_latent = ident.latent;
        ident.attribute = static_cast<int>(id % 2);
        ds.identities.push_back(ident);
        const double f = static_cast<double>(id) + 1.0;
        ds.face_samples.push_back({id, vfa::Modality::Face, {f, 0.5 * f, -f}});
        ds.voice_samples.push_back({id, vfa::Modality::Voice, {-f, f, 0.25 * f}});
    }
    ds.train_ids = {0, 1};
    ds.validation_ids = {2};
    ds.test_ids = {3};
    return ds;
}

/// Small generated dataset for fast end-to-end tests.
inline vfa::SynthConfig small_config(std::uint64_t seed = 3) {
    vfa::SynthConfig c;
    c.M = 60;
    c.L = 8;
    c.d_in = 16;
    c.samples_per_identity = 5;
    c.seed = seed;
    return c;
}

/// Fresh scratch directory under the system temp path.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("vfa_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace fixtures
