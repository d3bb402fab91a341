#pragma once

// Checkpoint layout (u64 and f64 little-endian):
//   magic "VFACKPT1"
//   d_in, H, D, M, iteration, seed
//   parameter blocks, each row-major, in this order:
//     face.w1 (H x d_in), face.b1 (H), face.w2 (D x H), face.b2 (D),
//     voice.w1, voice.b1, voice.w2, voice.b2, classifier (D x M)

#include "vfa/binary_io.hpp"
#include "vfa/encoders.hpp"
#include "vfa/errors.hpp"

#include <fstream>
#include <string>

namespace vfa {

inline constexpr char kCheckpointMagic[9] = "VFACKPT1";

struct Checkpoint {
    EncoderParams params;
    std::uint64_t iteration = 0;
    std::uint64_t seed = 0;
};

inline void write_checkpoint(std::ostream& os, const EncoderParams& params, std::uint64_t iteration,
                             std::uint64_t seed) {
    using namespace io;
    const auto d = params.dims();
    write_magic(os, kCheckpointMagic);
    write_u64(os, d.input);
    write_u64(os, d.hidden);
    write_u64(os, d.embed);
    write_u64(os, d.classes);
    write_u64(os, iteration);
    write_u64(os, seed);
    auto& p = const_cast<EncoderParams&>(params);
    for (const auto& block : blocks_of(p))
        for (std::size_t i = 0; i < block.size; ++i) write_f64(os, block.data[i]);
}

inline Checkpoint read_checkpoint(std::istream& is) {
    using namespace io;
    if (!read_magic(is, kCheckpointMagic)) throw IoError("not a checkpoint file");
    EncoderDims d;
    d.input = read_u64(is);
    d.hidden = read_u64(is);
    d.embed = read_u64(is);
    d.classes = read_u64(is);
    Checkpoint ck;
    ck.iteration = read_u64(is);
    ck.seed = read_u64(is);
    if (d.input == 0 || d.hidden == 0 || d.embed == 0 || d.classes == 0 || d.input > (1u << 20) ||
        d.hidden > (1u << 20) || d.embed > (1u << 20) || d.classes > (1u << 24))
        throw IoError("implausible checkpoint dimensions");
    Rng unused(0);
    ck.params = init_params(d, unused);
    for (const auto& block : blocks_of(ck.params))
        for (std::size_t i = 0; i < block.size; ++i) block.data[i] = read_f64(is);
    return ck;
}

inline void save_checkpoint(const std::string& path, const EncoderParams& params, std::uint64_t iteration,
                            std::uint64_t seed) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint '" + path + "'");
    write_checkpoint(os, params, iteration, seed);
    if (!os) throw IoError("write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint '" + path + "'");
    try {
        return read_checkpoint(is);
    } catch (const IoError& e) {
        throw IoError(path + ": " + e.what());
    }
}

}  // namespace vfa
