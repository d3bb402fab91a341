#pragma once

// Dataset files.
//
// Binary layout (all integers u64 and all reals f64, little-endian):
//   magic "VFADSET1"
//   M, L, d_in, seed, samples_per_identity
//   noise_easy, noise_hard, frac_hard, frac_personalized
//   M identity records: id, u8 split, u8 attribute, u8 is_hard, u8 is_personalized,
//                       L latent values, L voice_latent values
//   face_count, voice_count
//   sample records:     identity_id, u8 modality, d_in feature values
//
// Text manifest (hand-written fixtures; '#' starts a comment line):
//   header,M,L,d_in[,seed,samples_per_identity,noise_easy,noise_hard,frac_hard,frac_personalized]
//   identity,id,split,attribute,is_hard,is_personalized,<L latent>[,<L voice_latent>]
//   sample,identity_id,face|voice,<d_in features>
// A missing voice_latent means "same as latent".

#include "vfa/binary_io.hpp"
#include "vfa/errors.hpp"
#include "vfa/types.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace vfa {

inline constexpr char kDatasetMagic[9] = "VFADSET1";

inline void write_dataset_binary(std::ostream& os, const SyntheticDataset& ds) {
    using namespace io;
    write_magic(os, kDatasetMagic);
    const std::size_t m = ds.identity_count();
    write_u64(os, m);
    write_u64(os, ds.latent_dim);
    write_u64(os, ds.input_dim);
    write_u64(os, ds.generation.seed);
    write_u64(os, ds.generation.samples_per_identity);
    write_f64(os, ds.generation.noise_easy);
    write_f64(os, ds.generation.noise_hard);
    write_f64(os, ds.generation.frac_hard);
    write_f64(os, ds.generation.frac_personalized);

    std::vector<std::uint8_t> split_of(m, 0);
    for (auto id : ds.validation_ids) split_of.at(id) = 1;
    for (auto id : ds.test_ids) split_of.at(id) = 2;
    for (const auto& ident : ds.identities) {
        write_u64(os, ident.id);
        write_u8(os, split_of.at(ident.id));
        write_u8(os, static_cast<std::uint8_t>(ident.attribute));
        write_u8(os, ident.is_hard ? 1 : 0);
        write_u8(os, ident.is_personalized ? 1 : 0);
        for (double v : ident.latent) write_f64(os, v);
        for (double v : ident.voice_latent) write_f64(os, v);
    }
    write_u64(os, ds.face_samples.size());
    write_u64(os, ds.voice_samples.size());
    for (const auto* list : {&ds.face_samples, &ds.voice_samples}) {
        for (const auto& s : *list) {
            write_u64(os, s.identity_id);
            write_u8(os, static_cast<std::uint8_t>(s.modality));
            for (double v : s.features) write_f64(os, v);
        }
    }
}

namespace detail {

inline void assign_split(SyntheticDataset& ds, std::size_t id, int split) {
    switch (split) {
        case 0: ds.train_ids.push_back(id); break;
        case 1: ds.validation_ids.push_back(id); break;
        case 2: ds.test_ids.push_back(id); break;
        default: throw IoError("bad split code " + std::to_string(split));
    }
}

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) {
        const auto b = field.find_first_not_of(" \t\r");
        const auto e = field.find_last_not_of(" \t\r");
        out.push_back(b == std::string::npos ? std::string{} : field.substr(b, e - b + 1));
    }
    return out;
}

inline double parse_real(const std::string& s, std::size_t line_no) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw IoError("line " + std::to_string(line_no) + ": bad number '" + s + "'");
    }
}

inline std::uint64_t parse_uint(const std::string& s, std::size_t line_no) {
    std::uint64_t v = 0;
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc{} || ptr != end)
        throw IoError("line " + std::to_string(line_no) + ": bad integer '" + s + "'");
    return v;
}

inline int parse_split_field(const std::string& s, std::size_t line_no) {
    if (s == "train" || s == "0") return 0;
    if (s == "validation" || s == "val" || s == "1") return 1;
    if (s == "test" || s == "2") return 2;
    throw IoError("line " + std::to_string(line_no) + ": bad split '" + s + "'");
}

}  // namespace detail

inline SyntheticDataset read_dataset_binary(std::istream& is) {
    using namespace io;
    if (!read_magic(is, kDatasetMagic)) throw IoError("not a binary dataset file");
    SyntheticDataset ds;
    const auto m = read_u64(is);
    ds.latent_dim = read_u64(is);
    ds.input_dim = read_u64(is);
    ds.generation.seed = read_u64(is);
    ds.generation.samples_per_identity = read_u64(is);
    ds.generation.noise_easy = read_f64(is);
    ds.generation.noise_hard = read_f64(is);
    ds.generation.frac_hard = read_f64(is);
    ds.generation.frac_personalized = read_f64(is);
    if (m > (1u << 24) || ds.latent_dim > (1u << 20) || ds.input_dim > (1u << 20))
        throw IoError("implausible dataset header");

    ds.identities.resize(m);
    std::vector<int> split_of(m, 0);
    for (std::size_t i = 0; i < m; ++i) {
        auto& ident = ds.identities[i];
        ident.id = read_u64(is);
        const int split = read_u8(is);
        ident.attribute = read_u8(is);
        ident.is_hard = read_u8(is) != 0;
        ident.is_personalized = read_u8(is) != 0;
        ident.latent.resize(ds.latent_dim);
        ident.voice_latent.resize(ds.latent_dim);
        for (auto& v : ident.latent) v = read_f64(is);
        for (auto& v : ident.voice_latent) v = read_f64(is);
        if (ident.id >= m) throw IoError("identity id out of range");
        split_of[ident.id] = split;
    }
    for (std::size_t id = 0; id < m; ++id) detail::assign_split(ds, id, split_of[id]);

    const auto face_count = read_u64(is);
    const auto voice_count = read_u64(is);
    auto read_samples = [&](std::vector<Sample>& out, std::uint64_t count) {
        out.resize(count);
        for (auto& s : out) {
            s.identity_id = read_u64(is);
            s.modality = static_cast<Modality>(read_u8(is));
            s.features.resize(ds.input_dim);
            for (auto& v : s.features) v = read_f64(is);
        }
    };
    read_samples(ds.face_samples, face_count);
    read_samples(ds.voice_samples, voice_count);
    return ds;
}

inline void write_dataset_text(std::ostream& os, const SyntheticDataset& ds) {
    char buf[40];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    const auto& g = ds.generation;
    os << "header," << ds.identity_count() << ',' << ds.latent_dim << ',' << ds.input_dim << ','
       << g.seed << ',' << g.samples_per_identity << ',' << num(g.noise_easy) << ','
       << num(g.noise_hard) << ',' << num(g.frac_hard) << ',' << num(g.frac_personalized) << '\n';
    std::vector<const char*> split_of(ds.identity_count(), "train");
    for (auto id : ds.validation_ids) split_of.at(id) = "validation";
    for (auto id : ds.test_ids) split_of.at(id) = "test";
    for (const auto& ident : ds.identities) {
        os << "identity," << ident.id << ',' << split_of.at(ident.id) << ',' << ident.attribute
           << ',' << int(ident.is_hard) << ',' << int(ident.is_personalized);
        for (double v : ident.latent) os << ',' << num(v);
        for (double v : ident.voice_latent) os << ',' << num(v);
        os << '\n';
    }
    for (const auto* list : {&ds.face_samples, &ds.voice_samples}) {
        for (const auto& s : *list) {
            os << "sample," << s.identity_id << ',' << to_string(s.modality);
            for (double v : s.features) os << ',' << num(v);
            os << '\n';
        }
    }
}

inline SyntheticDataset read_dataset_text(std::istream& is) {
    using detail::parse_real;
    using detail::parse_uint;
    SyntheticDataset ds;
    bool have_header = false;
    std::vector<std::pair<std::size_t, int>> splits;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        const auto f = detail::split_csv(line);
        const auto& kind = f[0];
        if (kind == "header") {
            if (f.size() != 4 && f.size() != 10)
                throw IoError("line " + std::to_string(line_no) + ": header needs 3 or 9 fields");
            ds.identities.reserve(parse_uint(f[1], line_no));
            ds.latent_dim = parse_uint(f[2], line_no);
            ds.input_dim = parse_uint(f[3], line_no);
            if (f.size() == 10) {
                ds.generation.seed = parse_uint(f[4], line_no);
                ds.generation.samples_per_identity = parse_uint(f[5], line_no);
                ds.generation.noise_easy = parse_real(f[6], line_no);
                ds.generation.noise_hard = parse_real(f[7], line_no);
                ds.generation.frac_hard = parse_real(f[8], line_no);
                ds.generation.frac_personalized = parse_real(f[9], line_no);
            }
            have_header = true;
        } else if (!have_header) {
            throw IoError("line " + std::to_string(line_no) + ": record before header");
        } else if (kind == "identity") {
            const std::size_t l = ds.latent_dim;
            if (f.size() != 6 + l && f.size() != 6 + 2 * l)
                throw IoError("line " + std::to_string(line_no) + ": identity needs " +
                              std::to_string(6 + l) + " or " + std::to_string(6 + 2 * l) +
                              " fields");
            Identity ident;
            ident.id = parse_uint(f[1], line_no);
            splits.emplace_back(ident.id, detail::parse_split_field(f[2], line_no));
            ident.attribute = static_cast<int>(parse_uint(f[3], line_no));
            ident.is_hard = parse_uint(f[4], line_no) != 0;
            ident.is_personalized = parse_uint(f[5], line_no) != 0;
            for (std::size_t c = 0; c < l; ++c) ident.latent.push_back(parse_real(f[6 + c], line_no));
            if (f.size() == 6 + 2 * l) {
                for (std::size_t c = 0; c < l; ++c)
                    ident.voice_latent.push_back(parse_real(f[6 + l + c], line_no));
            } else {
                ident.voice_latent = ident.latent;
            }
            ds.identities.push_back(std::move(ident));
        } else if (kind == "sample") {
            if (f.size() != 3 + ds.input_dim)
                throw IoError("line " + std::to_string(line_no) + ": sample needs " +
                              std::to_string(3 + ds.input_dim) + " fields");
            Sample s;
            s.identity_id = parse_uint(f[1], line_no);
            if (f[2] == "face") {
                s.modality = Modality::Face;
            } else if (f[2] == "voice") {
                s.modality = Modality::Voice;
            } else {
                throw IoError("line " + std::to_string(line_no) + ": bad modality '" + f[2] + "'");
            }
            for (std::size_t c = 0; c < ds.input_dim; ++c)
                s.features.push_back(parse_real(f[3 + c], line_no));
            (s.modality == Modality::Face ? ds.face_samples : ds.voice_samples).push_back(std::move(s));
        } else {
            throw IoError("line " + std::to_string(line_no) + ": unknown record '" + kind + "'");
        }
    }
    if (!have_header) throw IoError("missing header record");
    std::sort(ds.identities.begin(), ds.identities.end(),
              [](const Identity& a, const Identity& b) { return a.id < b.id; });
    std::sort(splits.begin(), splits.end());
    for (auto [id, split] : splits) detail::assign_split(ds, id, split);
    return ds;
}

inline SyntheticDataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open dataset '" + path + "'");
    char magic[8] = {};
    is.read(magic, 8);
    const bool binary = is.gcount() == 8 && std::memcmp(magic, kDatasetMagic, 8) == 0;
    is.clear();
    is.seekg(0);
    try {
        return binary ? read_dataset_binary(is) : read_dataset_text(is);
    } catch (const IoError& e) {
        throw IoError(path + ": " + e.what());
    }
}

inline void save_dataset(const std::string& path, const SyntheticDataset& ds, bool text = false) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write dataset '" + path + "'");
    if (text) {
        write_dataset_text(os, ds);
    } else {
        write_dataset_binary(os, ds);
    }
    if (!os) throw IoError("write failed for '" + path + "'");
}

}  // namespace vfa
