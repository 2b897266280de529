#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "loasp/optim.hpp"
#include "loasp/tensor.hpp"

namespace loasp {

// -------------------- checkpoint container --------------------
//
// Layout: magic "LOASP1\n", then one record per tensor:
//   name length (u32 LE), name bytes (UTF-8),
//   rank (u32 LE), extents (u32 LE each),
//   payload (f64 LE, row-major).
// Doubles round-trip bit-exactly; the writer assumes a little-endian host,
// which matches every platform this project targets.

inline const char kCheckpointMagic[] = "LOASP1\n";

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline bool read_u32(std::istream& is, std::uint32_t& v) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
    v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
        (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    return true;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ParamList& tensors) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("checkpoint: cannot open '" + path + "' for writing");
    os.write(kCheckpointMagic, 7);
    for (const auto& nt : tensors) {
        if (nt.name.empty()) throw ContractError("checkpoint: tensor names must be non-empty");
        detail::write_u32(os, static_cast<std::uint32_t>(nt.name.size()));
        os.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
        const auto& shape = nt.tensor.shape();
        detail::write_u32(os, static_cast<std::uint32_t>(shape.size()));
        for (long e : shape) detail::write_u32(os, static_cast<std::uint32_t>(e));
        os.write(reinterpret_cast<const char*>(nt.tensor.data()),
                 static_cast<std::streamsize>(nt.tensor.size() * static_cast<long>(sizeof(double))));
    }
    if (!os) throw ConfigError("checkpoint: write to '" + path + "' failed");
}

inline ParamList load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("checkpoint: cannot open '" + path + "' for reading");
    char magic[7];
    if (!is.read(magic, 7) || std::memcmp(magic, kCheckpointMagic, 7) != 0)
        throw ConfigError("checkpoint: '" + path + "' is not a LOASP1 checkpoint");
    ParamList out;
    for (;;) {
        std::uint32_t name_len;
        if (!detail::read_u32(is, name_len)) {
            if (is.eof()) break;
            throw ConfigError("checkpoint: truncated record header in '" + path + "'");
        }
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len))
            throw ConfigError("checkpoint: truncated name in '" + path + "'");
        std::uint32_t rank;
        if (!detail::read_u32(is, rank)) throw ConfigError("checkpoint: truncated rank in '" + path + "'");
        std::vector<long> shape(rank);
        for (std::uint32_t i = 0; i < rank; ++i) {
            std::uint32_t e;
            if (!detail::read_u32(is, e)) throw ConfigError("checkpoint: truncated extents in '" + path + "'");
            shape[i] = static_cast<long>(e);
        }
        Tensor t = Tensor::zeros(shape);
        if (!is.read(reinterpret_cast<char*>(t.data()),
                     static_cast<std::streamsize>(t.size() * static_cast<long>(sizeof(double)))))
            throw ConfigError("checkpoint: truncated payload for '" + name + "' in '" + path + "'");
        out.push_back({std::move(name), std::move(t)});
    }
    return out;
}

// Copies loaded values into the model's tensors by name.  Every model tensor
// must be present with matching extents.
inline void restore_into(const ParamList& model, const ParamList& loaded) {
    for (const auto& dst : model) {
        const NamedTensor* src = nullptr;
        for (const auto& cand : loaded)
            if (cand.name == dst.name) {
                src = &cand;
                break;
            }
        if (!src) throw ConfigError("checkpoint: missing tensor '" + dst.name + "'");
        if (src->tensor.shape() != dst.tensor.shape())
            throw ConfigError("checkpoint: tensor '" + dst.name + "' has shape " +
                              shape_str(src->tensor.shape()) + ", model expects " +
                              shape_str(dst.tensor.shape()));
        Tensor t = dst.tensor;
        std::copy(src->tensor.data(), src->tensor.data() + src->tensor.size(), t.data());
    }
}

}  // namespace loasp
