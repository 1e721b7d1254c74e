#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vseg/net.hpp"
#include "vseg/volume.hpp"

namespace vseg {

// I/O failures (missing files, malformed headers) and contract violations
// (spec mismatch, truncation) are distinct error families so the CLI can map
// them to distinct exit codes.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for hashing: " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (in.read(buf, sizeof buf) || in.gcount() > 0)
        h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
    return h;
}

namespace detail {

// All writes go through a temp file + rename so readers never see a partial
// file and interrupted runs leave no corrupt artifacts.
class AtomicFile {
public:
    explicit AtomicFile(const std::filesystem::path& path)
        : final_(path), tmp_(path.string() + ".tmp"), out_(tmp_, std::ios::binary) {
        if (!out_) throw IoError("cannot open for writing: " + tmp_.string());
    }
    std::ofstream& stream() { return out_; }
    void commit() {
        out_.close();
        if (!out_) throw IoError("write failed: " + tmp_.string());
        std::filesystem::rename(tmp_, final_);
        committed_ = true;
    }
    ~AtomicFile() {
        if (!committed_) {
            out_.close();
            std::error_code ec;
            std::filesystem::remove(tmp_, ec);
        }
    }

private:
    std::filesystem::path final_, tmp_;
    std::ofstream out_;
    bool committed_ = false;
};

inline std::string read_header_line(std::istream& in, const char* what) {
    std::string line;
    if (!std::getline(in, line)) throw IoError(std::string("truncated header: missing ") + what);
    return line;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// VSEG1 volume container: text header (one key-value pair per line, closed by
// "end"), then the raw little-endian payload in W-fastest order.
// ---------------------------------------------------------------------------

inline void save_volume(const std::filesystem::path& path, const Volume& vol) {
    detail::AtomicFile f(path);
    f.stream() << "VSEG1\n"
               << "dims " << vol.dims[0] << " " << vol.dims[1] << " " << vol.dims[2] << "\n"
               << "spacing " << vol.spacing[0] << " " << vol.spacing[1] << " " << vol.spacing[2]
               << "\n"
               << "dtype f32\n"
               << "end\n";
    f.stream().write(reinterpret_cast<const char*>(vol.data.data()),
                     static_cast<std::streamsize>(vol.size() * sizeof(float)));
    f.commit();
}

inline void save_mask(const std::filesystem::path& path, const Mask& mask) {
    detail::AtomicFile f(path);
    f.stream() << "VSEG1\n"
               << "dims " << mask.dims[0] << " " << mask.dims[1] << " " << mask.dims[2] << "\n"
               << "spacing 1 1 1\n"
               << "dtype u8\n"
               << "end\n";
    f.stream().write(reinterpret_cast<const char*>(mask.data.data()),
                     static_cast<std::streamsize>(mask.size()));
    f.commit();
}

struct VolumeHeader {
    std::array<int, 3> dims{};
    std::array<float, 3> spacing{1.f, 1.f, 1.f};
    std::string dtype;
};

inline VolumeHeader read_vseg_header(std::istream& in, const std::string& name) {
    if (detail::read_header_line(in, "magic") != "VSEG1")
        throw IoError("not a VSEG1 file: " + name);
    VolumeHeader h;
    bool have_dims = false, have_dtype = false;
    for (;;) {
        const std::string line = detail::read_header_line(in, "end marker");
        if (line == "end") break;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "dims") {
            ls >> h.dims[0] >> h.dims[1] >> h.dims[2];
            have_dims = !ls.fail();
        } else if (key == "spacing") {
            ls >> h.spacing[0] >> h.spacing[1] >> h.spacing[2];
        } else if (key == "dtype") {
            ls >> h.dtype;
            have_dtype = true;
        }  // unknown keys are ignored for forward compatibility
    }
    if (!have_dims || h.dims[0] < 1 || h.dims[1] < 1 || h.dims[2] < 1)
        throw IoError("malformed dims in " + name);
    if (!have_dtype || (h.dtype != "f32" && h.dtype != "u8"))
        throw IoError("unsupported dtype in " + name);
    return h;
}

inline Volume load_volume(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    const VolumeHeader h = read_vseg_header(in, path.string());
    if (h.dtype != "f32") throw IoError("expected f32 volume: " + path.string());
    Volume vol(h.dims[0], h.dims[1], h.dims[2]);
    vol.spacing = h.spacing;
    in.read(reinterpret_cast<char*>(vol.data.data()),
            static_cast<std::streamsize>(vol.size() * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != vol.size() * sizeof(float))
        throw IoError("truncated payload: " + path.string());
    return vol;
}

inline Mask load_mask(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    const VolumeHeader h = read_vseg_header(in, path.string());
    if (h.dtype != "u8") throw IoError("expected u8 mask: " + path.string());
    Mask mask(h.dims[0], h.dims[1], h.dims[2]);
    in.read(reinterpret_cast<char*>(mask.data.data()),
            static_cast<std::streamsize>(mask.size()));
    if (static_cast<std::size_t>(in.gcount()) != mask.size())
        throw IoError("truncated payload: " + path.string());
    return mask;
}

// ---------------------------------------------------------------------------
// VCKP1 checkpoint: network spec header, then per unit (fixed order) the
// weight, bias, and where present gamma/beta/BN running stats as f32 payload.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_f32(std::ostream& out, const std::vector<float>& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(float)));
}

inline void read_f32(std::istream& in, std::vector<float>& v, const std::string& name) {
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != v.size() * sizeof(float))
        throw ContractError("truncated checkpoint: " + name);
}

template <typename T, typename Fn>
void for_each_checkpoint_tensor(NetworkGraph<T>& g, Fn&& fn) {
    for (ConvUnit<T>* u : g.all_units()) {
        fn(u->w.value);
        fn(u->b.value);
        if (u->has_bn_relu) {
            fn(u->gamma.value);
            fn(u->beta.value);
            fn(u->bn.running_mean);
            fn(u->bn.running_var);
        }
    }
}

}  // namespace detail

template <typename T>
void checkpoint_save(NetworkGraph<T>& graph, const std::filesystem::path& path) {
    detail::AtomicFile f(path);
    const NetSpec& s = graph.spec;
    f.stream() << "VCKP1\n"
               << "variant " << variant_name(s.variant) << "\n"
               << "base_channels " << s.base_channels << "\n"
               << "input_size " << s.input_size << "\n"
               << "num_classes " << s.num_classes << "\n"
               << "xi1 " << s.xi1 << "\n"
               << "xi2 " << s.xi2 << "\n"
               << "end\n";
    std::vector<float> buf;
    detail::for_each_checkpoint_tensor(graph, [&](const Tensor<T>& t) {
        buf.resize(t.size());
        for (std::size_t i = 0; i < t.size(); ++i) buf[i] = static_cast<float>(t.data[i]);
        detail::write_f32(f.stream(), buf);
    });
    f.commit();
}

inline NetSpec read_checkpoint_spec(std::istream& in, const std::string& name) {
    if (detail::read_header_line(in, "magic") != "VCKP1")
        throw IoError("not a VCKP1 checkpoint: " + name);
    NetSpec s;
    for (;;) {
        const std::string line = detail::read_header_line(in, "end marker");
        if (line == "end") break;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "variant") {
            std::string v;
            ls >> v;
            s.variant = variant_from_name(v);
        } else if (key == "base_channels")
            ls >> s.base_channels;
        else if (key == "input_size")
            ls >> s.input_size;
        else if (key == "num_classes")
            ls >> s.num_classes;
        else if (key == "xi1")
            ls >> s.xi1;
        else if (key == "xi2")
            ls >> s.xi2;
        if (ls.fail()) throw IoError("malformed checkpoint header line: " + line);
    }
    return s;
}

// Loads into an already-built graph; the stored spec must match exactly.
template <typename T>
void checkpoint_load(NetworkGraph<T>& graph, const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    const NetSpec stored = read_checkpoint_spec(in, path.string());
    if (stored != graph.spec)
        throw ContractError("checkpoint spec mismatch: " + path.string() + " holds a " +
                            variant_name(stored.variant) + " c=" +
                            std::to_string(stored.base_channels) + " input=" +
                            std::to_string(stored.input_size));
    std::vector<float> buf;
    detail::for_each_checkpoint_tensor(graph, [&](Tensor<T>& t) {
        buf.resize(t.size());
        detail::read_f32(in, buf, path.string());
        for (std::size_t i = 0; i < t.size(); ++i) t.data[i] = static_cast<T>(buf[i]);
    });
    // anything left over means the file does not match the architecture
    char extra;
    if (in.read(&extra, 1) && in.gcount() == 1)
        throw ContractError("checkpoint has trailing data: " + path.string());
}

// Convenience: read just the spec, build, load.
template <typename T = float>
NetworkGraph<T> checkpoint_open(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    const NetSpec spec = read_checkpoint_spec(in, path.string());
    in.close();
    std::mt19937_64 rng(0);
    auto g = NetworkGraph<T>::build(spec, rng);
    checkpoint_load(g, path);
    return g;
}

}  // namespace vseg
