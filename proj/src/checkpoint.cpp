#include "vctr/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

#include "vctr/mel.hpp"

namespace vctr {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

struct Cursor {
    std::span<const std::uint8_t> b;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (pos + n > b.size()) throw FormatError(std::string("truncated checkpoint: ") + what, pos);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t{b[pos + i]} << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t{b[pos + i]} << (8 * i);
        pos += 8;
        return v;
    }
    std::string str(std::size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(b.data() + pos), n);
        pos += n;
        return s;
    }
};

int scalar_bytes(const nlohmann::json& config) {
    const int bytes = config.is_object() && config.contains("scalar_bytes") ? config["scalar_bytes"].get<int>() : 4;
    if (bytes != 4 && bytes != 8) throw CompatibilityError("checkpoint scalar_bytes must be 4 or 8");
    return bytes;
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return &t.tensor;
    return nullptr;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
    const int width = scalar_bytes(ckpt.config);
    std::vector<std::uint8_t> out{'V', 'C', 'T', 'R'};
    put_u32(out, kCheckpointVersion);
    const std::string cfg = ckpt.config.dump();
    put_u32(out, static_cast<std::uint32_t>(cfg.size()));
    out.insert(out.end(), cfg.begin(), cfg.end());
    put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
        for (double v : t.data()) {
            if (width == 8)
                put_u64(out, std::bit_cast<std::uint64_t>(v));
            else
                put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        }
    }
    return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "VCTR", 4) != 0) throw FormatError("missing VCTR magic", 0);
    Cursor c{bytes, 4};
    const std::uint32_t version = c.u32("version");
    if (version != kCheckpointVersion)
        throw CompatibilityError("checkpoint version " + std::to_string(version) + " not supported (expected " +
                                 std::to_string(kCheckpointVersion) + ")");
    Checkpoint ckpt;
    const std::uint32_t cfg_len = c.u32("config length");
    const std::size_t cfg_pos = c.pos;
    try {
        ckpt.config = nlohmann::json::parse(c.str(cfg_len, "config block"));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("bad config JSON: ") + e.what(), cfg_pos + e.byte);
    }
    const int width = scalar_bytes(ckpt.config);
    const std::uint32_t count = c.u32("tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = c.u32("name length");
        std::string name = c.str(name_len, "tensor name");
        const std::uint32_t rank = c.u32("rank");
        if (rank > 8) throw FormatError("implausible rank " + std::to_string(rank) + " for '" + name + "'", c.pos - 4);
        Shape shape(rank);
        for (auto& d : shape) d = c.u32("dims");
        const std::size_t numel = shape_numel(shape);
        c.need(numel * static_cast<std::size_t>(width), "tensor payload");
        std::vector<double> data(numel);
        for (auto& v : data) v = width == 8 ? std::bit_cast<double>(c.u64("")) : std::bit_cast<float>(c.u32(""));
        ckpt.tensors.push_back({std::move(name), Tensor::from_data(std::move(shape), std::move(data))});
    }
    if (c.pos != bytes.size()) throw FormatError("trailing bytes after last tensor", c.pos);
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    try {
        return decode_checkpoint(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.detail(), e.offset());
    }
}

void add_tensors(Checkpoint& ckpt, const ParamList& params, const std::string& prefix) {
    for (const auto& p : params) ckpt.tensors.push_back({prefix + p.name, p.tensor});
}

void restore_tensors(const Checkpoint& ckpt, const ParamList& params, const std::string& prefix) {
    for (const auto& p : params) {
        const Tensor* src = ckpt.find(prefix + p.name);
        if (!src) throw CompatibilityError("checkpoint has no tensor '" + prefix + p.name + "'");
        if (src->shape() != p.tensor.shape())
            throw CompatibilityError("tensor '" + prefix + p.name + "' is " + shape_string(src->shape()) +
                                     " in the checkpoint but " + shape_string(p.tensor.shape()) + " in the model");
        Tensor dst = p.tensor;
        std::copy(src->data().begin(), src->data().end(), dst.mutable_data().begin());
    }
}

}  // namespace vctr
