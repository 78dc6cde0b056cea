#include "hvt/checkpoint.hpp"

#include <zlib.h>

#include <algorithm>
#include <string>

#include "binary_io.hpp"
#include "hvt/errors.hpp"

namespace hvt {

namespace {

constexpr char kMagic[8] = {'H', 'V', 'T', 'C', 'K', 'P', 'T', '1'};

std::uint32_t crc32_of(const unsigned char* data, std::size_t n)
{
    uLong crc = crc32(0L, Z_NULL, 0);
    while (n > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        crc = crc32(crc, data, chunk);
        data += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

struct Entry {
    std::uint8_t group;
    std::string name;
    DType dtype;
    Shape shape;
    std::uint64_t offset;
};

void append_values(std::vector<unsigned char>& payload, const Tensor& t)
{
    dispatch(t.dtype(), [&]<typename T>() {
        for (T v : t.data<T>())
            detail::put_le<T>(payload, v);
    });
}

} // namespace

std::vector<unsigned char> serialize_checkpoint(const Checkpoint& ckpt)
{
    std::vector<Entry> entries;
    std::vector<unsigned char> payload;
    for (std::uint8_t group = 0; group < 2; ++group)
        for (const auto& e : group == 0 ? ckpt.params : ckpt.state) {
            entries.push_back({group, e.name, e.tensor.dtype(), e.tensor.shape(), payload.size()});
            append_values(payload, e.tensor);
        }

    std::vector<unsigned char> out(kMagic, kMagic + 8);
    detail::put_le<std::uint32_t>(out, kCheckpointVersion);
    detail::put_le<std::uint64_t>(out, ckpt.config_text.size());
    out.insert(out.end(), ckpt.config_text.begin(), ckpt.config_text.end());
    detail::put_le<std::uint64_t>(out, entries.size());
    for (const auto& e : entries) {
        detail::put_le<std::uint8_t>(out, e.group);
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
        out.insert(out.end(), e.name.begin(), e.name.end());
        detail::put_le<std::uint8_t>(out, e.dtype == DType::f32 ? 0 : 1);
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
        for (auto d : e.shape)
            detail::put_le<std::uint64_t>(out, d);
        detail::put_le<std::uint64_t>(out, e.offset);
    }
    detail::put_le<std::uint64_t>(out, payload.size());
    out.insert(out.end(), payload.begin(), payload.end());
    detail::put_le<std::uint32_t>(out, crc32_of(payload.data(), payload.size()));
    return out;
}

Checkpoint deserialize_checkpoint(const std::vector<unsigned char>& bytes)
{
    if (bytes.size() < 8 || !std::equal(kMagic, kMagic + 8, bytes.begin()))
        throw BadMagicError("checkpoint: bad magic");
    detail::ByteReader in(bytes, "checkpoint");
    in.bytes(8);
    const auto version = in.get<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw VersionError("checkpoint: format version " + std::to_string(version) + " is not supported (expected " +
                           std::to_string(kCheckpointVersion) + ")");
    Checkpoint ckpt;
    const auto config_len = in.get<std::uint64_t>();
    in.need(config_len);
    ckpt.config_text = in.bytes(config_len);

    const auto count = in.get<std::uint64_t>();
    std::vector<Entry> entries;
    for (std::uint64_t i = 0; i < count; ++i) {
        Entry e;
        e.group = in.get<std::uint8_t>();
        const auto name_len = in.get<std::uint32_t>();
        e.name = in.bytes(name_len);
        const auto dtype = in.get<std::uint8_t>();
        if (e.group > 1 || dtype > 1)
            throw FormatError("checkpoint: bad manifest entry '" + e.name + "'");
        e.dtype = dtype == 0 ? DType::f32 : DType::f64;
        const auto rank = in.get<std::uint32_t>();
        in.need(static_cast<std::size_t>(rank) * 8);
        for (std::uint32_t r = 0; r < rank; ++r)
            e.shape.push_back(in.get<std::uint64_t>());
        e.offset = in.get<std::uint64_t>();
        entries.push_back(std::move(e));
    }
    const auto payload_len = in.get<std::uint64_t>();
    if (in.remaining() != payload_len + 4)
        throw FormatError("checkpoint: file length does not match the declared payload");
    const std::size_t payload_start = in.position();
    in.seek(payload_start + payload_len);
    const auto stored = in.get<std::uint32_t>();
    if (crc32_of(bytes.data() + payload_start, payload_len) != stored)
        throw ChecksumError("checkpoint: payload CRC-32 mismatch");

    for (const auto& e : entries) {
        const std::size_t elem = e.dtype == DType::f32 ? 4 : 8;
        const std::size_t n = shape_numel(e.shape);
        if (e.offset > payload_len || n * elem > payload_len - e.offset)
            throw FormatError("checkpoint: tensor '" + e.name + "' extends past the payload");
        in.seek(payload_start + e.offset);
        Tensor t = Tensor::zeros(e.shape, e.dtype);
        dispatch(e.dtype, [&]<typename T>() {
            for (auto& v : t.mutable_data<T>())
                v = in.get<T>();
        });
        (e.group == 0 ? ckpt.params : ckpt.state).add(e.name, std::move(t));
    }
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt)
{
    detail::write_file(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    return deserialize_checkpoint(detail::read_file(path));
}

void load_params_into(const ParamSet& source, ParamSet& target)
{
    for (auto& e : target) {
        if (!source.contains(e.name))
            throw ManifestError("checkpoint: missing tensor '" + e.name + "'");
        const Tensor& s = source.at(e.name);
        if (s.shape() != e.tensor.shape())
            throw ManifestError("checkpoint: tensor '" + e.name + "' has shape " + shape_str(s.shape()) +
                                ", model expects " + shape_str(e.tensor.shape()));
        e.tensor.assign(s);
    }
}

} // namespace hvt
