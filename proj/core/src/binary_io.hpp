#pragma once

// Little-endian scalar serialization shared by the container and checkpoint formats.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <type_traits>
#include <vector>

#include "hvt/errors.hpp"

namespace hvt::detail {

template <typename T>
void put_le(std::vector<unsigned char>& out, T value)
{
    static_assert(std::is_arithmetic_v<T>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(bytes, bytes + sizeof(T));
    out.insert(out.end(), bytes, bytes + sizeof(T));
}

/// Bounds-checked sequential reader over an in-memory byte buffer.
class ByteReader {
public:
    ByteReader(const std::vector<unsigned char>& data, std::string what) : data_(data), what_(std::move(what)) {}

    template <typename T>
    T get()
    {
        need(sizeof(T));
        unsigned char bytes[sizeof(T)];
        std::memcpy(bytes, data_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big)
            std::reverse(bytes, bytes + sizeof(T));
        pos_ += sizeof(T);
        T v;
        std::memcpy(&v, bytes, sizeof(T));
        return v;
    }

    std::string bytes(std::size_t n)
    {
        need(n);
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    std::size_t position() const { return pos_; }
    void seek(std::size_t pos)
    {
        if (pos > data_.size())
            throw FormatError(what_ + ": offset past end of file");
        pos_ = pos;
    }
    std::size_t remaining() const { return data_.size() - pos_; }
    void need(std::size_t n) const
    {
        if (n > data_.size() - pos_)
            throw FormatError(what_ + ": truncated file");
    }

private:
    const std::vector<unsigned char>& data_;
    std::string what_;
    std::size_t pos_ = 0;
};

inline std::vector<unsigned char> read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw InputError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes to a sibling temporary file and renames it into place.
inline void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes)
{
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw InputError("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out)
            throw InputError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

} // namespace hvt::detail
