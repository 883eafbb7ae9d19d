#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

namespace edgeo {

/// Shortest-round-trip decimal formatting. Every float that lands in a CSV
/// or JSON artifact goes through here so reruns reproduce files
/// byte-for-byte.
inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    if (res.ec != std::errc()) throw std::runtime_error("format_double: to_chars failed");
    return std::string(buf, res.ptr);
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

inline std::string read_file_text(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    return std::string(bytes.begin(), bytes.end());
}

/// Write via temp file + rename so concurrent readers never observe a
/// partially written artifact.
inline void atomic_write_file(const std::string& path, const void* data, std::size_t size) {
    const std::filesystem::path target(path);
    const std::filesystem::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open file for writing: " + tmp.string());
        out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
        if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, target);
}

inline void atomic_write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    atomic_write_file(path, bytes.data(), bytes.size());
}

inline void atomic_write_file(const std::string& path, const std::string& text) {
    atomic_write_file(path, text.data(), text.size());
}

/// Accumulates CSV text in memory; write() lands it atomically.
class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header) { row(header); }

    void row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) text_ += ',';
            text_ += cells[i];
        }
        text_ += '\n';
    }

    const std::string& text() const { return text_; }
    void write(const std::string& path) const { atomic_write_file(path, text_); }

private:
    std::string text_;
};

} // namespace edgeo
