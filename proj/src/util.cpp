#include "magic/util.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace magic {

uint64_t fnv1a64(const void* data, size_t n, uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

uint64_t fnv1a64_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open file for hashing: " + path);
    uint64_t h = 0xcbf29ce484222325ull;
    char buf[65536];
    while (f) {
        f.read(buf, sizeof(buf));
        std::streamsize got = f.gcount();
        if (got > 0) h = fnv1a64(buf, static_cast<size_t>(got), h);
    }
    return h;
}

std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write file: " + path);
    f << content;
}

bool file_exists(const std::string& path) { return std::filesystem::exists(path); }

void ensure_dir(const std::string& path) {
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    if (ec) throw IoError("cannot create directory " + path + ": " + ec.message());
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
    std::ostringstream ss;
    for (size_t i = 0; i < header.size(); ++i) {
        if (i) ss << ",";
        ss << header[i];
    }
    ss << "\n";
    for (const auto& row : rows) {
        if (row.size() != header.size()) throw InputError("csv row arity mismatch");
        for (size_t i = 0; i < row.size(); ++i) {
            if (i) ss << ",";
            ss << format_double(row[i]);
        }
        ss << "\n";
    }
    write_text_file(path, ss.str());
}

std::string format_double(double v) {
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace magic
