#include "dynhd/io.hpp"

#include <zlib.h>

#include <array>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dynhd/error.hpp"

namespace dynhd::io {

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::string read_file(const std::string& path) {
    // gzopen reads uncompressed files verbatim, so one code path covers both.
    gzFile f = gzopen(path.c_str(), "rb");
    if (f == nullptr) {
        throw IoError("cannot open '" + path + "' for reading");
    }
    std::string out;
    std::array<char, 1 << 16> buf{};
    while (true) {
        const int n = gzread(f, buf.data(), static_cast<unsigned>(buf.size()));
        if (n < 0) {
            int errnum = 0;
            std::string msg = gzerror(f, &errnum);
            gzclose(f);
            throw IoError("read failed for '" + path + "': " + msg);
        }
        if (n == 0) break;
        out.append(buf.data(), static_cast<std::size_t>(n));
    }
    gzclose(f);
    return out;
}

void write_file(const std::string& path, const std::string& contents) {
    if (ends_with(path, ".gz")) {
        gzFile f = gzopen(path.c_str(), "wb");
        if (f == nullptr) {
            throw IoError("cannot open '" + path + "' for writing");
        }
        std::size_t offset = 0;
        while (offset < contents.size()) {
            const auto chunk = static_cast<unsigned>(std::min<std::size_t>(contents.size() - offset, 1 << 20));
            if (gzwrite(f, contents.data() + offset, chunk) != static_cast<int>(chunk)) {
                gzclose(f);
                throw IoError("write failed for '" + path + "'");
            }
            offset += chunk;
        }
        if (gzclose(f) != Z_OK) {
            throw IoError("write failed for '" + path + "'");
        }
        return;
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + path + "' for writing");
    }
    out << contents;
    if (!out.flush()) {
        throw IoError("write failed for '" + path + "'");
    }
}

bool file_exists(const std::string& path) {
    std::error_code ec;
    return std::filesystem::is_regular_file(path, ec);
}

}  // namespace dynhd::io
