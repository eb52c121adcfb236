#include "unet22/pgm.hpp"

#include <fstream>

namespace unet22 {

namespace {

[[noreturn]] void fail(const std::string& path, std::istream& in, const std::string& what) {
    const auto pos = in.tellg();
    const std::string at = pos < 0 ? "end of file" : "byte " + std::to_string(pos);
    throw IoError(path + ": " + what + " at " + at);
}

// Skips PNM whitespace and '#' comment lines, then parses one decimal field.
int read_header_int(const std::string& path, std::istream& in, const char* field) {
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (!std::isspace(c)) {
            break;
        }
        c = in.get();
    }
    if (c == EOF || !std::isdigit(c)) fail(path, in, std::string("expected ") + field);
    long v = 0;
    while (c != EOF && std::isdigit(c)) {
        v = v * 10 + (c - '0');
        if (v > 1 << 26) fail(path, in, std::string(field) + " out of range");
        c = in.get();
    }
    if (c != EOF) in.unget();
    return static_cast<int>(v);
}

}  // namespace

PgmImage load_pgm_raw(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (!in || m0 != 'P' || m1 != '5') fail(path, in, "not a P5 pgm file");
    PgmImage img;
    img.width = read_header_int(path, in, "width");
    img.height = read_header_int(path, in, "height");
    const int maxval = read_header_int(path, in, "maxval");
    if (img.width <= 0 || img.height <= 0) fail(path, in, "non-positive dimensions");
    if (maxval != 255) fail(path, in, "maxval " + std::to_string(maxval) + " unsupported (need 255)");
    // exactly one whitespace byte separates the header from the payload
    const int sep = in.get();
    if (sep == EOF || !std::isspace(sep)) fail(path, in, "missing header/payload separator");
    const size_t n = static_cast<size_t>(img.width) * static_cast<size_t>(img.height);
    img.pixels.resize(n);
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in.gcount()) != n)
        throw IoError(path + ": truncated payload, got " + std::to_string(in.gcount()) +
                      " of " + std::to_string(n) + " pixels");
    return img;
}

void save_pgm_raw(const std::string& path, const PgmImage& img) {
    if (img.width <= 0 || img.height <= 0)
        throw IoError("refusing to write pgm with non-positive dimensions");
    if (img.pixels.size() != static_cast<size_t>(img.width) * static_cast<size_t>(img.height))
        throw IoError("pgm pixel buffer does not match dimensions");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw IoError("failed writing " + path);
}

}  // namespace unet22
