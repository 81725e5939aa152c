#include "mvprior/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "mvprior/common.hpp"

namespace mvprior {

int Mask::count_foreground() const {
    int n = 0;
    for (std::uint8_t v : data) n += v ? 1 : 0;
    return n;
}

namespace {

// Reads one whitespace-delimited token, skipping '#' comment lines, as the
// netpbm header grammar allows.
std::string next_token(std::istream& in, const std::string& path) {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    if (tok.empty()) throw DataError("truncated netpbm header in " + path);
    return tok;
}

int parse_dim(const std::string& tok, const std::string& path) {
    try {
        size_t pos = 0;
        int v = std::stoi(tok, &pos);
        if (pos != tok.size() || v <= 0) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw DataError("bad netpbm header field '" + tok + "' in " + path);
    }
}

void read_header(std::istream& in, const std::string& path, const char* magic,
                 int& w, int& h) {
    std::string m = next_token(in, path);
    if (m != magic) {
        throw DataError("expected " + std::string(magic) + " magic in " + path +
                        ", got '" + m + "'");
    }
    w = parse_dim(next_token(in, path), path);
    h = parse_dim(next_token(in, path), path);
    int maxval = parse_dim(next_token(in, path), path);
    if (maxval != 255) {
        throw DataError("unsupported maxval " + std::to_string(maxval) + " in " + path);
    }
    // The single whitespace byte after maxval was consumed by next_token.
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path + " for writing");
    return out;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path + " for reading");
    return in;
}

}  // namespace

void write_pgm(const std::string& path, const Mask& mask) {
    std::ofstream out = open_out(path);
    out << "P5\n" << mask.w << " " << mask.h << "\n255\n";
    std::vector<std::uint8_t> row(mask.w);
    for (int y = 0; y < mask.h; ++y) {
        for (int x = 0; x < mask.w; ++x) row[x] = mask.at(x, y) ? 255 : 0;
        out.write(reinterpret_cast<const char*>(row.data()), row.size());
    }
    if (!out) throw DataError("short write to " + path);
}

Mask read_pgm(const std::string& path) {
    std::ifstream in = open_in(path);
    int w = 0, h = 0;
    read_header(in, path, "P5", w, h);
    Mask mask(w, h);
    std::vector<std::uint8_t> row(w);
    for (int y = 0; y < h; ++y) {
        in.read(reinterpret_cast<char*>(row.data()), row.size());
        if (in.gcount() != static_cast<std::streamsize>(row.size())) {
            throw DataError("truncated pixel data in " + path);
        }
        for (int x = 0; x < w; ++x) mask.at(x, y) = row[x] >= 128 ? 1 : 0;
    }
    return mask;
}

void write_ppm(const std::string& path, const Image& img) {
    if (img.c != 3) throw UsageError("ppm output requires 3 channels");
    std::ofstream out = open_out(path);
    out << "P6\n" << img.w << " " << img.h << "\n255\n";
    std::vector<std::uint8_t> row(static_cast<size_t>(img.w) * 3);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            for (int ch = 0; ch < 3; ++ch) {
                float v = std::clamp(img.at(x, y, ch), 0.0f, 1.0f);
                row[static_cast<size_t>(x) * 3 + ch] =
                    static_cast<std::uint8_t>(std::lround(v * 255.0f));
            }
        }
        out.write(reinterpret_cast<const char*>(row.data()), row.size());
    }
    if (!out) throw DataError("short write to " + path);
}

Image read_ppm(const std::string& path) {
    std::ifstream in = open_in(path);
    int w = 0, h = 0;
    read_header(in, path, "P6", w, h);
    Image img(w, h, 3);
    std::vector<std::uint8_t> row(static_cast<size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        in.read(reinterpret_cast<char*>(row.data()), row.size());
        if (in.gcount() != static_cast<std::streamsize>(row.size())) {
            throw DataError("truncated pixel data in " + path);
        }
        for (int x = 0; x < w; ++x) {
            for (int ch = 0; ch < 3; ++ch) {
                img.at(x, y, ch) = row[static_cast<size_t>(x) * 3 + ch] / 255.0f;
            }
        }
    }
    return img;
}

}  // namespace mvprior
