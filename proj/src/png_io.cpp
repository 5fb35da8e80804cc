#include "defend/png_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace defend {

namespace {

constexpr unsigned char kSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};

void put_u32(std::vector<unsigned char>& out, uint32_t v) {
    out.push_back((v >> 24) & 0xFF);
    out.push_back((v >> 16) & 0xFF);
    out.push_back((v >> 8) & 0xFF);
    out.push_back(v & 0xFF);
}

uint32_t read_u32(const unsigned char* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

void append_chunk(std::vector<unsigned char>& out, const char type[4],
                  const std::vector<unsigned char>& payload) {
    put_u32(out, static_cast<uint32_t>(payload.size()));
    const std::size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    uLong crc = crc32(0L, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
    put_u32(out, static_cast<uint32_t>(crc));
}

std::vector<unsigned char> zlib_compress(const std::vector<unsigned char>& raw) {
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> out(bound);
    if (compress2(out.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw DataError("png: deflate failed");
    out.resize(bound);
    return out;
}

std::vector<unsigned char> zlib_decompress(const unsigned char* data, std::size_t size,
                                           std::size_t expected) {
    std::vector<unsigned char> out(expected);
    uLongf dest_len = static_cast<uLongf>(expected);
    if (uncompress(out.data(), &dest_len, data, static_cast<uLong>(size)) != Z_OK ||
        dest_len != expected)
        throw DataError("png: inflate failed or size mismatch");
    return out;
}

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace

void write_png(const std::string& path, const Image& img) {
    if (img.height <= 0 || img.width <= 0)
        throw DataError("write_png: empty image");
    const int h = img.height, w = img.width;
    const std::size_t stride = static_cast<std::size_t>(w) * 3;

    std::vector<unsigned char> raw;
    raw.reserve((stride + 1) * h);
    for (int r = 0; r < h; ++r) {
        raw.push_back(0);  // filter type 0
        for (int c = 0; c < w; ++c)
            for (int ch = 0; ch < 3; ++ch) {
                double v = std::clamp(img.at(r, c, ch), 0.0, 1.0);
                raw.push_back(static_cast<unsigned char>(std::lround(v * 255.0)));
            }
    }

    std::vector<unsigned char> file(kSignature, kSignature + 8);
    std::vector<unsigned char> ihdr;
    put_u32(ihdr, static_cast<uint32_t>(w));
    put_u32(ihdr, static_cast<uint32_t>(h));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // color type: truecolor
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter method
    ihdr.push_back(0);  // no interlace
    append_chunk(file, "IHDR", ihdr);
    append_chunk(file, "IDAT", zlib_compress(raw));
    append_chunk(file, "IEND", {});

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("write_png: cannot open " + path);
    out.write(reinterpret_cast<const char*>(file.data()),
              static_cast<std::streamsize>(file.size()));
    if (!out) throw DataError("write_png: write failed for " + path);
}

Image read_png(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("read_png: cannot open " + path);
    std::vector<unsigned char> file((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (file.size() < 8 || std::memcmp(file.data(), kSignature, 8) != 0)
        throw DataError("read_png: not a PNG file: " + path);

    uint32_t w = 0, h = 0;
    int bit_depth = 0, color_type = 0;
    std::vector<unsigned char> idat;
    std::size_t pos = 8;
    while (pos + 8 <= file.size()) {
        const uint32_t len = read_u32(file.data() + pos);
        if (pos + 12 + len > file.size()) throw DataError("read_png: truncated chunk");
        const char* type = reinterpret_cast<const char*>(file.data() + pos + 4);
        const unsigned char* payload = file.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            w = read_u32(payload);
            h = read_u32(payload + 4);
            bit_depth = payload[8];
            color_type = payload[9];
            if (payload[12] != 0) throw DataError("read_png: interlaced PNG unsupported");
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), payload, payload + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (w == 0 || h == 0) throw DataError("read_png: missing IHDR");
    if (bit_depth != 8 || (color_type != 2 && color_type != 6))
        throw DataError("read_png: only 8-bit RGB/RGBA supported");

    const int channels = color_type == 2 ? 3 : 4;
    const std::size_t stride = static_cast<std::size_t>(w) * channels;
    auto raw = zlib_decompress(idat.data(), idat.size(), (stride + 1) * h);

    std::vector<unsigned char> prev(stride, 0);
    Image img(static_cast<int>(h), static_cast<int>(w));
    for (uint32_t r = 0; r < h; ++r) {
        const unsigned char filter = raw[r * (stride + 1)];
        unsigned char* row = raw.data() + r * (stride + 1) + 1;
        for (std::size_t i = 0; i < stride; ++i) {
            const int left = i >= static_cast<std::size_t>(channels) ? row[i - channels] : 0;
            const int up = prev[i];
            const int ul = i >= static_cast<std::size_t>(channels) ? prev[i - channels] : 0;
            int v = row[i];
            switch (filter) {
                case 0: break;
                case 1: v += left; break;
                case 2: v += up; break;
                case 3: v += (left + up) / 2; break;
                case 4: v += paeth(left, up, ul); break;
                default: throw DataError("read_png: unknown filter type");
            }
            row[i] = static_cast<unsigned char>(v & 0xFF);
        }
        std::memcpy(prev.data(), row, stride);
        for (uint32_t c = 0; c < w; ++c)
            for (int ch = 0; ch < 3; ++ch)
                img.at(static_cast<int>(r), static_cast<int>(c), ch) =
                    row[c * channels + ch] / 255.0;
    }
    return img;
}

}  // namespace defend
