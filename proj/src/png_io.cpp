#include "dcelanm/png_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "dcelanm/errors.hpp"

namespace dcelanm {

namespace {

constexpr uint8_t kSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};

uint32_t be32(const uint8_t* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

void put_be32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(uint8_t(v >> 24));
    out.push_back(uint8_t(v >> 16));
    out.push_back(uint8_t(v >> 8));
    out.push_back(uint8_t(v));
}

void write_chunk(std::ofstream& f, const char type[4], const std::vector<uint8_t>& data) {
    std::vector<uint8_t> head;
    put_be32(head, static_cast<uint32_t>(data.size()));
    f.write(reinterpret_cast<const char*>(head.data()), 4);
    f.write(type, 4);
    if (!data.empty()) f.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(type), 4);
    if (!data.empty()) crc = crc32(crc, data.data(), static_cast<uInt>(data.size()));
    std::vector<uint8_t> tail;
    put_be32(tail, static_cast<uint32_t>(crc));
    f.write(reinterpret_cast<const char*>(tail.data()), 4);
}

int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace

ImageU8 read_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open PNG file: " + path);
    std::vector<uint8_t> raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (raw.size() < 8 || std::memcmp(raw.data(), kSignature, 8) != 0)
        throw DataError("not a PNG file: " + path);

    int64_t width = 0, height = 0, channels = 0;
    int bit_depth = 0, color_type = -1, interlace = 0;
    std::vector<uint8_t> idat;
    size_t pos = 8;
    bool saw_iend = false;
    while (pos + 8 <= raw.size()) {
        uint32_t len = be32(&raw[pos]);
        if (pos + 12 + len > raw.size()) throw DataError("truncated PNG chunk in " + path);
        const char* type = reinterpret_cast<const char*>(&raw[pos + 4]);
        const uint8_t* data = &raw[pos + 8];
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw DataError("bad IHDR in " + path);
            width = be32(data);
            height = be32(data + 4);
            bit_depth = data[8];
            color_type = data[9];
            interlace = data[12];
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_iend = true;
            break;
        }
        pos += 12 + len;
    }
    if (width <= 0 || height <= 0) throw DataError("missing IHDR in " + path);
    if (!saw_iend) throw DataError("truncated PNG (no IEND): " + path);
    if (bit_depth != 8)
        throw DataError("unsupported PNG bit depth " + std::to_string(bit_depth) + " in " + path + " (8-bit only)");
    if (interlace != 0) throw DataError("interlaced PNG unsupported: " + path);
    int64_t src_channels;
    switch (color_type) {
        case 0: src_channels = 1; break;
        case 2: src_channels = 3; break;
        case 6: src_channels = 4; break;
        default:
            throw DataError("unsupported PNG color type " + std::to_string(color_type) + " in " + path +
                            " (gray, RGB or RGBA only)");
    }
    channels = src_channels == 4 ? 3 : src_channels;

    const uint64_t stride = static_cast<uint64_t>(width) * static_cast<uint64_t>(src_channels);
    std::vector<uint8_t> scan(static_cast<size_t>((stride + 1) * static_cast<uint64_t>(height)));
    uLongf scan_len = static_cast<uLongf>(scan.size());
    int zrc = uncompress(scan.data(), &scan_len, idat.data(), static_cast<uLong>(idat.size()));
    if (zrc != Z_OK || scan_len != scan.size()) throw DataError("corrupt PNG pixel data in " + path);

    // defilter in place, then drop alpha if present
    const int64_t bpp = src_channels;
    std::vector<uint8_t> prev(static_cast<size_t>(stride), 0);
    ImageU8 img;
    img.width = width;
    img.height = height;
    img.channels = channels;
    img.pixels.resize(static_cast<size_t>(width * height * channels));
    std::vector<uint8_t> cur(static_cast<size_t>(stride));
    for (int64_t y = 0; y < height; ++y) {
        const uint8_t* row = &scan[static_cast<size_t>(y * static_cast<int64_t>(stride + 1))];
        const uint8_t filter = row[0];
        const uint8_t* src = row + 1;
        for (int64_t x = 0; x < static_cast<int64_t>(stride); ++x) {
            const int left = x >= bpp ? cur[static_cast<size_t>(x - bpp)] : 0;
            const int up = prev[static_cast<size_t>(x)];
            const int ul = x >= bpp ? prev[static_cast<size_t>(x - bpp)] : 0;
            int v = src[x];
            switch (filter) {
                case 0: break;
                case 1: v += left; break;
                case 2: v += up; break;
                case 3: v += (left + up) / 2; break;
                case 4: v += paeth(left, up, ul); break;
                default: throw DataError("bad PNG filter byte in " + path);
            }
            cur[static_cast<size_t>(x)] = static_cast<uint8_t>(v & 0xFF);
        }
        uint8_t* dst = &img.pixels[static_cast<size_t>(y * width * channels)];
        if (src_channels == channels) {
            std::memcpy(dst, cur.data(), static_cast<size_t>(stride));
        } else {  // RGBA -> RGB
            for (int64_t x = 0; x < width; ++x)
                for (int64_t c = 0; c < 3; ++c) dst[x * 3 + c] = cur[static_cast<size_t>(x * 4 + c)];
        }
        std::swap(prev, cur);
    }
    return img;
}

void write_png(const std::string& path, const ImageU8& img) {
    if (img.channels != 1 && img.channels != 3)
        throw DataError("write_png: channels must be 1 or 3, got " + std::to_string(img.channels));
    if (static_cast<int64_t>(img.pixels.size()) != img.width * img.height * img.channels)
        throw DataError("write_png: pixel buffer size mismatch");

    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(kSignature), 8);

    std::vector<uint8_t> ihdr;
    put_be32(ihdr, static_cast<uint32_t>(img.width));
    put_be32(ihdr, static_cast<uint32_t>(img.height));
    ihdr.push_back(8);                                   // bit depth
    ihdr.push_back(img.channels == 1 ? 0 : 2);           // color type
    ihdr.push_back(0);                                   // compression
    ihdr.push_back(0);                                   // filter method
    ihdr.push_back(0);                                   // no interlace
    write_chunk(f, "IHDR", ihdr);

    const int64_t stride = img.width * img.channels;
    std::vector<uint8_t> scan(static_cast<size_t>((stride + 1) * img.height));
    for (int64_t y = 0; y < img.height; ++y) {
        scan[static_cast<size_t>(y * (stride + 1))] = 0;  // filter: none
        std::memcpy(&scan[static_cast<size_t>(y * (stride + 1) + 1)], &img.pixels[static_cast<size_t>(y * stride)],
                    static_cast<size_t>(stride));
    }
    uLongf bound = compressBound(static_cast<uLong>(scan.size()));
    std::vector<uint8_t> compressed(static_cast<size_t>(bound));
    if (compress2(compressed.data(), &bound, scan.data(), static_cast<uLong>(scan.size()), 6) != Z_OK)
        throw DataError("PNG compression failed for " + path);
    compressed.resize(static_cast<size_t>(bound));
    write_chunk(f, "IDAT", compressed);
    write_chunk(f, "IEND", {});
    if (!f) throw DataError("write failed: " + path);
}

}  // namespace dcelanm
