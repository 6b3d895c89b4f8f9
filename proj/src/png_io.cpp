#include "uaplab/png_io.hpp"

#include <cmath>
#include <cstring>

#include <zlib.h>

#include "uaplab/errors.hpp"
#include "uaplab/util.hpp"

namespace uaplab {

namespace {

const unsigned char kSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

std::uint32_t read_u32_be(const unsigned char* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

void push_u32_be(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v >> 24));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
}

void push_chunk(std::vector<unsigned char>& out, const char type[4],
                const std::vector<unsigned char>& data) {
    push_u32_be(out, static_cast<std::uint32_t>(data.size()));
    std::size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    uLong crc = ::crc32(0L, out.data() + crc_start, static_cast<uInt>(4 + data.size()));
    push_u32_be(out, static_cast<std::uint32_t>(crc));
}

int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

} // namespace

ImageTensor decode_png(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kSignature, 8) != 0)
        throw CorruptFile("not a PNG file");

    std::uint32_t width = 0, height = 0;
    int color_type = -1, bit_depth = 0;
    std::vector<unsigned char> idat;

    std::size_t pos = 8;
    while (pos + 8 <= bytes.size()) {
        std::uint32_t len = read_u32_be(&bytes[pos]);
        if (pos + 12 + len > bytes.size()) throw CorruptFile("truncated PNG chunk");
        const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
        const unsigned char* data = &bytes[pos + 8];
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw CorruptFile("bad IHDR");
            width = read_u32_be(data);
            height = read_u32_be(data + 4);
            bit_depth = data[8];
            color_type = data[9];
            if (data[10] != 0 || data[11] != 0) throw CorruptFile("bad IHDR flags");
            if (data[12] != 0) throw CorruptFile("interlaced PNG not supported");
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (width == 0 || height == 0 || idat.empty()) throw CorruptFile("missing PNG data");
    if (bit_depth != 8) throw CorruptFile("only 8-bit PNG supported");

    int src_ch;
    switch (color_type) {
        case 0: src_ch = 1; break;
        case 2: src_ch = 3; break;
        case 4: src_ch = 2; break;
        case 6: src_ch = 4; break;
        default: throw CorruptFile("unsupported PNG color type");
    }

    std::size_t stride = static_cast<std::size_t>(width) * src_ch;
    std::size_t raw_size = (stride + 1) * height;
    std::vector<unsigned char> raw(raw_size);
    uLongf dest_len = static_cast<uLongf>(raw_size);
    int zrc = ::uncompress(raw.data(), &dest_len, idat.data(),
                           static_cast<uLong>(idat.size()));
    if (zrc != Z_OK || dest_len != raw_size) throw CorruptFile("PNG inflate failed");

    // unfilter in place, scanline by scanline
    std::vector<unsigned char> pixels(stride * height);
    int bpp = src_ch;
    for (std::uint32_t y = 0; y < height; ++y) {
        unsigned char filter = raw[y * (stride + 1)];
        const unsigned char* src = &raw[y * (stride + 1) + 1];
        unsigned char* cur = &pixels[y * stride];
        const unsigned char* up = y > 0 ? &pixels[(y - 1) * stride] : nullptr;
        for (std::size_t x = 0; x < stride; ++x) {
            int a = x >= static_cast<std::size_t>(bpp) ? cur[x - bpp] : 0;
            int b = up ? up[x] : 0;
            int c = (up && x >= static_cast<std::size_t>(bpp)) ? up[x - bpp] : 0;
            int v = src[x];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += paeth(a, b, c); break;
                default: throw CorruptFile("bad PNG filter type");
            }
            cur[x] = static_cast<unsigned char>(v & 0xff);
        }
    }

    int out_ch = (src_ch >= 3) ? 3 : 1;
    ImageTensor img(out_ch, static_cast<int>(height), static_cast<int>(width));
    for (std::uint32_t y = 0; y < height; ++y) {
        for (std::uint32_t x = 0; x < width; ++x) {
            const unsigned char* px = &pixels[y * stride + x * src_ch];
            for (int ch = 0; ch < out_ch; ++ch)
                img.at(ch, static_cast<int>(y), static_cast<int>(x)) = px[ch] / 255.0;
        }
    }
    return img;
}

ImageTensor read_png(const std::string& path) {
    return decode_png(read_file_bytes(path));
}

std::vector<unsigned char> encode_png(const ImageTensor& img) {
    if (img.empty()) throw InvalidInput("cannot encode empty image");
    if (img.channels != 1 && img.channels != 3)
        throw InvalidInput("PNG encoder expects 1 or 3 channels");

    int color_type = img.channels == 1 ? 0 : 2;
    std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
    std::vector<unsigned char> raw((stride + 1) * img.height);
    for (int y = 0; y < img.height; ++y) {
        unsigned char* row = &raw[static_cast<std::size_t>(y) * (stride + 1)];
        row[0] = 0; // filter: none
        for (int x = 0; x < img.width; ++x) {
            for (int ch = 0; ch < img.channels; ++ch) {
                double v = img.at(ch, y, x);
                v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
                row[1 + x * img.channels + ch] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
        }
    }

    uLongf bound = ::compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> compressed(bound);
    int zrc = ::compress2(compressed.data(), &bound, raw.data(),
                          static_cast<uLong>(raw.size()), 6);
    if (zrc != Z_OK) throw Error("PNG deflate failed");
    compressed.resize(bound);

    std::vector<unsigned char> out(kSignature, kSignature + 8);
    std::vector<unsigned char> ihdr;
    push_u32_be(ihdr, static_cast<std::uint32_t>(img.width));
    push_u32_be(ihdr, static_cast<std::uint32_t>(img.height));
    ihdr.push_back(8);
    ihdr.push_back(static_cast<unsigned char>(color_type));
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    push_chunk(out, "IHDR", ihdr);
    push_chunk(out, "IDAT", compressed);
    push_chunk(out, "IEND", {});
    return out;
}

void write_png(const std::string& path, const ImageTensor& img) {
    auto bytes = encode_png(img);
    write_file_atomic(path, bytes.data(), bytes.size());
}

} // namespace uaplab
