#include "hali/imageio.hpp"

#include <cmath>
#include <fstream>

namespace hali::img {

void write_image_grid(const Tensor& images, int rows, int cols, const std::string& path) {
    const Shape& s = images.shape();
    if (s.size() != 4) throw ShapeError("rank", "write_image_grid expects {N,C,H,W}");
    int n = s[0], c = s[1], h = s[2], w = s[3];
    if (c != 1 && c != 3) throw ArgumentError("write_image_grid: 1 or 3 channels only, got " + std::to_string(c));
    if (static_cast<int64_t>(rows) * cols < n)
        throw ArgumentError("write_image_grid: grid " + std::to_string(rows) + "x" + std::to_string(cols) +
                            " cannot hold " + std::to_string(n) + " images");

    int out_w = cols * w + (cols - 1) * kGutter;
    int out_h = rows * h + (rows - 1) * kGutter;
    std::vector<uint8_t> canvas(static_cast<size_t>(out_w) * out_h * c, 255);

    auto px = images.data();
    for (int i = 0; i < n; ++i) {
        int ty = (i / cols) * (h + kGutter);
        int tx = (i % cols) * (w + kGutter);
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    float v = px[((static_cast<size_t>(i) * c + ci) * h + y) * w + x];
                    int byte = static_cast<int>(std::lround((v + 1.0f) * 127.5f));
                    byte = std::clamp(byte, 0, 255);
                    canvas[(static_cast<size_t>(ty + y) * out_w + (tx + x)) * c + ci] =
                        static_cast<uint8_t>(byte);
                }
    }

    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write image grid: " + path);
    os << (c == 1 ? "P5" : "P6") << "\n" << out_w << " " << out_h << "\n255\n";
    os.write(reinterpret_cast<const char*>(canvas.data()), static_cast<long>(canvas.size()));
    if (!os) throw IoError("short write on image grid: " + path);
}

Image read_pnm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open image: " + path);
    std::string magic;
    is >> magic;
    if (magic != "P5" && magic != "P6") throw DataError("unsupported PNM magic '" + magic + "' in " + path);
    Image im;
    im.channels = (magic == "P6") ? 3 : 1;
    int maxval = 0;
    is >> im.width >> im.height >> maxval;
    if (!is || im.width <= 0 || im.height <= 0) throw DataError("bad PNM header in " + path);
    if (maxval != 255) throw DataError("only maxval 255 PNM supported, got " + std::to_string(maxval));
    is.get(); // single whitespace after header
    size_t count = static_cast<size_t>(im.width) * im.height * im.channels;
    im.pixels.resize(count);
    is.read(reinterpret_cast<char*>(im.pixels.data()), static_cast<long>(count));
    if (static_cast<size_t>(is.gcount()) != count) throw DataError("truncated PNM payload in " + path);
    return im;
}

} // namespace hali::img
