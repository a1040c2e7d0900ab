#include "stylesiam/netpbm.hpp"

#include <cmath>
#include <fstream>

#include "stylesiam/exceptions.hpp"

namespace stylesiam {

namespace {

// netpbm token scanner: skips whitespace and '#' comments
int next_int(std::istream& in, const std::string& path) {
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            c = in.get();
        } else {
            break;
        }
    }
    if (c == EOF || !std::isdigit(c)) throw io_error("malformed netpbm header: " + path);
    int value = 0;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        c = in.get();
    }
    return value;
}

TensorPtr read_netpbm(const std::string& path, const char* magic, int channels) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open image: " + path);
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (m0 != magic[0] || m1 != magic[1]) {
        throw io_error(std::string("expected ") + magic + " magic in " + path);
    }
    const int w = next_int(in, path);
    const int h = next_int(in, path);
    const int maxval = next_int(in, path);
    if (w <= 0 || h <= 0) throw io_error("bad image dimensions in " + path);
    if (maxval != 255) throw io_error("only maxval 255 supported: " + path);
    // exactly one whitespace byte separates the header from the raster
    std::vector<uint8_t> raw(static_cast<size_t>(w) * h * channels);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
        throw io_error("truncated raster in " + path);
    }
    auto t = make_tensor({channels, h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < channels; ++c) {
                t->data[(static_cast<size_t>(c) * h + y) * w + x] =
                    static_cast<float>(raw[(static_cast<size_t>(y) * w + x) * channels + c]) / 255.0f;
            }
        }
    }
    return t;
}

uint8_t to_byte(float v) {
    if (v <= 0.0f) return 0;
    if (v >= 1.0f) return 255;
    return static_cast<uint8_t>(std::lround(v * 255.0f));
}

void write_netpbm(const std::string& path, const Tensor& image, const char* magic, int channels) {
    if (image.shape.size() != 3 || image.shape[0] != channels) {
        throw dim_error(std::string("image for ") + magic + " must be [" + std::to_string(channels) +
                        ",H,W], got " + shape_str(image.shape));
    }
    const int h = image.shape[1];
    const int w = image.shape[2];
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write image: " + path);
    out << magic << "\n" << w << " " << h << "\n255\n";
    std::vector<uint8_t> raw(static_cast<size_t>(w) * h * channels);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < channels; ++c) {
                raw[(static_cast<size_t>(y) * w + x) * channels + c] =
                    to_byte(image.data[(static_cast<size_t>(c) * h + y) * w + x]);
            }
        }
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw io_error("short write on image: " + path);
}

}  // namespace

TensorPtr read_ppm(const std::string& path) { return read_netpbm(path, "P6", 3); }
TensorPtr read_pgm(const std::string& path) { return read_netpbm(path, "P5", 1); }

void write_ppm(const std::string& path, const Tensor& image) { write_netpbm(path, image, "P6", 3); }
void write_pgm(const std::string& path, const Tensor& image) { write_netpbm(path, image, "P5", 1); }

TensorPtr resize_nearest(const Tensor& image, int out_h, int out_w) {
    if (image.shape.size() != 3) {
        throw dim_error("resize_nearest expects [C,H,W], got " + shape_str(image.shape));
    }
    if (out_h <= 0 || out_w <= 0) throw dim_error("resize_nearest target must be positive");
    const int ch = image.shape[0];
    const int in_h = image.shape[1];
    const int in_w = image.shape[2];
    auto out = make_tensor({ch, out_h, out_w});
    for (int c = 0; c < ch; ++c) {
        for (int y = 0; y < out_h; ++y) {
            const int sy = static_cast<int>(static_cast<int64_t>(y) * in_h / out_h);
            for (int x = 0; x < out_w; ++x) {
                const int sx = static_cast<int>(static_cast<int64_t>(x) * in_w / out_w);
                out->data[(static_cast<size_t>(c) * out_h + y) * out_w + x] =
                    image.data[(static_cast<size_t>(c) * in_h + sy) * in_w + sx];
            }
        }
    }
    return out;
}

}  // namespace stylesiam
