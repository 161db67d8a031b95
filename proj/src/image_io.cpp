#include "blendvq/image_io.hpp"

#include <png.h>

#include <cstring>
#include <stdexcept>
#include <vector>

namespace blendvq {

torch::Tensor read_png(const std::string& path) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        throw std::runtime_error("failed to open PNG '" + path + "': " + image.message);
    }
    const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
    image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    const int64_t channels = gray ? 1 : 3;
    const int64_t height = image.height;
    const int64_t width = image.width;
    std::vector<unsigned char> buffer(static_cast<size_t>(PNG_IMAGE_SIZE(image)));
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
        png_image_free(&image);
        throw std::runtime_error("failed to decode PNG '" + path + "': " + image.message);
    }
    torch::Tensor out = torch::empty({channels, height, width}, torch::kFloat64);
    auto acc = out.accessor<double, 3>();
    for (int64_t y = 0; y < height; ++y) {
        for (int64_t x = 0; x < width; ++x) {
            for (int64_t c = 0; c < channels; ++c) {
                acc[c][y][x] = buffer[(y * width + x) * channels + c] / 255.0;
            }
        }
    }
    return out;
}

void write_png(const std::string& path, const torch::Tensor& image) {
    if (image.dim() != 3 || (image.size(0) != 1 && image.size(0) != 3)) {
        throw std::invalid_argument("write_png expects a (1,H,W) or (3,H,W) tensor");
    }
    torch::Tensor img = image.detach().to(torch::kFloat64).clamp(0.0, 1.0).contiguous();
    const int64_t channels = img.size(0);
    const int64_t height = img.size(1);
    const int64_t width = img.size(2);
    std::vector<unsigned char> buffer(static_cast<size_t>(channels * height * width));
    auto acc = img.accessor<double, 3>();
    for (int64_t y = 0; y < height; ++y) {
        for (int64_t x = 0; x < width; ++x) {
            for (int64_t c = 0; c < channels; ++c) {
                double v = acc[c][y][x] * 255.0;
                buffer[(y * width + x) * channels + c] =
                    static_cast<unsigned char>(v < 0.0 ? 0.0 : (v > 255.0 ? 255.0 : v + 0.5));
            }
        }
    }
    png_image image_out;
    std::memset(&image_out, 0, sizeof(image_out));
    image_out.version = PNG_IMAGE_VERSION;
    image_out.width = static_cast<png_uint_32>(width);
    image_out.height = static_cast<png_uint_32>(height);
    image_out.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image_out, path.c_str(), 0, buffer.data(), 0, nullptr)) {
        throw std::runtime_error("failed to write PNG '" + path + "': " + image_out.message);
    }
}

torch::Tensor hstack_images(const std::vector<torch::Tensor>& images, int64_t gap) {
    if (images.empty()) {
        throw std::invalid_argument("hstack_images: no images");
    }
    const int64_t channels = images.front().size(0);
    const int64_t height = images.front().size(1);
    int64_t total_width = 0;
    for (const auto& im : images) {
        if (im.dim() != 3 || im.size(0) != channels || im.size(1) != height) {
            throw std::invalid_argument("hstack_images: mismatched image shapes");
        }
        total_width += im.size(2);
    }
    total_width += gap * (static_cast<int64_t>(images.size()) - 1);
    torch::Tensor canvas = torch::ones({channels, height, total_width}, torch::kFloat64);
    int64_t x = 0;
    for (const auto& im : images) {
        canvas.narrow(2, x, im.size(2)).copy_(im);
        x += im.size(2) + gap;
    }
    return canvas;
}

}  // namespace blendvq
