#pragma once

#include <cstddef>
#include <vector>

namespace hvt {

/// Three-channel float image, row-major HWC. Pixel values nominally in [0, 1].
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), pixels(h * w * 3, fill) {}

    float& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
    float at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }
    bool operator==(const Image&) const = default;
};

struct CropBox {
    std::size_t top = 0, left = 0, height = 0, width = 0;
    bool operator==(const CropBox&) const = default;
};

/// Bilinear resample of `box` to out_h x out_w (half-pixel centers, edge clamped).
/// A full-image box at the original size is returned as an exact copy.
Image resized_crop(const Image& img, const CropBox& box, std::size_t out_h, std::size_t out_w);
Image resize(const Image& img, std::size_t out_h, std::size_t out_w);

Image hflip(const Image& img);
Image vflip(const Image& img);

/// Counter-clockwise rotation about the center, bilinear, out-of-range samples
/// replicate the nearest edge pixel.
Image rotate(const Image& img, double degrees);

// Color adjustments; results are clamped to [0, 1].
Image adjust_brightness(const Image& img, double factor);
/// Blends toward the mean luminance of the whole image.
Image adjust_contrast(const Image& img, double factor);
/// Blends toward each pixel's own luminance.
Image adjust_saturation(const Image& img, double factor);
/// Rotates hue by `shift` turns (HSV round trip).
Image adjust_hue(const Image& img, double shift);
/// ITU-R 601 luminance copied to all three channels.
Image grayscale(const Image& img);

/// Separable Gaussian blur with an odd `kernel` width; borders replicate the edge.
Image gaussian_blur(const Image& img, std::size_t kernel, double sigma);

/// (x - mean[c]) / std[c] per channel.
struct Normalization {
    std::vector<double> mean{0.5, 0.5, 0.5};
    std::vector<double> stddev{0.25, 0.25, 0.25};
};
Image normalize(const Image& img, const Normalization& norm);

} // namespace hvt
