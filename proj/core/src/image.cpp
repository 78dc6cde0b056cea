#include "hvt/image.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "hvt/errors.hpp"

namespace hvt {

namespace {

void require_nonempty(const Image& img, const char* op)
{
    if (img.height == 0 || img.width == 0 || img.pixels.size() != img.height * img.width * 3)
        throw InputError(std::string(op) + ": empty or malformed image");
}

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

double luminance(float r, float g, float b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

// Bilinear sample with coordinates in source pixel units (pixel centers at integer + 0.5).
void sample(const Image& img, double y, double x, float* out)
{
    y = std::clamp(y - 0.5, 0.0, static_cast<double>(img.height - 1));
    x = std::clamp(x - 0.5, 0.0, static_cast<double>(img.width - 1));
    const auto y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
    const std::size_t y1 = std::min(y0 + 1, img.height - 1), x1 = std::min(x0 + 1, img.width - 1);
    const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
    for (std::size_t c = 0; c < 3; ++c) {
        const double top = img.at(y0, x0, c) * (1 - fx) + img.at(y0, x1, c) * fx;
        const double bot = img.at(y1, x0, c) * (1 - fx) + img.at(y1, x1, c) * fx;
        out[c] = static_cast<float>(top * (1 - fy) + bot * fy);
    }
}

} // namespace

Image resized_crop(const Image& img, const CropBox& box, std::size_t out_h, std::size_t out_w)
{
    require_nonempty(img, "resized_crop");
    if (box.height == 0 || box.width == 0 || box.top + box.height > img.height || box.left + box.width > img.width)
        throw InputError("resized_crop: box outside image");
    if (out_h == 0 || out_w == 0)
        throw InputError("resized_crop: empty output size");
    if (box.height == out_h && box.width == out_w) {
        Image out(out_h, out_w);
        for (std::size_t y = 0; y < out_h; ++y)
            std::copy_n(&img.pixels[((box.top + y) * img.width + box.left) * 3], out_w * 3, &out.pixels[y * out_w * 3]);
        return out;
    }
    Image out(out_h, out_w);
    const double sy = static_cast<double>(box.height) / static_cast<double>(out_h);
    const double sx = static_cast<double>(box.width) / static_cast<double>(out_w);
    for (std::size_t y = 0; y < out_h; ++y)
        for (std::size_t x = 0; x < out_w; ++x)
            sample(img, static_cast<double>(box.top) + (static_cast<double>(y) + 0.5) * sy,
                   static_cast<double>(box.left) + (static_cast<double>(x) + 0.5) * sx, &out.at(y, x, 0));
    return out;
}

Image resize(const Image& img, std::size_t out_h, std::size_t out_w)
{
    return resized_crop(img, {0, 0, img.height, img.width}, out_h, out_w);
}

Image hflip(const Image& img)
{
    Image out(img.height, img.width);
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
    return out;
}

Image vflip(const Image& img)
{
    Image out(img.height, img.width);
    for (std::size_t y = 0; y < img.height; ++y)
        std::copy_n(&img.pixels[(img.height - 1 - y) * img.width * 3], img.width * 3, &out.pixels[y * img.width * 3]);
    return out;
}

Image rotate(const Image& img, double degrees)
{
    require_nonempty(img, "rotate");
    if (degrees == 0.0)
        return img;
    const double a = degrees * std::numbers::pi / 180.0;
    const double ca = std::cos(a), sa = std::sin(a);
    const double cy = static_cast<double>(img.height) / 2.0, cx = static_cast<double>(img.width) / 2.0;
    Image out(img.height, img.width);
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x) {
            // Inverse map: rotate the output pixel center clockwise back into the source.
            const double dy = static_cast<double>(y) + 0.5 - cy, dx = static_cast<double>(x) + 0.5 - cx;
            const double sx = ca * dx - sa * dy + cx;
            const double sy = sa * dx + ca * dy + cy;
            sample(img, sy, sx, &out.at(y, x, 0));
        }
    return out;
}

Image adjust_brightness(const Image& img, double factor)
{
    Image out = img;
    for (auto& v : out.pixels)
        v = clamp01(v * factor);
    return out;
}

Image adjust_contrast(const Image& img, double factor)
{
    require_nonempty(img, "adjust_contrast");
    double mean = 0.0;
    for (std::size_t i = 0; i < img.pixels.size(); i += 3)
        mean += luminance(img.pixels[i], img.pixels[i + 1], img.pixels[i + 2]);
    mean /= static_cast<double>(img.height * img.width);
    Image out = img;
    for (auto& v : out.pixels)
        v = clamp01((v - mean) * factor + mean);
    return out;
}

Image adjust_saturation(const Image& img, double factor)
{
    Image out = img;
    for (std::size_t i = 0; i < out.pixels.size(); i += 3) {
        const double g = luminance(img.pixels[i], img.pixels[i + 1], img.pixels[i + 2]);
        for (std::size_t c = 0; c < 3; ++c)
            out.pixels[i + c] = clamp01((img.pixels[i + c] - g) * factor + g);
    }
    return out;
}

Image adjust_hue(const Image& img, double shift)
{
    Image out = img;
    if (shift == 0.0)
        return out;
    for (std::size_t i = 0; i < out.pixels.size(); i += 3) {
        const double r = img.pixels[i], g = img.pixels[i + 1], b = img.pixels[i + 2];
        const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
        const double v = mx, d = mx - mn;
        if (d <= 0.0)
            continue;
        const double s = d / mx;
        double h;
        if (mx == r)
            h = (g - b) / d;
        else if (mx == g)
            h = 2.0 + (b - r) / d;
        else
            h = 4.0 + (r - g) / d;
        h = h / 6.0 + shift;
        h -= std::floor(h);
        const double h6 = h * 6.0;
        const auto sector = static_cast<int>(h6) % 6;
        const double f = h6 - std::floor(h6);
        const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
        double rgb[3];
        switch (sector) {
        case 0: rgb[0] = v, rgb[1] = t, rgb[2] = p; break;
        case 1: rgb[0] = q, rgb[1] = v, rgb[2] = p; break;
        case 2: rgb[0] = p, rgb[1] = v, rgb[2] = t; break;
        case 3: rgb[0] = p, rgb[1] = q, rgb[2] = v; break;
        case 4: rgb[0] = t, rgb[1] = p, rgb[2] = v; break;
        default: rgb[0] = v, rgb[1] = p, rgb[2] = q; break;
        }
        for (std::size_t c = 0; c < 3; ++c)
            out.pixels[i + c] = clamp01(rgb[c]);
    }
    return out;
}

Image grayscale(const Image& img)
{
    Image out = img;
    for (std::size_t i = 0; i < out.pixels.size(); i += 3) {
        const auto g = static_cast<float>(luminance(img.pixels[i], img.pixels[i + 1], img.pixels[i + 2]));
        out.pixels[i] = out.pixels[i + 1] = out.pixels[i + 2] = g;
    }
    return out;
}

Image gaussian_blur(const Image& img, std::size_t kernel, double sigma)
{
    require_nonempty(img, "gaussian_blur");
    if (kernel % 2 == 0)
        throw ConfigError("gaussian_blur: kernel size must be odd, got " + std::to_string(kernel));
    if (!(sigma > 0.0))
        throw ConfigError("gaussian_blur: sigma must be positive");
    const auto half = static_cast<std::ptrdiff_t>(kernel / 2);
    std::vector<double> k(kernel);
    double z = 0.0;
    for (std::ptrdiff_t i = -half; i <= half; ++i) {
        k[static_cast<std::size_t>(i + half)] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
        z += k[static_cast<std::size_t>(i + half)];
    }
    for (auto& v : k)
        v /= z;

    const auto H = static_cast<std::ptrdiff_t>(img.height), W = static_cast<std::ptrdiff_t>(img.width);
    auto clampi = [](std::ptrdiff_t v, std::ptrdiff_t n) { return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, n - 1)); };
    Image tmp(img.height, img.width), out(img.height, img.width);
    for (std::ptrdiff_t y = 0; y < H; ++y)
        for (std::ptrdiff_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                double s = 0.0;
                for (std::ptrdiff_t i = -half; i <= half; ++i)
                    s += k[static_cast<std::size_t>(i + half)] * img.at(static_cast<std::size_t>(y), clampi(x + i, W), c);
                tmp.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) = static_cast<float>(s);
            }
    for (std::ptrdiff_t y = 0; y < H; ++y)
        for (std::ptrdiff_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                double s = 0.0;
                for (std::ptrdiff_t i = -half; i <= half; ++i)
                    s += k[static_cast<std::size_t>(i + half)] * tmp.at(clampi(y + i, H), static_cast<std::size_t>(x), c);
                out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) = static_cast<float>(s);
            }
    return out;
}

Image normalize(const Image& img, const Normalization& norm)
{
    if (norm.mean.size() != 3 || norm.stddev.size() != 3)
        throw ConfigError("normalize: mean and std need three channels");
    Image out = img;
    for (std::size_t i = 0; i < out.pixels.size(); ++i)
        out.pixels[i] = static_cast<float>((img.pixels[i] - norm.mean[i % 3]) / norm.stddev[i % 3]);
    return out;
}

} // namespace hvt
