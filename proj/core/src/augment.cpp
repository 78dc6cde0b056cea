#include "hvt/augment.hpp"

#include <algorithm>
#include <cmath>

#include "hvt/errors.hpp"

namespace hvt {

namespace {

void require_image(const Image& img, const char* op)
{
    if (img.height < 2 || img.width < 2 || img.pixels.size() != img.height * img.width * 3)
        throw InputError(std::string(op) + ": degenerate image");
}

double jitter_factor(double strength, RngStream& rng)
{
    if (strength <= 0.0)
        return 1.0;
    return rng.uniform(std::max(0.0, 1.0 - strength), 1.0 + strength);
}

} // namespace

CropBox sample_crop(std::size_t height, std::size_t width, double scale_min, double scale_max, double ratio_min,
                    double ratio_max, RngStream& rng)
{
    if (!(0.0 < scale_min && scale_min <= scale_max && scale_max <= 1.0) || !(0.0 < ratio_min && ratio_min <= ratio_max))
        throw ConfigError("sample_crop: invalid scale or ratio range");
    const double area = static_cast<double>(height * width);
    const double log_lo = std::log(ratio_min), log_hi = std::log(ratio_max);
    for (int attempt = 0; attempt < 10; ++attempt) {
        const double target = area * rng.uniform(scale_min, scale_max);
        const double ratio = std::exp(rng.uniform(log_lo, log_hi));
        const auto w = static_cast<std::size_t>(std::lround(std::sqrt(target * ratio)));
        const auto h = static_cast<std::size_t>(std::lround(std::sqrt(target / ratio)));
        if (w > 0 && h > 0 && w <= width && h <= height) {
            const std::size_t top = rng.index(height - h + 1);
            const std::size_t left = rng.index(width - w + 1);
            return {top, left, h, w};
        }
    }
    const double in_ratio = static_cast<double>(width) / static_cast<double>(height);
    std::size_t w = width, h = height;
    if (in_ratio < ratio_min)
        h = static_cast<std::size_t>(std::lround(static_cast<double>(w) / ratio_min));
    else if (in_ratio > ratio_max)
        w = static_cast<std::size_t>(std::lround(static_cast<double>(h) * ratio_max));
    return {(height - h) / 2, (width - w) / 2, h, w};
}

Image apply_jitter(const Image& img, const ViewDraws& d)
{
    Image out = img;
    if (d.brightness != 1.0)
        out = adjust_brightness(out, d.brightness);
    if (d.contrast != 1.0)
        out = adjust_contrast(out, d.contrast);
    if (d.saturation != 1.0)
        out = adjust_saturation(out, d.saturation);
    if (d.hue != 0.0)
        out = adjust_hue(out, d.hue);
    return out;
}

AugmentedView simclr_view(const Image& img, const SimclrPolicy& policy, RngStream& rng)
{
    require_image(img, "simclr_view");
    ViewDraws d;
    d.crop = sample_crop(img.height, img.width, policy.crop_scale_min, policy.crop_scale_max, policy.crop_ratio_min,
                         policy.crop_ratio_max, rng);
    d.brightness = jitter_factor(policy.jitter.brightness, rng);
    d.contrast = jitter_factor(policy.jitter.contrast, rng);
    d.saturation = jitter_factor(policy.jitter.saturation, rng);
    d.hue = policy.jitter.hue > 0.0 ? rng.uniform(-policy.jitter.hue, policy.jitter.hue) : 0.0;
    d.grayscale = rng.bernoulli(policy.grayscale_prob);
    d.blur_sigma = policy.blur_sigma_min == policy.blur_sigma_max ? policy.blur_sigma_min
                                                                   : rng.uniform(policy.blur_sigma_min, policy.blur_sigma_max);
    d.hflip = rng.bernoulli(policy.hflip_prob);

    Image out = apply_jitter(resized_crop(img, d.crop, img.height, img.width), d);
    if (d.grayscale)
        out = grayscale(out);
    out = gaussian_blur(out, policy.blur_kernel, d.blur_sigma);
    if (d.hflip)
        out = hflip(out);
    return {std::move(out), d};
}

ViewPair simclr_augment(const Image& img, const SimclrPolicy& policy, RngStream& rng)
{
    RngStream ra = rng.derive(0), rb = rng.derive(1);
    return {simclr_view(img, policy, ra), simclr_view(img, policy, rb)};
}

AugmentedView finetune_augment(const Image& img, const FinetunePolicy& policy, RngStream& rng)
{
    require_image(img, "finetune_augment");
    ViewDraws d;
    d.crop = sample_crop(img.height, img.width, policy.crop_scale_min, policy.crop_scale_max, policy.crop_ratio_min,
                         policy.crop_ratio_max, rng);
    d.hflip = rng.bernoulli(policy.hflip_prob);
    d.vflip = rng.bernoulli(policy.vflip_prob);
    d.rotation = policy.max_rotation_degrees > 0.0
                     ? rng.uniform(-policy.max_rotation_degrees, policy.max_rotation_degrees)
                     : 0.0;
    d.brightness = jitter_factor(policy.jitter.brightness, rng);
    d.contrast = jitter_factor(policy.jitter.contrast, rng);
    d.saturation = jitter_factor(policy.jitter.saturation, rng);
    d.hue = policy.jitter.hue > 0.0 ? rng.uniform(-policy.jitter.hue, policy.jitter.hue) : 0.0;

    Image out = resized_crop(img, d.crop, img.height, img.width);
    if (d.hflip)
        out = hflip(out);
    if (d.vflip)
        out = vflip(out);
    out = rotate(out, d.rotation);
    return {apply_jitter(out, d), d};
}

} // namespace hvt
