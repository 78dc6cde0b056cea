#pragma once

#include "hvt/image.hpp"
#include "hvt/rng.hpp"

namespace hvt {

struct ColorJitter {
    double brightness = 0.0;
    double contrast = 0.0;
    double saturation = 0.0;
    double hue = 0.0;
};

/// Two-view contrastive augmentation. The pipeline per view is
/// resized crop -> jitter (brightness, contrast, saturation, hue) -> grayscale -> blur -> hflip.
struct SimclrPolicy {
    double crop_scale_min = 0.2, crop_scale_max = 1.0;
    double crop_ratio_min = 0.75, crop_ratio_max = 1.33;
    ColorJitter jitter{0.4, 0.4, 0.4, 0.1};
    double grayscale_prob = 0.2;
    std::size_t blur_kernel = 23;
    double blur_sigma_min = 0.1, blur_sigma_max = 2.0;
    double hflip_prob = 0.5;
};

struct FinetunePolicy {
    double crop_scale_min = 0.8, crop_scale_max = 1.0;
    double crop_ratio_min = 0.75, crop_ratio_max = 4.0 / 3.0;
    double hflip_prob = 0.5;
    double vflip_prob = 0.5;
    double max_rotation_degrees = 15.0;
    ColorJitter jitter{0.2, 0.2, 0.0, 0.0};
};

/// Random draws behind one augmented view, kept so a view can be audited.
struct ViewDraws {
    CropBox crop;
    double brightness = 1.0, contrast = 1.0, saturation = 1.0, hue = 0.0;
    bool grayscale = false;
    double blur_sigma = 0.0;
    bool hflip = false;
    bool vflip = false;
    double rotation = 0.0;
};

struct AugmentedView {
    Image image;
    ViewDraws draws;
};

struct ViewPair {
    AugmentedView a, b;
};

/// Random-resized-crop box: up to ten attempts at a box with area fraction in
/// [scale_min, scale_max] and log-uniform aspect ratio; falls back to the
/// largest centered box within the ratio bounds.
CropBox sample_crop(std::size_t height, std::size_t width, double scale_min, double scale_max, double ratio_min,
                    double ratio_max, RngStream& rng);

/// Applies brightness, contrast, saturation, hue in that order; neutral factors are skipped.
Image apply_jitter(const Image& img, const ViewDraws& d);

/// One view at the source resolution.
AugmentedView simclr_view(const Image& img, const SimclrPolicy& policy, RngStream& rng);
/// Two views, each drawn from its own stream derived from `rng`.
ViewPair simclr_augment(const Image& img, const SimclrPolicy& policy, RngStream& rng);

AugmentedView finetune_augment(const Image& img, const FinetunePolicy& policy, RngStream& rng);

} // namespace hvt
