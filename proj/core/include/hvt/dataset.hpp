#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "hvt/image.hpp"
#include "hvt/rng.hpp"
#include "hvt/tensor.hpp"

namespace hvt {

/// Equally sized images with optional labels (-1 marks an unlabeled record).
struct ImageSet {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<Image> images;
    std::vector<std::int32_t> labels;

    std::size_t size() const { return images.size(); }
    void add(Image img, std::int32_t label);
    /// Largest label + 1 (0 when all records are unlabeled).
    std::size_t num_classes() const;
    ImageSet subset(std::span<const std::size_t> indices) const;
    bool operator==(const ImageSet&) const = default;
};

/// Image container layout, all integers and floats little-endian:
///   "HVTIMG1\0" | u64 count | u32 height | u32 width | u32 channels (3) | u32 dtype (0 = f32)
///   then per record: i32 label | height*width*3 f32 pixels (HWC)
void save_images(const std::filesystem::path& path, const ImageSet& set);
/// Throws BadMagicError / FormatError (unsupported header, size mismatch) / InputError (unreadable).
ImageSet load_images(const std::filesystem::path& path);

struct SyntheticOptions {
    std::size_t per_class = 40;
    std::size_t classes = 7;
    std::size_t size = 64;
    std::size_t unlabeled = 280;
    std::uint64_t seed = 0;
};

struct SyntheticData {
    ImageSet labeled;
    ImageSet unlabeled;
};

/// Procedural leaf-like images. Classes differ by lesion structure (count, size,
/// shape, texture); leaf and lesion colors are drawn per image independently of
/// the class. The unlabeled pool samples classes uniformly and drops the label.
SyntheticData generate_synthetic(const SyntheticOptions& options);
/// One synthetic image of class `label`, drawn from `rng`.
Image synthetic_image(std::size_t label, std::size_t size, RngStream& rng);

struct Split {
    ImageSet train, val, test;
};

/// Per class: floor(val_fraction * n) records to val, floor(test_fraction * n) to
/// test, the remainder to train, chosen by a seeded shuffle. Records keep their
/// original relative order inside each split.
Split stratified_split(const ImageSet& set, double val_fraction, double test_fraction, std::uint64_t seed);

/// Stacks (normalized) images into a [B, H, W, 3] tensor.
Tensor images_to_tensor(std::span<const Image> images, DType dtype = DType::f32);
Tensor batch_tensor(const ImageSet& set, std::span<const std::size_t> indices, const Normalization& norm,
                    DType dtype = DType::f32);

} // namespace hvt
