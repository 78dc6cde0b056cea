#include "hvt/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "binary_io.hpp"
#include "hvt/errors.hpp"
#include "hvt/rng.hpp"

namespace hvt {

namespace {

constexpr char kImageMagic[8] = {'H', 'V', 'T', 'I', 'M', 'G', '1', '\0'};

struct Rgb {
    double r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v)
{
    h -= std::floor(h);
    const double h6 = h * 6.0;
    const int sector = static_cast<int>(h6) % 6;
    const double f = h6 - std::floor(h6);
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
    }
}

// Per-pixel lesion coverage in [0, 1] on a size x size canvas.
class Coverage {
public:
    explicit Coverage(std::size_t size) : size_(size), a_(size * size, 0.0) {}

    void disc(double cy, double cx, double radius)
    {
        paint([&](double y, double x) { return radius - std::hypot(y - cy, x - cx); });
    }
    void ring(double cy, double cx, double radius, double thickness)
    {
        paint([&](double y, double x) { return thickness / 2 - std::abs(std::hypot(y - cy, x - cx) - radius); });
    }
    // Band of half-width `half` around the line through (cy, cx) with direction angle `theta`.
    void band(double cy, double cx, double theta, double half)
    {
        const double ny = std::cos(theta), nx = -std::sin(theta);
        paint([&](double y, double x) { return half - std::abs((y - cy) * ny + (x - cx) * nx); });
    }
    void rect(double y0, double x0, double y1, double x1)
    {
        paint([&](double y, double x) { return std::min({y - y0, y1 - y, x - x0, x1 - x}); });
    }

    double operator()(std::size_t y, std::size_t x) const { return a_[y * size_ + x]; }

private:
    // `signed_distance` > 0 inside; one pixel of linear antialiasing at the boundary.
    template <typename F>
    void paint(F signed_distance)
    {
        for (std::size_t y = 0; y < size_; ++y)
            for (std::size_t x = 0; x < size_; ++x) {
                const double d = signed_distance(static_cast<double>(y) + 0.5, static_cast<double>(x) + 0.5);
                auto& v = a_[y * size_ + x];
                v = std::max(v, std::clamp(d + 0.5, 0.0, 1.0));
            }
    }

    std::size_t size_;
    std::vector<double> a_;
};

} // namespace

void ImageSet::add(Image img, std::int32_t label)
{
    if (images.empty() && height == 0 && width == 0) {
        height = img.height;
        width = img.width;
    }
    if (img.height != height || img.width != width || img.pixels.size() != height * width * 3)
        throw DimensionError("ImageSet::add: image is " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                             ", set holds " + std::to_string(height) + "x" + std::to_string(width));
    if (label < -1)
        throw InputError("ImageSet::add: label must be -1 or a class index");
    images.push_back(std::move(img));
    labels.push_back(label);
}

std::size_t ImageSet::num_classes() const
{
    std::int32_t mx = -1;
    for (auto l : labels)
        mx = std::max(mx, l);
    return static_cast<std::size_t>(mx + 1);
}

ImageSet ImageSet::subset(std::span<const std::size_t> indices) const
{
    ImageSet out;
    out.height = height;
    out.width = width;
    for (auto i : indices) {
        if (i >= size())
            throw InputError("ImageSet::subset: index out of range");
        out.images.push_back(images[i]);
        out.labels.push_back(labels[i]);
    }
    return out;
}

void save_images(const std::filesystem::path& path, const ImageSet& set)
{
    std::vector<unsigned char> out(kImageMagic, kImageMagic + 8);
    detail::put_le<std::uint64_t>(out, set.size());
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(set.height));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(set.width));
    detail::put_le<std::uint32_t>(out, 3);
    detail::put_le<std::uint32_t>(out, 0);
    out.reserve(out.size() + set.size() * (4 + set.height * set.width * 12));
    for (std::size_t i = 0; i < set.size(); ++i) {
        detail::put_le<std::int32_t>(out, set.labels[i]);
        for (float v : set.images[i].pixels)
            detail::put_le<float>(out, v);
    }
    detail::write_file(path, out);
}

ImageSet load_images(const std::filesystem::path& path)
{
    const auto data = detail::read_file(path);
    detail::ByteReader in(data, "image container " + path.string());
    if (data.size() < 8 || !std::equal(kImageMagic, kImageMagic + 8, data.begin()))
        throw BadMagicError("image container " + path.string() + ": bad magic");
    in.bytes(8);
    const auto count = in.get<std::uint64_t>();
    const auto h = in.get<std::uint32_t>();
    const auto w = in.get<std::uint32_t>();
    const auto channels = in.get<std::uint32_t>();
    const auto dtype = in.get<std::uint32_t>();
    if (channels != 3 || dtype != 0)
        throw FormatError("image container " + path.string() + ": only 3-channel f32 records are supported");
    const std::size_t record = 4 + static_cast<std::size_t>(h) * w * 3 * 4;
    if (count > in.remaining() / std::max<std::size_t>(record, 1) || in.remaining() != count * record)
        throw FormatError("image container " + path.string() + ": byte length does not match header");
    ImageSet set;
    set.height = h;
    set.width = w;
    set.images.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto label = in.get<std::int32_t>();
        if (label < -1)
            throw FormatError("image container " + path.string() + ": invalid label " + std::to_string(label));
        Image img(h, w);
        for (auto& v : img.pixels)
            v = in.get<float>();
        set.images.push_back(std::move(img));
        set.labels.push_back(label);
    }
    return set;
}

Image synthetic_image(std::size_t label, std::size_t size, RngStream& rng)
{
    if (label >= 7)
        throw InputError("synthetic_image: label must be below 7");
    if (size < 16)
        throw InputError("synthetic_image: size must be at least 16");
    const double S = static_cast<double>(size);
    Coverage cov(size);
    switch (label) {
    case 0: // healthy
        break;
    case 1: { // one or two large blotches
        const std::size_t n = 1 + rng.index(2);
        for (std::size_t i = 0; i < n; ++i)
            cov.disc(rng.uniform(0.25, 0.75) * S, rng.uniform(0.25, 0.75) * S, rng.uniform(0.14, 0.2) * S);
        break;
    }
    case 2: { // many small spots
        const std::size_t n = 12 + rng.index(9);
        for (std::size_t i = 0; i < n; ++i)
            cov.disc(rng.uniform(0.05, 0.95) * S, rng.uniform(0.05, 0.95) * S, rng.uniform(0.025, 0.045) * S);
        break;
    }
    case 3: { // parallel streaks
        const double theta = rng.uniform(0.0, std::numbers::pi);
        const std::size_t n = 3 + rng.index(2);
        const double gap = rng.uniform(0.16, 0.22) * S;
        const double offset = rng.uniform(-0.5, 0.5) * gap;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = (static_cast<double>(i) - static_cast<double>(n - 1) / 2.0) * gap + offset;
            cov.band(S / 2 + d * std::cos(theta), S / 2 - d * std::sin(theta), theta, 0.025 * S);
        }
        break;
    }
    case 4: { // ring spots
        const std::size_t n = 2 + rng.index(3);
        for (std::size_t i = 0; i < n; ++i)
            cov.ring(rng.uniform(0.15, 0.85) * S, rng.uniform(0.15, 0.85) * S, rng.uniform(0.08, 0.12) * S, 0.03 * S);
        break;
    }
    case 5: { // marginal scorch along two to four edges
        const double t = rng.uniform(0.1, 0.16) * S;
        const std::size_t first = rng.index(4), n = 2 + rng.index(3);
        for (std::size_t k = 0; k < n; ++k)
            switch ((first + k) % 4) {
            case 0: cov.rect(-1, -1, t, S + 1); break;
            case 1: cov.rect(S - t, -1, S + 1, S + 1); break;
            case 2: cov.rect(-1, -1, S + 1, t); break;
            default: cov.rect(-1, S - t, S + 1, S + 1); break;
            }
        break;
    }
    default: { // mosaic of small square patches
        const std::size_t cells = 8;
        const double c = S / static_cast<double>(cells);
        for (std::size_t gy = 0; gy < cells; ++gy)
            for (std::size_t gx = 0; gx < cells; ++gx)
                if (rng.bernoulli(0.3))
                    cov.rect(static_cast<double>(gy) * c, static_cast<double>(gx) * c, static_cast<double>(gy + 1) * c,
                             static_cast<double>(gx + 1) * c);
        break;
    }
    }

    // Colors and shading vary per image independently of the class.
    const Rgb leaf = hsv_to_rgb(rng.uniform(0.24, 0.36), rng.uniform(0.45, 0.75), rng.uniform(0.5, 0.8));
    const Rgb lesion = hsv_to_rgb(rng.uniform(0.04, 0.12), rng.uniform(0.5, 0.85), rng.uniform(0.2, 0.5));
    const double shade_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double shade = rng.uniform(0.0, 0.15);
    const double vein_theta = rng.uniform(0.0, std::numbers::pi);
    Coverage vein(size);
    vein.band(S / 2, S / 2, vein_theta, 0.012 * S);

    Image img(size, size);
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            const double u = (static_cast<double>(y) + 0.5) / S - 0.5, v = (static_cast<double>(x) + 0.5) / S - 0.5;
            const double light = 1.0 + shade * (u * std::cos(shade_angle) + v * std::sin(shade_angle)) * 2.0;
            const double a = cov(y, x), vn = 0.25 * vein(y, x);
            const double px[3] = {leaf.r, leaf.g, leaf.b}, lx[3] = {lesion.r, lesion.g, lesion.b};
            for (std::size_t ch = 0; ch < 3; ++ch) {
                const double base = px[ch] * (1 - vn) + vn;
                const double value = (base * (1 - a) + lx[ch] * a) * light + 0.03 * rng.normal();
                img.at(y, x, ch) = static_cast<float>(std::clamp(value, 0.0, 1.0));
            }
        }
    return img;
}

SyntheticData generate_synthetic(const SyntheticOptions& o)
{
    if (o.classes == 0 || o.classes > 7)
        throw ConfigError("generate_synthetic: between 1 and 7 classes are available");
    if (o.per_class == 0)
        throw ConfigError("generate_synthetic: per_class must be positive");
    RngStream root(o.seed, 0x5e7d);
    SyntheticData out;
    // Interleave classes so any prefix is roughly balanced.
    for (std::size_t i = 0; i < o.per_class; ++i)
        for (std::size_t c = 0; c < o.classes; ++c) {
            RngStream r = root.derive(i * o.classes + c);
            out.labeled.add(synthetic_image(c, o.size, r), static_cast<std::int32_t>(c));
        }
    out.unlabeled.height = out.unlabeled.width = o.size;
    RngStream pool = root.derive(~std::uint64_t{0});
    for (std::size_t i = 0; i < o.unlabeled; ++i) {
        RngStream r = pool.derive(i);
        const std::size_t c = r.index(o.classes);
        out.unlabeled.add(synthetic_image(c, o.size, r), -1);
    }
    return out;
}

Split stratified_split(const ImageSet& set, double val_fraction, double test_fraction, std::uint64_t seed)
{
    if (!(val_fraction >= 0 && test_fraction >= 0 && val_fraction + test_fraction < 1))
        throw ConfigError("stratified_split: fractions must be non-negative and sum below 1");
    const std::size_t classes = set.num_classes();
    std::vector<std::vector<std::size_t>> by_class(classes);
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (set.labels[i] < 0)
            throw InputError("stratified_split: unlabeled record " + std::to_string(i));
        by_class[static_cast<std::size_t>(set.labels[i])].push_back(i);
    }
    std::vector<int> assign(set.size(), 0); // 0 train, 1 val, 2 test
    RngStream rng(seed, 0x5b11);
    for (std::size_t c = 0; c < classes; ++c) {
        const auto& idx = by_class[c];
        if (idx.size() < 3)
            throw InputError("stratified_split: class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                             " samples, at least 3 required");
        const auto n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(idx.size())));
        const auto n_test = static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(idx.size())));
        const auto perm = rng.derive(c).permutation(idx.size());
        for (std::size_t k = 0; k < n_val; ++k)
            assign[idx[perm[k]]] = 1;
        for (std::size_t k = n_val; k < n_val + n_test; ++k)
            assign[idx[perm[k]]] = 2;
    }
    std::vector<std::size_t> parts[3];
    for (std::size_t i = 0; i < set.size(); ++i)
        parts[assign[i]].push_back(i);
    return {set.subset(parts[0]), set.subset(parts[1]), set.subset(parts[2])};
}

Tensor images_to_tensor(std::span<const Image> images, DType dtype)
{
    if (images.empty())
        throw InputError("images_to_tensor: empty batch");
    const std::size_t h = images[0].height, w = images[0].width;
    std::vector<float> values;
    values.reserve(images.size() * h * w * 3);
    for (const auto& img : images) {
        if (img.height != h || img.width != w)
            throw DimensionError("images_to_tensor: images differ in size");
        values.insert(values.end(), img.pixels.begin(), img.pixels.end());
    }
    Tensor t = Tensor::from_floats({images.size(), h, w, 3}, values);
    return dtype == DType::f32 ? t : t.to(dtype);
}

Tensor batch_tensor(const ImageSet& set, std::span<const std::size_t> indices, const Normalization& norm, DType dtype)
{
    std::vector<Image> imgs;
    imgs.reserve(indices.size());
    for (auto i : indices)
        imgs.push_back(normalize(set.images.at(i), norm));
    return images_to_tensor(imgs, dtype);
}

} // namespace hvt
