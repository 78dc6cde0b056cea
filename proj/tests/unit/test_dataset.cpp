#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "doctest.h"
#include "hvt/dataset.hpp"
#include "hvt/errors.hpp"
#include "hvt/ssl.hpp"

using namespace hvt;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name)
{
    const fs::path dir = fs::temp_directory_path() / "hvt_test_dataset";
    fs::create_directories(dir);
    return dir / name;
}

std::vector<unsigned char> read_bytes(const fs::path& p)
{
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& b)
{
    std::ofstream f(p, std::ios::binary);
    f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

ImageSet labeled_set(std::size_t per_class, std::size_t classes)
{
    ImageSet s;
    s.height = s.width = 2;
    for (std::size_t i = 0; i < per_class; ++i)
        for (std::size_t c = 0; c < classes; ++c)
            s.add(Image(2, 2, static_cast<float>(s.size()) / 1000.0f), static_cast<std::int32_t>(c));
    return s;
}

std::map<std::int32_t, std::size_t> class_counts(const ImageSet& s)
{
    std::map<std::int32_t, std::size_t> m;
    for (auto l : s.labels)
        ++m[l];
    return m;
}

} // namespace

TEST_CASE("synthetic generator")
{
    SyntheticOptions o;
    o.per_class = 6;
    o.unlabeled = 10;
    o.size = 32;
    o.seed = 42;
    const SyntheticData a = generate_synthetic(o);
    const SyntheticData b = generate_synthetic(o);

    CHECK(a.labeled == b.labeled);
    CHECK(a.unlabeled == b.unlabeled);
    CHECK(a.labeled.size() == 42);
    CHECK(a.unlabeled.size() == 10);
    CHECK(a.labeled.num_classes() == 7);
    const auto counts = class_counts(a.labeled);
    for (std::int32_t c = 0; c < 7; ++c)
        CHECK(counts.at(c) == 6);
    for (auto l : a.unlabeled.labels)
        CHECK(l == -1);
    for (const auto& img : a.labeled.images)
        for (float v : img.pixels) {
            REQUIRE(v >= 0.0f);
            REQUIRE(v <= 1.0f);
        }

    o.seed = 43;
    CHECK_FALSE(generate_synthetic(o).labeled == a.labeled);
}

TEST_CASE("synthetic classes are learnable from raw pixels")
{
    SyntheticOptions o;
    o.per_class = 30;
    o.unlabeled = 0;
    o.seed = 3;
    const ImageSet set = generate_synthetic(o).labeled;
    std::vector<std::vector<double>> tx, ex;
    std::vector<std::int32_t> ty, ey;
    for (std::size_t i = 0; i < set.size(); ++i) {
        const Image small = resize(set.images[i], 8, 8);
        std::vector<double> f(small.pixels.begin(), small.pixels.end());
        (i % 3 == 0 ? ex : tx).push_back(f);
        (i % 3 == 0 ? ey : ty).push_back(set.labels[i]);
    }
    const LinearProbeResult r = linear_probe(tx, ty, ex, ey, 7);
    CHECK(r.test_accuracy > 1.0 / 7.0);
}

TEST_CASE("image container")
{
    SyntheticOptions o;
    o.per_class = 2;
    o.unlabeled = 3;
    o.size = 16;
    const SyntheticData d = generate_synthetic(o);
    const fs::path p = temp_path("labeled.hvtimg");

    SUBCASE("round trip is exact and the size is header-implied")
    {
        save_images(p, d.labeled);
        CHECK(load_images(p) == d.labeled);
        CHECK(fs::file_size(p) == 8 + 8 + 16 + d.labeled.size() * (4 + 16 * 16 * 3 * 4));
        const fs::path q = temp_path("unlabeled.hvtimg");
        save_images(q, d.unlabeled);
        CHECK(load_images(q) == d.unlabeled);
    }
    SUBCASE("same data gives identical bytes")
    {
        const fs::path q = temp_path("again.hvtimg");
        save_images(p, d.labeled);
        save_images(q, generate_synthetic(o).labeled);
        CHECK(read_bytes(p) == read_bytes(q));
    }
    SUBCASE("corrupted files")
    {
        save_images(p, d.labeled);
        auto bytes = read_bytes(p);
        const fs::path q = temp_path("bad.hvtimg");

        auto magic = bytes;
        magic[0] = 'X';
        write_bytes(q, magic);
        CHECK_THROWS_AS(load_images(q), BadMagicError);

        auto truncated = bytes;
        truncated.pop_back();
        write_bytes(q, truncated);
        CHECK_THROWS_AS(load_images(q), FormatError);

        auto extra = bytes;
        extra.push_back(0);
        write_bytes(q, extra);
        CHECK_THROWS_AS(load_images(q), FormatError);

        CHECK_THROWS_AS(load_images(temp_path("missing.hvtimg")), InputError);
    }
}

TEST_CASE("stratified_split")
{
    SUBCASE("divisible case")
    {
        const Split s = stratified_split(labeled_set(100, 3), 0.15, 0.15, 1);
        for (std::int32_t c = 0; c < 3; ++c) {
            CHECK(class_counts(s.train).at(c) == 70);
            CHECK(class_counts(s.val).at(c) == 15);
            CHECK(class_counts(s.test).at(c) == 15);
        }
    }
    SUBCASE("remainder goes to train")
    {
        const Split s = stratified_split(labeled_set(10, 2), 0.15, 0.15, 1);
        CHECK(class_counts(s.train).at(1) == 8);
        CHECK(class_counts(s.val).at(1) == 1);
        CHECK(class_counts(s.test).at(1) == 1);
    }
    SUBCASE("partition and determinism")
    {
        const ImageSet set = labeled_set(13, 4);
        const Split a = stratified_split(set, 0.15, 0.15, 7);
        const Split b = stratified_split(set, 0.15, 0.15, 7);
        CHECK(a.train == b.train);
        CHECK(a.test == b.test);
        std::multiset<float> all, parts;
        for (const auto& img : set.images)
            all.insert(img.pixels[0]);
        for (const ImageSet* s : {&a.train, &a.val, &a.test})
            for (const auto& img : s->images)
                parts.insert(img.pixels[0]);
        CHECK(all == parts);
        CHECK(std::set<float>(parts.begin(), parts.end()).size() == set.size());
        const Split c = stratified_split(set, 0.15, 0.15, 8);
        CHECK_FALSE(c.val == a.val);
    }
    SUBCASE("small class is rejected")
    {
        ImageSet set = labeled_set(5, 2);
        set.add(Image(2, 2), 2);
        set.add(Image(2, 2), 2);
        CHECK_THROWS_AS(stratified_split(set, 0.15, 0.15, 1), InputError);
    }
}

TEST_CASE("batch_tensor")
{
    ImageSet set;
    set.height = 2;
    set.width = 3;
    set.add(Image(2, 3, 0.5f), 0);
    set.add(Image(2, 3, 0.75f), 1);
    const std::size_t idx[] = {1, 0};
    const Tensor t = batch_tensor(set, idx, Normalization{});
    CHECK(t.shape() == Shape{2, 2, 3, 3});
    const auto v = t.to_vector();
    CHECK(v.front() == doctest::Approx(1.0));
    CHECK(v.back() == doctest::Approx(0.0));
}
