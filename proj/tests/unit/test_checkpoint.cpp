#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "hvt/checkpoint.hpp"
#include "hvt/errors.hpp"
#include "hvt/model.hpp"

using namespace hvt;
namespace fs = std::filesystem;

namespace {

Checkpoint sample(std::uint64_t seed)
{
    RngStream rng(seed);
    Checkpoint c;
    c.config_text = "[model]\npreset = tiny\n";
    c.params = init_params(HVTConfig::tiny(), rng);
    c.state.add("ema/extra", Tensor::from_values({2, 3}, {1, -2, 3.5, 1e-300, 0, -0.0}, DType::f64));
    return c;
}

bool same(const ParamSet& a, const ParamSet& b)
{
    if (!a.same_layout(b))
        return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].tensor.dtype() != b[i].tensor.dtype() || a[i].tensor.to_vector() != b[i].tensor.to_vector())
            return false;
    return true;
}

} // namespace

TEST_CASE("checkpoint round trip")
{
    const Checkpoint c = sample(1);
    const auto bytes = serialize_checkpoint(c);
    const Checkpoint back = deserialize_checkpoint(bytes);
    CHECK(back.config_text == c.config_text);
    CHECK(same(back.params, c.params));
    CHECK(same(back.state, c.state));
    CHECK(serialize_checkpoint(back) == bytes);

    const fs::path p = fs::temp_directory_path() / "hvt_test_checkpoint.ckpt";
    save_checkpoint(p, c);
    CHECK(same(load_checkpoint(p).params, c.params));
    CHECK(serialize_checkpoint(sample(1)) == bytes);
    CHECK_THROWS_AS(load_checkpoint(p.string() + ".missing"), InputError);
}

TEST_CASE("checkpoint corruption")
{
    const auto bytes = serialize_checkpoint(sample(2));

    SUBCASE("payload bit flip")
    {
        auto b = bytes;
        b[b.size() - 40] ^= 0x01;
        CHECK_THROWS_AS(deserialize_checkpoint(b), ChecksumError);
    }
    SUBCASE("magic")
    {
        auto b = bytes;
        b[3] = 'x';
        CHECK_THROWS_AS(deserialize_checkpoint(b), BadMagicError);
    }
    SUBCASE("version")
    {
        auto b = bytes;
        b[8] = static_cast<unsigned char>(kCheckpointVersion + 1);
        CHECK_THROWS_AS(deserialize_checkpoint(b), VersionError);
    }
    SUBCASE("truncation at every prefix length class")
    {
        for (std::size_t n : {std::size_t{0}, std::size_t{5}, std::size_t{12}, std::size_t{30}, bytes.size() / 2,
                              bytes.size() - 1}) {
            const std::vector<unsigned char> b(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(n));
            CHECK_THROWS_AS(deserialize_checkpoint(b), FormatError);
        }
    }
}

TEST_CASE("load_params_into")
{
    const Checkpoint c = sample(3);
    RngStream rng(9);

    SUBCASE("matching layout copies values and converts dtype")
    {
        ParamSet target = init_params(HVTConfig::tiny(), rng, DType::f64);
        load_params_into(c.params, target);
        for (std::size_t i = 0; i < target.size(); ++i)
            CHECK(target[i].tensor.to_vector() == c.params[i].tensor.to_vector());
        CHECK(target[0].tensor.dtype() == DType::f64);
    }
    SUBCASE("architecture mismatch")
    {
        ParamSet other = init_params(HVTConfig::desk(), rng);
        CHECK_THROWS_AS(load_params_into(c.params, other), ManifestError);
    }
    SUBCASE("missing tensor")
    {
        ParamSet target = init_params(HVTConfig::tiny(), rng);
        target.add("extra/weight", Tensor::zeros({2}));
        CHECK_THROWS_AS(load_params_into(c.params, target), ManifestError);
    }
}
