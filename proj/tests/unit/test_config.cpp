#include <set>

#include "doctest.h"
#include "hvt/config.hpp"
#include "hvt/errors.hpp"

using namespace hvt;

TEST_CASE("defaults")
{
    const RunConfig c;
    CHECK(c.model == HVTConfig::xl());
    CHECK(c.model.patch_size == 14);
    CHECK(c.model.image_height == 448);
    CHECK(c.model.depths == std::array<std::size_t, 4>{3, 6, 24, 3});
    CHECK(c.model.dims == std::array<std::size_t, 4>{192, 384, 768, 1536});
    CHECK(c.model.drop_path_max == 0.3);
    CHECK(c.pretrain.temperature == 0.5);
    CHECK(c.pretrain.epochs == 80);
    CHECK(c.pretrain.lr == 5e-4);
    CHECK(c.finetune.lr_max == 0.1);
    CHECK(c.finetune.loss.ce_weight == 0.7);
    CHECK(c.finetune.loss.focal_weight == 0.3);
    CHECK(c.finetune.loss.gamma == 2.0);
    CHECK(c.finetune.ema_beta == 0.9999);
    CHECK(c.finetune.layer_decay == 0.65);
    CHECK(c.finetune.mix.cutmix_prob == 0.5);
    CHECK(c.finetune.mix.mixup_prob == 0.2);
    CHECK(c.eval.ece_bins == 15);
    CHECK(parse_config("").model == HVTConfig::xl());
}

TEST_CASE("parsing")
{
    SUBCASE("preset then overrides, comments and whitespace")
    {
        const RunConfig c = parse_config("# run\n[model]\n  patch_size = 4 ; small\npreset = tiny\n\n"
                                         "[pretrain]\nlr=0.01\nproj_batch_norm = false\n"
                                         "[eval]\ntta = false\n");
        CHECK(c.preset == "tiny");
        CHECK(c.model.patch_size == 4);
        CHECK(c.model.dims == HVTConfig::tiny().dims);
        CHECK(c.pretrain.lr == 0.01);
        CHECK_FALSE(c.pretrain.proj_batch_norm);
        CHECK_FALSE(c.eval.tta);
    }
    SUBCASE("normalization is shared by both stages")
    {
        const RunConfig c = parse_config("[data]\nmean = 0.1, 0.2, 0.3\n");
        CHECK(c.pretrain.norm.mean[1] == doctest::Approx(0.2));
        CHECK(c.finetune.norm.mean[2] == doctest::Approx(0.3));
    }
    SUBCASE("rejections")
    {
        for (const char* bad : {"[model]\nnope = 1\n", "[nowhere]\nx = 1\n", "lr = 1\n",
                                "[pretrain]\nlr = 1\nlr = 2\n", "[pretrain]\nlr = fast\n",
                                "[model]\npreset = huge\n", "[model]\ndepths = 1,2\n",
                                "[data]\nval_fraction = 0.6\ntest_fraction = 0.6\n", "[eval]\nece_bins = 0\n",
                                "[eval]\ntta = maybe\n", "[model]\npreset = tiny\ndims = 8,17,32,64\n"})
            CHECK_THROWS_AS(parse_config(bad), ConfigError);
        try {
            parse_config("[eval]\n\nbogus = 3\n");
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find("line 3") != std::string::npos);
        }
    }
}

TEST_CASE("canonical text")
{
    const RunConfig c = parse_config("[model]\npreset = desk\ndrop_path = 0.1\n[finetune]\nlr_max = 0.003\n"
                                     "[data]\nper_class = 12\n");
    const std::string text = to_text(c);
    const RunConfig back = parse_config(text);
    CHECK(to_text(back) == text);
    CHECK(back.model == c.model);
    CHECK(back.finetune.lr_max == 0.003);
    CHECK(back.data.per_class == 12);
    CHECK(to_text(parse_config(to_text(RunConfig{}))) == to_text(RunConfig{}));
}

TEST_CASE("key registry")
{
    std::set<std::string> seen;
    for (const auto& k : config_keys()) {
        CHECK_FALSE(k.description.empty());
        CHECK(seen.insert(k.section + "." + k.key).second);
    }
    CHECK(seen.count("model.preset") == 1);
    CHECK(seen.count("finetune.focal_gamma") == 1);
    CHECK(seen.count("eval.ece_bins") == 1);
    CHECK_THROWS_AS(load_config("/nonexistent/run.ini"), InputError);
}
