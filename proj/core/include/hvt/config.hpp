#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "hvt/finetune.hpp"
#include "hvt/image.hpp"
#include "hvt/metrics.hpp"
#include "hvt/model.hpp"
#include "hvt/ssl.hpp"

namespace hvt {

struct DataOptions {
    std::size_t per_class = 40;
    std::size_t unlabeled = 280;
    double val_fraction = 0.15;
    double test_fraction = 0.15;
    Normalization norm;
};

struct EvalOptions {
    std::size_t ece_bins = 15;
    bool tta = true;
    double tta_crop_ratio = 0.875;
    TemperatureOptions temperature;
    std::size_t batch_size = 64;
};

/// Every tunable of a pipeline run. Defaults reproduce the published recipe; the
/// [model] preset key selects the architecture before individual overrides apply.
struct RunConfig {
    std::string preset = "xl";
    HVTConfig model = HVTConfig::xl();
    DataOptions data;
    PretrainOptions pretrain;
    FinetuneOptions finetune;
    EvalOptions eval;
};

/// Parses INI text with sections [model], [data], [pretrain], [finetune], [eval].
/// Lines are `key = value`; `#` and `;` start comments. Unknown sections or keys,
/// malformed values and duplicate keys raise ConfigError naming the line.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

/// Canonical text of every key in registry order; parse_config(to_text(c)) == c.
std::string to_text(const RunConfig& config);

struct ConfigKey {
    std::string section;
    std::string key;
    std::string description; ///< meaning and unit
};
/// All recognized keys, in canonical order.
const std::vector<ConfigKey>& config_keys();

} // namespace hvt
