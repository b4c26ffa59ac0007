#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mani/data.hpp"
#include "mani/model.hpp"
#include "mani/pooling.hpp"

namespace mani {

struct TrainConfig {
    int warmup_iters = 1000;
    int joint_iters = 9000;
    int batch_size = 4;
    double learning_rate = 1e-3;
    std::string optimizer = "adam";
    double beta1 = 0.9;
    double beta2 = 0.999;
    double mi_weight = 1.0;
    PoolingStrategy pooling;
    std::uint64_t seed = 0;
    int eval_every = 500;
    bool deterministic = false;
    bool augment = true;
    // Iterations at the start of training during which backbone parameters are not updated.
    int freeze_backbone_iters = 0;
    ModelConfig model;

    void validate() const;
};

/// Synthetic-data settings: one geometry config plus a shift record per domain.
struct SynthSettings {
    SynthConfig base;
    DomainShift source_shift = default_source_shift();
    DomainShift target_shift = default_target_shift();

    [[nodiscard]] SynthConfig for_domain(Domain d) const;
};

/// Everything a run can be configured with.
struct RunConfig {
    TrainConfig train;
    SynthSettings synth;
};

/// Names accepted by apply_preset: "paper-semantic", "desk", "default".
std::vector<std::string> preset_names();
void apply_preset(RunConfig& config, const std::string& name);

/// Sets one key. Throws ConfigError for an unknown key or malformed value.
void set_key(RunConfig& config, const std::string& key, const std::string& value);
[[nodiscard]] std::string get_key(const RunConfig& config, const std::string& key);
[[nodiscard]] std::vector<std::string> config_keys();

/// Flat UTF-8 "key = value" lines; '#' starts a comment, blank lines ignored.
std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text);
void apply_key_values(RunConfig& config, const std::string& text);
void load_config_file(RunConfig& config, const std::string& path);

/// Every key, one per line, in config_keys() order.
[[nodiscard]] std::string to_key_values(const RunConfig& config);
[[nodiscard]] RunConfig from_key_values(const std::string& text);

/// Layered resolution: built-in defaults < preset < config file < flags.
RunConfig resolve_config(const std::string& preset, const std::string& config_file,
                         const std::vector<std::pair<std::string, std::string>>& flags);

/// 64-bit FNV-1a of the key=value dump, as 16 hex digits.
[[nodiscard]] std::string config_hash(const RunConfig& config);

}  // namespace mani
