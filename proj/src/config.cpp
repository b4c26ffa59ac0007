#include "mani/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace mani {

void TrainConfig::validate() const {
    if (warmup_iters < 0 || joint_iters < 0) throw ConfigError("iteration counts must be non-negative");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (optimizer != "adam") throw ConfigError("optimizer must be 'adam'");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam betas must be in [0,1)");
    if (!(mi_weight >= 0.0)) throw ConfigError("mi_weight must be non-negative");
    if (eval_every < 1) throw ConfigError("eval_every must be positive");
    if (freeze_backbone_iters < 0) throw ConfigError("freeze_backbone_iters must be non-negative");
    pooling.validate();
    model.validate();
}

SynthConfig SynthSettings::for_domain(Domain d) const {
    SynthConfig c = base;
    c.shift = d == Domain::source ? source_shift : target_shift;
    return c;
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const auto v = trim(value);
    const auto* end = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc{} || ptr != end) {
        throw ConfigError("invalid value '" + value + "' for key '" + key + "'");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    const auto v = trim(value);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("invalid boolean '" + value + "' for key '" + key + "'");
}

std::string num(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, r.ptr};
}

struct Field {
    std::string key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define MANI_INT_FIELD(name, expr)                                                                   \
    Field{name, [](RunConfig& c, const std::string& v) { c.expr = parse_number<int>(name, v); },     \
          [](const RunConfig& c) { return std::to_string(c.expr); }}
#define MANI_REAL_FIELD(name, expr)                                                                  \
    Field{name, [](RunConfig& c, const std::string& v) { c.expr = parse_number<double>(name, v); },  \
          [](const RunConfig& c) { return num(c.expr); }}
#define MANI_BOOL_FIELD(name, expr)                                                                  \
    Field{name, [](RunConfig& c, const std::string& v) { c.expr = parse_bool(name, v); },            \
          [](const RunConfig& c) { return std::string(c.expr ? "true" : "false"); }}

const std::vector<Field>& fields() {
    static const std::vector<Field> kFields = {
        MANI_INT_FIELD("warmup_iters", train.warmup_iters),
        MANI_INT_FIELD("joint_iters", train.joint_iters),
        MANI_INT_FIELD("batch_size", train.batch_size),
        MANI_REAL_FIELD("learning_rate", train.learning_rate),
        Field{"optimizer", [](RunConfig& c, const std::string& v) { c.train.optimizer = trim(v); },
              [](const RunConfig& c) { return c.train.optimizer; }},
        MANI_REAL_FIELD("adam_beta1", train.beta1),
        MANI_REAL_FIELD("adam_beta2", train.beta2),
        MANI_REAL_FIELD("mi_weight", train.mi_weight),
        Field{"pooling", [](RunConfig& c, const std::string& v) { c.train.pooling.kind = parse_pooling_kind(trim(v)); },
              [](const RunConfig& c) { return std::string(to_string(c.train.pooling.kind)); }},
        MANI_INT_FIELD("pooling_n", train.pooling.n_pixels),
        Field{"seed", [](RunConfig& c, const std::string& v) { c.train.seed = parse_number<std::uint64_t>("seed", v); },
              [](const RunConfig& c) { return std::to_string(c.train.seed); }},
        MANI_INT_FIELD("eval_every", train.eval_every),
        MANI_BOOL_FIELD("deterministic", train.deterministic),
        MANI_BOOL_FIELD("augment", train.augment),
        MANI_INT_FIELD("freeze_backbone_iters", train.freeze_backbone_iters),
        MANI_INT_FIELD("model.base_width", train.model.base_width),
        MANI_INT_FIELD("model.depth", train.model.depth),
        MANI_INT_FIELD("model.disc_hidden_width", train.model.disc_hidden_width),
        MANI_INT_FIELD("model.disc_hidden_layers", train.model.disc_hidden_layers),
        MANI_INT_FIELD("synth.image_size", synth.base.image_size),
        MANI_INT_FIELD("synth.nuclei_min", synth.base.nuclei_count_range.first),
        MANI_INT_FIELD("synth.nuclei_max", synth.base.nuclei_count_range.second),
        MANI_REAL_FIELD("synth.radius_min", synth.base.radius_range.first),
        MANI_REAL_FIELD("synth.radius_max", synth.base.radius_range.second),
        Field{"synth.seed",
              [](RunConfig& c, const std::string& v) { c.synth.base.seed = parse_number<std::uint64_t>("synth.seed", v); },
              [](const RunConfig& c) { return std::to_string(c.synth.base.seed); }},
        MANI_REAL_FIELD("synth.source.hue_delta", synth.source_shift.hue_delta),
        MANI_REAL_FIELD("synth.source.contrast_gamma", synth.source_shift.contrast_gamma),
        MANI_REAL_FIELD("synth.source.noise_sigma", synth.source_shift.noise_sigma),
        MANI_REAL_FIELD("synth.source.background_level", synth.source_shift.background_level),
        MANI_REAL_FIELD("synth.target.hue_delta", synth.target_shift.hue_delta),
        MANI_REAL_FIELD("synth.target.contrast_gamma", synth.target_shift.contrast_gamma),
        MANI_REAL_FIELD("synth.target.noise_sigma", synth.target_shift.noise_sigma),
        MANI_REAL_FIELD("synth.target.background_level", synth.target_shift.background_level),
    };
    return kFields;
}

#undef MANI_INT_FIELD
#undef MANI_REAL_FIELD
#undef MANI_BOOL_FIELD

const Field& find_field(const std::string& key) {
    for (const auto& f : fields()) {
        if (f.key == key) return f;
    }
    throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

std::vector<std::string> preset_names() { return {"default", "paper-semantic", "desk"}; }

void apply_preset(RunConfig& config, const std::string& name) {
    if (name == "default") {
        config = RunConfig{};
    } else if (name == "paper-semantic") {
        // Semantic-segmentation schedule with a full-width U-Net.
        config.train.warmup_iters = 1000;
        config.train.joint_iters = 9000;
        config.train.batch_size = 4;
        config.train.learning_rate = 1e-3;
        config.train.optimizer = "adam";
        config.train.beta1 = 0.9;
        config.train.beta2 = 0.999;
        config.train.mi_weight = 1.0;
        config.train.model.base_width = 64;
        config.train.model.depth = 5;
    } else if (name == "desk") {
        config.train.warmup_iters = 300;
        config.train.joint_iters = 1200;
        config.train.batch_size = 4;
        config.train.learning_rate = 1e-3;
        config.train.eval_every = 100;
        config.train.model.base_width = 16;
        config.train.model.depth = 3;
        config.synth.base.image_size = 64;
    } else {
        throw ConfigError("unknown preset '" + name + "'");
    }
}

void set_key(RunConfig& config, const std::string& key, const std::string& value) { find_field(trim(key)).set(config, value); }

std::string get_key(const RunConfig& config, const std::string& key) { return find_field(trim(key)).get(config); }

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& f : fields()) keys.push_back(f.key);
    return keys;
}

std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + " is not key=value: '" + line + "'");
        }
        out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return out;
}

void apply_key_values(RunConfig& config, const std::string& text) {
    for (const auto& [k, v] : parse_key_values(text)) set_key(config, k, v);
}

void load_config_file(RunConfig& config, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    apply_key_values(config, buf.str());
}

std::string to_key_values(const RunConfig& config) {
    std::string out;
    for (const auto& f : fields()) {
        out += f.key + " = " + f.get(config) + "\n";
    }
    return out;
}

RunConfig from_key_values(const std::string& text) {
    RunConfig c;
    apply_key_values(c, text);
    return c;
}

RunConfig resolve_config(const std::string& preset, const std::string& config_file,
                         const std::vector<std::pair<std::string, std::string>>& flags) {
    RunConfig c;
    if (!preset.empty()) apply_preset(c, preset);
    if (!config_file.empty()) load_config_file(c, config_file);
    for (const auto& [k, v] : flags) set_key(c, k, v);
    c.train.validate();
    c.synth.for_domain(Domain::source).validate();
    c.synth.for_domain(Domain::target).validate();
    return c;
}

std::string config_hash(const RunConfig& config) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : to_key_values(config)) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace mani
