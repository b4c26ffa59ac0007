#include "mani/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "mani/image_io.hpp"

namespace mani {

const char* to_string(Domain d) { return d == Domain::source ? "source" : "target"; }
const char* to_string(Role r) { return r == Role::source_labeled ? "source_labeled" : "target_unlabeled"; }
const char* to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw ConfigError("unknown split '" + s + "' (expected train|val|test)");
}

Role parse_role(const std::string& s) {
    if (s == "source_labeled" || s == "source") return Role::source_labeled;
    if (s == "target_unlabeled" || s == "target") return Role::target_unlabeled;
    throw ConfigError("unknown role '" + s + "' (expected source_labeled|target_unlabeled)");
}

void DomainDataset::validate() const {
    if (samples.empty()) {
        throw DataError("dataset is empty");
    }
    for (const auto& s : samples) {
        if (role == Role::source_labeled && !s.mask) {
            throw DataError("source_labeled sample '" + s.id + "' has no mask");
        }
        for (float v : s.image.data) {
            if (!(v >= 0.0F && v <= 1.0F)) {
                throw DataError("sample '" + s.id + "' has image values outside [0,1]");
            }
        }
    }
}

void SynthConfig::validate() const {
    if (image_size <= 0) {
        throw ConfigError("image_size must be positive");
    }
    if (nuclei_count_range.first < 1 || nuclei_count_range.first > nuclei_count_range.second) {
        throw ConfigError("nuclei_count_range must satisfy 1 <= min <= max");
    }
    if (radius_range.first <= 0.0 || radius_range.first > radius_range.second) {
        throw ConfigError("radius_range must satisfy 0 < min <= max");
    }
    if (radius_range.second >= image_size / 2.0) {
        throw ConfigError("radius_range max must be below image_size/2");
    }
    if (!(shift.contrast_gamma > 0.0) || shift.noise_sigma < 0.0) {
        throw ConfigError("shift requires contrast_gamma > 0 and noise_sigma >= 0");
    }
}

DomainShift default_source_shift() { return DomainShift{0.0, 1.0, 0.02, 0.85}; }

DomainShift default_target_shift() { return DomainShift{1.1, 1.6, 0.06, 0.55}; }

namespace {

struct Ellipse {
    double cy, cx, ry, rx, angle;
};

bool inside(const Ellipse& e, double y, double x) {
    const double dy = y - e.cy;
    const double dx = x - e.cx;
    const double c = std::cos(e.angle);
    const double s = std::sin(e.angle);
    const double u = (dx * c + dy * s) / e.rx;
    const double v = (-dx * s + dy * c) / e.ry;
    return u * u + v * v <= 1.0;
}

// Rotation about the grey axis (1,1,1)/sqrt(3) by `theta` radians.
std::array<double, 9> hue_rotation(double theta) {
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    const double k = 1.0 / std::numbers::sqrt3;
    const double t = 1.0 - c;
    const double kk = k * k;
    return {c + kk * t, kk * t - k * s, kk * t + k * s,
            kk * t + k * s, c + kk * t, kk * t - k * s,
            kk * t - k * s, kk * t + k * s, c + kk * t};
}

Sample render_one(const SynthConfig& cfg, Domain domain, int index, Split split) {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed & 0xffffffffU),
                      static_cast<std::uint32_t>(cfg.seed >> 32U),
                      static_cast<std::uint32_t>(domain == Domain::source ? 0x5eedU : 0x7a57U),
                      static_cast<std::uint32_t>(split), static_cast<std::uint32_t>(index)};
    Rng rng(seq);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    const int size = cfg.image_size;
    std::uniform_int_distribution<int> count_dist(cfg.nuclei_count_range.first, cfg.nuclei_count_range.second);
    std::uniform_real_distribution<double> radius_dist(cfg.radius_range.first, cfg.radius_range.second);
    const int count = count_dist(rng);

    std::vector<Ellipse> nuclei;
    nuclei.reserve(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) {
        Ellipse e{};
        e.ry = radius_dist(rng);
        e.rx = radius_dist(rng);
        e.angle = unit(rng) * std::numbers::pi;
        const double r = std::max(e.rx, e.ry);
        // Rejection-sample a centre that does not overlap earlier nuclei; give up after 50 tries.
        for (int attempt = 0; attempt < 50; ++attempt) {
            e.cy = r + unit(rng) * (size - 2.0 * r);
            e.cx = r + unit(rng) * (size - 2.0 * r);
            const bool clear = std::none_of(nuclei.begin(), nuclei.end(), [&](const Ellipse& o) {
                const double d = std::hypot(o.cy - e.cy, o.cx - e.cx);
                return d < r + std::max(o.rx, o.ry) + 1.0;
            });
            if (clear) break;
        }
        nuclei.push_back(e);
    }

    // Low-frequency stroma texture: a few random plane waves.
    struct Wave { double fy, fx, phase, amp; };
    std::array<Wave, 4> waves{};
    for (auto& w : waves) {
        w.fy = (unit(rng) - 0.5) * 0.5;
        w.fx = (unit(rng) - 0.5) * 0.5;
        w.phase = unit(rng) * 2.0 * std::numbers::pi;
        w.amp = 0.03 + 0.03 * unit(rng);
    }

    const auto& shift = cfg.shift;
    const std::array<double, 3> stroma{0.95, 0.72, 0.84};
    const std::array<double, 3> nucleus{0.30, 0.16, 0.50};
    const double nucleus_tone = 0.85 + 0.3 * unit(rng);

    Sample s;
    s.id = std::string(to_string(domain)) + "_" + to_string(split) + "_" + std::to_string(index);
    s.domain = domain;
    s.image = Image(size, size, 3);
    Mask mask(size, size, 1, 0);
    InstanceMap inst(size, size, 1, 0);

    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double py = y + 0.5;
            const double px = x + 0.5;
            int label = 0;
            for (int k = 0; k < count; ++k) {
                if (inside(nuclei[static_cast<std::size_t>(k)], py, px)) {
                    label = k + 1;  // later ellipse wins
                }
            }
            inst.at(y, x) = label;
            mask.at(y, x) = label > 0 ? 1 : 0;
        }
    }

    const auto rot = hue_rotation(shift.hue_delta);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            double texture = 0.0;
            for (const auto& w : waves) {
                texture += w.amp * std::sin(w.fy * y + w.fx * x + w.phase);
            }
            std::array<double, 3> rgb{};
            const int label = inst.at(y, x);
            for (int c = 0; c < 3; ++c) {
                if (label > 0) {
                    rgb[c] = nucleus[c] * nucleus_tone + 0.5 * texture;
                } else {
                    rgb[c] = stroma[c] * (shift.background_level / 0.85) + texture;
                }
            }
            std::array<double, 3> shifted{};
            for (int r = 0; r < 3; ++r) {
                shifted[r] = rot[3 * r] * rgb[0] + rot[3 * r + 1] * rgb[1] + rot[3 * r + 2] * rgb[2];
            }
            for (int c = 0; c < 3; ++c) {
                double v = std::clamp(shifted[c], 0.0, 1.0);
                v = std::pow(v, shift.contrast_gamma);
                v += shift.noise_sigma * gauss(rng);
                s.image.at(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    }
    s.mask = std::move(mask);
    s.instances = std::move(inst);
    return s;
}

const std::array<const char*, 6> kImageExtensions{".png", ".tif", ".tiff", ".jpg", ".jpeg", ".bmp"};

bool has_image_extension(const std::filesystem::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return std::find(kImageExtensions.begin(), kImageExtensions.end(), ext) != kImageExtensions.end();
}

// basename -> file path for every image-like file in dir.
std::map<std::string, std::filesystem::path> index_dir(const std::filesystem::path& dir) {
    std::map<std::string, std::filesystem::path> out;
    if (!std::filesystem::is_directory(dir)) {
        return out;
    }
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && has_image_extension(entry.path())) {
            out.emplace(entry.path().stem().string(), entry.path());
        }
    }
    return out;
}

template <typename T>
Grid<T> rotate_grid(const Grid<T>& g, int quarter_turns) {
    const int k = ((quarter_turns % 4) + 4) % 4;
    if (k == 0) {
        return g;
    }
    if (g.height != g.width) {
        throw ShapeError("rotation augmentation requires square rasters");
    }
    const int n = g.height;
    Grid<T> out(n, n, g.channels);
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            int ny = y;
            int nx = x;
            switch (k) {
                case 1: ny = n - 1 - x; nx = y; break;          // 90 deg counter-clockwise
                case 2: ny = n - 1 - y; nx = n - 1 - x; break;
                case 3: ny = x; nx = n - 1 - y; break;
                default: break;
            }
            for (int c = 0; c < g.channels; ++c) {
                out.at(ny, nx, c) = g.at(y, x, c);
            }
        }
    }
    return out;
}

}  // namespace

DomainDataset generate_synthetic(const SynthConfig& config, int n, Domain domain, Split split) {
    config.validate();
    if (n < 1) {
        throw ConfigError("generate_synthetic requires n >= 1");
    }
    DomainDataset ds;
    ds.role = domain == Domain::source ? Role::source_labeled : Role::target_unlabeled;
    ds.split = split;
    ds.samples.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        ds.samples.push_back(render_one(config, domain, i, split));
    }
    return ds;
}

DomainDataset load_dataset(const std::filesystem::path& root, Role role, Split split) {
    const auto images_dir = root / "images";
    if (!std::filesystem::is_directory(images_dir)) {
        throw DataError("dataset root has no images/ directory: " + root.string());
    }
    const auto images = index_dir(images_dir);
    const auto masks = index_dir(root / "masks");
    const auto instances = index_dir(root / "instances");

    std::set<std::string> wanted;
    bool filter = false;
    if (const auto manifest = root / "manifest.txt"; std::filesystem::exists(manifest)) {
        filter = true;
        std::ifstream in(manifest);
        std::string line;
        while (std::getline(in, line)) {
            std::istringstream ls(line);
            std::string sp;
            std::string base;
            if (ls >> sp >> base && sp == to_string(split)) {
                wanted.insert(base);
            }
        }
    }

    DomainDataset ds;
    ds.role = role;
    ds.split = split;
    const Domain domain = role == Role::source_labeled ? Domain::source : Domain::target;
    for (const auto& [base, path] : images) {
        if (filter && !wanted.contains(base)) {
            continue;
        }
        Sample s;
        s.id = base;
        s.domain = domain;
        s.image = io::read_rgb(path);
        if (auto it = masks.find(base); it != masks.end()) {
            s.mask = binarize(io::read_gray8(it->second));
        } else if (role == Role::source_labeled) {
            throw DataError("missing mask for '" + base + "' in source_labeled dataset " + root.string());
        }
        if (auto it = instances.find(base); it != instances.end()) {
            s.instances = io::read_instances16(it->second);
            if (!s.instances->same_shape(s.image.height, s.image.width)) {
                throw DataError("instance map shape mismatch for '" + base + "'");
            }
        }
        if (s.mask && !s.mask->same_shape(s.image.height, s.image.width)) {
            throw DataError("mask shape mismatch for '" + base + "'");
        }
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

void write_dataset(const DomainDataset& dataset, const std::filesystem::path& root) {
    std::filesystem::create_directories(root / "images");
    std::ofstream manifest(root / "manifest.txt", std::ios::app);
    if (!manifest) {
        throw DataError("cannot write manifest in " + root.string());
    }
    for (const auto& s : dataset.samples) {
        io::write_rgb(root / "images" / (s.id + ".png"), s.image);
        if (s.mask) {
            std::filesystem::create_directories(root / "masks");
            io::write_mask(root / "masks" / (s.id + ".png"), *s.mask);
        }
        if (s.instances) {
            std::filesystem::create_directories(root / "instances");
            io::write_instances16(root / "instances" / (s.id + ".png"), *s.instances);
        }
        manifest << to_string(dataset.split) << '\t' << s.id << '\n';
    }
    if (!manifest) {
        throw DataError("failed writing manifest in " + root.string());
    }
}

Sample rotate_quarter_turns(const Sample& sample, int quarter_turns) {
    Sample out = sample;
    out.image = rotate_grid(sample.image, quarter_turns);
    if (sample.mask) out.mask = rotate_grid(*sample.mask, quarter_turns);
    if (sample.instances) out.instances = rotate_grid(*sample.instances, quarter_turns);
    return out;
}

Sample augment_rotation(const Sample& sample, Rng& rng) {
    std::uniform_int_distribution<int> turns(0, 3);
    return rotate_quarter_turns(sample, turns(rng));
}

PairBatch sample_pair_batch(const DomainDataset& source, const DomainDataset& target, int batch_size, Rng& rng) {
    if (source.empty() || target.empty()) {
        throw DataError("sample_pair_batch requires non-empty source and target datasets");
    }
    if (batch_size < 1) {
        throw ConfigError("batch_size must be positive");
    }
    std::uniform_int_distribution<std::size_t> pick_s(0, source.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_t(0, target.size() - 1);
    PairBatch batch;
    batch.pairs.reserve(static_cast<std::size_t>(batch_size));
    for (int i = 0; i < batch_size; ++i) {
        const std::size_t si = pick_s(rng);
        const std::size_t ti = pick_t(rng);
        if (source.samples[si].domain != Domain::source || target.samples[ti].domain != Domain::target) {
            throw DataError("sample_pair_batch: sample domain tag does not match its dataset side");
        }
        batch.pairs.push_back(SamplePair{source.samples[si], target.samples[ti], si, ti});
    }
    return batch;
}

Mask binarize(const Grid<std::uint8_t>& raw, std::uint8_t threshold) {
    Mask out(raw.height, raw.width, 1, 0);
    // 0/1-coded rasters would vanish under the 8-bit threshold.
    const bool unit_coded = std::all_of(raw.data.begin(), raw.data.end(), [](std::uint8_t v) { return v <= 1; });
    if (unit_coded) {
        threshold = 0;
    }
    for (int y = 0; y < raw.height; ++y) {
        for (int x = 0; x < raw.width; ++x) {
            out.at(y, x) = raw.at(y, x, 0) > threshold ? 1 : 0;
        }
    }
    return out;
}

Mask mask_from_instances(const InstanceMap& instances) {
    Mask out(instances.height, instances.width, 1, 0);
    for (std::size_t i = 0; i < instances.data.size(); ++i) {
        out.data[i] = instances.data[i] > 0 ? 1 : 0;
    }
    return out;
}

}  // namespace mani
