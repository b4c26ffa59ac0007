#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mani/types.hpp"

namespace mani {

/// One image with optional semantic mask and instance map.
struct Sample {
    std::string id;
    Image image;  // H x W x 3, values in [0,1]
    std::optional<Mask> mask;
    std::optional<InstanceMap> instances;
    Domain domain = Domain::source;

    bool operator==(const Sample&) const = default;
};

/// Ordered, immutable-after-construction collection of samples.
struct DomainDataset {
    std::vector<Sample> samples;
    Role role = Role::source_labeled;
    Split split = Split::train;

    [[nodiscard]] std::size_t size() const { return samples.size(); }
    [[nodiscard]] bool empty() const { return samples.empty(); }

    /// Throws DataError if the role/size invariants do not hold.
    void validate() const;

    bool operator==(const DomainDataset&) const = default;
};

struct SamplePair {
    Sample source;
    Sample target;
    std::size_t source_index = 0;
    std::size_t target_index = 0;
};

struct PairBatch {
    std::vector<SamplePair> pairs;
    [[nodiscard]] std::size_t size() const { return pairs.size(); }
};

/// Colour/intensity perturbation applied when rendering one synthetic domain.
struct DomainShift {
    double hue_delta = 0.0;        // radians of rotation about the grey axis
    double contrast_gamma = 1.0;   // v -> v^gamma
    double noise_sigma = 0.0;      // additive Gaussian noise
    double background_level = 0.85;

    bool operator==(const DomainShift&) const = default;
};

struct SynthConfig {
    int image_size = 64;
    std::pair<int, int> nuclei_count_range{4, 10};
    std::pair<double, double> radius_range{3.0, 7.0};
    DomainShift shift;
    std::uint64_t seed = 0;

    /// Throws ConfigError on inverted ranges or oversized radii.
    void validate() const;
};

/// Default shift records for the desk-scale source and target domains.
DomainShift default_source_shift();
DomainShift default_target_shift();

/// Renders n images of ellipse nuclei. Pure function of (config, n, domain).
DomainDataset generate_synthetic(const SynthConfig& config, int n, Domain domain, Split split = Split::train);

/// Reads root/{images,masks,instances}/<basename>.<ext>. When root/manifest.txt
/// exists only basenames listed under `split` are returned.
DomainDataset load_dataset(const std::filesystem::path& root, Role role, Split split);

/// Writes the dataset into root using the same layout load_dataset reads.
/// Appends "<split>\t<basename>" lines to root/manifest.txt.
void write_dataset(const DomainDataset& dataset, const std::filesystem::path& root);

/// Rotates image, mask and instance map counter-clockwise by quarter_turns * 90 degrees.
Sample rotate_quarter_turns(const Sample& sample, int quarter_turns);

/// Rotation by an angle drawn uniformly from {0, 90, 180, 270} degrees.
Sample augment_rotation(const Sample& sample, Rng& rng);

/// Draws batch_size (source, target) pairs, indices independent and uniform with replacement.
PairBatch sample_pair_batch(const DomainDataset& source, const DomainDataset& target, int batch_size, Rng& rng);

/// Binarises a grey raster: value > threshold -> 1.
Mask binarize(const Grid<std::uint8_t>& raw, std::uint8_t threshold = 127);

/// mask[p] = 1 iff instances[p] > 0.
Mask mask_from_instances(const InstanceMap& instances);

}  // namespace mani
