#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mani {

/// Random engine used by every stochastic operation. Callers own the state
/// and pass it explicitly; nothing in the library seeds from global state.
using Rng = std::mt19937_64;

/// Dense row-major H x W x C raster. Used for images (float), masks
/// (uint8_t) and instance maps (int32_t).
template <typename T>
struct Grid {
    int height = 0;
    int width = 0;
    int channels = 1;
    std::vector<T> data;

    Grid() = default;
    Grid(int h, int w, int c = 1, T fill = T{})
        : height(h), width(w), channels(c),
          data(static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * static_cast<std::size_t>(c), fill) {}

    [[nodiscard]] std::size_t pixels() const {
        return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
    }
    [[nodiscard]] std::size_t index(int y, int x, int c = 0) const {
        return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) *
                   static_cast<std::size_t>(channels) +
               static_cast<std::size_t>(c);
    }
    T& at(int y, int x, int c = 0) { return data[index(y, x, c)]; }
    const T& at(int y, int x, int c = 0) const { return data[index(y, x, c)]; }

    [[nodiscard]] bool same_shape(int h, int w) const { return height == h && width == w; }
    [[nodiscard]] std::span<const T> view() const { return data; }

    bool operator==(const Grid&) const = default;
};

using Image = Grid<float>;
using Mask = Grid<std::uint8_t>;
using InstanceMap = Grid<std::int32_t>;

enum class Domain { source, target };
enum class Role { source_labeled, target_unlabeled };
enum class Split { train, val, test };

const char* to_string(Domain d);
const char* to_string(Role r);
const char* to_string(Split s);
Split parse_split(const std::string& s);
Role parse_role(const std::string& s);

/// Invalid configuration values or inconsistent ranges.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dataset contract violations and unreadable files.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shape contract violations.
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// NaN/Inf in a loss. Carries the ids of the batch that produced it.
class NumericalError : public std::runtime_error {
public:
    NumericalError(const std::string& what, std::vector<std::string> batch_ids)
        : std::runtime_error(what), batch_ids_(std::move(batch_ids)) {}
    [[nodiscard]] const std::vector<std::string>& batch_ids() const { return batch_ids_; }

private:
    std::vector<std::string> batch_ids_;
};

}  // namespace mani
