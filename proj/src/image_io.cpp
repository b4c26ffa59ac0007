#include "mani/image_io.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace mani::io {
namespace {

cv::Mat read_any(const std::filesystem::path& path, int flags) {
    cv::Mat m = cv::imread(path.string(), flags);
    if (m.empty()) {
        throw DataError("cannot read image file: " + path.string());
    }
    return m;
}

void write_or_throw(const std::filesystem::path& path, const cv::Mat& m) {
    bool ok = false;
    try {
        ok = cv::imwrite(path.string(), m);
    } catch (const cv::Exception& e) {
        throw DataError("cannot write image file " + path.string() + ": " + e.what());
    }
    if (!ok) {
        throw DataError("cannot write image file: " + path.string());
    }
}

}  // namespace

Image read_rgb(const std::filesystem::path& path) {
    cv::Mat m = read_any(path, cv::IMREAD_UNCHANGED);
    double scale = 1.0;
    switch (m.depth()) {
        case CV_8U: scale = 1.0 / 255.0; break;
        case CV_16U: scale = 1.0 / 65535.0; break;
        case CV_32F:
        case CV_64F: scale = 1.0; break;
        default: throw DataError("unsupported pixel depth in " + path.string());
    }
    cv::Mat rgb;
    switch (m.channels()) {
        case 1: cv::cvtColor(m, rgb, cv::COLOR_GRAY2RGB); break;
        case 3: cv::cvtColor(m, rgb, cv::COLOR_BGR2RGB); break;
        case 4: cv::cvtColor(m, rgb, cv::COLOR_BGRA2RGB); break;
        default: throw DataError("unsupported channel count in " + path.string());
    }
    cv::Mat f;
    rgb.convertTo(f, CV_32FC3, scale);

    Image out(f.rows, f.cols, 3);
    for (int y = 0; y < f.rows; ++y) {
        const auto* row = f.ptr<cv::Vec3f>(y);
        for (int x = 0; x < f.cols; ++x) {
            for (int c = 0; c < 3; ++c) {
                out.at(y, x, c) = std::clamp(row[x][c], 0.0F, 1.0F);
            }
        }
    }
    return out;
}

Grid<std::uint8_t> read_gray8(const std::filesystem::path& path) {
    cv::Mat m = read_any(path, cv::IMREAD_UNCHANGED);
    if (m.channels() != 1) {
        cv::Mat g;
        cv::cvtColor(m, g, m.channels() == 4 ? cv::COLOR_BGRA2GRAY : cv::COLOR_BGR2GRAY);
        m = g;
    }
    if (m.depth() != CV_8U) {
        // 16-bit masks: anything nonzero counts as foreground after scaling to 0/255.
        cv::Mat nz = m > 0;
        m = nz;
    }
    Grid<std::uint8_t> out(m.rows, m.cols, 1);
    for (int y = 0; y < m.rows; ++y) {
        std::copy_n(m.ptr<std::uint8_t>(y), m.cols, out.data.begin() + static_cast<std::ptrdiff_t>(out.index(y, 0)));
    }
    return out;
}

InstanceMap read_instances16(const std::filesystem::path& path) {
    cv::Mat m = read_any(path, cv::IMREAD_UNCHANGED);
    if (m.channels() != 1) {
        throw DataError("instance map must be single-channel: " + path.string());
    }
    InstanceMap out(m.rows, m.cols, 1);
    for (int y = 0; y < m.rows; ++y) {
        for (int x = 0; x < m.cols; ++x) {
            switch (m.depth()) {
                case CV_8U: out.at(y, x) = m.at<std::uint8_t>(y, x); break;
                case CV_16U: out.at(y, x) = m.at<std::uint16_t>(y, x); break;
                case CV_32S: out.at(y, x) = m.at<std::int32_t>(y, x); break;
                default: throw DataError("unsupported instance map depth in " + path.string());
            }
        }
    }
    return out;
}

void write_rgb(const std::filesystem::path& path, const Image& image) {
    if (image.channels != 3) {
        throw ShapeError("write_rgb expects 3 channels");
    }
    cv::Mat m(image.height, image.width, CV_8UC3);
    for (int y = 0; y < image.height; ++y) {
        auto* row = m.ptr<cv::Vec3b>(y);
        for (int x = 0; x < image.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                const float v = std::clamp(image.at(y, x, c), 0.0F, 1.0F);
                // BGR on disk.
                row[x][2 - c] = static_cast<std::uint8_t>(std::lround(v * 255.0F));
            }
        }
    }
    write_or_throw(path, m);
}

void write_mask(const std::filesystem::path& path, const Mask& mask) {
    cv::Mat m(mask.height, mask.width, CV_8UC1);
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            m.at<std::uint8_t>(y, x) = mask.at(y, x) ? 255 : 0;
        }
    }
    write_or_throw(path, m);
}

void write_instances16(const std::filesystem::path& path, const InstanceMap& instances) {
    cv::Mat m(instances.height, instances.width, CV_16UC1);
    for (int y = 0; y < instances.height; ++y) {
        for (int x = 0; x < instances.width; ++x) {
            const auto v = instances.at(y, x);
            if (v < 0 || v > 65535) {
                throw DataError("instance id out of 16-bit range while writing " + path.string());
            }
            m.at<std::uint16_t>(y, x) = static_cast<std::uint16_t>(v);
        }
    }
    write_or_throw(path, m);
}

}  // namespace mani::io
