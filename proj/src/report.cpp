#include "mani/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "mani/trainer.hpp"

namespace mani {

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot open " + path.string() + " for writing");
    }
    out << text;
    out.flush();
    if (!out) {
        throw DataError("write failed for " + path.string() + " (disk full?)");
    }
}

namespace {

struct Series {
    std::vector<double> x;
    std::vector<double> y;
    cv::Scalar colour;
    const char* name;
};

void draw_series(cv::Mat& canvas, const cv::Rect& area, const Series& s, double x_max) {
    if (s.y.size() < 2) return;
    const auto [lo_it, hi_it] = std::minmax_element(s.y.begin(), s.y.end());
    double lo = *lo_it;
    double hi = *hi_it;
    if (hi - lo < 1e-12) {
        hi += 0.5;
        lo -= 0.5;
    }
    std::vector<cv::Point> pts;
    pts.reserve(s.y.size());
    for (std::size_t i = 0; i < s.y.size(); ++i) {
        const double fx = x_max > 0 ? s.x[i] / x_max : 0.0;
        const double fy = (s.y[i] - lo) / (hi - lo);
        pts.emplace_back(area.x + static_cast<int>(fx * area.width),
                         area.y + area.height - static_cast<int>(fy * area.height));
    }
    cv::polylines(canvas, pts, false, s.colour, 1, cv::LINE_AA);
}

}  // namespace

void write_loss_plot(const TrainHistory& history, const std::filesystem::path& path) {
    constexpr int kWidth = 800;
    constexpr int kHeight = 400;
    cv::Mat canvas(kHeight, kWidth, CV_8UC3, cv::Scalar(255, 255, 255));
    const cv::Rect area(60, 30, kWidth - 90, kHeight - 80);
    cv::rectangle(canvas, area, cv::Scalar(0, 0, 0), 1);

    Series seg{{}, {}, cv::Scalar(200, 80, 0), "seg_loss"};
    Series mi{{}, {}, cv::Scalar(0, 0, 200), "mi_estimate"};
    double x_max = 1.0;
    for (const auto& r : history.iterations) {
        seg.x.push_back(r.iter);
        seg.y.push_back(r.seg_loss);
        if (r.mi_estimate) {
            mi.x.push_back(r.iter);
            mi.y.push_back(*r.mi_estimate);
        }
        x_max = std::max(x_max, static_cast<double>(r.iter));
    }
    draw_series(canvas, area, seg, x_max);
    draw_series(canvas, area, mi, x_max);

    int legend_y = 20;
    for (const Series* s : {&seg, &mi}) {
        if (s->y.empty()) continue;
        const auto [lo, hi] = std::minmax_element(s->y.begin(), s->y.end());
        char label[96];
        std::snprintf(label, sizeof label, "%s (range %.3g .. %.3g)", s->name, *lo, *hi);
        cv::putText(canvas, label, cv::Point(area.x + 10, legend_y), cv::FONT_HERSHEY_SIMPLEX, 0.45, s->colour, 1,
                    cv::LINE_AA);
        legend_y += 16;
    }
    char xlabel[64];
    std::snprintf(xlabel, sizeof xlabel, "iteration (0 .. %d)", static_cast<int>(x_max));
    cv::putText(canvas, xlabel, cv::Point(area.x + area.width / 2 - 70, kHeight - 20), cv::FONT_HERSHEY_SIMPLEX, 0.45,
                cv::Scalar(0, 0, 0), 1, cv::LINE_AA);

    if (!cv::imwrite(path.string(), canvas)) {
        throw DataError("cannot write plot " + path.string());
    }
}

}  // namespace mani
