#pragma once

#include <filesystem>
#include <string>

namespace mani {

struct TrainHistory;

/// Loss-curve PNG: segmentation loss and (when present) the MI estimate against iteration.
void write_loss_plot(const TrainHistory& history, const std::filesystem::path& path);

/// Writes text to path, throwing DataError on any I/O failure (including a full disk).
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace mani
