#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "attrinet/tensor.hpp"

namespace attrinet {

/// Reads an 8- or 16-bit grayscale raster, resizes to height×width (when both
/// are positive) and maps it linearly to [-1, 1]. Returns nullopt if unreadable.
std::optional<Image> read_grayscale(const std::filesystem::path& path, int height = 0, int width = 0);

/// Lossless-ish storage of a [-1, 1] image as a 16-bit PNG.
void write_image16(const std::filesystem::path& path, const Image& image);
/// 8-bit grayscale rendering of a [-1, 1] image.
void write_image8(const std::filesystem::path& path, const Image& image, int upscale = 1);

void write_mask(const std::filesystem::path& path, const Mask& mask);
std::optional<Mask> read_mask(const std::filesystem::path& path);

/// Signed map rendered with a symmetric blue-white-red scale normalized by
/// max |value|, with an annotated scale bar.
void write_signed_map(const std::filesystem::path& path, const Mat<float>& map, int upscale = 4);

/// Input | attribution | counterfactual, annotated with `caption`.
void write_explanation_panel(const std::filesystem::path& path, const Image& input, const Mat<float>& map,
                             const Image& counterfactual, const std::string& caption, int upscale = 4);

/// Two-row panel: 2×2 image grid on top, 2×2 attribution grid below; the
/// positive tile is marked "P", the others "N".
void write_grid_panel(const std::filesystem::path& path, const std::array<Image, 4>& tiles,
                      const std::array<Mat<float>, 4>& maps, int positive_slot, int upscale = 2);

/// "p=0.87 (0.52)" annotation.
std::string probability_caption(double prob, double threshold);

}  // namespace attrinet
