#include "attrinet/imageio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace attrinet {
namespace {

void ensure_parent(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
}

void write_or_throw(const std::filesystem::path& path, const cv::Mat& m) {
  ensure_parent(path);
  if (!cv::imwrite(path.string(), m)) throw std::runtime_error("cannot write image " + path.string());
}

cv::Mat to_gray8(const Image& image) {
  cv::Mat out(static_cast<int>(image.rows()), static_cast<int>(image.cols()), CV_8UC1);
  for (int i = 0; i < out.rows; ++i) {
    for (int j = 0; j < out.cols; ++j) {
      const double v = std::clamp((static_cast<double>(image(i, j)) + 1.0) * 127.5, 0.0, 255.0);
      out.at<std::uint8_t>(i, j) = static_cast<std::uint8_t>(std::lround(v));
    }
  }
  return out;
}

cv::Mat gray_to_bgr(const cv::Mat& gray) {
  cv::Mat bgr;
  cv::cvtColor(gray, bgr, cv::COLOR_GRAY2BGR);
  return bgr;
}

cv::Vec3b diverging(double t) {
  // t in [-1, 1]: blue (negative) - white - red (positive).
  t = std::clamp(t, -1.0, 1.0);
  const auto c = [](double x) { return static_cast<std::uint8_t>(std::lround(std::clamp(x, 0.0, 255.0))); };
  if (t >= 0) return {c(255 * (1 - t)), c(255 * (1 - t)), 255};
  return {255, c(255 * (1 + t)), c(255 * (1 + t))};
}

cv::Mat colorize(const Mat<float>& map, double scale) {
  cv::Mat out(static_cast<int>(map.rows()), static_cast<int>(map.cols()), CV_8UC3);
  for (int i = 0; i < out.rows; ++i) {
    for (int j = 0; j < out.cols; ++j) out.at<cv::Vec3b>(i, j) = diverging(scale > 0 ? map(i, j) / scale : 0.0);
  }
  return out;
}

cv::Mat upscaled(const cv::Mat& m, int factor) {
  if (factor <= 1) return m;
  cv::Mat out;
  cv::resize(m, out, cv::Size(), factor, factor, cv::INTER_NEAREST);
  return out;
}

double max_abs(const Mat<float>& m) { return m.size() ? static_cast<double>(m.cwiseAbs().maxCoeff()) : 0.0; }

std::string format_scale(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

/// Appends a horizontal colour bar labelled with ±scale beneath `img`.
cv::Mat with_scale_bar(const cv::Mat& img, double scale) {
  const int bar_h = 12, text_h = 16;
  cv::Mat out(img.rows + bar_h + text_h, std::max(img.cols, 96), CV_8UC3, cv::Scalar(255, 255, 255));
  img.copyTo(out(cv::Rect(0, 0, img.cols, img.rows)));
  for (int j = 0; j < out.cols; ++j) {
    const cv::Vec3b c = diverging(2.0 * j / std::max(1, out.cols - 1) - 1.0);
    for (int i = 0; i < bar_h; ++i) out.at<cv::Vec3b>(img.rows + i, j) = c;
  }
  const int y = img.rows + bar_h + text_h - 4;
  cv::putText(out, "-" + format_scale(scale), {1, y}, cv::FONT_HERSHEY_PLAIN, 0.8, {0, 0, 0});
  const std::string right = "+" + format_scale(scale);
  cv::putText(out, right, {out.cols - 8 * static_cast<int>(right.size()), y}, cv::FONT_HERSHEY_PLAIN, 0.8, {0, 0, 0});
  return out;
}

cv::Mat hconcat_padded(const std::vector<cv::Mat>& parts, int gap) {
  int h = 0, w = 0;
  for (const auto& p : parts) {
    h = std::max(h, p.rows);
    w += p.cols + gap;
  }
  cv::Mat out(h, std::max(0, w - gap), CV_8UC3, cv::Scalar(255, 255, 255));
  int x = 0;
  for (const auto& p : parts) {
    p.copyTo(out(cv::Rect(x, 0, p.cols, p.rows)));
    x += p.cols + gap;
  }
  return out;
}

cv::Mat tile2x2(const std::array<cv::Mat, 4>& t) {
  cv::Mat top, bottom, out;
  cv::hconcat(t[0], t[1], top);
  cv::hconcat(t[2], t[3], bottom);
  cv::vconcat(top, bottom, out);
  return out;
}

}  // namespace

std::optional<Image> read_grayscale(const std::filesystem::path& path, int height, int width) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE | cv::IMREAD_ANYDEPTH);
  if (m.empty()) return std::nullopt;
  double full_scale = 255.0;
  if (m.depth() == CV_16U) {
    full_scale = 65535.0;
  } else if (m.depth() != CV_8U) {
    return std::nullopt;
  }
  cv::Mat f;
  m.convertTo(f, CV_32F, 2.0 / full_scale, -1.0);
  if (height > 0 && width > 0 && (f.rows != height || f.cols != width)) {
    cv::Mat r;
    cv::resize(f, r, cv::Size(width, height), 0, 0, cv::INTER_AREA);
    f = r;
  }
  Image img(f.rows, f.cols);
  for (int i = 0; i < f.rows; ++i) {
    for (int j = 0; j < f.cols; ++j) img(i, j) = std::clamp(f.at<float>(i, j), -1.0f, 1.0f);
  }
  return img;
}

void write_image16(const std::filesystem::path& path, const Image& image) {
  cv::Mat out(static_cast<int>(image.rows()), static_cast<int>(image.cols()), CV_16UC1);
  for (int i = 0; i < out.rows; ++i) {
    for (int j = 0; j < out.cols; ++j) {
      const double v = std::clamp((static_cast<double>(image(i, j)) + 1.0) * 32767.5, 0.0, 65535.0);
      out.at<std::uint16_t>(i, j) = static_cast<std::uint16_t>(std::lround(v));
    }
  }
  write_or_throw(path, out);
}

void write_image8(const std::filesystem::path& path, const Image& image, int upscale) {
  write_or_throw(path, upscaled(to_gray8(image), upscale));
}

void write_mask(const std::filesystem::path& path, const Mask& mask) {
  cv::Mat out(static_cast<int>(mask.rows()), static_cast<int>(mask.cols()), CV_8UC1);
  for (int i = 0; i < out.rows; ++i) {
    for (int j = 0; j < out.cols; ++j) out.at<std::uint8_t>(i, j) = mask(i, j) ? 255 : 0;
  }
  write_or_throw(path, out);
}

std::optional<Mask> read_mask(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (m.empty()) return std::nullopt;
  Mask mask(m.rows, m.cols);
  for (int i = 0; i < m.rows; ++i) {
    for (int j = 0; j < m.cols; ++j) mask(i, j) = m.at<std::uint8_t>(i, j) > 127 ? 1 : 0;
  }
  return mask;
}

void write_signed_map(const std::filesystem::path& path, const Mat<float>& map, int upscale) {
  const double scale = max_abs(map);
  write_or_throw(path, with_scale_bar(upscaled(colorize(map, scale), upscale), scale));
}

void write_explanation_panel(const std::filesystem::path& path, const Image& input, const Mat<float>& map,
                             const Image& counterfactual, const std::string& caption, int upscale) {
  const double scale = max_abs(map);
  cv::Mat attribution = upscaled(colorize(map, scale), upscale);
  cv::putText(attribution, caption, {3, attribution.rows - 5}, cv::FONT_HERSHEY_PLAIN, 1.0, {0, 0, 0}, 1);
  const cv::Mat x = upscaled(gray_to_bgr(to_gray8(input)), upscale);
  const cv::Mat cf = upscaled(gray_to_bgr(to_gray8(counterfactual)), upscale);
  write_or_throw(path, hconcat_padded({x, with_scale_bar(attribution, scale), cf}, 4));
}

void write_grid_panel(const std::filesystem::path& path, const std::array<Image, 4>& tiles,
                      const std::array<Mat<float>, 4>& maps, int positive_slot, int upscale) {
  double scale = 0;
  for (const auto& m : maps) scale = std::max(scale, max_abs(m));
  std::array<cv::Mat, 4> img_tiles, map_tiles;
  for (int k = 0; k < 4; ++k) {
    img_tiles[k] = upscaled(gray_to_bgr(to_gray8(tiles[k])), upscale);
    map_tiles[k] = upscaled(colorize(maps[k], scale), upscale);
    const std::string tag = k == positive_slot ? "P" : "N";
    cv::putText(img_tiles[k], tag, {3, 14}, cv::FONT_HERSHEY_PLAIN, 1.0, {0, 200, 0}, 1);
    cv::putText(map_tiles[k], tag, {3, 14}, cv::FONT_HERSHEY_PLAIN, 1.0, {0, 0, 0}, 1);
  }
  const cv::Mat top = tile2x2(img_tiles);
  const cv::Mat bottom = with_scale_bar(tile2x2(map_tiles), scale);
  cv::Mat out(top.rows + 4 + bottom.rows, std::max(top.cols, bottom.cols), CV_8UC3, cv::Scalar(255, 255, 255));
  top.copyTo(out(cv::Rect(0, 0, top.cols, top.rows)));
  bottom.copyTo(out(cv::Rect(0, top.rows + 4, bottom.cols, bottom.rows)));
  write_or_throw(path, out);
}

std::string probability_caption(double prob, double threshold) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "p=%.2f (%.2f)", prob, threshold);
  return buf;
}

}  // namespace attrinet
