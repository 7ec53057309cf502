#include "voxrf/image.hpp"

#include <cmath>
#include <stdexcept>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace voxrf {

namespace {

int to_u8(double v) {
  const double scaled = std::floor(v * 255.0 + 0.5);  // round half-up
  return int(std::clamp(scaled, 0.0, 255.0));
}

int to_u16(double meters, double depth_scale) {
  if (!(meters > 0.0)) return 0;
  const double units = std::floor(meters * depth_scale + 0.5);
  return int(std::clamp(units, 0.0, 65535.0));
}

}  // namespace

double quantize_color(double v) { return double(to_u8(v)) / 255.0; }

double quantize_depth(double meters, double depth_scale) {
  return to_u16(meters, depth_scale) / depth_scale;
}

void write_color_png(const std::filesystem::path& path, const ImageF& rgb) {
  if (rgb.channels != 3) throw std::invalid_argument("write_color_png: need 3 channels");
  cv::Mat mat(rgb.height, rgb.width, CV_8UC3);
  for (int y = 0; y < rgb.height; ++y)
    for (int x = 0; x < rgb.width; ++x) {
      auto& px = mat.at<cv::Vec3b>(y, x);  // OpenCV stores BGR
      px[2] = uchar(to_u8(rgb.at(x, y, 0)));
      px[1] = uchar(to_u8(rgb.at(x, y, 1)));
      px[0] = uchar(to_u8(rgb.at(x, y, 2)));
    }
  if (!cv::imwrite(path.string(), mat))
    throw std::runtime_error("write_color_png: failed to write " + path.string());
}

ImageF read_color_png(const std::filesystem::path& path) {
  cv::Mat mat = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (mat.empty()) throw std::runtime_error("read_color_png: cannot read " + path.string());
  ImageF img(mat.cols, mat.rows, 3);
  for (int y = 0; y < mat.rows; ++y)
    for (int x = 0; x < mat.cols; ++x) {
      const auto& px = mat.at<cv::Vec3b>(y, x);
      img.at(x, y, 0) = px[2] / 255.0;
      img.at(x, y, 1) = px[1] / 255.0;
      img.at(x, y, 2) = px[0] / 255.0;
    }
  return img;
}

void write_depth_png(const std::filesystem::path& path, const ImageF& depth_m,
                     double depth_scale) {
  if (depth_m.channels != 1) throw std::invalid_argument("write_depth_png: need 1 channel");
  cv::Mat mat(depth_m.height, depth_m.width, CV_16UC1);
  for (int y = 0; y < depth_m.height; ++y)
    for (int x = 0; x < depth_m.width; ++x)
      mat.at<std::uint16_t>(y, x) = std::uint16_t(to_u16(depth_m.at(x, y), depth_scale));
  if (!cv::imwrite(path.string(), mat))
    throw std::runtime_error("write_depth_png: failed to write " + path.string());
}

ImageF read_depth_png(const std::filesystem::path& path, double depth_scale) {
  cv::Mat mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (mat.empty()) throw std::runtime_error("read_depth_png: cannot read " + path.string());
  if (mat.type() != CV_16UC1)
    throw std::runtime_error("read_depth_png: expected 16-bit single channel: " + path.string());
  ImageF img(mat.cols, mat.rows, 1);
  for (int y = 0; y < mat.rows; ++y)
    for (int x = 0; x < mat.cols; ++x)
      img.at(x, y) = mat.at<std::uint16_t>(y, x) / depth_scale;
  return img;
}

}  // namespace voxrf
