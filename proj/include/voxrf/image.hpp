#pragma once

#include <filesystem>
#include <vector>

namespace voxrf {

// Row-major double image; color uses 3 interleaved channels in [0,1], depth
// uses 1 channel in meters with 0 marking invalid pixels.
struct ImageF {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<double> data;

  ImageF() = default;
  ImageF(int w, int h, int c) : width(w), height(h), channels(c), data(std::size_t(w) * h * c, 0.0) {}

  double& at(int x, int y, int c = 0) {
    return data[(std::size_t(y) * width + x) * channels + c];
  }
  double at(int x, int y, int c = 0) const {
    return data[(std::size_t(y) * width + x) * channels + c];
  }
  bool empty() const { return data.empty(); }
};

// 8-bit RGB PNG; values scaled by 255 and rounded half-up.
void write_color_png(const std::filesystem::path& path, const ImageF& rgb);
ImageF read_color_png(const std::filesystem::path& path);

// 16-bit single-channel PNG in depth_scale units per meter; invalid = 0.
void write_depth_png(const std::filesystem::path& path, const ImageF& depth_m, double depth_scale);
ImageF read_depth_png(const std::filesystem::path& path, double depth_scale);

// Snaps to the PNG quantization so in-memory frames match their on-disk form.
double quantize_color(double v);
double quantize_depth(double meters, double depth_scale);

}  // namespace voxrf
