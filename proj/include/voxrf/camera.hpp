#pragma once

#include <stdexcept>

#include <Eigen/Core>

#include "voxrf/pose.hpp"

namespace voxrf {

// Pinhole model. depth_scale is depth-file units per meter (16-bit PNG).
struct CameraIntrinsics {
  double fx = 0.0, fy = 0.0;
  double cx = 0.0, cy = 0.0;
  int width = 0, height = 0;
  double depth_scale = 1000.0;

  void validate() const {
    if (fx <= 0.0 || fy <= 0.0) throw std::invalid_argument("intrinsics: fx, fy must be > 0");
    if (width <= 0 || height <= 0) throw std::invalid_argument("intrinsics: empty image size");
    if (cx <= 0.0 || cx >= width || cy <= 0.0 || cy >= height)
      throw std::invalid_argument("intrinsics: principal point outside image");
    if (depth_scale <= 0.0) throw std::invalid_argument("intrinsics: depth_scale must be > 0");
  }
};

struct Ray {
  Eigen::Vector3d o;  // origin, meters
  Eigen::Vector3d d;  // unit direction
};

// Camera-frame direction of a continuous pixel coordinate, unit length.
inline Eigen::Vector3d pixel_direction_cam(const CameraIntrinsics& intr, double u, double v) {
  return Eigen::Vector3d((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0).normalized();
}

inline Ray generate_ray(const CameraIntrinsics& intr, const Pose& pose, double u, double v) {
  if (u < 0.0 || u >= intr.width || v < 0.0 || v >= intr.height)
    throw std::out_of_range("generate_ray: pixel outside image");
  return {pose.t, pose.rotate(pixel_direction_cam(intr, u, v))};
}

// Ratio between distance along the ray and z-depth for a pixel; multiply a
// z-depth by this to get the along-ray distance the renderer works in.
inline double ray_norm_factor(const CameraIntrinsics& intr, double u, double v) {
  const double x = (u - intr.cx) / intr.fx;
  const double y = (v - intr.cy) / intr.fy;
  return std::sqrt(x * x + y * y + 1.0);
}

}  // namespace voxrf
