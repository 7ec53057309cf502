#pragma once

#include <optional>

#include "voxrf/image.hpp"
#include "voxrf/pose.hpp"

namespace voxrf {

// One RGB-D observation. Depth is the distance along each pixel's unit ray
// (so depth * d steps from the camera center onto the surface); 0 = invalid.
struct Frame {
  ImageF color;  // H x W x 3 in [0,1]
  ImageF depth;  // H x W x 1 meters
  double timestamp = 0.0;
  std::optional<Pose> gt_pose;

  bool depth_valid(int x, int y) const { return depth.at(x, y) > 0.0; }
};

}  // namespace voxrf
