#pragma once

#include <vector>

#include "hummorph/body_model.hpp"
#include "hummorph/rng.hpp"

namespace hummorph {

struct Intrinsics {
  double fx = 0, fy = 0;  // pixels
  double cx = 0, cy = 0;  // principal point, continuous pixel coordinates
  int width = 0, height = 0;
};

struct Extrinsics {
  Mat3 rot = Mat3::Identity();  // world -> camera
  Vec3 trans = Vec3::Zero();
};

struct Camera {
  Intrinsics intr;
  Extrinsics extr;
  Vec3 center() const { return -(extr.rot.transpose() * extr.trans); }
};

void validate(const Camera& cam);

struct Projection {
  double u = 0, v = 0;  // continuous pixel coordinates; texel (i,j) center at i+0.5
  double depth = 0;
  bool in_frustum = false;
};

Projection project(const Vec3& x, const Camera& cam);

struct Ray {
  Vec3 origin;
  Vec3 dir;  // unit
};

Ray ray_for_pixel(double u, double v, const Camera& cam);

struct RaySamples {
  bool hit = false;
  double t_near = 0, t_far = 0;
  std::vector<double> t;      // M increasing parameters
  std::vector<Vec3> points;   // origin + t * dir
  std::vector<double> delta;  // consecutive gaps; last entry reaches t_far
};

// Slab-method ray/box intersection followed by stratified sampling: one draw
// per equal sub-interval. jitter == nullptr uses midpoints (deterministic).
RaySamples sample_ray_in_box(const Ray& ray, const Aabb& box, int m, Rng* jitter);

// Camera on `eye` looking at `target`, +Y-ish up, for synthetic rigs.
Camera make_look_at_camera(const Vec3& eye, const Vec3& target, double focal_px,
                           int width, int height);

}  // namespace hummorph
