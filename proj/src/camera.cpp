#include "hummorph/camera.hpp"

#include <algorithm>
#include <cmath>

#include "hummorph/tensor.hpp"

namespace hummorph {

void validate(const Camera& cam) {
  check(cam.intr.fx > 0 && cam.intr.fy > 0, "camera: focal lengths must be positive");
  check(cam.intr.cx >= 0 && cam.intr.cx <= cam.intr.width && cam.intr.cy >= 0 &&
            cam.intr.cy <= cam.intr.height,
        "camera: principal point outside image");
  Mat3 rtr = cam.extr.rot.transpose() * cam.extr.rot;
  check((rtr - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-5 &&
            std::fabs(cam.extr.rot.determinant() - 1.0) < 1e-5,
        "camera: rotation is not special orthogonal");
}

Projection project(const Vec3& x, const Camera& cam) {
  Vec3 c = cam.extr.rot * x + cam.extr.trans;
  Projection p;
  p.depth = c.z();
  if (std::fabs(c.z()) < 1e-12) {
    p.in_frustum = false;
    return p;
  }
  p.u = cam.intr.fx * (c.x() / c.z()) + cam.intr.cx;
  p.v = cam.intr.fy * (c.y() / c.z()) + cam.intr.cy;
  p.in_frustum = c.z() > 1e-6 && p.u >= 0 && p.u <= cam.intr.width && p.v >= 0 &&
                 p.v <= cam.intr.height;
  return p;
}

Ray ray_for_pixel(double u, double v, const Camera& cam) {
  Vec3 dir_cam((u - cam.intr.cx) / cam.intr.fx, (v - cam.intr.cy) / cam.intr.fy, 1.0);
  Ray r;
  r.origin = cam.center();
  r.dir = (cam.extr.rot.transpose() * dir_cam).normalized();
  return r;
}

RaySamples sample_ray_in_box(const Ray& ray, const Aabb& box, int m, Rng* jitter) {
  check(m >= 2, "sample_ray_in_box: need at least 2 samples");
  RaySamples out;
  double t0 = 0, t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    double o = ray.origin[a], d = ray.dir[a];
    if (std::fabs(d) < 1e-12) {
      if (o < box.min[a] || o > box.max[a]) return out;
      continue;
    }
    double ta = (box.min[a] - o) / d;
    double tb = (box.max[a] - o) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  t0 = std::max(t0, 1e-6);
  if (t1 <= t0) return out;
  out.hit = true;
  out.t_near = t0;
  out.t_far = t1;
  double span = (t1 - t0) / m;
  out.t.resize(m);
  out.points.resize(m);
  out.delta.resize(m);
  for (int i = 0; i < m; ++i) {
    double u = jitter ? jitter->uniform() : 0.5;
    out.t[i] = t0 + ((double)i + u) * span;
    out.points[i] = ray.origin + out.t[i] * ray.dir;
  }
  for (int i = 0; i + 1 < m; ++i) out.delta[i] = out.t[i + 1] - out.t[i];
  out.delta[m - 1] = t1 - out.t[m - 1];
  return out;
}

Camera make_look_at_camera(const Vec3& eye, const Vec3& target, double focal_px,
                           int width, int height) {
  Vec3 fwd = (target - eye).normalized();
  Vec3 up(0, 1, 0);
  if (std::fabs(fwd.dot(up)) > 0.999) up = Vec3(0, 0, 1);
  Vec3 right = fwd.cross(up).normalized();
  Vec3 down = fwd.cross(right).normalized();  // +v goes down the image
  Camera cam;
  cam.intr.fx = cam.intr.fy = focal_px;
  cam.intr.cx = width / 2.0;
  cam.intr.cy = height / 2.0;
  cam.intr.width = width;
  cam.intr.height = height;
  Mat3 r;
  r.row(0) = right.transpose();
  r.row(1) = down.transpose();
  r.row(2) = fwd.transpose();
  cam.extr.rot = r;
  cam.extr.trans = -(r * eye);
  return cam;
}

}  // namespace hummorph
