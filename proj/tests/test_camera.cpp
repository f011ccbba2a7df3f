#include <cmath>

#include "hummorph/camera.hpp"
#include "test_util.hpp"

using namespace hummorph;

namespace {

Camera basic_camera() {
  Camera cam;
  cam.intr = {100, 100, 50, 50, 100, 100};
  return cam;
}

Camera random_camera(Rng& rng) {
  Vec3 eye(rng.uniform(-3, 3), rng.uniform(-1, 3), rng.uniform(-3, 3));
  Vec3 target(rng.uniform(-0.3, 0.3), rng.uniform(0.5, 1.5), rng.uniform(-0.3, 0.3));
  while ((target - eye).norm() < 1.0) eye += Vec3(2, 0, 0);
  return make_look_at_camera(eye, target, rng.uniform(60, 200), 64, 48);
}

}  // namespace

TEST_SUITE_BEGIN("camera");

TEST_CASE("point on the optical axis projects to the principal point") {
  Camera cam = basic_camera();
  Projection p = project(Vec3(0, 0, 1), cam);
  CHECK(p.u == doctest::Approx(50.0));
  CHECK(p.v == doctest::Approx(50.0));
  CHECK(p.depth == doctest::Approx(1.0));
  CHECK(p.in_frustum);
}

TEST_CASE("projection arithmetic") {
  Camera cam = basic_camera();
  Projection p = project(Vec3(0.1, 0, 1), cam);
  CHECK(p.u == doctest::Approx(60.0));
  CHECK(p.v == doctest::Approx(50.0));
}

TEST_CASE("points behind the camera are flagged") {
  Camera cam = basic_camera();
  CHECK(!project(Vec3(0, 0, -1), cam).in_frustum);
}

TEST_CASE("principal-point ray follows the camera forward axis") {
  Rng rng(21);
  for (int it = 0; it < 5; ++it) {
    Camera cam = random_camera(rng);
    Ray r = ray_for_pixel(cam.intr.cx, cam.intr.cy, cam);
    Vec3 fwd = cam.extr.rot.row(2).transpose();
    CHECK((r.dir - fwd).norm() < 1e-9);
    CHECK(std::fabs(r.dir.norm() - 1.0) < 1e-9);
  }
}

TEST_CASE("projection and ray generation round-trip to 1e-4 px") {
  Rng rng(22);
  for (int it = 0; it < 10000; ++it) {
    Camera cam = random_camera(rng);
    double u = rng.uniform(0, cam.intr.width);
    double v = rng.uniform(0, cam.intr.height);
    Ray r = ray_for_pixel(u, v, cam);
    double s = rng.uniform(0.5, 5.0);
    Projection p = project(r.origin + s * r.dir, cam);
    CHECK(std::fabs(p.u - u) < 1e-4);
    CHECK(std::fabs(p.v - v) < 1e-4);
  }
}

TEST_CASE("rays that miss the box produce no samples") {
  Ray r{Vec3(5, 5, -5), Vec3(0, 0, 1)};
  Aabb box{Vec3(-0.5, -0.5, -0.5), Vec3(0.5, 0.5, 0.5)};
  CHECK(!sample_ray_in_box(r, box, 8, nullptr).hit);
}

TEST_CASE("axis-aligned ray through the unit cube spans length one") {
  Ray r{Vec3(0, 0, -2), Vec3(0, 0, 1)};
  Aabb box{Vec3(-0.5, -0.5, -0.5), Vec3(0.5, 0.5, 0.5)};
  RaySamples s = sample_ray_in_box(r, box, 16, nullptr);
  REQUIRE(s.hit);
  CHECK(s.t_far - s.t_near == doctest::Approx(1.0));
}

TEST_CASE("samples are increasing, inside the box, with positive gaps") {
  Rng rng(23);
  Aabb box{Vec3(-0.4, 0.1, -0.6), Vec3(0.7, 1.9, 0.5)};
  int hits = 0;
  for (int it = 0; it < 200; ++it) {
    Ray r;
    r.origin = Vec3(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3));
    Vec3 inside(rng.uniform(-0.4, 0.7), rng.uniform(0.1, 1.9), rng.uniform(-0.6, 0.5));
    r.dir = (inside - r.origin).normalized();
    Rng jitter(it);
    RaySamples s = sample_ray_in_box(r, box, 16, &jitter);
    if (!s.hit) continue;
    ++hits;
    for (size_t i = 0; i < s.t.size(); ++i) {
      if (i) CHECK(s.t[i] > s.t[i - 1]);
      CHECK(box.contains(s.points[i]));
      CHECK(s.delta[i] >= 0);
    }
    double span = 0;
    for (double d : s.delta) span += d;
    CHECK(span == doctest::Approx(s.t_far - s.t[0]).epsilon(1e-9));
  }
  CHECK(hits > 150);
}

TEST_CASE("midpoint sampling with jitter disabled is deterministic") {
  Ray r{Vec3(0, 0, -2), Vec3(0, 0, 1)};
  Aabb box{Vec3(-0.5, -0.5, -0.5), Vec3(0.5, 0.5, 0.5)};
  RaySamples a = sample_ray_in_box(r, box, 8, nullptr);
  RaySamples b = sample_ray_in_box(r, box, 8, nullptr);
  REQUIRE(a.hit);
  for (int i = 0; i < 8; ++i) {
    CHECK(a.t[i] == b.t[i]);
    double expected = a.t_near + (i + 0.5) * (a.t_far - a.t_near) / 8;
    CHECK(a.t[i] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_SUITE_END();
