#include <cmath>

#include "hummorph/deformation.hpp"
#include "hummorph/gradcheck.hpp"
#include "test_util.hpp"

using namespace hummorph;
using testutil::random_tensor;

namespace {

LbsConstants translation_only(const std::vector<Vec3>& ts, DType dt) {
  BoneTransforms bt;
  for (const Vec3& t : ts) {
    bt.r.push_back(Mat3::Identity());
    bt.t.push_back(t);
  }
  return make_lbs_constants(bt, dt);
}

}  // namespace

TEST_SUITE_BEGIN("deformation");

TEST_CASE("both deformations are the identity at the canonical pose") {
  Skeleton s = Skeleton::humanoid12();
  WeightGridSpec spec = canonical_grid_spec(s, 0.15);
  Tensor w0 = init_heuristic(s, spec, 0.06, DType::F64);
  LbsConstants lbs = make_lbs_constants(
      canonicalizing_transforms(s, Pose::identity(s.joint_count())), DType::F64);
  std::vector<Vec3> pts = {Vec3(0, 1.0, 0), Vec3(-0.35, 1.42, 0.02), Vec3(0.08, 0.45, 0)};
  BackwardDeformed b = backward_deform(pts, lbs, w0, spec);
  for (size_t i = 0; i < pts.size(); ++i) {
    REQUIRE(b.flags[i] == 1);
    Vec3 xc(b.x_c.get((int64_t)i * 3), b.x_c.get((int64_t)i * 3 + 1),
            b.x_c.get((int64_t)i * 3 + 2));
    CHECK((xc - pts[i]).norm() < 1e-6);
  }
  ForwardDeformed f = forward_deform(b.x_c, lbs, w0, spec);
  for (size_t i = 0; i < pts.size(); ++i) {
    Vec3 xo(f.x_o.get((int64_t)i * 3), f.x_o.get((int64_t)i * 3 + 1),
            f.x_o.get((int64_t)i * 3 + 2));
    CHECK((xo - pts[i]).norm() < 1e-6);
  }
}

TEST_CASE("single rigid bone applies the exact rigid transform both ways") {
  Skeleton s = Skeleton::from_parents({{0.1, 0.2, 0.3}}, {-1});
  WeightGridSpec spec = canonical_grid_spec(s, 0.5, 8, 8, 8);
  Tensor w = Tensor::full({1, 8, 8, 8}, 1.0, DType::F64);
  Pose p = Pose::identity(1);
  p.local_rotations[0] =
      Quat(Eigen::AngleAxisd(0.9, Vec3(1, -2, 0.5).normalized()));
  p.root_translation = Vec3(0.05, -0.02, 0.04);
  BoneTransforms bt = canonicalizing_transforms(s, p);
  LbsConstants lbs = make_lbs_constants(bt, DType::F64);

  Vec3 xc_ref(0.15, 0.3, 0.25);
  // pick the posed point that canonicalizes to xc_ref
  Vec3 xp = bt.r[0].transpose() * (xc_ref - bt.t[0]);
  BackwardDeformed b = backward_deform({xp}, lbs, w, spec);
  REQUIRE(b.flags[0] == 1);
  Vec3 xc(b.x_c.get(0), b.x_c.get(1), b.x_c.get(2));
  CHECK((xc - (bt.r[0] * xp + bt.t[0])).norm() < 1e-12);

  ForwardDeformed f = forward_deform(b.x_c, lbs, w, spec);
  Vec3 xo(f.x_o.get(0), f.x_o.get(1), f.x_o.get(2));
  CHECK((xo - xp).norm() < 1e-12);

  CycleResidual cr = cycle_residual({xp}, lbs, w, spec);
  CHECK(cr.d.get(0) < 1e-10);
}

TEST_CASE("two translated bones with equal weights average the translations") {
  WeightGridSpec spec;
  spec.bbox = {Vec3(-1, -1, -1), Vec3(1, 1, 1)};
  spec.nx = spec.ny = spec.nz = 4;
  Tensor w = Tensor::full({2, 4, 4, 4}, 0.5, DType::F64);
  Vec3 t1(0.08, -0.04, 0.02), t2(-0.02, 0.06, 0.1);
  LbsConstants lbs = translation_only({t1, t2}, DType::F64);
  Vec3 xp(0.1, 0.2, -0.3);
  BackwardDeformed b = backward_deform({xp}, lbs, w, spec);
  Vec3 xc(b.x_c.get(0), b.x_c.get(1), b.x_c.get(2));
  CHECK((xc - (xp + 0.5 * (t1 + t2))).norm() < 1e-12);
}

TEST_CASE("cycle residual is zero at the canonical pose") {
  Skeleton s = Skeleton::humanoid12();
  WeightGridSpec spec = canonical_grid_spec(s, 0.15);
  Tensor w0 = init_heuristic(s, spec, 0.06, DType::F64);
  LbsConstants lbs = make_lbs_constants(
      canonicalizing_transforms(s, Pose::identity(s.joint_count())), DType::F64);
  CycleResidual cr = cycle_residual({Vec3(0, 1.0, 0), Vec3(-0.3, 1.42, 0)}, lbs, w0, spec);
  for (int i = 0; i < 2; ++i) {
    REQUIRE(cr.flags[(size_t)i] == 1);
    CHECK(cr.d.get(i) < 1e-10);
  }
}

TEST_CASE("multi-bone cycle residual matches composing the two deformations") {
  Rng rng(51);
  Skeleton s = Skeleton::humanoid12();
  WeightGridSpec spec = canonical_grid_spec(s, 0.15);
  Tensor w0 = init_heuristic(s, spec, 0.06, DType::F64);
  Pose p = Pose::identity(s.joint_count());
  for (auto& q : p.local_rotations) {
    Vec3 axis(rng.normal(), rng.normal(), rng.normal());
    q = Quat(Eigen::AngleAxisd(rng.uniform(-0.4, 0.4), axis.normalized()));
  }
  LbsConstants lbs = make_lbs_constants(canonicalizing_transforms(s, p), DType::F64);
  std::vector<Vec3> pts;
  for (int i = 0; i < 50; ++i)
    pts.emplace_back(rng.uniform(-0.7, 0.7), rng.uniform(0.1, 1.7), rng.uniform(-0.25, 0.25));
  CycleResidual cr = cycle_residual(pts, lbs, w0, spec);
  BackwardDeformed b = backward_deform(pts, lbs, w0, spec);
  ForwardDeformed f = forward_deform(b.x_c, lbs, w0, spec);
  int valid = 0;
  for (int64_t i = 0; i < (int64_t)pts.size(); ++i) {
    CHECK(cr.d.get(i) >= 0.0);
    if (!cr.flags[(size_t)i]) continue;
    ++valid;
    Vec3 xo(f.x_o.get(i * 3), f.x_o.get(i * 3 + 1), f.x_o.get(i * 3 + 2));
    double manual = (pts[(size_t)i] - xo).squaredNorm();
    CHECK(cr.d.get(i) == doctest::Approx(manual).epsilon(1e-12));
  }
  CHECK(valid > 5);
}

TEST_CASE("cycle residual gradients with respect to the weight grid pass grad_check") {
  Rng rng(52);
  // small grid, smooth random weights, interior points away from lattice planes
  WeightGridSpec spec;
  spec.bbox = {Vec3(-0.5, -0.5, -0.5), Vec3(0.5, 0.5, 0.5)};
  spec.nx = spec.ny = spec.nz = 4;
  Tensor w({2, 4, 4, 4}, DType::F64);
  for (int64_t i = 0; i < w.numel(); ++i) w.set(i, 0.3 + 0.4 * rng.uniform());
  Pose p = Pose::identity(2);
  Skeleton s = Skeleton::from_parents({{0, 0, 0}, {0.3, 0, 0}}, {-1, 0});
  p.local_rotations[0] = Quat(Eigen::AngleAxisd(0.3, Vec3(0, 0, 1)));
  p.local_rotations[1] = Quat(Eigen::AngleAxisd(-0.4, Vec3(0, 1, 0)));
  LbsConstants lbs = make_lbs_constants(canonicalizing_transforms(s, p), DType::F64);
  std::vector<Vec3> pts = {Vec3(0.07, 0.03, -0.06), Vec3(-0.11, 0.13, 0.04)};
  double err = grad_check(
      [&](const std::vector<Tensor>& in) {
        CycleResidual cr = cycle_residual(pts, lbs, in[0], spec);
        return sum_all(mul(cr.d, cr.valid));
      },
      {w}, 1e-5);
  CHECK(err < 1e-4);
}

TEST_SUITE_END();
