#include <cmath>

#include "hummorph/deformation.hpp"
#include "hummorph/gradcheck.hpp"
#include "test_util.hpp"

using namespace hummorph;
using testutil::random_tensor;

namespace {

constexpr double kSigmaPerp = 0.06;

// Direct evaluation of every channel's Gaussian at a point, mirroring the
// documented heuristic (max over the joint's child segments).
std::vector<double> heuristic_oracle(const Skeleton& s, const Vec3& x) {
  std::vector<double> vals(s.joint_count());
  for (int k = 0; k < s.joint_count(); ++k) {
    double best = 0;
    for (const Segment& seg : channel_segments(s, k)) {
      Vec3 d = seg.b - seg.a;
      double len = d.norm();
      double g;
      if (len < 1e-9) {
        double r = (x - seg.a).norm();
        g = std::exp(-0.5 * (r / kSigmaPerp) * (r / kSigmaPerp));
      } else {
        Vec3 u = d / len;
        double half = len / 2;
        double along = std::clamp((x - 0.5 * (seg.a + seg.b)).dot(u), -half, half);
        double radial = point_segment_distance(x, seg);
        g = std::exp(-0.5 * ((along / half) * (along / half) +
                             (radial / kSigmaPerp) * (radial / kSigmaPerp)));
      }
      best = std::max(best, g);
    }
    vals[k] = best;
  }
  return vals;
}

}  // namespace

TEST_SUITE_BEGIN("motion_weights");

TEST_CASE("heuristic weights argmax matches direct Gaussian evaluation") {
  Skeleton s = Skeleton::humanoid12();
  WeightGridSpec spec = canonical_grid_spec(s, 0.15);
  Tensor w0 = init_heuristic(s, spec, kSigmaPerp, DType::F64);
  int64_t vox = spec.voxel_count();
  int checked = 0;
  for (int iz = 0; iz < spec.nz; iz += 3)
    for (int iy = 0; iy < spec.ny; iy += 5)
      for (int ix = 0; ix < spec.nx; ix += 5) {
        Vec3 x = spec.voxel_center(ix, iy, iz);
        std::vector<double> oracle = heuristic_oracle(s, x);
        int64_t at = (int64_t)(iz * spec.ny + iy) * spec.nx + ix;
        int best_o = 0, best_w = 0;
        for (int k = 1; k < s.joint_count(); ++k) {
          if (oracle[k] > oracle[best_o]) best_o = k;
          if (w0.get(k * vox + at) > w0.get(best_w * vox + at)) best_w = k;
        }
        if (oracle[best_o] < 2e-6) continue;  // flat floor region, argmax undefined
        CHECK(best_o == best_w);
        ++checked;
      }
  CHECK(checked > 20);
}

TEST_CASE("heuristic weights are a simplex at every voxel") {
  Skeleton s = Skeleton::humanoid12();
  WeightGridSpec spec = canonical_grid_spec(s, 0.15);
  Tensor w0 = init_heuristic(s, spec, kSigmaPerp, DType::F64);
  int64_t vox = spec.voxel_count();
  for (int64_t at = 0; at < vox; ++at) {
    double total = 0;
    for (int k = 0; k < s.joint_count(); ++k) {
      double v = w0.get(k * vox + at);
      CHECK(v >= 0);
      total += v;
    }
    CHECK(std::fabs(total - 1.0) < 1e-6);
  }
}

TEST_CASE("mirror-symmetric bones get equal weight on the mirror plane") {
  // two mirrored limbs hanging off the root
  Skeleton s = Skeleton::from_parents(
      {{0, 0, 0}, {-0.3, 0, 0}, {-0.3, -0.4, 0}, {0.3, 0, 0}, {0.3, -0.4, 0}},
      {-1, 0, 1, 0, 3});
  WeightGridSpec spec;
  spec.bbox = {Vec3(-0.5, -0.6, -0.2), Vec3(0.5, 0.2, 0.2)};
  spec.nx = 10;
  spec.ny = 8;
  spec.nz = 4;
  Tensor w0 = init_heuristic(s, spec, kSigmaPerp, DType::F64);
  int64_t vox = spec.voxel_count();
  // voxels with ix=4 and ix=5 mirror each other; compare channel 1 vs 3
  for (int iz = 0; iz < spec.nz; ++iz)
    for (int iy = 0; iy < spec.ny; ++iy) {
      int64_t left = (int64_t)(iz * spec.ny + iy) * spec.nx + 4;
      int64_t right = (int64_t)(iz * spec.ny + iy) * spec.nx + 5;
      CHECK(w0.get(1 * vox + left) == doctest::Approx(w0.get(3 * vox + right)).epsilon(1e-9));
      CHECK(w0.get(1 * vox + right) == doctest::Approx(w0.get(3 * vox + left)).epsilon(1e-9));
    }
}

TEST_CASE("zero correction keeps softmax of the biased logits") {
  Rng rng(31);
  Tensor logw = random_tensor({3, 2, 2, 2}, rng);
  Tensor w = combine_correction(logw, Tensor::zeros({3, 2, 2, 2}, DType::F64));
  Tensor expect = softmax(logw, 0);
  CHECK(testutil::max_abs_diff(w, expect) == 0.0);
}

TEST_CASE("a large correction on one channel saturates it") {
  Rng rng(32);
  Tensor logw = random_tensor({4, 2, 2, 2}, rng);
  Tensor delta = Tensor::zeros({4, 2, 2, 2}, DType::F64);
  for (int64_t i = 0; i < 8; ++i) delta.set(2 * 8 + i, 50.0);
  Tensor w = combine_correction(logw, delta);
  for (int64_t i = 0; i < 8; ++i) CHECK(std::fabs(w.get(2 * 8 + i) - 1.0) < 1e-6);
}

TEST_CASE("correction output is a per-voxel simplex for random inputs") {
  Rng rng(33);
  Tensor logw = random_tensor({5, 3, 4, 2}, rng);
  Tensor delta = random_tensor({5, 3, 4, 2}, rng, 2.0);
  Tensor w = combine_correction(logw, delta);
  int64_t vox = 3 * 4 * 2;
  for (int64_t at = 0; at < vox; ++at) {
    double total = 0;
    for (int k = 0; k < 5; ++k) total += w.get(k * vox + at);
    CHECK(std::fabs(total - 1.0) < 1e-6);
  }
}

TEST_CASE("adding a per-voxel constant never changes the argmax channel") {
  Rng rng(34);
  Tensor logw = random_tensor({6, 2, 3, 2}, rng);
  Tensor delta = random_tensor({6, 2, 3, 2}, rng);
  Tensor shifted = delta.clone();
  int64_t vox = 2 * 3 * 2;
  for (int64_t at = 0; at < vox; ++at) {
    double c = rng.uniform(-5, 5);
    for (int k = 0; k < 6; ++k) shifted.set(k * vox + at, delta.get(k * vox + at) + c);
  }
  Tensor w1 = combine_correction(logw, delta);
  Tensor w2 = combine_correction(logw, shifted);
  for (int64_t at = 0; at < vox; ++at) {
    int a1 = 0, a2 = 0;
    for (int k = 1; k < 6; ++k) {
      if (w1.get(k * vox + at) > w1.get(a1 * vox + at)) a1 = k;
      if (w2.get(k * vox + at) > w2.get(a2 * vox + at)) a2 = k;
    }
    CHECK(a1 == a2);
    for (int k = 0; k < 6; ++k)
      CHECK(w1.get(k * vox + at) == doctest::Approx(w2.get(k * vox + at)).epsilon(1e-9));
  }
}

TEST_CASE("sampling at a voxel center returns that voxel's channel vector") {
  Skeleton s = Skeleton::humanoid12();
  WeightGridSpec spec = canonical_grid_spec(s, 0.15);
  Tensor w0 = init_heuristic(s, spec, kSigmaPerp, DType::F64);
  int64_t vox = spec.voxel_count();
  Vec3 x = spec.voxel_center(10, 17, 6);
  Tensor pts = points_to_tensor({x}, DType::F64);
  Tensor sampled = sample_canonical(w0, spec, pts);
  int64_t at = (int64_t)(6 * spec.ny + 17) * spec.nx + 10;
  for (int k = 0; k < s.joint_count(); ++k)
    CHECK(sampled.get(k) == doctest::Approx(w0.get(k * vox + at)).epsilon(1e-12));
}

TEST_CASE("sampling outside the bbox returns the zero vector") {
  Skeleton s = Skeleton::humanoid12();
  WeightGridSpec spec = canonical_grid_spec(s, 0.15);
  Tensor w0 = init_heuristic(s, spec, kSigmaPerp, DType::F64);
  Tensor pts = points_to_tensor({spec.bbox.max + Vec3(0.01, 0, 0)}, DType::F64);
  Tensor sampled = sample_canonical(w0, spec, pts);
  for (int k = 0; k < s.joint_count(); ++k) CHECK(sampled.get(k) == 0.0);
}

TEST_CASE("interior interpolation stays on the simplex") {
  Rng rng(35);
  Skeleton s = Skeleton::humanoid12();
  WeightGridSpec spec = canonical_grid_spec(s, 0.15);
  Tensor w0 = init_heuristic(s, spec, kSigmaPerp, DType::F64);
  std::vector<Vec3> pts;
  for (int i = 0; i < 200; ++i) {
    Vec3 e = spec.bbox.extent();
    pts.emplace_back(spec.bbox.min + Vec3(rng.uniform(0, 1) * e.x(),
                                          rng.uniform(0, 1) * e.y(),
                                          rng.uniform(0, 1) * e.z()));
  }
  Tensor sampled = sample_canonical(w0, spec, points_to_tensor(pts, DType::F64));
  for (int64_t i = 0; i < 200; ++i) {
    double total = 0;
    for (int k = 0; k < s.joint_count(); ++k) {
      double v = sampled.get(i * s.joint_count() + k);
      CHECK(v >= -1e-12);
      total += v;
    }
    CHECK(std::fabs(total - 1.0) < 1e-5);
  }
}

TEST_CASE("posed weights reduce to canonical weights at the identity pose") {
  Skeleton s = Skeleton::humanoid12();
  WeightGridSpec spec = canonical_grid_spec(s, 0.15);
  Tensor w0 = init_heuristic(s, spec, kSigmaPerp, DType::F64);
  LbsConstants lbs =
      make_lbs_constants(canonicalizing_transforms(s, Pose::identity(s.joint_count())),
                         DType::F64);
  std::vector<Vec3> pts = {Vec3(0, 1.0, 0), Vec3(-0.4, 1.42, 0.01), Vec3(0.05, 0.5, 0.02)};
  PosedWeights pw = posed_weights(w0, spec, pts, lbs);
  Tensor wc = sample_canonical(w0, spec, points_to_tensor(pts, DType::F64));
  for (int64_t i = 0; i < (int64_t)pts.size(); ++i) {
    REQUIRE(pw.flags[(size_t)i] == 1);
    for (int k = 0; k < s.joint_count(); ++k)
      CHECK(pw.w.get(i * s.joint_count() + k) ==
            doctest::Approx(wc.get(i * s.joint_count() + k)).epsilon(1e-6));
  }
}

TEST_CASE("single-channel posed weights are exactly one for interior points") {
  Skeleton s = Skeleton::from_parents({{0, 0, 0}}, {-1});
  WeightGridSpec spec = canonical_grid_spec(s, 0.3, 8, 8, 8);
  Tensor w = Tensor::full({1, 8, 8, 8}, 1.0, DType::F64);
  Pose p = Pose::identity(1);
  p.local_rotations[0] = Quat(Eigen::AngleAxisd(0.6, Vec3(0, 1, 0)));
  LbsConstants lbs = make_lbs_constants(canonicalizing_transforms(s, p), DType::F64);
  PosedWeights pw = posed_weights(w, spec, {Vec3(0.05, 0.1, -0.05)}, lbs);
  REQUIRE(pw.flags[0] == 1);
  CHECK(pw.w.get(0) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("posed weights sum to one when not flagged free-space") {
  Rng rng(36);
  Skeleton s = Skeleton::humanoid12();
  WeightGridSpec spec = canonical_grid_spec(s, 0.15);
  Tensor w0 = init_heuristic(s, spec, kSigmaPerp, DType::F64);
  Pose p = Pose::identity(s.joint_count());
  for (auto& q : p.local_rotations) {
    Vec3 axis(rng.normal(), rng.normal(), rng.normal());
    q = Quat(Eigen::AngleAxisd(rng.uniform(-0.5, 0.5), axis.normalized()));
  }
  LbsConstants lbs = make_lbs_constants(canonicalizing_transforms(s, p), DType::F64);
  std::vector<Vec3> pts;
  for (int i = 0; i < 100; ++i)
    pts.emplace_back(rng.uniform(-0.8, 0.8), rng.uniform(0, 1.8), rng.uniform(-0.3, 0.3));
  PosedWeights pw = posed_weights(w0, spec, pts, lbs);
  int valid = 0;
  for (int64_t i = 0; i < 100; ++i) {
    double total = 0;
    for (int k = 0; k < s.joint_count(); ++k) total += pw.w.get(i * s.joint_count() + k);
    if (pw.flags[(size_t)i]) {
      CHECK(std::fabs(total - 1.0) < 1e-5);
      ++valid;
    } else {
      CHECK(total == 0.0);
    }
  }
  CHECK(valid > 10);
}

TEST_SUITE_END();
