#include <cmath>
#include <filesystem>

#include "hummorph/body_model.hpp"
#include "test_util.hpp"

using namespace hummorph;

namespace {

Pose random_pose(const Skeleton& s, Rng& rng, double max_angle = 0.8) {
  Pose p = Pose::identity(s.joint_count());
  for (auto& q : p.local_rotations) {
    Vec3 axis(rng.normal(), rng.normal(), rng.normal());
    axis.normalize();
    q = Quat(Eigen::AngleAxisd(rng.uniform(-max_angle, max_angle), axis));
  }
  p.root_translation = Vec3(rng.normal(), rng.normal(), rng.normal()) * 0.2;
  return p;
}

}  // namespace

TEST_SUITE_BEGIN("body_model");

TEST_CASE("identity pose reproduces rest positions") {
  Skeleton s = Skeleton::humanoid12();
  std::vector<Vec3> pos = posed_joint_positions(s, Pose::identity(s.joint_count()));
  for (int j = 0; j < s.joint_count(); ++j)
    CHECK((pos[j] - s.rest_positions[j]).norm() < 1e-12);
}

TEST_CASE("root rotation of 90 degrees about +z") {
  Skeleton s = Skeleton::from_parents({{0, 0, 0}, {1, 0, 0}}, {-1, 0});
  Pose p = Pose::identity(2);
  p.local_rotations[0] = Quat(Eigen::AngleAxisd(M_PI / 2, Vec3(0, 0, 1)));
  std::vector<Vec3> pos = posed_joint_positions(s, p);
  CHECK((pos[1] - Vec3(0, 1, 0)).norm() < 1e-12);
}

TEST_CASE("three-joint chain matches an explicit matrix-chain oracle") {
  Rng rng(41);
  Skeleton s = Skeleton::from_parents(
      {{0.1, 0.2, 0.0}, {0.5, 0.3, -0.2}, {0.9, 0.1, 0.4}}, {-1, 0, 1});
  for (int it = 0; it < 20; ++it) {
    Pose p = random_pose(s, rng);
    std::vector<Vec3> pos = posed_joint_positions(s, p);

    // oracle: 4x4 homogeneous chain multiplied explicitly
    auto hom = [](const Mat3& r, const Vec3& t) {
      Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
      m.block<3, 3>(0, 0) = r;
      m.block<3, 1>(0, 3) = t;
      return m;
    };
    std::vector<Eigen::Matrix4d> world(3);
    for (int j = 0; j < 3; ++j) {
      Mat3 r = p.local_rotations[j].toRotationMatrix();
      Vec3 rest = s.rest_positions[j];
      Eigen::Matrix4d local = hom(r, rest - r * rest);
      if (j == 0) {
        world[j] = hom(Mat3::Identity(), p.root_translation) * local;
      } else {
        world[j] = world[j - 1] * local;
      }
      Eigen::Vector4d h(rest.x(), rest.y(), rest.z(), 1.0);
      Eigen::Vector4d out = world[j] * h;
      CHECK((pos[j] - out.head<3>()).norm() < 1e-6);
    }
  }
}

TEST_CASE("forward kinematics stays rigid") {
  Rng rng(42);
  Skeleton s = Skeleton::humanoid24();
  for (int it = 0; it < 5; ++it) {
    Pose p = random_pose(s, rng);
    for (const RigidTransform& w : forward_kinematics(s, p)) {
      Mat3 err = w.r.transpose() * w.r - Mat3::Identity();
      CHECK(err.cwiseAbs().maxCoeff() < 1e-5);
    }
  }
}

TEST_CASE("canonical pose yields exactly identity bone transforms") {
  Skeleton s = Skeleton::humanoid12();
  BoneTransforms bt = canonicalizing_transforms(s, Pose::identity(s.joint_count()));
  for (int j = 0; j < s.joint_count(); ++j) {
    CHECK((bt.r[j] - Mat3::Identity()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(bt.t[j].cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("single bone rotated about its parent joint inverts rigidly") {
  Vec3 pivot(0.3, -0.2, 0.5);
  Skeleton s = Skeleton::from_parents({pivot, pivot + Vec3(0, 1, 0)}, {-1, 0});
  Pose p = Pose::identity(2);
  Mat3 r = Quat(Eigen::AngleAxisd(0.7, Vec3(1, 2, -1).normalized())).toRotationMatrix();
  p.local_rotations[0] = Quat(r);
  BoneTransforms bt = canonicalizing_transforms(s, p);
  CHECK((bt.r[0] - r.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((bt.t[0] - (pivot - r.transpose() * pivot)).norm() < 1e-12);
}

TEST_CASE("posed child joints round-trip to rest through (R_i, t_i)") {
  Rng rng(43);
  Skeleton s = Skeleton::humanoid12();
  for (int it = 0; it < 10; ++it) {
    Pose p = random_pose(s, rng);
    BoneTransforms bt = canonicalizing_transforms(s, p);
    std::vector<Vec3> pos = posed_joint_positions(s, p);
    for (const Bone& b : s.bones) {
      // the child joint rides on the parent joint's rigid part
      Vec3 roundtrip = bt.r[b.parent_joint] * pos[b.child_joint] + bt.t[b.parent_joint];
      CHECK((roundtrip - s.rest_positions[b.child_joint]).norm() < 1e-6);
    }
  }
}

TEST_CASE("bbox of a single joint is a margin cube") {
  Skeleton s = Skeleton::from_parents({{0, 0, 0}}, {-1});
  Aabb box = skeleton_bbox(s, Pose::identity(1), 0.1);
  CHECK((box.min - Vec3(-0.1, -0.1, -0.1)).norm() < 1e-12);
  CHECK((box.max - Vec3(0.1, 0.1, 0.1)).norm() < 1e-12);
}

TEST_CASE("bbox at canonical pose with zero margin is the rest extents") {
  Skeleton s = Skeleton::humanoid12();
  Aabb box = skeleton_bbox(s, Pose::identity(s.joint_count()), 0.0);
  CHECK(box.min.x() == doctest::Approx(-0.62));
  CHECK(box.max.x() == doctest::Approx(0.62));
  CHECK(box.min.y() == doctest::Approx(0.08));
  CHECK(box.max.y() == doctest::Approx(1.62));
}

TEST_CASE("posed joints always lie inside the bbox, and margin is monotone") {
  Rng rng(44);
  Skeleton s = Skeleton::humanoid12();
  for (int it = 0; it < 10; ++it) {
    Pose p = random_pose(s, rng);
    Aabb small = skeleton_bbox(s, p, 0.05);
    Aabb big = skeleton_bbox(s, p, 0.25);
    for (const Vec3& x : posed_joint_positions(s, p)) CHECK(small.contains(x));
    CHECK((small.min.array() >= big.min.array()).all());
    CHECK((small.max.array() <= big.max.array()).all());
  }
}

TEST_CASE("nearest bone on a segment midpoint") {
  Skeleton s = Skeleton::humanoid12();
  // midpoint of the left forearm segment (shoulder joint 4 -> hand joint 5)
  Vec3 mid = 0.5 * (s.rest_positions[4] + s.rest_positions[5]);
  NearestBone nb = nearest_bone(s, mid);
  CHECK(nb.bone == 4);
  CHECK(nb.distance < 1e-12);
}

TEST_CASE("nearest bone clamps beyond segment endpoints") {
  Skeleton s = Skeleton::from_parents({{0, 0, 0}, {1, 0, 0}}, {-1, 0});
  Vec3 x(2.0, 1.0, 0.0);
  NearestBone nb = nearest_bone(s, x);
  CHECK(nb.bone == 0);
  CHECK(nb.distance == doctest::Approx(std::sqrt(2.0)));
  CHECK((nb.to_closest - (Vec3(1, 0, 0) - x)).norm() < 1e-12);
}

TEST_CASE("nearest bone agrees with a dense-sampling oracle") {
  Rng rng(45);
  Skeleton s = Skeleton::humanoid12();
  for (int it = 0; it < 50; ++it) {
    Vec3 x(rng.uniform(-1, 1), rng.uniform(0, 2), rng.uniform(-0.5, 0.5));
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k < s.joint_count(); ++k)
      for (const Segment& seg : channel_segments(s, k))
        for (int i = 0; i <= 10000; ++i) {
          Vec3 p = seg.a + (seg.b - seg.a) * (i / 10000.0);
          best = std::min(best, (x - p).norm());
        }
    CHECK(std::fabs(nearest_bone(s, x).distance - best) < 1e-3);
  }
}

TEST_CASE("skeleton file round-trip") {
  namespace fs = std::filesystem;
  Skeleton s = Skeleton::humanoid24();
  fs::path path = fs::temp_directory_path() / "hummorph_skel_test.txt";
  s.save(path.string());
  Skeleton back = Skeleton::from_file(path.string());
  REQUIRE(back.joint_count() == s.joint_count());
  for (int j = 0; j < s.joint_count(); ++j) {
    CHECK(back.parent[j] == s.parent[j]);
    CHECK((back.rest_positions[j] - s.rest_positions[j]).norm() < 1e-12);
  }
  fs::remove(path);
}

TEST_CASE("invalid skeletons and poses are rejected") {
  CHECK_THROWS(Skeleton::from_parents({{0, 0, 0}, {0, 0, 0}}, {-1, 0}));
  Skeleton s = Skeleton::humanoid12();
  Pose p = Pose::identity(s.joint_count());
  p.local_rotations[3] = Quat(2.0, 0, 0, 0);  // non-unit
  CHECK_THROWS(forward_kinematics(s, p));
}

TEST_SUITE_END();
