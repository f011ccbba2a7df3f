#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace hummorph {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

struct Bone {
  int parent_joint;
  int child_joint;
};

// Canonical (T-pose) skeleton. Axes: X left-right, Y up, Z front-back, meters.
struct Skeleton {
  std::vector<Vec3> rest_positions;
  std::vector<int> parent;  // -1 for the root (index 0)
  std::vector<Bone> bones;  // the K-1 tree edges, derived from parent

  int joint_count() const { return (int)rest_positions.size(); }
  std::vector<int> children_of(int joint) const;

  static Skeleton from_parents(std::vector<Vec3> rest, std::vector<int> parent);
  static Skeleton from_file(const std::string& path);
  void save(const std::string& path) const;

  // 12-joint humanoid used by the synthetic data generator.
  static Skeleton humanoid12();
  // 24-joint SMPL-like default body.
  static Skeleton humanoid24();
};

void validate(const Skeleton& s);

struct Pose {
  std::vector<Quat> local_rotations;  // unit quaternions, relative to canonical
  Vec3 root_translation = Vec3::Zero();

  static Pose identity(int joint_count);
};

void validate(const Pose& p, int joint_count);

struct RigidTransform {
  Mat3 r = Mat3::Identity();
  Vec3 t = Vec3::Zero();
  Vec3 apply(const Vec3& x) const { return r * x + t; }
  RigidTransform inverse() const { return {r.transpose(), -(r.transpose() * t)}; }
  RigidTransform then(const RigidTransform& outer) const {  // outer o this
    return {outer.r * r, outer.r * t + outer.t};
  }
};

// Per-bone maps from observation space to canonical space (R_i, t_i).
struct BoneTransforms {
  std::vector<Mat3> r;
  std::vector<Vec3> t;
  int count() const { return (int)r.size(); }
};

// World transform per joint. Joint j's local rotation acts about its own rest
// position; the root additionally translates by root_translation.
std::vector<RigidTransform> forward_kinematics(const Skeleton& s, const Pose& p);

std::vector<Vec3> posed_joint_positions(const Skeleton& s, const Pose& p);

// (canonical world transform) o (posed world transform)^-1 per joint; the
// canonical FK is the identity, so this is just the inverse of the posed FK.
BoneTransforms canonicalizing_transforms(const Skeleton& s, const Pose& p);

struct Aabb {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();
  bool contains(const Vec3& x) const {
    return (x.array() >= min.array()).all() && (x.array() <= max.array()).all();
  }
  Vec3 extent() const { return max - min; }
};

Aabb skeleton_bbox(const Skeleton& s, const Pose& p, double margin);

struct Segment {
  Vec3 a, b;
};

// Weight channel k covers the segments from joint k to each of its children;
// leaf channels degenerate to the point at the joint. This binds every body
// segment to the joint transform that carries it rigidly under FK.
std::vector<Segment> channel_segments(const Skeleton& s, int k);

double point_segment_distance(const Vec3& x, const Segment& seg, Vec3* closest = nullptr);

// Distance from x to channel k's geometry (min over its segments).
double channel_distance(const Skeleton& s, int k, const Vec3& x, Vec3* closest = nullptr);

struct NearestBone {
  int bone;         // channel index
  double distance;
  Vec3 to_closest;  // vector from x to the closest point
};

// Nearest weight channel; ties broken by lowest index.
NearestBone nearest_bone(const Skeleton& s, const Vec3& x);

// Nearest joint by rest position; ties broken by lowest index.
int nearest_joint(const Skeleton& s, const Vec3& x);

}  // namespace hummorph
