#include "hummorph/body_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "hummorph/tensor.hpp"

namespace hummorph {

std::vector<int> Skeleton::children_of(int joint) const {
  std::vector<int> out;
  for (int j = 0; j < joint_count(); ++j)
    if (parent[j] == joint) out.push_back(j);
  return out;
}

Skeleton Skeleton::from_parents(std::vector<Vec3> rest, std::vector<int> par) {
  Skeleton s;
  s.rest_positions = std::move(rest);
  s.parent = std::move(par);
  for (int j = 0; j < s.joint_count(); ++j)
    if (s.parent[j] >= 0) s.bones.push_back({s.parent[j], j});
  validate(s);
  return s;
}

void validate(const Skeleton& s) {
  int k = s.joint_count();
  check(k >= 1, "skeleton: no joints");
  check((int)s.parent.size() == k, "skeleton: parent list size mismatch");
  check(s.parent[0] == -1, "skeleton: joint 0 must be the root");
  for (int j = 1; j < k; ++j) {
    check(s.parent[j] >= 0 && s.parent[j] < j,
          "skeleton: parent of joint " + std::to_string(j) +
              " must be an earlier joint, got " + std::to_string(s.parent[j]));
  }
  for (const Bone& b : s.bones) {
    Vec3 d = s.rest_positions[b.parent_joint] - s.rest_positions[b.child_joint];
    check(d.norm() > 1e-9, "skeleton: bone (" + std::to_string(b.parent_joint) + "," +
                               std::to_string(b.child_joint) + ") has coincident endpoints");
  }
}

Skeleton Skeleton::from_file(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "skeleton: cannot open " + path);
  std::vector<Vec3> rest;
  std::vector<int> parent;
  std::string line;
  int expect = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    int idx, par;
    double x, y, z;
    check((bool)(ss >> idx >> par >> x >> y >> z), "skeleton: bad line in " + path + ": " + line);
    check(idx == expect, "skeleton: joints must be listed in order in " + path);
    ++expect;
    rest.emplace_back(x, y, z);
    parent.push_back(par);
  }
  return from_parents(std::move(rest), std::move(parent));
}

void Skeleton::save(const std::string& path) const {
  std::ofstream out(path);
  check(out.good(), "skeleton: cannot write " + path);
  out << "# joint parent rest_x rest_y rest_z\n";
  for (int j = 0; j < joint_count(); ++j) {
    out << j << " " << parent[j] << " " << rest_positions[j].x() << " "
        << rest_positions[j].y() << " " << rest_positions[j].z() << "\n";
  }
  check(out.good(), "skeleton: write failed for " + path);
}

Skeleton Skeleton::humanoid12() {
  // 0 pelvis, 1 spine, 2 chest, 3 head, 4/6 shoulders, 5/7 hands,
  // 8/10 hips, 9/11 feet. Arms horizontal (T-pose), left is -X.
  std::vector<Vec3> rest = {
      {0.00, 0.95, 0.00},   // pelvis
      {0.00, 1.15, 0.00},   // spine
      {0.00, 1.35, 0.00},   // chest
      {0.00, 1.62, 0.00},   // head
      {-0.20, 1.42, 0.00},  // l_shoulder
      {-0.62, 1.42, 0.00},  // l_hand
      {0.20, 1.42, 0.00},   // r_shoulder
      {0.62, 1.42, 0.00},   // r_hand
      {-0.10, 0.88, 0.00},  // l_hip
      {-0.12, 0.08, 0.00},  // l_foot
      {0.10, 0.88, 0.00},   // r_hip
      {0.12, 0.08, 0.00},   // r_foot
  };
  std::vector<int> parent = {-1, 0, 1, 2, 2, 4, 2, 6, 0, 8, 0, 10};
  return from_parents(std::move(rest), std::move(parent));
}

Skeleton Skeleton::humanoid24() {
  std::vector<Vec3> rest = {
      {0.00, 0.94, 0.00},   // 0 pelvis
      {-0.09, 0.87, 0.00},  // 1 l_hip
      {0.09, 0.87, 0.00},   // 2 r_hip
      {0.00, 1.07, 0.00},   // 3 spine1
      {-0.10, 0.49, 0.00},  // 4 l_knee
      {0.10, 0.49, 0.00},   // 5 r_knee
      {0.00, 1.19, 0.00},   // 6 spine2
      {-0.11, 0.11, 0.00},  // 7 l_ankle
      {0.11, 0.11, 0.00},   // 8 r_ankle
      {0.00, 1.29, 0.00},   // 9 spine3
      {-0.12, 0.04, 0.10},  // 10 l_foot
      {0.12, 0.04, 0.10},   // 11 r_foot
      {0.00, 1.44, 0.00},   // 12 neck
      {-0.07, 1.38, 0.00},  // 13 l_collar
      {0.07, 1.38, 0.00},   // 14 r_collar
      {0.00, 1.54, 0.00},   // 15 head
      {-0.18, 1.40, 0.00},  // 16 l_shoulder
      {0.18, 1.40, 0.00},   // 17 r_shoulder
      {-0.44, 1.40, 0.00},  // 18 l_elbow
      {0.44, 1.40, 0.00},   // 19 r_elbow
      {-0.68, 1.40, 0.00},  // 20 l_wrist
      {0.68, 1.40, 0.00},   // 21 r_wrist
      {-0.76, 1.40, 0.00},  // 22 l_hand
      {0.76, 1.40, 0.00},   // 23 r_hand
  };
  std::vector<int> parent = {-1, 0, 0, 0, 1,  2,  3,  4,  5,  6,  7,  8,
                             9,  9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};
  return from_parents(std::move(rest), std::move(parent));
}

Pose Pose::identity(int joint_count) {
  Pose p;
  p.local_rotations.assign(joint_count, Quat::Identity());
  return p;
}

void validate(const Pose& p, int joint_count) {
  check((int)p.local_rotations.size() == joint_count,
        "pose: " + std::to_string(p.local_rotations.size()) + " rotations for " +
            std::to_string(joint_count) + " joints");
  for (const Quat& q : p.local_rotations)
    check(std::fabs(q.norm() - 1.0) < 1e-6, "pose: non-unit quaternion (norm " +
                                                std::to_string(q.norm()) + ")");
}

std::vector<RigidTransform> forward_kinematics(const Skeleton& s, const Pose& p) {
  validate(p, s.joint_count());
  std::vector<RigidTransform> world(s.joint_count());
  for (int j = 0; j < s.joint_count(); ++j) {
    const Vec3& rest = s.rest_positions[j];
    Mat3 r = p.local_rotations[j].toRotationMatrix();
    // rotation about the joint's rest position
    RigidTransform local{r, rest - r * rest};
    if (j == 0) {
      world[j] = local;
      world[j].t += p.root_translation;
    } else {
      world[j] = local.then(world[s.parent[j]]);
    }
  }
  return world;
}

std::vector<Vec3> posed_joint_positions(const Skeleton& s, const Pose& p) {
  std::vector<RigidTransform> world = forward_kinematics(s, p);
  std::vector<Vec3> out(s.joint_count());
  for (int j = 0; j < s.joint_count(); ++j) out[j] = world[j].apply(s.rest_positions[j]);
  return out;
}

BoneTransforms canonicalizing_transforms(const Skeleton& s, const Pose& p) {
  std::vector<RigidTransform> world = forward_kinematics(s, p);
  BoneTransforms bt;
  bt.r.resize(s.joint_count());
  bt.t.resize(s.joint_count());
  for (int j = 0; j < s.joint_count(); ++j) {
    RigidTransform inv = world[j].inverse();
    bt.r[j] = inv.r;
    bt.t[j] = inv.t;
  }
  return bt;
}

Aabb skeleton_bbox(const Skeleton& s, const Pose& p, double margin) {
  check(margin >= 0, "skeleton_bbox: negative margin");
  std::vector<Vec3> pos = posed_joint_positions(s, p);
  Aabb box;
  box.min = box.max = pos[0];
  for (const Vec3& x : pos) {
    box.min = box.min.cwiseMin(x);
    box.max = box.max.cwiseMax(x);
  }
  box.min.array() -= margin;
  box.max.array() += margin;
  return box;
}

std::vector<Segment> channel_segments(const Skeleton& s, int k) {
  std::vector<Segment> segs;
  for (int c : s.children_of(k)) segs.push_back({s.rest_positions[k], s.rest_positions[c]});
  if (segs.empty()) segs.push_back({s.rest_positions[k], s.rest_positions[k]});
  return segs;
}

double point_segment_distance(const Vec3& x, const Segment& seg, Vec3* closest) {
  Vec3 d = seg.b - seg.a;
  double len2 = d.squaredNorm();
  double t = 0;
  if (len2 > 0) t = std::clamp((x - seg.a).dot(d) / len2, 0.0, 1.0);
  Vec3 c = seg.a + t * d;
  if (closest) *closest = c;
  return (x - c).norm();
}

double channel_distance(const Skeleton& s, int k, const Vec3& x, Vec3* closest) {
  double best = std::numeric_limits<double>::infinity();
  Vec3 best_c = Vec3::Zero();
  for (const Segment& seg : channel_segments(s, k)) {
    Vec3 c;
    double d = point_segment_distance(x, seg, &c);
    if (d < best) {
      best = d;
      best_c = c;
    }
  }
  if (closest) *closest = best_c;
  return best;
}

NearestBone nearest_bone(const Skeleton& s, const Vec3& x) {
  NearestBone out{0, std::numeric_limits<double>::infinity(), Vec3::Zero()};
  for (int k = 0; k < s.joint_count(); ++k) {
    Vec3 c;
    double d = channel_distance(s, k, x, &c);
    if (d < out.distance) {
      out.bone = k;
      out.distance = d;
      out.to_closest = c - x;
    }
  }
  return out;
}

int nearest_joint(const Skeleton& s, const Vec3& x) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int j = 0; j < s.joint_count(); ++j) {
    double d = (s.rest_positions[j] - x).norm();
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

}  // namespace hummorph
