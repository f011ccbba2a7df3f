#pragma once

#include "hummorph/io.hpp"

namespace hummorph {

struct CapsuleBone {
  int parent_joint = 0, child_joint = 0;
  double radius = 0.05;
  Vec3 albedo = Vec3(0.5, 0.5, 0.5);
  double stripe_freq = 1.0, stripe_phase = 0.0;
};

// Capsule-skinned articulated body on the 12-joint humanoid; the desk-scale
// stand-in for captured subjects.
struct SyntheticBody {
  Skeleton skeleton;
  std::vector<CapsuleBone> capsules;  // one per skeleton bone
};

SyntheticBody generate_subject(uint64_t seed);

struct ShadingOpts {
  Vec3 light_dir = Vec3(-0.4, -1.0, -0.5).normalized();  // direction of travel
  double ambient = 0.7;
  double diffuse = 0.3;
  double stripe_amp = 0.3;
};

struct OracleRender {
  ImageU8 image;
  std::vector<uint8_t> mask;  // 1 where a capsule was hit
};

// Analytic ray-capsule ground truth: nearest hit, striped albedo, Lambertian
// shading, black background.
OracleRender oracle_render(const SyntheticBody& body, const Pose& pose,
                           const Camera& cam, const ShadingOpts& opts = {});

// Smooth per-joint sinusoidal trajectories plus a root yaw sweep, so a
// sequence's second half contains genuinely novel poses and body orientations.
struct MotionParams {
  struct JointTrack {
    Vec3 axis = Vec3(1, 0, 0);
    double amplitude = 0;  // radians
    double freq = 1;       // cycles over the sequence
    double phase = 0;
  };
  std::vector<JointTrack> tracks;  // per joint
  double yaw_sweep = M_PI;         // total root rotation over the sequence
  double yaw_offset = 0;
};

MotionParams sample_motion(const Skeleton& s, uint64_t seed);
Pose sample_pose(const MotionParams& motion, int joint_count, int frame, int n_frames);

struct DatasetSpec {
  int subjects = 10;
  int train_subjects = 8;
  int frames = 16;
  int cameras = 3;
  int width = 64, height = 64;
  double camera_radius = 2.6;
  double camera_height = 1.1;
  double focal = 72;
  uint64_t seed = 0;
};

// Renders every (subject, camera, frame) via the oracle and writes
// train/test manifests; held-out subjects never appear in train/.
void build_dataset(const DatasetSpec& spec, const std::string& out_dir);

std::vector<Camera> camera_ring(const DatasetSpec& spec);

}  // namespace hummorph
