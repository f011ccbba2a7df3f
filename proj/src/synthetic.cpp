#include "hummorph/synthetic.hpp"

#include <cmath>
#include <filesystem>

#include "hummorph/threading.hpp"

namespace hummorph {

namespace fs = std::filesystem;

SyntheticBody generate_subject(uint64_t seed) {
  Rng rng(seed);
  SyntheticBody body;
  body.skeleton = Skeleton::humanoid12();
  for (const Bone& b : body.skeleton.bones) {
    CapsuleBone c;
    c.parent_joint = b.parent_joint;
    c.child_joint = b.child_joint;
    c.radius = rng.uniform(0.03, 0.08);
    c.albedo = Vec3(rng.uniform(0.2, 0.95), rng.uniform(0.2, 0.95), rng.uniform(0.2, 0.95));
    c.stripe_freq = rng.uniform(1.0, 3.0);
    c.stripe_phase = rng.uniform(0, 2 * M_PI);
    body.capsules.push_back(c);
  }
  return body;
}

namespace {

struct CapsuleHit {
  double t = std::numeric_limits<double>::infinity();
  Vec3 normal = Vec3::Zero();
  double axis_s = 0;  // [0,1] along the capsule axis
};

// Nearest intersection of a ray with a capsule (cylinder body + sphere caps).
bool ray_capsule(const Ray& ray, const Vec3& p0, const Vec3& p1, double radius,
                 CapsuleHit& hit) {
  const double tmin = 1e-6;
  Vec3 axis = p1 - p0;
  double len = axis.norm();
  bool found = false;

  auto try_sphere = [&](const Vec3& c, double s_at) {
    Vec3 oc = ray.origin - c;
    double b = oc.dot(ray.dir);
    double disc = b * b - (oc.squaredNorm() - radius * radius);
    if (disc < 0) return;
    double t = -b - std::sqrt(disc);
    if (t < tmin || t >= hit.t) return;
    hit.t = t;
    hit.normal = (ray.origin + t * ray.dir - c) / radius;
    hit.axis_s = s_at;
    found = true;
  };

  if (len < 1e-12) {
    try_sphere(p0, 0.0);
    return found;
  }
  Vec3 u = axis / len;
  // infinite cylinder
  Vec3 dd = ray.dir - ray.dir.dot(u) * u;
  Vec3 mm = (ray.origin - p0) - (ray.origin - p0).dot(u) * u;
  double a = dd.squaredNorm();
  if (a > 1e-14) {
    double b = dd.dot(mm);
    double c = mm.squaredNorm() - radius * radius;
    double disc = b * b - a * c;
    if (disc >= 0) {
      double t = (-b - std::sqrt(disc)) / a;
      if (t >= tmin && t < hit.t) {
        Vec3 x = ray.origin + t * ray.dir;
        double s = (x - p0).dot(u);
        if (s >= 0 && s <= len) {
          hit.t = t;
          hit.normal = (x - (p0 + s * u)) / radius;
          hit.axis_s = s / len;
          found = true;
        }
      }
    }
  }
  try_sphere(p0, 0.0);
  try_sphere(p1, 1.0);
  return found;
}

}  // namespace

OracleRender oracle_render(const SyntheticBody& body, const Pose& pose, const Camera& cam,
                           const ShadingOpts& opts) {
  validate(cam);
  std::vector<RigidTransform> world = forward_kinematics(body.skeleton, pose);
  std::vector<Vec3> p0(body.capsules.size()), p1(body.capsules.size());
  for (size_t i = 0; i < body.capsules.size(); ++i) {
    const CapsuleBone& c = body.capsules[i];
    p0[i] = world[c.parent_joint].apply(body.skeleton.rest_positions[c.parent_joint]);
    p1[i] = world[c.parent_joint].apply(body.skeleton.rest_positions[c.child_joint]);
  }
  int w = cam.intr.width, h = cam.intr.height;
  OracleRender out;
  out.image.width = w;
  out.image.height = h;
  out.image.rgb.assign((size_t)w * h * 3, 0);
  out.mask.assign((size_t)w * h, 0);
  Vec3 to_light = -opts.light_dir;

  parallel_for(h, [&](int64_t rlo, int64_t rhi) {
    for (int64_t y = rlo; y < rhi; ++y)
      for (int x = 0; x < w; ++x) {
        Ray ray = ray_for_pixel(x + 0.5, y + 0.5, cam);
        CapsuleHit best;
        int best_i = -1;
        for (size_t i = 0; i < body.capsules.size(); ++i) {
          CapsuleHit hit = best;
          if (ray_capsule(ray, p0[i], p1[i], body.capsules[i].radius, hit) &&
              hit.t < best.t) {
            best = hit;
            best_i = (int)i;
          }
        }
        if (best_i < 0) continue;
        const CapsuleBone& c = body.capsules[(size_t)best_i];
        double stripe = 1.0 - opts.stripe_amp +
                        opts.stripe_amp * 0.5 *
                            (1.0 + std::sin(2 * M_PI * c.stripe_freq * best.axis_s +
                                            c.stripe_phase));
        double shade = opts.ambient +
                       opts.diffuse * std::max(0.0, best.normal.dot(to_light));
        size_t at = ((size_t)y * w + x);
        out.mask[at] = 1;
        for (int d = 0; d < 3; ++d) {
          double v = std::clamp(c.albedo[d] * stripe * shade, 0.0, 1.0);
          out.image.rgb[at * 3 + d] = (uint8_t)std::lround(v * 255.0);
        }
      }
  }, 4);
  return out;
}

MotionParams sample_motion(const Skeleton& s, uint64_t seed) {
  Rng rng(seed);
  MotionParams motion;
  motion.tracks.resize(s.joint_count());
  // articulation amplitudes per joint of the 12-joint humanoid
  std::vector<double> amp(s.joint_count(), 0.0);
  auto deg = [](double d) { return d * M_PI / 180.0; };
  if (s.joint_count() == 12) {
    amp = {0,        deg(10), deg(8), deg(8), deg(35), deg(10),
           deg(35),  deg(10), deg(22), deg(8), deg(22), deg(8)};
  } else {
    for (int j = 1; j < s.joint_count(); ++j) amp[j] = deg(15);
  }
  for (int j = 0; j < s.joint_count(); ++j) {
    MotionParams::JointTrack& t = motion.tracks[j];
    Vec3 axis(rng.normal(), rng.normal(), rng.normal());
    double len = axis.norm();
    t.axis = len < 1e-9 ? Vec3(1, 0, 0) : Vec3(axis / len);
    t.amplitude = amp[j] * rng.uniform(0.6, 1.0);
    t.freq = rng.uniform(0.5, 1.5);
    t.phase = rng.uniform(0, 2 * M_PI);
  }
  motion.yaw_sweep = rng.uniform(0.6, 1.1) * M_PI;
  motion.yaw_offset = rng.uniform(0, 2 * M_PI);
  return motion;
}

Pose sample_pose(const MotionParams& motion, int joint_count, int frame, int n_frames) {
  check((int)motion.tracks.size() == joint_count, "sample_pose: track count mismatch");
  Pose p = Pose::identity(joint_count);
  double u = n_frames > 1 ? (double)frame / (double)(n_frames - 1) : 0.0;
  for (int j = 0; j < joint_count; ++j) {
    const MotionParams::JointTrack& t = motion.tracks[j];
    double angle = t.amplitude * std::sin(2 * M_PI * t.freq * u + t.phase);
    Quat q(Eigen::AngleAxisd(angle, t.axis));
    if (j == 0) {
      Quat yaw(Eigen::AngleAxisd(motion.yaw_offset + motion.yaw_sweep * u, Vec3(0, 1, 0)));
      q = yaw * q;
    }
    p.local_rotations[j] = q.normalized();
  }
  return p;
}

std::vector<Camera> camera_ring(const DatasetSpec& spec) {
  std::vector<Camera> cams;
  Vec3 target(0, 0.95, 0);
  for (int c = 0; c < spec.cameras; ++c) {
    double a = 2 * M_PI * c / spec.cameras;
    Vec3 eye(spec.camera_radius * std::cos(a), spec.camera_height,
             spec.camera_radius * std::sin(a));
    cams.push_back(make_look_at_camera(eye, target, spec.focal, spec.width, spec.height));
  }
  return cams;
}

void build_dataset(const DatasetSpec& spec, const std::string& out_dir) {
  check(spec.subjects >= 1 && spec.train_subjects >= 0 &&
            spec.train_subjects <= spec.subjects,
        "build_dataset: bad subject split");
  fs::create_directories(out_dir);
  Skeleton skel = Skeleton::humanoid12();
  skel.save((fs::path(out_dir) / "skeleton.txt").string());
  std::vector<Camera> cams = camera_ring(spec);

  for (int s = 0; s < spec.subjects; ++s) {
    bool train = s < spec.train_subjects;
    char name[32];
    std::snprintf(name, sizeof(name), "s%03d", s);
    fs::path dir = fs::path(out_dir) / (train ? "train" : "test") / name;
    fs::create_directories(dir);

    SyntheticBody body = generate_subject(mix_seed(spec.seed, (uint64_t)s));
    MotionParams motion = sample_motion(skel, mix_seed(spec.seed, 1000 + (uint64_t)s));

    SceneSequence seq;
    seq.root = dir.string();
    seq.skeleton_path = "../../skeleton.txt";
    seq.skeleton = skel;
    seq.cameras = cams;
    seq.frame_count = spec.frames;
    for (int f = 0; f < spec.frames; ++f) {
      Pose pose = sample_pose(motion, skel.joint_count(), f, spec.frames);
      for (int c = 0; c < spec.cameras; ++c) {
        OracleRender render = oracle_render(body, pose, cams[c]);
        char img_name[48];
        std::snprintf(img_name, sizeof(img_name), "c%d_f%03d.ppm", c, f);
        save_ppm((dir / img_name).string(), render.image);
        FrameRecord rec;
        rec.frame = f;
        rec.camera = c;
        rec.image = img_name;
        rec.pose = pose;
        seq.records.push_back(std::move(rec));
      }
    }
    save_manifest((dir / "manifest.txt").string(), seq);
  }
}

}  // namespace hummorph
