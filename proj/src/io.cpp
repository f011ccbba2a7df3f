#include "hummorph/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace hummorph {

namespace fs = std::filesystem;

void save_ppm(const std::string& path, const ImageU8& img) {
  check(img.width > 0 && img.height > 0 &&
            (int64_t)img.rgb.size() == (int64_t)img.width * img.height * 3,
        "save_ppm: inconsistent image for " + path);
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "save_ppm: cannot write " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()), (std::streamsize)img.rgb.size());
  check(out.good(), "save_ppm: write failed for " + path);
}

ImageU8 load_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "load_ppm: cannot open " + path);
  std::string magic;
  in >> magic;
  check(magic == "P6", "load_ppm: " + path + " is not a binary PPM");
  auto next_int = [&]() {
    int v;
    in >> std::ws;
    while (in.peek() == '#') {
      std::string comment;
      std::getline(in, comment);
      in >> std::ws;
    }
    check((bool)(in >> v), "load_ppm: truncated header in " + path);
    return v;
  };
  ImageU8 img;
  img.width = next_int();
  img.height = next_int();
  int maxval = next_int();
  check(maxval == 255, "load_ppm: only 8-bit PPM supported (" + path + ")");
  in.get();  // single whitespace after header
  img.rgb.resize((size_t)img.width * img.height * 3);
  in.read(reinterpret_cast<char*>(img.rgb.data()), (std::streamsize)img.rgb.size());
  check(in.gcount() == (std::streamsize)img.rgb.size(), "load_ppm: truncated data in " + path);
  return img;
}

Tensor image_to_tensor(const ImageU8& img, DType dt) {
  Tensor t({3, img.height, img.width}, dt);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        t.set(((int64_t)c * img.height + y) * img.width + x,
              img.rgb[((size_t)y * img.width + x) * 3 + c] / 255.0);
  return t;
}

ImageU8 tensor_to_image(const Tensor& rgb, int width, int height) {
  check(rgb.numel() == (int64_t)width * height * 3, "tensor_to_image: size mismatch");
  ImageU8 img;
  img.width = width;
  img.height = height;
  img.rgb.resize((size_t)width * height * 3);
  for (int64_t i = 0; i < rgb.numel(); ++i) {
    double v = std::clamp(rgb.get(i), 0.0, 1.0);
    img.rgb[(size_t)i] = (uint8_t)std::lround(v * 255.0);
  }
  return img;
}

Tensor image_rows(const ImageU8& img, DType dt) {
  Tensor t({(int64_t)img.width * img.height, 3}, dt);
  for (int64_t i = 0; i < t.numel(); ++i) t.set(i, img.rgb[(size_t)i] / 255.0);
  return t;
}

namespace {

template <typename T>
void write_le(std::ofstream& out, T v) {
  // in-memory layout is little-endian on every supported target
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void save_float_volume(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "save_float_volume: cannot write " + path);
  out.write("HMFD", 4);
  write_le<uint32_t>(out, (uint32_t)t.rank());
  for (int i = 0; i < t.rank(); ++i) write_le<uint64_t>(out, (uint64_t)t.dim(i));
  for (int64_t i = 0; i < t.numel(); ++i) write_le<float>(out, (float)t.get(i));
  check(out.good(), "save_float_volume: write failed for " + path);
}

Tensor load_float_volume(const std::string& path, DType dt) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "load_float_volume: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  check(in.good() && std::memcmp(magic, "HMFD", 4) == 0,
        "load_float_volume: bad magic in " + path);
  uint32_t rank = read_le<uint32_t>(in);
  check(rank <= 8, "load_float_volume: implausible rank in " + path);
  Shape shape(rank);
  for (uint32_t i = 0; i < rank; ++i) shape[i] = (int64_t)read_le<uint64_t>(in);
  Tensor t(shape, dt);
  for (int64_t i = 0; i < t.numel(); ++i) t.set(i, read_le<float>(in));
  check(in.good(), "load_float_volume: truncated data in " + path);
  return t;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "save_checkpoint: cannot write " + path);
  out.write("HMRF", 4);
  write_le<uint32_t>(out, ckpt.version);
  write_le<uint64_t>(out, ckpt.iteration);
  write_le<uint64_t>(out, (uint64_t)ckpt.config_json.size());
  out.write(ckpt.config_json.data(), (std::streamsize)ckpt.config_json.size());
  write_le<uint64_t>(out, (uint64_t)ckpt.tensors.size());
  for (const auto& [name, t] : ckpt.tensors) {
    write_le<uint32_t>(out, (uint32_t)name.size());
    out.write(name.data(), (std::streamsize)name.size());
    write_le<uint32_t>(out, (uint32_t)t.rank());
    for (int i = 0; i < t.rank(); ++i) write_le<uint64_t>(out, (uint64_t)t.dim(i));
    for (int64_t i = 0; i < t.numel(); ++i) write_le<float>(out, (float)t.get(i));
  }
  check(out.good(), "save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "load_checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  check(in.good() && std::memcmp(magic, "HMRF", 4) == 0,
        "load_checkpoint: bad magic in " + path);
  Checkpoint ckpt;
  ckpt.version = read_le<uint32_t>(in);
  check(ckpt.version == 1, "load_checkpoint: unsupported version in " + path);
  ckpt.iteration = read_le<uint64_t>(in);
  uint64_t cfg_len = read_le<uint64_t>(in);
  ckpt.config_json.resize(cfg_len);
  in.read(ckpt.config_json.data(), (std::streamsize)cfg_len);
  uint64_t count = read_le<uint64_t>(in);
  for (uint64_t i = 0; i < count; ++i) {
    uint32_t name_len = read_le<uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    uint32_t rank = read_le<uint32_t>(in);
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = (int64_t)read_le<uint64_t>(in);
    Tensor t(shape, DType::F32);
    in.read(reinterpret_cast<char*>(t.data<float>()), (std::streamsize)(t.numel() * 4));
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  check(in.good(), "load_checkpoint: truncated data in " + path);
  return ckpt;
}

const FrameRecord* SceneSequence::find(int camera, int frame) const {
  for (const FrameRecord& r : records)
    if (r.camera == camera && r.frame == frame) return &r;
  return nullptr;
}

void save_manifest(const std::string& path, const SceneSequence& seq) {
  std::ofstream out(path);
  check(out.good(), "save_manifest: cannot write " + path);
  out.precision(17);
  out << "hummorph-scene v1\n";
  out << "skeleton " << seq.skeleton_path << "\n";
  out << "frames " << seq.frame_count << "\n";
  out << "cameras " << seq.cameras.size() << "\n";
  for (size_t c = 0; c < seq.cameras.size(); ++c) {
    const Camera& cam = seq.cameras[c];
    out << "camera " << c << " fx " << cam.intr.fx << " fy " << cam.intr.fy << " cx "
        << cam.intr.cx << " cy " << cam.intr.cy << " w " << cam.intr.width << " h "
        << cam.intr.height << " R";
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) out << " " << cam.extr.rot(a, b);
    out << " t";
    for (int a = 0; a < 3; ++a) out << " " << cam.extr.trans[a];
    out << "\n";
  }
  for (const FrameRecord& r : seq.records) {
    out << "frame " << r.frame << " cam " << r.camera << " image " << r.image << " pose "
        << (r.estimated ? "estimated" : "accurate") << " root";
    for (int a = 0; a < 3; ++a) out << " " << r.pose.root_translation[a];
    for (const Quat& q : r.pose.local_rotations)
      out << " q " << q.w() << " " << q.x() << " " << q.y() << " " << q.z();
    out << "\n";
  }
  check(out.good(), "save_manifest: write failed for " + path);
}

SceneSequence load_manifest(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "load_manifest: cannot open " + path);
  SceneSequence seq;
  seq.root = fs::path(path).parent_path().string();
  std::string line;
  check(std::getline(in, line) && line == "hummorph-scene v1",
        "load_manifest: bad header in " + path);
  int joint_count = -1;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "skeleton") {
      ss >> seq.skeleton_path;
      fs::path sk = fs::path(seq.root) / seq.skeleton_path;
      seq.skeleton = Skeleton::from_file(sk.string());
      joint_count = seq.skeleton.joint_count();
    } else if (key == "frames") {
      ss >> seq.frame_count;
    } else if (key == "cameras") {
      size_t n;
      ss >> n;
      seq.cameras.resize(n);
    } else if (key == "camera") {
      size_t idx;
      std::string tag;
      Camera cam;
      ss >> idx;
      check(idx < seq.cameras.size(), "load_manifest: camera index out of range");
      ss >> tag >> cam.intr.fx >> tag >> cam.intr.fy >> tag >> cam.intr.cx >> tag >>
          cam.intr.cy >> tag >> cam.intr.width >> tag >> cam.intr.height >> tag;
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) ss >> cam.extr.rot(a, b);
      ss >> tag;
      for (int a = 0; a < 3; ++a) ss >> cam.extr.trans[a];
      check(!ss.fail(), "load_manifest: bad camera line: " + line);
      seq.cameras[idx] = cam;
    } else if (key == "frame") {
      check(joint_count > 0, "load_manifest: frame record before skeleton in " + path);
      FrameRecord r;
      std::string tag, posetag;
      ss >> r.frame >> tag >> r.camera >> tag >> r.image >> tag >> posetag >> tag;
      r.estimated = posetag == "estimated";
      for (int a = 0; a < 3; ++a) ss >> r.pose.root_translation[a];
      r.pose.local_rotations.resize(joint_count);
      for (int j = 0; j < joint_count; ++j) {
        double w, x, y, z;
        ss >> tag >> w >> x >> y >> z;
        r.pose.local_rotations[j] = Quat(w, x, y, z);
      }
      check(!ss.fail(), "load_manifest: bad frame line: " + line);
      seq.records.push_back(std::move(r));
    } else {
      fail("load_manifest: unknown key '" + key + "' in " + path);
    }
  }
  check(joint_count > 0, "load_manifest: no skeleton in " + path);
  // frame indices unique per camera
  for (size_t i = 0; i < seq.records.size(); ++i)
    for (size_t j = i + 1; j < seq.records.size(); ++j)
      check(seq.records[i].frame != seq.records[j].frame ||
                seq.records[i].camera != seq.records[j].camera,
            "load_manifest: duplicate (camera,frame) in " + path);
  return seq;
}

Tensor load_frame_image(const SceneSequence& seq, const FrameRecord& rec, DType dt) {
  fs::path p = fs::path(seq.root) / rec.image;
  return image_to_tensor(load_ppm(p.string()), dt);
}

std::vector<SceneSequence> load_scene_dir(const std::string& dir) {
  std::vector<std::string> manifests;
  check(fs::exists(dir), "load_scene_dir: no such directory: " + dir);
  for (const auto& entry : fs::directory_iterator(dir)) {
    fs::path m = entry.path() / "manifest.txt";
    if (entry.is_directory() && fs::exists(m)) manifests.push_back(m.string());
  }
  std::sort(manifests.begin(), manifests.end());
  std::vector<SceneSequence> out;
  for (const std::string& m : manifests) out.push_back(load_manifest(m));
  return out;
}

}  // namespace hummorph
