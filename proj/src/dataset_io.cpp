#include "handkin/dataset_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_map>

#include <openssl/evp.h>

#include "handkin/normalization.hpp"
#include "handkin/parallel.hpp"

namespace handkin {

namespace {

constexpr char kMagic[4] = {'H', 'K', 'D', '1'};

void put_u32(std::string& out, std::uint32_t x) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((x >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path.string());
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

void write_depth_frame(const std::filesystem::path& path, const DepthFrame& frame) {
  std::string buf;
  buf.reserve(12 + 4 * frame.depth.size());
  buf.append(kMagic, 4);
  put_u32(buf, static_cast<std::uint32_t>(frame.width));
  put_u32(buf, static_cast<std::uint32_t>(frame.height));
  for (float z : frame.depth) put_u32(buf, std::bit_cast<std::uint32_t>(z));
  write_file(path, buf);
}

DepthFrame read_depth_frame(const std::filesystem::path& path, const Intrinsics& intrinsics) {
  const std::string buf = read_file(path);
  if (buf.size() < 12 || std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw IoError("not an HKD1 depth frame: " + path.string());
  }
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  const std::uint32_t w = get_u32(p + 4), h = get_u32(p + 8);
  if (buf.size() != 12 + 4ull * w * h) throw IoError("truncated HKD1 depth frame: " + path.string());
  DepthFrame f(static_cast<int>(w), static_cast<int>(h), intrinsics);
  for (std::size_t i = 0; i < f.depth.size(); ++i) f.depth[i] = std::bit_cast<float>(get_u32(p + 12 + 4 * i));
  return f;
}

nlohmann::json Annotation::to_json() const {
  nlohmann::json j;
  j["id"] = id;
  const auto flat = joints.flatten();
  j["joints_mm"] = std::vector<double>(flat.begin(), flat.end());
  if (params) {
    const auto lam = params->flatten();
    j["lambda"] = std::vector<double>(lam.begin(), lam.end());
  }
  return j;
}

Annotation Annotation::from_json(const nlohmann::json& j) {
  Annotation a;
  try {
    a.id = j.at("id").get<std::string>();
    const auto joints = j.at("joints_mm").get<std::vector<double>>();
    require(joints.size() == 3 * kNumJoints, "annotation: joints_mm needs 63 values");
    a.joints = JointSet::unflatten(std::span<const double, 3 * kNumJoints>(joints.data(), 3 * kNumJoints));
    if (j.contains("lambda")) {
      const auto lam = j.at("lambda").get<std::vector<double>>();
      require(lam.size() == kNumParams, "annotation: lambda needs 61 values");
      a.params = HandParameters::unflatten(std::span<const double, kNumParams>(lam.data(), kNumParams));
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("annotation: malformed json: ") + e.what());
  }
  return a;
}

std::string git_blob_hash(std::string_view content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, header.data(), header.size());
  EVP_DigestUpdate(ctx, content.data(), content.size());
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

std::string git_file_hash(const std::filesystem::path& path) { return git_blob_hash(read_file(path)); }

std::vector<const DatasetRecord*> Dataset::split(std::string_view name) const {
  std::vector<const DatasetRecord*> out;
  for (const auto& r : records) {
    if (r.split == name) out.push_back(&r);
  }
  return out;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  const auto manifest_path = dir / "manifest.json";
  try {
    ds.manifest = nlohmann::json::parse(read_file(manifest_path));
    const auto& cam = ds.manifest.at("camera");
    ds.intrinsics = {cam.at("fx").get<double>(), cam.at("fy").get<double>(), cam.at("cx").get<double>(),
                     cam.at("cy").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  std::unordered_map<std::string, Annotation> annotations;
  {
    std::istringstream lines(read_file(dir / ds.manifest.value("annotations", "annotations.jsonl")));
    std::string line;
    while (std::getline(lines, line)) {
      if (line.empty()) continue;
      Annotation a = Annotation::from_json(nlohmann::json::parse(line));
      annotations.emplace(a.id, std::move(a));
    }
  }
  for (const auto& s : ds.manifest.at("samples")) {
    DatasetRecord r;
    r.id = s.at("id").get<std::string>();
    r.split = s.at("split").get<std::string>();
    r.profile = s.at("profile").get<int>();
    r.frame_path = dir / s.at("file").get<std::string>();
    const auto it = annotations.find(r.id);
    if (it == annotations.end()) throw IoError("missing annotation for sample " + r.id + " in " + dir.string());
    r.annotation = it->second;
    ds.records.push_back(std::move(r));
  }
  return ds;
}

std::vector<ProcessedSample> preprocess_records(const Dataset& dataset, std::string_view split,
                                                const KinematicTopology& topo, const PipelineConfig& config) {
  std::vector<const DatasetRecord*> rows;
  for (const auto& r : dataset.records) {
    if (split.empty() || r.split == split) rows.push_back(&r);
  }
  std::vector<ProcessedSample> out(rows.size());
  parallel_for(rows.size(), [&](std::size_t i) {
    const DatasetRecord& r = *rows[i];
    const DepthFrame frame = read_depth_frame(r.frame_path, dataset.intrinsics);
    out[i] = preprocess_frame(frame, r.annotation.joints, topo, config, r.id);
    if (r.annotation.params) out[i].params_gt = preprocess_params(*r.annotation.params, out[i].state);
  });
  return out;
}

void write_pgm(const std::filesystem::path& path, const Raster& image) {
  std::string buf = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  for (float x : image.data) {
    const double v = std::clamp((static_cast<double>(x) + 1.0) * 127.5, 0.0, 255.0);
    buf.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v))));
  }
  write_file(path, buf);
}

}  // namespace handkin
