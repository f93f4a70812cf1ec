#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "handkin/depth.hpp"
#include "handkin/hand_parameters.hpp"
#include "handkin/kinematics.hpp"
#include "handkin/topology.hpp"

namespace handkin {

/// Raw frame file: "HKD1", u32 width, u32 height (little endian), then
/// width*height little-endian float32 depths in mm, row-major.
void write_depth_frame(const std::filesystem::path& path, const DepthFrame& frame);
DepthFrame read_depth_frame(const std::filesystem::path& path, const Intrinsics& intrinsics);

struct Annotation {
  std::string id;
  JointSet joints;  // camera frame, mm
  std::optional<HandParameters> params;

  nlohmann::json to_json() const;
  static Annotation from_json(const nlohmann::json& j);
};

/// SHA-1 of "blob <size>\0<content>", as git computes object ids; hex encoded.
std::string git_blob_hash(std::string_view content);
std::string git_file_hash(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

struct DatasetRecord {
  std::string id;
  std::string split;
  int profile = 0;
  std::filesystem::path frame_path;
  Annotation annotation;
};

struct Dataset {
  nlohmann::json manifest;
  Intrinsics intrinsics;
  std::vector<DatasetRecord> records;

  std::vector<const DatasetRecord*> split(std::string_view name) const;
};

/// Reads manifest.json and annotations.jsonl from a dataset directory.
Dataset load_dataset(const std::filesystem::path& dir);

/// Offline preprocessing of every record in a split (all records when split is
/// empty); ground-truth parameters, when annotated, follow into the same frame.
std::vector<ProcessedSample> preprocess_records(const Dataset& dataset, std::string_view split,
                                                const KinematicTopology& topo, const PipelineConfig& config);

/// 8-bit binary PGM of a raster, depth -1..1 mapped to 0..255.
void write_pgm(const std::filesystem::path& path, const Raster& image);

}  // namespace handkin
