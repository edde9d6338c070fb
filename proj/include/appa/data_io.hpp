#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "appa/config.hpp"
#include "appa/core_types.hpp"
#include "appa/evalbench.hpp"

namespace appa {

// ---------------------------------------------------------------------------
// Images

/// Decodes PNG or JPEG (chosen by file signature) into [0,1]. Grey and
/// alpha channels are expanded/dropped to RGB.
Image read_image(const std::filesystem::path& path);
/// 8-bit RGB PNG; values are rounded from [0,1].
void write_png(const std::filesystem::path& path, const Image& image);

/// Scales `src` to fit a size x size canvas (bilinear, aspect preserved),
/// centres it, and pads with mid grey. Records the mapping in `lb`.
Image letterbox(const Image& src, int size, Letterbox& lb);
BoundingBox letterbox_box(const BoundingBox& b, const Letterbox& lb);

// ---------------------------------------------------------------------------
// Datasets

/// YOLO normalized (cx, cy, w, h) to corner pixels and back.
BoundingBox yolo_to_corner(double cx, double cy, double w, double h, int image_width, int image_height);
std::array<double, 4> corner_to_yolo(const BoundingBox& b, int image_width, int image_height);

/// Loads a dataset in any supported format. Scenes come back in
/// lexicographic filename order with annotations filtered by
/// `ref.class_filter` and validated.
std::vector<SceneImage> load_dataset(const DatasetRef& ref);

/// Writes scenes as PNG files plus an internal_json manifest.
void write_manifest_dataset(const std::filesystem::path& root, const std::vector<SceneImage>& scenes);

inline constexpr const char* kManifestSchema = "appa-manifest";
inline constexpr int kManifestVersion = 1;

// ---------------------------------------------------------------------------
// Run configuration

/// Parses a config document:
///
///   # comment
///   [section]
///   key = value
///
/// Lists are comma separated. Unknown sections or keys, malformed values and
/// out-of-range values throw Config naming "section.key". Missing keys keep
/// their defaults. The returned config carries its hash.
RunConfig parse_config_text(const std::string& text, const std::string& source = "<config>");
RunConfig parse_config(const std::filesystem::path& path);

/// Fully resolved "section.key = value" lines, sorted by key.
std::string canonical_config(const RunConfig& config);
/// 16 hex digits of FNV-1a over canonical_config() without run.out_root.
std::string compute_config_hash(const RunConfig& config);
/// Re-validates a config assembled in code (the CLI's flag overrides) and
/// refreshes its hash.
void finalize_config(RunConfig& config);

// ---------------------------------------------------------------------------
// Artifacts

/// runs/<hash>/ layout.
struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path patch_png() const { return root / "patch.png"; }
  std::filesystem::path patch_json() const { return root / "patch.json"; }
  std::filesystem::path checkpoints() const { return root / "checkpoints"; }
  std::filesystem::path loss_csv() const { return root / "loss.csv"; }
  std::filesystem::path reports() const { return root / "reports"; }
  std::filesystem::path config_file() const { return root / "config.ini"; }
};

RunPaths run_paths(const RunConfig& config);

/// patch.png (for viewing/printing) and patch.json (exact values plus
/// metadata). `extra` is merged into the metadata object.
void save_patch(const RunPaths& paths, const Patch& patch, const RunConfig& config,
                const nlohmann::json& extra = nlohmann::json::object());
/// Reads the exact pixels back from patch.json (or a directory holding one).
Patch load_patch(const std::filesystem::path& path, std::string* config_hash = nullptr);

inline constexpr const char* kReportSchema = "appa-report";

nlohmann::ordered_json report_to_json(const BenchmarkReport& report);
BenchmarkReport report_from_json(const nlohmann::json& j);
/// Byte-stable serialization; load(save(r)) == r.
void save_report(const BenchmarkReport& report, const std::filesystem::path& path);
BenchmarkReport load_report(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace appa
