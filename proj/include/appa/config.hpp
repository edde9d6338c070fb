#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "appa/core_types.hpp"
#include "appa/evalbench.hpp"
#include "appa/synthetic.hpp"
#include "appa/transforms.hpp"

namespace appa {

enum class DatasetFormat { VocXml, YoloTxt, InternalJson, DotaTxt };
enum class DatasetSplit { Train, Test };

std::string to_string(DatasetFormat f);
DatasetFormat dataset_format_from_string(const std::string& s);
std::string to_string(DatasetSplit s);
DatasetSplit dataset_split_from_string(const std::string& s);

struct DatasetRef {
  std::string root;
  DatasetFormat format = DatasetFormat::InternalJson;
  /// Labels kept at ingestion; empty keeps everything.
  std::vector<std::string> class_filter;
  DatasetSplit split = DatasetSplit::Train;
  /// Square detector input side; larger or non-square images are letterboxed
  /// to it. 0 disables resizing.
  int input_size = 0;
};

/// Which boxes drive patch placement during training.
enum class BoxSource { GroundTruth, Detections };

std::string to_string(BoxSource s);
BoxSource box_source_from_string(const std::string& s);

struct RunConfig {
  Hyperparameters hyper;
  PlacementSpec placement;
  TransformConfig transform;
  BoxSource box_source = BoxSource::GroundTruth;
  int patch_resolution = kDefaultPatchResolution;
  std::string target_class = kDefaultTargetClass;
  std::string printable_colors;  ///< path; empty selects the built-in gamut

  /// A dataset with an empty root is generated synthetically instead.
  DatasetRef train_data;
  DatasetRef test_data{"", DatasetFormat::InternalJson, {}, DatasetSplit::Test, 0};
  SyntheticSceneSpec synthetic;
  int synthetic_train_images = 2000;
  int synthetic_test_images = 500;

  std::string detector_id = "toy";  ///< adapter plugin id
  std::string detector_checkpoint;
  int detector_epochs = 12;  ///< toy detector training

  std::vector<double> sweep_angles = {0, 10, 20, 30};
  std::vector<double> sweep_scales = {0.8, 1.0, 1.2};
  std::vector<double> sweep_brightness = {-0.1, 0.0, 0.1};

  double eval_match_iou = 0.5;
  ApMethod ap_method = ApMethod::AllPoint;
  std::uint64_t seed = 0;
  std::string out_root = "runs";

  /// Stable hash of the resolved configuration (out_root excluded).
  std::string config_hash;

  EvalOptions eval_options() const;
};

}  // namespace appa
