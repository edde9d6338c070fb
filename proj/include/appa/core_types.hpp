#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace appa {

/// Error categories. The CLI maps each category onto its exit code.
enum class ErrorKind { Usage, Invariant, Config, Data, Numeric, Adapter };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

/// Dense channel-planar image. Pixel intensities live in [0,1] everywhere
/// except transient gradient buffers, which reuse this type.
class Image {
 public:
  Image() = default;
  Image(int channels, int height, int width, double fill = 0.0);

  int channels() const noexcept { return channels_; }
  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& at(int c, int row, int col) { return data_[index(c, row, col)]; }
  double at(int c, int row, int col) const { return data_[index(c, row, col)]; }

  std::span<double> plane(int c) {
    return {data_.data() + static_cast<std::size_t>(c) * height_ * width_,
            static_cast<std::size_t>(height_) * width_};
  }
  std::span<const double> plane(int c) const {
    return {data_.data() + static_cast<std::size_t>(c) * height_ * width_,
            static_cast<std::size_t>(height_) * width_};
  }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool same_shape(const Image& other) const noexcept {
    return channels_ == other.channels_ && height_ == other.height_ && width_ == other.width_;
  }

  std::size_t index(int c, int row, int col) const noexcept {
    return (static_cast<std::size_t>(c) * height_ + row) * width_ + col;
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

/// Optimizable patch pixels (3 x H x W, values in [0,1]).
struct Patch {
  Image pixels;
  std::string id;

  int height() const noexcept { return pixels.height(); }
  int width() const noexcept { return pixels.width(); }
  friend bool operator==(const Patch&, const Patch&) = default;
};

/// Axis-aligned box in corner convention (pixel-edge coordinates).
struct BoundingBox {
  double x1 = 0;
  double y1 = 0;
  double x2 = 0;
  double y2 = 0;

  double width() const noexcept { return x2 - x1; }
  double height() const noexcept { return y2 - y1; }
  double area() const noexcept { return width() * height(); }
  std::pair<double, double> center() const noexcept { return {(x1 + x2) / 2, (y1 + y2) / 2}; }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// Throws Invariant if the box is non-finite or degenerate.
void validate_box(const BoundingBox& box);
bool is_valid_box(const BoundingBox& box) noexcept;

struct Detection {
  BoundingBox box;
  double objectness = 0;
  std::map<std::string, double> class_scores;
  /// Index of the raw detector candidate this detection came from. Gradients
  /// of losses over detections are routed back through this index.
  int candidate_index = -1;

  /// Class with the highest score; empty when there are no class scores.
  std::string top_class() const;
};

struct Annotation {
  std::string label;
  BoundingBox box;
  friend bool operator==(const Annotation&, const Annotation&) = default;
};

/// Letterbox mapping from source-image coordinates into the stored pixels:
/// stored = source * scale + offset.
struct Letterbox {
  double scale = 1.0;
  double offset_x = 0.0;
  double offset_y = 0.0;
  int source_width = 0;
  int source_height = 0;
  friend bool operator==(const Letterbox&, const Letterbox&) = default;
};

struct SceneImage {
  Image pixels;
  std::vector<Annotation> annotations;
  std::string name;
  std::optional<Letterbox> letterbox;

  /// Boxes of annotations whose label equals `label`, in annotation order.
  std::vector<BoundingBox> boxes_of(const std::string& label) const;
  friend bool operator==(const SceneImage&, const SceneImage&) = default;
};

void validate_scene(const SceneImage& scene);

enum class PlacementMode { OnTarget, OutsideTarget };

std::string to_string(PlacementMode mode);
PlacementMode placement_mode_from_string(const std::string& text);

struct PlacementSpec {
  PlacementMode mode = PlacementMode::OnTarget;
  double r_s = 0.2;  ///< patch area / target area (on-target)
  double r_d = 1.0;  ///< target height / centre offset (outside-target)
};

void validate_placement_spec(const PlacementSpec& spec);

struct Hyperparameters {
  double alpha = 2.5;  ///< TV weight
  double beta = 0.01;  ///< NPS weight
  double eta = 0.03;   ///< learning rate
  int n_epochs = 600;
  int batch_size = 8;
  double iou_threshold = 0.45;
  double conf_threshold = 0.4;
  bool early_stop = false;
  int early_stop_patience = 50;
  double early_stop_min_delta = 1e-4;
};

void validate_hyperparameters(const Hyperparameters& h);

inline constexpr const char* kDefaultTargetClass = "aircraft";
inline constexpr int kDefaultPatchResolution = 50;

/// Returns `p` unchanged when every invariant holds, otherwise throws
/// Invariant naming the first offending index.
const Patch& validate_patch(const Patch& p);

/// Maps every pixel into [0,1]. Throws Numeric on non-finite input.
Patch clamp_patch(Patch p);

/// Uniform patch with constant value.
Patch constant_patch(int height, int width, double value, std::string id = "patch");

}  // namespace appa
