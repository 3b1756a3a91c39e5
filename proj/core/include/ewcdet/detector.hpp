#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ewcdet/box.hpp"

namespace ewcdet {

/// Anchor grid and inference thresholds.
struct AnchorConfig {
  int image_size = 128;
  int grid_stride = 16;
  std::vector<double> anchor_heights{40.0, 60.0, 84.0};
  std::vector<double> anchor_aspect_ratios{0.41};
  double score_threshold = 0.05;
  double nms_iou_threshold = 0.5;

  /// Throws InvalidArgument when any invariant fails.
  void validate() const;

  int grid_size() const noexcept { return image_size / grid_stride; }
  std::size_t anchors_per_cell() const noexcept {
    return anchor_heights.size() * anchor_aspect_ratios.size();
  }
  std::size_t anchor_count() const noexcept {
    return static_cast<std::size_t>(grid_size()) * static_cast<std::size_t>(grid_size()) *
           anchors_per_cell();
  }
};

/// Network shape: a fixed average-pool on the input, three 3x3 conv
/// layers with ReLU (the first two followed by 2x2 average pooling), and
/// 1x1 classification and regression heads on the anchor grid.
struct Architecture {
  int input_pool = 4;
  std::array<int, 3> channels{16, 32, 32};
  int anchors_per_cell = 3;

  void validate() const;
  /// Pixel stride of one output cell.
  int total_stride() const noexcept { return input_pool * 4; }

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// Named view into the flat parameter vector.
struct ParamSlice {
  std::string name;
  std::size_t offset = 0;
  std::vector<std::size_t> shape;

  std::size_t size() const noexcept;
  bool is_bias() const noexcept;

  friend bool operator==(const ParamSlice&, const ParamSlice&) = default;
};

std::vector<ParamSlice> make_layout(const Architecture& arch);

/// The flat parameter vector together with its slice layout.
struct DetectorParams {
  Architecture arch;
  std::vector<ParamSlice> layout;
  std::vector<double> values;

  /// All-zero parameters with the canonical layout for `arch`.
  static DetectorParams zeros(const Architecture& arch);

  std::size_t size() const noexcept { return values.size(); }
  const ParamSlice& slice_info(std::string_view name) const;
  std::span<double> slice(std::string_view name);
  std::span<const double> slice(std::string_view name) const;

  /// Checks that slices are contiguous, cover [0, k) and all values are finite.
  void validate() const;
};

/// 8-bit grayscale raster, row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  friend bool operator==(const Image&, const Image&) = default;
};

struct Detection {
  Box box;
  double score = 0.0;
  std::size_t anchor_index = 0;
};

/// Raw head outputs, one entry per anchor in enumeration order.
struct RawPrediction {
  std::vector<double> logits;
  std::vector<BoxDelta> deltas;
};

/// Anchor boxes enumerated row-major over grid cells, then heights, then
/// aspect ratios.
std::vector<Box> generate_anchors(const AnchorConfig& config);

/// Deterministic He-scaled initialization; biases are zero.
DetectorParams init_params(std::uint64_t seed, const Architecture& arch);

/// Forward evaluation that retains activations so the gradient of any
/// loss built on the raw prediction can be backpropagated into the
/// parameters. The referenced params must outlive the pass.
class ForwardPass {
 public:
  ForwardPass(const DetectorParams& params, const Image& image, const AnchorConfig& config);

  const RawPrediction& prediction() const noexcept { return prediction_; }

  /// Adds d(loss)/d(theta) to `grad` given d(loss)/d(logits) and
  /// d(loss)/d(deltas).
  void backward(std::span<const double> d_logits, std::span<const BoxDelta> d_deltas,
                std::span<double> grad) const;

 private:
  const DetectorParams* params_;
  int s0_ = 0;  // side of the pooled input
  int grid_ = 0;
  int anchors_ = 0;
  std::vector<double> input_;   // [1][s0][s0]
  std::vector<double> relu1_;   // [c1][s0][s0]
  std::vector<double> pool1_;   // [c1][s0/2][s0/2]
  std::vector<double> relu2_;   // [c2][s0/2][s0/2]
  std::vector<double> pool2_;   // [c2][grid][grid]
  std::vector<double> relu3_;   // [c3][grid][grid]
  RawPrediction prediction_;
};

RawPrediction forward(const DetectorParams& params, const Image& image, const AnchorConfig& config);

BoxDelta encode_box(const Box& box, const Box& anchor);
Box decode_box(const BoxDelta& delta, const Box& anchor);
std::vector<Box> decode_boxes(std::span<const BoxDelta> deltas, std::span<const Box> anchors);

/// Greedy non-maximum suppression. Equal scores keep the lower anchor
/// index first.
std::vector<Detection> nms(std::vector<Detection> detections, double iou_threshold);

std::vector<Detection> detect(const DetectorParams& params, const Image& image,
                              const AnchorConfig& config);

inline double sigmoid(double x) noexcept {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace ewcdet
