#include "ewcdet/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ewcdet/error.hpp"
#include "ewcdet/rng.hpp"

namespace ewcdet {

namespace {

// Tensors are stored channel-major: [channel][row][col].

void conv3x3_forward(std::span<const double> in, int in_ch, int side, std::span<const double> weight,
                     std::span<const double> bias, int out_ch, std::span<double> out) {
  const std::size_t plane = static_cast<std::size_t>(side) * side;
  for (int o = 0; o < out_ch; ++o) {
    double* dst = out.data() + o * plane;
    std::fill(dst, dst + plane, bias[o]);
    for (int i = 0; i < in_ch; ++i) {
      const double* src = in.data() + i * plane;
      const double* w = weight.data() + (static_cast<std::size_t>(o) * in_ch + i) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const double wk = w[ky * 3 + kx];
          const int dy = ky - 1;
          const int dx = kx - 1;
          const int y0 = std::max(0, -dy);
          const int y1 = std::min(side, side - dy);
          const int x0 = std::max(0, -dx);
          const int x1 = std::min(side, side - dx);
          for (int y = y0; y < y1; ++y) {
            double* row = dst + y * side;
            const double* srow = src + (y + dy) * side + dx;
            for (int x = x0; x < x1; ++x) row[x] += wk * srow[x];
          }
        }
      }
    }
  }
}

// `d_out` is the gradient w.r.t. the pre-activation output. Accumulates
// weight/bias gradients, and the input gradient when `d_in` is non-empty.
void conv3x3_backward(std::span<const double> in, int in_ch, int side,
                      std::span<const double> weight, std::span<const double> d_out, int out_ch,
                      std::span<double> d_weight, std::span<double> d_bias, std::span<double> d_in) {
  const std::size_t plane = static_cast<std::size_t>(side) * side;
  for (int o = 0; o < out_ch; ++o) {
    const double* g = d_out.data() + o * plane;
    double bsum = 0.0;
    for (std::size_t p = 0; p < plane; ++p) bsum += g[p];
    d_bias[o] += bsum;
    for (int i = 0; i < in_ch; ++i) {
      const double* src = in.data() + i * plane;
      const std::size_t widx = (static_cast<std::size_t>(o) * in_ch + i) * 9;
      const double* w = weight.data() + widx;
      double* dw = d_weight.data() + widx;
      double* din = d_in.empty() ? nullptr : d_in.data() + i * plane;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const int dy = ky - 1;
          const int dx = kx - 1;
          const int y0 = std::max(0, -dy);
          const int y1 = std::min(side, side - dy);
          const int x0 = std::max(0, -dx);
          const int x1 = std::min(side, side - dx);
          const double wk = w[ky * 3 + kx];
          double acc = 0.0;
          for (int y = y0; y < y1; ++y) {
            const double* grow = g + y * side;
            const double* srow = src + (y + dy) * side + dx;
            for (int x = x0; x < x1; ++x) acc += grow[x] * srow[x];
            if (din != nullptr) {
              double* drow = din + (y + dy) * side + dx;
              for (int x = x0; x < x1; ++x) drow[x] += wk * grow[x];
            }
          }
          dw[ky * 3 + kx] += acc;
        }
      }
    }
  }
}

void relu_inplace(std::span<double> v) {
  for (double& x : v) x = x > 0.0 ? x : 0.0;
}

void avgpool_forward(std::span<const double> in, int channels, int side, int k,
                     std::span<double> out) {
  const int os = side / k;
  const double scale = 1.0 / (k * k);
  for (int c = 0; c < channels; ++c) {
    const double* src = in.data() + static_cast<std::size_t>(c) * side * side;
    double* dst = out.data() + static_cast<std::size_t>(c) * os * os;
    for (int y = 0; y < os; ++y) {
      for (int x = 0; x < os; ++x) {
        double s = 0.0;
        for (int dy = 0; dy < k; ++dy) {
          const double* r = src + (y * k + dy) * side + x * k;
          for (int dx = 0; dx < k; ++dx) s += r[dx];
        }
        dst[y * os + x] = s * scale;
      }
    }
  }
}

// Spreads the pooled gradient back and masks by the ReLU that fed the pool.
void avgpool_relu_backward(std::span<const double> d_out, std::span<const double> relu_out,
                           int channels, int side, int k, std::span<double> d_in) {
  const int os = side / k;
  const double scale = 1.0 / (k * k);
  for (int c = 0; c < channels; ++c) {
    const double* g = d_out.data() + static_cast<std::size_t>(c) * os * os;
    const double* r = relu_out.data() + static_cast<std::size_t>(c) * side * side;
    double* d = d_in.data() + static_cast<std::size_t>(c) * side * side;
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * side + x;
        d[p] = r[p] > 0.0 ? g[(y / k) * os + x / k] * scale : 0.0;
      }
    }
  }
}

void require_finite(const BoxDelta& d) {
  for (double v : d) {
    if (!std::isfinite(v)) throw InvalidArgument("non-finite box delta");
  }
}

}  // namespace

void AnchorConfig::validate() const {
  if (image_size <= 0 || grid_stride <= 0) throw InvalidArgument("image_size and grid_stride must be positive");
  if (image_size % grid_stride != 0) throw InvalidArgument("image_size must be divisible by grid_stride");
  if (anchor_heights.empty() || anchor_aspect_ratios.empty())
    throw InvalidArgument("anchor heights and aspect ratios must be non-empty");
  for (double h : anchor_heights) {
    if (!(h > 0.0)) throw InvalidArgument("anchor heights must be positive");
  }
  for (double r : anchor_aspect_ratios) {
    if (!(r > 0.0)) throw InvalidArgument("anchor aspect ratios must be positive");
  }
  if (!(score_threshold >= 0.0 && score_threshold <= 1.0))
    throw InvalidArgument("score_threshold must lie in [0, 1]");
  if (!(nms_iou_threshold >= 0.0)) throw InvalidArgument("nms_iou_threshold must be non-negative");
}

void Architecture::validate() const {
  if (input_pool <= 0) throw InvalidArgument("input_pool must be positive");
  for (int c : channels) {
    if (c <= 0) throw InvalidArgument("channel counts must be positive");
  }
  if (anchors_per_cell <= 0) throw InvalidArgument("anchors_per_cell must be positive");
}

std::size_t ParamSlice::size() const noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

bool ParamSlice::is_bias() const noexcept {
  return name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
}

std::vector<ParamSlice> make_layout(const Architecture& arch) {
  arch.validate();
  const auto c1 = static_cast<std::size_t>(arch.channels[0]);
  const auto c2 = static_cast<std::size_t>(arch.channels[1]);
  const auto c3 = static_cast<std::size_t>(arch.channels[2]);
  const auto a = static_cast<std::size_t>(arch.anchors_per_cell);
  std::vector<ParamSlice> layout{
      {"conv1.weight", 0, {c1, 1, 3, 3}}, {"conv1.bias", 0, {c1}},
      {"conv2.weight", 0, {c2, c1, 3, 3}}, {"conv2.bias", 0, {c2}},
      {"conv3.weight", 0, {c3, c2, 3, 3}}, {"conv3.bias", 0, {c3}},
      {"cls.weight", 0, {a, c3}},          {"cls.bias", 0, {a}},
      {"reg.weight", 0, {4 * a, c3}},      {"reg.bias", 0, {4 * a}},
  };
  std::size_t offset = 0;
  for (auto& s : layout) {
    s.offset = offset;
    offset += s.size();
  }
  return layout;
}

DetectorParams DetectorParams::zeros(const Architecture& arch) {
  DetectorParams p;
  p.arch = arch;
  p.layout = make_layout(arch);
  const auto& last = p.layout.back();
  p.values.assign(last.offset + last.size(), 0.0);
  return p;
}

const ParamSlice& DetectorParams::slice_info(std::string_view name) const {
  for (const auto& s : layout) {
    if (s.name == name) return s;
  }
  throw InvalidArgument("unknown parameter slice: " + std::string(name));
}

std::span<double> DetectorParams::slice(std::string_view name) {
  const auto& s = slice_info(name);
  return std::span<double>(values).subspan(s.offset, s.size());
}

std::span<const double> DetectorParams::slice(std::string_view name) const {
  const auto& s = slice_info(name);
  return std::span<const double>(values).subspan(s.offset, s.size());
}

void DetectorParams::validate() const {
  std::size_t expected = 0;
  for (const auto& s : layout) {
    if (s.offset != expected) throw InvalidArgument("parameter layout is not contiguous at " + s.name);
    expected += s.size();
  }
  if (expected != values.size()) throw InvalidArgument("parameter layout does not cover the vector");
  if (layout != make_layout(arch)) throw InvalidArgument("parameter layout does not match architecture");
  for (double v : values) {
    if (!std::isfinite(v)) throw InvalidArgument("non-finite parameter value");
  }
}

std::vector<Box> generate_anchors(const AnchorConfig& config) {
  config.validate();
  const int g = config.grid_size();
  const double s = config.grid_stride;
  std::vector<Box> anchors;
  anchors.reserve(config.anchor_count());
  for (int r = 0; r < g; ++r) {
    for (int c = 0; c < g; ++c) {
      const double cx = (c + 0.5) * s;
      const double cy = (r + 0.5) * s;
      for (double h : config.anchor_heights) {
        for (double ratio : config.anchor_aspect_ratios) {
          const double w = h * ratio;
          anchors.push_back({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h});
        }
      }
    }
  }
  return anchors;
}

DetectorParams init_params(std::uint64_t seed, const Architecture& arch) {
  DetectorParams p = DetectorParams::zeros(arch);
  Rng rng(seed);
  for (const auto& s : p.layout) {
    if (s.is_bias()) continue;
    std::size_t fan_in = 1;
    for (std::size_t i = 1; i < s.shape.size(); ++i) fan_in *= s.shape[i];
    // ReLU layers get He scaling; the linear heads get 1/fan_in.
    const bool head = s.name.starts_with("cls.") || s.name.starts_with("reg.");
    const double stddev = std::sqrt((head ? 1.0 : 2.0) / static_cast<double>(fan_in));
    auto w = p.slice(s.name);
    for (double& v : w) v = stddev * rng.normal();
  }
  return p;
}

ForwardPass::ForwardPass(const DetectorParams& params, const Image& image,
                         const AnchorConfig& config)
    : params_(&params) {
  const Architecture& arch = params.arch;
  if (image.width != config.image_size || image.height != config.image_size)
    throw InvalidArgument("image is " + std::to_string(image.width) + "x" +
                          std::to_string(image.height) + ", detector expects " +
                          std::to_string(config.image_size));
  if (image.pixels.size() != static_cast<std::size_t>(image.width) * image.height)
    throw InvalidArgument("image pixel buffer has the wrong size");
  if (config.grid_stride != arch.total_stride())
    throw InvalidArgument("grid_stride does not match the architecture stride");
  if (static_cast<std::size_t>(arch.anchors_per_cell) != config.anchors_per_cell())
    throw InvalidArgument("anchors_per_cell does not match the anchor config");
  if (params.values.size() != params.layout.back().offset + params.layout.back().size())
    throw InvalidArgument("parameter vector length does not match layout");

  const int k = arch.input_pool;
  s0_ = config.image_size / k;
  grid_ = config.grid_size();
  anchors_ = arch.anchors_per_cell;
  const int c1 = arch.channels[0], c2 = arch.channels[1], c3 = arch.channels[2];
  const int s1 = s0_ / 2;

  // Pooled, centered input.
  input_.assign(static_cast<std::size_t>(s0_) * s0_, 0.0);
  const double scale = 1.0 / (255.0 * k * k);
  for (int y = 0; y < s0_; ++y) {
    for (int x = 0; x < s0_; ++x) {
      int acc = 0;
      for (int dy = 0; dy < k; ++dy) {
        for (int dx = 0; dx < k; ++dx) acc += image.at(x * k + dx, y * k + dy);
      }
      input_[static_cast<std::size_t>(y) * s0_ + x] = acc * scale - 0.5;
    }
  }

  relu1_.assign(static_cast<std::size_t>(c1) * s0_ * s0_, 0.0);
  conv3x3_forward(input_, 1, s0_, params.slice("conv1.weight"), params.slice("conv1.bias"), c1, relu1_);
  relu_inplace(relu1_);
  pool1_.assign(static_cast<std::size_t>(c1) * s1 * s1, 0.0);
  avgpool_forward(relu1_, c1, s0_, 2, pool1_);

  relu2_.assign(static_cast<std::size_t>(c2) * s1 * s1, 0.0);
  conv3x3_forward(pool1_, c1, s1, params.slice("conv2.weight"), params.slice("conv2.bias"), c2, relu2_);
  relu_inplace(relu2_);
  pool2_.assign(static_cast<std::size_t>(c2) * grid_ * grid_, 0.0);
  avgpool_forward(relu2_, c2, s1, 2, pool2_);

  relu3_.assign(static_cast<std::size_t>(c3) * grid_ * grid_, 0.0);
  conv3x3_forward(pool2_, c2, grid_, params.slice("conv3.weight"), params.slice("conv3.bias"), c3, relu3_);
  relu_inplace(relu3_);

  const auto cls_w = params.slice("cls.weight");
  const auto cls_b = params.slice("cls.bias");
  const auto reg_w = params.slice("reg.weight");
  const auto reg_b = params.slice("reg.bias");
  const std::size_t cells = static_cast<std::size_t>(grid_) * grid_;
  prediction_.logits.assign(cells * anchors_, 0.0);
  prediction_.deltas.assign(cells * anchors_, BoxDelta{});
  for (std::size_t cell = 0; cell < cells; ++cell) {
    for (int a = 0; a < anchors_; ++a) {
      double z = cls_b[a];
      for (int c = 0; c < c3; ++c) z += cls_w[a * c3 + c] * relu3_[c * cells + cell];
      prediction_.logits[cell * anchors_ + a] = z;
      BoxDelta& d = prediction_.deltas[cell * anchors_ + a];
      for (int j = 0; j < 4; ++j) {
        const int row = 4 * a + j;
        double t = reg_b[row];
        for (int c = 0; c < c3; ++c) t += reg_w[row * c3 + c] * relu3_[c * cells + cell];
        d[j] = t;
      }
    }
  }
}

void ForwardPass::backward(std::span<const double> d_logits, std::span<const BoxDelta> d_deltas,
                           std::span<double> grad) const {
  const DetectorParams& params = *params_;
  const auto& arch = params.arch;
  const int c1 = arch.channels[0], c2 = arch.channels[1], c3 = arch.channels[2];
  const int s1 = s0_ / 2;
  const std::size_t cells = static_cast<std::size_t>(grid_) * grid_;
  if (d_logits.size() != cells * anchors_ || d_deltas.size() != cells * anchors_)
    throw InvalidArgument("gradient buffers do not match the anchor count");
  if (grad.size() != params.values.size()) throw InvalidArgument("gradient length mismatch");

  auto gslice = [&](std::string_view name) {
    const auto& s = params.slice_info(name);
    return grad.subspan(s.offset, s.size());
  };

  // Heads.
  const auto cls_w = params.slice("cls.weight");
  const auto reg_w = params.slice("reg.weight");
  auto g_cls_w = gslice("cls.weight");
  auto g_cls_b = gslice("cls.bias");
  auto g_reg_w = gslice("reg.weight");
  auto g_reg_b = gslice("reg.bias");
  std::vector<double> d3(static_cast<std::size_t>(c3) * cells, 0.0);
  for (std::size_t cell = 0; cell < cells; ++cell) {
    for (int a = 0; a < anchors_; ++a) {
      const std::size_t idx = cell * anchors_ + a;
      const double gz = d_logits[idx];
      if (gz != 0.0) {
        g_cls_b[a] += gz;
        for (int c = 0; c < c3; ++c) {
          g_cls_w[a * c3 + c] += gz * relu3_[c * cells + cell];
          d3[c * cells + cell] += gz * cls_w[a * c3 + c];
        }
      }
      for (int j = 0; j < 4; ++j) {
        const double gt = d_deltas[idx][j];
        if (gt == 0.0) continue;
        const int row = 4 * a + j;
        g_reg_b[row] += gt;
        for (int c = 0; c < c3; ++c) {
          g_reg_w[row * c3 + c] += gt * relu3_[c * cells + cell];
          d3[c * cells + cell] += gt * reg_w[row * c3 + c];
        }
      }
    }
  }
  for (std::size_t i = 0; i < d3.size(); ++i) {
    if (relu3_[i] <= 0.0) d3[i] = 0.0;
  }

  // conv3: input pool2_.
  std::vector<double> d_pool2(pool2_.size(), 0.0);
  conv3x3_backward(pool2_, c2, grid_, params.slice("conv3.weight"), d3, c3, gslice("conv3.weight"),
                   gslice("conv3.bias"), d_pool2);
  std::vector<double> d2(relu2_.size(), 0.0);
  avgpool_relu_backward(d_pool2, relu2_, c2, s1, 2, d2);

  std::vector<double> d_pool1(pool1_.size(), 0.0);
  conv3x3_backward(pool1_, c1, s1, params.slice("conv2.weight"), d2, c2, gslice("conv2.weight"),
                   gslice("conv2.bias"), d_pool1);
  std::vector<double> d1(relu1_.size(), 0.0);
  avgpool_relu_backward(d_pool1, relu1_, c1, s0_, 2, d1);

  conv3x3_backward(input_, 1, s0_, params.slice("conv1.weight"), d1, c1, gslice("conv1.weight"),
                   gslice("conv1.bias"), {});
}

RawPrediction forward(const DetectorParams& params, const Image& image, const AnchorConfig& config) {
  return ForwardPass(params, image, config).prediction();
}

BoxDelta encode_box(const Box& box, const Box& anchor) {
  if (!anchor.valid() || !box.valid()) throw InvalidArgument("encode_box needs boxes with positive extent");
  const double aw = anchor.width(), ah = anchor.height();
  return {(box.center_x() - anchor.center_x()) / aw, (box.center_y() - anchor.center_y()) / ah,
          std::log(box.width() / aw), std::log(box.height() / ah)};
}

Box decode_box(const BoxDelta& delta, const Box& anchor) {
  require_finite(delta);
  const double aw = anchor.width(), ah = anchor.height();
  const double cx = anchor.center_x() + delta[0] * aw;
  const double cy = anchor.center_y() + delta[1] * ah;
  const double w = aw * std::exp(delta[2]);
  const double h = ah * std::exp(delta[3]);
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

std::vector<Box> decode_boxes(std::span<const BoxDelta> deltas, std::span<const Box> anchors) {
  if (deltas.size() != anchors.size()) throw InvalidArgument("decode_boxes: count mismatch");
  std::vector<Box> out;
  out.reserve(deltas.size());
  for (std::size_t i = 0; i < deltas.size(); ++i) out.push_back(decode_box(deltas[i], anchors[i]));
  return out;
}

std::vector<Detection> nms(std::vector<Detection> detections, double iou_threshold) {
  std::stable_sort(detections.begin(), detections.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.anchor_index < b.anchor_index;
  });
  std::vector<Detection> kept;
  for (const auto& d : detections) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return iou(k.box, d.box) > iou_threshold;
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

std::vector<Detection> detect(const DetectorParams& params, const Image& image,
                              const AnchorConfig& config) {
  const RawPrediction pred = forward(params, image, config);
  const std::vector<Box> anchors = generate_anchors(config);
  std::vector<Detection> candidates;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    // A diverged model yields non-finite outputs; those anchors detect nothing.
    const auto& d = pred.deltas[i];
    if (!std::isfinite(pred.logits[i]) || !std::all_of(d.begin(), d.end(), [](double v) { return std::isfinite(v); }))
      continue;
    const double score = sigmoid(pred.logits[i]);
    if (score < config.score_threshold) continue;
    const Box box = decode_box(d, anchors[i]);
    if (!std::isfinite(box.x_min) || !std::isfinite(box.x_max) || !std::isfinite(box.y_min) ||
        !std::isfinite(box.y_max) || !box.valid())
      continue;
    candidates.push_back({box, score, i});
  }
  return nms(std::move(candidates), config.nms_iou_threshold);
}

}  // namespace ewcdet
