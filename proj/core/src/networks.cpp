#include "cq/networks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "cq/error.hpp"

namespace cq {
namespace {

using NodeId = Graph<float>::NodeId;

constexpr const char* kArchKey = "__arch__";
constexpr const char* kBnPrefix = "__bn__";
constexpr float kDrUnetArchKind = 0.0f;
constexpr float kStmtArchKind = 1.0f;

std::size_t spatial_rank(DrUnetConfig::Mode mode) {
  return mode == DrUnetConfig::Mode::k2D ? 2 : 3;
}

Shape conv_weight_shape(std::size_t out, std::size_t in,
                        const std::vector<std::size_t>& kernel) {
  Shape s{out, in};
  s.insert(s.end(), kernel.begin(), kernel.end());
  return s;
}

ConvSpec same_conv(const std::vector<std::size_t>& kernel, std::size_t in, std::size_t out,
                   std::vector<std::size_t> dilation = {}) {
  ConvSpec spec;
  spec.kernel = kernel;
  spec.stride.assign(kernel.size(), 1);
  spec.dilation = dilation.empty() ? std::vector<std::size_t>(kernel.size(), 1)
                                   : std::move(dilation);
  spec.padding = Padding::kSame;
  spec.in_channels = in;
  spec.out_channels = out;
  return spec;
}

void validate_drunet_config(const DrUnetConfig& config) {
  if (config.base_filters == 0 || config.depth == 0 || config.classes < 2 ||
      config.in_channels == 0) {
    fail(ErrorCode::kConfig, "segmentation network needs positive filters, depth, channels "
                             "and at least two classes");
  }
  if (config.dilation_rates.empty()) {
    fail(ErrorCode::kConfig, "bottleneck dilation rate list must not be empty");
  }
  for (std::size_t d : config.dilation_rates) {
    if (d == 0) fail(ErrorCode::kConfig, "dilation rates must be >= 1");
  }
}

void validate_stmt_config(const StmtConfig& config) {
  if (config.channels.empty() || config.in_channels == 0 || config.indices == 0 ||
      config.pool_window == 0) {
    fail(ErrorCode::kConfig, "multi-task network needs blocks, channels and output widths");
  }
  for (std::size_t c : config.channels) {
    if (c == 0) fail(ErrorCode::kConfig, "block channel widths must be positive");
  }
}

Tensor zeros(const Shape& shape) { return Tensor(shape); }

Tensor ones(const Shape& shape) {
  Tensor t(shape);
  std::fill(t.data.begin(), t.data.end(), 1.0f);
  return t;
}

// Copies checkpoint tensors into an already-built parameter set.
void restore_parameters(std::map<std::string, Parameter>& params,
                        std::map<std::string, BatchNormState>* bn, const TensorMap& tensors,
                        const std::string& prefix) {
  for (auto& [name, param] : params) {
    const auto it = tensors.find(prefix + name);
    if (it == tensors.end()) {
      fail(ErrorCode::kFormat, "checkpoint is missing tensor '" + prefix + name + "'");
    }
    if (it->second.shape != param.value.shape) {
      fail(ErrorCode::kFormat, "checkpoint tensor '" + prefix + name + "' has shape " +
                                   shape_to_string(it->second.shape) + ", expected " +
                                   shape_to_string(param.value.shape));
    }
    param.value = it->second;
  }
  if (bn == nullptr) return;
  for (auto& [name, state] : *bn) {
    for (const char* field : {".mean", ".var"}) {
      const std::string key = prefix + kBnPrefix + name + field;
      const auto it = tensors.find(key);
      if (it == tensors.end()) {
        fail(ErrorCode::kFormat, "checkpoint is missing tensor '" + key + "'");
      }
      Tensor& target = field == std::string(".mean") ? state.running_mean : state.running_var;
      if (it->second.shape != target.shape) {
        fail(ErrorCode::kFormat, "checkpoint tensor '" + key + "' has the wrong shape");
      }
      target = it->second;
    }
  }
}

Tensor read_arch(const TensorMap& tensors, const std::string& prefix, float expected_kind) {
  const auto it = tensors.find(prefix + kArchKey);
  if (it == tensors.end()) {
    fail(ErrorCode::kFormat, "checkpoint has no architecture record '" + prefix + kArchKey + "'");
  }
  const Tensor& arch = it->second;
  if (arch.rank() != 1 || arch.numel() < 2 || arch.data[0] != expected_kind) {
    fail(ErrorCode::kFormat, "architecture record '" + prefix + kArchKey +
                                 "' does not describe this network type");
  }
  return arch;
}

}  // namespace

std::size_t stmt_bottleneck_width(std::size_t in_channels, std::size_t out_channels) {
  const double full = 27.0 * static_cast<double>(in_channels) * static_cast<double>(out_channels);
  const double split = 3.0 * static_cast<double>(in_channels) + 9.0 * static_cast<double>(out_channels);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(full / split)));
}

// ---------------------------------------------------------------------------
// DrUnet
// ---------------------------------------------------------------------------

DrUnet::DrUnet(const DrUnetConfig& config) : config_(config) {
  validate_drunet_config(config_);
  build_parameters(nullptr);
}

DrUnet::DrUnet(const DrUnetConfig& config, Rng& rng) : config_(config) {
  validate_drunet_config(config_);
  build_parameters(&rng);
}

void DrUnet::build_parameters(Rng* rng) {
  const std::size_t r = spatial_rank(config_.mode);
  const std::vector<std::size_t> k3(r, 3);
  const std::vector<std::size_t> k1(r, 1);

  auto add_conv = [&](const std::string& name, std::size_t out, std::size_t in,
                      const std::vector<std::size_t>& kernel) {
    const std::size_t fan_in =
        in * std::accumulate(kernel.begin(), kernel.end(), std::size_t{1},
                             std::multiplies<std::size_t>());
    const Shape shape = conv_weight_shape(out, in, kernel);
    Tensor w = rng ? he_init<float>(shape, fan_in, *rng) : zeros(shape);
    params_.emplace(name + ".w", Parameter{name + ".w", std::move(w)});
    params_.emplace(name + ".b", Parameter{name + ".b", zeros({out})});
  };
  auto add_bn = [&](const std::string& name, std::size_t channels) {
    params_.emplace(name + ".gamma", Parameter{name + ".gamma", ones({channels})});
    params_.emplace(name + ".beta", Parameter{name + ".beta", zeros({channels})});
    BatchNormState state;
    state.running_mean = zeros({channels});
    state.running_var = ones({channels});
    bn_.emplace(name, std::move(state));
  };

  std::size_t in = config_.in_channels;
  for (std::size_t level = 1; level <= config_.depth; ++level) {
    const std::string base = "enc" + std::to_string(level);
    const std::size_t out = config_.base_filters << (level - 1);
    add_conv(base + ".conv1", out, in, k3);
    add_bn(base + ".bn1", out);
    add_conv(base + ".conv2", out, out, k3);
    add_bn(base + ".bn2", out);
    if (in != out) add_conv(base + ".proj", out, in, k1);
    in = out;
  }

  const std::size_t bottleneck_out = config_.base_filters << config_.depth;
  for (std::size_t i = 0; i < config_.dilation_rates.size(); ++i) {
    add_conv("bottleneck.dil" + std::to_string(config_.dilation_rates[i]), bottleneck_out, in,
             k3);
  }

  std::size_t deep = bottleneck_out;
  for (std::size_t level = config_.depth; level >= 1; --level) {
    const std::string base = "dec" + std::to_string(level);
    const std::size_t skip = config_.base_filters << (level - 1);
    const std::size_t cat = deep + skip;
    add_conv(base + ".up", deep, deep, k3);
    add_bn(base + ".bnu", deep);
    add_conv(base + ".conv1", skip, cat, k3);
    add_bn(base + ".bn1", skip);
    add_conv(base + ".conv2", skip, skip, k3);
    add_bn(base + ".bn2", skip);
    add_conv(base + ".proj", skip, cat, k1);
    deep = skip;
  }
  add_conv("head", config_.classes, config_.base_filters, k1);
}

Parameter& DrUnet::at(const std::string& name) {
  const auto it = params_.find(name);
  if (it == params_.end()) {
    fail(ErrorCode::kConfig, "unknown network parameter '" + name + "'");
  }
  return it->second;
}

Graph<float>::NodeId DrUnet::conv_node(Graph<float>& g, NodeId x, const std::string& name,
                                       const std::vector<std::size_t>& kernel,
                                       std::vector<std::size_t> dilation) {
  Parameter& w = at(name + ".w");
  const ConvSpec spec =
      same_conv(kernel, w.value.extent(1), w.value.extent(0), std::move(dilation));
  return g.conv_nd(x, g.param(w), g.param(at(name + ".b")), spec);
}

Graph<float>::NodeId DrUnet::bn_node(Graph<float>& g, NodeId x, const std::string& name,
                                     BatchNormMode mode) {
  return g.batchnorm(x, g.param(at(name + ".gamma")), g.param(at(name + ".beta")), bn_.at(name),
                     mode);
}

// Residual unit shared by encoder and decoder: two convolutions with a
// projected skip, normalized after the residual sum.
Graph<float>::NodeId DrUnet::residual_node(Graph<float>& g, NodeId x, const std::string& base,
                                           BatchNormMode mode) {
  const std::vector<std::size_t> k3(spatial_rank(config_.mode), 3);
  const std::vector<std::size_t> k1(spatial_rank(config_.mode), 1);
  NodeId h = bn_node(g, g.relu(conv_node(g, x, base + ".conv1", k3)), base + ".bn1", mode);
  h = g.relu(conv_node(g, h, base + ".conv2", k3));
  const NodeId skip = params_.count(base + ".proj.w") ? conv_node(g, x, base + ".proj", k1) : x;
  return bn_node(g, g.add(h, skip), base + ".bn2", mode);
}

Graph<float>::NodeId DrUnet::forward_encoder_block(Graph<float>& g, NodeId x, std::size_t level,
                                                   BatchNormMode mode) {
  if (level == 0 || level > config_.depth) {
    fail(ErrorCode::kConfig, "encoder level out of range");
  }
  return residual_node(g, x, "enc" + std::to_string(level), mode);
}

Graph<float>::NodeId DrUnet::forward(Graph<float>& g, NodeId x, BatchNormMode mode) {
  const std::size_t r = spatial_rank(config_.mode);
  const TensorT<float>& xv = g.value(x);
  if (xv.rank() != 2 + r) {
    fail(ErrorCode::kShape, "segmentation input must be [batch, channels, spatial...], got " +
                                shape_to_string(xv.shape));
  }
  if (xv.extent(1) != config_.in_channels) {
    fail(ErrorCode::kShape, "segmentation input has " + std::to_string(xv.extent(1)) +
                                " channels, expected " + std::to_string(config_.in_channels));
  }
  const std::size_t divisor = std::size_t{1} << config_.depth;
  const std::size_t first_pooled_axis = config_.mode == DrUnetConfig::Mode::k3D ? 3 : 2;
  for (std::size_t axis = first_pooled_axis; axis < xv.rank(); ++axis) {
    if (xv.extent(axis) % divisor != 0) {
      fail(ErrorCode::kShape, "spatial extent " + std::to_string(xv.extent(axis)) +
                                  " is not divisible by 2^depth = " + std::to_string(divisor));
    }
  }

  const std::vector<std::size_t> k3(r, 3);
  const std::vector<std::size_t> k1(r, 1);
  std::vector<std::size_t> pool(r, 2);
  std::vector<std::size_t> up(r, 2);
  if (config_.mode == DrUnetConfig::Mode::k3D) {
    pool[0] = 1;  // never pool the time axis
    up[0] = 1;
  }

  std::vector<NodeId> skips;
  for (std::size_t level = 1; level <= config_.depth; ++level) {
    const NodeId block = forward_encoder_block(g, x, level, mode);
    skips.push_back(block);
    x = g.maxpool_nd(block, pool, pool);
  }

  NodeId z = 0;
  bool first = true;
  for (std::size_t d : config_.dilation_rates) {
    std::vector<std::size_t> dilation(r, d);
    if (config_.mode == DrUnetConfig::Mode::k3D) dilation[0] = 1;
    const NodeId branch = g.relu(
        conv_node(g, x, "bottleneck.dil" + std::to_string(d), k3, std::move(dilation)));
    z = first ? branch : g.add(z, branch);
    first = false;
  }

  for (std::size_t level = config_.depth; level >= 1; --level) {
    const std::string base = "dec" + std::to_string(level);
    NodeId u = g.upsample_nearest(z, up);
    u = bn_node(g, g.relu(conv_node(g, u, base + ".up", k3)), base + ".bnu", mode);
    z = residual_node(g, g.concat_channels(u, skips[level - 1]), base, mode);
  }
  return g.softmax_channels(conv_node(g, z, "head", k1));
}

std::size_t DrUnet::parameter_count() const {
  std::size_t count = 0;
  for (const auto& [name, param] : params_) count += param.value.numel();
  return count;
}

std::vector<Parameter*> DrUnet::parameters() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& [name, param] : params_) out.push_back(&param);
  return out;
}

TensorMap DrUnet::to_tensors(const std::string& prefix) const {
  TensorMap map;
  for (const auto& [name, param] : params_) map.emplace(prefix + name, param.value);
  for (const auto& [name, state] : bn_) {
    map.emplace(prefix + kBnPrefix + name + ".mean", state.running_mean);
    map.emplace(prefix + kBnPrefix + name + ".var", state.running_var);
  }
  std::vector<float> arch{kDrUnetArchKind,
                          static_cast<float>(config_.base_filters),
                          static_cast<float>(config_.depth),
                          config_.mode == DrUnetConfig::Mode::k2D ? 0.0f : 1.0f,
                          static_cast<float>(config_.classes),
                          static_cast<float>(config_.in_channels)};
  for (std::size_t d : config_.dilation_rates) arch.push_back(static_cast<float>(d));
  map.emplace(prefix + kArchKey, Tensor({arch.size()}, arch));
  return map;
}

DrUnet DrUnet::from_tensors(const TensorMap& tensors, const std::string& prefix) {
  const Tensor arch = read_arch(tensors, prefix, kDrUnetArchKind);
  if (arch.numel() < 7) {
    fail(ErrorCode::kFormat, "segmentation architecture record is truncated");
  }
  DrUnetConfig config;
  config.base_filters = static_cast<std::size_t>(arch.data[1]);
  config.depth = static_cast<std::size_t>(arch.data[2]);
  config.mode = arch.data[3] == 0.0f ? DrUnetConfig::Mode::k2D : DrUnetConfig::Mode::k3D;
  config.classes = static_cast<std::size_t>(arch.data[4]);
  config.in_channels = static_cast<std::size_t>(arch.data[5]);
  config.dilation_rates.clear();
  for (std::size_t i = 6; i < arch.numel(); ++i) {
    config.dilation_rates.push_back(static_cast<std::size_t>(arch.data[i]));
  }
  DrUnet net(config);
  restore_parameters(net.params_, &net.bn_, tensors, prefix);
  return net;
}

// ---------------------------------------------------------------------------
// Stmt
// ---------------------------------------------------------------------------

Stmt::Stmt(const StmtConfig& config) : config_(config) {
  validate_stmt_config(config_);
  build_parameters(nullptr);
}

Stmt::Stmt(const StmtConfig& config, Rng& rng) : config_(config) {
  validate_stmt_config(config_);
  build_parameters(&rng);
}

void Stmt::build_parameters(Rng* rng) {
  auto add_conv = [&](const std::string& name, std::size_t out, std::size_t in,
                      const std::vector<std::size_t>& kernel) {
    const std::size_t fan_in =
        in * std::accumulate(kernel.begin(), kernel.end(), std::size_t{1},
                             std::multiplies<std::size_t>());
    const Shape shape = conv_weight_shape(out, in, kernel);
    Tensor w = rng ? he_init<float>(shape, fan_in, *rng) : zeros(shape);
    params_.emplace(name + ".w", Parameter{name + ".w", std::move(w)});
    params_.emplace(name + ".b", Parameter{name + ".b", zeros({out})});
  };

  std::size_t in = config_.in_channels;
  for (std::size_t k = 0; k < config_.channels.size(); ++k) {
    const std::string base = "block" + std::to_string(k + 1);
    const std::size_t out = config_.channels[k];
    const std::size_t mid = stmt_bottleneck_width(in, out);
    add_conv(base + ".temporal", mid, in, {3, 1, 1});
    add_conv(base + ".spatial", out, mid, {1, 3, 3});
    in = out;
  }
  const std::size_t features = config_.channels.back();
  auto add_dense = [&](const std::string& name, std::size_t in_f, std::size_t out_f) {
    Tensor w = rng ? he_init<float>({in_f, out_f}, in_f, *rng) : zeros({in_f, out_f});
    params_.emplace(name + ".w", Parameter{name + ".w", std::move(w)});
    params_.emplace(name + ".b", Parameter{name + ".b", zeros({out_f})});
  };
  add_dense("head.regression", features, config_.indices);
  add_dense("head.phase", features, 1);
}

Parameter& Stmt::at(const std::string& name) {
  const auto it = params_.find(name);
  if (it == params_.end()) {
    fail(ErrorCode::kConfig, "unknown network parameter '" + name + "'");
  }
  return it->second;
}

std::pair<NodeId, NodeId> Stmt::forward(Graph<float>& g, NodeId x, BatchNormMode) {
  const TensorT<float>& xv = g.value(x);
  if (xv.rank() != 5 || xv.extent(0) != 1) {
    fail(ErrorCode::kShape, "multi-task input must be [1, channels, frames, h, w], got " +
                                shape_to_string(xv.shape));
  }
  if (xv.extent(1) != config_.in_channels) {
    fail(ErrorCode::kShape, "multi-task input has " + std::to_string(xv.extent(1)) +
                                " channels, expected " + std::to_string(config_.in_channels));
  }

  auto conv = [&](NodeId input, const std::string& name, const std::vector<std::size_t>& kernel) {
    Parameter& w = at(name + ".w");
    const ConvSpec spec = same_conv(kernel, w.value.extent(1), w.value.extent(0));
    return g.conv_nd(input, g.param(w), g.param(at(name + ".b")), spec);
  };

  const std::vector<std::size_t> pool{1, config_.pool_window, config_.pool_window};
  for (std::size_t k = 0; k < config_.channels.size(); ++k) {
    const std::string base = "block" + std::to_string(k + 1);
    x = g.relu(conv(x, base + ".temporal", {3, 1, 1}));
    x = g.relu(conv(x, base + ".spatial", {1, 3, 3}));
    x = g.maxpool_nd(x, pool, pool);
  }
  const NodeId features = g.frame_spatial_mean(x);  // [frames, channels]
  const NodeId indices =
      g.dense(features, g.param(at("head.regression.w")), g.param(at("head.regression.b")));
  const NodeId logits = g.dense(features, g.param(at("head.phase.w")), g.param(at("head.phase.b")));
  return {indices, logits};
}

std::size_t Stmt::parameter_count() const {
  std::size_t count = 0;
  for (const auto& [name, param] : params_) count += param.value.numel();
  return count;
}

std::vector<Parameter*> Stmt::parameters() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& [name, param] : params_) out.push_back(&param);
  return out;
}

TensorMap Stmt::to_tensors(const std::string& prefix) const {
  TensorMap map;
  for (const auto& [name, param] : params_) map.emplace(prefix + name, param.value);
  std::vector<float> arch{kStmtArchKind, static_cast<float>(config_.channels.size()),
                          static_cast<float>(config_.in_channels),
                          static_cast<float>(config_.indices),
                          static_cast<float>(config_.pool_window)};
  for (std::size_t c : config_.channels) arch.push_back(static_cast<float>(c));
  map.emplace(prefix + kArchKey, Tensor({arch.size()}, arch));
  return map;
}

Stmt Stmt::from_tensors(const TensorMap& tensors, const std::string& prefix) {
  const Tensor arch = read_arch(tensors, prefix, kStmtArchKind);
  if (arch.numel() < 6) {
    fail(ErrorCode::kFormat, "multi-task architecture record is truncated");
  }
  StmtConfig config;
  const auto blocks = static_cast<std::size_t>(arch.data[1]);
  config.in_channels = static_cast<std::size_t>(arch.data[2]);
  config.indices = static_cast<std::size_t>(arch.data[3]);
  config.pool_window = static_cast<std::size_t>(arch.data[4]);
  if (arch.numel() != 5 + blocks) {
    fail(ErrorCode::kFormat, "multi-task architecture record is inconsistent");
  }
  config.channels.clear();
  for (std::size_t i = 0; i < blocks; ++i) {
    config.channels.push_back(static_cast<std::size_t>(arch.data[5 + i]));
  }
  Stmt net(config);
  restore_parameters(net.params_, nullptr, tensors, prefix);
  return net;
}

// ---------------------------------------------------------------------------
// Inference wrappers
// ---------------------------------------------------------------------------

SegmentationOutput forward_segmentation(DrUnet& net, const CineSequence& seq) {
  if (seq.frames.rank() != 3) {
    fail(ErrorCode::kShape, "cine sequence must be [frames, height, width], got " +
                                shape_to_string(seq.frames.shape));
  }
  if (!seq.frames.all_finite()) {
    fail(ErrorCode::kValue, "segmentation input contains non-finite pixels");
  }
  const std::size_t t_count = seq.frame_count(), h = seq.height(), w = seq.width();
  const std::size_t classes = net.config().classes;

  SegmentationOutput out;
  out.probabilities = Tensor({t_count, h, w, classes});
  out.hard_labels.frames = t_count;
  out.hard_labels.height = h;
  out.hard_labels.width = w;
  out.hard_labels.pixel_spacing = seq.pixel_spacing;
  out.hard_labels.labels.assign(t_count * h * w, 0);

  // probs: [n, classes, h, w] for `count` frames starting at `start`.
  auto scatter = [&](const Tensor& probs, std::size_t start, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t t = start + i;
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          std::size_t best = 0;
          for (std::size_t k = 0; k < classes; ++k) {
            const float p = probs.data[((i * classes + k) * h + y) * w + x];
            out.probabilities.data[((t * h + y) * w + x) * classes + k] = p;
            if (p > probs.data[((i * classes + best) * h + y) * w + x]) best = k;
          }
          out.hard_labels.labels[(t * h + y) * w + x] = static_cast<std::uint8_t>(best);
        }
      }
    }
  };

  if (net.config().mode == DrUnetConfig::Mode::k3D) {
    Graph<float> g;
    Tensor input = seq.frames.reshaped({1, 1, t_count, h, w});
    const NodeId probs = net.forward(g, g.input(std::move(input)), BatchNormMode::kInfer);
    // [1, classes, t, h, w] -> per-frame scatter via a transposed view.
    const Tensor& pv = g.value(probs);
    Tensor frame({1, classes, h, w});
    for (std::size_t t = 0; t < t_count; ++t) {
      for (std::size_t k = 0; k < classes; ++k) {
        for (std::size_t i = 0; i < h * w; ++i) {
          frame.data[k * h * w + i] = pv.data[(k * t_count + t) * h * w + i];
        }
      }
      scatter(frame, t, 1);
    }
    return out;
  }

  const std::size_t chunk = 4;  // frames per forward pass, bounds tape memory
  for (std::size_t start = 0; start < t_count; start += chunk) {
    const std::size_t count = std::min(chunk, t_count - start);
    Tensor input({count, 1, h, w});
    std::copy_n(seq.frames.data.begin() + start * h * w, count * h * w, input.data.begin());
    Graph<float> g;
    const NodeId probs = net.forward(g, g.input(std::move(input)), BatchNormMode::kInfer);
    scatter(g.value(probs), start, count);
  }
  return out;
}

MultiTaskOutput forward_multitask(Stmt& net, const Tensor& masks) {
  if (masks.rank() != 4) {
    fail(ErrorCode::kShape, "multi-task input must be [frames, h, w, channels], got " +
                                shape_to_string(masks.shape));
  }
  if (masks.extent(3) != net.config().in_channels) {
    fail(ErrorCode::kShape, "multi-task input has " + std::to_string(masks.extent(3)) +
                                " channels, expected " +
                                std::to_string(net.config().in_channels));
  }
  for (float v : masks.data) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      fail(ErrorCode::kValue, "mask probabilities must lie in [0, 1]");
    }
  }
  const std::size_t t = masks.extent(0), h = masks.extent(1), w = masks.extent(2);
  const std::size_t c = masks.extent(3);

  Graph<float> g;
  const NodeId x = g.input(masks);
  const NodeId channels_first = g.permute(x, {3, 0, 1, 2});  // [c, t, h, w]
  const NodeId batched = g.reshape(channels_first, {1, c, t, h, w});
  const auto [indices, logits] = net.forward(g, batched, BatchNormMode::kInfer);

  MultiTaskOutput out;
  out.indices = g.value(indices);
  out.phase_logits = g.value(logits);
  out.phase_probs = g.value(g.sigmoid(logits));
  return out;
}

}  // namespace cq
