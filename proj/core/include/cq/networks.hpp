#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cq/checkpoint.hpp"
#include "cq/geometry.hpp"
#include "cq/graph.hpp"
#include "cq/imaging.hpp"
#include "cq/rng.hpp"
#include "cq/tensor.hpp"

namespace cq {

// Segmentation network G: a dilated-residual U-Net.
struct DrUnetConfig {
  enum class Mode { k2D, k3D };

  std::size_t base_filters = 16;
  std::size_t depth = 4;
  std::vector<std::size_t> dilation_rates{1, 2, 4, 8};
  Mode mode = Mode::k2D;
  std::size_t classes = 3;
  std::size_t in_channels = 1;
};

// Spatio-temporal multi-task network D. Each block factorizes a full
// 3x3x3 convolution into a 3x1x1 temporal and a 1x3x3 spatial convolution
// through a bottleneck width M chosen so the parameter count matches.
struct StmtConfig {
  std::vector<std::size_t> channels{32, 64, 128};
  std::size_t in_channels = 2;
  std::size_t indices = static_cast<std::size_t>(IndexVector::kCount);
  std::size_t pool_window = 3;  // spatial-only pooling, never the time axis
  double weight_decay = 1e-4;
};

// Bottleneck width of one factorized spatio-temporal block.
std::size_t stmt_bottleneck_width(std::size_t in_channels, std::size_t out_channels);

class DrUnet {
 public:
  DrUnet(const DrUnetConfig& config, Rng& rng);

  // Reconstructs a network from checkpoint tensors written by to_tensors.
  static DrUnet from_tensors(const TensorMap& tensors, const std::string& prefix = "");
  TensorMap to_tensors(const std::string& prefix = "") const;

  // x: [N, in_channels, spatial...] -> softmax probabilities
  // [N, classes, spatial...]. Errors if a spatial extent is not divisible
  // by 2^depth.
  Graph<float>::NodeId forward(Graph<float>& g, Graph<float>::NodeId x, BatchNormMode mode);

  // Output of encoder block `level` (1-based) before pooling, exposed so
  // the residual wiring can be exercised in isolation.
  Graph<float>::NodeId forward_encoder_block(Graph<float>& g, Graph<float>::NodeId x,
                                             std::size_t level, BatchNormMode mode);

  std::size_t parameter_count() const;
  std::vector<Parameter*> parameters();
  const DrUnetConfig& config() const { return config_; }

 private:
  explicit DrUnet(const DrUnetConfig& config);
  void build_parameters(Rng* rng);
  Parameter& at(const std::string& name);
  Graph<float>::NodeId conv_node(Graph<float>& g, Graph<float>::NodeId x, const std::string& name,
                                 const std::vector<std::size_t>& kernel,
                                 std::vector<std::size_t> dilation = {});
  Graph<float>::NodeId bn_node(Graph<float>& g, Graph<float>::NodeId x, const std::string& name,
                               BatchNormMode mode);
  Graph<float>::NodeId residual_node(Graph<float>& g, Graph<float>::NodeId x,
                                     const std::string& base, BatchNormMode mode);

  DrUnetConfig config_;
  std::map<std::string, Parameter> params_;
  std::map<std::string, BatchNormState> bn_;
};

class Stmt {
 public:
  Stmt(const StmtConfig& config, Rng& rng);

  static Stmt from_tensors(const TensorMap& tensors, const std::string& prefix = "");
  TensorMap to_tensors(const std::string& prefix = "") const;

  // x: [1, in_channels, T, H, W] -> {indices [T, indices], phase logits [T, 1]}.
  std::pair<Graph<float>::NodeId, Graph<float>::NodeId> forward(Graph<float>& g,
                                                                Graph<float>::NodeId x,
                                                                BatchNormMode mode);

  std::size_t parameter_count() const;
  std::vector<Parameter*> parameters();
  const StmtConfig& config() const { return config_; }

 private:
  explicit Stmt(const StmtConfig& config);
  void build_parameters(Rng* rng);
  Parameter& at(const std::string& name);

  StmtConfig config_;
  std::map<std::string, Parameter> params_;
};

struct SegmentationOutput {
  Tensor probabilities;     // [t, h, w, classes]
  MaskSequence hard_labels;  // argmax per pixel
};

// Runs G over a preprocessed sequence. 2D mode maps frames independently;
// 3D mode consumes the whole stack at once.
SegmentationOutput forward_segmentation(DrUnet& net, const CineSequence& seq);

struct MultiTaskOutput {
  Tensor indices;       // [t, 11] normalized index predictions
  Tensor phase_logits;  // [t, 1]
  Tensor phase_probs;   // sigmoid(logits); P(frame is ED)
};

// Runs D over per-frame foreground probability maps [t, h, w, 2]
// (background channel already discarded).
MultiTaskOutput forward_multitask(Stmt& net, const Tensor& masks);

}  // namespace cq
