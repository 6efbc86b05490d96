#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "cq/rng.hpp"
#include "cq/tensor.hpp"

namespace cq {

// Named trainable tensor. Networks own their parameters; a Graph only
// references them for the duration of one forward/backward pass.
template <class T>
struct ParameterT {
  std::string name;
  TensorT<T> value;
};

using Parameter = ParameterT<float>;
using ParameterD = ParameterT<double>;

enum class Padding {
  kSame,  // zero-pad so that out = ceil(in / stride)
  kNone,  // valid convolution, no padding
};

struct ConvSpec {
  std::vector<std::size_t> kernel;    // extent per spatial axis
  std::vector<std::size_t> stride;    // per spatial axis, defaults to 1
  std::vector<std::size_t> dilation;  // per spatial axis, >= 1
  Padding padding = Padding::kSame;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
};

// Output extent of a dilated strided convolution along one axis.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t dilation, Padding padding);

enum class OpKind : std::uint8_t {
  kInput,
  kParam,
  kConv,
  kDense,
  kMaxPool,
  kRelu,
  kSigmoid,
  kSoftmaxChannels,
  kBatchNorm,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kScale,
  kAddScalar,
  kLog,
  kClamp,
  kSum,
  kMean,
  kConcatChannels,
  kSelectChannels,
  kUpsampleNearest,
  kPermute,
  kReshape,
  kFrameSpatialMean,
};

const char* op_kind_name(OpKind kind);

enum class ActivationKind { kRelu, kSigmoid, kSoftmaxChannels };

enum class BatchNormMode { kTrain, kInfer };

// Running statistics of one batch-normalization layer. Owned by the
// network; kTrain forward passes update them in place.
template <class T>
struct BatchNormStateT {
  TensorT<T> running_mean;
  TensorT<T> running_var;
  T momentum = T(0.99);
  T epsilon = T(1e-5);
};

using BatchNormState = BatchNormStateT<float>;

// Recorded tensor program with reverse-mode gradients. Nodes are appended
// in evaluation order, which is a topological order by construction;
// backward() walks the record once in reverse. Single-owner: no concurrent
// mutation of one graph.
template <class T>
class Graph {
 public:
  using NodeId = std::int32_t;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // -- leaves ---------------------------------------------------------------
  // Non-trainable leaf; differentiated against only if value.requires_grad.
  NodeId input(TensorT<T> value);
  // Trainable leaf; repeated insertion of the same parameter reuses the node.
  NodeId param(ParameterT<T>& p);

  // -- network ops ----------------------------------------------------------
  // x: [N, C, S1..Sk]; w: [outC, inC, K1..Kk]; b: [outC].
  // Cross-correlation (deep-learning convention), no kernel flip.
  NodeId conv_nd(NodeId x, NodeId w, NodeId b, const ConvSpec& spec);
  // x: [N, Fin]; w: [Fin, Fout]; b: [Fout].
  NodeId dense(NodeId x, NodeId w, NodeId b);
  // Per-window maximum over spatial axes; gradient routes to the first
  // maximal element in scan order.
  NodeId maxpool_nd(NodeId x, const std::vector<std::size_t>& window,
                    const std::vector<std::size_t>& stride);
  NodeId relu(NodeId x);
  NodeId sigmoid(NodeId x);
  // Softmax across axis 1 at every other location.
  NodeId softmax_channels(NodeId x);
  NodeId activation(NodeId x, ActivationKind kind);
  // x: [N, C, ...]; gamma/beta: [C]. kTrain normalizes by batch statistics
  // and updates `state` in place; kInfer uses the running statistics.
  NodeId batchnorm(NodeId x, NodeId gamma, NodeId beta, BatchNormStateT<T>& state,
                   BatchNormMode mode);

  // -- elementwise / reductions ----------------------------------------------
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  NodeId scale(NodeId x, T factor);
  NodeId add_scalar(NodeId x, T offset);
  NodeId log(NodeId x);
  // Gradient passes only where lo < x < hi.
  NodeId clamp(NodeId x, T lo, T hi);
  NodeId sum(NodeId x);   // -> scalar [1]
  NodeId mean(NodeId x);  // -> scalar [1]

  // -- structure ops ----------------------------------------------------------
  NodeId concat_channels(NodeId a, NodeId b);
  NodeId select_channels(NodeId x, const std::vector<std::size_t>& channels);
  // Integer upsampling factors per spatial axis (axes 2..).
  NodeId upsample_nearest(NodeId x, const std::vector<std::size_t>& factors);
  NodeId permute(NodeId x, const std::vector<std::size_t>& order);
  NodeId reshape(NodeId x, Shape target);
  // x: [1, C, Tf, H, W] -> [Tf, C], averaging each frame's spatial plane.
  NodeId frame_spatial_mean(NodeId x);

  // -- execution --------------------------------------------------------------
  // Seeds d(loss)/d(loss) = 1 and accumulates gradients into every node on a
  // path to `loss`. Each recorded node is visited exactly once.
  void backward(NodeId loss);

  const TensorT<T>& value(NodeId id) const { return nodes_[check(id)].value; }
  OpKind kind(NodeId id) const { return nodes_[check(id)].kind; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient of a node; zeros if the node is not on a path to the loss.
  TensorT<T> grad(NodeId id) const;
  // Gradient of a parameter used in this graph; zeros when unused or unreached.
  TensorT<T> grad_of(const ParameterT<T>& p) const;
  const std::vector<const ParameterT<T>*>& parameters() const { return param_order_; }

 private:
  struct Node {
    OpKind kind;
    std::vector<NodeId> inputs;
    TensorT<T> value;
    TensorT<T> grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::function<void(Graph&)> backward_fn;
  };

  NodeId push(Node node);
  std::size_t check(NodeId id) const;
  bool needs_grad(NodeId id) const { return nodes_[check(id)].requires_grad; }
  TensorT<T>& grad_buffer(NodeId id);
  void accumulate(NodeId id, const TensorT<T>& delta);

  std::vector<Node> nodes_;
  std::unordered_map<const ParameterT<T>*, NodeId> param_nodes_;
  std::vector<const ParameterT<T>*> param_order_;
  bool ran_backward_ = false;

  friend struct GraphTestAccess;
};

// He-normal initialization: zero-mean normal with variance 2 / fan_in.
template <class T>
TensorT<T> he_init(const Shape& shape, std::size_t fan_in, Rng& rng);

extern template class Graph<float>;
extern template class Graph<double>;
extern template TensorT<float> he_init<float>(const Shape&, std::size_t, Rng&);
extern template TensorT<double> he_init<double>(const Shape&, std::size_t, Rng&);

}  // namespace cq
