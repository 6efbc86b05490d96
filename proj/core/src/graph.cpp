#include "cq/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <utility>

#include "blas.hpp"
#include "cq/error.hpp"

namespace cq {

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t dilation, Padding padding) {
  if (kernel == 0 || stride == 0 || dilation == 0) {
    fail(ErrorCode::kShape, "convolution kernel/stride/dilation must be positive");
  }
  if (padding == Padding::kSame) return (in + stride - 1) / stride;
  const std::size_t effective = dilation * (kernel - 1) + 1;
  if (in < effective) {
    fail(ErrorCode::kShape, "convolution window of effective extent " + std::to_string(effective) +
                                " does not fit input extent " + std::to_string(in));
  }
  return (in - effective) / stride + 1;
}

const char* op_kind_name(OpKind kind) {
  switch (kind) {
    case OpKind::kInput: return "input";
    case OpKind::kParam: return "param";
    case OpKind::kConv: return "conv";
    case OpKind::kDense: return "dense";
    case OpKind::kMaxPool: return "maxpool";
    case OpKind::kRelu: return "relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kSoftmaxChannels: return "softmax_channels";
    case OpKind::kBatchNorm: return "batchnorm";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kDiv: return "div";
    case OpKind::kScale: return "scale";
    case OpKind::kAddScalar: return "add_scalar";
    case OpKind::kLog: return "log";
    case OpKind::kClamp: return "clamp";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kConcatChannels: return "concat_channels";
    case OpKind::kSelectChannels: return "select_channels";
    case OpKind::kUpsampleNearest: return "upsample_nearest";
    case OpKind::kPermute: return "permute";
    case OpKind::kReshape: return "reshape";
    case OpKind::kFrameSpatialMean: return "frame_spatial_mean";
  }
  return "unknown";
}

namespace {

// Resolved convolution geometry shared by forward, weight-gradient and
// input-gradient code paths.
struct ConvGeom {
  std::size_t spatial_rank = 0;
  std::size_t batch = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::vector<std::size_t> in;        // input spatial extents
  std::vector<std::size_t> out;       // output spatial extents
  std::vector<std::size_t> kernel;
  std::vector<std::size_t> stride;
  std::vector<std::size_t> dilation;
  std::vector<std::ptrdiff_t> pad_before;
  std::size_t prod_in = 1;   // input spatial elements per channel
  std::size_t prod_out = 1;  // output spatial elements per channel
  std::size_t prod_k = 1;    // kernel taps per channel
  // coord[axis][kernel_index][out_index] = input coordinate, or -1 when the
  // tap lands in the zero padding.
  std::vector<std::vector<std::vector<std::ptrdiff_t>>> coord;
  // taps[flat_kernel_index][axis] = kernel coordinate on that axis.
  std::vector<std::vector<std::size_t>> taps;
};

std::vector<std::size_t> resolve_per_axis(const std::vector<std::size_t>& given,
                                          std::size_t rank, const char* what) {
  if (given.empty()) return std::vector<std::size_t>(rank, 1);
  if (given.size() != rank) {
    fail(ErrorCode::kShape, std::string("convolution ") + what + " has " +
                                std::to_string(given.size()) + " entries for " +
                                std::to_string(rank) + " spatial axes");
  }
  return given;
}

ConvGeom make_conv_geom(const Shape& x_shape, const Shape& w_shape, const Shape& b_shape,
                        const ConvSpec& spec) {
  if (x_shape.size() < 3) {
    fail(ErrorCode::kShape, "convolution input must be [batch, channels, spatial...], got " +
                                shape_to_string(x_shape));
  }
  ConvGeom g;
  g.spatial_rank = x_shape.size() - 2;
  if (g.spatial_rank > 3) {
    fail(ErrorCode::kShape, "convolution supports 1 to 3 spatial axes, got " +
                                std::to_string(g.spatial_rank));
  }
  g.batch = x_shape[0];
  g.in_channels = x_shape[1];
  g.in.assign(x_shape.begin() + 2, x_shape.end());
  if (w_shape.size() != g.spatial_rank + 2) {
    fail(ErrorCode::kShape, "convolution weights " + shape_to_string(w_shape) +
                                " do not match input rank " + shape_to_string(x_shape));
  }
  g.out_channels = w_shape[0];
  if (w_shape[1] != g.in_channels) {
    fail(ErrorCode::kShape, "convolution weights expect " + std::to_string(w_shape[1]) +
                                " input channels, input has " + std::to_string(g.in_channels));
  }
  g.kernel.assign(w_shape.begin() + 2, w_shape.end());
  if (!spec.kernel.empty() && spec.kernel != g.kernel) {
    fail(ErrorCode::kShape, "ConvSpec kernel does not match weight tensor extents");
  }
  if (spec.in_channels != 0 && spec.in_channels != g.in_channels) {
    fail(ErrorCode::kShape, "ConvSpec input channels do not match input tensor");
  }
  if (spec.out_channels != 0 && spec.out_channels != g.out_channels) {
    fail(ErrorCode::kShape, "ConvSpec output channels do not match weight tensor");
  }
  if (b_shape != Shape{g.out_channels}) {
    fail(ErrorCode::kShape, "convolution bias must be [out_channels], got " +
                                shape_to_string(b_shape));
  }
  g.stride = resolve_per_axis(spec.stride, g.spatial_rank, "stride");
  g.dilation = resolve_per_axis(spec.dilation, g.spatial_rank, "dilation");

  g.out.resize(g.spatial_rank);
  g.pad_before.resize(g.spatial_rank);
  for (std::size_t a = 0; a < g.spatial_rank; ++a) {
    g.out[a] = conv_output_extent(g.in[a], g.kernel[a], g.stride[a], g.dilation[a], spec.padding);
    if (spec.padding == Padding::kSame) {
      const std::size_t effective = g.dilation[a] * (g.kernel[a] - 1) + 1;
      const std::size_t span = (g.out[a] - 1) * g.stride[a] + effective;
      const std::size_t total = span > g.in[a] ? span - g.in[a] : 0;
      g.pad_before[a] = static_cast<std::ptrdiff_t>(total / 2);
    } else {
      g.pad_before[a] = 0;
    }
    g.prod_in *= g.in[a];
    g.prod_out *= g.out[a];
    g.prod_k *= g.kernel[a];
  }

  g.coord.resize(g.spatial_rank);
  for (std::size_t a = 0; a < g.spatial_rank; ++a) {
    g.coord[a].assign(g.kernel[a], std::vector<std::ptrdiff_t>(g.out[a]));
    for (std::size_t k = 0; k < g.kernel[a]; ++k) {
      for (std::size_t o = 0; o < g.out[a]; ++o) {
        const std::ptrdiff_t i = static_cast<std::ptrdiff_t>(o * g.stride[a]) - g.pad_before[a] +
                                 static_cast<std::ptrdiff_t>(k * g.dilation[a]);
        g.coord[a][k][o] = (i >= 0 && i < static_cast<std::ptrdiff_t>(g.in[a])) ? i : -1;
      }
    }
  }
  g.taps.assign(g.prod_k, std::vector<std::size_t>(g.spatial_rank));
  for (std::size_t flat = 0; flat < g.prod_k; ++flat) {
    std::size_t rem = flat;
    for (std::size_t a = g.spatial_rank; a-- > 0;) {
      g.taps[flat][a] = rem % g.kernel[a];
      rem /= g.kernel[a];
    }
  }
  return g;
}

// Lowers one sample [C, in...] to a [C * prod_k, prod_out] matrix whose
// columns are the receptive fields of each output location.
template <class T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const T* in_base = x + c * g.prod_in;
    for (std::size_t flat = 0; flat < g.prod_k; ++flat) {
      T* row = col + (c * g.prod_k + flat) * g.prod_out;
      const auto& tap = g.taps[flat];
      if (g.spatial_rank == 1) {
        const auto& c0 = g.coord[0][tap[0]];
        for (std::size_t o0 = 0; o0 < g.out[0]; ++o0) {
          row[o0] = c0[o0] >= 0 ? in_base[c0[o0]] : T(0);
        }
      } else if (g.spatial_rank == 2) {
        const auto& c0 = g.coord[0][tap[0]];
        const auto& c1 = g.coord[1][tap[1]];
        for (std::size_t o0 = 0; o0 < g.out[0]; ++o0) {
          T* out_row = row + o0 * g.out[1];
          if (c0[o0] < 0) {
            std::fill(out_row, out_row + g.out[1], T(0));
            continue;
          }
          const T* in_row = in_base + static_cast<std::size_t>(c0[o0]) * g.in[1];
          for (std::size_t o1 = 0; o1 < g.out[1]; ++o1) {
            out_row[o1] = c1[o1] >= 0 ? in_row[c1[o1]] : T(0);
          }
        }
      } else {
        const auto& c0 = g.coord[0][tap[0]];
        const auto& c1 = g.coord[1][tap[1]];
        const auto& c2 = g.coord[2][tap[2]];
        for (std::size_t o0 = 0; o0 < g.out[0]; ++o0) {
          for (std::size_t o1 = 0; o1 < g.out[1]; ++o1) {
            T* out_row = row + (o0 * g.out[1] + o1) * g.out[2];
            if (c0[o0] < 0 || c1[o1] < 0) {
              std::fill(out_row, out_row + g.out[2], T(0));
              continue;
            }
            const T* in_row = in_base + (static_cast<std::size_t>(c0[o0]) * g.in[1] +
                                         static_cast<std::size_t>(c1[o1])) *
                                            g.in[2];
            for (std::size_t o2 = 0; o2 < g.out[2]; ++o2) {
              out_row[o2] = c2[o2] >= 0 ? in_row[c2[o2]] : T(0);
            }
          }
        }
      }
    }
  }
}

// Transpose of im2col: scatter-adds a column matrix back onto one sample.
template <class T>
void col2im_add(const T* col, const ConvGeom& g, T* x) {
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    T* in_base = x + c * g.prod_in;
    for (std::size_t flat = 0; flat < g.prod_k; ++flat) {
      const T* row = col + (c * g.prod_k + flat) * g.prod_out;
      const auto& tap = g.taps[flat];
      if (g.spatial_rank == 1) {
        const auto& c0 = g.coord[0][tap[0]];
        for (std::size_t o0 = 0; o0 < g.out[0]; ++o0) {
          if (c0[o0] >= 0) in_base[c0[o0]] += row[o0];
        }
      } else if (g.spatial_rank == 2) {
        const auto& c0 = g.coord[0][tap[0]];
        const auto& c1 = g.coord[1][tap[1]];
        for (std::size_t o0 = 0; o0 < g.out[0]; ++o0) {
          if (c0[o0] < 0) continue;
          const T* out_row = row + o0 * g.out[1];
          T* in_row = in_base + static_cast<std::size_t>(c0[o0]) * g.in[1];
          for (std::size_t o1 = 0; o1 < g.out[1]; ++o1) {
            if (c1[o1] >= 0) in_row[c1[o1]] += out_row[o1];
          }
        }
      } else {
        const auto& c0 = g.coord[0][tap[0]];
        const auto& c1 = g.coord[1][tap[1]];
        const auto& c2 = g.coord[2][tap[2]];
        for (std::size_t o0 = 0; o0 < g.out[0]; ++o0) {
          if (c0[o0] < 0) continue;
          for (std::size_t o1 = 0; o1 < g.out[1]; ++o1) {
            if (c1[o1] < 0) continue;
            const T* out_row = row + (o0 * g.out[1] + o1) * g.out[2];
            T* in_row = in_base + (static_cast<std::size_t>(c0[o0]) * g.in[1] +
                                   static_cast<std::size_t>(c1[o1])) *
                                      g.in[2];
            for (std::size_t o2 = 0; o2 < g.out[2]; ++o2) {
              if (c2[o2] >= 0) in_row[c2[o2]] += out_row[o2];
            }
          }
        }
      }
    }
  }
}

Shape spatial_of(const Shape& shape) { return Shape(shape.begin() + 2, shape.end()); }

}  // namespace

template <class T>
typename Graph<T>::NodeId Graph<T>::push(Node node) {
  if (ran_backward_) fail(ErrorCode::kValue, "cannot extend a graph after backward()");
  nodes_.push_back(std::move(node));
  return static_cast<NodeId>(nodes_.size() - 1);
}

template <class T>
std::size_t Graph<T>::check(NodeId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    fail(ErrorCode::kValue, "node id " + std::to_string(id) + " is not on this graph");
  }
  return static_cast<std::size_t>(id);
}

template <class T>
TensorT<T>& Graph<T>::grad_buffer(NodeId id) {
  Node& n = nodes_[check(id)];
  if (n.grad.data.empty()) n.grad = TensorT<T>(n.value.shape);
  return n.grad;
}

template <class T>
void Graph<T>::accumulate(NodeId id, const TensorT<T>& delta) {
  Node& n = nodes_[check(id)];
  if (!n.requires_grad) return;
  TensorT<T>& g = grad_buffer(id);
  if (!g.same_shape(delta)) {
    fail(ErrorCode::kShape, "gradient shape " + shape_to_string(delta.shape) +
                                " does not match value shape " + shape_to_string(g.shape));
  }
  for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += delta.data[i];
}

template <class T>
typename Graph<T>::NodeId Graph<T>::input(TensorT<T> value) {
  Node node;
  node.kind = OpKind::kInput;
  node.requires_grad = value.requires_grad;
  node.value = std::move(value);
  return push(std::move(node));
}

template <class T>
typename Graph<T>::NodeId Graph<T>::param(ParameterT<T>& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return it->second;
  Node node;
  node.kind = OpKind::kParam;
  node.requires_grad = true;
  node.value = p.value;
  const NodeId id = push(std::move(node));
  param_nodes_.emplace(&p, id);
  param_order_.push_back(&p);
  return id;
}

template <class T>
typename Graph<T>::NodeId Graph<T>::conv_nd(NodeId x, NodeId w, NodeId b, const ConvSpec& spec) {
  const TensorT<T>& xv = value(x);
  const TensorT<T>& wv = value(w);
  const TensorT<T>& bv = value(b);
  ConvGeom geom = make_conv_geom(xv.shape, wv.shape, bv.shape, spec);

  Shape out_shape{geom.batch, geom.out_channels};
  out_shape.insert(out_shape.end(), geom.out.begin(), geom.out.end());
  TensorT<T> out(out_shape);

  const std::size_t ck = geom.in_channels * geom.prod_k;
  std::vector<T> col(ck * geom.prod_out);
  for (std::size_t n = 0; n < geom.batch; ++n) {
    const T* x_n = xv.data.data() + n * geom.in_channels * geom.prod_in;
    T* y_n = out.data.data() + n * geom.out_channels * geom.prod_out;
    im2col(x_n, geom, col.data());
    detail::gemm(false, false, geom.out_channels, geom.prod_out, ck, T(1), wv.data.data(), ck,
                 col.data(), geom.prod_out, T(0), y_n, geom.prod_out);
    for (std::size_t oc = 0; oc < geom.out_channels; ++oc) {
      T* row = y_n + oc * geom.prod_out;
      const T bias = bv.data[oc];
      for (std::size_t p = 0; p < geom.prod_out; ++p) row[p] += bias;
    }
  }

  Node node;
  node.kind = OpKind::kConv;
  node.inputs = {x, w, b};
  node.requires_grad = needs_grad(x) || needs_grad(w) || needs_grad(b);
  node.value = std::move(out);
  const NodeId self = static_cast<NodeId>(nodes_.size());
  if (node.requires_grad) {
    node.backward_fn = [self, x, w, b, geom = std::move(geom), ck](Graph& g) {
      const TensorT<T>& dy = g.nodes_[g.check(self)].grad;
      const TensorT<T>& xv = g.value(x);
      const TensorT<T>& wv = g.value(w);
      const bool want_x = g.needs_grad(x);
      const bool want_w = g.needs_grad(w);
      const bool want_b = g.needs_grad(b);
      std::vector<T> col(want_w ? ck * geom.prod_out : 0);
      std::vector<T> dcol(want_x ? ck * geom.prod_out : 0);
      TensorT<T>* gx = want_x ? &g.grad_buffer(x) : nullptr;
      TensorT<T>* gw = want_w ? &g.grad_buffer(w) : nullptr;
      TensorT<T>* gb = want_b ? &g.grad_buffer(b) : nullptr;
      for (std::size_t n = 0; n < geom.batch; ++n) {
        const T* dy_n = dy.data.data() + n * geom.out_channels * geom.prod_out;
        if (want_w) {
          const T* x_n = xv.data.data() + n * geom.in_channels * geom.prod_in;
          im2col(x_n, geom, col.data());
          detail::gemm(false, true, geom.out_channels, ck, geom.prod_out, T(1), dy_n,
                       geom.prod_out, col.data(), geom.prod_out, T(1), gw->data.data(), ck);
        }
        if (want_x) {
          detail::gemm(true, false, ck, geom.prod_out, geom.out_channels, T(1), wv.data.data(),
                       ck, dy_n, geom.prod_out, T(0), dcol.data(), geom.prod_out);
          T* gx_n = gx->data.data() + n * geom.in_channels * geom.prod_in;
          col2im_add(dcol.data(), geom, gx_n);
        }
        if (want_b) {
          for (std::size_t oc = 0; oc < geom.out_channels; ++oc) {
            const T* row = dy_n + oc * geom.prod_out;
            T s = T(0);
            for (std::size_t p = 0; p < geom.prod_out; ++p) s += row[p];
            gb->data[oc] += s;
          }
        }
      }
    };
  }
  return push(std::move(node));
}

template <class T>
typename Graph<T>::NodeId Graph<T>::dense(NodeId x, NodeId w, NodeId b) {
  const TensorT<T>& xv = value(x);
  const TensorT<T>& wv = value(w);
  const TensorT<T>& bv = value(b);
  if (xv.rank() != 2 || wv.rank() != 2 || bv.rank() != 1) {
    fail(ErrorCode::kShape, "dense expects x [n, in], w [in, out], b [out]");
  }
  const std::size_t n = xv.shape[0], fin = xv.shape[1], fout = wv.shape[1];
  if (wv.shape[0] != fin || bv.shape[0] != fout) {
    fail(ErrorCode::kShape, "dense shapes disagree: x " + shape_to_string(xv.shape) + ", w " +
                                shape_to_string(wv.shape) + ", b " + shape_to_string(bv.shape));
  }
  TensorT<T> out({n, fout});
  detail::gemm(false, false, n, fout, fin, T(1), xv.data.data(), fin, wv.data.data(), fout, T(0),
               out.data.data(), fout);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < fout; ++j) out.data[i * fout + j] += bv.data[j];
  }

  Node node;
  node.kind = OpKind::kDense;
  node.inputs = {x, w, b};
  node.requires_grad = needs_grad(x) || needs_grad(w) || needs_grad(b);
  node.value = std::move(out);
  const NodeId self = static_cast<NodeId>(nodes_.size());
  if (node.requires_grad) {
    node.backward_fn = [self, x, w, b, n, fin, fout](Graph& g) {
      const TensorT<T>& dy = g.nodes_[g.check(self)].grad;
      if (g.needs_grad(x)) {
        detail::gemm(false, true, n, fin, fout, T(1), dy.data.data(), fout,
                     g.value(w).data.data(), fout, T(1), g.grad_buffer(x).data.data(), fin);
      }
      if (g.needs_grad(w)) {
        detail::gemm(true, false, fin, fout, n, T(1), g.value(x).data.data(), fin, dy.data.data(),
                     fout, T(1), g.grad_buffer(w).data.data(), fout);
      }
      if (g.needs_grad(b)) {
        TensorT<T>& gb = g.grad_buffer(b);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < fout; ++j) gb.data[j] += dy.data[i * fout + j];
        }
      }
    };
  }
  return push(std::move(node));
}

template <class T>
typename Graph<T>::NodeId Graph<T>::maxpool_nd(NodeId x, const std::vector<std::size_t>& window,
                                               const std::vector<std::size_t>& stride) {
  const TensorT<T>& xv = value(x);
  if (xv.rank() < 3) fail(ErrorCode::kShape, "maxpool input must be [batch, channels, spatial...]");
  const std::size_t rank = xv.rank() - 2;
  if (window.size() != rank || stride.size() != rank) {
    fail(ErrorCode::kShape, "maxpool window/stride must list every spatial axis");
  }
  const Shape in = spatial_of(xv.shape);
  Shape out_spatial(rank);
  for (std::size_t a = 0; a < rank; ++a) {
    if (window[a] == 0 || stride[a] == 0) {
      fail(ErrorCode::kShape, "maxpool window and stride must be positive");
    }
    if (window[a] > in[a]) {
      fail(ErrorCode::kShape, "maxpool window " + std::to_string(window[a]) +
                                  " exceeds input extent " + std::to_string(in[a]));
    }
    out_spatial[a] = (in[a] - window[a]) / stride[a] + 1;
  }
  const std::size_t batch = xv.shape[0], channels = xv.shape[1];
  std::size_t prod_in = 1, prod_out = 1, prod_w = 1;
  for (std::size_t a = 0; a < rank; ++a) {
    prod_in *= in[a];
    prod_out *= out_spatial[a];
    prod_w *= window[a];
  }
  Shape out_shape{batch, channels};
  out_shape.insert(out_shape.end(), out_spatial.begin(), out_spatial.end());
  TensorT<T> out(out_shape);
  std::vector<std::size_t> argmax(out.numel());

  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t a = rank - 1; a-- > 0;) in_stride[a] = in_stride[a + 1] * in[a + 1];

  std::vector<std::size_t> ocoord(rank), wcoord(rank);
  std::size_t oi = 0;
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t plane = (n * channels + c) * prod_in;
      std::fill(ocoord.begin(), ocoord.end(), 0);
      for (std::size_t p = 0; p < prod_out; ++p, ++oi) {
        T best{};
        std::size_t best_at = 0;
        bool first = true;
        std::fill(wcoord.begin(), wcoord.end(), 0);
        for (std::size_t q = 0; q < prod_w; ++q) {
          std::size_t flat = plane;
          for (std::size_t a = 0; a < rank; ++a) {
            flat += (ocoord[a] * stride[a] + wcoord[a]) * in_stride[a];
          }
          const T v = xv.data[flat];
          if (first || v > best) {
            best = v;
            best_at = flat;
            first = false;
          }
          for (std::size_t a = rank; a-- > 0;) {
            if (++wcoord[a] < window[a]) break;
            wcoord[a] = 0;
          }
        }
        out.data[oi] = best;
        argmax[oi] = best_at;
        for (std::size_t a = rank; a-- > 0;) {
          if (++ocoord[a] < out_spatial[a]) break;
          ocoord[a] = 0;
        }
      }
    }
  }

  Node node;
  node.kind = OpKind::kMaxPool;
  node.inputs = {x};
  node.requires_grad = needs_grad(x);
  node.value = std::move(out);
  const NodeId self = static_cast<NodeId>(nodes_.size());
  if (node.requires_grad) {
    node.backward_fn = [self, x, argmax = std::move(argmax)](Graph& g) {
      const TensorT<T>& dy = g.nodes_[g.check(self)].grad;
      TensorT<T>& gx = g.grad_buffer(x);
      for (std::size_t i = 0; i < argmax.size(); ++i) gx.data[argmax[i]] += dy.data[i];
    };
  }
  return push(std::move(node));
}

template <class T>
typename Graph<T>::NodeId Graph<T>::relu(NodeId x) {
  const TensorT<T>& xv = value(x);
  TensorT<T> out(xv.shape);
  for (std::size_t i = 0; i < xv.numel(); ++i) out.data[i] = xv.data[i] > T(0) ? xv.data[i] : T(0);
  Node node;
  node.kind = OpKind::kRelu;
  node.inputs = {x};
  node.requires_grad = needs_grad(x);
  node.value = std::move(out);
  const NodeId self = static_cast<NodeId>(nodes_.size());
  if (node.requires_grad) {
    node.backward_fn = [self, x](Graph& g) {
      const TensorT<T>& dy = g.nodes_[g.check(self)].grad;
      const TensorT<T>& xv = g.value(x);
      TensorT<T>& gx = g.grad_buffer(x);
      for (std::size_t i = 0; i < xv.numel(); ++i) {
        if (xv.data[i] > T(0)) gx.data[i] += dy.data[i];
      }
    };
  }
  return push(std::move(node));
}

template <class T>
typename Graph<T>::NodeId Graph<T>::sigmoid(NodeId x) {
  const TensorT<T>& xv = value(x);
  TensorT<T> out(xv.shape);
  for (std::size_t i = 0; i < xv.numel(); ++i) {
    const T v = xv.data[i];
    if (v >= T(0)) {
      out.data[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out.data[i] = e / (T(1) + e);
    }
  }
  Node node;
  node.kind = OpKind::kSigmoid;
  node.inputs = {x};
  node.requires_grad = needs_grad(x);
  node.value = std::move(out);
  const NodeId self = static_cast<NodeId>(nodes_.size());
  if (node.requires_grad) {
    node.backward_fn = [self, x](Graph& g) {
      const Node& self_node = g.nodes_[g.check(self)];
      const TensorT<T>& dy = self_node.grad;
      const TensorT<T>& y = self_node.value;
      TensorT<T>& gx = g.grad_buffer(x);
      for (std::size_t i = 0; i < y.numel(); ++i) {
        gx.data[i] += dy.data[i] * y.data[i] * (T(1) - y.data[i]);
      }
    };
  }
  return push(std::move(node));
}

template <class T>
typename Graph<T>::NodeId Graph<T>::softmax_channels(NodeId x) {
  const TensorT<T>& xv = value(x);
  if (xv.rank() < 2) fail(ErrorCode::kShape, "softmax_channels needs a channel axis (rank >= 2)");
  const std::size_t batch = xv.shape[0], channels = xv.shape[1];
  std::size_t spatial = 1;
  for (std::size_t a = 2; a < xv.rank(); ++a) spatial *= xv.shape[a];
  TensorT<T> out(xv.shape);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t s = 0; s < spatial; ++s) {
      const std::size_t base = n * channels * spatial + s;
      T mx = xv.data[base];
      for (std::size_t c = 1; c < channels; ++c) mx = std::max(mx, xv.data[base + c * spatial]);
      T denom = T(0);
      for (std::size_t c = 0; c < channels; ++c) {
        const T e = std::exp(xv.data[base + c * spatial] - mx);
        out.data[base + c * spatial] = e;
        denom += e;
      }
      for (std::size_t c = 0; c < channels; ++c) out.data[base + c * spatial] /= denom;
    }
  }
  Node node;
  node.kind = OpKind::kSoftmaxChannels;
  node.inputs = {x};
  node.requires_grad = needs_grad(x);
  node.value = std::move(out);
  const NodeId self = static_cast<NodeId>(nodes_.size());
  if (node.requires_grad) {
    node.backward_fn = [self, x, batch, channels, spatial](Graph& g) {
      const Node& self_node = g.nodes_[g.check(self)];
      const TensorT<T>& dy = self_node.grad;
      const TensorT<T>& y = self_node.value;
      TensorT<T>& gx = g.grad_buffer(x);
      for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t s = 0; s < spatial; ++s) {
          const std::size_t base = n * channels * spatial + s;
          T dot = T(0);
          for (std::size_t c = 0; c < channels; ++c) {
            dot += dy.data[base + c * spatial] * y.data[base + c * spatial];
          }
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t i = base + c * spatial;
            gx.data[i] += y.data[i] * (dy.data[i] - dot);
          }
        }
      }
    };
  }
  return push(std::move(node));
}

template <class T>
typename Graph<T>::NodeId Graph<T>::activation(NodeId x, ActivationKind kind) {
  switch (kind) {
    case ActivationKind::kRelu: return relu(x);
    case ActivationKind::kSigmoid: return sigmoid(x);
    case ActivationKind::kSoftmaxChannels: return softmax_channels(x);
  }
  fail(ErrorCode::kValue, "unknown activation kind");
}

template <class T>
typename Graph<T>::NodeId Graph<T>::batchnorm(NodeId x, NodeId gamma, NodeId beta,
                                              BatchNormStateT<T>& state, BatchNormMode mode) {
  const TensorT<T>& xv = value(x);
  const TensorT<T>& gv = value(gamma);
  const TensorT<T>& bv = value(beta);
  if (xv.rank() < 2) fail(ErrorCode::kShape, "batchnorm input must be [batch, channels, ...]");
  const std::size_t batch = xv.shape[0], channels = xv.shape[1];
  std::size_t spatial = 1;
  for (std::size_t a = 2; a < xv.rank(); ++a) spatial *= xv.shape[a];
  if (gv.shape != Shape{channels} || bv.shape != Shape{channels} ||
      state.running_mean.shape != Shape{channels} || state.running_var.shape != Shape{channels}) {
    fail(ErrorCode::kShape, "batchnorm per-channel tensors must have extent " +
                                std::to_string(channels));
  }
  const std::size_t m = batch * spatial;
  std::vector<T> mean(channels), invstd(channels);
  if (mode == BatchNormMode::kTrain) {
    for (std::size_t c = 0; c < channels; ++c) {
      T s = T(0);
      for (std::size_t n = 0; n < batch; ++n) {
        const T* p = xv.data.data() + (n * channels + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) s += p[i];
      }
      const T mu = s / static_cast<T>(m);
      T sq = T(0);
      for (std::size_t n = 0; n < batch; ++n) {
        const T* p = xv.data.data() + (n * channels + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) {
          const T d = p[i] - mu;
          sq += d * d;
        }
      }
      const T var = sq / static_cast<T>(m);
      mean[c] = mu;
      invstd[c] = T(1) / std::sqrt(var + state.epsilon);
      state.running_mean.data[c] =
          state.momentum * state.running_mean.data[c] + (T(1) - state.momentum) * mu;
      state.running_var.data[c] =
          state.momentum * state.running_var.data[c] + (T(1) - state.momentum) * var;
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = state.running_mean.data[c];
      invstd[c] = T(1) / std::sqrt(state.running_var.data[c] + state.epsilon);
    }
  }

  TensorT<T> out(xv.shape);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const T* p = xv.data.data() + (n * channels + c) * spatial;
      T* q = out.data.data() + (n * channels + c) * spatial;
      const T mu = mean[c], is = invstd[c], ga = gv.data[c], be = bv.data[c];
      for (std::size_t i = 0; i < spatial; ++i) q[i] = ga * (p[i] - mu) * is + be;
    }
  }

  Node node;
  node.kind = OpKind::kBatchNorm;
  node.inputs = {x, gamma, beta};
  node.requires_grad = needs_grad(x) || needs_grad(gamma) || needs_grad(beta);
  node.value = std::move(out);
  const NodeId self = static_cast<NodeId>(nodes_.size());
  if (node.requires_grad) {
    const bool use_batch_stats = mode == BatchNormMode::kTrain;
    node.backward_fn = [self, x, gamma, beta, batch, channels, spatial, m, use_batch_stats,
                        mean = std::move(mean), invstd = std::move(invstd)](Graph& g) {
      const TensorT<T>& dy = g.nodes_[g.check(self)].grad;
      const TensorT<T>& xv = g.value(x);
      const TensorT<T>& gv = g.value(gamma);
      const bool want_x = g.needs_grad(x);
      const bool want_gamma = g.needs_grad(gamma);
      const bool want_beta = g.needs_grad(beta);
      TensorT<T>* gx = want_x ? &g.grad_buffer(x) : nullptr;
      TensorT<T>* gg = want_gamma ? &g.grad_buffer(gamma) : nullptr;
      TensorT<T>* gb = want_beta ? &g.grad_buffer(beta) : nullptr;
      for (std::size_t c = 0; c < channels; ++c) {
        const T mu = mean[c], is = invstd[c];
        T sum_dy = T(0), sum_dy_xhat = T(0);
        for (std::size_t n = 0; n < batch; ++n) {
          const std::size_t base = (n * channels + c) * spatial;
          for (std::size_t i = 0; i < spatial; ++i) {
            const T d = dy.data[base + i];
            sum_dy += d;
            sum_dy_xhat += d * (xv.data[base + i] - mu) * is;
          }
        }
        if (want_gamma) gg->data[c] += sum_dy_xhat;
        if (want_beta) gb->data[c] += sum_dy;
        if (!want_x) continue;
        const T ga = gv.data[c];
        if (use_batch_stats) {
          const T inv_m = T(1) / static_cast<T>(m);
          for (std::size_t n = 0; n < batch; ++n) {
            const std::size_t base = (n * channels + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
              const T xhat = (xv.data[base + i] - mu) * is;
              gx->data[base + i] +=
                  ga * is * (dy.data[base + i] - sum_dy * inv_m - xhat * sum_dy_xhat * inv_m);
            }
          }
        } else {
          for (std::size_t n = 0; n < batch; ++n) {
            const std::size_t base = (n * channels + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
              gx->data[base + i] += dy.data[base + i] * ga * is;
            }
          }
        }
      }
    };
  }
  return push(std::move(node));
}

template <class T>
typename Graph<T>::NodeId Graph<T>::add(NodeId a, NodeId b) {
  const TensorT<T>& av = value(a);
  const TensorT<T>& bv = value(b);
  if (!av.same_shape(bv)) {
    fail(ErrorCode::kShape, "add shapes differ: " + shape_to_string(av.shape) + " vs " +
                                shape_to_string(bv.shape));
  }
  TensorT<T> out(av.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = av.data[i] + bv.data[i];
  Node node;
  node.kind = OpKind::kAdd;
  node.inputs = {a, b};
  node.requires_grad = needs_grad(a) || needs_grad(b);
  node.value = std::move(out);
  const NodeId self = static_cast<NodeId>(nodes_.size());
  if (node.requires_grad) {
    node.backward_fn = [self, a, b](Graph& g) {
      const TensorT<T>& dy = g.nodes_[g.check(self)].grad;
      g.accumulate(a, dy);
      g.accumulate(b, dy);
    };
  }
  return push(std::move(node));
}

template <class T>
typename Graph<T>::NodeId Graph<T>::sub(NodeId a, NodeId b) {
  const TensorT<T>& av = value(a);
  const TensorT<T>& bv = value(b);
  if (!av.same_shape(bv)) {
    fail(ErrorCode::kShape, "sub shapes differ: " + shape_to_string(av.shape) + " vs " +
                                shape_to_string(bv.shape));
  }
  TensorT<T> out(av.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = av.data[i] - bv.data[i];
  Node node;
  node.kind = OpKind::kSub;
  node.inputs = {a, b};
  node.requires_grad = needs_grad(a) || needs_grad(b);
  node.value = std::move(out);
  const NodeId self = static_cast<NodeId>(nodes_.size());
  if (node.requires_grad) {
    node.backward_fn = [self, a, b](Graph& g) {
      const TensorT<T>& dy = g.nodes_[g.check(self)].grad;
      g.accumulate(a, dy);
      if (g.needs_grad(b)) {
        TensorT<T>& gb = g.grad_buffer(b);
        for (std::size_t i = 0; i < dy.numel(); ++i) gb.data[i] -= dy.data[i];
      }
    };
  }
  return push(std::move(node));
}

template <class T>
typename Graph<T>::NodeId Graph<T>::mul(NodeId a, NodeId b) {
  const TensorT<T>& av = value(a);
  const TensorT<T>& bv = value(b);
  if (!av.same_shape(bv)) {
    fail(ErrorCode::kShape, "mul shapes differ: " + shape_to_string(av.shape) + " vs " +
                                shape_to_string(bv.shape));
  }
  TensorT<T> out(av.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = av.data[i] * bv.data[i];
  Node node;
  node.kind = OpKind::kMul;
  node.inputs = {a, b};
  node.requires_grad = needs_grad(a) || needs_grad(b);
  node.value = std::move(out);
  const NodeId self = static_cast<NodeId>(nodes_.size());
  if (node.requires_grad) {
    node.backward_fn = [self, a, b](Graph& g) {
      const TensorT<T>& dy = g.nodes_[g.check(self)].grad;
      if (g.needs_grad(a)) {
        const TensorT<T>& bv = g.value(b);
        TensorT<T>& ga = g.grad_buffer(a);
        for (std::size_t i = 0; i < dy.numel(); ++i) ga.data[i] += dy.data[i] * bv.data[i];
      }
      if (g.needs_grad(b)) {
        const TensorT<T>& av = g.value(a);
        TensorT<T>& gb = g.grad_buffer(b);
        for (std::size_t i = 0; i < dy.numel(); ++i) gb.data[i] += dy.data[i] * av.data[i];
      }
    };
  }
  return push(std::move(node));
}

template <class T>
typename Graph<T>::NodeId Graph<T>::div(NodeId a, NodeId b) {
  const TensorT<T>& av = value(a);
  const TensorT<T>& bv = value(b);
  if (!av.same_shape(bv)) {
    fail(ErrorCode::kShape, "div shapes differ: " + shape_to_string(av.shape) + " vs " +
                                shape_to_string(bv.shape));
  }
  TensorT<T> out(av.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = av.data[i] / bv.data[i];
  Node node;
  node.kind = OpKind::kDiv;
  node.inputs = {a, b};
  node.requires_grad = needs_grad(a) || needs_grad(b);
  node.value = std::move(out);
  const NodeId self = static_cast<NodeId>(nodes_.size());
  if (node.requires_grad) {
    node.backward_fn = [self, a, b](Graph& g) {
      const TensorT<T>& dy = g.nodes_[g.check(self)].grad;
      const TensorT<T>& bv = g.value(b);
      if (g.needs_grad(a)) {
        TensorT<T>& ga = g.grad_buffer(a);
        for (std::size_t i = 0; i < dy.numel(); ++i) ga.data[i] += dy.data[i] / bv.data[i];
      }
      if (g.needs_grad(b)) {
        const TensorT<T>& av = g.value(a);
        TensorT<T>& gb = g.grad_buffer(b);
        for (std::size_t i = 0; i < dy.numel(); ++i) {
          gb.data[i] -= dy.data[i] * av.data[i] / (bv.data[i] * bv.data[i]);
        }
      }
    };
  }
  return push(std::move(node));
}

template <class T>
typename Graph<T>::NodeId Graph<T>::scale(NodeId x, T factor) {
  const TensorT<T>& xv = value(x);
  TensorT<T> out(xv.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = xv.data[i] * factor;
  Node node;
  node.kind = OpKind::kScale;
  node.inputs = {x};
  node.requires_grad = needs_grad(x);
  node.value = std::move(out);
  const NodeId self = static_cast<NodeId>(nodes_.size());
  if (node.requires_grad) {
    node.backward_fn = [self, x, factor](Graph& g) {
      const TensorT<T>& dy = g.nodes_[g.check(self)].grad;
      TensorT<T>& gx = g.grad_buffer(x);
      for (std::size_t i = 0; i < dy.numel(); ++i) gx.data[i] += dy.data[i] * factor;
    };
  }
  return push(std::move(node));
}

template <class T>
typename Graph<T>::NodeId Graph<T>::add_scalar(NodeId x, T offset) {
  const TensorT<T>& xv = value(x);
  TensorT<T> out(xv.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = xv.data[i] + offset;
  Node node;
  node.kind = OpKind::kAddScalar;
  node.inputs = {x};
  node.requires_grad = needs_grad(x);
  node.value = std::move(out);
  const NodeId self = static_cast<NodeId>(nodes_.size());
  if (node.requires_grad) {
    node.backward_fn = [self, x](Graph& g) {
      g.accumulate(x, g.nodes_[g.check(self)].grad);
    };
  }
  return push(std::move(node));
}

template <class T>
typename Graph<T>::NodeId Graph<T>::log(NodeId x) {
  const TensorT<T>& xv = value(x);
  TensorT<T> out(xv.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = std::log(xv.data[i]);
  Node node;
  node.kind = OpKind::kLog;
  node.inputs = {x};
  node.requires_grad = needs_grad(x);
  node.value = std::move(out);
  const NodeId self = static_cast<NodeId>(nodes_.size());
  if (node.requires_grad) {
    node.backward_fn = [self, x](Graph& g) {
      const TensorT<T>& dy = g.nodes_[g.check(self)].grad;
      const TensorT<T>& xv = g.value(x);
      TensorT<T>& gx = g.grad_buffer(x);
      for (std::size_t i = 0; i < dy.numel(); ++i) gx.data[i] += dy.data[i] / xv.data[i];
    };
  }
  return push(std::move(node));
}

template <class T>
typename Graph<T>::NodeId Graph<T>::clamp(NodeId x, T lo, T hi) {
  if (!(lo < hi)) fail(ErrorCode::kValue, "clamp bounds must satisfy lo < hi");
  const TensorT<T>& xv = value(x);
  TensorT<T> out(xv.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = std::min(std::max(xv.data[i], lo), hi);
  Node node;
  node.kind = OpKind::kClamp;
  node.inputs = {x};
  node.requires_grad = needs_grad(x);
  node.value = std::move(out);
  const NodeId self = static_cast<NodeId>(nodes_.size());
  if (node.requires_grad) {
    node.backward_fn = [self, x, lo, hi](Graph& g) {
      const TensorT<T>& dy = g.nodes_[g.check(self)].grad;
      const TensorT<T>& xv = g.value(x);
      TensorT<T>& gx = g.grad_buffer(x);
      for (std::size_t i = 0; i < dy.numel(); ++i) {
        if (xv.data[i] > lo && xv.data[i] < hi) gx.data[i] += dy.data[i];
      }
    };
  }
  return push(std::move(node));
}

template <class T>
typename Graph<T>::NodeId Graph<T>::sum(NodeId x) {
  const TensorT<T>& xv = value(x);
  T s = T(0);
  for (const T& v : xv.data) s += v;
  Node node;
  node.kind = OpKind::kSum;
  node.inputs = {x};
  node.requires_grad = needs_grad(x);
  node.value = TensorT<T>::scalar(s);
  const NodeId self = static_cast<NodeId>(nodes_.size());
  if (node.requires_grad) {
    node.backward_fn = [self, x](Graph& g) {
      const T d = g.nodes_[g.check(self)].grad.data[0];
      TensorT<T>& gx = g.grad_buffer(x);
      for (T& v : gx.data) v += d;
    };
  }
  return push(std::move(node));
}

template <class T>
typename Graph<T>::NodeId Graph<T>::mean(NodeId x) {
  const TensorT<T>& xv = value(x);
  T s = T(0);
  for (const T& v : xv.data) s += v;
  const T inv_n = T(1) / static_cast<T>(xv.numel());
  Node node;
  node.kind = OpKind::kMean;
  node.inputs = {x};
  node.requires_grad = needs_grad(x);
  node.value = TensorT<T>::scalar(s * inv_n);
  const NodeId self = static_cast<NodeId>(nodes_.size());
  if (node.requires_grad) {
    node.backward_fn = [self, x, inv_n](Graph& g) {
      const T d = g.nodes_[g.check(self)].grad.data[0] * inv_n;
      TensorT<T>& gx = g.grad_buffer(x);
      for (T& v : gx.data) v += d;
    };
  }
  return push(std::move(node));
}

template <class T>
typename Graph<T>::NodeId Graph<T>::concat_channels(NodeId a, NodeId b) {
  const TensorT<T>& av = value(a);
  const TensorT<T>& bv = value(b);
  if (av.rank() < 2 || av.rank() != bv.rank()) {
    fail(ErrorCode::kShape, "concat_channels needs two tensors of equal rank >= 2");
  }
  for (std::size_t ax = 0; ax < av.rank(); ++ax) {
    if (ax != 1 && av.shape[ax] != bv.shape[ax]) {
      fail(ErrorCode::kShape, "concat_channels operands differ outside the channel axis: " +
                                  shape_to_string(av.shape) + " vs " + shape_to_string(bv.shape));
    }
  }
  const std::size_t batch = av.shape[0], ca = av.shape[1], cb = bv.shape[1];
  std::size_t spatial = 1;
  for (std::size_t ax = 2; ax < av.rank(); ++ax) spatial *= av.shape[ax];
  Shape out_shape = av.shape;
  out_shape[1] = ca + cb;
  TensorT<T> out(out_shape);
  for (std::size_t n = 0; n < batch; ++n) {
    std::memcpy(out.data.data() + n * (ca + cb) * spatial, av.data.data() + n * ca * spatial,
                ca * spatial * sizeof(T));
    std::memcpy(out.data.data() + (n * (ca + cb) + ca) * spatial, bv.data.data() + n * cb * spatial,
                cb * spatial * sizeof(T));
  }
  Node node;
  node.kind = OpKind::kConcatChannels;
  node.inputs = {a, b};
  node.requires_grad = needs_grad(a) || needs_grad(b);
  node.value = std::move(out);
  const NodeId self = static_cast<NodeId>(nodes_.size());
  if (node.requires_grad) {
    node.backward_fn = [self, a, b, batch, ca, cb, spatial](Graph& g) {
      const TensorT<T>& dy = g.nodes_[g.check(self)].grad;
      if (g.needs_grad(a)) {
        TensorT<T>& ga = g.grad_buffer(a);
        for (std::size_t n = 0; n < batch; ++n) {
          const T* src = dy.data.data() + n * (ca + cb) * spatial;
          T* dst = ga.data.data() + n * ca * spatial;
          for (std::size_t i = 0; i < ca * spatial; ++i) dst[i] += src[i];
        }
      }
      if (g.needs_grad(b)) {
        TensorT<T>& gb = g.grad_buffer(b);
        for (std::size_t n = 0; n < batch; ++n) {
          const T* src = dy.data.data() + (n * (ca + cb) + ca) * spatial;
          T* dst = gb.data.data() + n * cb * spatial;
          for (std::size_t i = 0; i < cb * spatial; ++i) dst[i] += src[i];
        }
      }
    };
  }
  return push(std::move(node));
}

template <class T>
typename Graph<T>::NodeId Graph<T>::select_channels(NodeId x,
                                                    const std::vector<std::size_t>& channels) {
  const TensorT<T>& xv = value(x);
  if (xv.rank() < 2) fail(ErrorCode::kShape, "select_channels needs a channel axis (rank >= 2)");
  if (channels.empty()) fail(ErrorCode::kShape, "select_channels needs at least one channel");
  const std::size_t batch = xv.shape[0], c_in = xv.shape[1];
  std::size_t spatial = 1;
  for (std::size_t ax = 2; ax < xv.rank(); ++ax) spatial *= xv.shape[ax];
  for (std::size_t c : channels) {
    if (c >= c_in) {
      fail(ErrorCode::kShape, "select_channels index " + std::to_string(c) + " out of " +
                                  std::to_string(c_in) + " channels");
    }
  }
  Shape out_shape = xv.shape;
  out_shape[1] = channels.size();
  TensorT<T> out(out_shape);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t j = 0; j < channels.size(); ++j) {
      std::memcpy(out.data.data() + (n * channels.size() + j) * spatial,
                  xv.data.data() + (n * c_in + channels[j]) * spatial, spatial * sizeof(T));
    }
  }
  Node node;
  node.kind = OpKind::kSelectChannels;
  node.inputs = {x};
  node.requires_grad = needs_grad(x);
  node.value = std::move(out);
  const NodeId self = static_cast<NodeId>(nodes_.size());
  if (node.requires_grad) {
    node.backward_fn = [self, x, channels, batch, c_in, spatial](Graph& g) {
      const TensorT<T>& dy = g.nodes_[g.check(self)].grad;
      TensorT<T>& gx = g.grad_buffer(x);
      for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t j = 0; j < channels.size(); ++j) {
          const T* src = dy.data.data() + (n * channels.size() + j) * spatial;
          T* dst = gx.data.data() + (n * c_in + channels[j]) * spatial;
          for (std::size_t i = 0; i < spatial; ++i) dst[i] += src[i];
        }
      }
    };
  }
  return push(std::move(node));
}

template <class T>
typename Graph<T>::NodeId Graph<T>::upsample_nearest(NodeId x,
                                                     const std::vector<std::size_t>& factors) {
  const TensorT<T>& xv = value(x);
  if (xv.rank() < 3) fail(ErrorCode::kShape, "upsample input must be [batch, channels, spatial...]");
  const std::size_t rank = xv.rank() - 2;
  if (factors.size() != rank) {
    fail(ErrorCode::kShape, "upsample factors must list every spatial axis");
  }
  for (std::size_t f : factors) {
    if (f == 0) fail(ErrorCode::kShape, "upsample factors must be positive");
  }
  const Shape in = spatial_of(xv.shape);
  Shape out_shape = xv.shape;
  std::size_t prod_in = 1, prod_out = 1;
  Shape out_spatial(rank);
  for (std::size_t a = 0; a < rank; ++a) {
    out_spatial[a] = in[a] * factors[a];
    out_shape[a + 2] = out_spatial[a];
    prod_in *= in[a];
    prod_out *= out_spatial[a];
  }
  const std::size_t planes = xv.shape[0] * xv.shape[1];
  TensorT<T> out(out_shape);

  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t a = rank - 1; a-- > 0;) in_stride[a] = in_stride[a + 1] * in[a + 1];
  // Flat input offset for every flat output position within one plane.
  std::vector<std::size_t> map(prod_out);
  std::vector<std::size_t> ocoord(rank, 0);
  for (std::size_t p = 0; p < prod_out; ++p) {
    std::size_t flat = 0;
    for (std::size_t a = 0; a < rank; ++a) flat += (ocoord[a] / factors[a]) * in_stride[a];
    map[p] = flat;
    for (std::size_t a = rank; a-- > 0;) {
      if (++ocoord[a] < out_spatial[a]) break;
      ocoord[a] = 0;
    }
  }
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const T* src = xv.data.data() + pl * prod_in;
    T* dst = out.data.data() + pl * prod_out;
    for (std::size_t p = 0; p < prod_out; ++p) dst[p] = src[map[p]];
  }

  Node node;
  node.kind = OpKind::kUpsampleNearest;
  node.inputs = {x};
  node.requires_grad = needs_grad(x);
  node.value = std::move(out);
  const NodeId self = static_cast<NodeId>(nodes_.size());
  if (node.requires_grad) {
    node.backward_fn = [self, x, planes, prod_in, prod_out, map = std::move(map)](Graph& g) {
      const TensorT<T>& dy = g.nodes_[g.check(self)].grad;
      TensorT<T>& gx = g.grad_buffer(x);
      for (std::size_t pl = 0; pl < planes; ++pl) {
        const T* src = dy.data.data() + pl * prod_out;
        T* dst = gx.data.data() + pl * prod_in;
        for (std::size_t p = 0; p < prod_out; ++p) dst[map[p]] += src[p];
      }
    };
  }
  return push(std::move(node));
}

namespace {

// out[i...] = in[order[i]...]; `strides` addressing keeps this rank-generic.
template <class T>
TensorT<T> permute_copy(const TensorT<T>& in, const std::vector<std::size_t>& order) {
  const std::size_t rank = in.rank();
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = in.shape[order[i]];
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t a = rank - 1; a-- > 0;) in_stride[a] = in_stride[a + 1] * in.shape[a + 1];
  TensorT<T> out(out_shape);
  std::vector<std::size_t> ocoord(rank, 0);
  for (std::size_t p = 0; p < out.numel(); ++p) {
    std::size_t flat = 0;
    for (std::size_t i = 0; i < rank; ++i) flat += ocoord[i] * in_stride[order[i]];
    out.data[p] = in.data[flat];
    for (std::size_t a = rank; a-- > 0;) {
      if (++ocoord[a] < out_shape[a]) break;
      ocoord[a] = 0;
    }
  }
  return out;
}

}  // namespace

template <class T>
typename Graph<T>::NodeId Graph<T>::permute(NodeId x, const std::vector<std::size_t>& order) {
  const TensorT<T>& xv = value(x);
  const std::size_t rank = xv.rank();
  if (order.size() != rank) fail(ErrorCode::kShape, "permute order must list every axis");
  std::vector<bool> seen(rank, false);
  for (std::size_t a : order) {
    if (a >= rank || seen[a]) fail(ErrorCode::kShape, "permute order is not a permutation");
    seen[a] = true;
  }
  Node node;
  node.kind = OpKind::kPermute;
  node.inputs = {x};
  node.requires_grad = needs_grad(x);
  node.value = permute_copy(xv, order);
  const NodeId self = static_cast<NodeId>(nodes_.size());
  if (node.requires_grad) {
    std::vector<std::size_t> inverse(rank);
    for (std::size_t i = 0; i < rank; ++i) inverse[order[i]] = i;
    node.backward_fn = [self, x, inverse = std::move(inverse)](Graph& g) {
      g.accumulate(x, permute_copy(g.nodes_[g.check(self)].grad, inverse));
    };
  }
  return push(std::move(node));
}

template <class T>
typename Graph<T>::NodeId Graph<T>::reshape(NodeId x, Shape target) {
  const TensorT<T>& xv = value(x);
  Node node;
  node.kind = OpKind::kReshape;
  node.inputs = {x};
  node.requires_grad = needs_grad(x);
  node.value = xv.reshaped(std::move(target));
  const NodeId self = static_cast<NodeId>(nodes_.size());
  if (node.requires_grad) {
    node.backward_fn = [self, x](Graph& g) {
      const TensorT<T>& dy = g.nodes_[g.check(self)].grad;
      g.accumulate(x, dy.reshaped(g.value(x).shape));
    };
  }
  return push(std::move(node));
}

template <class T>
typename Graph<T>::NodeId Graph<T>::frame_spatial_mean(NodeId x) {
  const TensorT<T>& xv = value(x);
  if (xv.rank() != 5 || xv.shape[0] != 1) {
    fail(ErrorCode::kShape, "frame_spatial_mean expects [1, channels, frames, h, w], got " +
                                shape_to_string(xv.shape));
  }
  const std::size_t channels = xv.shape[1], frames = xv.shape[2];
  const std::size_t plane = xv.shape[3] * xv.shape[4];
  const T inv_plane = T(1) / static_cast<T>(plane);
  TensorT<T> out({frames, channels});
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t t = 0; t < frames; ++t) {
      const T* p = xv.data.data() + (c * frames + t) * plane;
      T s = T(0);
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
      out.data[t * channels + c] = s * inv_plane;
    }
  }
  Node node;
  node.kind = OpKind::kFrameSpatialMean;
  node.inputs = {x};
  node.requires_grad = needs_grad(x);
  node.value = std::move(out);
  const NodeId self = static_cast<NodeId>(nodes_.size());
  if (node.requires_grad) {
    node.backward_fn = [self, x, channels, frames, plane, inv_plane](Graph& g) {
      const TensorT<T>& dy = g.nodes_[g.check(self)].grad;
      TensorT<T>& gx = g.grad_buffer(x);
      for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t t = 0; t < frames; ++t) {
          const T d = dy.data[t * channels + c] * inv_plane;
          T* p = gx.data.data() + (c * frames + t) * plane;
          for (std::size_t i = 0; i < plane; ++i) p[i] += d;
        }
      }
    };
  }
  return push(std::move(node));
}

template <class T>
void Graph<T>::backward(NodeId loss) {
  const std::size_t loss_ix = check(loss);
  if (nodes_[loss_ix].value.numel() != 1) {
    fail(ErrorCode::kShape, "backward seed must be scalar, got " +
                                shape_to_string(nodes_[loss_ix].value.shape));
  }
  if (ran_backward_) fail(ErrorCode::kValue, "backward() already ran on this graph");
  ran_backward_ = true;
  if (!nodes_[loss_ix].requires_grad) return;
  grad_buffer(loss).data[0] = T(1);
  for (NodeId i = loss; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || n.grad.data.empty() || !n.backward_fn) continue;
    n.backward_fn(*this);
  }
}

template <class T>
TensorT<T> Graph<T>::grad(NodeId id) const {
  const Node& n = nodes_[check(id)];
  if (n.grad.data.empty()) return TensorT<T>(n.value.shape);
  return n.grad;
}

template <class T>
TensorT<T> Graph<T>::grad_of(const ParameterT<T>& p) const {
  auto it = param_nodes_.find(&p);
  if (it == param_nodes_.end()) return TensorT<T>(p.value.shape);
  return grad(it->second);
}

template <class T>
TensorT<T> he_init(const Shape& shape, std::size_t fan_in, Rng& rng) {
  if (fan_in == 0) fail(ErrorCode::kValue, "he_init requires fan_in >= 1");
  TensorT<T> t(shape);
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (T& v : t.data) v = static_cast<T>(rng.normal() * stddev);
  return t;
}

template class Graph<float>;
template class Graph<double>;
template TensorT<float> he_init<float>(const Shape&, std::size_t, Rng&);
template TensorT<double> he_init<double>(const Shape&, std::size_t, Rng&);

}  // namespace cq
