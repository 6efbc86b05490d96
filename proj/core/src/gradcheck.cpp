#include "cq/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "cq/error.hpp"
#include "cq/losses.hpp"

namespace cq {
namespace {

double forward_only(std::vector<TensorD>& inputs, const GraphBuilderD& build) {
  Graph<double> g;
  std::vector<Graph<double>::NodeId> ids;
  ids.reserve(inputs.size());
  for (TensorD& t : inputs) ids.push_back(g.input(t));
  const auto loss = build(g, ids);
  const TensorD& v = g.value(loss);
  if (v.numel() != 1) fail(ErrorCode::kShape, "gradient check loss must be scalar");
  return v.data[0];
}

std::vector<std::size_t> probe_indices(std::size_t numel, std::size_t cap, Rng* sampler) {
  if (cap == 0 || numel <= cap) {
    std::vector<std::size_t> all(numel);
    for (std::size_t i = 0; i < numel; ++i) all[i] = i;
    return all;
  }
  std::vector<std::size_t> picked;
  picked.reserve(cap);
  if (sampler != nullptr) {
    std::vector<std::size_t> pool(numel);
    for (std::size_t i = 0; i < numel; ++i) pool[i] = i;
    for (std::size_t i = 0; i < cap; ++i) {
      const std::size_t j = i + sampler->below(numel - i);
      std::swap(pool[i], pool[j]);
      picked.push_back(pool[i]);
    }
  } else {
    for (std::size_t i = 0; i < cap; ++i) picked.push_back(i * numel / cap);
  }
  return picked;
}

}  // namespace

GradCheckResult check_gradients(const std::string& name, std::vector<TensorD> inputs,
                                const GraphBuilderD& build, double eps, double tolerance,
                                std::size_t max_probes_per_input, Rng* sampler) {
  for (TensorD& t : inputs) t.requires_grad = true;

  std::vector<TensorD> analytic;
  {
    Graph<double> g;
    std::vector<Graph<double>::NodeId> ids;
    ids.reserve(inputs.size());
    for (TensorD& t : inputs) ids.push_back(g.input(t));
    const auto loss = build(g, ids);
    if (g.value(loss).numel() != 1) {
      fail(ErrorCode::kShape, "gradient check loss must be scalar");
    }
    g.backward(loss);
    analytic.reserve(ids.size());
    for (auto id : ids) analytic.push_back(g.grad(id));
  }

  GradCheckResult result;
  result.name = name;
  result.tolerance = tolerance;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j : probe_indices(inputs[i].numel(), max_probes_per_input, sampler)) {
      const double original = inputs[i].data[j];
      inputs[i].data[j] = original + eps;
      const double plus = forward_only(inputs, build);
      inputs[i].data[j] = original - eps;
      const double minus = forward_only(inputs, build);
      inputs[i].data[j] = original;
      const double fd = (plus - minus) / (2.0 * eps);
      const double a = analytic[i].data[j];
      const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-3});
      result.max_rel_err = std::max(result.max_rel_err, rel);
      ++result.probes;
    }
  }
  result.pass = result.max_rel_err < tolerance;
  return result;
}

namespace {

using Gd = Graph<double>;
using Id = Gd::NodeId;
using Ids = std::vector<Id>;

TensorD randn(Rng& rng, Shape shape, double scale = 1.0) {
  TensorD t(std::move(shape));
  for (double& v : t.data) v = scale * rng.normal();
  return t;
}

// Samples with every element at least `margin` away from each kink, so the
// central difference never straddles a non-smooth point.
TensorD randn_away(Rng& rng, Shape shape, const std::vector<double>& kinks, double margin) {
  TensorD t = randn(rng, std::move(shape));
  for (double& v : t.data) {
    bool moved = true;
    while (moved) {
      moved = false;
      for (double k : kinks) {
        if (std::abs(v - k) < margin) {
          v = k + (v >= k ? margin : -margin) * 2.0;
          moved = true;
        }
      }
    }
  }
  return t;
}

// Exact one-hot planes [n, classes, h, w] with one random class per pixel.
TensorD random_onehot(Rng& rng, std::size_t n, std::size_t classes, std::size_t h,
                      std::size_t w) {
  TensorD t({n, classes, h, w});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < h * w; ++p) {
      const std::size_t k = rng.below(classes);
      t.data[(i * classes + k) * h * w + p] = 1.0;
    }
  }
  return t;
}

TensorD random_binary(Rng& rng, Shape shape) {
  TensorD t(std::move(shape));
  for (double& v : t.data) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
  return t;
}

BatchNormStateT<double> fresh_bn_state(std::size_t channels) {
  BatchNormStateT<double> state;
  state.running_mean = TensorD({channels});
  state.running_var = TensorD({channels}, 1.0);
  return state;
}

ConvSpec conv_spec(std::vector<std::size_t> kernel, std::size_t in_c, std::size_t out_c,
                   Padding pad = Padding::kSame, std::vector<std::size_t> stride = {},
                   std::vector<std::size_t> dilation = {}) {
  ConvSpec spec;
  spec.kernel = std::move(kernel);
  spec.stride = std::move(stride);
  spec.dilation = std::move(dilation);
  spec.padding = pad;
  spec.in_channels = in_c;
  spec.out_channels = out_c;
  return spec;
}

// A reduced two-convolution segmentation trunk on one graph. The trunk uses
// sigmoid activations: the ReLU op is finite-difference checked on its own
// with probes held away from the kink, and a smooth trunk keeps the composed
// check free of measure-zero straddling artifacts.
Id reduced_segmenter(Gd& g, Id x, Id w1, Id b1, Id gamma, Id beta, Id w2, Id b2) {
  BatchNormStateT<double> state = fresh_bn_state(4);
  const Id h1 = g.sigmoid(g.conv_nd(x, w1, b1, conv_spec({3, 3}, 1, 4)));
  const Id h2 = g.batchnorm(h1, gamma, beta, state, BatchNormMode::kTrain);
  return g.softmax_channels(g.conv_nd(h2, w2, b2, conv_spec({3, 3}, 4, 3)));
}

// A reduced multi-task trunk: factorized temporal (3x1x1) and spatial (1x3x3)
// convolutions, spatial pooling, frame-wise average and two heads.
std::pair<Id, Id> reduced_multitask(Gd& g, Id fg, Id wt, Id bt, Id ws, Id bs, Id wi, Id bi,
                                    Id wp, Id bp) {
  const Id t1 = g.sigmoid(g.conv_nd(fg, wt, bt, conv_spec({3, 1, 1}, 2, 3)));
  const Id t2 = g.sigmoid(g.conv_nd(t1, ws, bs, conv_spec({1, 3, 3}, 3, 3)));
  const Id pooled = g.maxpool_nd(t2, {1, 4, 4}, {1, 4, 4});
  const Id features = g.frame_spatial_mean(pooled);  // [frames, channels]
  const Id indices = g.dense(features, wi, bi);
  const Id phase = g.dense(features, wp, bp);
  return {indices, phase};
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GradCheckResult> rows;
  const auto run = [&rows](GradCheckResult r) { rows.push_back(std::move(r)); };

  run(check_gradients("conv2d_same", {randn(rng, {1, 2, 5, 6}), randn(rng, {3, 2, 3, 3}),
                                      randn(rng, {3})},
                      [](Gd& g, const Ids& in) {
                        return g.mean(g.conv_nd(in[0], in[1], in[2], conv_spec({3, 3}, 2, 3)));
                      }));
  run(check_gradients("conv2d_stride_dilation",
                      {randn(rng, {1, 1, 9, 9}), randn(rng, {2, 1, 3, 3}), randn(rng, {2})},
                      [](Gd& g, const Ids& in) {
                        return g.mean(g.conv_nd(
                            in[0], in[1], in[2],
                            conv_spec({3, 3}, 1, 2, Padding::kSame, {2, 2}, {2, 2})));
                      }));
  run(check_gradients("conv2d_valid",
                      {randn(rng, {2, 1, 5, 5}), randn(rng, {1, 1, 3, 3}), randn(rng, {1})},
                      [](Gd& g, const Ids& in) {
                        return g.mean(
                            g.conv_nd(in[0], in[1], in[2], conv_spec({3, 3}, 1, 1, Padding::kNone)));
                      }));
  run(check_gradients("conv3d", {randn(rng, {1, 1, 3, 4, 4}), randn(rng, {2, 1, 3, 3, 3}),
                                 randn(rng, {2})},
                      [](Gd& g, const Ids& in) {
                        return g.mean(g.conv_nd(in[0], in[1], in[2], conv_spec({3, 3, 3}, 1, 2)));
                      }));
  run(check_gradients("dense", {randn(rng, {3, 4}), randn(rng, {4, 5}), randn(rng, {5})},
                      [](Gd& g, const Ids& in) { return g.mean(g.dense(in[0], in[1], in[2])); }));
  run(check_gradients("maxpool2d", {randn(rng, {1, 2, 6, 6})}, [](Gd& g, const Ids& in) {
    return g.mean(g.maxpool_nd(in[0], {2, 2}, {2, 2}));
  }));
  run(check_gradients("maxpool3d_spatial", {randn(rng, {1, 1, 3, 6, 6})},
                      [](Gd& g, const Ids& in) {
                        return g.mean(g.maxpool_nd(in[0], {1, 3, 3}, {1, 3, 3}));
                      }));
  run(check_gradients("relu", {randn_away(rng, {2, 3, 4}, {0.0}, 0.05)},
                      [](Gd& g, const Ids& in) { return g.mean(g.relu(in[0])); }));
  run(check_gradients("sigmoid", {randn(rng, {3, 5})},
                      [](Gd& g, const Ids& in) { return g.mean(g.sigmoid(in[0])); }));
  {
    const TensorD mixer = randn(rng, {2, 3, 2, 2});
    run(check_gradients("softmax_channels", {randn(rng, {2, 3, 2, 2})},
                        [mixer](Gd& g, const Ids& in) {
                          return g.mean(g.mul(g.softmax_channels(in[0]), g.input(mixer)));
                        }));
  }
  {
    const TensorD mixer = randn(rng, {4, 3, 2, 2});
    run(check_gradients("batchnorm_train",
                        {randn(rng, {4, 3, 2, 2}), randn(rng, {3}), randn(rng, {3})},
                        [mixer](Gd& g, const Ids& in) {
                          BatchNormStateT<double> state = fresh_bn_state(3);
                          const Id y =
                              g.batchnorm(in[0], in[1], in[2], state, BatchNormMode::kTrain);
                          return g.mean(g.mul(y, g.input(mixer)));
                        }));
  }
  run(check_gradients("add", {randn(rng, {2, 3}), randn(rng, {2, 3})},
                      [](Gd& g, const Ids& in) { return g.mean(g.add(in[0], in[1])); }));
  run(check_gradients("sub", {randn(rng, {2, 3}), randn(rng, {2, 3})},
                      [](Gd& g, const Ids& in) { return g.mean(g.sub(in[0], in[1])); }));
  run(check_gradients("mul", {randn(rng, {2, 3}), randn(rng, {2, 3})},
                      [](Gd& g, const Ids& in) { return g.mean(g.mul(in[0], in[1])); }));
  run(check_gradients("div", {randn(rng, {2, 3}), randn(rng, {2, 3})},
                      [](Gd& g, const Ids& in) {
                        const Id denom = g.add_scalar(g.mul(in[1], in[1]), 1.0);
                        return g.mean(g.div(in[0], denom));
                      }));
  run(check_gradients("scale_add_scalar", {randn(rng, {2, 3})}, [](Gd& g, const Ids& in) {
    return g.mean(g.add_scalar(g.scale(in[0], -1.7), 0.3));
  }));
  run(check_gradients("log", {randn(rng, {2, 3})}, [](Gd& g, const Ids& in) {
    return g.mean(g.log(g.add_scalar(g.mul(in[0], in[0]), 0.5)));
  }));
  run(check_gradients("clamp", {randn_away(rng, {3, 4}, {-0.8, 0.8}, 0.05)},
                      [](Gd& g, const Ids& in) { return g.mean(g.clamp(in[0], -0.8, 0.8)); }));
  run(check_gradients("sum", {randn(rng, {2, 5})},
                      [](Gd& g, const Ids& in) { return g.sum(in[0]); }));
  run(check_gradients("mean", {randn(rng, {2, 5})},
                      [](Gd& g, const Ids& in) { return g.mean(in[0]); }));
  {
    const TensorD mixer = randn(rng, {1, 5, 3, 3});
    run(check_gradients("concat_channels", {randn(rng, {1, 2, 3, 3}), randn(rng, {1, 3, 3, 3})},
                        [mixer](Gd& g, const Ids& in) {
                          return g.mean(g.mul(g.concat_channels(in[0], in[1]), g.input(mixer)));
                        }));
  }
  {
    const TensorD mixer = randn(rng, {1, 2, 3, 3});
    run(check_gradients("select_channels", {randn(rng, {1, 4, 3, 3})},
                        [mixer](Gd& g, const Ids& in) {
                          return g.mean(g.mul(g.select_channels(in[0], {1, 3}), g.input(mixer)));
                        }));
  }
  {
    const TensorD mixer = randn(rng, {1, 2, 6, 6});
    run(check_gradients("upsample_nearest", {randn(rng, {1, 2, 3, 3})},
                        [mixer](Gd& g, const Ids& in) {
                          return g.mean(g.mul(g.upsample_nearest(in[0], {2, 2}), g.input(mixer)));
                        }));
  }
  {
    const TensorD mixer = randn(rng, {4, 2, 3});
    run(check_gradients("permute", {randn(rng, {2, 3, 4})}, [mixer](Gd& g, const Ids& in) {
      return g.mean(g.mul(g.permute(in[0], {2, 0, 1}), g.input(mixer)));
    }));
  }
  {
    const TensorD mixer = randn(rng, {3, 4});
    run(check_gradients("reshape", {randn(rng, {2, 6})}, [mixer](Gd& g, const Ids& in) {
      return g.mean(g.mul(g.reshape(in[0], {3, 4}), g.input(mixer)));
    }));
  }
  {
    const TensorD mixer = randn(rng, {4, 3});
    run(check_gradients("frame_spatial_mean", {randn(rng, {1, 3, 4, 5, 5})},
                        [mixer](Gd& g, const Ids& in) {
                          return g.mean(g.mul(g.frame_spatial_mean(in[0]), g.input(mixer)));
                        }));
  }

  // Composed losses fed through the activations that produce valid
  // probabilities, so every probe stays inside the losses' domains.
  const LossWeightsD weights;
  {
    const TensorD onehot = random_onehot(rng, 2, 3, 4, 4);
    for (const auto variant : {DiceVariant::kVerbatim, DiceVariant::kCanonical}) {
      const char* name = variant == DiceVariant::kVerbatim ? "loss_dice_verbatim"
                                                           : "loss_dice_canonical";
      run(check_gradients(name, {randn(rng, {2, 3, 4, 4})},
                          [onehot, variant, weights](Gd& g, const Ids& in) {
                            const Id probs = g.softmax_channels(in[0]);
                            return soft_dice_loss(g, probs, g.input(onehot), weights, variant);
                          }));
    }
  }
  {
    const TensorD labels = random_binary(rng, {6, 1});
    run(check_gradients("loss_bce", {randn(rng, {6, 1})}, [labels](Gd& g, const Ids& in) {
      return bce_loss(g, g.sigmoid(in[0]), g.input(labels));
    }));
  }
  run(check_gradients("loss_mse", {randn(rng, {4, 11}), randn(rng, {4, 11})},
                      [](Gd& g, const Ids& in) { return mse_loss(g, in[0], in[1]); }));
  {
    const TensorD targets = randn(rng, {4, 11});
    const TensorD labels = random_binary(rng, {4, 1});
    run(check_gradients("loss_multitask", {randn(rng, {4, 11}), randn(rng, {4, 1})},
                        [targets, labels, weights](Gd& g, const Ids& in) {
                          return multitask_loss(g, in[0], g.input(targets), g.sigmoid(in[1]),
                                                g.input(labels), weights);
                        }));
  }

  // The composed objectives through reduced networks on 16x16 frames: two
  // frames pass through the segmentation trunk, the soft foreground planes
  // feed the multi-task trunk, and the joint objective closes the graph.
  {
    const std::size_t frames = 2, size = 16;
    const TensorD x = randn(rng, {frames, 1, size, size});
    const TensorD onehot = random_onehot(rng, frames, 3, size, size);
    const TensorD targets = randn(rng, {frames, 11});
    const TensorD labels = random_binary(rng, {frames, 1});
    std::vector<TensorD> net_inputs = {
        x,
        randn(rng, {4, 1, 3, 3}, 0.4), randn(rng, {4}, 0.1),       // segmenter conv 1
        randn(rng, {3}, 0.3),          randn(rng, {3}, 0.1),       // batchnorm gamma/beta
        randn(rng, {3, 4, 3, 3}, 0.4), randn(rng, {3}, 0.1),       // segmenter conv 2
        randn(rng, {3, 2, 3, 1, 1}, 0.4), randn(rng, {3}, 0.1),    // temporal conv
        randn(rng, {3, 3, 1, 3, 3}, 0.4), randn(rng, {3}, 0.1),    // spatial conv
        randn(rng, {3, 11}, 0.4),      randn(rng, {11}, 0.1),      // index head
        randn(rng, {3, 1}, 0.4),       randn(rng, {1}, 0.1),       // phase head
    };
    net_inputs[3] = TensorD({4}, {1.1, 0.9, 1.05, 0.95});  // gamma near 1
    net_inputs[4] = randn(rng, {4}, 0.1);                  // beta matches 4 channels
    const auto joint = [onehot, targets, labels, weights, frames,
                        size](Gd& g, const Ids& in) {
      const Id probs = reduced_segmenter(g, in[0], in[1], in[2], in[3], in[4], in[5], in[6]);
      const Id seg = soft_dice_loss(g, probs, g.input(onehot), weights, DiceVariant::kVerbatim);
      const Id fg = g.reshape(g.permute(g.select_channels(probs, {1, 2}), {1, 0, 2, 3}),
                              {1, 2, frames, size, size});
      const auto [indices, phase] =
          reduced_multitask(g, fg, in[7], in[8], in[9], in[10], in[11], in[12], in[13], in[14]);
      const Id mse = mse_loss(g, indices, g.input(targets));
      const Id bce = bce_loss(g, g.sigmoid(phase), g.input(labels));
      return end_to_end_loss(g, seg, mse, bce, weights);
    };
    Rng sampler = rng.fork(99);
    run(check_gradients("loss_end_to_end_net16", net_inputs, joint, 1e-5, 1e-4, 24, &sampler));
  }

  return rows;
}

}  // namespace cq
