#include "cq/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>
#include <utility>

#include "cq/error.hpp"

namespace cq {

namespace {

using NodeId = Graph<float>::NodeId;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void validate_dataset(const Dataset& set, const std::string& what) {
  if (set.empty()) fail(ErrorCode::kValue, what + " set is empty");
  for (std::size_t s = 0; s < set.size(); ++s) {
    const Subject& subject = set[s];
    const std::string who = what + " subject " + std::to_string(s) + " ('" +
                            subject.images.subject_id + "')";
    if (subject.images.frames.rank() != 3) {
      fail(ErrorCode::kShape, who + ": images must be [frames, height, width]");
    }
    subject.masks.validate();
    const std::size_t t = subject.images.frame_count();
    if (t < 2) fail(ErrorCode::kValue, who + ": needs at least two frames");
    if (subject.masks.frames != t || subject.masks.height != subject.images.height() ||
        subject.masks.width != subject.images.width()) {
      fail(ErrorCode::kShape, who + ": mask geometry does not match the images");
    }
    if (subject.masks.pixel_spacing != subject.images.pixel_spacing) {
      fail(ErrorCode::kValue, who + ": mask and image pixel spacing disagree");
    }
    if (subject.indices.size() != t) {
      fail(ErrorCode::kShape, who + ": " + std::to_string(subject.indices.size()) +
                                  " index vectors for " + std::to_string(t) + " frames");
    }
  }
}

NormalizationStats stats_from(const Dataset& train_set) {
  std::vector<IndexVector> all;
  for (const Subject& s : train_set) all.insert(all.end(), s.indices.begin(), s.indices.end());
  return compute_normalization_stats(all);
}

// Frames [start, start + count) of a preprocessed sequence as [count, 1, h, w].
Tensor frame_batch(const CineSequence& seq, std::size_t start, std::size_t count) {
  const std::size_t hw = seq.height() * seq.width();
  Tensor x({count, 1, seq.height(), seq.width()});
  std::copy_n(seq.frames.data.begin() + start * hw, count * hw, x.data.begin());
  return x;
}

// One-hot of a full sequence in the volumetric layout [1, classes, t, h, w].
Tensor onehot_volume(const MaskSequence& masks, std::size_t classes) {
  const std::size_t t = masks.frames, hw = masks.height * masks.width;
  Tensor out({1, classes, t, masks.height, masks.width});
  for (std::size_t f = 0; f < t; ++f) {
    for (std::size_t i = 0; i < hw; ++i) {
      const std::uint8_t label = masks.labels[f * hw + i];
      if (label >= classes) {
        fail(ErrorCode::kValue, "label " + std::to_string(label) + " exceeds " +
                                    std::to_string(classes) + " classes");
      }
      out.data[(label * t + f) * hw + i] = 1.0f;
    }
  }
  return out;
}

void check_finite_loss(float value, const char* stage, std::size_t epoch) {
  if (!std::isfinite(value)) {
    fail(ErrorCode::kDiverged,
         std::string(stage) + " loss diverged at epoch " + std::to_string(epoch));
  }
}

struct MultiTaskBatch {
  Tensor planes;   // [t, h, w, 2]
  Tensor targets;  // [t, 11], normalized
  Tensor phase;    // [t, 1]
};

// Wires one subject's multi-task pass onto `g` and returns the component
// losses plus the combined multi-stage objective.
struct MultiTaskNodes {
  NodeId mse = 0;
  NodeId bce = 0;
  NodeId combined = 0;
};

MultiTaskNodes multitask_pass(Graph<float>& g, Stmt& net, NodeId planes,
                              const MultiTaskBatch& batch, const LossWeights& weights) {
  const std::size_t t = batch.planes.extent(0);
  const std::size_t h = batch.planes.extent(1);
  const std::size_t w = batch.planes.extent(2);
  const std::size_t c = batch.planes.extent(3);
  const NodeId x = g.reshape(g.permute(planes, {3, 0, 1, 2}), {1, c, t, h, w});
  const auto [pred, logits] = net.forward(g, x, BatchNormMode::kTrain);
  const NodeId probs = g.sigmoid(logits);
  MultiTaskNodes nodes;
  nodes.mse = mse_loss(g, pred, g.input(batch.targets));
  nodes.bce = bce_loss(g, probs, g.input(batch.phase));
  nodes.combined = g.add(g.scale(nodes.mse, weights.multistage_mse),
                         g.scale(nodes.bce, weights.multistage_bce));
  return nodes;
}

}  // namespace

CineSequence preprocess(const CineSequence& seq) {
  if (seq.frames.rank() != 3) {
    fail(ErrorCode::kShape, "preprocess expects a [frames, height, width] sequence");
  }
  const std::size_t t = seq.frame_count(), h = seq.height(), w = seq.width();
  CineSequence out = seq;
  for (std::size_t f = 0; f < t; ++f) {
    Tensor frame({h, w});
    std::copy_n(seq.frames.data.begin() + f * h * w, h * w, frame.data.begin());
    Tensor eq = clahe(frame);
    std::copy_n(eq.data.begin(), h * w, out.frames.data.begin() + f * h * w);
  }
  return zscore_image(out);
}

Tensor onehot_targets(const MaskSequence& masks, std::size_t start, std::size_t count,
                      std::size_t classes) {
  if (classes == 0) fail(ErrorCode::kValue, "one-hot encoding needs at least one class");
  if (start + count > masks.frames || count == 0) {
    fail(ErrorCode::kValue, "one-hot frame window [" + std::to_string(start) + ", " +
                                std::to_string(start + count) + ") outside " +
                                std::to_string(masks.frames) + " frames");
  }
  const std::size_t hw = masks.height * masks.width;
  Tensor out({count, classes, masks.height, masks.width});
  for (std::size_t f = 0; f < count; ++f) {
    for (std::size_t i = 0; i < hw; ++i) {
      const std::uint8_t label = masks.labels[(start + f) * hw + i];
      if (label >= classes) {
        fail(ErrorCode::kValue, "label " + std::to_string(label) + " exceeds " +
                                    std::to_string(classes) + " classes");
      }
      out.data[(f * classes + label) * hw + i] = 1.0f;
    }
  }
  return out;
}

Tensor foreground_planes(const MaskSequence& masks) {
  masks.validate();
  const std::size_t t = masks.frames, h = masks.height, w = masks.width;
  Tensor out({t, h, w, 2});
  for (std::size_t f = 0; f < t; ++f) {
    for (std::size_t i = 0; i < h * w; ++i) {
      const std::uint8_t label = masks.labels[f * h * w + i];
      if (label == kCavity) out.data[(f * h * w + i) * 2 + 0] = 1.0f;
      if (label == kMyocardium) out.data[(f * h * w + i) * 2 + 1] = 1.0f;
    }
  }
  return out;
}

Tensor normalized_target_tensor(const std::vector<IndexVector>& indices,
                                const NormalizationStats& stats) {
  if (indices.empty()) fail(ErrorCode::kValue, "no index vectors to normalize");
  Tensor out({indices.size(), IndexVector::kCount});
  for (std::size_t t = 0; t < indices.size(); ++t) {
    const auto z = normalize_targets(indices[t].values(), stats);
    for (std::size_t k = 0; k < IndexVector::kCount; ++k) {
      out.data[t * IndexVector::kCount + k] = static_cast<float>(z[k]);
    }
  }
  return out;
}

Tensor phase_label_tensor(const std::vector<IndexVector>& indices) {
  if (indices.empty()) fail(ErrorCode::kValue, "no index vectors for phase labels");
  Tensor out({indices.size(), 1});
  for (std::size_t t = 0; t < indices.size(); ++t) {
    const int phase = indices[t].phase;
    if (phase != 0 && phase != 1) {
      fail(ErrorCode::kValue, "phase label must be 0 or 1, got " + std::to_string(phase));
    }
    out.data[t] = static_cast<float>(phase);
  }
  return out;
}

namespace {

void validate_train_config(const TrainConfig& config) {
  if (config.frames_per_batch == 0) {
    fail(ErrorCode::kConfig, "frames_per_batch must be positive");
  }
  if (!(config.segmentation_lr > 0.0) || !(config.multitask_lr > 0.0)) {
    fail(ErrorCode::kConfig, "learning rates must be positive");
  }
}

struct Initialized {
  DrUnet g;
  Stmt d;
  NormalizationStats stats;
  std::vector<CineSequence> preprocessed;
};

Initialized initialize(const Dataset& train_set, const TrainConfig& config) {
  validate_dataset(train_set, "training");
  validate_train_config(config);
  Rng root(config.seed);
  Rng g_rng = root.fork(1);
  Rng d_rng = root.fork(2);
  Initialized init{DrUnet(config.segmentation, g_rng), Stmt(config.multitask, d_rng),
                   stats_from(train_set), {}};
  init.preprocessed.reserve(train_set.size());
  for (const Subject& s : train_set) init.preprocessed.push_back(preprocess(s.images));
  return init;
}

std::vector<MultiTaskBatch> multitask_batches(const Dataset& train_set,
                                              const std::vector<Tensor>& planes,
                                              const NormalizationStats& stats) {
  std::vector<MultiTaskBatch> batches;
  batches.reserve(train_set.size());
  for (std::size_t s = 0; s < train_set.size(); ++s) {
    batches.push_back(MultiTaskBatch{planes[s],
                                     normalized_target_tensor(train_set[s].indices, stats),
                                     phase_label_tensor(train_set[s].indices)});
  }
  return batches;
}

}  // namespace

MultiStageResult train_multistage(const Dataset& train_set, const TrainConfig& config) {
  Initialized init = initialize(train_set, config);
  MultiStageResult result{std::move(init.g), std::move(init.d), init.stats, {}, {}};
  const std::size_t classes = config.segmentation.classes;

  AdamConfig g_opt;
  g_opt.lr = static_cast<float>(config.segmentation_lr);
  Adam adam_g(g_opt);
  result.stage1_log.reserve(config.stage1_epochs);
  for (std::size_t epoch = 1; epoch <= config.stage1_epochs; ++epoch) {
    const auto tick = Clock::now();
    double loss_sum = 0.0;
    std::size_t frames_seen = 0;
    for (std::size_t s = 0; s < train_set.size(); ++s) {
      const std::size_t t_count = init.preprocessed[s].frame_count();
      for (std::size_t start = 0; start < t_count; start += config.frames_per_batch) {
        const std::size_t count = std::min(config.frames_per_batch, t_count - start);
        Graph<float> g;
        const NodeId probs = result.segmentation.forward(
            g, g.input(frame_batch(init.preprocessed[s], start, count)), BatchNormMode::kTrain);
        const NodeId target = g.input(onehot_targets(train_set[s].masks, start, count, classes));
        const NodeId loss =
            soft_dice_loss(g, probs, target, config.loss_weights, config.dice_variant);
        const float lv = g.value(loss).data[0];
        check_finite_loss(lv, "stage-1", epoch);
        g.backward(loss);
        adam_g.step(g, result.segmentation.parameters());
        loss_sum += static_cast<double>(lv) * static_cast<double>(count);
        frames_seen += count;
      }
    }
    EpochLog row;
    row.epoch = epoch;
    row.seg_loss = loss_sum / static_cast<double>(frames_seen);
    row.total_loss = row.seg_loss;
    row.wall_seconds = seconds_since(tick);
    result.stage1_log.push_back(row);
  }

  // Stage 2: the segmentation network is frozen, so its hard predictions per
  // subject are computed once up front.
  std::vector<Tensor> planes;
  planes.reserve(train_set.size());
  for (const CineSequence& seq : init.preprocessed) {
    planes.push_back(foreground_planes(forward_segmentation(result.segmentation, seq).hard_labels));
  }
  const std::vector<MultiTaskBatch> batches = multitask_batches(train_set, planes, result.stats);

  AdamConfig d_opt;
  d_opt.lr = static_cast<float>(config.multitask_lr);
  d_opt.weight_decay = static_cast<float>(config.multitask.weight_decay);
  Adam adam_d(d_opt);
  result.stage2_log.reserve(config.stage2_epochs);
  for (std::size_t epoch = 1; epoch <= config.stage2_epochs; ++epoch) {
    const auto tick = Clock::now();
    double mse_sum = 0.0, bce_sum = 0.0, total_sum = 0.0;
    for (std::size_t s = 0; s < train_set.size(); ++s) {
      Graph<float> g;
      const MultiTaskNodes nodes = multitask_pass(g, result.multitask, g.input(batches[s].planes),
                                                  batches[s], config.loss_weights);
      const float lv = g.value(nodes.combined).data[0];
      check_finite_loss(lv, "stage-2", epoch);
      g.backward(nodes.combined);
      adam_d.step(g, result.multitask.parameters());
      mse_sum += g.value(nodes.mse).data[0];
      bce_sum += g.value(nodes.bce).data[0];
      total_sum += lv;
    }
    EpochLog row;
    row.epoch = epoch;
    row.mse_loss = mse_sum / static_cast<double>(train_set.size());
    row.bce_loss = bce_sum / static_cast<double>(train_set.size());
    row.total_loss = total_sum / static_cast<double>(train_set.size());
    row.wall_seconds = seconds_since(tick);
    result.stage2_log.push_back(row);
  }
  return result;
}

EndToEndResult train_end_to_end(const Dataset& train_set, const TrainConfig& config) {
  Initialized init = initialize(train_set, config);
  EndToEndResult result{std::move(init.g), std::move(init.d), init.stats, {}};
  const std::size_t classes = config.segmentation.classes;
  const bool volumetric = config.segmentation.mode == DrUnetConfig::Mode::k3D;

  std::vector<MultiTaskBatch> batches;
  batches.reserve(train_set.size());
  for (std::size_t s = 0; s < train_set.size(); ++s) {
    // The planes tensor is unused in the joint pass (the multi-task input is
    // the live soft output of the segmentation network); keep geometry only.
    batches.push_back(MultiTaskBatch{Tensor({1, 1, 1, 2}),
                                     normalized_target_tensor(train_set[s].indices, result.stats),
                                     phase_label_tensor(train_set[s].indices)});
  }

  AdamConfig g_opt;
  g_opt.lr = static_cast<float>(config.segmentation_lr);
  Adam adam_g(g_opt);
  AdamConfig d_opt;
  d_opt.lr = static_cast<float>(config.multitask_lr);
  d_opt.weight_decay = static_cast<float>(config.multitask.weight_decay);
  Adam adam_d(d_opt);

  result.log.reserve(config.end_to_end_epochs);
  for (std::size_t epoch = 1; epoch <= config.end_to_end_epochs; ++epoch) {
    const auto tick = Clock::now();
    double seg_sum = 0.0, mse_sum = 0.0, bce_sum = 0.0, total_sum = 0.0;
    for (std::size_t s = 0; s < train_set.size(); ++s) {
      const CineSequence& seq = init.preprocessed[s];
      const std::size_t t = seq.frame_count(), h = seq.height(), w = seq.width();
      Graph<float> g;
      NodeId probs;
      NodeId seg;
      NodeId d_in;
      if (volumetric) {
        Tensor x = seq.frames.reshaped({1, 1, t, h, w});
        probs = result.segmentation.forward(g, g.input(std::move(x)), BatchNormMode::kTrain);
        seg = soft_dice_loss(g, probs, g.input(onehot_volume(train_set[s].masks, classes)),
                             config.loss_weights, config.dice_variant);
        d_in = g.select_channels(probs, {kCavity, kMyocardium});
      } else {
        probs = result.segmentation.forward(g, g.input(frame_batch(seq, 0, t)),
                                            BatchNormMode::kTrain);
        seg = soft_dice_loss(g, probs, g.input(onehot_targets(train_set[s].masks, 0, t, classes)),
                             config.loss_weights, config.dice_variant);
        d_in = g.reshape(g.permute(g.select_channels(probs, {kCavity, kMyocardium}), {1, 0, 2, 3}),
                         {1, 2, t, h, w});
      }
      const auto [pred, logits] = result.multitask.forward(g, d_in, BatchNormMode::kTrain);
      const NodeId phase_probs = g.sigmoid(logits);
      const NodeId mse = mse_loss(g, pred, g.input(batches[s].targets));
      const NodeId bce = bce_loss(g, phase_probs, g.input(batches[s].phase));
      const NodeId total = end_to_end_loss(g, seg, mse, bce, config.loss_weights);
      const float lv = g.value(total).data[0];
      check_finite_loss(lv, "end-to-end", epoch);
      g.backward(total);
      adam_g.step(g, result.segmentation.parameters());
      adam_d.step(g, result.multitask.parameters());
      seg_sum += g.value(seg).data[0];
      mse_sum += g.value(mse).data[0];
      bce_sum += g.value(bce).data[0];
      total_sum += lv;
    }
    EpochLog row;
    row.epoch = epoch;
    const double n = static_cast<double>(train_set.size());
    row.seg_loss = seg_sum / n;
    row.mse_loss = mse_sum / n;
    row.bce_loss = bce_sum / n;
    row.total_loss = total_sum / n;
    row.wall_seconds = seconds_since(tick);
    result.log.push_back(row);
  }
  return result;
}

SubjectPrediction predict_subject(DrUnet& segmentation, Stmt& multitask,
                                  const NormalizationStats& stats, const CineSequence& images) {
  const CineSequence pre = preprocess(images);
  SubjectPrediction out{forward_segmentation(segmentation, pre), {}};
  const MultiTaskOutput mt =
      forward_multitask(multitask, foreground_planes(out.segmentation.hard_labels));
  const std::size_t t_count = images.frame_count();
  out.indices.resize(t_count);
  for (std::size_t t = 0; t < t_count; ++t) {
    std::array<double, IndexVector::kCount> z{};
    for (std::size_t k = 0; k < IndexVector::kCount; ++k) {
      z[k] = mt.indices.data[t * IndexVector::kCount + k];
    }
    out.indices[t].set_values(denormalize_targets(z, stats));
    out.indices[t].phase = mt.phase_probs.data[t] > 0.5f ? 1 : 0;
  }
  return out;
}

MetricsReport evaluate(const Dataset& test_set, DrUnet& segmentation, Stmt& multitask,
                       const NormalizationStats& stats) {
  validate_dataset(test_set, "test");
  std::array<std::vector<double>, IndexVector::kCount> pred_series;
  std::array<std::vector<double>, IndexVector::kCount> truth_series;
  std::vector<int> phase_pred, phase_truth;
  double dice_sum[2] = {0.0, 0.0};
  double hd_sum[2] = {0.0, 0.0};
  std::size_t hd_count[2] = {0, 0};
  std::size_t frame_total = 0;

  for (const Subject& subject : test_set) {
    const SubjectPrediction prediction =
        predict_subject(segmentation, multitask, stats, subject.images);
    const SegmentationOutput& seg = prediction.segmentation;
    const std::size_t t_count = subject.images.frame_count();
    for (std::size_t t = 0; t < t_count; ++t) {
      const Grid2D predicted = seg.hard_labels.frame(t);
      const Grid2D truth = subject.masks.frame(t);
      for (int c = 0; c < 2; ++c) {
        const std::uint8_t label = (c == 0) ? kCavity : kMyocardium;
        dice_sum[c] += dice_score(predicted, truth, label);
        try {
          hd_sum[c] += hausdorff(predicted, truth, label, subject.masks.pixel_spacing);
          ++hd_count[c];
        } catch (const Error& e) {
          // A one-sided empty mask has no Hausdorff distance; the frame still
          // counts toward Dice (as zero overlap) but is skipped here.
          if (e.code() != ErrorCode::kDegenerate) throw;
        }
      }
    }
    frame_total += t_count;

    for (std::size_t t = 0; t < t_count; ++t) {
      const auto values = prediction.indices[t].values();
      const auto truth_values = subject.indices[t].values();
      for (std::size_t k = 0; k < IndexVector::kCount; ++k) {
        pred_series[k].push_back(values[k]);
        truth_series[k].push_back(truth_values[k]);
      }
      phase_pred.push_back(prediction.indices[t].phase);
      phase_truth.push_back(subject.indices[t].phase);
    }
  }

  MetricsReport report;
  report.frames = frame_total;
  for (std::size_t k = 0; k < IndexVector::kCount; ++k) {
    report.index_mae[k] = mae(pred_series[k], truth_series[k]);
    report.index_pcc[k] = pcc(pred_series[k], truth_series[k]);
    report.agreement[k] = bland_altman(pred_series[k], truth_series[k]);
  }
  report.phase_error_rate = error_rate(phase_pred, phase_truth);
  report.dice_cavity = dice_sum[0] / static_cast<double>(frame_total);
  report.dice_myocardium = dice_sum[1] / static_cast<double>(frame_total);
  if (hd_count[0] == 0 || hd_count[1] == 0) {
    fail(ErrorCode::kDegenerate, "no frame admits a Hausdorff distance for every class");
  }
  report.hausdorff_cavity_mm = hd_sum[0] / static_cast<double>(hd_count[0]);
  report.hausdorff_myocardium_mm = hd_sum[1] / static_cast<double>(hd_count[1]);
  return report;
}

}  // namespace cq
