#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cq/geometry.hpp"
#include "cq/imaging.hpp"
#include "cq/losses.hpp"
#include "cq/metrics.hpp"
#include "cq/networks.hpp"
#include "cq/optimizer.hpp"

namespace cq {

// One annotated cine acquisition: the raw frames, per-frame label maps and
// the per-frame index vectors derived from (or supplied with) the labels.
struct Subject {
  CineSequence images;
  MaskSequence masks;
  std::vector<IndexVector> indices;
};

using Dataset = std::vector<Subject>;

struct TrainConfig {
  DrUnetConfig segmentation;
  StmtConfig multitask;
  LossWeights loss_weights;
  DiceVariant dice_variant = DiceVariant::kVerbatim;
  double segmentation_lr = 1e-4;
  double multitask_lr = 0.004;
  std::size_t stage1_epochs = 300;
  std::size_t stage2_epochs = 300;
  std::size_t end_to_end_epochs = 300;
  // Segmentation batches draw this many consecutive frames of one subject.
  std::size_t frames_per_batch = 4;
  std::uint64_t seed = 0;
};

// One row of a training log. Stages that do not compute a component leave
// it at zero (e.g. stage 1 has no MSE/BCE, stage 2 no segmentation term).
struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double seg_loss = 0.0;
  double mse_loss = 0.0;
  double bce_loss = 0.0;
  double total_loss = 0.0;
  double wall_seconds = 0.0;
};

struct MultiStageResult {
  DrUnet segmentation;
  Stmt multitask;
  NormalizationStats stats;
  std::vector<EpochLog> stage1_log;
  std::vector<EpochLog> stage2_log;
};

struct EndToEndResult {
  DrUnet segmentation;
  Stmt multitask;
  NormalizationStats stats;
  std::vector<EpochLog> log;
};

// CLAHE on every frame followed by a whole-sequence z-score.
CineSequence preprocess(const CineSequence& seq);

// One-hot segmentation target [count, classes, h, w] for frames
// [start, start + count) of a label sequence.
Tensor onehot_targets(const MaskSequence& masks, std::size_t start, std::size_t count,
                      std::size_t classes = 3);

// Binary {0,1} cavity/myocardium planes [frames, h, w, 2] from hard labels;
// this is the multi-task network's input layout.
Tensor foreground_planes(const MaskSequence& masks);

// Normalized regression targets [frames, 11] and phase labels [frames, 1].
Tensor normalized_target_tensor(const std::vector<IndexVector>& indices,
                                const NormalizationStats& stats);
Tensor phase_label_tensor(const std::vector<IndexVector>& indices);

// Stage 1 trains the segmentation network on weighted soft Dice; stage 2
// freezes it, converts its predictions to hard masks once, and trains the
// multi-task network on lambda1*MSE + lambda2*BCE.
MultiStageResult train_multistage(const Dataset& train_set, const TrainConfig& config);

// Joint training: every batch is one subject's full sequence pushed through
// both networks, optimized on lambda1*Dice + lambda2*MSE + lambda3*BCE with
// the soft foreground probabilities feeding the multi-task network.
EndToEndResult train_end_to_end(const Dataset& train_set, const TrainConfig& config);

// Aggregate test-set report. Index metrics pool every frame of every subject
// into one series per index; segmentation metrics average over frames.
struct MetricsReport {
  std::array<double, IndexVector::kCount> index_mae{};
  std::array<double, IndexVector::kCount> index_pcc{};
  std::array<BlandAltman, IndexVector::kCount> agreement{};
  double phase_error_rate = 0.0;
  double dice_cavity = 0.0;
  double dice_myocardium = 0.0;
  double hausdorff_cavity_mm = 0.0;
  double hausdorff_myocardium_mm = 0.0;
  std::size_t frames = 0;
};

MetricsReport evaluate(const Dataset& test_set, DrUnet& segmentation, Stmt& multitask,
                       const NormalizationStats& stats);

// Full inference for one raw sequence: preprocessing, segmentation, hard
// masks into the multi-task network, denormalized indices, phase thresholded
// at 0.5 (1 = ED).
struct SubjectPrediction {
  SegmentationOutput segmentation;
  std::vector<IndexVector> indices;
};

SubjectPrediction predict_subject(DrUnet& segmentation, Stmt& multitask,
                                  const NormalizationStats& stats, const CineSequence& images);

}  // namespace cq
