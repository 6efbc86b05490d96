#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cq/geometry.hpp"
#include "cq/imaging.hpp"
#include "cq/networks.hpp"
#include "cq/train.hpp"

namespace cq {

// The pinned numeric CSV format: 6 significant digits, period decimal
// separator, C locale.
std::string format_g6(double v);

struct ManifestRow {
  std::string subject_id;
  std::uint64_t seed = 0;
};

// indices.csv: header "frame,A1,...,RWT6,phase", one row per frame, values
// in format_g6, frame and phase as integers.
void write_indices_csv(const std::string& path, const std::vector<IndexVector>& indices);
std::vector<IndexVector> read_indices_csv(const std::string& path);

// Subject directory layout: images.cqt, masks.cqt (tensor containers),
// indices.csv, and meta.txt with id, spacing, geometry and seed.
void save_subject(const std::string& dir, const Subject& subject, std::uint64_t seed);
Subject load_subject(const std::string& dir);

void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows);
std::vector<ManifestRow> read_manifest(const std::string& path);

// Dataset directory: manifest.csv plus one directory per subject, named by
// subject id in manifest order.
void save_dataset(const std::string& dir, const Dataset& subjects,
                  const std::vector<std::uint64_t>& seeds);
Dataset load_dataset(const std::string& dir);

// Single-file model bundle: segmentation tensors under "g.", multi-task
// tensors under "d.", plus "norm.mean"/"norm.std".
struct ModelBundle {
  DrUnet segmentation;
  Stmt multitask;
  NormalizationStats stats;
};

void save_bundle(const std::string& path, const DrUnet& segmentation, const Stmt& multitask,
                 const NormalizationStats& stats);
ModelBundle load_bundle(const std::string& path);

// Flat "metric,value" CSV of an evaluation report.
void write_metrics_csv(const std::string& path, const MetricsReport& report);
std::map<std::string, double> read_metrics_csv(const std::string& path);

// Per-frame truth/prediction curves: one row per (subject, frame) with
// paired columns per index plus the phase labels.
void write_curves_csv(const std::string& path, const std::vector<std::string>& subject_ids,
                      const std::vector<std::vector<IndexVector>>& truth,
                      const std::vector<std::vector<IndexVector>>& predicted);

// Training log: epoch,seg_loss,mse_loss,bce_loss,total_loss. Wall time is
// deliberately not written so identical config + seed give identical bytes.
void write_epoch_log_csv(const std::string& path, const std::vector<EpochLog>& log);

}  // namespace cq
