#include "cq/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cq/checkpoint.hpp"
#include "cq/error.hpp"

namespace fs = std::filesystem;

namespace cq {

namespace {

std::ofstream open_for_write(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot open for writing: " + path);
  return out;
}

std::ifstream open_for_read(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open: " + path);
  return in;
}

std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

double parse_double(const std::string& cell, const std::string& path) {
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    fail(ErrorCode::kFormat, "bad numeric cell '" + cell + "' in " + path);
  }
}

std::string indices_header() {
  std::string header = "frame";
  for (std::size_t k = 0; k < IndexVector::kCount; ++k) {
    header += ",";
    header += IndexVector::value_name(k);
  }
  header += ",phase";
  return header;
}

// meta.txt is "key = value" per line.
std::map<std::string, std::string> read_meta(const std::string& path) {
  std::ifstream in = open_for_read(path);
  std::map<std::string, std::string> meta;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    meta[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return meta;
}

const std::string& meta_value(const std::map<std::string, std::string>& meta,
                              const std::string& key, const std::string& path) {
  const auto it = meta.find(key);
  if (it == meta.end()) fail(ErrorCode::kFormat, "meta file " + path + " is missing '" + key + "'");
  return it->second;
}

Tensor require_tensor(const TensorMap& tensors, const std::string& name,
                      const std::string& path) {
  const auto it = tensors.find(name);
  if (it == tensors.end()) {
    fail(ErrorCode::kFormat, "container " + path + " is missing tensor '" + name + "'");
  }
  return it->second;
}

}  // namespace

std::string format_g6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

void write_indices_csv(const std::string& path, const std::vector<IndexVector>& indices) {
  std::ofstream out = open_for_write(path);
  out << indices_header() << "\n";
  for (std::size_t t = 0; t < indices.size(); ++t) {
    out << t;
    for (double v : indices[t].values()) out << "," << format_g6(v);
    out << "," << indices[t].phase << "\n";
  }
  if (!out) fail(ErrorCode::kIo, "failed writing " + path);
}

std::vector<IndexVector> read_indices_csv(const std::string& path) {
  std::ifstream in = open_for_read(path);
  std::string line;
  if (!std::getline(in, line) || split_csv_row(line) != split_csv_row(indices_header())) {
    fail(ErrorCode::kFormat, "unexpected indices.csv header in " + path);
  }
  std::vector<IndexVector> indices;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_csv_row(line);
    if (cells.size() != IndexVector::kCount + 2) {
      fail(ErrorCode::kFormat, "indices.csv row with " + std::to_string(cells.size()) +
                                   " cells in " + path);
    }
    if (parse_double(cells[0], path) != static_cast<double>(indices.size())) {
      fail(ErrorCode::kFormat, "non-sequential frame numbers in " + path);
    }
    IndexVector row;
    std::array<double, IndexVector::kCount> values{};
    for (std::size_t k = 0; k < IndexVector::kCount; ++k) {
      values[k] = parse_double(cells[k + 1], path);
    }
    row.set_values(values);
    const double phase = parse_double(cells.back(), path);
    if (phase != 0.0 && phase != 1.0) {
      fail(ErrorCode::kFormat, "phase must be 0 or 1 in " + path);
    }
    row.phase = static_cast<int>(phase);
    indices.push_back(row);
  }
  return indices;
}

void save_subject(const std::string& dir, const Subject& subject, std::uint64_t seed) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create directory " + dir + ": " + ec.message());

  save_checkpoint(dir + "/images.cqt", {{"images", subject.images.frames}});

  const MaskSequence& m = subject.masks;
  Tensor labels({m.frames, m.height, m.width});
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    labels.data[i] = static_cast<float>(m.labels[i]);
  }
  save_checkpoint(dir + "/masks.cqt", {{"masks", labels}});

  write_indices_csv(dir + "/indices.csv", subject.indices);

  std::ofstream meta = open_for_write(dir + "/meta.txt");
  meta << "subject_id = " << subject.images.subject_id << "\n"
       << "pixel_spacing = " << format_g6(subject.images.pixel_spacing) << "\n"
       << "seed = " << seed << "\n"
       << "frames = " << m.frames << "\n"
       << "height = " << m.height << "\n"
       << "width = " << m.width << "\n";
  if (!meta) fail(ErrorCode::kIo, "failed writing " + dir + "/meta.txt");
}

Subject load_subject(const std::string& dir) {
  const auto meta = read_meta(dir + "/meta.txt");
  Subject subject;
  subject.images.subject_id = meta_value(meta, "subject_id", dir + "/meta.txt");
  subject.images.pixel_spacing =
      parse_double(meta_value(meta, "pixel_spacing", dir + "/meta.txt"), dir + "/meta.txt");

  subject.images.frames =
      require_tensor(load_checkpoint(dir + "/images.cqt"), "images", dir + "/images.cqt");
  if (subject.images.frames.rank() != 3) {
    fail(ErrorCode::kFormat, "images tensor in " + dir + " must be [frames, height, width]");
  }

  const Tensor labels =
      require_tensor(load_checkpoint(dir + "/masks.cqt"), "masks", dir + "/masks.cqt");
  if (labels.shape != subject.images.frames.shape) {
    fail(ErrorCode::kFormat, "mask geometry does not match the images in " + dir);
  }
  MaskSequence& m = subject.masks;
  m.frames = labels.extent(0);
  m.height = labels.extent(1);
  m.width = labels.extent(2);
  m.pixel_spacing = subject.images.pixel_spacing;
  m.labels.resize(labels.numel());
  for (std::size_t i = 0; i < labels.numel(); ++i) {
    const float v = labels.data[i];
    if (v != 0.0f && v != 1.0f && v != 2.0f) {
      fail(ErrorCode::kFormat, "mask label " + std::to_string(v) + " in " + dir);
    }
    m.labels[i] = static_cast<std::uint8_t>(v);
  }

  subject.indices = read_indices_csv(dir + "/indices.csv");
  if (subject.indices.size() != m.frames) {
    fail(ErrorCode::kFormat, "indices.csv row count does not match the frames in " + dir);
  }
  return subject;
}

void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows) {
  std::ofstream out = open_for_write(path);
  out << "subject_id,seed\n";
  for (const ManifestRow& row : rows) out << row.subject_id << "," << row.seed << "\n";
  if (!out) fail(ErrorCode::kIo, "failed writing " + path);
}

std::vector<ManifestRow> read_manifest(const std::string& path) {
  std::ifstream in = open_for_read(path);
  std::string line;
  if (!std::getline(in, line) || split_csv_row(line) != std::vector<std::string>{"subject_id", "seed"}) {
    fail(ErrorCode::kFormat, "unexpected manifest header in " + path);
  }
  std::vector<ManifestRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_row(line);
    if (cells.size() != 2) fail(ErrorCode::kFormat, "malformed manifest row in " + path);
    ManifestRow row;
    row.subject_id = cells[0];
    row.seed = static_cast<std::uint64_t>(std::stoull(cells[1]));
    rows.push_back(row);
  }
  return rows;
}

void save_dataset(const std::string& dir, const Dataset& subjects,
                  const std::vector<std::uint64_t>& seeds) {
  if (subjects.size() != seeds.size()) {
    fail(ErrorCode::kValue, "need one seed per subject");
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create directory " + dir + ": " + ec.message());
  std::vector<ManifestRow> manifest;
  for (std::size_t s = 0; s < subjects.size(); ++s) {
    const std::string& id = subjects[s].images.subject_id;
    if (id.empty() || id.find('/') != std::string::npos || id.find(',') != std::string::npos) {
      fail(ErrorCode::kValue, "subject id '" + id + "' is not directory- and CSV-safe");
    }
    save_subject(dir + "/" + id, subjects[s], seeds[s]);
    manifest.push_back({id, seeds[s]});
  }
  write_manifest(dir + "/manifest.csv", manifest);
}

Dataset load_dataset(const std::string& dir) {
  const std::vector<ManifestRow> manifest = read_manifest(dir + "/manifest.csv");
  if (manifest.empty()) fail(ErrorCode::kFormat, "empty manifest in " + dir);
  Dataset subjects;
  subjects.reserve(manifest.size());
  for (const ManifestRow& row : manifest) {
    Subject subject = load_subject(dir + "/" + row.subject_id);
    if (subject.images.subject_id != row.subject_id) {
      fail(ErrorCode::kFormat, "meta subject_id '" + subject.images.subject_id +
                                   "' disagrees with manifest entry '" + row.subject_id + "'");
    }
    subjects.push_back(std::move(subject));
  }
  return subjects;
}

void save_bundle(const std::string& path, const DrUnet& segmentation, const Stmt& multitask,
                 const NormalizationStats& stats) {
  TensorMap tensors = segmentation.to_tensors("g.");
  for (auto& [name, tensor] : multitask.to_tensors("d.")) {
    tensors.emplace(name, std::move(tensor));
  }
  Tensor mean({IndexVector::kCount}), stddev({IndexVector::kCount});
  for (std::size_t k = 0; k < IndexVector::kCount; ++k) {
    mean.data[k] = static_cast<float>(stats.mean[k]);
    stddev.data[k] = static_cast<float>(stats.stddev[k]);
  }
  tensors.emplace("norm.mean", std::move(mean));
  tensors.emplace("norm.std", std::move(stddev));
  save_checkpoint(path, tensors);
}

ModelBundle load_bundle(const std::string& path) {
  const TensorMap tensors = load_checkpoint(path);
  const Tensor mean = require_tensor(tensors, "norm.mean", path);
  const Tensor stddev = require_tensor(tensors, "norm.std", path);
  if (mean.shape != Shape{IndexVector::kCount} || stddev.shape != Shape{IndexVector::kCount}) {
    fail(ErrorCode::kFormat, "normalization tensors in " + path + " must have extent " +
                                 std::to_string(IndexVector::kCount));
  }
  ModelBundle bundle{DrUnet::from_tensors(tensors, "g."), Stmt::from_tensors(tensors, "d."), {}};
  for (std::size_t k = 0; k < IndexVector::kCount; ++k) {
    bundle.stats.mean[k] = mean.data[k];
    bundle.stats.stddev[k] = stddev.data[k];
  }
  return bundle;
}

void write_metrics_csv(const std::string& path, const MetricsReport& report) {
  std::ofstream out = open_for_write(path);
  out << "metric,value\n";
  for (std::size_t k = 0; k < IndexVector::kCount; ++k) {
    const std::string name = IndexVector::value_name(k);
    out << "mae_" << name << "," << format_g6(report.index_mae[k]) << "\n";
    out << "pcc_" << name << "," << format_g6(report.index_pcc[k]) << "\n";
    out << "bias_" << name << "," << format_g6(report.agreement[k].bias) << "\n";
    out << "loa_low_" << name << "," << format_g6(report.agreement[k].loa_low) << "\n";
    out << "loa_high_" << name << "," << format_g6(report.agreement[k].loa_high) << "\n";
  }
  out << "phase_error_rate," << format_g6(report.phase_error_rate) << "\n";
  out << "dice_cavity," << format_g6(report.dice_cavity) << "\n";
  out << "dice_myocardium," << format_g6(report.dice_myocardium) << "\n";
  out << "hausdorff_cavity_mm," << format_g6(report.hausdorff_cavity_mm) << "\n";
  out << "hausdorff_myocardium_mm," << format_g6(report.hausdorff_myocardium_mm) << "\n";
  out << "frames," << report.frames << "\n";
  if (!out) fail(ErrorCode::kIo, "failed writing " + path);
}

std::map<std::string, double> read_metrics_csv(const std::string& path) {
  std::ifstream in = open_for_read(path);
  std::string line;
  if (!std::getline(in, line) || split_csv_row(line) != std::vector<std::string>{"metric", "value"}) {
    fail(ErrorCode::kFormat, "unexpected metrics header in " + path);
  }
  std::map<std::string, double> metrics;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_row(line);
    if (cells.size() != 2) fail(ErrorCode::kFormat, "malformed metrics row in " + path);
    metrics[cells[0]] = parse_double(cells[1], path);
  }
  return metrics;
}

void write_curves_csv(const std::string& path, const std::vector<std::string>& subject_ids,
                      const std::vector<std::vector<IndexVector>>& truth,
                      const std::vector<std::vector<IndexVector>>& predicted) {
  if (subject_ids.size() != truth.size() || truth.size() != predicted.size()) {
    fail(ErrorCode::kValue, "curves need one id, truth and prediction series per subject");
  }
  std::ofstream out = open_for_write(path);
  out << "subject,frame";
  for (std::size_t k = 0; k < IndexVector::kCount; ++k) {
    const std::string name = IndexVector::value_name(k);
    out << "," << name << "_truth," << name << "_pred";
  }
  out << ",phase_truth,phase_pred\n";
  for (std::size_t s = 0; s < subject_ids.size(); ++s) {
    if (truth[s].size() != predicted[s].size()) {
      fail(ErrorCode::kValue, "curve series length mismatch for subject " + subject_ids[s]);
    }
    for (std::size_t t = 0; t < truth[s].size(); ++t) {
      out << subject_ids[s] << "," << t;
      const auto tv = truth[s][t].values();
      const auto pv = predicted[s][t].values();
      for (std::size_t k = 0; k < IndexVector::kCount; ++k) {
        out << "," << format_g6(tv[k]) << "," << format_g6(pv[k]);
      }
      out << "," << truth[s][t].phase << "," << predicted[s][t].phase << "\n";
    }
  }
  if (!out) fail(ErrorCode::kIo, "failed writing " + path);
}

void write_epoch_log_csv(const std::string& path, const std::vector<EpochLog>& log) {
  std::ofstream out = open_for_write(path);
  out << "epoch,seg_loss,mse_loss,bce_loss,total_loss\n";
  for (const EpochLog& row : log) {
    out << row.epoch << "," << format_g6(row.seg_loss) << "," << format_g6(row.mse_loss) << ","
        << format_g6(row.bce_loss) << "," << format_g6(row.total_loss) << "\n";
  }
  if (!out) fail(ErrorCode::kIo, "failed writing " + path);
}

}  // namespace cq
