// Acceptance harness: exercises the nine shipping criteria end to end and
// prints exactly one PASS/FAIL line per criterion. Exit code 0 iff all pass.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cq/dataset.hpp"
#include "cq/error.hpp"
#include "cq/geometry.hpp"
#include "cq/gradcheck.hpp"
#include "cq/imaging.hpp"
#include "cq/losses.hpp"
#include "cq/metrics.hpp"
#include "cq/networks.hpp"
#include "cq/rng.hpp"
#include "cq/train.hpp"

#ifdef CQ_CLI_PATH
#include <cstdlib>
#include <sys/wait.h>
#endif

namespace fs = std::filesystem;

namespace {

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

// ---------------------------------------------------------------------------
// 1. gradient fidelity

Outcome criterion_gradients() {
  const double t0 = now_seconds();
  const std::vector<cq::GradCheckResult> rows = cq::run_gradcheck_suite(0);
  double worst = 0.0;
  std::string worst_name = "none";
  bool all_pass = !rows.empty();
  for (const cq::GradCheckResult& row : rows) {
    if (!row.pass) all_pass = false;
    if (row.max_rel_err > worst) {
      worst = row.max_rel_err;
      worst_name = row.name;
    }
  }
  const double elapsed = now_seconds() - t0;
  std::ostringstream detail;
  detail << rows.size() << " ops, worst " << worst_name << " at " << worst << ", "
         << elapsed << " s";
  return {all_pass && elapsed < 300.0, detail.str()};
}

// ---------------------------------------------------------------------------
// 2. geometry oracle vs analytic phantom

Outcome criterion_geometry_oracle() {
  const double t0 = now_seconds();
  cq::Rng rng(1234);
  std::size_t frames_checked = 0;
  for (int trial = 0; trial < 20; ++trial) {
    cq::PhantomParams p;
    p.frames = 10;
    p.height = 72;
    p.width = 72;
    // A fractional center keeps the lattice from aligning with the contour,
    // which keeps pixel-count area errors well below the 3% budget.
    p.center_y = 36.37;
    p.center_x = 35.81;
    p.endo_radius_es = rng.uniform(12.0, 16.0);
    p.endo_radius_ed = p.endo_radius_es + rng.uniform(3.0, 6.0);
    p.wall_base = rng.uniform(3.5, 6.0);
    p.wall_sector_offset = {};  // uniform annulus
    p.noise_std = 0.0;
    p.pixel_spacing = rng.uniform(0.8, 1.6);
    p.seed = rng.next_u64();
    p.subject_id = "oracle";
    const cq::PhantomResult r = cq::generate_phantom(p);
    const double s = p.pixel_spacing;
    for (std::size_t t = 0; t < p.frames; ++t) {
      const cq::IndexVector& measured = r.indices[t];
      const cq::IndexVector& analytic = r.analytic_indices[t];
      if (std::abs(measured.cavity_area - analytic.cavity_area) >
          0.03 * analytic.cavity_area) {
        return {false, "cavity area off by more than 3% at trial " + std::to_string(trial)};
      }
      for (int j = 0; j < 3; ++j) {
        if (std::abs(measured.dimensions[j] - analytic.dimensions[j]) > 1.5 * s) {
          return {false, "dimension off by more than 1.5 px at trial " + std::to_string(trial)};
        }
      }
      for (int k = 0; k < 6; ++k) {
        if (std::abs(measured.rwt[k] - p.wall_base * s) > 1.0 * s) {
          return {false, "RWT off by more than 1 px at trial " + std::to_string(trial)};
        }
      }
      if (measured.phase != analytic.phase) {
        return {false, "phase label mismatch at trial " + std::to_string(trial)};
      }
      ++frames_checked;
    }
  }
  const double elapsed = now_seconds() - t0;
  std::ostringstream detail;
  detail << "20 phantoms, " << frames_checked << " frames within tolerance, " << elapsed << " s";
  return {elapsed < 60.0, detail.str()};
}

// ---------------------------------------------------------------------------
// 3. loss identities

Outcome criterion_loss_identities() {
  const cq::LossWeightsD weights;

  // Perfect one-hot prediction, all three classes present.
  cq::TensorD onehot({2, 3, 4, 4});
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t y = 0; y < 4; ++y) {
      for (std::size_t x = 0; x < 4; ++x) {
        const std::size_t label = (n + y + x) % 3;
        onehot.data[((n * 3 + label) * 4 + y) * 4 + x] = 1.0;
      }
    }
  }
  double verbatim = 0.0, canonical = 0.0;
  {
    cq::Graph<double> g;
    const auto probs = g.input(onehot);
    const auto target = g.input(onehot);
    verbatim =
        g.value(cq::soft_dice_loss(g, probs, target, weights, cq::DiceVariant::kVerbatim))
            .data[0];
    canonical =
        g.value(cq::soft_dice_loss(g, probs, target, weights, cq::DiceVariant::kCanonical))
            .data[0];
  }
  if (std::abs(verbatim - 5.0 / 6.0) > 1e-4) {
    return {false, "verbatim perfect-prediction value " + std::to_string(verbatim)};
  }
  if (std::abs(canonical) > 1e-5) {
    return {false, "canonical perfect-prediction value " + std::to_string(canonical)};
  }

  double bce_half = 0.0;
  {
    cq::Graph<double> g;
    cq::TensorD probs({6, 1}, 0.5);
    cq::TensorD labels({6, 1});
    for (std::size_t i = 0; i < 6; ++i) labels.data[i] = i % 2 ? 1.0 : 0.0;
    bce_half = g.value(cq::bce_loss(g, g.input(probs), g.input(labels))).data[0];
  }
  if (std::abs(bce_half - std::log(2.0)) > 1e-9) {
    return {false, "BCE(0.5) = " + std::to_string(bce_half)};
  }

  // Multi-task composition: lambda1 * MSE + lambda2 * BCE, bit for bit.
  cq::Rng rng(77);
  cq::TensorD pred({5, 11}), target({5, 11}), phase_probs({5, 1}), phase_labels({5, 1});
  for (auto& v : pred.data) v = rng.uniform(-1.0, 1.0);
  for (auto& v : target.data) v = rng.uniform(-1.0, 1.0);
  for (auto& v : phase_probs.data) v = rng.uniform(0.05, 0.95);
  for (std::size_t i = 0; i < 5; ++i) phase_labels.data[i] = i % 2 ? 1.0 : 0.0;
  {
    cq::Graph<double> g;
    const auto mse = cq::mse_loss(g, g.input(pred), g.input(target));
    const auto bce = cq::bce_loss(g, g.input(phase_probs), g.input(phase_labels));
    const auto combined = cq::multitask_loss(g, g.input(pred), g.input(target),
                                             g.input(phase_probs), g.input(phase_labels),
                                             weights);
    const double manual =
        weights.multistage_mse * g.value(mse).data[0] + weights.multistage_bce * g.value(bce).data[0];
    if (g.value(combined).data[0] != manual) {
      return {false, "multi-task composition is not exactly lambda1*MSE + lambda2*BCE"};
    }
  }

  // Joint composition: (10*Dice + 1*MSE) + 1*BCE, bit for bit.
  {
    cq::Graph<double> g;
    cq::TensorD probs({2, 3, 4, 4});
    for (auto& v : probs.data) v = rng.uniform(0.05, 0.95);
    const auto dice = cq::soft_dice_loss(g, g.input(probs), g.input(onehot), weights,
                                         cq::DiceVariant::kVerbatim);
    const auto mse = cq::mse_loss(g, g.input(pred), g.input(target));
    const auto bce = cq::bce_loss(g, g.input(phase_probs), g.input(phase_labels));
    const auto joint = cq::end_to_end_loss(g, dice, mse, bce, weights);
    const double manual = (weights.end_to_end_dice * g.value(dice).data[0] +
                           weights.end_to_end_mse * g.value(mse).data[0]) +
                          weights.end_to_end_bce * g.value(bce).data[0];
    if (g.value(joint).data[0] != manual) {
      return {false, "joint composition is not exactly 10*Dice + 1*MSE + 1*BCE"};
    }
  }

  std::ostringstream detail;
  detail << "verbatim " << verbatim << ", canonical " << canonical << ", BCE(0.5) = ln 2, "
         << "compositions exact";
  return {true, detail.str()};
}

// ---------------------------------------------------------------------------
// 4/5. overfit convergence and end-to-end parity (shared dataset)

cq::Dataset overfit_dataset() {
  cq::Rng root(21);
  cq::Dataset subjects;
  for (std::size_t s = 0; s < 4; ++s) {
    cq::Rng sub = root.fork(s);
    const std::uint64_t seed = sub.next_u64();
    cq::PhantomParams p;
    p.frames = 10;
    p.height = 48;
    p.width = 48;
    p.center_y = 24.0;
    p.center_x = 24.0;
    p.endo_radius_ed = 10.0 * (1.0 + 0.15 * sub.uniform(-1.0, 1.0));
    p.endo_radius_es = 6.5 * (1.0 + 0.15 * sub.uniform(-1.0, 1.0));
    p.wall_base = 3.5 * (1.0 + 0.15 * sub.uniform(-1.0, 1.0));
    for (std::size_t k = 0; k < p.wall_sector_offset.size(); ++k) {
      p.wall_sector_offset[k] = 3.5 * 0.1 * sub.uniform(-1.0, 1.0);
    }
    p.noise_std = 0.05;
    p.seed = seed;
    p.subject_id = "s00" + std::to_string(s);
    cq::PhantomResult r = cq::generate_phantom(p);
    subjects.push_back(
        cq::Subject{std::move(r.images), std::move(r.masks), std::move(r.indices)});
  }
  return subjects;
}

cq::TrainConfig overfit_config() {
  cq::TrainConfig config;
  config.segmentation.base_filters = 16;
  config.segmentation.depth = 3;
  config.segmentation_lr = 3e-3;
  config.stage1_epochs = 60;
  config.stage2_epochs = 100;
  config.end_to_end_epochs = 120;
  config.frames_per_batch = 5;
  config.seed = 5;
  return config;
}

struct OverfitState {
  cq::Dataset data;
  double multistage_cavity_dice = 0.0;
};

Outcome criterion_overfit(OverfitState& state) {
  const double t0 = now_seconds();
  state.data = overfit_dataset();
  const cq::TrainConfig config = overfit_config();
  cq::MultiStageResult trained = cq::train_multistage(state.data, config);
  const cq::MetricsReport report =
      cq::evaluate(state.data, trained.segmentation, trained.multitask, trained.stats);
  state.multistage_cavity_dice = report.dice_cavity;
  const double elapsed = now_seconds() - t0;

  std::array<double, cq::IndexVector::kCount> lo{}, hi{};
  lo.fill(1e300);
  hi.fill(-1e300);
  for (const cq::Subject& subject : state.data) {
    for (const cq::IndexVector& iv : subject.indices) {
      const auto values = iv.values();
      for (std::size_t k = 0; k < values.size(); ++k) {
        lo[k] = std::min(lo[k], values[k]);
        hi[k] = std::max(hi[k], values[k]);
      }
    }
  }
  double worst_fraction = 0.0;
  for (std::size_t k = 0; k < cq::IndexVector::kCount; ++k) {
    const double range = hi[k] - lo[k];
    if (range <= 0.0) return {false, "degenerate dynamic range for an index"};
    worst_fraction = std::max(worst_fraction, report.index_mae[k] / range);
  }

  const bool pass = report.dice_cavity > 0.95 && report.dice_myocardium > 0.85 &&
                    worst_fraction < 0.05 && report.phase_error_rate == 0.0 &&
                    elapsed < 1800.0;
  std::ostringstream detail;
  detail << "cavity dice " << report.dice_cavity << ", myo dice " << report.dice_myocardium
         << ", worst index MAE " << 100.0 * worst_fraction << "% of range, phase ER "
         << report.phase_error_rate << "%, " << elapsed << " s";
  return {pass, detail.str()};
}

Outcome criterion_end_to_end_parity(const OverfitState& state) {
  if (state.data.empty()) return {false, "overfit dataset unavailable"};
  const double t0 = now_seconds();
  const cq::TrainConfig config = overfit_config();
  cq::EndToEndResult trained = cq::train_end_to_end(state.data, config);
  const cq::MetricsReport report =
      cq::evaluate(state.data, trained.segmentation, trained.multitask, trained.stats);
  const double elapsed = now_seconds() - t0;
  const bool pass = report.dice_cavity + 0.03 >= state.multistage_cavity_dice;
  std::ostringstream detail;
  detail << "end-to-end cavity dice " << report.dice_cavity << " vs multi-stage "
         << state.multistage_cavity_dice << ", " << elapsed << " s";
  return {pass, detail.str()};
}

// ---------------------------------------------------------------------------
// 6. metric oracle equivalence

double brute_dice(const cq::Grid2D& a, const cq::Grid2D& b) {
  std::size_t na = 0, nb = 0, inter = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    if (a.data[i] == 1) ++na;
    if (b.data[i] == 1) ++nb;
    if (a.data[i] == 1 && b.data[i] == 1) ++inter;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

double brute_hausdorff(const cq::Grid2D& a, const cq::Grid2D& b, double spacing) {
  std::vector<std::pair<double, double>> pa, pb;
  for (std::size_t y = 0; y < a.height; ++y) {
    for (std::size_t x = 0; x < a.width; ++x) {
      if (a.at(y, x) == 1) pa.emplace_back(static_cast<double>(y), static_cast<double>(x));
      if (b.at(y, x) == 1) pb.emplace_back(static_cast<double>(y), static_cast<double>(x));
    }
  }
  auto directed = [&](const auto& from, const auto& to) {
    double worst = 0.0;
    for (const auto& p : from) {
      double best = 1e300;
      for (const auto& q : to) {
        const double dy = p.first - q.first;
        const double dx = p.second - q.second;
        best = std::min(best, std::sqrt(dy * dy + dx * dx));
      }
      worst = std::max(worst, best);
    }
    return worst;
  };
  return spacing * std::max(directed(pa, pb), directed(pb, pa));
}

cq::Grid2D random_mask(cq::Rng& rng) {
  cq::Grid2D g(8, 8);
  bool any = false;
  while (!any) {
    for (auto& v : g.data) {
      v = rng.uniform() < 0.35 ? 1 : 0;
      any = any || v == 1;
    }
  }
  return g;
}

Outcome criterion_metric_oracle() {
  cq::Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const cq::Grid2D a = random_mask(rng);
    const cq::Grid2D b = random_mask(rng);
    const double spacing = rng.uniform(0.5, 2.0);
    if (cq::dice_score(a, b, 1) != brute_dice(a, b)) {
      return {false, "dice mismatch at trial " + std::to_string(trial)};
    }
    if (std::abs(cq::hausdorff(a, b, 1, spacing) - brute_hausdorff(a, b, spacing)) > 1e-9) {
      return {false, "hausdorff mismatch at trial " + std::to_string(trial)};
    }
  }

  std::vector<double> x(40), y(40);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = rng.uniform(-5.0, 5.0);
    y[i] = 0.4 * x[i] + rng.uniform(-2.0, 2.0);
  }
  std::vector<double> ax(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) ax[i] = 1.7 * x[i] - 3.5;
  if (std::abs(cq::pcc(ax, y) - cq::pcc(x, y)) > 1e-9) {
    return {false, "PCC is not affine invariant"};
  }
  for (std::size_t i = 0; i < x.size(); ++i) ax[i] = -0.6 * x[i] + 2.0;
  if (std::abs(cq::pcc(ax, y) + cq::pcc(x, y)) > 1e-9) {
    return {false, "PCC does not flip sign under negative scaling"};
  }

  const std::vector<double> truth{1.0, 2.0, 3.0, 4.0};
  const std::vector<double> same{1.0, 2.0, 3.0, 4.0};
  const cq::BlandAltman zero = cq::bland_altman(same, truth);
  if (std::abs(zero.bias) > 1e-9 || std::abs(zero.loa_low) > 1e-9 ||
      std::abs(zero.loa_high) > 1e-9) {
    return {false, "Bland-Altman zero-bias case failed"};
  }
  const std::vector<double> shifted{4.0, 5.0, 6.0, 7.0};
  const cq::BlandAltman three = cq::bland_altman(shifted, truth);
  if (std::abs(three.bias - 3.0) > 1e-9 || std::abs(three.loa_low - 3.0) > 1e-9 ||
      std::abs(three.loa_high - 3.0) > 1e-9) {
    return {false, "Bland-Altman bias-3 case failed"};
  }
  const std::vector<double> unit{2.0, 1.0, 4.0, 3.0};
  const std::vector<double> base{1.0, 2.0, 3.0, 4.0};  // diffs +1,-1,+1,-1
  const cq::BlandAltman loa = cq::bland_altman(unit, base);
  if (std::abs(loa.bias) > 1e-9 || std::abs(loa.loa_low + 1.96) > 1e-9 ||
      std::abs(loa.loa_high - 1.96) > 1e-9) {
    return {false, "Bland-Altman LoA +-1.96 case failed"};
  }

  return {true, "200 dice/HD pairs vs brute force, PCC affine, BA hand cases"};
}

// ---------------------------------------------------------------------------
// 7. k-fold protocol

Outcome criterion_kfold() {
  std::vector<std::string> ids;
  for (int i = 0; i < 145; ++i) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "p%03d", i);
    ids.push_back(buf);
  }
  for (const std::uint64_t seed : {0ULL, 7ULL, 123ULL}) {
    const cq::FoldSplit split = cq::kfold_split(ids, 5, seed);
    if (split.folds.size() != 5) return {false, "expected 5 folds"};
    std::multiset<std::string> tested;
    for (const auto& fold : split.folds) {
      if (fold.size() != 29) {
        return {false, "fold with " + std::to_string(fold.size()) + " subjects"};
      }
      tested.insert(fold.begin(), fold.end());
    }
    if (tested.size() != ids.size()) return {false, "folds do not partition the subjects"};
    for (const std::string& id : ids) {
      if (tested.count(id) != 1) return {false, id + " not tested exactly once"};
    }
  }
  return {true, "145 subjects, 5 folds of 29, partition verified for 3 seeds"};
}

// ---------------------------------------------------------------------------
// 8. command reproducibility (spawns the installed CLI twice per command)

#ifdef CQ_CLI_PATH

int run_command(const std::string& args) {
  const std::string cmd = std::string("\"") + CQ_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    std::ifstream in(entry.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    files[fs::relative(entry.path(), root).string()] = ss.str();
  }
  return files;
}

Outcome criterion_reproducibility() {
  const double t0 = now_seconds();
  const fs::path root = fs::temp_directory_path() / "cq_acceptance_repro";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string dataset = (root / "phantom_a").string();
  const std::string phantom_args =
      "--subjects 4 --seed 9 --frames 8 --height 32 --width 32 --endo-radius-ed 7 "
      "--endo-radius-es 4.5 --wall-thickness 3 --noise-std 0.03";
  const std::string train_args = "--seed 3 --base-filters 8 --depth 2 --seg-lr 0.003 "
                                 "--stage1-epochs 6 --stage2-epochs 2 --frames-per-batch 4";

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"phantom", "phantom --out {OUT} " + phantom_args},
      {"train", "train --dataset " + dataset + " --out {OUT} " + train_args},
      {"eval", "eval --dataset " + dataset + " --checkpoint " +
                   (root / "train_a" / "checkpoint.cqt").string() + " --out {OUT}"},
      {"quantify", "quantify --dataset " + dataset + " --out {OUT}"},
      {"gradcheck", "gradcheck --seed 2 --out {OUT}"},
      {"report", "report --results " + (root / "eval_a").string() + " --out {OUT}"},
  };
  for (const auto& [name, tpl] : commands) {
    for (const std::string run : {"a", "b"}) {
      std::string args = tpl;
      args.replace(args.find("{OUT}"), 5, (root / (name + "_" + run)).string());
      if (run_command(args) != 0) return {false, name + " run " + run + " failed"};
    }
    if (tree_bytes(root / (name + "_a")) != tree_bytes(root / (name + "_b"))) {
      return {false, name + " produced differing bytes across reruns"};
    }
  }
  std::ostringstream detail;
  detail << commands.size() << " commands x 2 runs bit-identical, " << now_seconds() - t0
         << " s";
  return {true, detail.str()};
}

#else

Outcome criterion_reproducibility() {
  return {false, "cq binary unavailable (configure with CARDIOQUANT_BUILD_TOOLS=ON)"};
}

#endif  // CQ_CLI_PATH

// ---------------------------------------------------------------------------
// 9. shape contracts

Outcome criterion_shapes() {
  const double t0 = now_seconds();
  cq::Rng rng(42);

  cq::DrUnetConfig gcfg;  // base 16, depth 4, 2D
  cq::DrUnet g(gcfg, rng);
  cq::CineSequence seq;
  seq.subject_id = "shapes";
  seq.frames = cq::Tensor({20, 80, 80});
  for (auto& v : seq.frames.data) v = static_cast<float>(rng.uniform());
  const cq::SegmentationOutput seg = cq::forward_segmentation(g, seq);
  if (seg.probabilities.shape != cq::Shape{20, 80, 80, 3}) {
    return {false, "segmentation output is not 20x80x80x3"};
  }
  if (seg.hard_labels.frames != 20 || seg.hard_labels.height != 80 ||
      seg.hard_labels.width != 80) {
    return {false, "hard label geometry mismatch"};
  }

  cq::StmtConfig dcfg;  // {32, 64, 128}, in_channels 2
  cq::Stmt d(dcfg, rng);
  cq::Tensor x({1, 2, 20, 80, 80});
  for (auto& v : x.data) v = static_cast<float>(rng.uniform());
  cq::Graph<float> graph;
  const auto [indices, phase] = d.forward(graph, graph.input(x), cq::BatchNormMode::kInfer);
  if (graph.value(indices).shape != cq::Shape{20, 11}) {
    return {false, "multi-task index head is not 20x11"};
  }
  if (graph.value(phase).shape != cq::Shape{20, 1}) {
    return {false, "multi-task phase head is not 20x1"};
  }
  std::ostringstream detail;
  detail << "20x80x80x1 -> 20x80x80x3 and 20x80x80x2 -> (20x11, 20x1), "
         << now_seconds() - t0 << " s";
  return {true, detail.str()};
}

}  // namespace

int main() {
  struct Row {
    const char* name;
    Outcome outcome;
  };
  OverfitState overfit_state;

  std::vector<Row> rows;
  const auto run = [&rows](const char* name, auto&& fn) {
    Outcome outcome;
    try {
      outcome = fn();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    rows.push_back({name, outcome});
    std::printf("[%zu/9] %-28s %s  (%s)\n", rows.size(), name,
                outcome.pass ? "PASS" : "FAIL", outcome.detail.c_str());
    std::fflush(stdout);
  };

  run("gradient fidelity", criterion_gradients);
  run("geometry oracle", criterion_geometry_oracle);
  run("loss identities", criterion_loss_identities);
  run("overfit convergence", [&] { return criterion_overfit(overfit_state); });
  run("end-to-end parity", [&] { return criterion_end_to_end_parity(overfit_state); });
  run("metric oracle", criterion_metric_oracle);
  run("k-fold protocol", criterion_kfold);
  run("reproducibility", criterion_reproducibility);
  run("shape contracts", criterion_shapes);

  std::size_t passed = 0;
  for (const Row& row : rows) passed += row.outcome.pass ? 1 : 0;
  std::printf("ACCEPTANCE: %zu/%zu criteria passed\n", passed, rows.size());
  return passed == rows.size() ? 0 : 1;
}
