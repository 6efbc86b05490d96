#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cq/dataset.hpp"
#include "cq/error.hpp"
#include "cq/geometry.hpp"
#include "cq/gradcheck.hpp"
#include "cq/imaging.hpp"
#include "cq/metrics.hpp"
#include "cq/networks.hpp"
#include "cq/rng.hpp"
#include "cq/train.hpp"

namespace fs = std::filesystem;

namespace {

// Creates the output directory, refusing to reuse a non-empty one unless the
// caller passed --force. Files are then overwritten in place.
void prepare_out_dir(const std::string& out, bool force) {
  if (out.empty()) cq::fail(cq::ErrorCode::kConfig, "--out must not be empty");
  std::error_code ec;
  if (fs::exists(out, ec)) {
    if (!fs::is_directory(out, ec)) {
      cq::fail(cq::ErrorCode::kIo, "output path " + out + " exists and is not a directory");
    }
    if (!fs::is_empty(out, ec) && !force) {
      cq::fail(cq::ErrorCode::kIo,
               "output directory " + out + " is not empty (pass --force to overwrite)");
    }
    return;
  }
  fs::create_directories(out, ec);
  if (ec) cq::fail(cq::ErrorCode::kIo, "cannot create directory " + out + ": " + ec.message());
}

// Resolved-config snapshot: one [command] section with every resolved value of
// the invoked subcommand. Rerunning `cq <command> --config <snapshot>` with a
// fresh --out reproduces the run byte for byte.
void write_snapshot(const CLI::App& app, const std::string& out_dir) {
  const std::vector<CLI::App*> parsed = app.get_subcommands();
  if (parsed.size() != 1) cq::fail(cq::ErrorCode::kConfig, "expected exactly one command");
  std::ofstream f(out_dir + "/config.ini", std::ios::trunc);
  if (!f) cq::fail(cq::ErrorCode::kIo, "cannot write " + out_dir + "/config.ini");
  f << "[" << parsed.front()->get_name() << "]\n" << parsed.front()->config_to_str(true, false);
  if (!f) cq::fail(cq::ErrorCode::kIo, "failed writing " + out_dir + "/config.ini");
}

// ---------------------------------------------------------------------------
// phantom

struct PhantomOptions {
  std::string out;
  bool force = false;
  std::uint64_t seed = 0;
  std::size_t subjects = 4;
  std::size_t frames = 20;
  std::size_t height = 80;
  std::size_t width = 80;
  double endo_radius_ed = 14.0;
  double endo_radius_es = 8.0;
  double wall_thickness = 5.0;
  double jitter = 0.15;
  double sector_jitter = 0.1;
  double noise_std = 0.05;
  double spacing = 1.0;
};

int run_phantom(const CLI::App& app, const PhantomOptions& o) {
  if (o.endo_radius_es >= o.endo_radius_ed) {
    cq::fail(cq::ErrorCode::kConfig,
             "--endo-radius-es must be smaller than --endo-radius-ed, got endo-radius-es=" +
                 cq::format_g6(o.endo_radius_es) +
                 ", endo-radius-ed=" + cq::format_g6(o.endo_radius_ed));
  }
  prepare_out_dir(o.out, o.force);

  cq::Rng root(o.seed);
  cq::Dataset subjects;
  std::vector<std::uint64_t> seeds;
  for (std::size_t s = 0; s < o.subjects; ++s) {
    cq::Rng sub = root.fork(s);
    const std::uint64_t subject_seed = sub.next_u64();
    cq::PhantomParams params;
    params.frames = o.frames;
    params.height = o.height;
    params.width = o.width;
    params.center_y = 0.5 * static_cast<double>(o.height);
    params.center_x = 0.5 * static_cast<double>(o.width);
    params.endo_radius_ed = o.endo_radius_ed * (1.0 + o.jitter * sub.uniform(-1.0, 1.0));
    params.endo_radius_es = o.endo_radius_es * (1.0 + o.jitter * sub.uniform(-1.0, 1.0));
    params.wall_base = o.wall_thickness * (1.0 + o.jitter * sub.uniform(-1.0, 1.0));
    for (std::size_t k = 0; k < params.wall_sector_offset.size(); ++k) {
      params.wall_sector_offset[k] = o.wall_thickness * o.sector_jitter * sub.uniform(-1.0, 1.0);
    }
    params.noise_std = o.noise_std;
    params.pixel_spacing = o.spacing;
    params.seed = subject_seed;
    char id[16];
    std::snprintf(id, sizeof(id), "s%03zu", s);
    params.subject_id = id;

    cq::PhantomResult r = cq::generate_phantom(params);
    subjects.push_back(cq::Subject{std::move(r.images), std::move(r.masks), std::move(r.indices)});
    seeds.push_back(subject_seed);
  }
  cq::save_dataset(o.out, subjects, seeds);
  write_snapshot(app, o.out);
  std::cout << "wrote " << o.subjects << " phantom subjects (" << o.frames << "x" << o.height
            << "x" << o.width << ") to " << o.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// shared training options (train and the per-fold trainings inside eval)

struct TrainOptions {
  std::string dataset;
  std::string out;
  bool force = false;
  std::uint64_t seed = 0;
  std::string strategy = "multistage";
  std::string mode = "2d";
  std::string dice = "verbatim";
  std::size_t base_filters = 16;
  std::size_t depth = 4;
  double seg_lr = 1e-4;
  double mt_lr = 0.004;
  std::size_t stage1_epochs = 300;
  std::size_t stage2_epochs = 300;
  std::size_t e2e_epochs = 300;
  std::size_t frames_per_batch = 4;
  double weight_decay = 1e-4;
  double dice_w_background = 0.2;
  double dice_w_cavity = 0.3;
  double dice_w_myocardium = 0.5;
  double lambda_mse = 1.0;
  double lambda_bce = 4.0;
  double e2e_dice = 10.0;
  double e2e_mse = 1.0;
  double e2e_bce = 1.0;
};

void add_train_options(CLI::App* cmd, TrainOptions& o) {
  cmd->add_option("--strategy", o.strategy, "Training strategy")
      ->check(CLI::IsMember({"multistage", "end2end"}))
      ->capture_default_str();
  cmd->add_option("--mode", o.mode, "Segmentation dimensionality (2d: per frame, 3d: full stack)")
      ->check(CLI::IsMember({"2d", "3d"}))
      ->capture_default_str();
  cmd->add_option("--dice", o.dice, "Soft Dice flavour")
      ->check(CLI::IsMember({"verbatim", "canonical"}))
      ->capture_default_str();
  cmd->add_option("--base-filters", o.base_filters, "Filters in the first encoder stage")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--depth", o.depth, "Encoder pooling stages")
      ->check(CLI::Range(std::size_t{1}, std::size_t{5}))
      ->capture_default_str();
  cmd->add_option("--seg-lr", o.seg_lr, "Adam learning rate for the segmentation network")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--mt-lr", o.mt_lr, "Adam learning rate for the multi-task network")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--stage1-epochs", o.stage1_epochs, "Segmentation-only epochs (multistage)")
      ->capture_default_str();
  cmd->add_option("--stage2-epochs", o.stage2_epochs, "Frozen-G multi-task epochs (multistage)")
      ->capture_default_str();
  cmd->add_option("--e2e-epochs", o.e2e_epochs, "Joint epochs (end2end)")
      ->capture_default_str();
  cmd->add_option("--frames-per-batch", o.frames_per_batch,
                  "Consecutive frames per segmentation batch")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--weight-decay", o.weight_decay, "L2 decay on multi-task conv/dense weights")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  cmd->add_option("--dice-w-background", o.dice_w_background, "Dice class weight: background")
      ->capture_default_str();
  cmd->add_option("--dice-w-cavity", o.dice_w_cavity, "Dice class weight: cavity")
      ->capture_default_str();
  cmd->add_option("--dice-w-myocardium", o.dice_w_myocardium, "Dice class weight: myocardium")
      ->capture_default_str();
  cmd->add_option("--lambda-mse", o.lambda_mse, "Multistage loss weight on the index MSE term")
      ->capture_default_str();
  cmd->add_option("--lambda-bce", o.lambda_bce, "Multistage loss weight on the phase BCE term")
      ->capture_default_str();
  cmd->add_option("--e2e-dice", o.e2e_dice, "End-to-end loss weight on the Dice term")
      ->capture_default_str();
  cmd->add_option("--e2e-mse", o.e2e_mse, "End-to-end loss weight on the index MSE term")
      ->capture_default_str();
  cmd->add_option("--e2e-bce", o.e2e_bce, "End-to-end loss weight on the phase BCE term")
      ->capture_default_str();
}

cq::TrainConfig to_train_config(const TrainOptions& o) {
  if (o.mode == "3d" && o.strategy == "multistage") {
    cq::fail(cq::ErrorCode::kConfig,
             "multistage training batches individual frames and is 2d-only; "
             "use --strategy end2end with --mode 3d");
  }
  cq::TrainConfig config;
  config.segmentation.base_filters = o.base_filters;
  config.segmentation.depth = o.depth;
  config.segmentation.mode =
      o.mode == "3d" ? cq::DrUnetConfig::Mode::k3D : cq::DrUnetConfig::Mode::k2D;
  config.multitask.weight_decay = o.weight_decay;
  config.loss_weights.class_weights = {static_cast<float>(o.dice_w_background),
                                       static_cast<float>(o.dice_w_cavity),
                                       static_cast<float>(o.dice_w_myocardium)};
  config.loss_weights.multistage_mse = static_cast<float>(o.lambda_mse);
  config.loss_weights.multistage_bce = static_cast<float>(o.lambda_bce);
  config.loss_weights.end_to_end_dice = static_cast<float>(o.e2e_dice);
  config.loss_weights.end_to_end_mse = static_cast<float>(o.e2e_mse);
  config.loss_weights.end_to_end_bce = static_cast<float>(o.e2e_bce);
  config.dice_variant =
      o.dice == "canonical" ? cq::DiceVariant::kCanonical : cq::DiceVariant::kVerbatim;
  config.segmentation_lr = o.seg_lr;
  config.multitask_lr = o.mt_lr;
  config.stage1_epochs = o.stage1_epochs;
  config.stage2_epochs = o.stage2_epochs;
  config.end_to_end_epochs = o.e2e_epochs;
  config.frames_per_batch = o.frames_per_batch;
  config.seed = o.seed;
  return config;
}

struct TrainedModel {
  cq::DrUnet segmentation;
  cq::Stmt multitask;
  cq::NormalizationStats stats;
  std::vector<cq::EpochLog> stage1_log;  // multistage only
  std::vector<cq::EpochLog> stage2_log;  // multistage only
  std::vector<cq::EpochLog> joint_log;   // end2end only
  double wall_seconds = 0.0;
};

double log_seconds(const std::vector<cq::EpochLog>& log) {
  double total = 0.0;
  for (const cq::EpochLog& row : log) total += row.wall_seconds;
  return total;
}

TrainedModel run_training(const cq::Dataset& train_set, const cq::TrainConfig& config,
                          const std::string& strategy) {
  if (strategy == "end2end") {
    cq::EndToEndResult r = cq::train_end_to_end(train_set, config);
    const double wall = log_seconds(r.log);
    return {std::move(r.segmentation), std::move(r.multitask), r.stats,
            {},                        {},                      std::move(r.log),
            wall};
  }
  cq::MultiStageResult r = cq::train_multistage(train_set, config);
  const double wall = log_seconds(r.stage1_log) + log_seconds(r.stage2_log);
  return {std::move(r.segmentation), std::move(r.multitask),   r.stats,
          std::move(r.stage1_log),   std::move(r.stage2_log), {},
          wall};
}

void write_training_outputs(const TrainedModel& model, const std::string& dir) {
  cq::save_bundle(dir + "/checkpoint.cqt", model.segmentation, model.multitask, model.stats);
  if (!model.joint_log.empty()) {
    cq::write_epoch_log_csv(dir + "/train_log.csv", model.joint_log);
  } else {
    cq::write_epoch_log_csv(dir + "/stage1_log.csv", model.stage1_log);
    cq::write_epoch_log_csv(dir + "/stage2_log.csv", model.stage2_log);
  }
}

int run_train(const CLI::App& app, const TrainOptions& o) {
  const cq::TrainConfig config = to_train_config(o);
  prepare_out_dir(o.out, o.force);
  const cq::Dataset data = cq::load_dataset(o.dataset);
  TrainedModel model = run_training(data, config, o.strategy);
  write_training_outputs(model, o.out);
  write_snapshot(app, o.out);
  const std::vector<cq::EpochLog>& last =
      model.joint_log.empty() ? model.stage2_log : model.joint_log;
  std::cout << "trained " << o.strategy << " on " << data.size() << " subjects in "
            << cq::format_g6(model.wall_seconds) << " s";
  if (!last.empty()) std::cout << ", final loss " << cq::format_g6(last.back().total_loss);
  std::cout << "\nwrote " << o.out << "/checkpoint.cqt\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions : TrainOptions {
  std::size_t folds = 5;
  std::string checkpoint;  // direct mode when set
};

cq::MetricsReport write_eval_outputs(const std::string& dir, const cq::Dataset& test_set,
                                     TrainedModel& model) {
  const cq::MetricsReport report =
      cq::evaluate(test_set, model.segmentation, model.multitask, model.stats);
  cq::write_metrics_csv(dir + "/metrics.csv", report);
  std::vector<std::string> ids;
  std::vector<std::vector<cq::IndexVector>> truth, predicted;
  for (const cq::Subject& subject : test_set) {
    ids.push_back(subject.images.subject_id);
    truth.push_back(subject.indices);
    predicted.push_back(
        cq::predict_subject(model.segmentation, model.multitask, model.stats, subject.images)
            .indices);
  }
  cq::write_curves_csv(dir + "/curves.csv", ids, truth, predicted);
  std::cout << "  cavity dice " << cq::format_g6(report.dice_cavity) << ", myo dice "
            << cq::format_g6(report.dice_myocardium) << ", phase ER "
            << cq::format_g6(report.phase_error_rate) << " % over " << report.frames
            << " frames\n";
  return report;
}

void accumulate_report(cq::MetricsReport& aggregate, const cq::MetricsReport& fold) {
  const double w = static_cast<double>(fold.frames);
  for (std::size_t k = 0; k < cq::IndexVector::kCount; ++k) {
    aggregate.index_mae[k] += w * fold.index_mae[k];
    aggregate.index_pcc[k] += w * fold.index_pcc[k];
    aggregate.agreement[k].bias += w * fold.agreement[k].bias;
    aggregate.agreement[k].loa_low += w * fold.agreement[k].loa_low;
    aggregate.agreement[k].loa_high += w * fold.agreement[k].loa_high;
  }
  aggregate.phase_error_rate += w * fold.phase_error_rate;
  aggregate.dice_cavity += w * fold.dice_cavity;
  aggregate.dice_myocardium += w * fold.dice_myocardium;
  aggregate.hausdorff_cavity_mm += w * fold.hausdorff_cavity_mm;
  aggregate.hausdorff_myocardium_mm += w * fold.hausdorff_myocardium_mm;
  aggregate.frames += fold.frames;
}

void finish_aggregate(cq::MetricsReport& aggregate) {
  const double n = static_cast<double>(aggregate.frames);
  if (n == 0.0) cq::fail(cq::ErrorCode::kValue, "no frames were evaluated");
  for (std::size_t k = 0; k < cq::IndexVector::kCount; ++k) {
    aggregate.index_mae[k] /= n;
    aggregate.index_pcc[k] /= n;
    aggregate.agreement[k].bias /= n;
    aggregate.agreement[k].loa_low /= n;
    aggregate.agreement[k].loa_high /= n;
  }
  aggregate.phase_error_rate /= n;
  aggregate.dice_cavity /= n;
  aggregate.dice_myocardium /= n;
  aggregate.hausdorff_cavity_mm /= n;
  aggregate.hausdorff_myocardium_mm /= n;
}

int run_eval(const CLI::App& app, const EvalOptions& o) {
  const cq::TrainConfig base_config = to_train_config(o);
  prepare_out_dir(o.out, o.force);
  const cq::Dataset data = cq::load_dataset(o.dataset);

  if (!o.checkpoint.empty()) {
    cq::ModelBundle bundle = cq::load_bundle(o.checkpoint);
    TrainedModel model{std::move(bundle.segmentation), std::move(bundle.multitask), bundle.stats,
                       {},                             {},                          {},
                       0.0};
    std::cout << "evaluating " << o.checkpoint << " on " << data.size() << " subjects\n";
    write_eval_outputs(o.out, data, model);
    write_snapshot(app, o.out);
    return 0;
  }

  std::vector<std::string> ids;
  ids.reserve(data.size());
  for (const cq::Subject& subject : data) ids.push_back(subject.images.subject_id);
  const cq::FoldSplit split = cq::kfold_split(ids, o.folds, o.seed);

  cq::MetricsReport aggregate{};
  for (std::size_t f = 0; f < split.folds.size(); ++f) {
    const std::set<std::string> test_ids(split.folds[f].begin(), split.folds[f].end());
    cq::Dataset train_set, test_set;
    for (const cq::Subject& subject : data) {
      (test_ids.count(subject.images.subject_id) ? test_set : train_set).push_back(subject);
    }
    cq::TrainConfig fold_config = base_config;
    // Distinct, reproducible stream per fold so folds are independent runs.
    fold_config.seed = o.seed + 1000003ULL * (f + 1);
    const std::string fold_dir = o.out + "/fold_" + std::to_string(f);
    std::error_code ec;
    fs::create_directories(fold_dir, ec);
    if (ec) cq::fail(cq::ErrorCode::kIo, "cannot create directory " + fold_dir);

    std::cout << "fold " << f << ": training on " << train_set.size() << ", testing on "
              << test_set.size() << " subjects\n";
    TrainedModel model = run_training(train_set, fold_config, o.strategy);
    write_training_outputs(model, fold_dir);
    accumulate_report(aggregate, write_eval_outputs(fold_dir, test_set, model));
  }
  finish_aggregate(aggregate);
  cq::write_metrics_csv(o.out + "/aggregate_metrics.csv", aggregate);
  write_snapshot(app, o.out);
  std::cout << "aggregate over " << split.folds.size() << " folds: cavity dice "
            << cq::format_g6(aggregate.dice_cavity) << ", myo dice "
            << cq::format_g6(aggregate.dice_myocardium) << ", phase ER "
            << cq::format_g6(aggregate.phase_error_rate) << " %\n";
  return 0;
}

// ---------------------------------------------------------------------------
// quantify

struct QuantifyOptions {
  std::string dataset;
  std::string out;
  std::string checkpoint;  // empty -> identity segmenter stub on stored masks
  bool force = false;
};

int run_quantify(const CLI::App& app, const QuantifyOptions& o) {
  prepare_out_dir(o.out, o.force);
  const cq::Dataset data = cq::load_dataset(o.dataset);
  std::optional<cq::ModelBundle> bundle;
  const bool use_network = !o.checkpoint.empty();
  if (use_network) bundle.emplace(cq::load_bundle(o.checkpoint));

  for (const cq::Subject& subject : data) {
    std::vector<cq::IndexVector> indices;
    if (use_network) {
      const cq::CineSequence pre = cq::preprocess(subject.images);
      const cq::SegmentationOutput seg = cq::forward_segmentation(bundle->segmentation, pre);
      indices = cq::quantify_sequence(seg.hard_labels);
    } else {
      indices = cq::quantify_sequence(subject.masks);
    }
    const std::string subject_dir = o.out + "/" + subject.images.subject_id;
    std::error_code ec;
    fs::create_directories(subject_dir, ec);
    if (ec) cq::fail(cq::ErrorCode::kIo, "cannot create directory " + subject_dir);
    cq::write_indices_csv(subject_dir + "/indices.csv", indices);
  }
  write_snapshot(app, o.out);
  std::cout << "quantified " << data.size() << " subjects ("
            << (use_network ? "segmentation network" : "identity segmenter stub") << ") into "
            << o.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

int run_gradcheck(const CLI::App& app, std::uint64_t seed, const std::string& out, bool force) {
  const std::vector<cq::GradCheckResult> rows = cq::run_gradcheck_suite(seed);
  std::printf("%-28s %8s %14s %10s   %s\n", "op", "probes", "max_rel_err", "tolerance", "status");
  std::size_t failed = 0;
  for (const cq::GradCheckResult& row : rows) {
    std::printf("%-28s %8zu %14.3e %10.1e   %s\n", row.name.c_str(), row.probes, row.max_rel_err,
                row.tolerance, row.pass ? "PASS" : "FAIL");
    if (!row.pass) ++failed;
  }
  if (!out.empty()) {
    prepare_out_dir(out, force);
    std::ofstream csv(out + "/gradcheck.csv", std::ios::trunc);
    if (!csv) cq::fail(cq::ErrorCode::kIo, "cannot write " + out + "/gradcheck.csv");
    csv << "op,probes,max_rel_err,tolerance,status\n";
    for (const cq::GradCheckResult& row : rows) {
      csv << row.name << "," << row.probes << "," << cq::format_g6(row.max_rel_err) << ","
          << cq::format_g6(row.tolerance) << "," << (row.pass ? "PASS" : "FAIL") << "\n";
    }
    write_snapshot(app, out);
  }
  if (failed > 0) {
    cq::fail(cq::ErrorCode::kValue, std::to_string(failed) + " of " + std::to_string(rows.size()) +
                                        " gradient checks failed");
  }
  std::cout << "all " << rows.size() << " gradient checks passed\n";
  return 0;
}

// ---------------------------------------------------------------------------
// report

std::string metric_or(const std::map<std::string, double>& metrics, const std::string& key) {
  const auto it = metrics.find(key);
  return it == metrics.end() ? std::string("n/a") : cq::format_g6(it->second);
}

int run_report(const CLI::App& app, const std::string& results, const std::string& out,
               bool force) {
  std::string source = results + "/aggregate_metrics.csv";
  if (!fs::exists(source)) source = results + "/metrics.csv";
  if (!fs::exists(source)) {
    cq::fail(cq::ErrorCode::kIo,
             "no aggregate_metrics.csv or metrics.csv under " + results);
  }
  const std::map<std::string, double> metrics = cq::read_metrics_csv(source);

  prepare_out_dir(out, force);
  std::ofstream md(out + "/report.md", std::ios::trunc);
  if (!md) cq::fail(cq::ErrorCode::kIo, "cannot write " + out + "/report.md");

  md << "# Left-ventricle quantification report\n\n";
  md << "Frames evaluated: " << metric_or(metrics, "frames") << "\n\n";
  md << "## Segmentation\n\n";
  md << "| Metric | Cavity | Myocardium |\n|---|---|---|\n";
  md << "| Dice | " << metric_or(metrics, "dice_cavity") << " | "
     << metric_or(metrics, "dice_myocardium") << " |\n";
  md << "| Hausdorff (mm) | " << metric_or(metrics, "hausdorff_cavity_mm") << " | "
     << metric_or(metrics, "hausdorff_myocardium_mm") << " |\n\n";
  md << "## Cardiac phase\n\n";
  md << "Error rate: " << metric_or(metrics, "phase_error_rate") << " %\n\n";
  md << "## Morphological indices\n\n";
  md << "| Index | MAE | PCC | Bias | LoA low | LoA high |\n|---|---|---|---|---|---|\n";
  for (std::size_t k = 0; k < cq::IndexVector::kCount; ++k) {
    const std::string name = cq::IndexVector::value_name(k);
    md << "| " << name << " | " << metric_or(metrics, "mae_" + name) << " | "
       << metric_or(metrics, "pcc_" + name) << " | " << metric_or(metrics, "bias_" + name)
       << " | " << metric_or(metrics, "loa_low_" + name) << " | "
       << metric_or(metrics, "loa_high_" + name) << " |\n";
  }

  std::vector<std::string> fold_dirs;
  for (std::size_t f = 0;; ++f) {
    const std::string dir = results + "/fold_" + std::to_string(f);
    if (!fs::exists(dir + "/metrics.csv")) break;
    fold_dirs.push_back(dir);
  }
  if (!fold_dirs.empty()) {
    md << "\n## Folds\n\n";
    md << "| Fold | Cavity Dice | Myo Dice | Phase ER (%) | Frames |\n|---|---|---|---|---|\n";
    for (std::size_t f = 0; f < fold_dirs.size(); ++f) {
      const std::map<std::string, double> fold = cq::read_metrics_csv(fold_dirs[f] + "/metrics.csv");
      md << "| " << f << " | " << metric_or(fold, "dice_cavity") << " | "
         << metric_or(fold, "dice_myocardium") << " | " << metric_or(fold, "phase_error_rate")
         << " | " << metric_or(fold, "frames") << " |\n";
    }
  }
  md.flush();
  if (!md) cq::fail(cq::ErrorCode::kIo, "failed writing " + out + "/report.md");
  write_snapshot(app, out);
  std::cout << "wrote " << out << "/report.md\n";
  return 0;
}

int exit_code(cq::ErrorCode code) { return 2 + static_cast<int>(code); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale cardiac cine-MR left-ventricle quantification pipeline", "cq"};
  app.require_subcommand(1);
  app.set_config("--config", "",
                 "Read options from an INI file with one [section] per command");

  PhantomOptions phantom_opts;
  CLI::App* phantom = app.add_subcommand(
      "phantom", "Generate a synthetic cine phantom dataset with ground truth");
  phantom->fallthrough();
  phantom->add_option("--out", phantom_opts.out, "Output dataset directory")
      ->required()
      ->configurable(false);
  phantom->add_flag("--force", phantom_opts.force, "Overwrite a non-empty output directory")
      ->configurable(false);
  phantom->add_option("--seed", phantom_opts.seed, "Root random seed")
      ->envname("CQ_SEED")
      ->capture_default_str();
  phantom->add_option("--subjects", phantom_opts.subjects, "Number of subjects")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  phantom->add_option("--frames", phantom_opts.frames, "Frames per cardiac cycle")
      ->check(CLI::Range(std::size_t{2}, std::size_t{512}))
      ->capture_default_str();
  phantom->add_option("--height", phantom_opts.height, "Image height in pixels")
      ->check(CLI::Range(std::size_t{16}, std::size_t{1024}))
      ->capture_default_str();
  phantom->add_option("--width", phantom_opts.width, "Image width in pixels")
      ->check(CLI::Range(std::size_t{16}, std::size_t{1024}))
      ->capture_default_str();
  phantom->add_option("--endo-radius-ed", phantom_opts.endo_radius_ed,
                      "End-diastolic endocardial radius in pixels")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  phantom->add_option("--endo-radius-es", phantom_opts.endo_radius_es,
                      "End-systolic endocardial radius in pixels")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  phantom->add_option("--wall-thickness", phantom_opts.wall_thickness,
                      "Base myocardial wall thickness in pixels")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  phantom->add_option("--jitter", phantom_opts.jitter,
                      "Relative per-subject jitter on radii and wall thickness")
      ->check(CLI::Range(0.0, 0.5))
      ->capture_default_str();
  phantom->add_option("--sector-jitter", phantom_opts.sector_jitter,
                      "Relative per-sector wall thickness variation")
      ->check(CLI::Range(0.0, 0.5))
      ->capture_default_str();
  phantom->add_option("--noise-std", phantom_opts.noise_std, "Gaussian intensity noise std")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  phantom->add_option("--spacing", phantom_opts.spacing, "Pixel spacing in mm")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  TrainOptions train_opts;
  CLI::App* train = app.add_subcommand("train", "Train the segmentation + multi-task networks");
  train->fallthrough();
  train->add_option("--dataset", train_opts.dataset, "Dataset directory (manifest.csv + subjects)")
      ->required();
  train->add_option("--out", train_opts.out, "Output directory for checkpoint and logs")
      ->required()
      ->configurable(false);
  train->add_flag("--force", train_opts.force, "Overwrite a non-empty output directory")
      ->configurable(false);
  train->add_option("--seed", train_opts.seed, "Root random seed")
      ->envname("CQ_SEED")
      ->capture_default_str();
  add_train_options(train, train_opts);

  EvalOptions eval_opts;
  CLI::App* eval_cmd = app.add_subcommand(
      "eval", "k-fold cross-validated training + evaluation, or direct checkpoint evaluation");
  eval_cmd->fallthrough();
  eval_cmd->add_option("--dataset", eval_opts.dataset, "Dataset directory")
      ->required();
  eval_cmd->add_option("--out", eval_opts.out, "Output directory for reports")
      ->required()
      ->configurable(false);
  eval_cmd->add_flag("--force", eval_opts.force, "Overwrite a non-empty output directory")
      ->configurable(false);
  eval_cmd->add_option("--seed", eval_opts.seed, "Root random seed")
      ->envname("CQ_SEED")
      ->capture_default_str();
  eval_cmd->add_option("--folds", eval_opts.folds, "Number of cross-validation folds")
      ->check(CLI::Range(std::size_t{2}, std::size_t{100}))
      ->capture_default_str();
  eval_cmd
      ->add_option("--checkpoint", eval_opts.checkpoint,
                   "Evaluate this checkpoint on the whole dataset instead of running folds")
      ->capture_default_str();
  add_train_options(eval_cmd, eval_opts);

  QuantifyOptions quantify_opts;
  CLI::App* quantify = app.add_subcommand(
      "quantify", "Segment raw sequences and emit the 11 indices per frame (no multi-task net)");
  quantify->fallthrough();
  quantify->add_option("--dataset", quantify_opts.dataset, "Dataset directory")->required();
  quantify->add_option("--out", quantify_opts.out, "Output directory for per-subject indices.csv")
      ->required()
      ->configurable(false);
  quantify->add_flag("--force", quantify_opts.force, "Overwrite a non-empty output directory")
      ->configurable(false);
  quantify
      ->add_option("--checkpoint", quantify_opts.checkpoint,
                   "Segmentation checkpoint; omit to route the stored masks through an identity "
                   "segmenter stub")
      ->capture_default_str();

  std::uint64_t gradcheck_seed = 0;
  std::string gradcheck_out;
  bool gradcheck_force = false;
  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "Finite-difference audit of every differentiable op and the composed losses");
  gradcheck->fallthrough();
  gradcheck->add_option("--seed", gradcheck_seed, "Root random seed")
      ->envname("CQ_SEED")
      ->capture_default_str();
  gradcheck->add_option("--out", gradcheck_out, "Optional directory for gradcheck.csv")
      ->configurable(false);
  gradcheck->add_flag("--force", gradcheck_force, "Overwrite a non-empty output directory")
      ->configurable(false);

  std::string report_results;
  std::string report_out;
  bool report_force = false;
  CLI::App* report = app.add_subcommand("report", "Render metrics CSVs into a markdown report");
  report->fallthrough();
  report->add_option("--results", report_results, "Directory written by cq eval")
      ->required();
  report->add_option("--out", report_out, "Output directory for report.md")
      ->required()
      ->configurable(false);
  report->add_flag("--force", report_force, "Overwrite a non-empty output directory")
      ->configurable(false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) return app.exit(e);
    std::cerr << "cq: E_CONFIG: " << e.what() << "\n";
    return 2;
  }

  try {
    if (phantom->parsed()) return run_phantom(app, phantom_opts);
    if (train->parsed()) return run_train(app, train_opts);
    if (eval_cmd->parsed()) return run_eval(app, eval_opts);
    if (quantify->parsed()) return run_quantify(app, quantify_opts);
    if (gradcheck->parsed())
      return run_gradcheck(app, gradcheck_seed, gradcheck_out, gradcheck_force);
    if (report->parsed()) return run_report(app, report_results, report_out, report_force);
  } catch (const cq::Error& e) {
    std::cerr << "cq: " << cq::error_code_name(e.code()) << ": " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "cq: E_IO: " << e.what() << "\n";
    return exit_code(cq::ErrorCode::kIo);
  }
  return 0;
}
