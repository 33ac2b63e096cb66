#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dynhd/deviation_detector.hpp"
#include "dynhd/evidence.hpp"
#include "dynhd/reference_generator.hpp"
#include "dynhd/token_filter.hpp"
#include "dynhd/trajectory.hpp"

namespace dynhd {

struct Stage2Config {
    double lr = 1e-3;
    double weight_decay = 1e-4;
    int epochs = 40;
    int batch_size = 64;
    double lambda1 = 0.2;
    double lambda2 = 0.2;
    /// Fraction of stage-2 epochs over which lambda1/lambda2 ramp up from 0.
    double warmup_fraction = 0.0;
    double quantile_level = 0.9;
    double beta = 0.1;
};

/// Train/validation/test sizes, taken in file order.
struct SplitSizes {
    int train = 1400;
    int validation = 300;
    int test = 300;
};

struct TrainConfig {
    Stage1Config stage1{.lr = 1e-3, .weight_decay = 0.01, .epochs = 60, .batch_size = 64};
    Stage2Config stage2;
    GeneratorArch generator;
    DetectorArch detector;
    std::uint64_t seed = 0;
    int k = kDefaultTopK;
    SplitSizes splits;
    /// Standardize detector-side evidence with stage-1 factual statistics.
    bool standardize = false;
    IgnoreSpec ignore = IgnoreSpec::defaults();

    /// Throws Error when a field is out of range.
    void validate() const;

    nlohmann::json to_json() const;
    /// Missing fields keep their defaults. "ignore" may be an object, "default" or "none".
    static TrainConfig from_json(const nlohmann::json& j);
    static TrainConfig load(const std::string& path);
};

/// Per-dimension affine map fitted on factual training evidence.
struct Standardizer {
    bool enabled = false;
    std::array<double, kEvidenceDim> mean{0.0, 0.0, 0.0};
    std::array<double, kEvidenceDim> scale{1.0, 1.0, 1.0};

    static Standardizer fit(const std::vector<const EvidenceSample*>& factual);
    EvidenceTrajectory apply(const EvidenceTrajectory& traj) const;

    nlohmann::json to_json() const;
    static Standardizer from_json(const nlohmann::json& j);
};

/// Everything needed to score new trajectories.
struct TrainedModel {
    TrainConfig config;
    ReferenceGenerator generator;
    DeviationDetector detector;
    Standardizer standardizer;

    nlohmann::json to_json() const;
    static TrainedModel from_json(const nlohmann::json& j);
    void save(const std::string& path) const;
    static TrainedModel load(const std::string& path);
};

struct EpochMetrics {
    int epoch = 0;
    double cls = 0.0;
    double path = 0.0;
    double reb = 0.0;
    double total = 0.0;
    double lambda1 = 0.0;  // effective values after warmup
    double lambda2 = 0.0;
    double margin_path = 0.0;
    double margin_rebound = 0.0;
    double val_auroc = 0.0;
};

struct RunReport {
    nlohmann::json config;
    std::vector<double> stage1_loss;  // entry 0 is before training
    std::vector<EpochMetrics> epochs;
    int selected_epoch = 0;
    double best_val_auroc = 0.0;
    double test_auroc = 0.0;
    std::size_t n_train = 0;
    std::size_t n_validation = 0;
    std::size_t n_test = 0;

    nlohmann::json to_json() const;
    std::string to_text() const;     // pretty JSON, deterministic
    std::string epochs_csv() const;  // one row per stage-2 epoch
};

struct DataSplits {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;
};

DataSplits make_splits(std::size_t n, const SplitSizes& sizes);

/// Evidence for every trajectory plus the split assignment.
struct PreparedData {
    std::vector<EvidenceSample> samples;
    DataSplits splits;
    int T = 0;
};

PreparedData prepare_data(const TrainConfig& cfg, const Dataset& dataset);

struct Stage1Outcome {
    ReferenceGenerator generator;
    Standardizer standardizer;
    std::vector<double> loss_history;
};

Stage1Outcome run_stage1(const TrainConfig& cfg, const PreparedData& data);

struct RunResult {
    TrainedModel model;
    RunReport report;
};

/// Stage 2 on top of a finished stage 1. The returned detector is the snapshot
/// from the epoch with the best validation AUROC.
RunResult run_stage2(const TrainConfig& cfg, const PreparedData& data, const Stage1Outcome& stage1);

/// Stage 1 on factual training samples, then the detector with the generator frozen.
RunResult run_two_stage(const TrainConfig& cfg, const Dataset& dataset);

/// Detector inputs for arbitrary trajectories under a trained model.
std::vector<DetectorInput> model_inputs(const TrainedModel& model, const std::vector<EvidenceSample>& samples);

std::vector<SampleScore> score_trajectories(const TrainedModel& model, const std::vector<RawTrajectory>& trajectories);

/// AUROC of a trained model on another labeled set, without retraining.
/// Throws TrainingError when any trajectory is unlabeled or a class is missing.
double cross_eval(const TrainedModel& model, const std::vector<RawTrajectory>& trajectories);

/// Cartesian product of hyperparameter axes over a base configuration.
struct GridSpec {
    TrainConfig base;
    std::vector<double> stage1_lr;
    std::vector<double> stage1_weight_decay;
    std::vector<double> stage2_lr;
    std::vector<double> stage2_weight_decay;
    std::vector<double> lambda1;
    std::vector<double> lambda2;
    std::vector<double> warmup_fraction;
    int threads = 1;

    /// The full published search space around `base`.
    static GridSpec search_space(const TrainConfig& base);
    /// Axes may be lists or {"min", "max", "step"} ranges; omitted axes use the base value.
    static GridSpec from_json(const nlohmann::json& j);
    static GridSpec load(const std::string& path);

    std::vector<TrainConfig> expand() const;
};

struct GridResult {
    std::size_t best_index = 0;
    TrainConfig best;
    std::vector<RunReport> reports;
};

/// Exhaustive search; picks the highest validation AUROC, breaking ties by
/// smaller lambda1 + lambda2, then lower stage-2 lr, then lower stage-1 lr.
GridResult grid_search(const GridSpec& spec, const Dataset& dataset);

}  // namespace dynhd
