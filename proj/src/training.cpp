#include "dynhd/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "dynhd/error.hpp"
#include "dynhd/io.hpp"
#include "dynhd/metrics.hpp"

namespace dynhd {

using nlohmann::json;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Independent stream per purpose, all derived from the run seed.
enum class Stream : std::uint64_t { stage1_init = 1, stage1_shuffle, detector_init, stage2_shuffle };

std::uint64_t stream_seed(std::uint64_t seed, Stream s) {
    return splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(s));
}

std::vector<const EvidenceSample*> pick(const std::vector<EvidenceSample>& samples, const std::vector<std::size_t>& idx,
                                        bool factual_only = false) {
    std::vector<const EvidenceSample*> out;
    for (auto i : idx) {
        if (factual_only && samples[i].label != Label::factual) continue;
        out.push_back(&samples[i]);
    }
    return out;
}

void require_both_classes(const std::vector<const EvidenceSample*>& set, const std::string& name) {
    bool pos = false;
    bool neg = false;
    for (const auto* s : set) {
        if (s->label == Label::unlabeled) throw TrainingError(name + " split contains unlabeled trajectory '" + s->id + "'");
        pos |= s->label == Label::hallucinated;
        neg |= s->label == Label::factual;
    }
    if (!pos || !neg) throw TrainingError(name + " split is missing a class; AUROC is undefined");
}

double evaluate_auroc(const DeviationDetector& det, const std::vector<DetectorInput>& inputs,
                      const std::vector<std::size_t>& idx) {
    std::vector<double> scores;
    std::vector<int> labels;
    scores.reserve(idx.size());
    labels.reserve(idx.size());
    for (auto i : idx) {
        scores.push_back(score_input(det, inputs[i]).probability);
        labels.push_back(inputs[i].label);
    }
    return auroc(scores, labels);
}

json ignore_to_json(const IgnoreSpec& spec) { return spec.to_json(); }

IgnoreSpec ignore_from_json(const json& j) {
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "default" || s == "defaults") return IgnoreSpec::defaults();
        if (s == "none") return IgnoreSpec{};
        return IgnoreSpec::load(s);
    }
    return IgnoreSpec::from_json(j);
}

std::vector<double> axis_from_json(const json& j) {
    if (j.is_array()) return j.get<std::vector<double>>();
    if (j.is_number()) return {j.get<double>()};
    const double lo = j.at("min").get<double>();
    const double hi = j.at("max").get<double>();
    const double step = j.at("step").get<double>();
    if (!(step > 0) || hi < lo) throw ValidationError("grid range needs step > 0 and max >= min");
    const auto count = static_cast<int>(std::floor((hi - lo) / step + 1e-9)) + 1;
    std::vector<double> out;
    for (int i = 0; i < count; ++i) out.push_back(lo + step * i);
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::validate() const {
    auto fail = [](const std::string& m) { throw ValidationError("config: " + m); };
    if (!(stage1.lr > 0) || !(stage2.lr > 0)) fail("learning rates must be > 0");
    if (stage1.weight_decay < 0 || stage2.weight_decay < 0) fail("weight decay must be >= 0");
    if (stage1.epochs < 0 || stage2.epochs < 1) fail("stage1 epochs must be >= 0 and stage2 epochs >= 1");
    if (stage1.batch_size < 1 || stage2.batch_size < 1) fail("batch sizes must be >= 1");
    if (stage2.lambda1 < 0 || stage2.lambda2 < 0) fail("lambda1 and lambda2 must be >= 0");
    if (stage2.warmup_fraction < 0 || stage2.warmup_fraction > 1) fail("warmup_fraction must lie in [0, 1]");
    if (!(stage2.quantile_level > 0 && stage2.quantile_level < 1)) fail("quantile_level must lie in (0, 1)");
    if (!(stage2.beta > 0 && stage2.beta <= 1)) fail("beta must lie in (0, 1]");
    if (k < 1) fail("k must be >= 1");
    if (splits.train < 1 || splits.validation < 1 || splits.test < 1) fail("split sizes must be positive");
    if (generator.timestep_dim < 2 || generator.timestep_dim % 2 != 0) fail("timestep_dim must be even and >= 2");
    if (detector.hidden < 1 || detector.attention_dim < 1 || detector.head_hidden < 1) fail("detector sizes must be >= 1");
}

json TrainConfig::to_json() const {
    return {{"seed", seed},
            {"k", k},
            {"standardize", standardize},
            {"splits", {{"train", splits.train}, {"validation", splits.validation}, {"test", splits.test}}},
            {"stage1",
             {{"lr", stage1.lr},
              {"weight_decay", stage1.weight_decay},
              {"epochs", stage1.epochs},
              {"batch_size", stage1.batch_size}}},
            {"stage2",
             {{"lr", stage2.lr},
              {"weight_decay", stage2.weight_decay},
              {"epochs", stage2.epochs},
              {"batch_size", stage2.batch_size},
              {"lambda1", stage2.lambda1},
              {"lambda2", stage2.lambda2},
              {"warmup_fraction", stage2.warmup_fraction},
              {"quantile_level", stage2.quantile_level},
              {"beta", stage2.beta}}},
            {"generator", {{"timestep_dim", generator.timestep_dim}, {"hidden", generator.hidden}}},
            {"detector",
             {{"hidden", detector.hidden},
              {"attention_dim", detector.attention_dim},
              {"head_hidden", detector.head_hidden}}},
            {"ignore", ignore_to_json(ignore)}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    try {
        c.seed = j.value("seed", c.seed);
        c.k = j.value("k", c.k);
        c.standardize = j.value("standardize", c.standardize);
        if (auto it = j.find("splits"); it != j.end()) {
            c.splits.train = it->value("train", c.splits.train);
            c.splits.validation = it->value("validation", c.splits.validation);
            c.splits.test = it->value("test", c.splits.test);
        }
        if (auto it = j.find("stage1"); it != j.end()) {
            c.stage1.lr = it->value("lr", c.stage1.lr);
            c.stage1.weight_decay = it->value("weight_decay", c.stage1.weight_decay);
            c.stage1.epochs = it->value("epochs", c.stage1.epochs);
            c.stage1.batch_size = it->value("batch_size", c.stage1.batch_size);
        }
        if (auto it = j.find("stage2"); it != j.end()) {
            auto& s = c.stage2;
            s.lr = it->value("lr", s.lr);
            s.weight_decay = it->value("weight_decay", s.weight_decay);
            s.epochs = it->value("epochs", s.epochs);
            s.batch_size = it->value("batch_size", s.batch_size);
            s.lambda1 = it->value("lambda1", s.lambda1);
            s.lambda2 = it->value("lambda2", s.lambda2);
            s.warmup_fraction = it->value("warmup_fraction", s.warmup_fraction);
            s.quantile_level = it->value("quantile_level", s.quantile_level);
            s.beta = it->value("beta", s.beta);
        }
        if (auto it = j.find("generator"); it != j.end()) {
            c.generator.timestep_dim = it->value("timestep_dim", c.generator.timestep_dim);
            c.generator.hidden = it->value("hidden", c.generator.hidden);
        }
        if (auto it = j.find("detector"); it != j.end()) {
            c.detector.hidden = it->value("hidden", c.detector.hidden);
            c.detector.attention_dim = it->value("attention_dim", c.detector.attention_dim);
            c.detector.head_hidden = it->value("head_hidden", c.detector.head_hidden);
        }
        if (auto it = j.find("ignore"); it != j.end()) c.ignore = ignore_from_json(*it);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

TrainConfig TrainConfig::load(const std::string& path) {
    try {
        return from_json(json::parse(io::read_file(path)));
    } catch (const json::parse_error& e) {
        throw ValidationError("config '" + path + "': " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Standardization and model bundle

Standardizer Standardizer::fit(const std::vector<const EvidenceSample*>& factual) {
    Standardizer s;
    s.enabled = true;
    std::array<double, kEvidenceDim> sum{};
    std::array<double, kEvidenceDim> sq{};
    double n = 0.0;
    for (const auto* smp : factual) {
        for (const auto& v : smp->evidence.vectors) {
            for (int d = 0; d < kEvidenceDim; ++d) {
                sum[static_cast<std::size_t>(d)] += v[d];
                sq[static_cast<std::size_t>(d)] += v[d] * v[d];
            }
            n += 1.0;
        }
    }
    if (n == 0.0) return s;
    for (std::size_t d = 0; d < kEvidenceDim; ++d) {
        s.mean[d] = sum[d] / n;
        const double var = std::max(0.0, sq[d] / n - s.mean[d] * s.mean[d]);
        s.scale[d] = var > 1e-12 ? std::sqrt(var) : 1.0;
    }
    return s;
}

EvidenceTrajectory Standardizer::apply(const EvidenceTrajectory& traj) const {
    if (!enabled) return traj;
    EvidenceTrajectory out = traj;
    for (auto& v : out.vectors) {
        for (int d = 0; d < kEvidenceDim; ++d) {
            v[d] = (v[d] - mean[static_cast<std::size_t>(d)]) / scale[static_cast<std::size_t>(d)];
        }
    }
    return out;
}

json Standardizer::to_json() const { return {{"enabled", enabled}, {"mean", mean}, {"scale", scale}}; }

Standardizer Standardizer::from_json(const json& j) {
    Standardizer s;
    s.enabled = j.at("enabled").get<bool>();
    s.mean = j.at("mean").get<std::array<double, kEvidenceDim>>();
    s.scale = j.at("scale").get<std::array<double, kEvidenceDim>>();
    return s;
}

json TrainedModel::to_json() const {
    return {{"format", "dynhd-model/1"},
            {"config", config.to_json()},
            {"standardizer", standardizer.to_json()},
            {"generator", generator.to_json()},
            {"detector", detector.to_json()}};
}

TrainedModel TrainedModel::from_json(const json& j) {
    if (j.value("format", std::string{}) != "dynhd-model/1") throw ValidationError("not a dynhd model checkpoint");
    TrainedModel m;
    m.config = TrainConfig::from_json(j.at("config"));
    m.standardizer = Standardizer::from_json(j.at("standardizer"));
    m.generator = ReferenceGenerator::from_json(j.at("generator"));
    m.detector = DeviationDetector::from_json(j.at("detector"));
    return m;
}

void TrainedModel::save(const std::string& path) const { io::write_file(path, to_json().dump() + "\n"); }

TrainedModel TrainedModel::load(const std::string& path) {
    try {
        return from_json(json::parse(io::read_file(path)));
    } catch (const json::exception& e) {
        throw ValidationError("model '" + path + "': " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Reports

json RunReport::to_json() const {
    json ep = json::array();
    for (const auto& e : epochs) {
        ep.push_back({{"epoch", e.epoch},
                      {"cls", e.cls},
                      {"path", e.path},
                      {"reb", e.reb},
                      {"total", e.total},
                      {"lambda1", e.lambda1},
                      {"lambda2", e.lambda2},
                      {"margin_path", e.margin_path},
                      {"margin_rebound", e.margin_rebound},
                      {"val_auroc", e.val_auroc}});
    }
    return {{"config", config},
            {"n_train", n_train},
            {"n_validation", n_validation},
            {"n_test", n_test},
            {"stage1_loss", stage1_loss},
            {"stage2_epochs", std::move(ep)},
            {"selected_epoch", selected_epoch},
            {"best_val_auroc", best_val_auroc},
            {"test_auroc", test_auroc}};
}

std::string RunReport::to_text() const { return to_json().dump(2) + "\n"; }

std::string RunReport::epochs_csv() const {
    std::ostringstream out;
    out << std::setprecision(17);
    out << "epoch,l_ref,l_cls,l_path,l_reb,total,lambda1,lambda2,margin_path,margin_rebound,val_auroc\n";
    const std::size_t rows = std::max(epochs.size(), stage1_loss.empty() ? 0 : stage1_loss.size() - 1);
    for (std::size_t i = 0; i < rows; ++i) {
        out << i + 1 << ',';
        if (i + 1 < stage1_loss.size()) out << stage1_loss[i + 1];
        out << ',';
        if (i < epochs.size()) {
            const auto& e = epochs[i];
            out << e.cls << ',' << e.path << ',' << e.reb << ',' << e.total << ',' << e.lambda1 << ',' << e.lambda2
                << ',' << e.margin_path << ',' << e.margin_rebound << ',' << e.val_auroc;
        } else {
            out << ",,,,,,,,";
        }
        out << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Pipeline

DataSplits make_splits(std::size_t n, const SplitSizes& sizes) {
    const auto need = static_cast<std::size_t>(sizes.train) + static_cast<std::size_t>(sizes.validation) +
                      static_cast<std::size_t>(sizes.test);
    if (need > n) {
        throw TrainingError("dataset has " + std::to_string(n) + " trajectories, splits need " + std::to_string(need));
    }
    DataSplits s;
    std::size_t i = 0;
    for (; i < static_cast<std::size_t>(sizes.train); ++i) s.train.push_back(i);
    for (; i < static_cast<std::size_t>(sizes.train + sizes.validation); ++i) s.validation.push_back(i);
    for (; i < need; ++i) s.test.push_back(i);
    return s;
}

PreparedData prepare_data(const TrainConfig& cfg, const Dataset& dataset) {
    cfg.validate();
    PreparedData p;
    p.T = dataset.header.T;
    p.splits = make_splits(dataset.trajectories.size(), cfg.splits);
    p.samples.reserve(dataset.trajectories.size());
    for (const auto& raw : dataset.trajectories) {
        p.samples.push_back({raw.id, raw.query_embedding, build_trajectory(raw, cfg.ignore, cfg.k), raw.label});
    }
    return p;
}

Stage1Outcome run_stage1(const TrainConfig& cfg, const PreparedData& data) {
    const auto train = pick(data.samples, data.splits.train);
    require_both_classes(train, "train");
    const auto factual = pick(data.samples, data.splits.train, true);

    Stage1Outcome out;
    std::vector<EvidenceSample> factual_copy;
    factual_copy.reserve(factual.size());
    for (const auto* s : factual) factual_copy.push_back(*s);

    const int d_q = static_cast<int>(factual.front()->query.size());
    out.generator = ReferenceGenerator::create(d_q, cfg.generator, stream_seed(cfg.seed, Stream::stage1_init));
    out.loss_history =
        train_reference(out.generator, factual_copy, cfg.stage1, stream_seed(cfg.seed, Stream::stage1_shuffle));
    if (cfg.standardize) out.standardizer = Standardizer::fit(factual);
    return out;
}

namespace {

std::vector<DetectorInput> build_inputs(const ReferenceGenerator& gen, const Standardizer& stdz,
                                        const std::vector<EvidenceSample>& samples) {
    std::vector<DetectorInput> inputs;
    inputs.reserve(samples.size());
    for (const auto& s : samples) {
        const auto reference = gen.predict_trajectory(s.query, s.evidence.T);
        inputs.push_back(prepare_input(stdz.apply(s.evidence), stdz.apply(reference), s.label));
    }
    return inputs;
}

}  // namespace

RunResult run_stage2(const TrainConfig& cfg, const PreparedData& data, const Stage1Outcome& stage1) {
    const auto train = pick(data.samples, data.splits.train);
    const auto val = pick(data.samples, data.splits.validation);
    const auto test = pick(data.samples, data.splits.test);
    require_both_classes(train, "train");
    require_both_classes(val, "validation");
    require_both_classes(test, "test");

    const auto& s2 = cfg.stage2;
    const DetectorHyper hyper{s2.lambda1, s2.lambda2, s2.beta, s2.quantile_level};
    DeviationDetector det = DeviationDetector::create(cfg.detector, hyper, stream_seed(cfg.seed, Stream::detector_init));

    // The generator is frozen from here on, so every reference trajectory is fixed.
    const auto inputs = build_inputs(stage1.generator, stage1.standardizer, data.samples);

    DeviationDetector::Grads grads = det.zero_grads();
    std::vector<nn::ParamBlock> params;
    det.bind(grads, params);
    nn::AdamW opt({.lr = s2.lr, .weight_decay = s2.weight_decay});
    nn::Rng rng(stream_seed(cfg.seed, Stream::stage2_shuffle));

    RunReport report;
    report.config = cfg.to_json();
    report.stage1_loss = stage1.loss_history;
    report.n_train = train.size();
    report.n_validation = val.size();
    report.n_test = test.size();

    std::vector<std::size_t> order = data.splits.train;
    std::vector<const DetectorInput*> batch;
    DeviationDetector best = det;
    double best_auroc = -1.0;
    const double warmup_epochs = s2.warmup_fraction * s2.epochs;

    for (int epoch = 1; epoch <= s2.epochs; ++epoch) {
        const double ramp = warmup_epochs > 0 ? std::min(1.0, static_cast<double>(epoch) / warmup_epochs) : 1.0;
        const double lambda1 = s2.lambda1 * ramp;
        const double lambda2 = s2.lambda2 * ramp;

        std::shuffle(order.begin(), order.end(), rng);
        EpochMetrics m;
        m.epoch = epoch;
        m.lambda1 = lambda1;
        m.lambda2 = lambda2;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(s2.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(s2.batch_size));
            batch.clear();
            for (std::size_t i = start; i < stop; ++i) batch.push_back(&inputs[order[i]]);

            const BatchForward fwd = forward_batch(det, batch);
            update_margins(det.margins, s2.beta, s2.quantile_level, fwd.s_path, fwd.s_reb, fwd.labels);
            nn::zero(grads.projector);
            nn::zero(grads.head);
            grads.U.setZero();
            grads.b_u.setZero();
            grads.w.setZero();
            const LossTerms loss = backward_batch(det, fwd, lambda1, lambda2, &grads);
            if (!std::isfinite(loss.total)) throw TrainingError("stage 2: non-finite loss at epoch " + std::to_string(epoch));
            opt.step(params);

            const auto w = static_cast<double>(batch.size());
            m.cls += loss.cls * w;
            m.path += loss.path * w;
            m.reb += loss.reb * w;
            m.total += loss.total * w;
            seen += batch.size();
        }
        const auto n = static_cast<double>(seen);
        m.cls /= n;
        m.path /= n;
        m.reb /= n;
        m.total /= n;
        m.margin_path = det.margins.path;
        m.margin_rebound = det.margins.rebound;
        m.val_auroc = evaluate_auroc(det, inputs, data.splits.validation);
        if (m.val_auroc > best_auroc) {
            best_auroc = m.val_auroc;
            best = det;
            report.selected_epoch = epoch;
        }
        report.epochs.push_back(m);
    }

    report.best_val_auroc = best_auroc;
    report.test_auroc = evaluate_auroc(best, inputs, data.splits.test);

    RunResult result;
    result.model.config = cfg;
    result.model.generator = stage1.generator;
    result.model.detector = std::move(best);
    result.model.standardizer = stage1.standardizer;
    result.report = std::move(report);
    return result;
}

RunResult run_two_stage(const TrainConfig& cfg, const Dataset& dataset) {
    const PreparedData data = prepare_data(cfg, dataset);
    const Stage1Outcome stage1 = run_stage1(cfg, data);
    return run_stage2(cfg, data, stage1);
}

std::vector<DetectorInput> model_inputs(const TrainedModel& model, const std::vector<EvidenceSample>& samples) {
    return build_inputs(model.generator, model.standardizer, samples);
}

std::vector<SampleScore> score_trajectories(const TrainedModel& model, const std::vector<RawTrajectory>& trajectories) {
    std::vector<SampleScore> out;
    out.reserve(trajectories.size());
    for (const auto& raw : trajectories) {
        const EvidenceSample s{raw.id, raw.query_embedding, build_trajectory(raw, model.config.ignore, model.config.k),
                               raw.label};
        const auto reference = model.generator.predict_trajectory(s.query, s.evidence.T);
        const auto input =
            prepare_input(model.standardizer.apply(s.evidence), model.standardizer.apply(reference), s.label);
        out.push_back(score_input(model.detector, input));
    }
    return out;
}

double cross_eval(const TrainedModel& model, const std::vector<RawTrajectory>& trajectories) {
    std::vector<int> labels;
    labels.reserve(trajectories.size());
    for (const auto& t : trajectories) {
        if (t.label == Label::unlabeled) {
            throw TrainingError("evaluation requires labels; trajectory '" + t.id + "' is unlabeled");
        }
        labels.push_back(static_cast<int>(t.label));
    }
    const auto scores = score_trajectories(model, trajectories);
    std::vector<double> probs;
    probs.reserve(scores.size());
    for (const auto& s : scores) probs.push_back(s.probability);
    try {
        return auroc(probs, labels);
    } catch (const Error& e) {
        throw TrainingError(std::string("evaluation set: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Grid search

GridSpec GridSpec::search_space(const TrainConfig& base) {
    GridSpec g;
    g.base = base;
    g.stage1_lr = {3e-4, 1e-3};
    g.stage2_lr = {1e-4, 3e-4, 1e-3};
    g.stage1_weight_decay = {0.0, 0.01, 0.05};
    g.stage2_weight_decay = {0.0, 1e-4, 1e-3};
    for (int i = 0; i <= 8; ++i) {
        g.lambda1.push_back(0.05 * i);
        g.lambda2.push_back(0.05 * i);
    }
    g.warmup_fraction = {0.0, 0.3};
    return g;
}

GridSpec GridSpec::from_json(const json& j) {
    GridSpec g;
    try {
        g.base = TrainConfig::from_json(j.value("base", json::object()));
        if (j.value("search_space", false)) g = search_space(g.base);
        const json axes = j.value("axes", json::object());
        auto read = [&](const char* key, std::vector<double>& dst) {
            if (auto it = axes.find(key); it != axes.end()) dst = axis_from_json(*it);
        };
        read("stage1.lr", g.stage1_lr);
        read("stage1.weight_decay", g.stage1_weight_decay);
        read("stage2.lr", g.stage2_lr);
        read("stage2.weight_decay", g.stage2_weight_decay);
        read("lambda1", g.lambda1);
        read("lambda2", g.lambda2);
        read("warmup_fraction", g.warmup_fraction);
        g.threads = j.value("threads", 1);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("grid: ") + e.what());
    }
    return g;
}

GridSpec GridSpec::load(const std::string& path) {
    try {
        return from_json(json::parse(io::read_file(path)));
    } catch (const json::parse_error& e) {
        throw ValidationError("grid '" + path + "': " + e.what());
    }
}

std::vector<TrainConfig> GridSpec::expand() const {
    auto axis = [](const std::vector<double>& v, double fallback) {
        return v.empty() ? std::vector<double>{fallback} : v;
    };
    const auto l1 = axis(stage1_lr, base.stage1.lr);
    const auto w1 = axis(stage1_weight_decay, base.stage1.weight_decay);
    const auto l2 = axis(stage2_lr, base.stage2.lr);
    const auto w2 = axis(stage2_weight_decay, base.stage2.weight_decay);
    const auto la = axis(lambda1, base.stage2.lambda1);
    const auto lb = axis(lambda2, base.stage2.lambda2);
    const auto wu = axis(warmup_fraction, base.stage2.warmup_fraction);
    std::vector<TrainConfig> out;
    out.reserve(l1.size() * w1.size() * l2.size() * w2.size() * la.size() * lb.size() * wu.size());
    for (double a : l1)
        for (double b : w1)
            for (double c : l2)
                for (double d : w2)
                    for (double e : la)
                        for (double f : lb)
                            for (double g : wu) {
                                TrainConfig cfg = base;
                                cfg.stage1.lr = a;
                                cfg.stage1.weight_decay = b;
                                cfg.stage2.lr = c;
                                cfg.stage2.weight_decay = d;
                                cfg.stage2.lambda1 = e;
                                cfg.stage2.lambda2 = f;
                                cfg.stage2.warmup_fraction = g;
                                out.push_back(std::move(cfg));
                            }
    return out;
}

GridResult grid_search(const GridSpec& spec, const Dataset& dataset) {
    const auto configs = spec.expand();
    if (configs.empty()) throw Error("grid search needs at least one configuration");
    const PreparedData data = prepare_data(spec.base, dataset);

    // Stage 1 depends only on its own optimizer settings; train each variant once.
    std::map<std::pair<double, double>, Stage1Outcome> stage1_cache;
    for (const auto& cfg : configs) {
        const auto key = std::make_pair(cfg.stage1.lr, cfg.stage1.weight_decay);
        if (!stage1_cache.contains(key)) stage1_cache.emplace(key, run_stage1(cfg, data));
    }

    GridResult result;
    result.reports.resize(configs.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= configs.size()) return;
            try {
                const auto& s1 = stage1_cache.at({configs[i].stage1.lr, configs[i].stage1.weight_decay});
                result.reports[i] = run_stage2(configs[i], data, s1).report;
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next = configs.size();
            }
        }
    };
    const int threads = std::max(1, spec.threads);
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    auto better = [&](std::size_t a, std::size_t b) {
        const auto& ra = result.reports[a];
        const auto& rb = result.reports[b];
        if (ra.best_val_auroc != rb.best_val_auroc) return ra.best_val_auroc > rb.best_val_auroc;
        const double sa = configs[a].stage2.lambda1 + configs[a].stage2.lambda2;
        const double sb = configs[b].stage2.lambda1 + configs[b].stage2.lambda2;
        if (sa != sb) return sa < sb;
        if (configs[a].stage2.lr != configs[b].stage2.lr) return configs[a].stage2.lr < configs[b].stage2.lr;
        if (configs[a].stage1.lr != configs[b].stage1.lr) return configs[a].stage1.lr < configs[b].stage1.lr;
        return a < b;
    };
    std::size_t best = 0;
    for (std::size_t i = 1; i < configs.size(); ++i) {
        if (better(i, best)) best = i;
    }
    result.best_index = best;
    result.best = configs[best];
    return result;
}

}  // namespace dynhd
