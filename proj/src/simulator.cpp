#include "dynhd/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "dynhd/error.hpp"
#include "dynhd/evidence.hpp"
#include "dynhd/io.hpp"

namespace dynhd::sim {

using nlohmann::json;

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double normal(Rng& rng) {
    // Box-Muller on our own uniforms keeps the stream identical across standard libraries.
    const double u1 = 1.0 - static_cast<double>(rng() >> 11) * 0x1.0p-53;
    const double u2 = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::string_view mode_name(HallucinationMode m) {
    switch (m) {
        case HallucinationMode::stagnation: return "stagnation";
        case HallucinationMode::rebound: return "rebound";
        case HallucinationMode::mixed: return "mixed";
    }
    return "mixed";
}

HallucinationMode mode_from_name(std::string_view s) {
    if (s == "stagnation") return HallucinationMode::stagnation;
    if (s == "rebound") return HallucinationMode::rebound;
    if (s == "mixed") return HallucinationMode::mixed;
    throw ValidationError("unknown hallucination_mode '" + std::string(s) + "'");
}

json regime_to_json(const RegimeSpec& r) {
    return {{"decay_rate", r.decay_rate},
            {"start_entropy", r.start_entropy},
            {"noise_scale", r.noise_scale},
            {"hallucination_mode", std::string(mode_name(r.hallucination_mode))},
            {"rebound_onset_fraction", r.rebound_onset_fraction},
            {"plateau_level", r.plateau_level},
            {"padding_fraction", r.padding_fraction},
            {"query_cluster_center", r.query_cluster_center},
            {"error_token_fraction", r.error_token_fraction}};
}

RegimeSpec regime_from_json(const json& j) {
    RegimeSpec r;
    r.decay_rate = j.value("decay_rate", r.decay_rate);
    r.start_entropy = j.value("start_entropy", r.start_entropy);
    r.noise_scale = j.value("noise_scale", r.noise_scale);
    r.hallucination_mode = mode_from_name(j.value("hallucination_mode", std::string("mixed")));
    r.rebound_onset_fraction = j.value("rebound_onset_fraction", r.rebound_onset_fraction);
    r.plateau_level = j.value("plateau_level", r.plateau_level);
    r.padding_fraction = j.value("padding_fraction", r.padding_fraction);
    r.query_cluster_center = j.value("query_cluster_center", r.query_cluster_center);
    r.error_token_fraction = j.value("error_token_fraction", r.error_token_fraction);
    return r;
}

struct PaddingToken {
    TokenClass cls;
    const char* text;
};

constexpr PaddingToken kStopwords[] = {{TokenClass::stopword, "the"}, {TokenClass::stopword, "of"},
                                       {TokenClass::stopword, "is"},  {TokenClass::stopword, "a"},
                                       {TokenClass::stopword, "in"},  {TokenClass::stopword, "was"}};
constexpr PaddingToken kPunct[] = {{TokenClass::lexical_noise, "."}, {TokenClass::lexical_noise, ","},
                                   {TokenClass::lexical_noise, "?"}, {TokenClass::lexical_noise, " "}};
constexpr PaddingToken kControl{TokenClass::control, "<|endoftext|>"};
constexpr PaddingToken kBoilerplate{TokenClass::boilerplate, "Answer:"};

PaddingToken draw_padding(Rng& rng) {
    const double u = uniform(rng, 0.0, 1.0);
    if (u < 0.55) return kControl;
    if (u < 0.60) return kBoilerplate;
    if (u < 0.80) return kStopwords[rng() % std::size(kStopwords)];
    return kPunct[rng() % std::size(kPunct)];
}

// Non-semantic tokens: mostly low entropy with occasional vacuous spikes.
double padding_entropy(const PaddingToken& tok, double base, Rng& rng) {
    double e = 0.0;
    switch (tok.cls) {
        case TokenClass::control: e = std::abs(base + 0.35 * normal(rng)); break;
        case TokenClass::boilerplate: e = std::abs(0.2 * normal(rng)); break;
        default: e = uniform(rng, 0.0, 2.0); break;
    }
    if (uniform(rng, 0.0, 1.0) < 0.15) e += uniform(rng, 0.5, 3.0);
    return e;
}

}  // namespace

void RegimeSpec::validate(int d_q) const {
    auto fail = [](const std::string& m) { throw ValidationError("regime: " + m); };
    if (!(decay_rate > 0)) fail("decay_rate must be > 0");
    if (!(start_entropy > 0)) fail("start_entropy must be > 0");
    if (noise_scale < 0) fail("noise_scale must be >= 0");
    if (!(rebound_onset_fraction > 0 && rebound_onset_fraction < 1)) fail("rebound_onset_fraction must lie in (0, 1)");
    if (plateau_level < 0) fail("plateau_level must be >= 0");
    if (start_entropy < plateau_level) fail("start_entropy must be >= plateau_level");
    if (!(padding_fraction >= 0 && padding_fraction < 1)) fail("padding_fraction must lie in [0, 1)");
    if (!(error_token_fraction > 0 && error_token_fraction <= 1)) fail("error_token_fraction must lie in (0, 1]");
    if (query_cluster_center.size() != static_cast<std::size_t>(d_q)) {
        fail("query_cluster_center must have length d_q = " + std::to_string(d_q));
    }
}

double factual_entropy(const RegimeSpec& r, int t, int T) {
    const double p = 1.0 - static_cast<double>(t) / static_cast<double>(T);
    return r.start_entropy * std::exp(-r.decay_rate * p);
}

double hallucinated_entropy(const RegimeSpec& r, HallucinationMode mode, int t, int T) {
    const double p = 1.0 - static_cast<double>(t) / static_cast<double>(T);
    const double onset = r.rebound_onset_fraction;
    if (p < onset) return factual_entropy(r, t, T);
    const double ramp = (p - onset) / (1.0 - onset);
    if (mode == HallucinationMode::rebound) return factual_entropy(r, t, T) + r.plateau_level * ramp;
    const double at_onset = r.start_entropy * std::exp(-r.decay_rate * onset);
    return at_onset + (r.plateau_level - at_onset) * ramp;
}

SimulationConfig SimulationConfig::defaults() {
    SimulationConfig c;
    RegimeSpec a;
    a.decay_rate = 3.0;
    a.start_entropy = 3.0;
    RegimeSpec b;
    b.decay_rate = 2.0;
    b.start_entropy = 2.2;
    b.plateau_level = 0.8;
    a.query_cluster_center.resize(static_cast<std::size_t>(c.d_q));
    b.query_cluster_center.resize(static_cast<std::size_t>(c.d_q));
    for (int i = 0; i < c.d_q; ++i) {
        a.query_cluster_center[static_cast<std::size_t>(i)] = i % 2 == 0 ? 1.0 : 0.0;
        b.query_cluster_center[static_cast<std::size_t>(i)] = i % 2 == 0 ? 0.0 : 1.0;
    }
    c.regimes = {a, b};
    return c;
}

json SimulationConfig::to_json() const {
    json regs = json::array();
    for (const auto& r : regimes) regs.push_back(regime_to_json(r));
    return {{"regimes", std::move(regs)},
            {"n_factual", n_factual},
            {"n_hallucinated", n_hallucinated},
            {"T", T},
            {"l", l},
            {"d_q", d_q},
            {"vocab_size", vocab_size},
            {"padding_jitter", padding_jitter},
            {"query_spread", query_spread},
            {"seed", seed}};
}

SimulationConfig SimulationConfig::from_json(const json& j) {
    SimulationConfig c = defaults();
    try {
        c.n_factual = j.value("n_factual", c.n_factual);
        c.n_hallucinated = j.value("n_hallucinated", c.n_hallucinated);
        c.T = j.value("T", c.T);
        c.l = j.value("l", c.l);
        c.vocab_size = j.value("vocab_size", c.vocab_size);
        c.padding_jitter = j.value("padding_jitter", c.padding_jitter);
        c.query_spread = j.value("query_spread", c.query_spread);
        c.seed = j.value("seed", c.seed);
        const int d_q = j.value("d_q", c.d_q);
        if (auto it = j.find("regimes"); it != j.end()) {
            c.regimes.clear();
            for (const auto& r : *it) c.regimes.push_back(regime_from_json(r));
        } else if (d_q != c.d_q) {
            for (auto& r : c.regimes) r.query_cluster_center.resize(static_cast<std::size_t>(d_q), 0.0);
        }
        c.d_q = d_q;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("simulation config: ") + e.what());
    }
    return c;
}

SimulationConfig SimulationConfig::load(const std::string& path) {
    try {
        return from_json(json::parse(io::read_file(path)));
    } catch (const json::parse_error& e) {
        throw ValidationError("regimes file '" + path + "': " + e.what());
    }
}

Dataset simulate_dataset(const SimulationConfig& cfg) {
    if (cfg.regimes.empty()) throw ValidationError("simulation needs at least one regime");
    if (cfg.n_factual < 1 || cfg.n_hallucinated < 1) throw ValidationError("simulation needs >= 1 sample per class");
    if (cfg.T < 4) throw ValidationError("simulation needs T >= 4");
    if (cfg.l < 1 || cfg.d_q < 1 || cfg.vocab_size < 2) throw ValidationError("simulation needs l, d_q >= 1 and vocab_size >= 2");
    for (const auto& r : cfg.regimes) r.validate(cfg.d_q);

    Dataset ds;
    ds.header = {cfg.d_q, cfg.T, cfg.l, cfg.vocab_size, "dynhd-trajectory/1"};
    const double ceiling = std::log(static_cast<double>(cfg.vocab_size));
    auto clip = [ceiling](double e) { return std::clamp(e, 0.0, ceiling); };

    Rng rng(cfg.seed);
    const int total = cfg.n_factual + cfg.n_hallucinated;
    std::vector<int> labels(static_cast<std::size_t>(total), 0);
    std::fill(labels.begin() + cfg.n_factual, labels.end(), 1);
    std::shuffle(labels.begin(), labels.end(), rng);

    ds.trajectories.reserve(static_cast<std::size_t>(total));
    for (int n = 0; n < total; ++n) {
        const std::size_t regime_index = static_cast<std::size_t>(n) % cfg.regimes.size();
        RegimeSpec r = cfg.regimes[regime_index];
        const bool halluc = labels[static_cast<std::size_t>(n)] == 1;
        Rng srng(cfg.seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(n + 1)));

        HallucinationMode mode = r.hallucination_mode;
        if (mode == HallucinationMode::mixed) {
            mode = uniform(srng, 0.0, 1.0) < 0.5 ? HallucinationMode::stagnation : HallucinationMode::rebound;
        }

        RawTrajectory traj;
        std::ostringstream id;
        id << "sim-" << std::setw(6) << std::setfill('0') << n;
        traj.id = id.str();
        traj.question = "synthetic question " + std::to_string(n);
        traj.label = halluc ? Label::hallucinated : Label::factual;
        traj.meta = {{"source", "dynhd-sim"},
                     {"regime", std::to_string(regime_index)},
                     {"capture_point", "synthetic"},
                     {"hallucination_mode", halluc ? std::string(mode_name(mode)) : std::string("none")}};
        traj.query_embedding.resize(static_cast<std::size_t>(cfg.d_q));
        for (int i = 0; i < cfg.d_q; ++i) {
            traj.query_embedding[static_cast<std::size_t>(i)] =
                r.query_cluster_center[static_cast<std::size_t>(i)] + cfg.query_spread * normal(srng);
        }

        // Per-sample difficulty: jitter the decay law multiplicatively.
        r.decay_rate *= std::exp(0.5 * r.noise_scale * normal(srng));
        r.start_entropy *= std::exp(0.5 * r.noise_scale * normal(srng));
        r.plateau_level = std::min(r.plateau_level, r.start_entropy);

        const double pad = std::clamp(r.padding_fraction + uniform(srng, -cfg.padding_jitter, cfg.padding_jitter), 0.0,
                                      1.0 - 1.0 / cfg.l);
        const int n_sem = std::clamp(static_cast<int>(std::lround(cfg.l * (1.0 - pad))), 1, cfg.l);
        const int n_err = halluc ? std::clamp(static_cast<int>(std::lround(r.error_token_fraction * n_sem)), 1, n_sem) : 0;

        std::vector<double> token_scale(static_cast<std::size_t>(n_sem));
        for (auto& s : token_scale) s = 1.0 + r.noise_scale * uniform(srng, -2.0, 2.0);
        std::vector<PaddingToken> padding;
        std::vector<double> padding_base;
        for (int i = n_sem; i < cfg.l; ++i) {
            padding.push_back(draw_padding(srng));
            padding_base.push_back(uniform(srng, 0.0, 0.8));
        }

        traj.steps.reserve(static_cast<std::size_t>(cfg.T) + 1);
        for (int t = cfg.T; t >= 0; --t) {
            StepRecord step;
            step.step = t;
            step.tokens.reserve(static_cast<std::size_t>(cfg.l));
            const double base = factual_entropy(r, t, cfg.T);
            const double err = halluc ? hallucinated_entropy(r, mode, t, cfg.T) : base;
            for (int i = 0; i < n_sem; ++i) {
                const double law = i < n_err ? err : base;
                const double e = law * token_scale[static_cast<std::size_t>(i)] + r.noise_scale * normal(srng);
                step.tokens.push_back({i + 1, "entity" + std::to_string(i), TokenClass::semantic, clip(e)});
            }
            for (int i = n_sem; i < cfg.l; ++i) {
                const auto& p = padding[static_cast<std::size_t>(i - n_sem)];
                const double e = padding_entropy(p, padding_base[static_cast<std::size_t>(i - n_sem)], srng);
                step.tokens.push_back({i + 1, p.text, p.cls, clip(e)});
            }
            traj.steps.push_back(std::move(step));
        }
        ds.trajectories.push_back(std::move(traj));
    }
    return ds;
}

void emit_plot_csv(const Dataset& dataset, const IgnoreSpec& spec, int k, std::ostream& out) {
    out << "class,t,count,mean_mean,mean_std,max_mean,max_std,topk_mean,topk_std\n";
    if (dataset.trajectories.empty()) return;
    const int T = dataset.header.T;
    out << std::setprecision(17);
    for (Label cls : {Label::factual, Label::hallucinated}) {
        std::vector<std::array<double, 3>> sum(static_cast<std::size_t>(T) + 1, {0, 0, 0});
        std::vector<std::array<double, 3>> sq(static_cast<std::size_t>(T) + 1, {0, 0, 0});
        std::size_t count = 0;
        for (const auto& raw : dataset.trajectories) {
            if (raw.label != cls) continue;
            const auto ev = build_trajectory(raw, spec, k);
            for (std::size_t j = 0; j < ev.size(); ++j) {
                for (int d = 0; d < kEvidenceDim; ++d) {
                    sum[j][static_cast<std::size_t>(d)] += ev.vectors[j][d];
                    sq[j][static_cast<std::size_t>(d)] += ev.vectors[j][d] * ev.vectors[j][d];
                }
            }
            ++count;
        }
        if (count == 0) continue;
        const auto n = static_cast<double>(count);
        for (std::size_t j = 0; j <= static_cast<std::size_t>(T); ++j) {
            out << to_string(cls) << ',' << T - static_cast<int>(j) << ',' << count;
            for (std::size_t d = 0; d < 3; ++d) {
                const double mean = sum[j][d] / n;
                const double var = std::max(0.0, sq[j][d] / n - mean * mean);
                out << ',' << mean << ',' << std::sqrt(var);
            }
            out << '\n';
        }
    }
}

void emit_plot_csv(const Dataset& dataset, const IgnoreSpec& spec, int k, const std::string& path) {
    std::ostringstream buf;
    emit_plot_csv(dataset, spec, k, buf);
    io::write_file(path, buf.str());
}

}  // namespace dynhd::sim
