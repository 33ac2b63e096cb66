#include "dynhd/reference_generator.hpp"

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cmath>
#include <numbers>
#include <numeric>

#include "dynhd/error.hpp"

namespace dynhd {

nn::Vector timestep_embed(int t, int T, int dim) {
    if (dim <= 0 || dim % 2 != 0) throw Error("timestep_embed: dim must be a positive even integer");
    if (T < 1 || t < 0 || t > T) {
        throw Error("timestep_embed: t=" + std::to_string(t) + " outside [0, " + std::to_string(T) + "]");
    }
    const double x = static_cast<double>(t) / static_cast<double>(T);
    nn::Vector e(dim);
    double freq = std::numbers::pi;
    for (int i = 0; i < dim / 2; ++i) {
        e(2 * i) = std::sin(freq * x);
        e(2 * i + 1) = std::cos(freq * x);
        freq *= 2.0;
    }
    return e;
}

ReferenceGenerator ReferenceGenerator::create(int query_dim, const GeneratorArch& arch, std::uint64_t seed) {
    if (query_dim <= 0) throw DimensionError("reference generator needs query_dim > 0");
    ReferenceGenerator g;
    g.query_dim_ = query_dim;
    g.timestep_dim_ = arch.timestep_dim;
    std::vector<int> dims{query_dim + arch.timestep_dim};
    dims.insert(dims.end(), arch.hidden.begin(), arch.hidden.end());
    dims.push_back(kEvidenceDim);
    nn::Rng rng(seed);
    g.net_ = nn::Mlp::create(dims, nn::Activation::relu, nn::Activation::linear, rng, true);
    return g;
}

nn::Matrix ReferenceGenerator::input_rows(std::span<const double> query, int T) const {
    if (query.size() != static_cast<std::size_t>(query_dim_)) {
        throw DimensionError("query embedding has length " + std::to_string(query.size()) + ", generator expects " +
                             std::to_string(query_dim_));
    }
    nn::Matrix rows(T + 1, query_dim_ + timestep_dim_);
    for (int j = 0; j <= T; ++j) {
        for (int c = 0; c < query_dim_; ++c) rows(j, c) = query[static_cast<std::size_t>(c)];
        rows.row(j).tail(timestep_dim_) = timestep_embed(T - j, T, timestep_dim_).transpose();
    }
    return rows;
}

EvidenceVector ReferenceGenerator::predict_reference(std::span<const double> query, int t, int T) const {
    if (query.size() != static_cast<std::size_t>(query_dim_)) {
        throw DimensionError("query embedding has length " + std::to_string(query.size()) + ", generator expects " +
                             std::to_string(query_dim_));
    }
    nn::Matrix row(1, query_dim_ + timestep_dim_);
    for (int c = 0; c < query_dim_; ++c) row(0, c) = query[static_cast<std::size_t>(c)];
    row.row(0).tail(timestep_dim_) = timestep_embed(t, T, timestep_dim_).transpose();
    const nn::Matrix out = net_.forward(row);
    EvidenceVector v;
    for (int d = 0; d < kEvidenceDim; ++d) v[d] = std::max(0.0, out(0, d));
    return v;
}

EvidenceTrajectory ReferenceGenerator::predict_trajectory(std::span<const double> query, int T) const {
    const nn::Matrix out = net_.forward(input_rows(query, T));
    EvidenceTrajectory traj;
    traj.T = T;
    traj.vectors.resize(static_cast<std::size_t>(T) + 1);
    traj.kept_counts.assign(static_cast<std::size_t>(T) + 1, 0);
    for (int j = 0; j <= T; ++j) {
        for (int d = 0; d < kEvidenceDim; ++d) traj.vectors[static_cast<std::size_t>(j)][d] = std::max(0.0, out(j, d));
    }
    return traj;
}

nlohmann::json ReferenceGenerator::to_json() const {
    return {{"query_dim", query_dim_},
            {"timestep_dim", timestep_dim_},
            {"epochs_trained", epochs_trained},
            {"final_loss", final_loss},
            {"layers", net_.to_json()}};
}

ReferenceGenerator ReferenceGenerator::from_json(const nlohmann::json& j) {
    ReferenceGenerator g;
    g.query_dim_ = j.at("query_dim").get<int>();
    g.timestep_dim_ = j.at("timestep_dim").get<int>();
    g.epochs_trained = j.value("epochs_trained", 0);
    g.final_loss = j.value("final_loss", 0.0);
    g.net_ = nn::Mlp::from_json(j.at("layers"));
    if (g.net_.in_dim() != g.query_dim_ + g.timestep_dim_ || g.net_.out_dim() != kEvidenceDim) {
        throw DimensionError("generator checkpoint shape mismatch");
    }
    return g;
}

double reference_loss(const ReferenceGenerator& gen, std::span<const EvidenceSample* const> samples,
                      std::vector<nn::LayerGrads>* grads) {
    std::size_t rows = 0;
    std::size_t factual = 0;
    for (const auto* s : samples) {
        if (s->label != Label::factual) continue;
        rows += s->evidence.size();
        ++factual;
    }
    if (factual == 0) return 0.0;

    const int width = gen.query_dim() + gen.timestep_dim();
    nn::Matrix x(static_cast<Eigen::Index>(rows), width);
    nn::Matrix target(static_cast<Eigen::Index>(rows), kEvidenceDim);
    std::vector<double> row_weight(rows);
    Eigen::Index r = 0;
    for (const auto* s : samples) {
        if (s->label != Label::factual) continue;
        const int T = s->evidence.T;
        x.middleRows(r, T + 1) = gen.input_rows(s->query, T);
        // Each sample contributes (1/T) * sum over its T+1 steps; mean over samples and components.
        const double w = 1.0 / (static_cast<double>(T) * static_cast<double>(factual) * kEvidenceDim);
        for (int j = 0; j <= T; ++j) {
            const auto& a = s->evidence.vectors[static_cast<std::size_t>(j)];
            for (int d = 0; d < kEvidenceDim; ++d) target(r + j, d) = a[d];
            row_weight[static_cast<std::size_t>(r + j)] = w;
        }
        r += T + 1;
    }

    nn::MlpCache cache;
    const nn::Matrix pred = gen.net().forward(x, grads ? &cache : nullptr);
    double loss = 0.0;
    nn::Matrix grad_out(pred.rows(), pred.cols());
    for (Eigen::Index i = 0; i < pred.rows(); ++i) {
        const double w = row_weight[static_cast<std::size_t>(i)];
        for (Eigen::Index d = 0; d < pred.cols(); ++d) {
            const double diff = pred(i, d) - target(i, d);
            loss += w * nn::smooth_l1_elem(diff);
            grad_out(i, d) = w * nn::smooth_l1_elem_grad(diff);
        }
    }
    if (grads) gen.net().backward(cache, grad_out, *grads);
    return loss;
}

std::vector<double> train_reference(ReferenceGenerator& gen, const std::vector<EvidenceSample>& samples,
                                    const Stage1Config& cfg, std::uint64_t seed) {
    if (cfg.epochs < 0 || cfg.batch_size < 1) throw TrainingError("stage 1: invalid epochs or batch size");
    std::vector<const EvidenceSample*> factual;
    for (const auto& s : samples) {
        if (s.label == Label::hallucinated) {
            throw TrainingError("stage 1 trains on factual samples only; got hallucinated sample '" + s.id + "'");
        }
        if (s.label == Label::factual) factual.push_back(&s);
    }
    if (factual.empty()) throw TrainingError("stage 1: no factual samples");
    // Canonical order, so the seeded shuffle alone decides the batches.
    std::stable_sort(factual.begin(), factual.end(),
                     [](const EvidenceSample* a, const EvidenceSample* b) { return a->id < b->id; });

    nn::AdamW opt({.lr = cfg.lr, .weight_decay = cfg.weight_decay});
    std::vector<nn::LayerGrads> grads = gen.net().zero_grads();
    std::vector<nn::ParamBlock> params;
    gen.net().bind(grads, params);

    nn::Rng rng(seed);
    std::vector<double> history;
    history.reserve(static_cast<std::size_t>(cfg.epochs) + 1);
    history.push_back(reference_loss(gen, factual));

    std::vector<std::size_t> order(factual.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<const EvidenceSample*> batch;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            batch.clear();
            for (std::size_t i = start; i < stop; ++i) batch.push_back(factual[order[i]]);
            nn::zero(grads);
            const double loss = reference_loss(gen, batch, &grads);
            if (!std::isfinite(loss)) throw TrainingError("stage 1: non-finite loss");
            opt.step(params);
            epoch_loss += loss * static_cast<double>(batch.size());
        }
        // Sample-weighted mean of the mini-batch losses seen during the epoch.
        history.push_back(epoch_loss / static_cast<double>(factual.size()));
    }
    gen.epochs_trained += cfg.epochs;
    gen.final_loss = history.back();
    return history;
}

std::vector<double> hashed_query_embedding(std::string_view text, int dim) {
    if (dim < 1) throw DimensionError("hashed embedding needs dim >= 1");
    std::vector<double> out(static_cast<std::size_t>(dim), 0.0);
    auto add_word = [&](std::uint64_t h) {
        out[static_cast<std::size_t>(h % static_cast<std::uint64_t>(dim))] += (h >> 63) ? -1.0 : 1.0;
    };
    constexpr std::uint64_t kOffset = 14695981039346656037ULL;
    constexpr std::uint64_t kPrime = 1099511628211ULL;
    std::uint64_t h = kOffset;
    bool in_word = false;
    for (char c : text) {
        const auto u = static_cast<unsigned char>(c);
        if (std::isalnum(u) || u >= 0x80) {
            h = (h ^ static_cast<std::uint64_t>(std::tolower(u))) * kPrime;
            in_word = true;
        } else if (in_word) {
            add_word(h);
            h = kOffset;
            in_word = false;
        }
    }
    if (in_word) add_word(h);
    double norm = 0.0;
    for (double v : out) norm += v * v;
    if (norm > 0.0) {
        norm = std::sqrt(norm);
        for (double& v : out) v /= norm;
    }
    return out;
}

}  // namespace dynhd
