#include "dynhd/trajectory.hpp"

#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dynhd/error.hpp"
#include "dynhd/io.hpp"

namespace dynhd {

using nlohmann::json;

namespace {

constexpr std::string_view kTokenClassNames[] = {
    "control", "lexical_noise", "boilerplate", "stopword", "subword_fragment", "semantic",
};

// Entropy ceiling tolerance for ln(vocab_size) rounding.
constexpr double kEntropySlack = 1e-9;

json token_to_json(const TokenRecord& tok) {
    return json{{"position", tok.position},
                {"token_text", tok.token_text},
                {"token_class", std::string(to_string(tok.token_class))},
                {"entropy", tok.entropy}};
}

json trajectory_to_json(const RawTrajectory& traj) {
    json steps = json::array();
    for (const auto& step : traj.steps) {
        json tokens = json::array();
        for (const auto& tok : step.tokens) tokens.push_back(token_to_json(tok));
        steps.push_back(json{{"step", step.step}, {"tokens", std::move(tokens)}});
    }
    return json{{"id", traj.id},
                {"question", traj.question},
                {"response", traj.response},
                {"query_embedding", traj.query_embedding},
                {"label", std::string(to_string(traj.label))},
                {"steps", std::move(steps)},
                {"meta", traj.meta}};
}

json header_to_json(const DatasetHeader& h) {
    json j{{"schema_version", h.schema_version}, {"d_q", h.d_q}, {"T", h.T}, {"l", h.l}};
    if (h.vocab_size) j["vocab_size"] = *h.vocab_size;
    return j;
}

DatasetHeader header_from_json(const json& j) {
    DatasetHeader h;
    h.schema_version = j.at("schema_version").get<std::string>();
    h.d_q = j.at("d_q").get<int>();
    h.T = j.at("T").get<int>();
    h.l = j.at("l").get<int>();
    if (auto it = j.find("vocab_size"); it != j.end() && !it->is_null()) {
        h.vocab_size = it->get<int>();
    }
    return h;
}

RawTrajectory trajectory_from_json(const json& j) {
    RawTrajectory t;
    t.id = j.at("id").get<std::string>();
    t.question = j.value("question", std::string{});
    t.response = j.value("response", std::string{});
    t.query_embedding = j.at("query_embedding").get<std::vector<double>>();
    t.label = label_from_string(j.at("label").get<std::string>());
    for (const auto& js : j.at("steps")) {
        StepRecord step;
        step.step = js.at("step").get<int>();
        for (const auto& jt : js.at("tokens")) {
            TokenRecord tok;
            tok.position = jt.at("position").get<int>();
            tok.token_text = jt.value("token_text", std::string{});
            tok.token_class = token_class_from_string(jt.value("token_class", std::string("semantic")));
            tok.entropy = jt.at("entropy").get<double>();
            step.tokens.push_back(std::move(tok));
        }
        t.steps.push_back(std::move(step));
    }
    if (auto it = j.find("meta"); it != j.end() && !it->is_null()) {
        t.meta = it->get<std::map<std::string, std::string>>();
    }
    return t;
}

}  // namespace

std::string_view to_string(TokenClass c) {
    return kTokenClassNames[static_cast<std::size_t>(c)];
}

TokenClass token_class_from_string(std::string_view s) {
    for (std::size_t i = 0; i < kTokenClassCount; ++i) {
        if (kTokenClassNames[i] == s) return static_cast<TokenClass>(i);
    }
    throw ValidationError("unknown token_class '" + std::string(s) + "'");
}

std::string_view to_string(Label l) {
    switch (l) {
        case Label::factual: return "factual";
        case Label::hallucinated: return "hallucinated";
        case Label::unlabeled: return "unlabeled";
    }
    return "unlabeled";
}

Label label_from_string(std::string_view s) {
    if (s == "factual" || s == "0") return Label::factual;
    if (s == "hallucinated" || s == "1") return Label::hallucinated;
    if (s == "unlabeled") return Label::unlabeled;
    throw ValidationError("unknown label '" + std::string(s) + "'");
}

void validate_header(const DatasetHeader& h) {
    if (h.d_q <= 0) throw ValidationError("header d_q must be > 0");
    if (h.T < 1) throw ValidationError("header T must be >= 1");
    if (h.l < 1) throw ValidationError("header l must be >= 1");
    if (h.vocab_size && *h.vocab_size < 2) throw ValidationError("header vocab_size must be >= 2");
}

void validate_trajectory(const DatasetHeader& h, const RawTrajectory& traj) {
    const std::string where = "trajectory '" + traj.id + "': ";
    if (traj.query_embedding.size() != static_cast<std::size_t>(h.d_q)) {
        throw ValidationError(where + "query_embedding has length " +
                              std::to_string(traj.query_embedding.size()) + ", header d_q is " +
                              std::to_string(h.d_q) + " (dimension mismatch)");
    }
    for (double v : traj.query_embedding) {
        if (!std::isfinite(v)) throw ValidationError(where + "query_embedding has a non-finite value");
    }
    for (std::size_t j = 1; j < traj.steps.size(); ++j) {
        if (traj.steps[j].step >= traj.steps[j - 1].step) {
            throw ValidationError(where + "steps not descending");
        }
    }
    if (traj.steps.size() != static_cast<std::size_t>(h.T) + 1) {
        throw ValidationError(where + "expected " + std::to_string(h.T + 1) + " steps, found " +
                              std::to_string(traj.steps.size()));
    }
    if (traj.steps.front().step != h.T || traj.steps.back().step != 0) {
        throw ValidationError(where + "steps must run from T=" + std::to_string(h.T) + " down to 0");
    }
    const double ceiling = h.vocab_size ? std::log(static_cast<double>(*h.vocab_size)) + kEntropySlack
                                        : std::numeric_limits<double>::infinity();
    for (const auto& step : traj.steps) {
        if (step.tokens.size() != static_cast<std::size_t>(h.l)) {
            throw ValidationError(where + "step " + std::to_string(step.step) + " has " +
                                  std::to_string(step.tokens.size()) + " tokens, header l is " +
                                  std::to_string(h.l));
        }
        std::vector<bool> seen(static_cast<std::size_t>(h.l) + 1, false);
        for (const auto& tok : step.tokens) {
            if (tok.position < 1 || tok.position > h.l) {
                throw ValidationError(where + "position " + std::to_string(tok.position) +
                                      " outside [1, l] at step " + std::to_string(step.step));
            }
            if (seen[static_cast<std::size_t>(tok.position)]) {
                throw ValidationError(where + "duplicate position " + std::to_string(tok.position) +
                                      " at step " + std::to_string(step.step));
            }
            seen[static_cast<std::size_t>(tok.position)] = true;
            if (!std::isfinite(tok.entropy) || tok.entropy < 0.0) {
                throw ValidationError(where + "entropy must be finite and >= 0 at step " +
                                      std::to_string(step.step));
            }
            if (tok.entropy > ceiling) {
                throw ValidationError(where + "entropy exceeds ln(vocab_size) at step " +
                                      std::to_string(step.step));
            }
        }
    }
}

Dataset parse_dataset(std::istream& in) {
    Dataset ds;
    std::string line;
    std::size_t lineno = 0;
    bool have_header = false;
    std::set<std::string> ids;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        try {
            const json j = json::parse(line);
            if (!have_header) {
                ds.header = header_from_json(j);
                validate_header(ds.header);
                have_header = true;
                continue;
            }
            RawTrajectory traj = trajectory_from_json(j);
            validate_trajectory(ds.header, traj);
            if (!ids.insert(traj.id).second) {
                throw ValidationError("duplicate trajectory id '" + traj.id + "'");
            }
            ds.trajectories.push_back(std::move(traj));
        } catch (const ValidationError& e) {
            throw ValidationError(e.what(), lineno);
        } catch (const json::exception& e) {
            throw ValidationError(std::string("malformed record: ") + e.what(), lineno);
        }
    }
    if (!have_header) throw ValidationError("missing header record", lineno == 0 ? 1 : lineno);
    return ds;
}

Dataset read_dataset(const std::string& path) {
    std::istringstream in(io::read_file(path));
    return parse_dataset(in);
}

void write_dataset(const DatasetHeader& header, const std::vector<RawTrajectory>& trajectories,
                   std::ostream& out) {
    validate_header(header);
    for (const auto& t : trajectories) validate_trajectory(header, t);
    out << header_to_json(header).dump() << '\n';
    for (const auto& t : trajectories) out << trajectory_to_json(t).dump() << '\n';
}

void write_dataset(const DatasetHeader& header, const std::vector<RawTrajectory>& trajectories,
                   const std::string& path) {
    std::ostringstream buf;
    write_dataset(header, trajectories, buf);
    io::write_file(path, buf.str());
}

}  // namespace dynhd
