#pragma once

#include <array>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dynhd/trajectory.hpp"

namespace dynhd {

/// Rule set describing which tokens carry no hallucination signal.
///
/// Text rules are applied in the fixed order control -> boilerplate ->
/// punctuation -> stopword -> subword. When `use_token_class` is set, a
/// capture-time tag other than `semantic` wins over the text rules.
/// A default-constructed spec filters nothing.
struct IgnoreSpec {
    std::set<std::string, std::less<>> control_tokens;
    std::set<std::string, std::less<>> boilerplate_phrases;
    std::set<std::string, std::less<>> stopwords;  // lowercase
    bool filter_punctuation = false;
    /// Continuation-marker prefixes, e.g. "##" for WordPiece.
    std::vector<std::string> subword_prefixes;
    /// Word-start markers, e.g. "▁" for SentencePiece. When non-empty, a
    /// word-like token lacking every marker is treated as a continuation piece.
    std::vector<std::string> word_start_markers;
    bool use_token_class = false;

    /// The shipped defaults: English stopwords, common diffusion-LM specials,
    /// QA boilerplate, punctuation rule, "##" prefix, and capture tags honoured.
    static IgnoreSpec defaults();

    static IgnoreSpec from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    static IgnoreSpec load(const std::string& path);

    bool operator==(const IgnoreSpec&) const = default;
};

struct FilterDecision {
    bool kept = true;
    /// `semantic` when kept, otherwise the ignore category that matched.
    TokenClass category = TokenClass::semantic;

    bool operator==(const FilterDecision&) const = default;
};

FilterDecision classify_token(const TokenRecord& token, const IgnoreSpec& spec);

/// Positions (1-based, in storage order) whose tokens survive the filter.
std::vector<int> valid_positions(const StepRecord& step, const IgnoreSpec& spec);

/// Per-category token counts over every step of every trajectory.
struct FilterCounts {
    std::array<std::size_t, kTokenClassCount> by_class{};
    std::size_t total = 0;

    std::size_t kept() const { return by_class[static_cast<std::size_t>(TokenClass::semantic)]; }
};

FilterCounts count_filtered(const std::vector<RawTrajectory>& trajectories, const IgnoreSpec& spec);

}  // namespace dynhd
