#include "dynhd/token_filter.hpp"

#include <algorithm>
#include <cctype>

#include "dynhd/error.hpp"
#include "dynhd/io.hpp"

namespace dynhd {

namespace {

// Classic English stopword list (NLTK's 179 entries).
constexpr const char* kDefaultStopwords[] = {
    "i", "me", "my", "myself", "we", "our", "ours", "ourselves", "you", "you're", "you've", "you'll",
    "you'd", "your", "yours", "yourself", "yourselves", "he", "him", "his", "himself", "she", "she's",
    "her", "hers", "herself", "it", "it's", "its", "itself", "they", "them", "their", "theirs",
    "themselves", "what", "which", "who", "whom", "this", "that", "that'll", "these", "those", "am",
    "is", "are", "was", "were", "be", "been", "being", "have", "has", "had", "having", "do", "does",
    "did", "doing", "a", "an", "the", "and", "but", "if", "or", "because", "as", "until", "while",
    "of", "at", "by", "for", "with", "about", "against", "between", "into", "through", "during",
    "before", "after", "above", "below", "to", "from", "up", "down", "in", "out", "on", "off", "over",
    "under", "again", "further", "then", "once", "here", "there", "when", "where", "why", "how",
    "all", "any", "both", "each", "few", "more", "most", "other", "some", "such", "no", "nor", "not",
    "only", "own", "same", "so", "than", "too", "very", "s", "t", "can", "will", "just", "don",
    "don't", "should", "should've", "now", "d", "ll", "m", "o", "re", "ve", "y", "ain", "aren",
    "aren't", "couldn", "couldn't", "didn", "didn't", "doesn", "doesn't", "hadn", "hadn't", "hasn",
    "hasn't", "haven", "haven't", "isn", "isn't", "ma", "mightn", "mightn't", "mustn", "mustn't",
    "needn", "needn't", "shan", "shan't", "shouldn", "shouldn't", "wasn", "wasn't", "weren",
    "weren't", "won", "won't", "wouldn", "wouldn't",
};

constexpr const char* kDefaultControlTokens[] = {
    "<|endoftext|>", "<|eot_id|>", "<|mdm_mask|>", "<|im_start|>", "<|im_end|>",
    "<|begin_of_text|>", "<|end_of_text|>", "<|start_header_id|>", "<|end_header_id|>",
    "[PAD]", "[MASK]", "[CLS]", "[SEP]", "[UNK]", "<pad>", "<mask>", "<unk>", "<s>", "</s>",
    "<|mask|>", "<|pad|>",
};

constexpr const char* kDefaultBoilerplate[] = {
    "Answer:", "Answer", "answer:", "Question:", "Q:", "A:", "Response:", "Final answer:",
    "The answer is", "The answer is:",
};

// Word-start glyphs of SentencePiece ("▁") and byte-level BPE ("Ġ").
constexpr std::string_view kMarkerGlyphs[] = {"\xE2\x96\x81", "\xC4\xA0"};

bool is_ascii_space(unsigned char c) { return std::isspace(c) != 0; }

std::string_view trim(std::string_view s) {
    while (!s.empty() && is_ascii_space(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && is_ascii_space(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

// Whitespace and leading word-start glyphs removed.
std::string_view normalize(std::string_view s) {
    s = trim(s);
    bool stripped = true;
    while (stripped) {
        stripped = false;
        for (auto glyph : kMarkerGlyphs) {
            if (s.starts_with(glyph)) {
                s.remove_prefix(glyph.size());
                stripped = true;
            }
        }
    }
    return trim(s);
}

bool is_lexical_noise(std::string_view raw) {
    if (raw.empty()) return false;
    const auto core = normalize(raw);
    return std::all_of(core.begin(), core.end(), [](char c) {
        const auto u = static_cast<unsigned char>(c);
        return u < 0x80 && (std::ispunct(u) != 0 || std::isspace(u) != 0);
    });
}

std::string lowercase(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); });
    return out;
}

bool is_subword_fragment(std::string_view raw, const IgnoreSpec& spec) {
    for (const auto& prefix : spec.subword_prefixes) {
        if (!prefix.empty() && raw.starts_with(prefix) && raw.size() > prefix.size()) return true;
    }
    if (!spec.word_start_markers.empty() && !raw.empty() &&
        std::isalnum(static_cast<unsigned char>(raw.front())) != 0) {
        return std::none_of(spec.word_start_markers.begin(), spec.word_start_markers.end(),
                            [&](const std::string& m) { return raw.starts_with(m); });
    }
    return false;
}

template <class Range>
std::set<std::string, std::less<>> to_set(const Range& r) {
    return {std::begin(r), std::end(r)};
}

}  // namespace

IgnoreSpec IgnoreSpec::defaults() {
    IgnoreSpec spec;
    spec.control_tokens = to_set(kDefaultControlTokens);
    spec.boilerplate_phrases = to_set(kDefaultBoilerplate);
    spec.stopwords = to_set(kDefaultStopwords);
    spec.filter_punctuation = true;
    spec.subword_prefixes = {"##"};
    spec.use_token_class = true;
    return spec;
}

IgnoreSpec IgnoreSpec::from_json(const nlohmann::json& j) {
    IgnoreSpec spec = j.value("defaults", false) ? defaults() : IgnoreSpec{};
    auto read_set = [&](const char* key, std::set<std::string, std::less<>>& dst) {
        if (auto it = j.find(key); it != j.end()) {
            const auto items = it->get<std::vector<std::string>>();
            dst = {items.begin(), items.end()};
        }
    };
    read_set("control_tokens", spec.control_tokens);
    read_set("boilerplate_phrases", spec.boilerplate_phrases);
    read_set("stopwords", spec.stopwords);
    if (auto it = j.find("stopwords"); it != j.end()) {
        std::set<std::string, std::less<>> lowered;
        for (const auto& w : spec.stopwords) lowered.insert(lowercase(w));
        spec.stopwords = std::move(lowered);
    }
    spec.filter_punctuation = j.value("filter_punctuation", spec.filter_punctuation);
    if (auto it = j.find("subword_prefixes"); it != j.end()) {
        spec.subword_prefixes = it->get<std::vector<std::string>>();
    }
    if (auto it = j.find("word_start_markers"); it != j.end()) {
        spec.word_start_markers = it->get<std::vector<std::string>>();
    }
    spec.use_token_class = j.value("use_token_class", spec.use_token_class);
    return spec;
}

nlohmann::json IgnoreSpec::to_json() const {
    return nlohmann::json{{"control_tokens", control_tokens},
                          {"boilerplate_phrases", boilerplate_phrases},
                          {"stopwords", stopwords},
                          {"filter_punctuation", filter_punctuation},
                          {"subword_prefixes", subword_prefixes},
                          {"word_start_markers", word_start_markers},
                          {"use_token_class", use_token_class}};
}

IgnoreSpec IgnoreSpec::load(const std::string& path) {
    try {
        return from_json(nlohmann::json::parse(io::read_file(path)));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("ignore spec '" + path + "': " + e.what());
    }
}

FilterDecision classify_token(const TokenRecord& token, const IgnoreSpec& spec) {
    if (spec.use_token_class && token.token_class != TokenClass::semantic) {
        return {false, token.token_class};
    }
    const std::string_view raw = token.token_text;
    const std::string_view trimmed = trim(raw);
    if (spec.control_tokens.contains(raw) || spec.control_tokens.contains(trimmed)) {
        return {false, TokenClass::control};
    }
    const std::string_view core = normalize(raw);
    if (spec.boilerplate_phrases.contains(trimmed) || spec.boilerplate_phrases.contains(core)) {
        return {false, TokenClass::boilerplate};
    }
    if (spec.filter_punctuation && is_lexical_noise(raw)) {
        return {false, TokenClass::lexical_noise};
    }
    if (!spec.stopwords.empty() && !core.empty() && spec.stopwords.contains(lowercase(core))) {
        return {false, TokenClass::stopword};
    }
    if (is_subword_fragment(raw, spec)) {
        return {false, TokenClass::subword_fragment};
    }
    return {};
}

std::vector<int> valid_positions(const StepRecord& step, const IgnoreSpec& spec) {
    std::vector<int> out;
    out.reserve(step.tokens.size());
    for (const auto& tok : step.tokens) {
        if (classify_token(tok, spec).kept) out.push_back(tok.position);
    }
    return out;
}

FilterCounts count_filtered(const std::vector<RawTrajectory>& trajectories, const IgnoreSpec& spec) {
    FilterCounts counts;
    for (const auto& traj : trajectories) {
        for (const auto& step : traj.steps) {
            for (const auto& tok : step.tokens) {
                ++counts.by_class[static_cast<std::size_t>(classify_token(tok, spec).category)];
                ++counts.total;
            }
        }
    }
    return counts;
}

}  // namespace dynhd
