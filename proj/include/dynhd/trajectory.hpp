#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dynhd {

/// Category assigned to a token at capture time. Everything except
/// `semantic` belongs to one of the five ignore categories.
enum class TokenClass {
    control,
    lexical_noise,
    boilerplate,
    stopword,
    subword_fragment,
    semantic,
};

inline constexpr std::size_t kTokenClassCount = 6;

std::string_view to_string(TokenClass c);
TokenClass token_class_from_string(std::string_view s);

enum class Label {
    factual = 0,
    hallucinated = 1,
    unlabeled = 2,
};

std::string_view to_string(Label l);
Label label_from_string(std::string_view s);

struct TokenRecord {
    int position = 1;  // 1-based, unique within a step
    std::string token_text;
    TokenClass token_class = TokenClass::semantic;
    double entropy = 0.0;  // nats
};

struct StepRecord {
    int step = 0;
    std::vector<TokenRecord> tokens;
};

/// One question/response pair with its full denoising entropy field.
/// Steps are stored T, T-1, ..., 0.
struct RawTrajectory {
    std::string id;
    std::string question;
    std::string response;
    std::vector<double> query_embedding;
    Label label = Label::unlabeled;
    std::vector<StepRecord> steps;
    std::map<std::string, std::string> meta;

    int num_steps() const { return steps.empty() ? -1 : steps.front().step; }
};

struct DatasetHeader {
    int d_q = 1;
    int T = 1;
    int l = 1;
    std::optional<int> vocab_size;
    std::string schema_version = "dynhd-trajectory/1";
};

struct Dataset {
    DatasetHeader header;
    std::vector<RawTrajectory> trajectories;
};

/// Throws ValidationError when the header invariants do not hold.
void validate_header(const DatasetHeader& header);

/// Throws ValidationError describing the first invariant the trajectory breaks.
void validate_trajectory(const DatasetHeader& header, const RawTrajectory& traj);

/// Parse a dataset from line-delimited JSON. Errors carry the 1-based line.
Dataset parse_dataset(std::istream& in);

/// Read a dataset file. Gzip-compressed files are decompressed transparently.
Dataset read_dataset(const std::string& path);

void write_dataset(const DatasetHeader& header, const std::vector<RawTrajectory>& trajectories,
                   std::ostream& out);

/// Validates everything first; nothing is written if any record is invalid.
/// A path ending in ".gz" is written gzip-compressed.
void write_dataset(const DatasetHeader& header, const std::vector<RawTrajectory>& trajectories,
                   const std::string& path);

}  // namespace dynhd
