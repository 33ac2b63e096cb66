#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "dynhd/error.hpp"
#include "dynhd/io.hpp"
#include "dynhd/trajectory.hpp"
#include "support.hpp"

using namespace dynhd;

namespace {

RawTrajectory small_trajectory() {
    RawTrajectory r;
    r.id = "s1";
    r.question = "Capital of Peru?";
    r.response = "Lima";
    r.query_embedding = {0.25, -1.5};
    r.label = Label::hallucinated;
    r.meta = {{"model", "toy"}, {"capture_point", "pre_remask"}};
    for (int t = 2; t >= 0; --t) {
        StepRecord s{t, {}};
        s.tokens.push_back({1, "Lima", TokenClass::semantic, 0.1 * t + 0.123456789012});
        s.tokens.push_back({2, "<|endoftext|>", TokenClass::control, 1.0 / 3.0});
        s.tokens.push_back({3, ".", TokenClass::lexical_noise, 0.0});
        r.steps.push_back(s);
    }
    return r;
}

DatasetHeader small_header() { return {.d_q = 2, .T = 2, .l = 3, .vocab_size = 100}; }

std::string serialize(const DatasetHeader& h, const std::vector<RawTrajectory>& t) {
    std::ostringstream out;
    write_dataset(h, t, out);
    return out.str();
}

Dataset parse(const std::string& text) {
    std::istringstream in(text);
    return parse_dataset(in);
}

}  // namespace

TEST_CASE("round trip reproduces every field") {
    const auto h = small_header();
    const auto r = small_trajectory();
    const auto ds = parse(serialize(h, {r}));
    CHECK(ds.header.d_q == 2);
    CHECK(ds.header.T == 2);
    CHECK(ds.header.l == 3);
    CHECK(ds.header.vocab_size == 100);
    REQUIRE(ds.trajectories.size() == 1);
    const auto& b = ds.trajectories[0];
    CHECK(b.id == r.id);
    CHECK(b.question == r.question);
    CHECK(b.label == Label::hallucinated);
    CHECK(b.meta == r.meta);
    CHECK(b.query_embedding == r.query_embedding);
    for (std::size_t s = 0; s < 3; ++s) {
        for (std::size_t k = 0; k < 3; ++k) {
            const auto& x = r.steps[s].tokens[k];
            const auto& y = b.steps[s].tokens[k];
            CHECK(x.entropy == y.entropy);
            CHECK(x.token_text == y.token_text);
            CHECK(x.token_class == y.token_class);
            CHECK(x.position == y.position);
        }
    }
}

TEST_CASE("empty trajectory list writes the header line only") {
    const auto text = serialize(small_header(), {});
    CHECK(std::count(text.begin(), text.end(), '\n') == 1);
    CHECK(parse(text).trajectories.empty());
}

TEST_CASE("one trajectory with three steps and two tokens per step is a two-line file") {
    auto r = testing::constant_trajectory("x", 2, {0.5, 0.7}, 2);
    const DatasetHeader h{.d_q = 2, .T = 2, .l = 2};
    const auto text = serialize(h, {r});
    CHECK(std::count(text.begin(), text.end(), '\n') == 2);
    CHECK(parse(text).trajectories.size() == 1);
}

TEST_CASE("ascending steps are rejected") {
    auto r = small_trajectory();
    std::reverse(r.steps.begin(), r.steps.end());
    CHECK_THROWS_WITH_AS(validate_trajectory(small_header(), r), doctest::Contains("steps not descending"),
                         ValidationError);
}

TEST_CASE("query embedding longer than d_q is a dimension mismatch") {
    auto r = small_trajectory();
    r.query_embedding.push_back(1.0);
    CHECK_THROWS_WITH_AS(validate_trajectory(small_header(), r), doctest::Contains("dimension mismatch"),
                         ValidationError);
}

TEST_CASE("negative entropy is rejected before anything is written") {
    auto r = small_trajectory();
    r.steps[1].tokens[0].entropy = -0.1;
    const auto path = testing::temp_path("negative.jsonl");
    std::filesystem::remove(path);
    CHECK_THROWS_AS(write_dataset(small_header(), {r}, path), ValidationError);
    CHECK_FALSE(io::file_exists(path));
}

TEST_CASE("entropy above ln(vocab) is rejected") {
    auto r = small_trajectory();
    r.steps[0].tokens[0].entropy = std::log(100.0) + 1e-6;
    CHECK_THROWS_AS(validate_trajectory(small_header(), r), ValidationError);
}

TEST_CASE("structural violations") {
    const auto h = small_header();
    SUBCASE("wrong step count") {
        auto r = small_trajectory();
        r.steps.pop_back();
        CHECK_THROWS_AS(validate_trajectory(h, r), ValidationError);
    }
    SUBCASE("wrong sequence length") {
        auto r = small_trajectory();
        r.steps[2].tokens.pop_back();
        CHECK_THROWS_AS(validate_trajectory(h, r), ValidationError);
    }
    SUBCASE("duplicate position") {
        auto r = small_trajectory();
        r.steps[0].tokens[1].position = 1;
        CHECK_THROWS_AS(validate_trajectory(h, r), ValidationError);
    }
    SUBCASE("position out of range") {
        auto r = small_trajectory();
        r.steps[0].tokens[2].position = 4;
        CHECK_THROWS_AS(validate_trajectory(h, r), ValidationError);
    }
    SUBCASE("non-finite entropy") {
        auto r = small_trajectory();
        r.steps[0].tokens[0].entropy = std::nan("");
        CHECK_THROWS_AS(validate_trajectory(h, r), ValidationError);
    }
    SUBCASE("bad header") {
        CHECK_THROWS_AS(validate_header({.d_q = 0, .T = 2, .l = 3}), ValidationError);
        CHECK_THROWS_AS(validate_header({.d_q = 2, .T = 0, .l = 3}), ValidationError);
        CHECK_THROWS_AS(validate_header({.d_q = 2, .T = 2, .l = 0}), ValidationError);
    }
}

TEST_CASE("parse errors carry the line number") {
    const auto good = serialize(small_header(), {small_trajectory()});
    SUBCASE("malformed json") {
        try {
            parse(good + "{not json\n");
            FAIL("expected ValidationError");
        } catch (const ValidationError& e) {
            CHECK(e.line() == 3);
            CHECK(std::string(e.what()).rfind("line 3: ", 0) == 0);
        }
    }
    SUBCASE("duplicate id") {
        auto r = small_trajectory();
        const auto text = serialize(small_header(), {r});
        const auto line = text.substr(text.find('\n') + 1);
        try {
            parse(text + line);
            FAIL("expected ValidationError");
        } catch (const ValidationError& e) {
            CHECK(e.line() == 3);
        }
    }
    SUBCASE("invariant violation on a parsed record") {
        auto text = good;
        const auto pos = text.find("\"label\":\"hallucinated\"");
        REQUIRE(pos != std::string::npos);
        text.replace(pos, 22, "\"label\":\"maybe\"");
        CHECK_THROWS_AS(parse(text), ValidationError);
    }
    SUBCASE("missing header") { CHECK_THROWS_AS(parse(""), ValidationError); }
}

TEST_CASE("gzip files are read transparently") {
    const auto path = testing::temp_path("roundtrip.jsonl.gz");
    write_dataset(small_header(), {small_trajectory()}, path);
    const auto raw = io::read_file(path);
    CHECK(raw.find("\"schema_version\"") != std::string::npos);
    const auto ds = read_dataset(path);
    CHECK(ds.trajectories.size() == 1);
    CHECK_THROWS_AS(read_dataset(testing::temp_path("does-not-exist.jsonl")), IoError);
}

TEST_CASE("round trip holds on random reals to 1e-9 relative") {
    nn::Rng rng(11);
    DatasetHeader h{.d_q = 3, .T = 4, .l = 5};
    std::vector<RawTrajectory> all;
    for (int n = 0; n < 20; ++n) {
        RawTrajectory r;
        r.id = "r" + std::to_string(n);
        r.label = static_cast<Label>(n % 3);
        for (int d = 0; d < 3; ++d) r.query_embedding.push_back((nn::uniform01(rng) - 0.5) * 1e3);
        for (int t = 4; t >= 0; --t) {
            StepRecord s{t, {}};
            for (int p = 1; p <= 5; ++p) {
                s.tokens.push_back({p, "tok\"\\\n" + std::to_string(p), static_cast<TokenClass>(p % 6),
                                    nn::uniform01(rng) * std::pow(10.0, -(p % 4))});
            }
            r.steps.push_back(s);
        }
        all.push_back(r);
    }
    const auto back = parse(serialize(h, all)).trajectories;
    REQUIRE(back.size() == all.size());
    for (std::size_t n = 0; n < all.size(); ++n) {
        CHECK(back[n].label == all[n].label);
        for (std::size_t d = 0; d < 3; ++d) {
            CHECK(back[n].query_embedding[d] == doctest::Approx(all[n].query_embedding[d]).epsilon(1e-9));
        }
        for (std::size_t s = 0; s < 5; ++s) {
            for (std::size_t k = 0; k < 5; ++k) {
                CHECK(back[n].steps[s].tokens[k].entropy ==
                      doctest::Approx(all[n].steps[s].tokens[k].entropy).epsilon(1e-9));
                CHECK(back[n].steps[s].tokens[k].token_text == all[n].steps[s].tokens[k].token_text);
            }
        }
    }
}

TEST_CASE("enum string forms") {
    for (std::size_t c = 0; c < kTokenClassCount; ++c) {
        const auto tc = static_cast<TokenClass>(c);
        CHECK(token_class_from_string(to_string(tc)) == tc);
    }
    CHECK(label_from_string("factual") == Label::factual);
    CHECK(label_from_string(to_string(Label::unlabeled)) == Label::unlabeled);
    CHECK_THROWS(label_from_string("nope"));
}
