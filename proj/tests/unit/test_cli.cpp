#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "cli.hpp"
#include "dynhd/io.hpp"
#include "support.hpp"

using namespace dynhd;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run(std::vector<std::string> args) {
    args.insert(args.begin(), "dynhd");
    std::ostringstream out, err;
    const int code = cli::dispatch(args, out, err);
    return {code, out.str(), err.str()};
}

std::string write(const std::string& name, const std::string& text) {
    const auto path = testing::temp_path(name);
    io::write_file(path, text);
    return path;
}

const char* kSmallSim = R"({"n_factual": 60, "n_hallucinated": 60, "T": 8, "l": 10, "seed": 3})";
const char* kSmallTrain = R"({
  "splits": {"train": 80, "validation": 20, "test": 20},
  "stage1": {"epochs": 3, "batch_size": 32},
  "stage2": {"epochs": 2, "batch_size": 32},
  "generator": {"hidden": [8]},
  "detector": {"hidden": 8, "attention_dim": 4, "head_hidden": 4}
})";

std::string small_data() {
    static const std::string path = [] {
        const auto p = testing::temp_path("cli-data.jsonl.gz");
        const auto sim = write("cli-sim.json", kSmallSim);
        REQUIRE(run({"simulate", "--regimes", sim, "--out", p}).code == 0);
        return p;
    }();
    return path;
}

}  // namespace

TEST_CASE("help and usage errors") {
    const auto help = run({"--help"});
    CHECK(help.code == 0);
    CHECK(help.out.find("simulate") != std::string::npos);
    CHECK(run({"frobnicate"}).code == cli::kUsage);
    CHECK(run({}).code == cli::kUsage);
    const auto unknown = run({"evidence", "--data", "x", "--bogus"});
    CHECK(unknown.code == cli::kUsage);
    CHECK(unknown.err.rfind("dynhd: error code=2 kind=usage: ", 0) == 0);
    CHECK(std::count(unknown.err.begin(), unknown.err.end(), '\n') == 1);
    CHECK(run({"train", "--data", "x"}).code == cli::kUsage);
}

TEST_CASE("distinct exit codes for missing files and invalid data") {
    const auto missing = run({"evidence", "--data", testing::temp_path("nope.jsonl")});
    CHECK(missing.code == cli::kIo);
    CHECK(missing.err.find("kind=io") != std::string::npos);

    const auto bad = write("bad.jsonl", "{\"d_q\":2,\"T\":2,\"l\":3,\"schema_version\":\"dynhd-trajectory/1\"}\n{\"id\":1}\n");
    const auto invalid = run({"evidence", "--data", bad});
    CHECK(invalid.code == cli::kValidation);
    CHECK(invalid.err.find("line 2") != std::string::npos);

    const auto bad_cfg = write("bad-config.json", R"({"stage2": {"warmup_fraction": 3}})");
    CHECK(run({"train", "--data", small_data(), "--config", bad_cfg, "--out", testing::temp_path("x")}).code ==
          cli::kValidation);
}

TEST_CASE("evidence and filter stats") {
    const auto r = run({"evidence", "--data", small_data()});
    CHECK(r.code == 0);
    CHECK(r.out.rfind("id,t,mean,max,topk,kept_count\n", 0) == 0);
    CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 1 + 120 * 9);
    const auto by = run({"evidence", "--data", small_data(), "--by-class"});
    CHECK(by.out.rfind("class,t,count", 0) == 0);
    const auto stats = run({"filter-stats", "--data", small_data()});
    CHECK(stats.code == 0);
    CHECK(stats.out.find("control,") != std::string::npos);
    CHECK(stats.out.find("total,10800,1") != std::string::npos);
    const auto none = run({"filter-stats", "--data", small_data(), "--no-filter"});
    CHECK(none.out.find("kept,10800,1") != std::string::npos);
}

TEST_CASE("data directory from the environment") {
    const auto dir = std::filesystem::path(small_data()).parent_path().string();
    const auto name = std::filesystem::path(small_data()).filename().string();
    ::setenv("DYNHD_DATA_DIR", dir.c_str(), 1);
    CHECK(run({"filter-stats", "--data", name}).code == 0);
    ::unsetenv("DYNHD_DATA_DIR");
}

TEST_CASE("outputs never overwrite inputs") {
    const auto before = io::read_file(small_data());
    const auto r = run({"evidence", "--data", small_data(), "--out", small_data()});
    CHECK(r.code == cli::kUsage);
    CHECK(io::read_file(small_data()) == before);
}

TEST_CASE("train, score and eval pipeline is deterministic") {
    const auto cfg = write("cli-train.json", kSmallTrain);
    const auto dir_a = testing::temp_path("cli-run-a");
    const auto dir_b = testing::temp_path("cli-run-b");
    const auto data_before = io::read_file(small_data());
    REQUIRE(run({"train", "--data", small_data(), "--config", cfg, "--out", dir_a, "--seed", "4"}).code == 0);
    REQUIRE(run({"train", "--data", small_data(), "--config", cfg, "--out", dir_b, "--seed", "4"}).code == 0);
    const auto ra = io::read_file(dir_a + "/report.json");
    CHECK(ra == io::read_file(dir_b + "/report.json"));
    CHECK(io::read_file(dir_a + "/epochs.csv") == io::read_file(dir_b + "/epochs.csv"));
    CHECK(io::read_file(small_data()) == data_before);

    const auto report = nlohmann::json::parse(ra);
    CHECK(report.at("config").at("seed") == 4);

    const auto score = run({"score", "--model", dir_a + "/model.json", "--data", small_data()});
    CHECK(score.code == 0);
    CHECK(score.out.rfind("id,label,probability,s_path,s_reb,omega_t8,", 0) == 0);
    CHECK(std::count(score.out.begin(), score.out.end(), '\n') == 121);

    const auto hashed = run({"score", "--model", dir_a + "/model.json", "--data", small_data(), "--hash-queries"});
    CHECK(hashed.code == 0);
    CHECK(hashed.out != score.out);

    const auto eval = run({"eval", "--model", dir_a + "/model.json", "--data", small_data()});
    CHECK(eval.code == 0);
    const auto j = nlohmann::json::parse(eval.out);
    CHECK(j.at("auroc").get<double>() >= 0.0);
    CHECK(j.contains("config"));

    SUBCASE("flags override the config file") {
        const auto dir_c = testing::temp_path("cli-run-c");
        REQUIRE(run({"train", "--data", small_data(), "--config", cfg, "--out", dir_c, "--lambda1", "0.05", "--k",
                     "3", "--warmup", "0.3", "--quantile", "0.8", "--beta", "0.2", "--standardize"})
                    .code == 0);
        const auto c = nlohmann::json::parse(io::read_file(dir_c + "/report.json")).at("config");
        CHECK(c.at("stage2").at("lambda1") == 0.05);
        CHECK(c.at("stage2").at("warmup_fraction") == 0.3);
        CHECK(c.at("stage2").at("quantile_level") == 0.8);
        CHECK(c.at("stage2").at("beta") == 0.2);
        CHECK(c.at("k") == 3);
        CHECK(c.at("standardize") == true);
    }
}

TEST_CASE("train-ref and gridsearch") {
    const auto cfg = write("cli-train2.json", kSmallTrain);
    const auto gen = testing::temp_path("cli-gen.json");
    const auto r = run({"train-ref", "--data", small_data(), "--config", cfg, "--out", gen});
    CHECK(r.code == 0);
    const auto j = nlohmann::json::parse(io::read_file(gen));
    CHECK(j.at("loss_history").size() == 4);

    const auto grid = write("cli-grid.json", std::string(R"({"base": )") + kSmallTrain +
                                                 R"(, "axes": {"lambda1": [0.0, 0.2]}, "threads": 2})");
    const auto out = testing::temp_path("cli-grid-out");
    const auto g = run({"gridsearch", "--grid", grid, "--data", small_data(), "--out", out});
    CHECK(g.code == 0);
    const auto rep = nlohmann::json::parse(io::read_file(out + "/grid_report.json"));
    CHECK(rep.at("runs") == 2);
    CHECK(io::file_exists(out + "/best_config.json"));
}

TEST_CASE("training failure maps to its own code") {
    const auto cfg = write("cli-big-split.json", R"({"splits": {"train": 1000, "validation": 10, "test": 10}})");
    const auto r = run({"train", "--data", small_data(), "--config", cfg, "--out", testing::temp_path("cli-fail")});
    CHECK(r.code != 0);
    CHECK(r.code != cli::kInternal);
}
