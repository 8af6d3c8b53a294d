#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "strug/cli.hpp"
#include "strug/util.hpp"
#include "synthetic.hpp"

using namespace strug;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::size_t count_files(const fs::path& dir) {
    return static_cast<std::size_t>(std::distance(fs::directory_iterator(dir), fs::directory_iterator()));
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

const std::string kFixture = std::string(STRUG_FIXTURES_DIR) + "/corpus_5.jsonl";

}  // namespace

TEST_SUITE("cli") {
    TEST_CASE("unknown or missing subcommands are usage errors that touch nothing") {
        testing::TempDir dir;
        CHECK(run({"frobnicate", "--out", (dir / "x").string()}).code == cli::kExitUsage);
        CHECK(run({}).code == cli::kExitUsage);
        CHECK(run({"label", "--bogus-flag"}).code == cli::kExitUsage);
        CHECK(count_files(dir.path()) == 0);
    }

    TEST_CASE("help exits 0") {
        const auto r = run({"--help"});
        CHECK(r.code == cli::kExitOk);
        CHECK(r.out.find("grad-check") != std::string::npos);
    }

    TEST_CASE("a missing input file is a usage error") {
        testing::TempDir dir;
        const auto r = run({"label", "--in", (dir / "absent.jsonl").string(), "--out", (dir / "l.jsonl").string()});
        CHECK(r.code == cli::kExitUsage);
        CHECK_FALSE(fs::exists(dir / "l.jsonl"));
    }

    TEST_CASE("validate reports malformed lines as JSONL and exits 1") {
        testing::TempDir dir;
        const auto errors = dir / "errors.jsonl";
        const auto r = run({"validate", "--in", kFixture, "--errors", errors.string()});
        CHECK(r.code == cli::kExitDataError);
        CHECK(r.out == "valid=4 malformed=1\n");
        const auto text = read_file(errors);
        REQUIRE(count_lines(text) == 1);
        const auto j = nlohmann::json::parse(text);
        CHECK(j["line"] == 3);
    }

    TEST_CASE("label writes one record per example and a summary") {
        testing::TempDir dir;
        const auto corpus = testing::random_corpus(20, 91);
        testing::write_text(dir / "c.jsonl", testing::jsonl(corpus));
        const auto r = run({"label", "--in", (dir / "c.jsonl").string(), "--out", (dir / "l.jsonl").string(),
                            "--setting", "auto"});
        CHECK(r.code == cli::kExitOk);
        CHECK(r.out.rfind("labeled=20 setting=auto ", 0) == 0);
        CHECK(count_lines(read_file(dir / "l.jsonl")) == 20);
        CHECK(run({"label", "--in", (dir / "c.jsonl").string(), "--out", (dir / "m.jsonl").string(), "--setting",
                   "sometimes"})
                  .code == cli::kExitUsage);
    }

    TEST_CASE("grad-check exits 0 when every seed passes") {
        const auto r = run({"grad-check", "--seeds", "2", "--seed", "7"});
        CHECK(r.code == cli::kExitOk);
        CHECK(count_lines(r.out) == 2);
        CHECK(r.out.rfind("seed=7 max_relative_error=", 0) == 0);
        CHECK(r.out.find("seed=8 ") != std::string::npos);
        CHECK(r.out.find("FAIL") == std::string::npos);
    }

    TEST_CASE("flags override the config file, which overrides defaults") {
        testing::TempDir dir;
        const auto corpus = testing::random_corpus(20, 92);
        testing::write_text(dir / "c.jsonl", testing::jsonl(corpus));
        testing::write_text(dir / "cfg.json", R"({"seed": 5, "augmentation": {"k_neg": 2, "replace_prob": 0.5}})");
        const std::vector<std::string> base{"augment", "--config", (dir / "cfg.json").string(), "--corpus",
                                            (dir / "c.jsonl").string(), "--out", (dir / "a.jsonl").string()};
        auto r = run(base);
        CHECK(r.code == cli::kExitOk);
        CHECK(r.out.find("k_neg=2 seed=5") != std::string::npos);
        auto args = base;
        args.insert(args.end(), {"--seed", "9", "--k-neg", "1"});
        r = run(args);
        CHECK(r.out.find("k_neg=1 seed=9") != std::string::npos);
    }

    TEST_CASE("the config may come from the environment") {
        testing::TempDir dir;
        testing::write_text(dir / "c.jsonl", testing::jsonl(testing::random_corpus(10, 93)));
        testing::write_text(dir / "cfg.json", R"({"seed": 77})");
        ::setenv(cli::kConfigEnv, (dir / "cfg.json").string().c_str(), 1);
        const auto r = run({"augment", "--corpus", (dir / "c.jsonl").string(), "--out", (dir / "a.jsonl").string()});
        ::unsetenv(cli::kConfigEnv);
        CHECK(r.code == cli::kExitOk);
        CHECK(r.out.find("seed=77") != std::string::npos);
    }

    TEST_CASE("unknown config keys are usage errors") {
        testing::TempDir dir;
        testing::write_text(dir / "cfg.json", R"({"seeed": 5})");
        const auto r = run({"grad-check", "--config", (dir / "cfg.json").string()});
        CHECK(r.code == cli::kExitUsage);
        CHECK(r.err.find("unknown config key: seeed") != std::string::npos);
    }

    TEST_CASE("augmenting a one-table corpus with negatives fails with an error report") {
        testing::TempDir dir;
        auto a = testing::train_route_example();
        auto b = a;
        b.example_id = "route-2";
        testing::write_text(dir / "c.jsonl", testing::jsonl({a, b}));
        const auto r = run({"augment", "--corpus", (dir / "c.jsonl").string(), "--out", (dir / "a.jsonl").string(),
                            "--k-neg", "1"});
        CHECK(r.code == cli::kExitDataError);
        CHECK(nlohmann::json::parse(r.err).contains("error"));
        CHECK_FALSE(fs::exists(dir / "a.jsonl"));
    }

    TEST_CASE("curate writes a report and prints the listing") {
        testing::TempDir dir;
        const auto r = run({"curate", "--in", std::string(STRUG_FIXTURES_DIR) + "/curation_hand.json", "--out",
                            (dir / "report.json").string()});
        CHECK(r.code == cli::kExitOk);
        CHECK(r.out.find("singer-order") != std::string::npos);
        const auto j = nlohmann::json::parse(read_file(dir / "report.json"));
        CHECK(j["column_mention_ratio"] == doctest::Approx(0.7));
    }
}
