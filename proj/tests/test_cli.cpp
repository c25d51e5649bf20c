// End-to-end checks of the command-line driver: it is exercised as a real
// subprocess so the documented exit codes are verified from the outside.

#include <cstdlib>
#include <fstream>
#include <string>

#include "doctest.h"
#include "fixtures.hpp"
#include "json.hpp"

using nlohmann::json;

namespace {

std::string cli_path() {
#ifdef POISONLAB_CLI_PATH
    return POISONLAB_CLI_PATH;
#else
    return "poisonlab";
#endif
}

int run_cli(const std::string& args) {
    std::string cmd = cli_path() + " " + args + " >/dev/null 2>&1";
    int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    return WEXITSTATUS(status);
}

// smallest legal pipeline configuration, written to disk for --config
std::string write_config(const std::string& dir, json overrides = json::object()) {
    json cfg = {
        {"corpus", {{"per_concept", 10}, {"variant_pool", 20}}},
        {"encoder",
         {{"dim", 8}, {"epochs", 2}, {"batch", 32}, {"gate_accuracy", 0.0}}},
        {"diffusion", {{"T", 4}, {"epochs", 1}}},
        {"attack", {{"beta", 0.0}, {"poison_sizes", {2}}, {"ft_epochs", 1}}},
        {"eval",
         {{"query_concepts", {"disc"}},
          {"n", 2},
          {"sim_runs", 1},
          {"sim_n", 2},
          {"base_gate_accuracy", 0.0}}},
        {"master_seed", 9},
        {"out_dir", dir + "/out"},
    };
    cfg.merge_patch(overrides);
    std::string path = dir + "/config.json";
    std::ofstream f(path);
    f << cfg.dump(2);
    return path;
}

}  // namespace

TEST_CASE("cli builds the corpus and exits cleanly") {
    auto dir = fixtures::temp_dir("cli-ok");
    auto cfg = write_config(dir);
    CHECK(run_cli("--config " + cfg + " gen-corpus") == 0);
    // rerun hits the cache and still succeeds
    CHECK(run_cli("--config " + cfg + " gen-corpus") == 0);
}

TEST_CASE("cli reports configuration errors with exit code 2") {
    auto dir = fixtures::temp_dir("cli-badcfg");
    auto cfg = write_config(dir, {{"attack", {{"beta", 2.0}}}});
    CHECK(run_cli("--config " + cfg + " gen-corpus") == 2);

    // invalid JSON is a configuration error too
    std::string broken = dir + "/broken.json";
    {
        std::ofstream f(broken);
        f << "{oops";
    }
    CHECK(run_cli("--config " + broken + " gen-corpus") == 2);
}

TEST_CASE("cli reports stage-gate failures with exit code 3") {
    auto dir = fixtures::temp_dir("cli-gate");
    auto cfg = write_config(dir, {{"encoder", {{"gate_accuracy", 1.1}}}});
    CHECK(run_cli("--config " + cfg + " train-encoder") == 3);
}

TEST_CASE("cli reports I/O errors with exit code 4") {
    CHECK(run_cli("--config /nonexistent/dir/config.json gen-corpus") == 4);
}
