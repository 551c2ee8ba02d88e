#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "gfp/io.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using gfp::cli::ExitCode;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& f) const { return (path / f).string(); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run(std::vector<std::string> args) { return gfp::cli::run(args); }

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors") {
    CHECK(run({}) == ExitCode::kUsage);
    CHECK(run({"frobnicate"}) == ExitCode::kUsage);
    CHECK(run({"gen"}) == ExitCode::kUsage);
    CHECK(run({"gen", "--out", "x.gfpd", "--per-class", "0"}) == ExitCode::kUsage);
    CHECK(run({"--help"}) == ExitCode::kOk);
    CHECK(run({"--version"}) == ExitCode::kOk);
  }

  TEST_CASE("gen is reproducible and writes a manifest") {
    TempDir t("gfp_cli_gen");
    const std::vector<std::string> base{"gen", "--classes", "3", "--per-class", "4", "--size", "16"};
    auto a = base, b = base;
    a.insert(a.end(), {"--out", t / "a.gfpd"});
    b.insert(b.end(), {"--out", t / "b.gfpd"});
    REQUIRE(run(a) == ExitCode::kOk);
    REQUIRE(run(b) == ExitCode::kOk);
    CHECK(slurp(t / "a.gfpd") == slurp(t / "b.gfpd"));
    const auto manifest = nlohmann::json::parse(slurp(t / "a.gfpd.json"));
    CHECK(manifest["classes"].size() == 3);
    CHECK(manifest["class_counts"] == nlohmann::json::array({4, 4, 4}));
    CHECK(manifest.contains("inputs"));
  }

  TEST_CASE("train, eval and attack pipeline") {
    TempDir t("gfp_cli_pipe");
    REQUIRE(run({"gen", "--classes", "2", "--per-class", "6", "--test-per-class", "4", "--size", "16", "--out",
                 t / "train.gfpd", "--test-out", t / "test.gfpd"}) == ExitCode::kOk);
    REQUIRE(run({"train", "--data", t / "train.gfpd", "--out", t / "m.gfpc", "--epochs", "1", "--batch", "4",
                 "--base-channels", "4", "--max-channels", "8"}) == ExitCode::kOk);
    CHECK(fs::exists(t / "m.gfpc.json"));
    REQUIRE(run({"eval", "--model", t / "m.gfpc", "--data", t / "test.gfpd", "--out", t / "rep", "--baselines",
                 t / "train.gfpd"}) == ExitCode::kOk);
    const auto acc = slurp(t / "rep/accuracy.csv");
    CHECK(acc.rfind("method,accuracy,correct,total\nknn,", 0) == 0);
    CHECK(acc.find("\nours,") != std::string::npos);
    CHECK(fs::exists(t / "rep/provenance.json"));

    REQUIRE(run({"attack", "--data", t / "test.gfpd", "--out", t / "atk.gfpd", "--kind", "combo", "--seed", "4"}) ==
            ExitCode::kOk);
    REQUIRE(run({"attack", "--data", t / "test.gfpd", "--out", t / "atk2.gfpd", "--kind", "combo", "--seed", "4"}) ==
            ExitCode::kOk);
    CHECK(slurp(t / "atk.gfpd") == slurp(t / "atk2.gfpd"));
    CHECK(run({"attack", "--data", t / "test.gfpd", "--out", t / "x.gfpd", "--kind", "noise", "--param", "bogus=1"}) ==
          ExitCode::kUsage);

    REQUIRE(run({"fdratio", "--data", t / "test.gfpd", "--model", t / "m.gfpc", "--out", t / "fd.csv"}) ==
            ExitCode::kOk);
    CHECK(slurp(t / "fd.csv").rfind("features,inter,intra,ratio\npixel,", 0) == 0);

    // A three-class dataset against a two-class checkpoint.
    REQUIRE(run({"gen", "--classes", "3", "--per-class", "2", "--size", "16", "--out", t / "three.gfpd"}) ==
            ExitCode::kOk);
    CHECK(run({"eval", "--model", t / "m.gfpc", "--data", t / "three.gfpd", "--out", t / "rep3"}) ==
          ExitCode::kFormat);
  }

  TEST_CASE("config file values yield to explicit flags") {
    TempDir t("gfp_cli_cfg");
    std::ofstream(t / "cfg.json") << R"({"classes": 3, "per-class": 2, "size": 16})";
    REQUIRE(run({"--config", t / "cfg.json", "gen", "--out", t / "a.gfpd", "--classes", "2"}) == ExitCode::kOk);
    const auto manifest = nlohmann::json::parse(slurp(t / "a.gfpd.json"));
    CHECK(manifest["class_counts"] == nlohmann::json::array({2, 2}));
    std::ofstream(t / "bad.json") << "{not json";
    CHECK(run({"--config", t / "bad.json", "gen", "--out", t / "b.gfpd"}) == ExitCode::kFormat);
  }

  TEST_CASE("input errors map to exit codes") {
    TempDir t("gfp_cli_err");
    CHECK(run({"train", "--data", t / "missing.gfpd", "--out", t / "m.gfpc"}) == ExitCode::kIo);
    std::ofstream(t / "junk.gfpd", std::ios::binary) << "JUNKJUNKJUNK";
    CHECK(run({"train", "--data", t / "junk.gfpd", "--out", t / "m.gfpc"}) == ExitCode::kFormat);
  }
}
