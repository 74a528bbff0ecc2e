#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "rgbdmae/datagen.hpp"
#include "rgbdmae/pipeline.hpp"
#include "test_util.hpp"

using namespace rgbdmae;

namespace {

int run_binary(const std::string& args) {
  std::string cmd = std::string(RGBDMAE_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("synth-data writes the requested number of samples plus a manifest") {
  testutil::TempDir tmp("cli_synth");
  int rc = cli_main({"synth-data", "--out", tmp.sub("d"), "--n", "16", "--kind", "image", "--seed", "1",
                     "--height", "32", "--width", "32"});
  CHECK(rc == 0);
  DatasetManifest m = load_dataset(tmp.sub("d") + "/manifest.json");
  CHECK(m.size() == 16);
  for (const auto& r : m.records) {
    CHECK(std::filesystem::exists(tmp.sub("d") + "/" + r.rgb_path));
    CHECK(std::filesystem::exists(tmp.sub("d") + "/" + r.depth_path));
  }
}

TEST_CASE("unknown flags exit with code 2") {
  CHECK(cli_main({"synth-data", "--bogus-flag", "1"}) == 2);
  CHECK(cli_main({"no-such-command"}) == 2);
  CHECK(cli_main({}) == 2);
}

TEST_CASE("config validation failures exit with code 2, runtime failures with 1") {
  testutil::TempDir tmp("cli_codes");
  CHECK(cli_main({"pretrain-video", "--config", tmp.sub("missing.json")}) == 2);

  std::ofstream(tmp.sub("broken.json")) << "{ not json";
  CHECK(cli_main({"pretrain-video", "--config", tmp.sub("broken.json")}) == 2);

  // parse-able config pointing at a dataset that does not exist -> runtime (1)
  nlohmann::json cfg = {{"dataset", tmp.sub("nope/manifest.json")}, {"out_dir", tmp.sub("run")},
                        {"epochs", 1},
                        {"encoder", {{"depth", 1}, {"width", 16}, {"heads", 2}}},
                        {"decoder", {{"depth", 1}, {"width", 8}, {"heads", 2}}}};
  std::ofstream(tmp.sub("cfg.json")) << cfg.dump();
  CHECK(cli_main({"pretrain-video", "--config", tmp.sub("cfg.json")}) == 1);

  // invalid config value -> 2
  nlohmann::json bad = cfg;
  bad["batch_size"] = 0;
  std::ofstream(tmp.sub("bad.json")) << bad.dump();
  CHECK(cli_main({"pretrain-video", "--config", tmp.sub("bad.json")}) == 2);
}

TEST_CASE("pretrain-image via CLI accepts stage1_epochs = 0") {
  testutil::TempDir tmp("cli_img");
  REQUIRE(cli_main({"synth-data", "--out", tmp.sub("d"), "--n", "4", "--kind", "image", "--seed", "3", "--height", "32",
                    "--width", "32"}) == 0);
  nlohmann::json cfg = {{"dataset", tmp.sub("d") + "/manifest.json"},
                        {"out_dir", tmp.sub("run")},
                        {"batch_size", 4},
                        {"stage1_epochs", 0},
                        {"stage2_epochs", 1},
                        {"threads", 1},
                        {"encoder", {{"depth", 1}, {"width", 16}, {"heads", 2}}},
                        {"decoder", {{"depth", 1}, {"width", 8}, {"heads", 2}}}};
  std::ofstream(tmp.sub("cfg.json")) << cfg.dump();
  CHECK(cli_main({"pretrain-image", "--config", tmp.sub("cfg.json")}) == 0);
  CHECK(std::filesystem::exists(tmp.sub("run") + "/final/manifest.json"));
}

TEST_CASE("rerunning the same command and seed reproduces metrics.csv bitwise") {
  testutil::TempDir tmp("cli_det");
  REQUIRE(run_binary("synth-data --out " + tmp.sub("d") + " --n 8 --kind video --seed 2 --height 32 --width 32 --frames 4") ==
          0);
  nlohmann::json cfg = {{"dataset", tmp.sub("d") + "/manifest.json"},
                        {"batch_size", 4},
                        {"epochs", 1},
                        {"threads", 1},
                        {"mask", {{"rgb_ratio", 0.5}, {"depth_ratio", 0.5}}},
                        {"encoder", {{"depth", 1}, {"width", 16}, {"heads", 2}, {"mode", "shared"}}},
                        {"decoder", {{"depth", 1}, {"width", 8}, {"heads", 2}}}};
  std::ofstream(tmp.sub("cfg.json")) << cfg.dump();
  std::string base = "pretrain-video --config " + tmp.sub("cfg.json") + " --seed 4 --out ";
  REQUIRE(run_binary(base + tmp.sub("a")) == 0);
  REQUIRE(run_binary(base + tmp.sub("b")) == 0);
  CHECK(slurp(tmp.sub("a") + "/metrics.csv") == slurp(tmp.sub("b") + "/metrics.csv"));
}

TEST_CASE("visualize-masks subcommand writes the overlay") {
  testutil::TempDir tmp("cli_vis");
  REQUIRE(cli_main({"synth-data", "--out", tmp.sub("d"), "--n", "2", "--kind", "video", "--seed", "5", "--height", "32",
                    "--width", "32", "--frames", "4"}) == 0);
  CHECK(cli_main({"visualize-masks", "--dataset", tmp.sub("d") + "/manifest.json", "--index", "1", "--out",
                  tmp.sub("overlay.png"), "--rgb-strategy", "tube", "--rgb-ratio", "0.9", "--depth-strategy",
                  "tube", "--depth-ratio", "0.9"}) == 0);
  CHECK(std::filesystem::exists(tmp.sub("overlay.png")));
}

TEST_CASE("finetune and eval subcommands round-trip a probe checkpoint") {
  testutil::TempDir tmp("cli_ft");
  REQUIRE(cli_main({"synth-data", "--out", tmp.sub("d"), "--n", "8", "--kind", "video", "--seed", "6", "--height", "32",
                    "--width", "32", "--frames", "4"}) == 0);
  nlohmann::json pcfg = {{"dataset", tmp.sub("d") + "/manifest.json"},
                         {"out_dir", tmp.sub("pre")},
                         {"batch_size", 4},
                         {"epochs", 1},
                         {"threads", 1},
                         {"mask", {{"rgb_ratio", 0.5}, {"depth_ratio", 0.5}}},
                         {"encoder", {{"depth", 1}, {"width", 16}, {"heads", 2}, {"mode", "shared"}}},
                         {"decoder", {{"depth", 1}, {"width", 8}, {"heads", 2}}}};
  std::ofstream(tmp.sub("pre.json")) << pcfg.dump();
  REQUIRE(cli_main({"pretrain-video", "--config", tmp.sub("pre.json")}) == 0);

  nlohmann::json fcfg = {{"task", "classification"}, {"classes", 8},      {"dataset", tmp.sub("d") + "/manifest.json"},
                         {"out_dir", tmp.sub("ft")}, {"batch_size", 4},   {"epochs", 1},
                         {"threads", 1},             {"optim", {{"lr", 1e-3}}}};
  std::ofstream(tmp.sub("ft.json")) << fcfg.dump();
  CHECK(cli_main({"finetune", "--config", tmp.sub("ft.json"), "--checkpoint", tmp.sub("pre") + "/final"}) == 0);
  CHECK(cli_main({"eval", "--checkpoint", tmp.sub("ft") + "/final", "--dataset", tmp.sub("d") + "/manifest.json",
                  "--out", tmp.sub("evalout")}) == 0);
  CHECK(std::filesystem::exists(tmp.sub("evalout") + "/results.json"));
}
