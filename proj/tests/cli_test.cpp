#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "mlcrnn/image_io.hpp"
#include "mlcrnn/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int status = -1;
  std::string output;  // stdout and stderr together
};

Run run(const std::string& args) {
  const std::string cmd = std::string(MLCRNN_CLI) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe) != nullptr) r.output += buf;
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "mlcrnn_cli_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

const std::string kTiny = std::string(MLCRNN_CONFIG_DIR) + "/tiny.cfg";

}  // namespace

TEST_CASE("usage errors exit with status 2") {
  CHECK(run("").status == 2);
  CHECK(run("frobnicate").status == 2);
  const Run r = run("synth longrange --out x --bogus-flag");
  CHECK(r.status == 2);
  CHECK(r.output.find("bogus-flag") != std::string::npos);
  CHECK(run("--help").status == 0);
}

TEST_CASE("a missing config file fails with the path in the message") {
  const Run r = run("gradcheck --config /nonexistent/dir/missing.cfg");
  CHECK(r.status != 0);
  CHECK(r.status != 2);
  CHECK(r.output.find("/nonexistent/dir/missing.cfg") != std::string::npos);
}

TEST_CASE("gradcheck on the reference tiny config passes") {
  const Run r = run("gradcheck --config " + kTiny);
  CHECK(r.status == 0);
  CHECK(r.output.find("max relative error:") != std::string::npos);
  CHECK(r.output.find("level3.W") != std::string::npos);
  CHECK(r.output.find("att.conv1") != std::string::npos);
}

TEST_CASE("synth twice with one seed gives identical trees") {
  const fs::path dir = scratch("synth");
  REQUIRE(run("synth longrange --count 8 --size 32 --seed 7 --out " + (dir / "a").string()).status == 0);
  REQUIRE(run("synth longrange --count 8 --size 32 --seed 7 --out " + (dir / "b").string()).status == 0);
  std::size_t files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(dir / "a")) {
    if (!entry.is_regular_file()) continue;
    ++files;
    const fs::path other = dir / "b" / fs::relative(entry.path(), dir / "a");
    REQUIRE(fs::exists(other));
    CHECK(read_file(entry.path()) == read_file(other));
  }
  CHECK(files == 17);
  CHECK(run("synth spirals --out " + (dir / "c").string()).status == 1);
  CHECK(run("synth longrange --size 20 --out " + (dir / "c").string()).status == 1);
}

TEST_CASE("train, eval, predict and fusion-compare run end to end") {
  const fs::path dir = scratch("workflow");
  const fs::path cfg = dir / "run.cfg";
  std::ofstream(cfg) << R"({"backbone": {"stages": [4, 6], "taps": [0, 1, 2]}, "classes": 3,
    "attention_filters": 4, "optimizer": {"learning_rate": 0.01},
    "train": {"epochs": 2, "checkpoint_every": 1}, "precision": "single"})";
  REQUIRE(run("synth longrange --count 4 --size 24 --seed 3 --out " + (dir / "data").string()).status == 0);
  const std::string data = (dir / "data" / "manifest.json").string();

  const Run trained = run("train --config " + cfg.string() + " --data " + data + " --out " + (dir / "model").string());
  REQUIRE(trained.status == 0);
  CHECK(trained.output.find("epoch 2") != std::string::npos);
  CHECK(fs::exists(dir / "model" / "params.bin"));
  CHECK(fs::exists(dir / "model" / "checkpoints" / "epoch_0001.params"));
  std::ifstream log(dir / "model" / "train_log.csv");
  std::string header;
  std::getline(log, header);
  CHECK(header == "epoch,loss,pixel_acc,class_acc,lr");

  const std::string params = (dir / "model" / "params.bin").string();
  const Run ev = run("eval --config " + cfg.string() + " --data " + data + " --params " + params);
  CHECK(ev.status == 0);
  CHECK(ev.output.find("pixel accuracy:") != std::string::npos);
  CHECK(ev.output.find("red-cue") != std::string::npos);

  const Run pr = run("predict --config " + cfg.string() + " --params " + params + " --data " + data + " --image " +
                     (dir / "data" / "images" / "0001.png").string() + " --out " + (dir / "pred").string());
  CHECK(pr.status == 0);
  CHECK(fs::exists(dir / "pred" / "0001_labels.png"));
  CHECK(fs::exists(dir / "pred" / "0001_weight3.png"));
  const auto manifest = mlcrnn::load_manifest(data);
  CHECK_NOTHROW(mlcrnn::decode_palette_image(mlcrnn::read_image(dir / "pred" / "0001_labels.png"), manifest.palette));

  // A parameter file from another configuration is rejected.
  const fs::path other = dir / "other.cfg";
  std::ofstream(other) << R"({"backbone": {"stages": [4, 8], "taps": [0, 1, 2]}, "classes": 3, "precision": "single"})";
  CHECK(run("eval --config " + other.string() + " --data " + data + " --params " + params).status == 1);

  const Run fc = run("fusion-compare --config " + cfg.string() + " --data " + data + " --seeds 2");
  CHECK(fc.status == 0);
  CHECK(fc.output.find("attention >= average:") != std::string::npos);
  CHECK(fc.output.find("max") != std::string::npos);
}

TEST_CASE("class count mismatch between config and dataset is reported") {
  const fs::path dir = scratch("mismatch");
  REQUIRE(run("synth longrange --count 2 --size 24 --out " + (dir / "data").string()).status == 0);
  const Run r = run("train --config " + kTiny + " --data " + (dir / "data" / "manifest.json").string() +
                    " --out " + (dir / "m").string());
  CHECK(r.status == 1);
  CHECK(r.output.find("4 classes but the dataset has 3") != std::string::npos);
}
