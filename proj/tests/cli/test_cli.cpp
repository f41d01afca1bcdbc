// SPDX-License-Identifier: Apache-2.0
//
// Drives the installed CLI binary end to end and pins the exit-code
// contract: 0 success, 2 usage, 3 data, 4 config, 5 numeric.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "core/network.hpp"
#include "core/traindata.hpp"
#include "oracles.hpp"

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  explicit TempDir(const char* name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

int run(const std::string& args) {
  const std::string cmd = std::string(CARF_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string run_capture(const std::string& args, const fs::path& out) {
  const std::string cmd =
      std::string(CARF_CLI_PATH) + " " + args + " >" + out.string() + " 2>&1";
  std::system(cmd.c_str());
  std::ifstream f(out);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

std::string file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_config(const fs::path& p, const std::string& extra) {
  std::ofstream f(p);
  f << "n_input = 128\n"
       "channels = 8,8,8,8\n"
       "cv_channels = 8\nup_channels = 8\npredictor_channels = 8\nfc_d_channels = 4\n"
       "k_pyramid = 4\nk_cv1 = 2\nk_cv2 = 2\nk_up = 2\n"
       "batch_size = 2\nseed = 5\n"
    << extra;
}

}  // namespace

TEST_CASE("usage surface") {
  CHECK(run("--help") == 0);
  CHECK(run("gen-data --help") == 0);
  CHECK(run("") == 2);
  CHECK(run("no-such-command") == 2);
  CHECK(run("gen-data") == 2);  // missing required --out
  CHECK(run("gen-data --out /tmp/x --pattern wobbly") == 2);
  CHECK(run("eval --data /tmp --checkpoint /tmp/x --intrinsics banana") == 2);
}

TEST_CASE("gen-data is deterministic and honours --scenes 0") {
  TempDir dir("carf_cli_gen");
  const std::string a = (dir.path / "a").string();
  const std::string b = (dir.path / "b").string();
  const std::string flags = " --scenes 3 --points 256 --pattern mixed --motion-scale 0.2 "
                            "--noise 0.005 --seed 9";
  REQUIRE(run("gen-data --out " + a + flags) == 0);
  REQUIRE(run("gen-data --out " + b + flags) == 0);
  for (const char* name : {"scene_00000.sfpc", "scene_00001.sfpc", "scene_00002.sfpc",
                           "manifest.json"}) {
    CHECK(file_bytes(fs::path(a) / name) == file_bytes(fs::path(b) / name));
  }

  const std::string empty = (dir.path / "empty").string();
  CHECK(run("gen-data --out " + empty + " --scenes 0") == 0);
  CHECK(fs::exists(fs::path(empty) / "manifest.json"));
  CHECK(!fs::exists(fs::path(empty) / "scene_00000.sfpc"));
}

TEST_CASE("shelf scenes defeat nearest-neighbour association") {
  TempDir dir("carf_cli_shelf");
  const std::string data = (dir.path / "shelf").string();
  REQUIRE(run("gen-data --out " + data +
              " --scenes 3 --points 600 --pattern shelf --motion-scale 0.14 --seed 4") == 0);
  for (int i = 0; i < 3; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%05d.sfpc", i);
    const auto pair = carf::data::read_scene((fs::path(data) / name).string());
    const double naive =
        oracle::nearest_neighbor_flow_epe(pair.pc1, pair.pc2, pair.gt_flow);
    CHECK(naive >= 0.045 / 2.0);  // inter-slab gap is at least 0.045
  }
}

TEST_CASE("train, resume, eval and infer contracts") {
  TempDir dir("carf_cli_train");
  const std::string data = (dir.path / "data").string();
  REQUIRE(run("gen-data --out " + data +
              " --scenes 4 --points 256 --pattern rigid --motion-scale 0.15 --seed 11") == 0);

  // zero steps: the checkpoint is the initialization, reproducibly
  const fs::path cfg0 = dir.path / "zero.cfg";
  write_config(cfg0, "max_steps = 0\n");
  const std::string ck_a = (dir.path / "a.ckpt").string();
  const std::string ck_b = (dir.path / "b.ckpt").string();
  REQUIRE(run("train --data " + data + " --config " + cfg0.string() + " --out " + ck_a) == 0);
  REQUIRE(run("train --data " + data + " --config " + cfg0.string() + " --out " + ck_b) == 0);
  CHECK(file_bytes(ck_a) == file_bytes(ck_b));

  // ... and it equals a freshly constructed network with the same seed
  {
    const auto ck = carf::net::read_checkpoint(ck_a);
    carf::net::NetworkConfig nc;
    nc.n_input = 128;
    nc.level_sizes = {32, 16, 4, 1};
    nc.embedding_conv_sizes = {1, 1};
    nc.channels = {8, 8, 8, 8};
    nc.cv_channels = 8;
    nc.up_channels = 8;
    nc.predictor_channels = 8;
    nc.fc_d_channels = 4;
    nc.k_pyramid = 4;
    nc.k_cv1 = 2;
    nc.k_cv2 = 2;
    nc.k_up = 2;
    carf::net::Network fresh(nc, 5);
    for (const auto& [name, t] : fresh.registry().entries()) {
      bool found = false;
      for (const auto& blob : ck.blobs) {
        if (blob.name != name) continue;
        found = true;
        REQUIRE(blob.data.size() == t.values().size());
        for (std::size_t i = 0; i < blob.data.size(); ++i) {
          CHECK(static_cast<double>(blob.data[i]) == t.values()[i]);
        }
      }
      CHECK(found);
    }
  }

  // resume(k) + train-to-n == uninterrupted train-to-n, bitwise
  const fs::path cfg6 = dir.path / "six.cfg";
  write_config(cfg6, "max_steps = 6\n");
  const fs::path cfg3 = dir.path / "three.cfg";
  write_config(cfg3, "max_steps = 3\n");
  const std::string full = (dir.path / "full.ckpt").string();
  const std::string part = (dir.path / "part.ckpt").string();
  const std::string resumed = (dir.path / "resumed.ckpt").string();
  REQUIRE(run("train --data " + data + " --config " + cfg6.string() + " --out " + full +
              " --quiet") == 0);
  REQUIRE(run("train --data " + data + " --config " + cfg3.string() + " --out " + part +
              " --quiet") == 0);
  REQUIRE(run("train --data " + data + " --config " + cfg6.string() + " --out " + resumed +
              " --resume " + part + " --quiet") == 0);
  // checkpoints embed their config text; compare parameter payloads instead
  {
    const auto ck_full = carf::net::read_checkpoint(full);
    const auto ck_res = carf::net::read_checkpoint(resumed);
    REQUIRE(ck_full.blobs.size() == ck_res.blobs.size());
    for (std::size_t i = 0; i < ck_full.blobs.size(); ++i) {
      CHECK(ck_full.blobs[i].name == ck_res.blobs[i].name);
      CHECK(ck_full.blobs[i].data == ck_res.blobs[i].data);
    }
  }

  // loss log CSV shape
  CHECK(file_bytes(full + ".loss.csv").rfind("step,loss,lr\n", 0) == 0);

  // eval prints the six metric keys and a single-line record
  const std::string eval_out = run_capture(
      "eval --data " + data + " --checkpoint " + full + " --per-scene", dir.path / "eval.txt");
  for (const char* key : {"epe3d", "acc3d_strict", "acc3d_relax", "outliers3d", "epe2d",
                          "acc2d"}) {
    CHECK(eval_out.find(key) != std::string::npos);
  }
  CHECK(eval_out.find("scene=scene_00000") != std::string::npos);

  // infer: deterministic bytes, round-trips through read_scene, n/4 rows
  const std::string s0 = data + "/scene_00000.sfpc";
  const std::string f1 = (dir.path / "f1.sfpc").string();
  const std::string f2 = (dir.path / "f2.sfpc").string();
  REQUIRE(run("infer --pc1 " + s0 + " --pc2 " + s0 + " --checkpoint " + full + " --out " + f1) ==
          0);
  REQUIRE(run("infer --pc1 " + s0 + " --pc2 " + s0 + " --checkpoint " + full + " --out " + f2) ==
          0);
  CHECK(file_bytes(f1) == file_bytes(f2));
  const auto flow = carf::data::read_scene(f1);
  CHECK(flow.pc1.size() == 32);  // n_input / 4
  CHECK(flow.has_gt());

  // dump-flow emits one SFPC per scene
  const std::string dump = (dir.path / "dump").string();
  fs::create_directories(dump);
  REQUIRE(run("eval --data " + data + " --checkpoint " + full + " --dump-flow " + dump) == 0);
  CHECK(fs::exists(fs::path(dump) / "scene_00000.flow.sfpc"));
}

TEST_CASE("worker threads keep batch results identical") {
  TempDir dir("carf_cli_threads");
  const std::string data = (dir.path / "data").string();
  REQUIRE(run("gen-data --out " + data +
              " --scenes 4 --points 256 --pattern rigid --motion-scale 0.15 --seed 21") == 0);
  const fs::path cfg = dir.path / "run.cfg";
  write_config(cfg, "max_steps = 4\nbatch_size = 4\n");
  const std::string one = (dir.path / "one.ckpt").string();
  const std::string two = (dir.path / "two.ckpt").string();
  REQUIRE(run("train --data " + data + " --config " + cfg.string() + " --out " + one +
              " --quiet --threads 1") == 0);
  REQUIRE(run("train --data " + data + " --config " + cfg.string() + " --out " + two +
              " --quiet --threads 2") == 0);
  const auto a = carf::net::read_checkpoint(one);
  const auto b = carf::net::read_checkpoint(two);
  REQUIRE(a.blobs.size() == b.blobs.size());
  for (std::size_t i = 0; i < a.blobs.size(); ++i) {
    CHECK(a.blobs[i].name == b.blobs[i].name);
    CHECK(a.blobs[i].data == b.blobs[i].data);
  }
}

TEST_CASE("exit codes for data, config and numeric failures") {
  TempDir dir("carf_cli_codes");
  const fs::path cfg = dir.path / "run.cfg";
  write_config(cfg, "max_steps = 2\n");

  // 3: data errors
  CHECK(run("train --data " + (dir.path / "missing").string() + " --config " + cfg.string() +
            " --out " + (dir.path / "x.ckpt").string()) == 3);
  CHECK(run("eval --data /tmp --checkpoint " + (dir.path / "missing.ckpt").string()) == 3);

  const std::string data = (dir.path / "data").string();
  REQUIRE(run("gen-data --out " + data +
              " --scenes 2 --points 256 --pattern rigid --motion-scale 0.1 --seed 2") == 0);

  // 3: scenes too small for n_input
  const std::string tiny = (dir.path / "tiny").string();
  REQUIRE(run("gen-data --out " + tiny + " --scenes 1 --points 64 --seed 3") == 0);
  CHECK(run("train --data " + tiny + " --config " + cfg.string() + " --out " +
            (dir.path / "y.ckpt").string()) == 3);

  // 4: config errors (unknown key, line-numbered)
  const fs::path bad = dir.path / "bad.cfg";
  std::ofstream(bad) << "n_input = 128\nwibble = 3\n";
  const std::string msg = run_capture("train --data " + data + " --config " + bad.string() +
                                          " --out " + (dir.path / "z.ckpt").string(),
                                      dir.path / "err.txt");
  CHECK(msg.find("wibble") != std::string::npos);
  CHECK(run("train --data " + data + " --config " + bad.string() + " --out " +
            (dir.path / "z.ckpt").string()) == 4);

  // 4: config/checkpoint mismatch on resume
  const std::string ck = (dir.path / "m.ckpt").string();
  REQUIRE(run("train --data " + data + " --config " + cfg.string() + " --out " + ck +
              " --quiet") == 0);
  const fs::path other = dir.path / "other.cfg";
  write_config(other, "max_steps = 4\nlr = 0.01\n");
  CHECK(run("train --data " + data + " --config " + other.string() + " --out " +
            (dir.path / "w.ckpt").string() + " --resume " + ck) == 4);

  // 5: numeric failure (lr large enough to overflow the parameters)
  const fs::path hot = dir.path / "hot.cfg";
  write_config(hot, "max_steps = 3\nlr = 1e300\n");
  CHECK(run("train --data " + data + " --config " + hot.string() + " --out " +
            (dir.path / "v.ckpt").string()) == 5);
}
