#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "vg3d/cli.hpp"
#include "vg3d/scenegen.hpp"

using namespace vg3d;

namespace {

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv = {"vg3d"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST_CASE("no subcommand is a usage error") {
  CHECK(run_cli({}) == 1);
}

TEST_CASE("unknown flags are usage errors") {
  CHECK(run_cli({"gen", "--out", "/tmp/vg3d_cli_x.jsonl", "--bogus-flag", "3"}) == 1);
}

TEST_CASE("gen round trip") {
  const std::string path = "/tmp/vg3d_cli_gen.jsonl";
  CHECK(run_cli({"gen", "--seed", "1", "--num-scenes", "2", "--out", path}) == 0);
  std::vector<GroundingSample> loaded = load_dataset(path);
  CHECK(loaded.size() == 2);
  std::remove(path.c_str());
}

TEST_CASE("gen with fixed seed is byte-identical") {
  const std::string p1 = "/tmp/vg3d_cli_det1.jsonl";
  const std::string p2 = "/tmp/vg3d_cli_det2.jsonl";
  CHECK(run_cli({"gen", "--seed", "7", "--num-scenes", "3", "--out", p1}) == 0);
  CHECK(run_cli({"gen", "--seed", "7", "--num-scenes", "3", "--out", p2}) == 0);
  std::ifstream f1(p1), f2(p2);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
  CHECK(!s1.empty());
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("train rejects bad config keys as usage errors") {
  const std::string data = "/tmp/vg3d_cli_train_data.jsonl";
  CHECK(run_cli({"gen", "--seed", "2", "--num-scenes", "1", "--out", data}) == 0);
  CHECK(run_cli({"train", "--data", data, "--out", "/tmp/vg3d_cli_ckpt.json",
                 "--config", "nonsense=1"}) == 1);
  std::remove(data.c_str());
}

TEST_CASE("runtime failures exit 2") {
  CHECK(run_cli({"eval", "--data", "/tmp/does_not_exist.jsonl", "--checkpoint",
                 "/tmp/also_missing.json"}) == 2);
}
