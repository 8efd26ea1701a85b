#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "cvos/checkpoint.hpp"
#include "cvos/ops.hpp"
#include "cvos/rng.hpp"
#include "helpers.hpp"

using namespace cvos;
using namespace cvos::testutil;

TEST_CASE("checkpoint round trip is bit exact") {
  Rng rng(5);
  std::map<std::string, Tensor> tensors;
  tensors["alpha"] = Tensor::uniform({3, 4}, rng, -10, 10);
  tensors["memory.hidden"] = Tensor::uniform({2, 3, 5}, rng, -1, 1);
  tensors["memory.cell"] = Tensor::uniform({2, 3, 5}, rng, -1, 1);
  tensors["scalar"] = Tensor::scalar(0.1234567891234567);

  auto path = std::filesystem::temp_directory_path() / "cvos_ckpt_test.bin";
  save_checkpoint(path.string(), tensors);
  auto loaded = load_checkpoint(path.string());
  REQUIRE(loaded.size() == tensors.size());
  for (const auto& [name, t] : tensors) {
    REQUIRE(loaded.count(name) == 1);
    CHECK(loaded[name].shape() == t.shape());
    CHECK(max_abs_diff(loaded[name], t) == 0.0);
  }
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint rejects foreign files") {
  auto path = std::filesystem::temp_directory_path() / "cvos_bogus.bin";
  {
    FILE* f = fopen(path.string().c_str(), "wb");
    fputs("not a checkpoint", f);
    fclose(f);
  }
  CHECK_THROWS_AS(load_checkpoint(path.string()), IoError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/nowhere.bin"), IoError);
  std::filesystem::remove(path);
}
