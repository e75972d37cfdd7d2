#pragma once

#include <gtest/gtest.h>

#include <map>
#include <string>
#include <vector>

#include "segaudit/io.hpp"
#include "segaudit/synthetic.hpp"

namespace fixtures {

namespace fs = std::filesystem;

// Fresh per-test scratch directory under the system temp dir.
class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("segaudit_") + info->test_suite_name() + "_" + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

// Relative path -> bytes for every regular file under dir.
inline std::map<std::string, std::vector<std::uint8_t>> tree(const fs::path& dir) {
  std::map<std::string, std::vector<std::uint8_t>> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).generic_string()] = segaudit::read_file(e.path());
  }
  return out;
}

inline segaudit::SynthConfig small_synth(int scenes, int side = 128) {
  segaudit::SynthConfig c;
  c.scenes = scenes;
  c.height = side;
  c.width = side;
  c.max_object_size = side * side / 8.0;
  return c;
}

}  // namespace fixtures
