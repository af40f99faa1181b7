#pragma once

#include <atomic>
#include <filesystem>
#include <string>

// Unique per-test scratch directory, removed on scope exit.
struct ScopedDir {
  std::filesystem::path path;

  explicit ScopedDir(const std::string& tag) {
    static std::atomic<unsigned> counter{0};
    path = std::filesystem::temp_directory_path() /
           ("rappie_test_" + tag + "_" + std::to_string(counter.fetch_add(1)));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~ScopedDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }

  std::string file(const std::string& name) const { return (path / name).string(); }
};
