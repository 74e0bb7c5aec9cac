#pragma once

#include <filesystem>
#include <string>

namespace flowmill::testing {

// Unique scratch directory, removed recursively on destruction.
class TempHome {
 public:
  explicit TempHome(const std::string& prefix = "flowmill-test");
  ~TempHome();
  TempHome(const TempHome&) = delete;
  TempHome& operator=(const TempHome&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

}  // namespace flowmill::testing
