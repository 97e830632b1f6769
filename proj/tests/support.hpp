#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <string>

#include "latseg/image.hpp"
#include "latseg/random.hpp"

namespace testing_support {

namespace fs = std::filesystem;

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("latseg-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

inline latseg::Mask random_mask(latseg::Rng& rng, std::size_t h, std::size_t w, double p) {
  latseg::Mask m(h, w);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = latseg::uniform(rng, 0, 1) < p ? 1 : 0;
  return m;
}

inline latseg::SoftMask random_soft(latseg::Rng& rng, std::size_t h, std::size_t w) {
  latseg::SoftMask m(h, w);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = latseg::uniform(rng, 0, 1);
  return m;
}

inline latseg::Image random_image(latseg::Rng& rng, std::size_t h, std::size_t w) {
  latseg::Image img(h, w);
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    img.set(i, {latseg::uniform(rng, 0, 1), latseg::uniform(rng, 0, 1), latseg::uniform(rng, 0, 1)});
  }
  return img;
}

}  // namespace testing_support
