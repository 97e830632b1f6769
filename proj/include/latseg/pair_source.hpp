#pragma once

#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

#include "latseg/dataset.hpp"

namespace latseg {

// Random-access stream of pair samples. at(i) must be a pure function of i.
// Unbounded sources (generators) report no size.
class PairSource {
 public:
  virtual ~PairSource() = default;
  virtual std::optional<std::size_t> size() const = 0;
  virtual PairSample at(std::size_t index) const = 0;
};

class VectorSource final : public PairSource {
 public:
  explicit VectorSource(std::vector<PairSample> samples) : samples_(std::move(samples)) {}

  std::optional<std::size_t> size() const override { return samples_.size(); }
  PairSample at(std::size_t index) const override {
    if (index >= samples_.size()) throw DataError("pair source exhausted at index " + std::to_string(index));
    return samples_[index];
  }

 private:
  std::vector<PairSample> samples_;
};

class DatasetSource final : public PairSource {
 public:
  explicit DatasetSource(const fs::path& dir) : dataset_(dir) {}

  std::optional<std::size_t> size() const override { return dataset_.size(); }
  PairSample at(std::size_t index) const override {
    if (index >= dataset_.size()) throw DataError("pair source exhausted at index " + std::to_string(index));
    return dataset_.load(index);
  }
  const PairDataset& dataset() const noexcept { return dataset_; }

 private:
  PairDataset dataset_;
};

inline std::vector<PairSample> take(const PairSource& source, std::size_t first, std::size_t count) {
  std::vector<PairSample> out;
  out.reserve(count);
  for (std::size_t i = first; i < first + count; ++i) out.push_back(source.at(i));
  return out;
}

}  // namespace latseg
