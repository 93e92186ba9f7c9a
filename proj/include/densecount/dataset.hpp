#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "densecount/groundtruth.hpp"
#include "densecount/image.hpp"

namespace densecount {

struct Sample {
  Image image;
  AnnotationSet annotations;
};

// Indexed access to training or evaluation samples. load() may throw
// DataError for an unreadable item.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual std::size_t size() const = 0;
  virtual std::string id(std::size_t index) const = 0;
  virtual Sample load(std::size_t index) const = 0;
};

class InMemorySource : public SampleSource {
 public:
  InMemorySource() = default;
  explicit InMemorySource(std::vector<Sample> samples) : samples_(std::move(samples)) {}

  std::size_t size() const override { return samples_.size(); }
  std::string id(std::size_t index) const override { return samples_.at(index).annotations.image_id(); }
  Sample load(std::size_t index) const override { return samples_.at(index); }

 private:
  std::vector<Sample> samples_;
};

// Directory layout: images/<id>.<ext> with annotations/<id>.json, matched by
// file stem. Images without an annotation (or the reverse) are skipped and
// listed in unmatched(). Items are ordered by id.
class DirectorySource : public SampleSource {
 public:
  explicit DirectorySource(const std::filesystem::path& root);

  std::size_t size() const override { return entries_.size(); }
  std::string id(std::size_t index) const override { return entries_.at(index).id; }
  Sample load(std::size_t index) const override;

  const std::vector<std::string>& unmatched() const { return unmatched_; }

 private:
  struct Entry {
    std::string id;
    std::filesystem::path image;
    std::filesystem::path annotation;
  };
  std::vector<Entry> entries_;
  std::vector<std::string> unmatched_;
};

// A view onto selected indices of another source.
class SubsetSource : public SampleSource {
 public:
  SubsetSource(const SampleSource& base, std::vector<std::size_t> indices)
      : base_(&base), indices_(std::move(indices)) {}

  std::size_t size() const override { return indices_.size(); }
  std::string id(std::size_t index) const override { return base_->id(indices_.at(index)); }
  Sample load(std::size_t index) const override { return base_->load(indices_.at(index)); }

 private:
  const SampleSource* base_;
  std::vector<std::size_t> indices_;
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

// Seed-selected validation indices (min(count, size)), the rest for training;
// both lists ascending.
Split split_validation(std::size_t size, std::size_t count, std::uint64_t seed);

struct SyntheticCrowdOptions {
  int width = 256;
  int height = 256;
  int min_people = 20;
  int max_people = 60;
  // Heads are bright Gaussian blobs of this std (pixels) on a dark, noisy floor.
  double blob_sigma = 2.5;
  double noise = 0.02;
  // Heads keep this distance from the image border.
  int margin = 8;
};

Sample synthetic_crowd(const SyntheticCrowdOptions& options, std::uint64_t seed, const std::string& id);

}  // namespace densecount
