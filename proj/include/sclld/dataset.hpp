#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sclld/imaging.hpp"
#include "sclld/tensor.hpp"

namespace sclld {

enum class Label : int { Healthy = 0, Covid = 1 };

inline int to_int(Label l) { return static_cast<int>(l); }

// Every call to Sample::label() bumps a process-wide counter. Training code
// that must stay label-blind is bracketed by reset/read of this counter.
namespace label_audit {
std::uint64_t reads();
void reset();
}  // namespace label_audit

class Sample {
 public:
  Sample() = default;
  Sample(std::string id, std::filesystem::path image_path, std::optional<Label> label = {})
      : id_(std::move(id)), image_path_(std::move(image_path)), label_(label) {}

  const std::string& id() const { return id_; }
  const std::filesystem::path& image_path() const { return image_path_; }
  bool has_label() const { return label_.has_value(); }
  // Audited access; throws if the sample is unlabelled.
  Label label() const;

  Sample without_label() const { return Sample(id_, image_path_); }

  friend bool operator==(const Sample&, const Sample&) = default;

 private:
  std::string id_;
  std::filesystem::path image_path_;
  std::optional<Label> label_;
};

struct DatasetSplit {
  std::vector<Sample> train_unlabelled;
  std::vector<Sample> train_labelled;
  std::vector<Sample> validation;
  std::vector<Sample> test;
  std::uint64_t seed = 0;
  double labelled_fraction = 0.0;
};

// Half-up rounding used for every pool size.
std::size_t round_half_up(double x);

// 80/20 train/test split, then `labelled_fraction` of the training pool is
// labelled (class-stratified) and 20% of that becomes validation. Samples in
// the unlabelled pool are stored without their labels.
DatasetSplit partition_dataset(const std::vector<Sample>& samples, double labelled_fraction,
                               std::uint64_t seed);

// Writes count/2 images of each class as 100x100 PGMs plus manifest.csv into
// out_dir. Class 0: smooth blob; class 1: the same kind of blob carrying
// fine-grained speckled lesions.
std::vector<Sample> generate_synthetic(std::size_t count, std::uint64_t seed,
                                       const std::filesystem::path& out_dir);

// The raw (pre-Sobel) synthetic image for one class; exposed for tests.
GrayImage synthesize_image(Label label, Rng& rng);

// CSV with header "id,path,label"; label empty for unlabelled samples.
// Relative paths are resolved against the manifest's directory.
void save_manifest(const std::vector<Sample>& samples, const std::filesystem::path& path);
std::vector<Sample> load_manifest(const std::filesystem::path& path, bool check_files = true);

// A split stored as four manifests plus split.json in one directory.
void save_split(const DatasetSplit& split, const std::filesystem::path& dir);
DatasetSplit load_split(const std::filesystem::path& dir);

// Reads and preprocesses one image into a [1,100,100] tensor.
Tensor load_preprocessed(const Sample& sample, bool use_sobel);
std::vector<Tensor> load_preprocessed(const std::vector<Sample>& samples, bool use_sobel);

}  // namespace sclld
