#pragma once

// Procedural image datasets whose class identity lives in second-order
// (multiplicative) pixel statistics rather than in mean intensities.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace oqc {

/// Images are columns of channels*size*size floats (channel, row, column).
struct ImageSet {
  Eigen::Index channels = 3;
  Eigen::Index size = 0;
  int n_classes = 0;
  Eigen::MatrixXf pixels;
  std::vector<int> labels;

  Eigen::Index count() const { return pixels.cols(); }
};

struct Dataset {
  ImageSet train;
  ImageSet test;
};

/// Every cell of `cell x cell` pixels holds a mixture of fixed basis textures
/// whose paired coefficients (a_j, b_j) are drawn with a class-specific
/// correlation sign pattern. Class means are zero, so the label is only
/// recoverable from products of pixel projections.
struct SyntheticDatasetSpec {
  int n_classes = 10;
  int train_per_class = 100;
  int test_per_class = 50;
  int image_size = 32;
  int cell = 4;          // texture cell edge; match the backbone patch
  int pairs = 4;         // correlated basis pairs per cell
  double correlation = 0.6;
  double noise = 0.5;
  std::uint64_t seed = 1234;
};

/// Pure function of the spec: the same spec yields the same pixels.
/// Train and test draws come from disjoint generator streams.
Dataset generate_synthetic(const SyntheticDatasetSpec& spec);

/// Loads `<root>/train/<class>/*.ppm` and `<root>/test/<class>/*.ppm`
/// (P3 or P6, 8-bit). Class directories are sorted by name to assign labels.
/// Images must be square and share one size.
Dataset load_image_folder(const std::filesystem::path& root);

}  // namespace oqc
