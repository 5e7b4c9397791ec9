#pragma once

#include "dvce/denoiser.hpp"
#include "dvce/numerics.hpp"

#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace dvce {

enum class DatasetKind { Gmm2d, Shapes16 };

std::string to_string(DatasetKind k);
DatasetKind parse_dataset_kind(const std::string& name);

/// Square, disk, cross.
inline constexpr int kShapeClasses = 3;
inline constexpr int kShapeSide = 16;

struct ToyDataset {
  DatasetKind kind = DatasetKind::Gmm2d;
  LabeledData data;
  int classes = 0;
  double lower = -std::numeric_limits<double>::infinity();  // per-component domain bounds
  double upper = std::numeric_limits<double>::infinity();
  std::optional<GaussianMixture> mixture;  // generating mixture for gmm2d
};

/// Mixture with one isotropic component (variance sigma0^2) per class, means
/// on a circle of radius `separation` starting at angle 0. Classes take turns
/// so the counts differ by at most one; sample order is shuffled.
ToyDataset make_gmm2d(int classes, double separation, double sigma0, int n, Rng& rng);

/// The mixture make_gmm2d samples from.
GaussianMixture gmm2d_mixture(int classes, double separation, double sigma0);

/// 16x16 images (row-major, values in [0, 1]) of a filled square (class 0),
/// a disk (1) or a plus-shaped cross (2) on a black background, with random
/// size and position keeping at least 2 px of border, plus Gaussian pixel
/// noise of standard deviation `noise` clipped back to [0, 1].
ToyDataset make_shapes16(int n, double noise, Rng& rng);

/// Splits off the last `test_count` samples.
std::pair<ToyDataset, ToyDataset> split_dataset(const ToyDataset& ds, Eigen::Index test_count);

/// "DVCE-DATA v1 <kind> <d> <n> <K>", then per line: class, then d values.
void write_dataset(std::ostream& out, const ToyDataset& ds);
/// Throws FormatError on malformed input. The gmm2d mixture is not stored.
ToyDataset read_dataset(std::istream& in);

/// P2 PGM of one 16x16 sample, values clipped to [0, 1] and scaled to 255.
void write_pgm(std::ostream& out, const Vec& image, int side = kShapeSide);

/// Grid of images (rows x cols cells, 1 px separators), filled row by row.
void write_pgm_grid(std::ostream& out, const std::vector<Vec>& images, int cols, int side = kShapeSide);

}  // namespace dvce
