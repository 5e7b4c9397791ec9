#include "dvce/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

namespace dvce {

namespace {

// Fisher-Yates over sample columns and labels together.
void shuffle_samples(LabeledData& d, Rng& rng) {
  for (Eigen::Index i = d.size() - 1; i > 0; --i) {
    const auto j = static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(i + 1)));
    if (i == j) continue;
    d.inputs.col(i).swap(d.inputs.col(j));
    std::swap(d.labels[static_cast<std::size_t>(i)], d.labels[static_cast<std::size_t>(j)]);
  }
}

int uniform_int(Rng& rng, int lo, int hi) {  // inclusive
  return lo + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(hi - lo + 1)));
}

Vec draw_square(Rng& rng) {
  constexpr int n = kShapeSide;
  const int side = uniform_int(rng, 4, 10);
  const int r0 = uniform_int(rng, 2, n - 2 - side);
  const int c0 = uniform_int(rng, 2, n - 2 - side);
  Vec img = Vec::Zero(n * n);
  for (int r = r0; r < r0 + side; ++r)
    for (int c = c0; c < c0 + side; ++c) img[r * n + c] = 1.0;
  return img;
}

Vec draw_disk(Rng& rng) {
  constexpr int n = kShapeSide;
  const double radius = 2.5 + 3.0 * rng.uniform();
  const double lo = 2.0 + radius, hi = n - 2.0 - radius;
  const double cy = lo + (hi - lo) * rng.uniform();
  const double cx = lo + (hi - lo) * rng.uniform();
  Vec img = Vec::Zero(n * n);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const double dy = r + 0.5 - cy, dx = c + 0.5 - cx;
      if (dy * dy + dx * dx <= radius * radius) img[r * n + c] = 1.0;
    }
  }
  return img;
}

Vec draw_cross(Rng& rng) {
  constexpr int n = kShapeSide;
  const int extent = uniform_int(rng, 6, 12);
  const int thick = uniform_int(rng, 2, 3);
  const int r0 = uniform_int(rng, 2, n - 2 - extent);
  const int c0 = uniform_int(rng, 2, n - 2 - extent);
  const int off = (extent - thick) / 2;
  Vec img = Vec::Zero(n * n);
  for (int k = 0; k < extent; ++k) {
    for (int w = 0; w < thick; ++w) {
      img[(r0 + off + w) * n + (c0 + k)] = 1.0;
      img[(r0 + k) * n + (c0 + off + w)] = 1.0;
    }
  }
  return img;
}

ToyDataset empty_dataset(DatasetKind kind, Eigen::Index d, Eigen::Index n, int classes) {
  ToyDataset ds;
  ds.kind = kind;
  ds.data.inputs.resize(d, n);
  ds.data.labels.assign(static_cast<std::size_t>(n), 0);
  ds.classes = classes;
  if (kind == DatasetKind::Shapes16) {
    ds.lower = 0.0;
    ds.upper = 1.0;
  }
  return ds;
}

int to_gray(double v) { return static_cast<int>(std::lround(255.0 * std::clamp(v, 0.0, 1.0))); }

}  // namespace

std::string to_string(DatasetKind k) { return k == DatasetKind::Gmm2d ? "gmm2d" : "shapes16"; }

DatasetKind parse_dataset_kind(const std::string& name) {
  if (name == "gmm2d") return DatasetKind::Gmm2d;
  if (name == "shapes16") return DatasetKind::Shapes16;
  throw FormatError("unknown dataset kind '" + name + "'");
}

GaussianMixture gmm2d_mixture(int classes, double separation, double sigma0) {
  if (classes < 2) throw std::invalid_argument("gmm2d: need at least 2 classes");
  if (!(separation > 0.0) || !(sigma0 > 0.0)) throw std::invalid_argument("gmm2d: separation and sigma0 must be > 0");
  Mat means(2, classes);
  std::vector<int> labels(static_cast<std::size_t>(classes));
  for (int k = 0; k < classes; ++k) {
    const double phi = 2.0 * std::numbers::pi * k / classes;
    means(0, k) = separation * std::cos(phi);
    means(1, k) = separation * std::sin(phi);
    labels[static_cast<std::size_t>(k)] = k;
  }
  return GaussianMixture(std::vector<double>(static_cast<std::size_t>(classes), 1.0 / classes), means,
                         sigma0 * sigma0, labels);
}

ToyDataset make_gmm2d(int classes, double separation, double sigma0, int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("make_gmm2d: n must be >= 1");
  GaussianMixture g = gmm2d_mixture(classes, separation, sigma0);
  const double sd = std::sqrt(g.variance());
  ToyDataset ds = empty_dataset(DatasetKind::Gmm2d, 2, n, classes);
  for (int i = 0; i < n; ++i) {
    const int k = i % classes;
    ds.data.inputs.col(i) = g.means().col(k) + sd * sample_standard_normal(rng, 2);
    ds.data.labels[static_cast<std::size_t>(i)] = k;
  }
  shuffle_samples(ds.data, rng);
  ds.mixture = std::move(g);
  return ds;
}

ToyDataset make_shapes16(int n, double noise, Rng& rng) {
  if (n < 1) throw std::invalid_argument("make_shapes16: n must be >= 1");
  if (!(noise >= 0.0 && noise <= 0.2)) throw std::invalid_argument("make_shapes16: noise must lie in [0, 0.2]");
  constexpr int d = kShapeSide * kShapeSide;
  ToyDataset ds = empty_dataset(DatasetKind::Shapes16, d, n, kShapeClasses);
  for (int i = 0; i < n; ++i) {
    const int k = i % kShapeClasses;
    Vec img = k == 0 ? draw_square(rng) : (k == 1 ? draw_disk(rng) : draw_cross(rng));
    if (noise > 0.0) img = (img + noise * sample_standard_normal(rng, d)).cwiseMax(0.0).cwiseMin(1.0);
    ds.data.inputs.col(i) = img;
    ds.data.labels[static_cast<std::size_t>(i)] = k;
  }
  shuffle_samples(ds.data, rng);
  return ds;
}

std::pair<ToyDataset, ToyDataset> split_dataset(const ToyDataset& ds, Eigen::Index test_count) {
  const Eigen::Index n = ds.data.size();
  if (test_count < 0 || test_count > n) throw std::invalid_argument("split_dataset: bad test count");
  ToyDataset train = ds, test = ds;
  const Eigen::Index keep = n - test_count;
  train.data.inputs = ds.data.inputs.leftCols(keep);
  train.data.labels.assign(ds.data.labels.begin(), ds.data.labels.begin() + keep);
  test.data.inputs = ds.data.inputs.rightCols(test_count);
  test.data.labels.assign(ds.data.labels.begin() + keep, ds.data.labels.end());
  return {std::move(train), std::move(test)};
}

void write_dataset(std::ostream& out, const ToyDataset& ds) {
  out << "DVCE-DATA v1 " << to_string(ds.kind) << ' ' << ds.data.dim() << ' ' << ds.data.size() << ' ' << ds.classes
      << '\n';
  for (Eigen::Index i = 0; i < ds.data.size(); ++i) {
    out << ds.data.labels[static_cast<std::size_t>(i)];
    for (Eigen::Index r = 0; r < ds.data.dim(); ++r) out << ' ' << format_double(ds.data.inputs(r, i));
    out << '\n';
  }
}

ToyDataset read_dataset(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw FormatError("dataset: empty input");
  std::istringstream hs(header);
  std::string magic, version, kind;
  long d = 0, n = 0, k = 0;
  if (!(hs >> magic >> version >> kind >> d >> n >> k) || magic != "DVCE-DATA" || version != "v1") {
    throw FormatError("dataset: bad header '" + header + "'");
  }
  if (d < 1 || n < 0 || k < 1) throw FormatError("dataset: bad sizes in header");
  ToyDataset ds = empty_dataset(parse_dataset_kind(kind), d, n, static_cast<int>(k));
  for (long i = 0; i < n; ++i) {
    int label;
    if (!(in >> label)) throw FormatError("dataset: truncated at sample " + std::to_string(i));
    if (label < 0 || label >= k) throw FormatError("dataset: label out of range at sample " + std::to_string(i));
    ds.data.labels[static_cast<std::size_t>(i)] = label;
    for (long r = 0; r < d; ++r) {
      if (!(in >> ds.data.inputs(r, i))) throw FormatError("dataset: truncated at sample " + std::to_string(i));
    }
  }
  return ds;
}

void write_pgm(std::ostream& out, const Vec& image, int side) {
  if (image.size() != side * side) throw DimensionError("write_pgm: image is not side x side");
  out << "P2\n" << side << ' ' << side << "\n255\n";
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) out << (c ? " " : "") << to_gray(image[r * side + c]);
    out << '\n';
  }
}

void write_pgm_grid(std::ostream& out, const std::vector<Vec>& images, int cols, int side) {
  if (images.empty() || cols < 1) throw std::invalid_argument("write_pgm_grid: nothing to draw");
  const int count = static_cast<int>(images.size());
  const int rows = (count + cols - 1) / cols;
  const int width = cols * side + (cols - 1);
  const int height = rows * side + (rows - 1);
  std::vector<int> canvas(static_cast<std::size_t>(width * height), 128);
  for (int k = 0; k < count; ++k) {
    if (images[static_cast<std::size_t>(k)].size() != side * side) {
      throw DimensionError("write_pgm_grid: image is not side x side");
    }
    const int top = (k / cols) * (side + 1), left = (k % cols) * (side + 1);
    for (int r = 0; r < side; ++r)
      for (int c = 0; c < side; ++c)
        canvas[static_cast<std::size_t>((top + r) * width + left + c)] =
            to_gray(images[static_cast<std::size_t>(k)][r * side + c]);
  }
  out << "P2\n" << width << ' ' << height << "\n255\n";
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) out << (c ? " " : "") << canvas[static_cast<std::size_t>(r * width + c)];
    out << '\n';
  }
}

}  // namespace dvce
