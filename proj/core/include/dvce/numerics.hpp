#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dvce {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Error types shared by every module.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_same_size(const Vec& a, const Vec& b, const char* what);
bool all_finite(const Vec& v);

/// Labeled samples stored column-wise: inputs.col(i) has class labels[i].
struct LabeledData {
  Mat inputs;
  std::vector<int> labels;

  Eigen::Index size() const { return inputs.cols(); }
  Eigen::Index dim() const { return inputs.rows(); }
  Vec sample(Eigen::Index i) const { return inputs.col(i); }
};

/// Seeded random stream. The engine is mt19937_64 seeded from (seed, stream)
/// through std::seed_seq; normals use the Marsaglia polar transform on
/// 53-bit uniforms. Streams with different indices are independent; the
/// same (seed, stream) pair replays bit-identically within one build.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  double uniform();
  double normal();
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_index() const { return stream_; }

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_;
  std::uint64_t stream_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

Vec sample_standard_normal(Rng& rng, Eigen::Index n);

using ScalarFn = std::function<double(const Vec&)>;

/// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h per coordinate.
/// Throws NonFiniteError when f is not finite at a probe point.
Vec finite_difference_gradient(const ScalarFn& f, const Vec& x, double h);

/// max_i |a_i - b_i| / max(|b|_inf, floor)
double max_relative_error(const Vec& a, const Vec& b, double floor = 1e-12);

enum class Activation { Tanh, Relu };

std::string to_string(Activation a);
Activation parse_activation(const std::string& name);

struct DenseLayer {
  Mat weight;  // d_out x d_in
  Vec bias;    // d_out
};

struct NetGradients {
  std::vector<Mat> weight;
  std::vector<Vec> bias;
  Mat input;  // d_in x batch

  double squared_norm() const;
};

/// Fully connected network. Hidden layers share one activation, the output
/// layer is affine.
class SmallNet {
 public:
  SmallNet() = default;
  /// Zero-initialized parameters; dims = {d_in, h_1, ..., d_out}.
  SmallNet(std::vector<int> dims, Activation activation);

  /// Glorot-uniform weights, zero biases.
  static SmallNet random(std::vector<int> dims, Activation activation, Rng& rng);

  Vec forward(const Vec& input) const;
  /// Batch forward, one sample per column.
  Mat forward(const Mat& inputs) const;

  /// Exact gradients of sum_j <upstream.col(j), forward(inputs.col(j))>.
  NetGradients backward(const Mat& inputs, const Mat& upstream) const;
  NetGradients backward(const Vec& input, const Vec& upstream) const;
  /// Input gradient only, without materializing parameter gradients.
  Vec input_gradient(const Vec& input, const Vec& upstream) const;

  const std::vector<int>& dims() const { return dims_; }
  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  Activation activation() const { return activation_; }
  std::size_t parameter_count() const;

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

 private:
  Mat activate(const Mat& pre) const;
  Mat activation_derivative(const Mat& pre, const Mat& post) const;
  void check_input(Eigen::Index rows) const;

  std::vector<int> dims_;
  Activation activation_ = Activation::Tanh;
  std::vector<DenseLayer> layers_;
};

/// Adam with bias correction.
class Adam {
 public:
  Adam(const SmallNet& net, double learning_rate, double beta1 = 0.9,
       double beta2 = 0.999, double epsilon = 1e-8);

  void step(SmallNet& net, const NetGradients& grads);
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long steps_ = 0;
  std::vector<Mat> m_w_, v_w_;
  std::vector<Vec> m_b_, v_b_;
};

using CheckpointMeta = std::vector<std::pair<std::string, std::string>>;

struct NetCheckpoint {
  SmallNet net;
  CheckpointMeta meta;

  /// Value of a metadata key; throws FormatError when absent.
  const std::string& get(const std::string& key) const;
  bool has(const std::string& key) const;
};

/// DVCE-NET v1 text checkpoint; values round-trip exactly.
void write_net(std::ostream& out, const SmallNet& net, const CheckpointMeta& meta = {});
NetCheckpoint read_net(std::istream& in);

/// Shortest text that parses back to exactly v (std::to_chars).
std::string format_double(double v);

/// Runs body(i) for i in [0, count) on `jobs` worker threads. Exceptions are
/// rethrown on the calling thread (first by index).
void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& body);

/// Content hash (FNV-1a 64) rendered as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace dvce
