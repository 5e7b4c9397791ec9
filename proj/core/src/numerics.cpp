#include "dvce/numerics.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <istream>
#include <limits>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

namespace dvce {

void require_same_size(const Vec& a, const Vec& b, const char* what) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(what) + ": length mismatch (" + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()) + ")");
  }
}

bool all_finite(const Vec& v) { return v.allFinite(); }

// ---------------------------------------------------------------------------
// Rng

namespace {
std::seed_seq make_seed_seq(std::uint64_t seed, std::uint64_t stream) {
  return std::seed_seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                       static_cast<std::uint32_t>(stream),
                       static_cast<std::uint32_t>(stream >> 32), 0x44564345u};
}
}  // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {
  auto seq = make_seed_seq(seed, stream);
  engine_.seed(seq);
}

double Rng::uniform() {
  // 53 random mantissa bits -> [0, 1)
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double factor = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * factor;
  has_spare_ = true;
  return u * factor;
}

std::uint64_t Rng::uniform_index(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: n must be positive");
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t r;
  do {
    r = engine_();
  } while (r >= limit);
  return r % n;
}

Vec sample_standard_normal(Rng& rng, Eigen::Index n) {
  if (n < 1) throw std::invalid_argument("sample_standard_normal: n must be >= 1");
  Vec out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = rng.normal();
  return out;
}

// ---------------------------------------------------------------------------
// Finite differences

Vec finite_difference_gradient(const ScalarFn& f, const Vec& x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_difference_gradient: h must be > 0");
  Vec grad(x.size());
  Vec probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double fp = f(probe);
    probe[i] = x[i] - h;
    const double fm = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NonFiniteError("finite_difference_gradient: non-finite f near coordinate " +
                           std::to_string(i));
    }
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

double max_relative_error(const Vec& a, const Vec& b, double floor) {
  require_same_size(a, b, "max_relative_error");
  if (a.size() == 0) return 0.0;
  const double scale = std::max(b.cwiseAbs().maxCoeff(), floor);
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

// ---------------------------------------------------------------------------
// SmallNet

std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  throw FormatError("unknown activation '" + name + "'");
}

double NetGradients::squared_norm() const {
  double s = 0.0;
  for (const auto& w : weight) s += w.squaredNorm();
  for (const auto& b : bias) s += b.squaredNorm();
  return s;
}

SmallNet::SmallNet(std::vector<int> dims, Activation activation)
    : dims_(std::move(dims)), activation_(activation) {
  if (dims_.size() < 2) throw std::invalid_argument("SmallNet: need at least input and output dims");
  for (int d : dims_) {
    if (d < 1) throw std::invalid_argument("SmallNet: layer dims must be positive");
  }
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    layers_.push_back({Mat::Zero(dims_[l + 1], dims_[l]), Vec::Zero(dims_[l + 1])});
  }
}

SmallNet SmallNet::random(std::vector<int> dims, Activation activation, Rng& rng) {
  SmallNet net(std::move(dims), activation);
  for (auto& layer : net.layers_) {
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.weight.rows() + layer.weight.cols()));
    for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
      for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
        layer.weight(r, c) = limit * (2.0 * rng.uniform() - 1.0);
      }
    }
  }
  return net;
}

std::size_t SmallNet::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    n += static_cast<std::size_t>(dims_[l] + 1) * static_cast<std::size_t>(dims_[l + 1]);
  }
  return n;
}

void SmallNet::check_input(Eigen::Index rows) const {
  if (layers_.empty()) throw std::logic_error("SmallNet: empty network");
  if (rows != dims_.front()) {
    throw DimensionError("SmallNet: input has " + std::to_string(rows) + " entries, expected " +
                         std::to_string(dims_.front()));
  }
}

Mat SmallNet::activate(const Mat& pre) const {
  if (activation_ == Activation::Tanh) return pre.array().tanh().matrix();
  return pre.cwiseMax(0.0);
}

Mat SmallNet::activation_derivative(const Mat& pre, const Mat& post) const {
  if (activation_ == Activation::Tanh) return (1.0 - post.array().square()).matrix();
  return (pre.array() > 0.0).cast<double>().matrix();
}

Vec SmallNet::forward(const Vec& input) const {
  check_input(input.size());
  Vec h = input;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Vec pre = layers_[l].weight * h + layers_[l].bias;
    h = (l + 1 < layers_.size()) ? Vec(activate(pre)) : pre;
  }
  return h;
}

Mat SmallNet::forward(const Mat& inputs) const {
  check_input(inputs.rows());
  Mat h = inputs;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Mat pre = (layers_[l].weight * h).colwise() + layers_[l].bias;
    h = (l + 1 < layers_.size()) ? activate(pre) : pre;
  }
  return h;
}

NetGradients SmallNet::backward(const Mat& inputs, const Mat& upstream) const {
  check_input(inputs.rows());
  if (upstream.rows() != dims_.back() || upstream.cols() != inputs.cols()) {
    throw DimensionError("SmallNet::backward: upstream shape mismatch");
  }
  const std::size_t n_layers = layers_.size();
  std::vector<Mat> acts(n_layers + 1);  // acts[l] is input to layer l
  std::vector<Mat> pres(n_layers);
  acts[0] = inputs;
  for (std::size_t l = 0; l < n_layers; ++l) {
    pres[l] = (layers_[l].weight * acts[l]).colwise() + layers_[l].bias;
    acts[l + 1] = (l + 1 < n_layers) ? activate(pres[l]) : pres[l];
  }

  NetGradients g;
  g.weight.resize(n_layers);
  g.bias.resize(n_layers);
  Mat delta = upstream;  // gradient w.r.t. pre-activation of current layer
  for (std::size_t l = n_layers; l-- > 0;) {
    g.weight[l] = delta * acts[l].transpose();
    g.bias[l] = delta.rowwise().sum();
    Mat back = layers_[l].weight.transpose() * delta;
    if (l > 0) {
      delta = back.cwiseProduct(activation_derivative(pres[l - 1], acts[l]));
    } else {
      g.input = std::move(back);
    }
  }
  return g;
}

NetGradients SmallNet::backward(const Vec& input, const Vec& upstream) const {
  return backward(Mat(input), Mat(upstream));
}

Vec SmallNet::input_gradient(const Vec& input, const Vec& upstream) const {
  check_input(input.size());
  if (upstream.size() != dims_.back()) throw DimensionError("SmallNet::input_gradient: upstream size");
  const std::size_t n_layers = layers_.size();
  std::vector<Vec> pres(n_layers), posts(n_layers);
  Vec h = input;
  for (std::size_t l = 0; l < n_layers; ++l) {
    pres[l] = layers_[l].weight * h + layers_[l].bias;
    posts[l] = (l + 1 < n_layers) ? Vec(activate(pres[l])) : pres[l];
    h = posts[l];
  }
  Vec delta = upstream;
  for (std::size_t l = n_layers; l-- > 0;) {
    Vec back = layers_[l].weight.transpose() * delta;
    if (l == 0) return back;
    delta = back.cwiseProduct(Vec(activation_derivative(pres[l - 1], posts[l - 1])));
  }
  return delta;
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(const SmallNet& net, double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {
  for (const auto& layer : net.layers()) {
    m_w_.push_back(Mat::Zero(layer.weight.rows(), layer.weight.cols()));
    v_w_.push_back(Mat::Zero(layer.weight.rows(), layer.weight.cols()));
    m_b_.push_back(Vec::Zero(layer.bias.size()));
    v_b_.push_back(Vec::Zero(layer.bias.size()));
  }
}

void Adam::step(SmallNet& net, const NetGradients& grads) {
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    m_w_[l] = beta1_ * m_w_[l] + (1.0 - beta1_) * grads.weight[l];
    v_w_[l] = beta2_ * v_w_[l] + (1.0 - beta2_) * grads.weight[l].cwiseProduct(grads.weight[l]);
    layers[l].weight.array() -=
        lr_ * (m_w_[l].array() / c1) / ((v_w_[l].array() / c2).sqrt() + eps_);
    m_b_[l] = beta1_ * m_b_[l] + (1.0 - beta1_) * grads.bias[l];
    v_b_[l] = beta2_ * v_b_[l] + (1.0 - beta2_) * grads.bias[l].cwiseProduct(grads.bias[l]);
    layers[l].bias.array() -=
        lr_ * (m_b_[l].array() / c1) / ((v_b_[l].array() / c2).sqrt() + eps_);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

std::string format_double(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

const std::string& NetCheckpoint::get(const std::string& key) const {
  for (const auto& [k, v] : meta) {
    if (k == key) return v;
  }
  throw FormatError("checkpoint is missing header key '" + key + "'");
}

bool NetCheckpoint::has(const std::string& key) const {
  return std::any_of(meta.begin(), meta.end(), [&](const auto& kv) { return kv.first == key; });
}

void write_net(std::ostream& out, const SmallNet& net, const CheckpointMeta& meta) {
  out << "DVCE-NET v1\n";
  for (std::size_t i = 0; i < net.dims().size(); ++i) {
    out << (i ? " " : "") << net.dims()[i];
  }
  out << '\n' << to_string(net.activation()) << '\n';
  for (const auto& [k, v] : meta) {
    if (k.find('=') != std::string::npos || k.find('\n') != std::string::npos ||
        v.find('\n') != std::string::npos) {
      throw FormatError("checkpoint metadata must be single-line key=value");
    }
    out << k << '=' << v << '\n';
  }
  for (const auto& layer : net.layers()) {
    out << '\n';
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        out << (c ? " " : "") << format_double(layer.weight(r, c));
      }
      out << '\n';
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) {
      out << (r ? " " : "") << format_double(layer.bias[r]);
    }
    out << '\n';
  }
}

namespace {

std::vector<double> parse_row(const std::string& line, std::size_t expected, int line_no) {
  std::vector<double> vals;
  vals.reserve(expected);
  const char* p = line.c_str();
  char* end = nullptr;
  while (true) {
    while (*p == ' ' || *p == '\t' || *p == '\r') ++p;
    if (*p == '\0') break;
    const double v = std::strtod(p, &end);
    if (end == p) throw FormatError("checkpoint line " + std::to_string(line_no) + ": bad number");
    vals.push_back(v);
    p = end;
  }
  if (vals.size() != expected) {
    throw FormatError("checkpoint line " + std::to_string(line_no) + ": expected " +
                      std::to_string(expected) + " values, got " + std::to_string(vals.size()));
  }
  return vals;
}

}  // namespace

NetCheckpoint read_net(std::istream& in) {
  std::string line;
  int line_no = 0;
  auto next = [&](bool allow_eof = false) -> bool {
    if (!std::getline(in, line)) {
      if (allow_eof) return false;
      throw FormatError("checkpoint truncated after line " + std::to_string(line_no));
    }
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };

  next();
  if (line != "DVCE-NET v1") throw FormatError("not a DVCE-NET v1 checkpoint");
  next();
  std::vector<int> dims;
  {
    std::istringstream ss(line);
    int d;
    while (ss >> d) dims.push_back(d);
    if (dims.size() < 2) throw FormatError("checkpoint: need at least two layer dims");
  }
  next();
  const Activation act = parse_activation(line);

  NetCheckpoint ckpt{SmallNet(dims, act), {}};
  // key=value header lines until the first blank line
  while (true) {
    next();
    if (line.empty()) break;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("checkpoint: expected key=value or blank line");
    ckpt.meta.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  auto& layers = ckpt.net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (l > 0) {
      next();
      if (!line.empty()) throw FormatError("checkpoint: expected blank line between layers");
    }
    auto& layer = layers[l];
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      next();
      const auto row = parse_row(line, static_cast<std::size_t>(layer.weight.cols()), line_no);
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = row[c];
    }
    next();
    const auto bias = parse_row(line, static_cast<std::size_t>(layer.bias.size()), line_no);
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias[r] = bias[r];
  }
  return ckpt;
}

// ---------------------------------------------------------------------------

void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& body) {
  const std::size_t workers =
      std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  std::size_t err_index = count;
  std::exception_ptr err;
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(err_mutex);
        if (i < err_index) {
          err_index = i;
          err = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace dvce
