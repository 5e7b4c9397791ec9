#include "dvce/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <set>

namespace dvce {

namespace {

double log_sum_exp(const Vec& v) {
  const double mx = v.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((v.array() - mx).exp().sum());
}

}  // namespace

// ---------------------------------------------------------------------------
// GaussianMixture

GaussianMixture::GaussianMixture(std::vector<double> weights, Mat means, double component_variance,
                                 std::vector<int> labels)
    : weights_(std::move(weights)),
      means_(std::move(means)),
      variance_(component_variance),
      labels_(std::move(labels)) {
  const auto k = static_cast<std::size_t>(means_.cols());
  if (k == 0 || weights_.size() != k || labels_.size() != k) {
    throw std::invalid_argument("GaussianMixture: weights, means and labels must agree in count");
  }
  if (!(variance_ > 0.0)) throw std::invalid_argument("GaussianMixture: variance must be > 0");
  double total = 0.0;
  for (double w : weights_) {
    if (!(w > 0.0)) throw std::invalid_argument("GaussianMixture: weights must be positive");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw std::invalid_argument("GaussianMixture: weights must sum to 1");
  }
  for (int y : labels_) {
    if (y < 0) throw std::invalid_argument("GaussianMixture: labels must be non-negative");
    class_count_ = std::max(class_count_, y + 1);
  }
  log_weights_.resize(static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < k; ++i) log_weights_[static_cast<Eigen::Index>(i)] = std::log(weights_[i]);
  mean_sq_norms_ = means_.colwise().squaredNorm().transpose();
}

GaussianMixture GaussianMixture::from_samples(const LabeledData& data, double bandwidth) {
  const auto n = static_cast<std::size_t>(data.size());
  if (n == 0) throw std::invalid_argument("GaussianMixture::from_samples: empty data");
  std::vector<double> w(n, 1.0 / static_cast<double>(n));
  // renormalize so the sum is 1 to within rounding of a single division
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& x : w) x /= total;
  return GaussianMixture(std::move(w), data.inputs, bandwidth * bandwidth, data.labels);
}

Vec GaussianMixture::log_responsibilities(const Vec& x, double scale, double var) const {
  if (x.size() != dim()) throw DimensionError("GaussianMixture: input dimension mismatch");
  Vec logits = log_weights_ -
               (x.squaredNorm() - 2.0 * scale * (means_.transpose() * x).array() +
                scale * scale * mean_sq_norms_.array())
                       .matrix() /
                   (2.0 * var);
  logits.array() -= log_sum_exp(logits);
  return logits;
}

double GaussianMixture::log_density(const Vec& x) const { return scaled_log_density(x, 1.0, variance_); }

double GaussianMixture::noised_log_density(const NoiseSchedule& s, const Vec& xt, int t) const {
  const double ab = s.alpha_bar(t);
  return scaled_log_density(xt, std::sqrt(ab), ab * variance_ + (1.0 - ab));
}

double GaussianMixture::scaled_log_density(const Vec& x, double scale, double var) const {
  if (x.size() != dim()) throw DimensionError("GaussianMixture: input dimension mismatch");
  Vec logits = log_weights_ -
               ((x.replicate(1, components()) - scale * means_).colwise().squaredNorm().transpose()) /
                   (2.0 * var);
  const double d = static_cast<double>(dim());
  return log_sum_exp(logits) - 0.5 * d * std::log(2.0 * std::numbers::pi * var);
}

Vec GaussianMixture::sample(Rng& rng, Eigen::Index* component) const {
  double u = rng.uniform();
  Eigen::Index k = 0;
  for (; k + 1 < components(); ++k) {
    u -= weights_[static_cast<std::size_t>(k)];
    if (u < 0.0) break;
  }
  if (component) *component = k;
  return means_.col(k) + std::sqrt(variance_) * sample_standard_normal(rng, dim());
}

Vec gmm_posterior_x0_mean(const GaussianMixture& g, const NoiseSchedule& s, const Vec& xt, int t) {
  s.beta(t);
  const double ab = s.alpha_bar(t);
  const double scale = std::sqrt(ab);
  const double var = ab * g.variance() + (1.0 - ab);
  const Vec resp = g.log_responsibilities(xt, scale, var).array().exp();
  const Vec mean_bar = g.means() * resp;
  const double a = scale * g.variance() / var;
  return (1.0 - a * scale) * mean_bar + a * xt;
}

// ---------------------------------------------------------------------------
// Variance and time embedding

std::string to_string(VarianceMode m) {
  return m == VarianceMode::FixedSmall ? "fixed-small" : "fixed-large";
}

VarianceMode parse_variance_mode(const std::string& name) {
  if (name == "fixed-small") return VarianceMode::FixedSmall;
  if (name == "fixed-large") return VarianceMode::FixedLarge;
  throw FormatError("unknown variance mode '" + name + "'");
}

Vec reverse_variance(const NoiseSchedule& s, int t, VarianceMode mode, Eigen::Index dim) {
  const double v = mode == VarianceMode::FixedSmall ? s.posterior_variance(t) : s.beta(t);
  return Vec::Constant(dim, v);
}

Vec time_embedded_input(const Vec& xt, int t, int T) {
  Vec in(xt.size() + kTimeEmbeddingWidth);
  const double frac = static_cast<double>(t) / static_cast<double>(T);
  in.head(xt.size()) = xt;
  in[xt.size()] = frac;
  in[xt.size() + 1] = std::sin(std::numbers::pi * frac);
  in[xt.size() + 2] = std::cos(std::numbers::pi * frac);
  return in;
}

// ---------------------------------------------------------------------------
// EpsilonModel

EpsilonModel EpsilonModel::analytic(GaussianMixture mixture) {
  return EpsilonModel(std::move(mixture));
}

EpsilonModel EpsilonModel::trained(SmallNet net, bool variance_head) {
  const int d = net.input_dim() - kTimeEmbeddingWidth;
  if (d < 1 || net.output_dim() != (variance_head ? 2 * d : d)) {
    throw DimensionError("EpsilonModel::trained: network shape does not match data dim + time embedding");
  }
  return EpsilonModel(Trained{std::move(net), variance_head});
}

bool EpsilonModel::has_variance_head() const {
  const auto* tr = std::get_if<Trained>(&impl_);
  return tr && tr->variance_head;
}

Eigen::Index EpsilonModel::dim() const {
  if (const auto* g = std::get_if<GaussianMixture>(&impl_)) return g->dim();
  return std::get<Trained>(impl_).net.input_dim() - kTimeEmbeddingWidth;
}

const GaussianMixture& EpsilonModel::mixture() const {
  if (const auto* g = std::get_if<GaussianMixture>(&impl_)) return *g;
  throw std::logic_error("EpsilonModel: not an analytic model");
}

const SmallNet& EpsilonModel::net() const {
  if (const auto* tr = std::get_if<Trained>(&impl_)) return tr->net;
  throw std::logic_error("EpsilonModel: not a trained model");
}

namespace {

void check_dim(const EpsilonModel& m, const Vec& xt) {
  if (xt.size() != m.dim()) {
    throw DimensionError("denoiser: x_t has " + std::to_string(xt.size()) + " entries, model expects " +
                         std::to_string(m.dim()));
  }
}

DenoiserOutput net_output_to_prediction(const Vec& raw, Eigen::Index d, bool variance_head,
                                        const NoiseSchedule& s, int t) {
  DenoiserOutput out{raw.head(d), std::nullopt};
  if (variance_head) {
    // log Sigma = v log beta + (1 - v) log beta~, with beta~_1 clipped to beta~_2
    const double small = s.steps() > 1 && t == 1 ? s.posterior_variance(2) : s.posterior_variance(t);
    const double log_small = std::log(std::max(small, 1e-20));
    const double log_large = std::log(s.beta(t));
    const Vec v = raw.tail(d);
    out.log_var = (v.array() * log_large + (1.0 - v.array()) * log_small).matrix();
  }
  return out;
}

}  // namespace

DenoiserOutput predict_epsilon(const EpsilonModel& m, const NoiseSchedule& s, const Vec& xt, int t) {
  check_dim(m, xt);
  s.beta(t);
  const double ab = s.alpha_bar(t);
  if (m.is_analytic()) {
    const Vec x0 = gmm_posterior_x0_mean(m.mixture(), s, xt, t);
    return {(xt - std::sqrt(ab) * x0) / std::sqrt(1.0 - ab), std::nullopt};
  }
  const Vec raw = m.net().forward(time_embedded_input(xt, t, s.steps()));
  return net_output_to_prediction(raw, m.dim(), m.has_variance_head(), s, t);
}

Vec f_dn(const EpsilonModel& m, const NoiseSchedule& s, const Vec& xt, int t) {
  return DenoisedEstimate(m, s, xt, t).x0();
}

Vec reverse_mean_from_eps(const NoiseSchedule& s, const Vec& xt, int t, const Vec& eps_hat) {
  require_same_size(xt, eps_hat, "reverse_mean_from_eps");
  const double beta = s.beta(t);
  const double ab = s.alpha_bar(t);
  return (xt - (beta / std::sqrt(1.0 - ab)) * eps_hat) / std::sqrt(1.0 - beta);
}

Vec reverse_mean_mu_theta(const EpsilonModel& m, const NoiseSchedule& s, const Vec& xt, int t) {
  return reverse_mean_from_eps(s, xt, t, predict_epsilon(m, s, xt, t).eps_hat);
}

// ---------------------------------------------------------------------------
// DenoisedEstimate

DenoisedEstimate::DenoisedEstimate(const EpsilonModel& m, const NoiseSchedule& s, const Vec& xt, int t)
    : model_(&m) {
  check_dim(m, xt);
  s.beta(t);
  const double ab = s.alpha_bar(t);
  if (ab < 1e-12) throw std::domain_error("f_dn: alpha_bar_t below 1e-12 is ill-conditioned");
  sqrt_ab_ = std::sqrt(ab);
  sqrt_1mab_ = std::sqrt(1.0 - ab);

  if (m.is_analytic()) {
    const auto& g = m.mixture();
    const double var = ab * g.variance() + (1.0 - ab);
    resp_ = g.log_responsibilities(xt, sqrt_ab_, var).array().exp();
    mean_bar_ = g.means() * resp_;
    const double a = sqrt_ab_ * g.variance() / var;
    jac_identity_ = a;
    jac_cov_ = sqrt_ab_ * (1.0 - a * sqrt_ab_) / var;
    const Vec post_mean = (1.0 - a * sqrt_ab_) * mean_bar_ + a * xt;
    out_ = {(xt - sqrt_ab_ * post_mean) / sqrt_1mab_, std::nullopt};
  } else {
    input_ = time_embedded_input(xt, t, s.steps());
    out_ = net_output_to_prediction(m.net().forward(input_), m.dim(), m.has_variance_head(), s, t);
  }
  x0_ = xt / sqrt_ab_ - (sqrt_1mab_ / sqrt_ab_) * out_.eps_hat;
}

Vec DenoisedEstimate::pullback(const Vec& upstream) const {
  require_same_size(upstream, x0_, "DenoisedEstimate::pullback");
  if (model_->is_analytic()) {
    const Mat& means = model_->mixture().means();
    const Vec proj = means.transpose() * upstream;
    const Vec weighted = resp_.cwiseProduct(proj);
    return jac_identity_ * upstream +
           jac_cov_ * (means * weighted - mean_bar_ * mean_bar_.dot(upstream));
  }
  const auto& net = model_->net();
  Vec net_up = Vec::Zero(net.output_dim());
  net_up.head(upstream.size()) = upstream;
  const Vec in_grad = net.input_gradient(input_, net_up);
  return upstream / sqrt_ab_ - (sqrt_1mab_ / sqrt_ab_) * in_grad.head(upstream.size());
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct DiffusionDraws {
  Mat inputs;   // network inputs
  Mat targets;  // eps
};

DiffusionDraws draw_training_pairs(const Mat& data, const std::vector<Eigen::Index>& cols,
                                   const NoiseSchedule& s, Rng& rng) {
  const Eigen::Index d = data.rows();
  const auto n = static_cast<Eigen::Index>(cols.size());
  DiffusionDraws draws{Mat(d + kTimeEmbeddingWidth, n), Mat(d, n)};
  for (Eigen::Index j = 0; j < n; ++j) {
    const int t = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(s.steps())));
    const Vec eps = sample_standard_normal(rng, d);
    const Vec xt = forward_sample(s, data.col(cols[static_cast<std::size_t>(j)]), t, eps);
    draws.inputs.col(j) = time_embedded_input(xt, t, s.steps());
    draws.targets.col(j) = eps;
  }
  return draws;
}

}  // namespace

TrainedDenoiser train_denoiser(const Mat& data, const NoiseSchedule& s, const DenoiserTrainConfig& cfg,
                               Rng& rng) {
  if (data.cols() == 0) throw std::invalid_argument("train_denoiser: empty data");
  if (cfg.epochs < 1 || cfg.batch_size < 1 || !(cfg.learning_rate > 0.0)) {
    throw std::invalid_argument("train_denoiser: epochs, batch size and learning rate must be positive");
  }
  const Eigen::Index d = data.rows();
  const Eigen::Index n = data.cols();

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.uniform_index(i)]);
  }
  auto n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(n)));
  if (n < 10) n_val = 0;
  std::vector<Eigen::Index> val_cols(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<Eigen::Index> train_cols(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  if (val_cols.empty()) val_cols = train_cols;

  // fixed validation draws, several per held-out sample to tame variance
  std::vector<Eigen::Index> val_rep;
  for (int r = 0; r < 8; ++r) val_rep.insert(val_rep.end(), val_cols.begin(), val_cols.end());
  const DiffusionDraws val = draw_training_pairs(data, val_rep, s, rng);

  std::vector<int> dims{static_cast<int>(d) + kTimeEmbeddingWidth};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(static_cast<int>(cfg.variance_head ? 2 * d : d));
  SmallNet net = SmallNet::random(dims, cfg.activation, rng);
  Adam opt(net, cfg.learning_rate);

  auto evaluate = [&](const SmallNet& model) {
    const Mat pred = model.forward(val.inputs).topRows(d);
    return (pred - val.targets).colwise().squaredNorm().mean();
  };

  TrainedDenoiser result{EpsilonModel::trained(net, cfg.variance_head), 0.0,
                         val.targets.colwise().squaredNorm().mean(), {}};
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.set_learning_rate(cfg.learning_rate * (1.0 - 0.9 * epoch / static_cast<double>(cfg.epochs)));
    for (std::size_t i = train_cols.size(); i > 1; --i) {
      std::swap(train_cols[i - 1], train_cols[rng.uniform_index(i)]);
    }
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < train_cols.size(); start += batch) {
      const std::size_t stop = std::min(train_cols.size(), start + batch);
      std::vector<Eigen::Index> cols(train_cols.begin() + static_cast<std::ptrdiff_t>(start),
                                     train_cols.begin() + static_cast<std::ptrdiff_t>(stop));
      const DiffusionDraws draws = draw_training_pairs(data, cols, s, rng);
      const Mat out = net.forward(draws.inputs);
      const Mat diff = out.topRows(d) - draws.targets;
      const auto bsz = static_cast<double>(cols.size());
      const double loss = diff.colwise().squaredNorm().mean();
      if (!std::isfinite(loss)) {
        throw TrainingDiverged("train_denoiser: loss became non-finite in epoch " + std::to_string(epoch) +
                               " (last finite epoch loss " +
                               (result.epoch_losses.empty() ? std::string("n/a")
                                                            : format_double(result.epoch_losses.back())) +
                               ", learning rate " + format_double(cfg.learning_rate) + ")");
      }
      epoch_loss += loss * bsz;
      Mat upstream = Mat::Zero(out.rows(), out.cols());
      upstream.topRows(d) = (2.0 / bsz) * diff;
      opt.step(net, net.backward(draws.inputs, upstream));
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(train_cols.size()));
  }
  result.validation_loss = evaluate(net);
  if (!std::isfinite(result.validation_loss)) {
    throw TrainingDiverged("train_denoiser: validation loss is non-finite");
  }
  result.model = EpsilonModel::trained(std::move(net), cfg.variance_head);
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

void write_epsilon_checkpoint(std::ostream& out, const EpsilonModel& m, const NoiseSchedule& s) {
  if (m.is_analytic()) throw std::invalid_argument("write_epsilon_checkpoint: analytic models have no checkpoint");
  write_net(out, m.net(),
            {{"role", "epsilon"},
             {"schedule", s.fingerprint()},
             {"variance_head", m.has_variance_head() ? "1" : "0"},
             {"time_embedding", "t/T,sin(pi t/T),cos(pi t/T)"}});
}

EpsilonModel read_epsilon_checkpoint(std::istream& in, const NoiseSchedule& s) {
  NetCheckpoint ckpt = read_net(in);
  if (ckpt.get("role") != "epsilon") {
    throw IncompatibleCheckpoint("checkpoint role is '" + ckpt.get("role") + "', expected 'epsilon'");
  }
  if (ckpt.get("schedule") != s.fingerprint()) {
    throw IncompatibleCheckpoint("checkpoint schedule '" + ckpt.get("schedule") +
                                 "' does not match configured '" + s.fingerprint() + "'");
  }
  return EpsilonModel::trained(std::move(ckpt.net), ckpt.get("variance_head") == "1");
}

}  // namespace dvce
