#pragma once

#include "dvce/numerics.hpp"
#include "dvce/schedule.hpp"

#include <iosfwd>
#include <memory>
#include <optional>
#include <variant>
#include <vector>

namespace dvce {

struct IncompatibleCheckpoint : FormatError {
  using FormatError::FormatError;
};

/// Isotropic Gaussian mixture over data space. Every component carries a
/// class label so the same object backs the Bayes classifier fixture.
class GaussianMixture {
 public:
  GaussianMixture(std::vector<double> weights, Mat means, double component_variance,
                  std::vector<int> labels);

  /// Equal-weight mixture with one component per sample (a Gaussian KDE).
  static GaussianMixture from_samples(const LabeledData& data, double bandwidth);

  Eigen::Index dim() const { return means_.rows(); }
  Eigen::Index components() const { return means_.cols(); }
  int class_count() const { return class_count_; }
  double weight(Eigen::Index k) const { return weights_[static_cast<std::size_t>(k)]; }
  const std::vector<double>& weights() const { return weights_; }
  const Mat& means() const { return means_; }
  double variance() const { return variance_; }
  int label(Eigen::Index k) const { return labels_[static_cast<std::size_t>(k)]; }
  const std::vector<int>& labels() const { return labels_; }
  const Vec& log_weights() const { return log_weights_; }
  const Vec& mean_sq_norms() const { return mean_sq_norms_; }

  /// log density of x under the mixture itself.
  double log_density(const Vec& x) const;
  /// log q_t(x_t): the mixture pushed through the forward process to step t
  /// (t = 0 is the data density).
  double noised_log_density(const NoiseSchedule& s, const Vec& xt, int t) const;

  /// Draws one sample; writes the component index if requested.
  Vec sample(Rng& rng, Eigen::Index* component = nullptr) const;

  /// Log-sum-exp normalized log responsibilities of x under components with
  /// means scale*m_k and variance var.
  Vec log_responsibilities(const Vec& x, double scale, double var) const;

 private:
  double scaled_log_density(const Vec& x, double scale, double var) const;

  std::vector<double> weights_;
  Mat means_;  // d x K
  double variance_;
  std::vector<int> labels_;
  int class_count_ = 0;
  Vec log_weights_;
  Vec mean_sq_norms_;
};

/// Exact E[x0 | x_t] under the mixture prior.
Vec gmm_posterior_x0_mean(const GaussianMixture& g, const NoiseSchedule& s, const Vec& xt, int t);

struct DenoiserOutput {
  Vec eps_hat;
  std::optional<Vec> log_var;  // only from a network with a variance head
};

enum class VarianceMode { FixedSmall, FixedLarge };

std::string to_string(VarianceMode m);
VarianceMode parse_variance_mode(const std::string& name);

/// Diagonal of Sigma_t: posterior_variance (fixed-small) or beta (fixed-large).
Vec reverse_variance(const NoiseSchedule& s, int t, VarianceMode mode, Eigen::Index dim);

/// Network input: x_t followed by t/T, sin(pi t/T), cos(pi t/T).
Vec time_embedded_input(const Vec& xt, int t, int T);
inline constexpr int kTimeEmbeddingWidth = 3;

class EpsilonModel {
 public:
  static EpsilonModel analytic(GaussianMixture mixture);
  /// net maps dim + kTimeEmbeddingWidth inputs to dim outputs, or 2*dim with
  /// a variance head (second half interpolates log beta~ and log beta).
  static EpsilonModel trained(SmallNet net, bool variance_head = false);

  bool is_analytic() const { return std::holds_alternative<GaussianMixture>(impl_); }
  bool has_variance_head() const;
  Eigen::Index dim() const;

  const GaussianMixture& mixture() const;
  const SmallNet& net() const;

 private:
  struct Trained {
    SmallNet net;
    bool variance_head;
  };
  explicit EpsilonModel(std::variant<GaussianMixture, Trained> impl) : impl_(std::move(impl)) {}
  std::variant<GaussianMixture, Trained> impl_;
};

DenoiserOutput predict_epsilon(const EpsilonModel& m, const NoiseSchedule& s, const Vec& xt, int t);

/// x_t / sqrt(abar_t) - sqrt(1 - abar_t) eps_hat / sqrt(abar_t)
Vec f_dn(const EpsilonModel& m, const NoiseSchedule& s, const Vec& xt, int t);

/// (x_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(1 - beta_t)
Vec reverse_mean_mu_theta(const EpsilonModel& m, const NoiseSchedule& s, const Vec& xt, int t);
Vec reverse_mean_from_eps(const NoiseSchedule& s, const Vec& xt, int t, const Vec& eps_hat);

/// One evaluation of the denoiser at (x_t, t) together with the
/// vector-Jacobian product of the denoised estimate, so that gradients of
/// any loss on f_dn(x_t, t) can be pulled back to x_t.
class DenoisedEstimate {
 public:
  DenoisedEstimate(const EpsilonModel& m, const NoiseSchedule& s, const Vec& xt, int t);

  const Vec& x0() const { return x0_; }
  const DenoiserOutput& output() const { return out_; }

  /// J^T u where J = d f_dn / d x_t.
  Vec pullback(const Vec& upstream) const;

 private:
  const EpsilonModel* model_;
  double sqrt_ab_, sqrt_1mab_;
  Vec input_;  // network input (trained variant)
  Vec x0_;
  DenoiserOutput out_;
  // analytic variant: J = a I + c * Cov_r(means)
  double jac_identity_ = 0.0, jac_cov_ = 0.0;
  Vec resp_;
  Vec mean_bar_;
};

struct DenoiserTrainConfig {
  std::vector<int> hidden{64, 64};
  Activation activation = Activation::Tanh;
  int epochs = 200;
  int batch_size = 128;
  double learning_rate = 2e-3;
  double validation_fraction = 0.1;
  bool variance_head = false;
};

struct TrainedDenoiser {
  EpsilonModel model;
  double validation_loss;       // L_simple on held-out draws
  double zero_predictor_loss;   // same draws scored with eps_hat = 0
  std::vector<double> epoch_losses;
};

/// Minimizes L_simple = E ||eps - eps_theta(x_t, t)||^2 with t ~ U{1..T}.
/// data holds one sample per column. Throws TrainingDiverged on a
/// non-finite loss.
TrainedDenoiser train_denoiser(const Mat& data, const NoiseSchedule& s,
                               const DenoiserTrainConfig& cfg, Rng& rng);

/// DVCE-NET v1 with role=epsilon and the schedule fingerprint.
void write_epsilon_checkpoint(std::ostream& out, const EpsilonModel& m, const NoiseSchedule& s);
/// Throws IncompatibleCheckpoint when the stored schedule differs from s.
EpsilonModel read_epsilon_checkpoint(std::istream& in, const NoiseSchedule& s);

}  // namespace dvce
