#pragma once

#include "dvce/denoiser.hpp"
#include "dvce/numerics.hpp"

#include <iosfwd>
#include <variant>
#include <vector>

namespace dvce {

/// p(y | x) with input-gradient access. Either the exact Bayes posterior of
/// a labeled GaussianMixture, or a SmallNet producing logits.
class ClassifierModel {
 public:
  static ClassifierModel bayes(GaussianMixture mixture);
  static ClassifierModel trained(SmallNet net);

  bool is_bayes() const { return std::holds_alternative<GaussianMixture>(impl_); }
  int classes() const;
  Eigen::Index dim() const;

  const GaussianMixture& mixture() const;
  const SmallNet& net() const;

 private:
  explicit ClassifierModel(std::variant<GaussianMixture, SmallNet> impl) : impl_(std::move(impl)) {}
  std::variant<GaussianMixture, SmallNet> impl_;
};

/// log-softmax outputs, one per class.
Vec class_log_probs(const ClassifierModel& m, const Vec& x);
/// Gradient of class_log_probs(m, x)[y] with respect to x.
Vec grad_log_prob(const ClassifierModel& m, const Vec& x, int y);

int predict_class(const ClassifierModel& m, const Vec& x);
double accuracy(const ClassifierModel& m, const LabeledData& data);

struct ClassifierTrainConfig {
  std::vector<int> hidden{32, 32};
  Activation activation = Activation::Tanh;
  int epochs = 40;
  int batch_size = 64;
  double learning_rate = 5e-3;
};

struct AdvTrainConfig {
  double radius = 1.0;  // l2 PGD budget in data units
  int pgd_steps = 7;
  double pgd_step_size = 0.35;  // fraction of radius per step
  int epochs = 40;
  double learning_rate = 5e-3;
  ClassifierTrainConfig base;  // architecture and batch size; epochs/lr above win
};

struct TrainedClassifier {
  ClassifierModel model;
  std::vector<double> epoch_losses;  // mean cross-entropy per epoch
};

/// Cross-entropy training of a SmallNet classifier with Adam.
TrainedClassifier train_classifier(const LabeledData& data, const ClassifierTrainConfig& cfg, Rng& rng);

/// Madry-style training on l2-PGD perturbed inputs.
TrainedClassifier adversarial_train(const LabeledData& data, const AdvTrainConfig& cfg, Rng& rng);

/// Untargeted l2 PGD maximizing the cross-entropy of label y: random start in
/// the ball, normalized-gradient steps, projection after each step.
/// Always returns a perturbation with norm <= radius.
Vec pgd_l2_perturbation(const ClassifierModel& m, const Vec& x, int y, double radius, int steps,
                        double step_size, Rng& rng);

/// Accuracy on PGD-perturbed inputs.
double robust_accuracy(const ClassifierModel& m, const LabeledData& data, double radius, int steps,
                       double step_size, Rng& rng);

/// DVCE-NET v1 with role=classifier and classes=<C>.
void write_classifier_checkpoint(std::ostream& out, const ClassifierModel& m,
                                 const CheckpointMeta& extra = {});
ClassifierModel read_classifier_checkpoint(std::istream& in);

}  // namespace dvce
