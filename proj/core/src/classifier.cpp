#include "dvce/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>

namespace dvce {

ClassifierModel ClassifierModel::bayes(GaussianMixture mixture) {
  if (mixture.class_count() < 2) throw std::invalid_argument("ClassifierModel::bayes: need >= 2 classes");
  return ClassifierModel(std::move(mixture));
}

ClassifierModel ClassifierModel::trained(SmallNet net) {
  if (net.output_dim() < 2) throw std::invalid_argument("ClassifierModel::trained: need >= 2 outputs");
  return ClassifierModel(std::move(net));
}

int ClassifierModel::classes() const {
  if (const auto* g = std::get_if<GaussianMixture>(&impl_)) return g->class_count();
  return std::get<SmallNet>(impl_).output_dim();
}

Eigen::Index ClassifierModel::dim() const {
  if (const auto* g = std::get_if<GaussianMixture>(&impl_)) return g->dim();
  return std::get<SmallNet>(impl_).input_dim();
}

const GaussianMixture& ClassifierModel::mixture() const {
  if (const auto* g = std::get_if<GaussianMixture>(&impl_)) return *g;
  throw std::logic_error("ClassifierModel: not a Bayes model");
}

const SmallNet& ClassifierModel::net() const {
  if (const auto* n = std::get_if<SmallNet>(&impl_)) return *n;
  throw std::logic_error("ClassifierModel: not a trained model");
}

namespace {

Vec log_softmax(const Vec& logits) {
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return logits.array() - lse;
}

Mat log_softmax_cols(const Mat& logits) {
  Mat out(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) out.col(j) = log_softmax(logits.col(j));
  return out;
}

void check_input(const ClassifierModel& m, const Vec& x) {
  if (x.size() != m.dim()) {
    throw DimensionError("classifier: input has " + std::to_string(x.size()) + " entries, expected " +
                         std::to_string(m.dim()));
  }
}

// Per-class log-sum-exp of component log responsibilities.
Vec bayes_class_log_probs(const GaussianMixture& g, const Vec& log_resp) {
  const int C = g.class_count();
  Vec out = Vec::Constant(C, -std::numeric_limits<double>::infinity());
  for (Eigen::Index k = 0; k < g.components(); ++k) {
    const int y = g.label(k);
    const double a = out[y], b = log_resp[k];
    if (a == -std::numeric_limits<double>::infinity()) {
      out[y] = b;
    } else {
      const double mx = std::max(a, b);
      out[y] = mx + std::log(std::exp(a - mx) + std::exp(b - mx));
    }
  }
  return out;
}

}  // namespace

Vec class_log_probs(const ClassifierModel& m, const Vec& x) {
  check_input(m, x);
  if (m.is_bayes()) {
    const auto& g = m.mixture();
    return bayes_class_log_probs(g, g.log_responsibilities(x, 1.0, g.variance()));
  }
  return log_softmax(m.net().forward(x));
}

Vec grad_log_prob(const ClassifierModel& m, const Vec& x, int y) {
  check_input(m, x);
  if (y < 0 || y >= m.classes()) throw std::out_of_range("grad_log_prob: class index out of range");
  if (m.is_bayes()) {
    // d/dx log p(y|x) = sum_k [r_k^{(y)} - r_k] (m_k - x) / var
    const auto& g = m.mixture();
    const Vec log_resp = g.log_responsibilities(x, 1.0, g.variance());
    const Vec class_lp = bayes_class_log_probs(g, log_resp);
    Vec coef(g.components());
    for (Eigen::Index k = 0; k < g.components(); ++k) {
      const double r = std::exp(log_resp[k]);
      const double r_in_class = g.label(k) == y ? std::exp(log_resp[k] - class_lp[y]) : 0.0;
      coef[k] = r_in_class - r;
    }
    // coefficients sum to zero, so the -x term cancels
    return g.means() * coef / g.variance();
  }
  const auto& net = m.net();
  const Vec lp = log_softmax(net.forward(x));
  Vec upstream = -lp.array().exp();
  upstream[y] += 1.0;
  return net.input_gradient(x, upstream);
}

int predict_class(const ClassifierModel& m, const Vec& x) {
  Eigen::Index arg;
  class_log_probs(m, x).maxCoeff(&arg);
  return static_cast<int>(arg);
}

double accuracy(const ClassifierModel& m, const LabeledData& data) {
  if (data.size() == 0) throw std::invalid_argument("accuracy: empty data");
  std::size_t correct = 0;
  if (!m.is_bayes()) {
    const Mat logits = m.net().forward(data.inputs);
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      Eigen::Index arg;
      logits.col(j).maxCoeff(&arg);
      correct += static_cast<int>(arg) == data.labels[static_cast<std::size_t>(j)];
    }
  } else {
    for (Eigen::Index j = 0; j < data.size(); ++j) {
      correct += predict_class(m, data.sample(j)) == data.labels[static_cast<std::size_t>(j)];
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

Vec pgd_l2_perturbation(const ClassifierModel& m, const Vec& x, int y, double radius, int steps,
                        double step_size, Rng& rng) {
  if (!(radius > 0.0) || steps < 1 || !(step_size > 0.0)) {
    throw std::invalid_argument("pgd_l2_perturbation: radius, steps and step size must be positive");
  }
  auto project = [radius](Vec& delta) {
    const double n = delta.norm();
    if (n > radius) delta *= radius / n;
  };
  // uniform direction, radius * U^{1/d} magnitude
  Vec delta = sample_standard_normal(rng, x.size());
  delta *= radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(x.size())) /
           std::max(delta.norm(), 1e-300);
  project(delta);
  for (int k = 0; k < steps; ++k) {
    // ascent on cross-entropy = descent on log p(y|x)
    const Vec g = -grad_log_prob(m, x + delta, y);
    const double gn = g.norm();
    if (!(gn > 1e-12)) break;
    delta += step_size * g / gn;
    project(delta);
  }
  return delta;
}

double robust_accuracy(const ClassifierModel& m, const LabeledData& data, double radius, int steps,
                       double step_size, Rng& rng) {
  if (data.size() == 0) throw std::invalid_argument("robust_accuracy: empty data");
  std::size_t correct = 0;
  for (Eigen::Index j = 0; j < data.size(); ++j) {
    const int y = data.labels[static_cast<std::size_t>(j)];
    const Vec x = data.sample(j);
    const Vec delta = pgd_l2_perturbation(m, x, y, radius, steps, step_size, rng);
    correct += predict_class(m, x + delta) == y;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace {

int check_labels(const LabeledData& data) {
  if (data.size() == 0 || static_cast<std::size_t>(data.size()) != data.labels.size()) {
    throw std::invalid_argument("classifier training: labels must match samples");
  }
  std::set<int> present(data.labels.begin(), data.labels.end());
  if (present.size() < 2) throw std::invalid_argument("classifier training: need >= 2 classes present");
  if (*present.begin() < 0) throw std::invalid_argument("classifier training: negative label");
  return *present.rbegin() + 1;
}

// Shared loop; perturb(x, y) returns the input actually trained on.
template <typename Perturb>
TrainedClassifier fit(const LabeledData& data, const ClassifierTrainConfig& arch, int epochs, double lr,
                      Rng& rng, Perturb&& perturb) {
  const int C = check_labels(data);
  if (epochs < 1 || arch.batch_size < 1 || !(lr > 0.0)) {
    throw std::invalid_argument("classifier training: epochs, batch size and learning rate must be positive");
  }
  std::vector<int> dims{static_cast<int>(data.dim())};
  dims.insert(dims.end(), arch.hidden.begin(), arch.hidden.end());
  dims.push_back(C);
  SmallNet net = SmallNet::random(dims, arch.activation, rng);
  Adam opt(net, lr);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(arch.batch_size);
  TrainedClassifier result{ClassifierModel::trained(net), {}};
  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t stop = std::min(order.size(), start + batch);
      const auto bsz = static_cast<Eigen::Index>(stop - start);
      Mat inputs(data.dim(), bsz);
      const ClassifierModel current = ClassifierModel::trained(net);
      for (Eigen::Index j = 0; j < bsz; ++j) {
        const Eigen::Index col = order[start + static_cast<std::size_t>(j)];
        inputs.col(j) = perturb(current, data.sample(col), data.labels[static_cast<std::size_t>(col)]);
      }
      const Mat lp = log_softmax_cols(net.forward(inputs));
      Mat upstream = lp.array().exp();  // d(mean CE)/d logits = (p - onehot)/B
      for (Eigen::Index j = 0; j < bsz; ++j) {
        const int y = data.labels[order[start + static_cast<std::size_t>(j)]];
        total -= lp(y, j);
        upstream(y, j) -= 1.0;
      }
      upstream /= static_cast<double>(bsz);
      if (!upstream.allFinite()) {
        throw TrainingDiverged("classifier training: non-finite gradient in epoch " + std::to_string(epoch));
      }
      opt.step(net, net.backward(inputs, upstream));
    }
    const double mean_loss = total / static_cast<double>(order.size());
    if (!std::isfinite(mean_loss)) {
      throw TrainingDiverged("classifier training: loss became non-finite in epoch " + std::to_string(epoch));
    }
    result.epoch_losses.push_back(mean_loss);
  }
  result.model = ClassifierModel::trained(std::move(net));
  return result;
}

}  // namespace

TrainedClassifier train_classifier(const LabeledData& data, const ClassifierTrainConfig& cfg, Rng& rng) {
  return fit(data, cfg, cfg.epochs, cfg.learning_rate, rng,
             [](const ClassifierModel&, const Vec& x, int) { return x; });
}

TrainedClassifier adversarial_train(const LabeledData& data, const AdvTrainConfig& cfg, Rng& rng) {
  if (!(cfg.radius > 0.0) || cfg.pgd_steps < 1 || !(cfg.pgd_step_size > 0.0)) {
    throw std::invalid_argument("adversarial_train: radius, PGD steps and step size must be positive");
  }
  return fit(data, cfg.base, cfg.epochs, cfg.learning_rate, rng,
             [&](const ClassifierModel& current, const Vec& x, int y) -> Vec {
               return x + pgd_l2_perturbation(current, x, y, cfg.radius, cfg.pgd_steps,
                                              cfg.pgd_step_size * cfg.radius, rng);
             });
}

void write_classifier_checkpoint(std::ostream& out, const ClassifierModel& m, const CheckpointMeta& extra) {
  if (m.is_bayes()) throw std::invalid_argument("write_classifier_checkpoint: Bayes fixtures have no checkpoint");
  CheckpointMeta meta{{"role", "classifier"}, {"classes", std::to_string(m.classes())}};
  meta.insert(meta.end(), extra.begin(), extra.end());
  write_net(out, m.net(), meta);
}

ClassifierModel read_classifier_checkpoint(std::istream& in) {
  NetCheckpoint ckpt = read_net(in);
  if (ckpt.get("role") != "classifier") {
    throw IncompatibleCheckpoint("checkpoint role is '" + ckpt.get("role") + "', expected 'classifier'");
  }
  if (ckpt.get("classes") != std::to_string(ckpt.net.output_dim())) {
    throw IncompatibleCheckpoint("checkpoint class count does not match its output layer");
  }
  return ClassifierModel::trained(std::move(ckpt.net));
}

}  // namespace dvce
