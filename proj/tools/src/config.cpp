#include "dvce_cli/config.hpp"

#include <cerrno>
#include <charconv>
#include <cstdlib>
#include <set>
#include <sstream>

namespace dvce::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  return out;
}

class Reader {
 public:
  explicit Reader(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

  const std::string* raw(const std::string& key) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return nullptr;
    used_.insert(key);
    return &it->second;
  }

  void real(const std::string& key, double& out) {
    if (const auto* v = raw(key)) out = to_real(key, *v);
  }
  void real(const std::string& key, std::optional<double>& out) {
    if (const auto* v = raw(key)) out = to_real(key, *v);
  }
  void integer(const std::string& key, int& out) {
    if (const auto* v = raw(key)) out = static_cast<int>(to_long(key, *v));
  }
  void u64(const std::string& key, std::uint64_t& out) {
    if (const auto* v = raw(key)) {
      std::uint64_t r = 0;
      const auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), r);
      if (ec != std::errc() || p != v->data() + v->size()) bad(key, *v);
      out = r;
    }
  }
  void boolean(const std::string& key, bool& out) {
    if (const auto* v = raw(key)) {
      if (*v == "true" || *v == "1") out = true;
      else if (*v == "false" || *v == "0") out = false;
      else bad(key, *v);
    }
  }
  void text(const std::string& key, std::string& out) {
    if (const auto* v = raw(key)) out = *v;
  }
  void ints(const std::string& key, std::vector<int>& out) {
    if (const auto* v = raw(key)) {
      out.clear();
      for (const auto& part : split(*v, ',')) out.push_back(static_cast<int>(to_long(key, part)));
    }
  }
  void words(const std::string& key, std::vector<std::string>& out) {
    if (const auto* v = raw(key)) out = split(*v, ',');
  }
  template <class Parse, class T>
  void choice(const std::string& key, T& out, Parse parse) {
    if (const auto* v = raw(key)) {
      try {
        out = parse(*v);
      } catch (const std::exception&) {
        bad(key, *v);
      }
    }
  }

  void reject_unused() const {
    for (const auto& [k, v] : kv_) {
      if (!used_.count(k)) throw FormatError("config: unknown key '" + k + "'");
    }
  }

  [[noreturn]] static void bad(const std::string& key, const std::string& v) {
    throw FormatError("config: bad value '" + v + "' for '" + key + "'");
  }

 private:
  static double to_real(const std::string& key, const std::string& v) {
    double r = 0.0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), r);
    if (ec != std::errc() || p != v.data() + v.size()) bad(key, v);
    return r;
  }
  static long to_long(const std::string& key, const std::string& v) {
    long r = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), r);
    if (ec != std::errc() || p != v.data() + v.size()) bad(key, v);
    return r;
  }

  std::map<std::string, std::string> kv_;
  std::set<std::string> used_;
};

DenoiserKind parse_denoiser_kind(const std::string& v) {
  if (v == "analytic") return DenoiserKind::Analytic;
  if (v == "kde") return DenoiserKind::Kde;
  if (v == "trained") return DenoiserKind::Trained;
  throw FormatError(v);
}

ClassifierKind parse_classifier_kind(const std::string& v) {
  if (v == "bayes") return ClassifierKind::Bayes;
  if (v == "trained") return ClassifierKind::Trained;
  throw FormatError(v);
}

RobustKind parse_robust_kind(const std::string& v) {
  if (v == "none") return RobustKind::None;
  if (v == "bayes") return RobustKind::Bayes;
  if (v == "trained") return RobustKind::Trained;
  throw FormatError(v);
}

std::vector<int> parse_side(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const auto& part : split(v, ',')) {
    int k = 0;
    const auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), k);
    if (ec != std::errc() || p != part.data() + part.size()) Reader::bad(key, v);
    out.push_back(k);
  }
  return out;
}

}  // namespace

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("config line " + std::to_string(number) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw FormatError("config line " + std::to_string(number) + ": empty key");
    if (!kv.emplace(key, value).second) {
      throw FormatError("config line " + std::to_string(number) + ": duplicate key '" + key + "'");
    }
  }
  return kv;
}

RunConfig load_config(const std::string& text) {
  RunConfig c;
  c.svce.radius = 0.0;
  c.blended.classifier_coef = 25.0;
  c.blended.distance_coef = 100.0;
  Reader r(parse_key_values(text));

  r.u64("seed", c.seed);
  r.u64("train.seed", c.train_seed);
  r.integer("schedule.steps", c.schedule_steps);
  r.real("schedule.beta_start", c.beta_start);
  r.real("schedule.beta_end", c.beta_end);

  r.choice("data.kind", c.data.kind, parse_dataset_kind);
  r.integer("data.classes", c.data.classes);
  r.real("data.separation", c.data.separation);
  r.real("data.sigma0", c.data.sigma0);
  r.integer("data.n", c.data.n);
  r.integer("data.test", c.data.test);
  r.real("data.noise", c.data.noise);
  r.u64("data.seed", c.data.seed);
  r.text("data.train_file", c.data.train_file);
  r.text("data.test_file", c.data.test_file);

  r.choice("denoiser.kind", c.denoiser.kind, parse_denoiser_kind);
  r.real("denoiser.bandwidth", c.denoiser.bandwidth);
  r.ints("denoiser.hidden", c.denoiser.train.hidden);
  r.choice("denoiser.activation", c.denoiser.train.activation, parse_activation);
  r.integer("denoiser.epochs", c.denoiser.train.epochs);
  r.integer("denoiser.batch", c.denoiser.train.batch_size);
  r.real("denoiser.lr", c.denoiser.train.learning_rate);
  r.boolean("denoiser.variance_head", c.denoiser.train.variance_head);
  r.text("denoiser.checkpoint", c.denoiser.checkpoint);

  r.choice("classifier.kind", c.classifier.kind, parse_classifier_kind);
  r.ints("classifier.hidden", c.classifier.train.hidden);
  r.choice("classifier.activation", c.classifier.train.activation, parse_activation);
  r.integer("classifier.epochs", c.classifier.train.epochs);
  r.integer("classifier.batch", c.classifier.train.batch_size);
  r.real("classifier.lr", c.classifier.train.learning_rate);
  r.text("classifier.checkpoint", c.classifier.checkpoint);

  r.choice("robust.kind", c.robust.kind, parse_robust_kind);
  r.ints("robust.hidden", c.robust.train.base.hidden);
  r.choice("robust.activation", c.robust.train.base.activation, parse_activation);
  r.integer("robust.epochs", c.robust.train.epochs);
  r.integer("robust.batch", c.robust.train.base.batch_size);
  r.real("robust.lr", c.robust.train.learning_rate);
  r.real("robust.radius", c.robust.train.radius);
  r.integer("robust.pgd_steps", c.robust.train.pgd_steps);
  r.real("robust.pgd_step_size", c.robust.train.pgd_step_size);
  r.text("robust.checkpoint", c.robust.checkpoint);

  r.real("guidance.classifier_coef", c.guidance.classifier_coef);
  r.real("guidance.distance_coef", c.guidance.distance_coef);
  r.real("guidance.cone_angle", c.guidance.cone_angle_deg);
  r.real("guidance.eta", c.guidance.eta);
  r.choice("guidance.distance", c.guidance.distance, parse_distance_kind);
  r.choice("guidance.variance", c.guidance.variance, parse_variance_mode);
  r.choice("guidance.guide", c.guidance.guide, parse_guide_mode);

  r.real("svce.radius", c.svce.radius);
  r.integer("svce.steps", c.svce.steps);
  r.real("svce.step_size", c.svce.step_size);

  r.real("blended.classifier_coef", c.blended.classifier_coef);
  r.real("blended.distance_coef", c.blended.distance_coef);
  r.real("blended.aux_weight", c.blended.aux_weight);
  r.real("blended.eta", c.blended.eta);

  r.integer("generate.count", c.generate.count);
  r.words("generate.methods", c.generate.methods);

  r.integer("eval.per_side", c.eval.per_side);
  if (const auto* a = r.raw("eval.side_a")) c.eval.partition.side_a = parse_side("eval.side_a", *a);
  if (const auto* b = r.raw("eval.side_b")) c.eval.partition.side_b = parse_side("eval.side_b", *b);
  r.words("eval.methods", c.eval.methods);

  r.reject_unused();

  c.guidance.validate();
  if (c.schedule_steps < 1) Reader::bad("schedule.steps", std::to_string(c.schedule_steps));
  if (c.beta_start.has_value() != c.beta_end.has_value()) {
    throw FormatError("config: schedule.beta_start and schedule.beta_end must be given together");
  }
  if (c.generate.count < 1) Reader::bad("generate.count", std::to_string(c.generate.count));
  if (c.eval.partition.side_a.empty() != c.eval.partition.side_b.empty()) {
    throw FormatError("config: eval.side_a and eval.side_b must be given together");
  }
  for (const auto* list : {&c.generate.methods, &c.eval.methods}) {
    for (const auto& m : *list) {
      if (m != "dvce" && m != "svce" && m != "blended") throw FormatError("config: unknown method '" + m + "'");
    }
  }
  return c;
}

std::string default_config_text() {
  return R"(# dvce run configuration; every key is optional
seed = 0
train.seed = 2

schedule.steps = 200

data.kind = gmm2d
data.classes = 2
data.separation = 4
data.sigma0 = 0.5
data.n = 2000
data.test = 200
data.seed = 1

denoiser.kind = analytic
classifier.kind = trained
robust.kind = none

guidance.classifier_coef = 0.1
guidance.distance_coef = 0.15
guidance.cone_angle = 30
guidance.eta = 0.5
guidance.distance = l1
guidance.variance = fixed-small
guidance.guide = auto

generate.count = 16
generate.methods = dvce
)";
}

}  // namespace dvce::cli
