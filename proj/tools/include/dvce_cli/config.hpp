#pragma once

#include "dvce/baselines.hpp"
#include "dvce/classifier.hpp"
#include "dvce/datasets.hpp"
#include "dvce/denoiser.hpp"
#include "dvce/evaluation.hpp"
#include "dvce/guidance.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dvce::cli {

/// Flat `key = value` lines; `#` starts a comment; blank lines ignored.
/// Duplicate keys and lines without '=' are FormatErrors.
std::map<std::string, std::string> parse_key_values(const std::string& text);

enum class DenoiserKind { Analytic, Kde, Trained };
enum class ClassifierKind { Bayes, Trained };
enum class RobustKind { None, Bayes, Trained };

struct DataSection {
  DatasetKind kind = DatasetKind::Gmm2d;
  int classes = 2;
  double separation = 4.0;
  double sigma0 = 0.5;
  int n = 2000;
  int test = 200;
  double noise = 0.05;
  std::uint64_t seed = 1;
  std::string train_file, test_file;  // DVCE-DATA v1; override generation when set
};

struct DenoiserSection {
  DenoiserKind kind = DenoiserKind::Analytic;
  double bandwidth = 0.05;
  DenoiserTrainConfig train;
  std::string checkpoint;
};

struct ClassifierSection {
  ClassifierKind kind = ClassifierKind::Trained;
  ClassifierTrainConfig train;
  std::string checkpoint;
};

struct RobustSection {
  RobustKind kind = RobustKind::None;
  AdvTrainConfig train;
  std::string checkpoint;
};

struct GenerateSection {
  int count = 16;
  std::vector<std::string> methods{"dvce"};
};

struct EvalSection {
  int per_side = 25;
  ClassPartition partition;  // empty: halve the classes
  std::vector<std::string> methods{"dvce", "svce", "blended"};
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::uint64_t train_seed = 2;
  int schedule_steps = 200;
  std::optional<double> beta_start, beta_end;
  DataSection data;
  DenoiserSection denoiser;
  ClassifierSection classifier;
  RobustSection robust;
  GuidanceConfig guidance;
  SvceConfig svce;  // radius <= 0: largest of svce_radius_grid(d)
  BlendedConfig blended;
  GenerateSection generate;
  EvalSection eval;
};

/// Defaults overlaid with the given text. Unknown keys and unparsable values
/// throw FormatError naming the key.
RunConfig load_config(const std::string& text);

/// Every recognised key with its default value, in file order.
std::string default_config_text();

}  // namespace dvce::cli
