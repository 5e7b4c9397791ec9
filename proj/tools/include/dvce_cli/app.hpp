#pragma once

#include "dvce_cli/config.hpp"
#include "dvce/evaluation.hpp"
#include "dvce/sampler.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace dvce::cli {

/// Data, schedule and models for one run, plus a line per model recording
/// where it came from and a content hash.
struct Workspace {
  RunConfig cfg;
  NoiseSchedule schedule;
  ToyDataset train;
  ToyDataset test;
  std::optional<EpsilonModel> denoiser;
  std::optional<ClassifierModel> target;
  std::optional<ClassifierModel> robust;
  std::vector<std::string> provenance;
};

NoiseSchedule make_schedule(const RunConfig& cfg);

/// Generated or read train/test split.
void load_data(Workspace& ws);

/// Loads from checkpoints when configured, otherwise builds or trains in
/// process with Rng(train_seed, k) for a fixed k per model.
void build_denoiser(Workspace& ws);
void build_target(Workspace& ws);
void build_robust(Workspace& ws);

/// dvce, svce or blended bound to the workspace models.
NamedGenerator make_generator(const std::string& method, const Workspace& ws, const GuidanceConfig& guidance);

/// Entry point. args excludes the program name. Diagnostics go to err;
/// returns 0 on success.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dvce::cli
