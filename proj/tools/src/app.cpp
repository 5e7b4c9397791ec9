#include "dvce_cli/app.hpp"

#include "dvce/baselines.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace dvce::cli {

namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

template <class Fn>
std::string render(Fn&& fn) {
  std::ostringstream ss;
  fn(ss);
  return ss.str();
}

const GaussianMixture& require_mixture(const Workspace& ws, const char* who) {
  if (!ws.train.mixture) {
    throw std::invalid_argument(std::string(who) + " needs the generating mixture; use data.kind = gmm2d without data files");
  }
  return *ws.train.mixture;
}

ClassifierModel read_classifier_file(const std::string& path, Workspace& ws, const char* role) {
  const std::string text = read_file(path);
  std::istringstream in(text);
  ClassifierModel m = read_classifier_checkpoint(in);
  ws.provenance.push_back(std::string(role) + " checkpoint " + path + " " + fnv1a_hex(text));
  return m;
}

void record_net(Workspace& ws, const char* role, const std::string& how, const std::string& serialized) {
  ws.provenance.push_back(std::string(role) + " " + how + " " + fnv1a_hex(serialized));
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::istringstream in(text);
  std::string part;
  while (std::getline(in, part, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw FormatError("--grid: bad value '" + part + "'");
    }
  }
  if (out.empty()) throw FormatError("--grid: no values");
  return out;
}

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  int jobs = 1;
  std::string axis;
  std::string grid;
};

struct Run {
  std::string command;
  std::string config_text;
  Workspace ws;
  fs::path dir;
  int jobs = 1;
};

Run prepare(const std::string& command, const Options& opt) {
  Run r;
  r.command = command;
  r.config_text = opt.config_path.empty() ? default_config_text() : read_file(opt.config_path);
  r.ws.cfg = load_config(r.config_text);
  if (opt.seed) r.ws.cfg.seed = *opt.seed;
  r.ws.schedule = make_schedule(r.ws.cfg);
  r.jobs = std::max(1, opt.jobs);
  r.dir = opt.out_dir.empty() ? fs::path("runs") / (command + "-" + std::to_string(r.ws.cfg.seed)) : fs::path(opt.out_dir);
  fs::create_directories(r.dir);
  write_file(r.dir / "config.cfg", r.config_text);
  write_file(r.dir / "seed.txt", std::to_string(r.ws.cfg.seed) + "\n");
  return r;
}

void finish(const Run& r) {
  std::string lines;
  for (const auto& p : r.ws.provenance) lines += p + "\n";
  write_file(r.dir / "checkpoints.txt", lines);
}

void write_losses(const fs::path& path, const std::vector<double>& losses) {
  std::string text = "epoch,loss\n";
  for (std::size_t e = 0; e < losses.size(); ++e) text += std::to_string(e + 1) + "," + format_double(losses[e]) + "\n";
  write_file(path, text);
}

int cmd_make_data(const Options& opt, std::ostream& out) {
  Run r = prepare("make-data", opt);
  load_data(r.ws);
  write_file(r.dir / "train.dvce", render([&](std::ostream& o) { write_dataset(o, r.ws.train); }));
  write_file(r.dir / "test.dvce", render([&](std::ostream& o) { write_dataset(o, r.ws.test); }));
  if (r.ws.train.kind == DatasetKind::Shapes16) {
    std::vector<Vec> imgs;
    for (Eigen::Index i = 0; i < std::min<Eigen::Index>(24, r.ws.train.data.size()); ++i) imgs.push_back(r.ws.train.data.sample(i));
    write_file(r.dir / "samples.pgm", render([&](std::ostream& o) { write_pgm_grid(o, imgs, 8); }));
  }
  finish(r);
  out << "wrote " << r.ws.train.data.size() << " train and " << r.ws.test.data.size() << " test samples to "
      << r.dir.string() << "\n";
  return 0;
}

int cmd_train_denoiser(const Options& opt, std::ostream& out) {
  Run r = prepare("train-denoiser", opt);
  load_data(r.ws);
  Rng rng(r.ws.cfg.train_seed, 1);
  TrainedDenoiser td = train_denoiser(r.ws.train.data.inputs, r.ws.schedule, r.ws.cfg.denoiser.train, rng);
  const std::string text = render([&](std::ostream& o) { write_epsilon_checkpoint(o, td.model, r.ws.schedule); });
  write_file(r.dir / "denoiser.net", text);
  write_losses(r.dir / "losses.csv", td.epoch_losses);
  record_net(r.ws, "denoiser", "trained", text);
  finish(r);
  out << "validation L_simple " << format_double(td.validation_loss) << " (zero predictor "
      << format_double(td.zero_predictor_loss) << ")\n";
  return 0;
}

int cmd_train_classifier(const Options& opt, std::ostream& out, bool robust) {
  Run r = prepare(robust ? "train-robust" : "train-classifier", opt);
  load_data(r.ws);
  Rng rng(r.ws.cfg.train_seed, robust ? 3 : 2);
  TrainedClassifier tc = robust ? adversarial_train(r.ws.train.data, r.ws.cfg.robust.train, rng)
                                : train_classifier(r.ws.train.data, r.ws.cfg.classifier.train, rng);
  const std::string text = render([&](std::ostream& o) { write_classifier_checkpoint(o, tc.model); });
  const char* name = robust ? "robust.net" : "classifier.net";
  write_file(r.dir / name, text);
  write_losses(r.dir / "losses.csv", tc.epoch_losses);
  record_net(r.ws, robust ? "robust" : "classifier", "trained", text);
  finish(r);
  out << "test accuracy " << format_double(accuracy(tc.model, r.ws.test.data)) << "\n";
  if (robust) {
    const auto& a = r.ws.cfg.robust.train;
    Rng eval_rng(r.ws.cfg.train_seed, 4);
    out << "robust accuracy (l2 " << format_double(a.radius) << ") "
        << format_double(robust_accuracy(tc.model, r.ws.test.data, a.radius, a.pgd_steps, a.pgd_step_size, eval_rng))
        << "\n";
  }
  return 0;
}

void build_models(Run& r, const std::vector<std::string>& methods) {
  load_data(r.ws);
  bool need_denoiser = false;
  for (const auto& m : methods) need_denoiser |= m != "svce";
  if (need_denoiser) build_denoiser(r.ws);
  build_target(r.ws);
  build_robust(r.ws);
}

void write_grid(const Run& r, const std::vector<std::vector<Vec>>& columns) {
  if (r.ws.train.kind != DatasetKind::Shapes16 || columns.empty()) return;
  std::vector<Vec> cells;
  for (std::size_t i = 0; i < columns.front().size(); ++i)
    for (const auto& col : columns) cells.push_back(col[i]);
  write_file(r.dir / "grid.pgm",
             render([&](std::ostream& o) { write_pgm_grid(o, cells, static_cast<int>(columns.size())); }));
}

int cmd_generate(const Options& opt, std::ostream& out) {
  Run r = prepare("generate", opt);
  const auto& cfg = r.ws.cfg;
  build_models(r, cfg.generate.methods);
  const int K = r.ws.test.classes;
  const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(cfg.generate.count),
                                                  static_cast<std::size_t>(r.ws.test.data.size()));
  std::vector<NamedGenerator> gens;
  for (const auto& m : cfg.generate.methods) gens.push_back(make_generator(m, r.ws, cfg.guidance));

  std::vector<VceResult> results(count * gens.size());
  parallel_for(results.size(), r.jobs, [&](std::size_t job) {
    const std::size_t g = job / count, i = job % count;
    const auto idx = static_cast<Eigen::Index>(i);
    const int source = r.ws.test.data.labels[i];
    Rng rng(cfg.seed, i);
    results[job] = gens[g].generate(r.ws.test.data.sample(idx), source, (source + 1) % K, rng);
  });

  std::vector<VceRow> rows;
  std::vector<std::vector<Vec>> columns(1 + gens.size());
  for (std::size_t g = 0; g < gens.size(); ++g) {
    for (std::size_t i = 0; i < count; ++i) {
      const auto& res = results[g * count + i];
      rows.push_back(make_vce_row(i, r.ws.test.data.labels[i], r.ws.test.data.sample(static_cast<Eigen::Index>(i)), res));
      if (g == 0) columns[0].push_back(r.ws.test.data.sample(static_cast<Eigen::Index>(i)));
      columns[g + 1].push_back(res.x);
    }
  }
  write_file(r.dir / "vce.csv", render([&](std::ostream& o) { write_vce_csv(o, rows); }));
  write_grid(r, columns);
  finish(r);
  out << "wrote " << rows.size() << " counterfactuals to " << (r.dir / "vce.csv").string() << "\n";
  return 0;
}

int cmd_evaluate(const Options& opt, std::ostream& out) {
  Run r = prepare("evaluate", opt);
  const auto& cfg = r.ws.cfg;
  build_models(r, cfg.eval.methods);
  std::vector<NamedGenerator> gens{identity_generator()};
  for (const auto& m : cfg.eval.methods) gens.push_back(make_generator(m, r.ws, cfg.guidance));
  CrossoverConfig xc;
  xc.partition = cfg.eval.partition.side_a.empty() ? halve_classes(r.ws.test.classes) : cfg.eval.partition;
  xc.per_side = cfg.eval.per_side;
  xc.seed = cfg.seed;
  xc.jobs = r.jobs;
  EvalReport report = crossover_evaluation(r.ws.test.data, r.ws.train.data, gens, *r.ws.target, xc);
  report.config_hash = fnv1a_hex(r.config_text);

  std::vector<VceRow> rows;
  for (const auto& m : report.methods) {
    for (const auto& s : m.samples) {
      rows.push_back({static_cast<std::size_t>(s.index), s.seed, s.stream, s.source, s.target, s.confidence, s.dist,
                      m.method});
    }
  }
  write_file(r.dir / "eval.csv", render([&](std::ostream& o) { write_eval_csv(o, report); }));
  write_file(r.dir / "vce.csv", render([&](std::ostream& o) { write_vce_csv(o, rows); }));
  const std::string summary = format_eval_summary(report);
  write_file(r.dir / "summary.txt", summary);
  finish(r);
  out << summary;
  return 0;
}

int cmd_ablate(const Options& opt, std::ostream& out) {
  if (opt.axis != "cd" && opt.axis != "eta" && opt.axis != "cone-angle") {
    throw FormatError("--axis must be one of cd, eta, cone-angle");
  }
  Run r = prepare("ablate", opt);
  const auto& cfg = r.ws.cfg;
  const std::vector<double> grid = !opt.grid.empty()          ? parse_grid(opt.grid)
                                   : opt.axis == "cd"         ? std::vector<double>{0.05, 0.1, 0.15, 0.2, 0.25}
                                   : opt.axis == "eta"        ? std::vector<double>{0.25, 0.5, 0.75}
                                                              : std::vector<double>{1, 5, 15, 30, 40, 50};
  build_models(r, {"dvce"});
  const int K = r.ws.test.classes;
  const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(cfg.generate.count),
                                                  static_cast<std::size_t>(r.ws.test.data.size()));
  std::vector<GuidanceConfig> settings;
  for (double v : grid) {
    GuidanceConfig g = cfg.guidance;
    if (opt.axis == "cd") g.distance_coef = v;
    else if (opt.axis == "eta") g.eta = v;
    else g.cone_angle_deg = v;
    g.validate();
    settings.push_back(g);
  }
  std::vector<VceResult> results(count * settings.size());
  parallel_for(results.size(), r.jobs, [&](std::size_t job) {
    const std::size_t g = job / count, i = job % count;
    const int source = r.ws.test.data.labels[i];
    Rng rng(cfg.seed, i);
    results[job] = make_generator("dvce", r.ws, settings[g])
                       .generate(r.ws.test.data.sample(static_cast<Eigen::Index>(i)), source, (source + 1) % K, rng);
  });

  std::string csv = "axis,value,count,median_l1,mean_l1,median_l2,mean_confidence\n";
  std::vector<std::vector<Vec>> columns(1 + settings.size());
  for (std::size_t g = 0; g < settings.size(); ++g) {
    std::vector<double> l1, l2;
    double conf = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
      const Vec xhat = r.ws.test.data.sample(static_cast<Eigen::Index>(i));
      const auto& res = results[g * count + i];
      const Closeness c = closeness(res.x, xhat);
      l1.push_back(c.l1);
      l2.push_back(c.l2);
      conf += res.confidence;
      if (g == 0) columns[0].push_back(xhat);
      columns[g + 1].push_back(res.x);
    }
    double mean_l1 = 0.0;
    for (double v : l1) mean_l1 += v;
    mean_l1 /= static_cast<double>(count);
    csv += opt.axis + "," + format_double(grid[g]) + "," + std::to_string(count) + "," + format_double(median(l1)) +
           "," + format_double(mean_l1) + "," + format_double(median(l2)) + "," +
           format_double(conf / static_cast<double>(count)) + "\n";
  }
  write_file(r.dir / "ablation.csv", csv);
  write_grid(r, columns);
  finish(r);
  out << csv;
  return 0;
}

}  // namespace

NoiseSchedule make_schedule(const RunConfig& cfg) {
  if (cfg.beta_start) return build_linear_schedule(cfg.schedule_steps, *cfg.beta_start, *cfg.beta_end);
  return build_default_schedule(cfg.schedule_steps);
}

void load_data(Workspace& ws) {
  const auto& d = ws.cfg.data;
  if (!d.train_file.empty() || !d.test_file.empty()) {
    if (d.train_file.empty() || d.test_file.empty()) {
      throw FormatError("config: data.train_file and data.test_file must be given together");
    }
    std::istringstream tr(read_file(d.train_file)), te(read_file(d.test_file));
    ws.train = read_dataset(tr);
    ws.test = read_dataset(te);
    if (ws.train.data.dim() != ws.test.data.dim()) throw DimensionError("train and test dimensions differ");
    return;
  }
  Rng rng(d.seed);
  ToyDataset all = d.kind == DatasetKind::Gmm2d ? make_gmm2d(d.classes, d.separation, d.sigma0, d.n + d.test, rng)
                                                : make_shapes16(d.n + d.test, d.noise, rng);
  auto [train, test] = split_dataset(all, d.test);
  ws.train = std::move(train);
  ws.test = std::move(test);
}

void build_denoiser(Workspace& ws) {
  const auto& c = ws.cfg.denoiser;
  if (!c.checkpoint.empty()) {
    const std::string text = read_file(c.checkpoint);
    std::istringstream in(text);
    ws.denoiser = read_epsilon_checkpoint(in, ws.schedule);
    ws.provenance.push_back("denoiser checkpoint " + c.checkpoint + " " + fnv1a_hex(text));
    return;
  }
  switch (c.kind) {
    case DenoiserKind::Analytic:
      ws.denoiser = EpsilonModel::analytic(require_mixture(ws, "denoiser.kind = analytic"));
      ws.provenance.push_back("denoiser analytic-mixture");
      break;
    case DenoiserKind::Kde: {
      ws.denoiser = EpsilonModel::analytic(GaussianMixture::from_samples(ws.train.data, c.bandwidth));
      const std::string data = render([&](std::ostream& o) { write_dataset(o, ws.train); });
      ws.provenance.push_back("denoiser kde bandwidth=" + format_double(c.bandwidth) + " " + fnv1a_hex(data));
      break;
    }
    case DenoiserKind::Trained: {
      Rng rng(ws.cfg.train_seed, 1);
      TrainedDenoiser td = train_denoiser(ws.train.data.inputs, ws.schedule, c.train, rng);
      record_net(ws, "denoiser", "in-process", render([&](std::ostream& o) {
                   write_epsilon_checkpoint(o, td.model, ws.schedule);
                 }));
      ws.denoiser = std::move(td.model);
      break;
    }
  }
}

void build_target(Workspace& ws) {
  const auto& c = ws.cfg.classifier;
  if (!c.checkpoint.empty()) {
    ws.target = read_classifier_file(c.checkpoint, ws, "classifier");
  } else if (c.kind == ClassifierKind::Bayes) {
    ws.target = ClassifierModel::bayes(require_mixture(ws, "classifier.kind = bayes"));
    ws.provenance.push_back("classifier bayes-mixture");
  } else {
    Rng rng(ws.cfg.train_seed, 2);
    TrainedClassifier tc = train_classifier(ws.train.data, c.train, rng);
    record_net(ws, "classifier", "in-process",
               render([&](std::ostream& o) { write_classifier_checkpoint(o, tc.model); }));
    ws.target = std::move(tc.model);
  }
  if (ws.target->dim() != ws.train.data.dim()) throw IncompatibleCheckpoint("classifier input dimension does not match the data");
}

void build_robust(Workspace& ws) {
  const auto& c = ws.cfg.robust;
  if (!c.checkpoint.empty()) {
    ws.robust = read_classifier_file(c.checkpoint, ws, "robust");
  } else if (c.kind == RobustKind::None) {
    ws.robust.reset();
    return;
  } else if (c.kind == RobustKind::Bayes) {
    ws.robust = ClassifierModel::bayes(require_mixture(ws, "robust.kind = bayes"));
    ws.provenance.push_back("robust bayes-mixture");
  } else {
    Rng rng(ws.cfg.train_seed, 3);
    TrainedClassifier tc = adversarial_train(ws.train.data, c.train, rng);
    record_net(ws, "robust", "in-process",
               render([&](std::ostream& o) { write_classifier_checkpoint(o, tc.model); }));
    ws.robust = std::move(tc.model);
  }
  if (ws.robust->dim() != ws.train.data.dim()) throw IncompatibleCheckpoint("robust input dimension does not match the data");
}

NamedGenerator make_generator(const std::string& method, const Workspace& ws, const GuidanceConfig& guidance) {
  if (method == "dvce") {
    if (!ws.denoiser || !ws.target) throw std::logic_error("dvce generator needs a denoiser and a target");
    const ClassifierModel* robust = ws.robust ? &*ws.robust : nullptr;
    return {"dvce", [&ws, guidance, robust](const Vec& x, int, int y, Rng& rng) {
              return generate_dvce(x, y, *ws.target, robust, *ws.denoiser, ws.schedule, guidance, rng);
            }};
  }
  if (method == "svce") {
    SvceConfig sc = ws.cfg.svce;
    if (!(sc.radius > 0.0)) sc.radius = svce_radius_grid(ws.train.data.dim()).back();
    sc.lower = ws.train.lower;
    sc.upper = ws.train.upper;
    const ClassifierModel* model = ws.robust ? &*ws.robust : &*ws.target;
    return {"svce", [sc, model](const Vec& x, int, int y, Rng& rng) {
              VceResult r = svce(x, y, *model, sc);
              r.seed = rng.seed();
              r.stream = rng.stream_index();
              return r;
            }};
  }
  if (method == "blended") {
    if (!ws.denoiser || !ws.target) throw std::logic_error("blended generator needs a denoiser and a target");
    const BlendedConfig bc = ws.cfg.blended;
    return {"blended", [&ws, bc](const Vec& x, int, int y, Rng& rng) {
              return blended_vce(x, y, *ws.target, *ws.denoiser, ws.schedule, bc, rng);
            }};
  }
  throw FormatError("unknown method '" + method + "'");
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Diffusion visual counterfactual explanations on toy data", "dvce"};
  app.require_subcommand(1);
  Options opt;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "key = value configuration file")->check(CLI::ExistingFile);
    sub->add_option("--seed", opt.seed, "run seed (overrides the config)");
    sub->add_option("--out", opt.out_dir, "run directory (default runs/<command>-<seed>)");
    sub->add_option("--jobs", opt.jobs, "worker threads")->check(CLI::PositiveNumber);
  };
  std::vector<std::pair<CLI::App*, std::string>> subs;
  for (const char* name : {"make-data", "train-denoiser", "train-classifier", "train-robust", "generate", "evaluate",
                           "ablate"}) {
    CLI::App* sub = app.add_subcommand(name);
    add_common(sub);
    subs.emplace_back(sub, name);
  }
  CLI::App* ablate = subs.back().first;
  ablate->add_option("--axis", opt.axis, "cd, eta or cone-angle")->required();
  ablate->add_option("--grid", opt.grid, "comma-separated values");

  std::vector<const char*> argv{"dvce"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    for (const auto& [sub, name] : subs) {
      if (!sub->parsed()) continue;
      if (name == "make-data") return cmd_make_data(opt, out);
      if (name == "train-denoiser") return cmd_train_denoiser(opt, out);
      if (name == "train-classifier") return cmd_train_classifier(opt, out, false);
      if (name == "train-robust") return cmd_train_classifier(opt, out, true);
      if (name == "generate") return cmd_generate(opt, out);
      if (name == "evaluate") return cmd_evaluate(opt, out);
      if (name == "ablate") return cmd_ablate(opt, out);
    }
  } catch (const std::exception& e) {
    err << "dvce: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace dvce::cli
