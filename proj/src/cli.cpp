#include "mrefine/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "format.hpp"
#include "json.hpp"
#include "mrefine/config.hpp"
#include "mrefine/errors.hpp"
#include "mrefine/io.hpp"
#include "mrefine/rng.hpp"

namespace mrefine {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::optional<std::size_t> jobs;
  std::vector<std::string> in_dirs;
};

struct Flags {
  CommonFlags common;
  std::optional<std::int64_t> iterations;
  std::optional<double> lr;
  std::string alloc = "none";
  std::string metric = "both";
};

// Wraps a failure with where it happened, preserving the exit class.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string scene_file_name(std::uint64_t scene_id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%04llu.json", static_cast<unsigned long long>(scene_id));
  return buf;
}

// Runs body(i) for i in [0, n) on up to `jobs` threads. The first failure in
// index order is rethrown after the loop.
template <typename F>
void parallel_for(std::size_t n, std::size_t jobs, F&& body) {
  std::vector<std::string> errors(n);
  std::vector<char> failed(n, 0);
  const auto count = static_cast<std::int64_t>(n);
  const int threads = static_cast<int>(std::max<std::size_t>(1, jobs));
#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (std::int64_t i = 0; i < count; ++i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      body(k);
    } catch (const std::exception& e) {
      errors[k] = e.what();
      failed[k] = 1;
    }
  }
  for (std::size_t k = 0; k < n; ++k)
    if (failed[k]) throw DataError(errors[k]);
}

RunConfig resolve_config(const Flags& flags) {
  RunConfig c = flags.common.config_path.empty() ? RunConfig{} : load_config(flags.common.config_path);
  if (flags.common.seed) c.seed = *flags.common.seed;
  if (flags.common.jobs) c.jobs = *flags.common.jobs;
  if (!flags.common.out_dir.empty()) c.output_dir = flags.common.out_dir;
  if (!flags.common.in_dirs.empty()) c.input_dir = flags.common.in_dirs.front();
  if (flags.iterations) c.imr.iterations = *flags.iterations;
  if (flags.lr) c.imr.lr = *flags.lr;
  validate_config(c);
  if (c.output_dir.empty()) throw ConfigError("output_dir", "no output directory (use --out)");
  return c;
}

fs::path prepare_output(const RunConfig& c) {
  const fs::path out(c.output_dir);
  fs::create_directories(out);
  write_text_file(out / "effective_config.json", effective_config_json(c));
  return out;
}

fs::path require_input(const RunConfig& c) {
  if (c.input_dir.empty()) throw ConfigError("input_dir", "no input directory (use --in)");
  return fs::path(c.input_dir);
}

std::vector<Scene> load_scenes(const fs::path& dir) {
  std::vector<Scene> scenes;
  for (const auto& p : list_scene_documents(dir)) scenes.push_back(read_scene(p));
  if (scenes.empty()) throw FormatError(dir.string() + ": no scene_*.json documents");
  return scenes;
}

int run_synth(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const fs::path dir = prepare_output(c);
  const std::size_t n = c.synth.num_scenes;
  std::vector<std::vector<std::string>> notes(n);
  parallel_for(n, c.jobs, [&](std::size_t i) {
    const Scene s = generate_scene(c.synth, c.seed, i, &notes[i]);
    write_scene(dir / scene_file_name(i), s);
  });
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& note : notes[i]) err << "scene " << i << ": " << note << '\n';
  out << "wrote " << n << " scenes to " << dir.string() << '\n';
  return kExitOk;
}

int run_refine(const RunConfig& c, std::ostream& out) {
  const fs::path in = require_input(c);
  std::vector<fs::path> docs = list_scene_documents(in);
  if (docs.empty()) throw FormatError(in.string() + ": no scene_*.json documents");
  std::vector<Scene> scenes;
  for (const auto& p : docs) scenes.push_back(read_scene(p));
  const fs::path dir = prepare_output(c);

  struct Job {
    std::size_t scene;
    std::size_t instance;
  };
  std::vector<Job> jobs;
  for (std::size_t s = 0; s < scenes.size(); ++s)
    for (std::size_t i = 0; i < scenes[s].predictions.size(); ++i)
      if (scenes[s].predictions[i].head) jobs.push_back({s, i});

  std::vector<RefineRecord> records(jobs.size());
  std::vector<RefineResult> results(jobs.size());
  parallel_for(jobs.size(), c.jobs, [&](std::size_t k) {
    const Scene& scene = scenes[jobs[k].scene];
    const auto& pred = scene.predictions[jobs[k].instance];
    const std::string where = docs[jobs[k].scene].filename().string() + " prediction " +
                              std::to_string(jobs[k].instance);
    try {
      const DenseTensor rc = make_rel_coords(scene.height, scene.width, pred.box);
      results[k] = refine_instance(*pred.head, scene.mask_features, rc, pred.box, c.imr);
    } catch (const std::exception& e) {
      throw DataError(where + ": " + e.what());
    }
    RefineRecord& r = records[k];
    r.scene_id = scene.scene_id;
    r.instance = jobs[k].instance;
    if (!scene.ground_truths.empty()) {
      const auto& gt = scene.ground_truths[best_gt_index(pred.box, scene.ground_truths)];
      const double threshold = c.eval.options.mask_threshold;
      r.init_iou = mask_iou(head_forward(*pred.head, scene.mask_features,
                                         make_rel_coords(scene.height, scene.width, pred.box))
                                .mask,
                            gt.mask, threshold);
      r.refined_iou = mask_iou(results[k].final_mask, gt.mask, threshold);
    }
    r.energy_trace = results[k].energy_trace;
    r.aborted = results[k].aborted;
    r.diagnostic = results[k].diagnostic;
  });

  for (std::size_t k = 0; k < jobs.size(); ++k) {
    auto& pred = scenes[jobs[k].scene].predictions[jobs[k].instance];
    pred.mask = results[k].final_mask;
    pred.head = results[k].ensembled;
  }
  for (std::size_t s = 0; s < scenes.size(); ++s) write_scene(dir / docs[s].filename(), scenes[s]);
  write_text_file(dir / "refine_records.json", refine_records_to_json(records));
  out << "refined " << jobs.size() << " instances from " << scenes.size() << " scenes\n";
  return kExitOk;
}

std::vector<NccSample> samples_from_tensors(const DenseTensor& features, const DenseTensor& labels) {
  if (features.rank() != 2) throw FormatError("features.mft: expected rank 2 (N x d)");
  if (labels.rank() != 1 || labels.dim(0) != features.dim(0))
    throw FormatError("labels.mft: expected shape [" + std::to_string(features.dim(0)) + "]");
  const std::size_t n = features.dim(0), d = features.dim(1);
  std::vector<NccSample> samples(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float l = labels[i];
    if (l < 0 || l != static_cast<float>(static_cast<std::size_t>(l)))
      throw FormatError("labels.mft: entry " + std::to_string(i) + " is not a non-negative integer");
    samples[i].label = static_cast<std::size_t>(l);
    samples[i].feature.assign(features.values().begin() + static_cast<std::ptrdiff_t>(i * d),
                              features.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
  }
  return samples;
}

int run_ncc_fit(const RunConfig& c, std::ostream& out) {
  DenseTensor basis;
  std::vector<NccSample> samples;
  std::size_t n_novel = c.ncc.problem.n_novel;
  std::size_t n_base = c.ncc.problem.n_base;
  if (!c.input_dir.empty()) {
    const fs::path in(c.input_dir);
    const DenseTensor theta_base = read_tensor(in / "theta_base.mft");
    if (theta_base.rank() != 2) throw FormatError("theta_base.mft: expected rank 2 (d x n_base)");
    samples = samples_from_tensors(read_tensor(in / "features.mft"), read_tensor(in / "labels.mft"));
    if (samples.front().feature.size() != theta_base.dim(0))
      throw FormatError("features.mft: feature width does not match theta_base rows");
    n_base = theta_base.dim(1);
    n_novel = 0;
    for (const auto& s : samples) n_novel = std::max(n_novel, s.label + 1);
    basis = build_basis(theta_base, c.ncc.problem.r, derive_seed({c.seed, 0x6261736973ULL}));
  } else {
    NccProblem problem = make_ncc_problem(c.ncc.problem, c.seed);
    basis = std::move(problem.basis);
    samples = std::move(problem.samples);
  }
  const fs::path dir = prepare_output(c);
  const NccFitResult fit = fit_alpha(basis, samples, n_novel, c.ncc.fit, derive_seed({c.seed, 0x666974ULL}));

  std::vector<std::string> base_names, novel_names;
  for (std::size_t i = 0; i < n_base; ++i) base_names.push_back("base_" + std::to_string(i));
  for (std::size_t i = 0; i < n_novel; ++i) novel_names.push_back("novel_" + std::to_string(i));
  const AlphaExport exp = export_alpha(fit.alpha, base_names, novel_names, c.ncc.topk);
  write_tensor(dir / "alpha.mft", fit.alpha);
  write_text_file(dir / "alpha.csv", exp.to_csv());
  write_text_file(dir / "alpha_top.csv", exp.top_csv());
  const json record = {{"final_loss", fit.final_loss},
                       {"train_accuracy", fit.train_accuracy},
                       {"trainable_parameters", fit.trainable_parameters},
                       {"direct_parameters", basis.dim(0) * n_novel},
                       {"loss_trace", fit.loss_trace}};
  write_text_file(dir / "ncc_record.json", record.dump(2) + "\n");
  out << "ncc-fit: loss " << detail::shortest(fit.final_loss) << ", train accuracy "
      << detail::shortest(fit.train_accuracy) << ", " << fit.trainable_parameters << " coefficients\n";
  return kExitOk;
}

int run_eval(const RunConfig& c, const Flags& flags, std::ostream& out) {
  const fs::path in = require_input(c);
  const std::vector<Scene> scenes = load_scenes(in);
  std::vector<EvalImage> images;
  for (const auto& s : scenes) images.push_back({s.ground_truths, s.predictions});

  std::vector<std::string> notes;
  if (flags.alloc != "none") {
    AllocationResult a = flags.alloc == "gt-cls" ? gt_class_allocation(images, c.eval.alloc_min_iou)
                                                 : gt_mask_allocation(images, c.eval.alloc_min_iou);
    images = std::move(a.images);
    notes = std::move(a.diagnostics);
  }
  EvalReport report = evaluate(images, c.eval.options);
  report.diagnostics.insert(report.diagnostics.begin(), notes.begin(), notes.end());

  const MetricSelection metrics = flags.metric == "ap"      ? MetricSelection::kAp
                                  : flags.metric == "fg-ap" ? MetricSelection::kFgAp
                                                            : MetricSelection::kBoth;
  const fs::path dir = prepare_output(c);
  write_text_file(dir / "eval_report.json", eval_report_to_json(report, metrics, flags.alloc));
  write_text_file(dir / "eval_report.csv", eval_report_to_csv(report, metrics));
  out << "segmentation AP " << detail::shortest(report.segmentation.ap.ap) << ", FG-AP "
      << detail::shortest(report.segmentation.fg_ap) << '\n';
  return kExitOk;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

int run_report(const RunConfig& c, const std::vector<std::string>& inputs, std::ostream& out) {
  if (inputs.empty()) throw ConfigError("input_dir", "report needs at least one --in run directory");
  std::string reference_config;
  std::vector<RefineRecord> records;
  for (const auto& in : inputs) {
    const fs::path run(in);
    const std::string cfg = read_text_file(run / "effective_config.json");
    if (reference_config.empty()) {
      reference_config = cfg;
    } else if (cfg != reference_config) {
      throw ConfigError("input_dir", "run " + run.string() + " used a different effective config than " +
                                         inputs.front() + "; refusing to aggregate");
    }
    const fs::path rec = run / "refine_records.json";
    auto part = refine_records_from_json(read_text_file(rec), rec.string());
    records.insert(records.end(), part.begin(), part.end());
  }

  std::vector<double> gains, fraction_at_5;
  std::size_t improved = 0, aborted = 0, monotone = 0;
  for (const auto& r : records) {
    gains.push_back(r.refined_iou - r.init_iou);
    if (r.refined_iou >= r.init_iou) ++improved;
    if (r.aborted) ++aborted;
    const auto& t = r.energy_trace;
    if (t.size() >= 2) {
      const double drop = t.front() - t.back();
      if (std::adjacent_find(t.begin(), t.end(), std::less<double>()) == t.end()) ++monotone;
      if (drop > 0 && t.size() > 5) fraction_at_5.push_back((t.front() - t[5]) / drop);
    }
  }
  double mean_gain = 0.0;
  for (double g : gains) mean_gain += g;
  if (!gains.empty()) mean_gain /= static_cast<double>(gains.size());
  const double n = records.empty() ? 1.0 : static_cast<double>(records.size());

  // Aggregation runs without an effective config of its own beyond the runs'.
  const fs::path dir(c.output_dir);
  fs::create_directories(dir);
  write_text_file(dir / "effective_config.json", reference_config);
  std::ostringstream csv;
  csv << "metric,value\n";
  csv << "runs," << inputs.size() << '\n';
  csv << "instances," << records.size() << '\n';
  csv << "mean_iou_improvement," << detail::shortest(mean_gain) << '\n';
  csv << "median_iou_improvement," << detail::shortest(median(gains)) << '\n';
  csv << "improved_fraction," << detail::shortest(static_cast<double>(improved) / n) << '\n';
  csv << "aborted_fraction," << detail::shortest(static_cast<double>(aborted) / n) << '\n';
  csv << "monotone_energy_fraction," << detail::shortest(static_cast<double>(monotone) / n) << '\n';
  csv << "median_drop_fraction_at_step5," << detail::shortest(median(fraction_at_5)) << '\n';
  write_text_file(dir / "summary.csv", csv.str());
  out << "aggregated " << records.size() << " records from " << inputs.size() << " runs\n";
  return kExitOk;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Test-time mask refinement, novel classifier fitting and evaluation", "mrefine"};
  app.require_subcommand(1, 1);
  Flags flags;

  auto add_common = [&flags](CLI::App* sub) {
    sub->add_option("--config", flags.common.config_path, "JSON run config");
    sub->add_option("--seed", flags.common.seed, "Global seed");
    sub->add_option("--out", flags.common.out_dir, "Output directory");
    sub->add_option("--jobs", flags.common.jobs, "Worker threads")->check(CLI::PositiveNumber);
  };
  CLI::App* synth = app.add_subcommand("synth", "Generate synthetic scenes");
  add_common(synth);
  CLI::App* refine = app.add_subcommand("refine", "Refine every predicted mask head");
  add_common(refine);
  refine->add_option("--in", flags.common.in_dirs, "Scene directory")->expected(1);
  refine->add_option("--iterations", flags.iterations, "Override imr.iterations");
  refine->add_option("--lr", flags.lr, "Override imr.lr");
  CLI::App* ncc = app.add_subcommand("ncc-fit", "Fit novel classifier coefficients");
  add_common(ncc);
  ncc->add_option("--in", flags.common.in_dirs, "Directory with theta_base.mft, features.mft, labels.mft")
      ->expected(1);
  CLI::App* eval = app.add_subcommand("eval", "Evaluate scene predictions");
  add_common(eval);
  eval->add_option("--in", flags.common.in_dirs, "Scene directory")->expected(1);
  eval->add_option("--alloc", flags.alloc, "Ground-truth allocation")
      ->check(CLI::IsMember({"none", "gt-cls", "gt-mask"}));
  eval->add_option("--metric", flags.metric, "Metrics to report")->check(CLI::IsMember({"ap", "fg-ap", "both"}));
  CLI::App* report = app.add_subcommand("report", "Aggregate refine runs");
  add_common(report);
  report->add_option("--in", flags.common.in_dirs, "Refine run directories")->expected(1, -1);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    err << app.help();
    return kExitConfig;
  }

  try {
    if (report->parsed()) {
      // The runs carry their own configs; only the output location is needed.
      if (flags.common.out_dir.empty()) throw ConfigError("output_dir", "no output directory (use --out)");
      RunConfig c;
      c.output_dir = flags.common.out_dir;
      return run_report(c, flags.common.in_dirs, out);
    }
    const RunConfig c = resolve_config(flags);
    if (synth->parsed()) return run_synth(c, out, err);
    if (refine->parsed()) return run_refine(c, out);
    if (ncc->parsed()) return run_ncc_fit(c, out);
    return run_eval(c, flags, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace mrefine
