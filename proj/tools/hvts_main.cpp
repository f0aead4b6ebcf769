// hvts: reconstruct multichannel physiological recordings with hierarchical
// variational autoencoders trained under a soft-DTW loss, and flag anomalous
// repetitions by reconstruction error.  Every command writes a canonical
// manifest (config, seeds, input/output digests) so runs are reproducible
// bit for bit; wall-clock timings go to a separate timings.json because they
// are not.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hvts/anomaly.hpp"
#include "hvts/checkpoint.hpp"
#include "hvts/data.hpp"
#include "hvts/error.hpp"
#include "hvts/manifest.hpp"
#include "hvts/metrics.hpp"
#include "hvts/model.hpp"
#include "hvts/svg.hpp"
#include "hvts/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hvts;

namespace {

std::string g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string zero_pad(int v, int width) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%0*d", width, v);
  return buf;
}

// Refuses to overwrite completed output unless forced, then lays out the
// run directory.
void prepare_dir(const fs::path& out, bool force, const std::vector<std::string>& subdirs) {
  if (fs::exists(out / "manifest.json") && !force) {
    throw Error(ErrorCategory::Usage,
                out.string() + " already holds a finished run; pass --force to overwrite");
  }
  std::error_code ec;
  fs::create_directories(out, ec);
  for (const std::string& sub : subdirs) fs::create_directories(out / sub, ec);
  if (ec) throw Error(ErrorCategory::Io, "cannot create " + out.string());
}

void prepare_file(const fs::path& out, bool force) {
  if (fs::exists(out) && !force) {
    throw Error(ErrorCategory::Usage, out.string() + " exists; pass --force to overwrite");
  }
  if (out.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(out.parent_path(), ec);
    if (ec) throw Error(ErrorCategory::Io, "cannot create " + out.parent_path().string());
  }
}

void write_timings(const fs::path& dir, const json& timings) {
  manifest::write_atomic((dir / "timings.json").string(), timings.dump(2) + "\n");
}

struct Stopwatch {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

// Segment metadata + payload digesting for manifests: named outputs keyed by
// path relative to the run directory, so manifests from identically seeded
// runs in different directories stay byte-identical.
json digest_outputs(const fs::path& dir, const std::vector<std::string>& rel_paths) {
  json out = json::object();
  for (const std::string& rel : rel_paths) {
    out[rel] = manifest::file_digest_hex((dir / rel).string());
  }
  return out;
}

models::DecodeMode parse_level(const std::string& level, const models::ModelSpec& spec) {
  if (level == "full") {
    return spec.variant == models::Variant::Hv ? models::DecodeMode::WithZ3
                                               : models::DecodeMode::FromZ1;
  }
  if (level == "z1") return models::DecodeMode::FromZ1;
  if (level == "z2") return models::DecodeMode::WithZ2;
  if (level == "z3") return models::DecodeMode::WithZ3;
  throw Error(ErrorCategory::Usage, "unknown level '" + level + "'");
}

std::string history_table(const training::TrainHistory& h, int levels) {
  std::string out = "epoch\tlr\ttrain_total\ttrain_recon";
  for (int k = 0; k < levels; ++k) out += "\ttrain_kl" + std::to_string(k + 1);
  out += "\tval_total\tval_recon";
  for (int k = 0; k < levels; ++k) out += "\tval_kl" + std::to_string(k + 1);
  out += "\ttrain_dtw_mean\ttrain_dtw_std\tval_dtw_mean\tval_dtw_std\n";
  for (const training::EpochStats& s : h.epochs) {
    out += std::to_string(s.epoch) + "\t" + g17(s.lr) + "\t" + g17(s.train_total) + "\t" +
           g17(s.train_recon);
    for (double k : s.train_kl) out += "\t" + g17(k);
    out += "\t" + g17(s.val_total) + "\t" + g17(s.val_recon);
    for (double k : s.val_kl) out += "\t" + g17(k);
    out += "\t" + g17(s.train_dtw_mean) + "\t" + g17(s.train_dtw_std) + "\t" +
           g17(s.val_dtw_mean) + "\t" + g17(s.val_dtw_std) + "\n";
  }
  return out;
}

std::string aggregate_table(const training::AggregateCurves& ok,
                            const training::AggregateCurves& all) {
  std::string out =
      "epoch\tmean_successful\tstd_successful\tcount_successful\tmean_all\tstd_all\tcount_all\n";
  const std::size_t n = std::max(ok.mean.size(), all.mean.size());
  for (std::size_t e = 0; e < n; ++e) {
    out += std::to_string(e);
    if (e < ok.mean.size()) {
      out += "\t" + g17(ok.mean[e]) + "\t" + g17(ok.stddev[e]) + "\t" +
             std::to_string(ok.count[e]);
    } else {
      out += "\t\t\t0";
    }
    if (e < all.mean.size()) {
      out += "\t" + g17(all.mean[e]) + "\t" + g17(all.stddev[e]) + "\t" +
             std::to_string(all.count[e]);
    } else {
      out += "\t\t\t0";
    }
    out += "\n";
  }
  return out;
}

// -- synth -----------------------------------------------------------------

struct SynthArgs {
  std::string out;
  data::SynthConfig cfg;
  double saturate_frac = 0.0;
  double saturate_rail = 2.0;
  double line_freq = 0.0;
  double line_amp = 1.0;
  double line_frac = 1.0;
  int line_channel = -1;
  bool force = false;
};

int cmd_synth(const SynthArgs& a) {
  Stopwatch watch;
  prepare_file(a.out, a.force);
  std::vector<data::SegmentTensor> segments = data::synth_dataset(a.cfg);

  Rng pick(Rng(a.cfg.seed).fork(0xa17).next_u64());
  std::vector<int> saturated, line_noised;
  if (a.saturate_frac > 0.0) {
    const int n = static_cast<int>(a.saturate_frac * a.cfg.n_segments + 0.5);
    std::vector<int> ids(segments.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
    shuffle(ids, pick);
    saturated.assign(ids.begin(), ids.begin() + std::min<std::size_t>(n, ids.size()));
    std::sort(saturated.begin(), saturated.end());
    for (int id : saturated) {
      data::inject_saturation(segments[id], a.cfg.samples / 4, a.cfg.samples / 2,
                              a.saturate_rail);
    }
  }
  if (a.line_freq > 0.0) {
    const int n = static_cast<int>(a.line_frac * a.cfg.n_segments + 0.5);
    std::vector<int> ids(segments.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
    shuffle(ids, pick);
    line_noised.assign(ids.begin(), ids.begin() + std::min<std::size_t>(n, ids.size()));
    std::sort(line_noised.begin(), line_noised.end());
    const std::vector<int> channels =
        a.line_channel >= 0 ? std::vector<int>{a.line_channel} : std::vector<int>{};
    for (int id : line_noised) {
      data::inject_line_noise(segments[id], a.line_freq, a.line_amp, channels);
    }
  }
  data::write_segments(a.out, segments);

  json m;
  m["command"] = "synth";
  m["version"] = manifest::tool_version();
  json cfg;
  cfg["segments"] = a.cfg.n_segments;
  cfg["channels"] = a.cfg.channels;
  cfg["samples"] = a.cfg.samples;
  cfg["fs"] = a.cfg.fs;
  cfg["spectral_slope"] = a.cfg.spectral_slope;
  cfg["alpha_freq"] = a.cfg.alpha_freq;
  cfg["alpha_gain"] = a.cfg.alpha_gain;
  cfg["beta_freq"] = a.cfg.beta_freq;
  cfg["beta_gain"] = a.cfg.beta_gain;
  cfg["noise_floor"] = a.cfg.noise_floor;
  cfg["amplitude"] = a.cfg.amplitude;
  cfg["labels"] = a.cfg.n_labels;
  cfg["seed"] = a.cfg.seed;
  cfg["saturate_frac"] = a.saturate_frac;
  cfg["saturate_rail"] = a.saturate_rail;
  cfg["line_freq"] = a.line_freq;
  cfg["line_amp"] = a.line_amp;
  cfg["line_frac"] = a.line_frac;
  cfg["line_channel"] = a.line_channel;
  m["config"] = cfg;
  m["injected"]["saturated"] = saturated;
  m["injected"]["line_noised"] = line_noised;
  m["outputs"][fs::path(a.out).filename().string()] = manifest::file_digest_hex(a.out);
  manifest::write_atomic(a.out + ".manifest.json", m.dump(2) + "\n");

  std::printf("wrote %s (%d segments, %d x %d @ %g Hz) in %.2fs\n", a.out.c_str(),
              a.cfg.n_segments, a.cfg.channels, a.cfg.samples, a.cfg.fs, watch.seconds());
  return 0;
}

// -- train -----------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out;
  std::string variant = "hv";
  std::string prior = "standard";
  std::string optimizer = "adam";
  training::TrainConfig cfg;
  double gamma_dtw = 1.0;
  double beta = 1.0;
  double dropout = 0.5;
  double train_frac = 0.5;
  double val_frac = 0.1;
  int pool_spatial = 0;    // 0 keeps the variant default
  int pool_separable = 0;  // 0 keeps the variant default
  int checkpoint_every = 0;
  bool force = false;
};

int cmd_train(const TrainArgs& a) {
  Stopwatch watch;
  const fs::path out(a.out);
  prepare_dir(out, a.force, {"checkpoints", "metrics", "plots"});

  const std::vector<data::SegmentTensor> segments = data::read_segments(a.data);
  if (segments.empty()) throw Error(ErrorCategory::Input, a.data + " holds no segments");
  const data::DatasetSplit split =
      data::split(segments, a.train_frac, a.val_frac, a.cfg.seed);

  models::ModelSpec spec = a.variant == "v3"
                               ? models::ModelSpec::v3(segments[0].channels, segments[0].samples)
                               : models::ModelSpec::hv(segments[0].channels, segments[0].samples);
  if (a.pool_spatial > 0) spec.pool_spatial = a.pool_spatial;
  if (a.pool_separable > 0) spec.pool_separable = a.pool_separable;
  spec.dtw_gamma = a.gamma_dtw;
  spec.kl_beta = a.beta;
  spec.dropout_p = a.dropout;
  spec.prior = a.prior == "conditional" ? models::PriorMode::Conditional
                                        : models::PriorMode::Standard;
  spec.validate();

  training::TrainConfig cfg = a.cfg;
  cfg.optimizer = a.optimizer == "sgd" ? training::Optimizer::Sgd : training::Optimizer::Adam;

  std::vector<std::string> outputs;
  std::mutex outputs_mutex;
  auto keep = [&](const fs::path& rel) {
    std::lock_guard<std::mutex> lock(outputs_mutex);
    outputs.push_back(rel.generic_string());
  };

  training::RunEpochHook epoch_hook;
  if (a.checkpoint_every > 0) {
    epoch_hook = [&](int run, models::Model& model, const training::EpochStats& s) {
      if ((s.epoch + 1) % a.checkpoint_every == 0) {
        const fs::path rel =
            fs::path("checkpoints") /
            ("run_" + zero_pad(run, 3) + "_epoch_" + zero_pad(s.epoch, 4) + ".hvts");
        models::save_checkpoint((out / rel).string(), model);
        keep(rel);
      }
      return true;
    };
  }
  training::RunFinishHook on_finish = [&](int run, models::Model& model,
                                          const training::TrainHistory&) {
    const fs::path rel = fs::path("checkpoints") / ("run_" + zero_pad(run, 3) + "_final.hvts");
    models::save_checkpoint((out / rel).string(), model);
    keep(rel);
  };

  auto make_model = [&spec](std::uint64_t seed) { return models::Model(spec, seed); };
  const Stopwatch train_watch;
  const training::MultiRunResult result =
      training::multi_run(make_model, segments, split, cfg, epoch_hook, on_finish);
  const double train_seconds = train_watch.seconds();

  const int levels = spec.latent_levels();
  for (int r = 0; r < cfg.runs; ++r) {
    const fs::path rel = fs::path("metrics") / ("history_run_" + zero_pad(r, 3) + ".tsv");
    manifest::write_atomic((out / rel).string(), history_table(result.runs[r], levels));
    keep(rel);
  }
  const training::AggregateCurves ok = training::aggregate(result.runs, true);
  const training::AggregateCurves all = training::aggregate(result.runs, false);
  manifest::write_atomic((out / "metrics/aggregate_train_dtw.tsv").string(),
                         aggregate_table(ok, all));
  keep("metrics/aggregate_train_dtw.tsv");

  svg::Series mean_ok{"successful runs", {}, {}};
  svg::Series mean_all{"all runs", {}, {}};
  for (std::size_t e = 0; e < ok.mean.size(); ++e) {
    mean_ok.xs.push_back(static_cast<double>(e));
    mean_ok.ys.push_back(ok.mean[e]);
  }
  for (std::size_t e = 0; e < all.mean.size(); ++e) {
    mean_all.xs.push_back(static_cast<double>(e));
    mean_all.ys.push_back(all.mean[e]);
  }
  manifest::write_atomic((out / "plots/train_dtw.svg").string(),
                         svg::line_plot({mean_ok, mean_all}, "mean normalized DTW per epoch",
                                        "epoch", "normalized DTW"));
  keep("plots/train_dtw.svg");

  json m;
  m["command"] = "train";
  m["version"] = manifest::tool_version();
  json cfg_json;
  cfg_json["variant"] = a.variant;
  cfg_json["prior"] = a.prior;
  cfg_json["optimizer"] = a.optimizer;
  cfg_json["epochs"] = cfg.epochs;
  cfg_json["runs"] = cfg.runs;
  cfg_json["batch"] = cfg.batch_size;
  cfg_json["lr"] = cfg.lr0;
  cfg_json["gamma_lr"] = cfg.lr_decay;
  cfg_json["gamma_dtw"] = a.gamma_dtw;
  cfg_json["beta"] = a.beta;
  cfg_json["dropout"] = a.dropout;
  cfg_json["seed"] = cfg.seed;
  cfg_json["train_frac"] = a.train_frac;
  cfg_json["val_frac"] = a.val_frac;
  cfg_json["fail_threshold"] = cfg.fail_threshold;
  cfg_json["early_stop_frac"] = cfg.early_stop_frac;
  cfg_json["checkpoint_every"] = a.checkpoint_every;
  cfg_json["model_spec"] = json::parse(spec.to_json());
  m["config"] = cfg_json;
  m["inputs"][fs::path(a.data).filename().string()] = manifest::file_digest_hex(a.data);
  m["split"]["train"] = split.train;
  m["split"]["val"] = split.val;
  m["split"]["test"] = split.test;
  json runs = json::array();
  for (int r = 0; r < cfg.runs; ++r) {
    const training::TrainHistory& h = result.runs[r];
    json jr;
    jr["run"] = r;
    jr["seed"] = h.run_seed;
    jr["epochs_completed"] = h.epochs.size();
    jr["diverged"] = h.diverged;
    jr["unsuccessful"] = h.unsuccessful;
    jr["status_reason"] = h.status_reason;
    jr["early_stopped_epoch"] = h.early_stopped_epoch;
    if (!h.epochs.empty()) {
      jr["final_train_dtw"] = h.epochs.back().train_dtw_mean;
      jr["final_val_dtw"] = h.epochs.back().val_dtw_mean;
    }
    runs.push_back(jr);
  }
  m["runs"] = runs;
  m["median_final_dtw"] = result.median_final;
  std::sort(outputs.begin(), outputs.end());
  m["outputs"] = digest_outputs(out, outputs);
  manifest::write_atomic((out / "manifest.json").string(), m.dump(2) + "\n");

  json timings;
  timings["train_seconds"] = train_seconds;
  timings["total_seconds"] = watch.seconds();
  write_timings(out, timings);

  std::printf("trained %d run(s) x %d epoch(s); %zu unsuccessful; wrote %s in %.2fs\n",
              cfg.runs, cfg.epochs, result.unsuccessful.size(), a.out.c_str(), watch.seconds());
  return 0;
}

// -- score -----------------------------------------------------------------

struct ScoreArgs {
  std::string data;
  std::vector<std::string> model_paths;
  std::string out;
  std::string eps = "zero";
  std::uint64_t sample_seed = 0;
  int batch = 30;
  bool force = false;
};

int cmd_score(const ScoreArgs& a) {
  Stopwatch watch;
  const fs::path out(a.out);
  prepare_dir(out, a.force, {"metrics", "plots"});
  const std::vector<data::SegmentTensor> segments = data::read_segments(a.data);

  std::vector<std::string> outputs;
  std::vector<metrics::ErrorMatrix> matrices;
  json summaries = json::array();
  for (std::size_t i = 0; i < a.model_paths.size(); ++i) {
    models::Model model = models::load_checkpoint(a.model_paths[i]);
    metrics::ScoreOptions opts;
    opts.eps = a.eps == "sampled" ? metrics::EpsMode::Sampled : metrics::EpsMode::Zero;
    opts.sample_seed = a.sample_seed;
    opts.batch_size = a.batch;
    opts.provenance = fs::path(a.model_paths[i]).filename().string();
    matrices.push_back(metrics::error_matrix(model, segments, opts));

    const fs::path rel = fs::path("metrics") / ("error_" + zero_pad(static_cast<int>(i), 3) +
                                                ".tsv");
    manifest::write_atomic((out / rel).string(), metrics::to_table(matrices.back()));
    outputs.push_back(rel.generic_string());

    const metrics::SubjectSummary s = metrics::subject_summary(matrices.back());
    json js;
    js["model"] = opts.provenance;
    js["mean"] = s.mean;
    js["std_channel_means"] = s.std_channel_means;
    js["std_all_entries"] = s.std_all_entries;
    summaries.push_back(js);
  }
  const metrics::ErrorMatrix avg = metrics::average_error(matrices);
  manifest::write_atomic((out / "metrics/error_avg.tsv").string(), metrics::to_table(avg));
  outputs.push_back("metrics/error_avg.tsv");
  manifest::write_atomic((out / "plots/error_avg.svg").string(),
                         svg::heatmap(avg, "mean normalized DTW (runs averaged)"));
  outputs.push_back("plots/error_avg.svg");

  const metrics::SubjectSummary s = metrics::subject_summary(avg);
  json summary;
  summary["average"]["mean"] = s.mean;
  summary["average"]["std_channel_means"] = s.std_channel_means;
  summary["average"]["std_all_entries"] = s.std_all_entries;
  summary["runs"] = summaries;
  manifest::write_atomic((out / "metrics/summary.json").string(), summary.dump(2) + "\n");
  outputs.push_back("metrics/summary.json");

  json m;
  m["command"] = "score";
  m["version"] = manifest::tool_version();
  m["config"]["eps"] = a.eps;
  m["config"]["sample_seed"] = a.sample_seed;
  m["config"]["batch"] = a.batch;
  m["config"]["models"] = json::array();
  for (const std::string& p : a.model_paths) {
    m["config"]["models"].push_back(fs::path(p).filename().string());
  }
  m["inputs"][fs::path(a.data).filename().string()] = manifest::file_digest_hex(a.data);
  for (const std::string& p : a.model_paths) {
    m["inputs"][fs::path(p).filename().string()] = manifest::file_digest_hex(p);
  }
  std::sort(outputs.begin(), outputs.end());
  m["outputs"] = digest_outputs(out, outputs);
  manifest::write_atomic((out / "manifest.json").string(), m.dump(2) + "\n");
  write_timings(out, json{{"total_seconds", watch.seconds()}});

  std::printf("scored %zu segment(s) with %zu model(s); mean error %.4f; wrote %s in %.2fs\n",
              segments.size(), a.model_paths.size(), s.mean, a.out.c_str(), watch.seconds());
  return 0;
}

// -- detect ------------------------------------------------------------

struct DetectArgs {
  std::string matrix;
  std::string out;
  int k = 15;
  bool auto_k = false;
  bool force = false;
};

int cmd_detect(const DetectArgs& a) {
  Stopwatch watch;
  const fs::path out(a.out);
  prepare_dir(out, a.force, {});
  const metrics::ErrorMatrix m = metrics::matrix_from_table(manifest::read_file(a.matrix));
  const int k = a.auto_k ? anomaly::scaled_k(m.rows) : a.k;
  const anomaly::OutlierReport report = anomaly::detect_outliers(m, k);

  manifest::write_atomic((out / "outliers.json").string(), anomaly::to_json(report));
  manifest::write_atomic((out / "outliers.tsv").string(), anomaly::to_table(report));

  json mj;
  mj["command"] = "detect";
  mj["version"] = manifest::tool_version();
  mj["config"]["k"] = k;
  mj["config"]["auto_k"] = a.auto_k;
  mj["inputs"][fs::path(a.matrix).filename().string()] = manifest::file_digest_hex(a.matrix);
  mj["outputs"] = digest_outputs(out, {"outliers.json", "outliers.tsv"});
  manifest::write_atomic((out / "manifest.json").string(), mj.dump(2) + "\n");
  write_timings(out, json{{"total_seconds", watch.seconds()}});

  std::printf("flagged %zu of %d repetition(s) (k=%d, threshold %.6g); wrote %s\n",
              report.flagged.size(), m.rows, k, report.threshold, a.out.c_str());
  return 0;
}

// -- spectra -----------------------------------------------------------

struct SpectraArgs {
  std::string data;
  std::string out;
  int window = 500;
  int overlap = 250;
  int channel = 0;
  int segment = -1;  // -1 averages over all segments
  bool force = false;
};

int cmd_spectra(const SpectraArgs& a) {
  Stopwatch watch;
  const fs::path out(a.out);
  prepare_dir(out, a.force, {"plots"});
  const std::vector<data::SegmentTensor> segments = data::read_segments(a.data);
  if (segments.empty()) throw Error(ErrorCategory::Input, a.data + " holds no segments");
  if (a.channel < 0 || a.channel >= segments[0].channels) {
    throw Error(ErrorCategory::Usage, "channel " + std::to_string(a.channel) + " out of range");
  }
  if (a.segment >= static_cast<int>(segments.size())) {
    throw Error(ErrorCategory::Usage, "segment " + std::to_string(a.segment) + " out of range");
  }

  metrics::PsdEstimate avg;
  int n = 0;
  const int lo = a.segment >= 0 ? a.segment : 0;
  const int hi = a.segment >= 0 ? a.segment + 1 : static_cast<int>(segments.size());
  for (int i = lo; i < hi; ++i) {
    const metrics::PsdEstimate p =
        metrics::welch_psd(segments[i].channel(a.channel), segments[i].fs, a.window, a.overlap);
    if (n == 0) {
      avg = p;
    } else {
      if (p.power.size() != avg.power.size()) {
        throw Error(ErrorCategory::Shape, "segments differ in length; cannot average spectra");
      }
      for (std::size_t k = 0; k < p.power.size(); ++k) avg.power[k] += p.power[k];
      avg.n_windows += p.n_windows;
    }
    ++n;
  }
  for (double& p : avg.power) p /= n;

  manifest::write_atomic((out / "psd.tsv").string(), metrics::to_table(avg));
  svg::Series series{"ch" + std::to_string(a.channel), {}, {}};
  for (std::size_t k = 0; k < avg.frequencies.size(); ++k) {
    if (avg.power[k] > 0.0) {
      series.xs.push_back(avg.frequencies[k]);
      series.ys.push_back(std::log10(avg.power[k]));
    }
  }
  manifest::write_atomic(
      (out / "plots/psd.svg").string(),
      svg::line_plot({series}, "Welch PSD", "frequency (Hz)", "log10 power density"));

  json m;
  m["command"] = "spectra";
  m["version"] = manifest::tool_version();
  m["config"]["window"] = a.window;
  m["config"]["overlap"] = a.overlap;
  m["config"]["channel"] = a.channel;
  m["config"]["segment"] = a.segment;
  m["inputs"][fs::path(a.data).filename().string()] = manifest::file_digest_hex(a.data);
  m["outputs"] = digest_outputs(out, {"psd.tsv", "plots/psd.svg"});
  m["short_series"] = avg.short_series;
  manifest::write_atomic((out / "manifest.json").string(), m.dump(2) + "\n");
  write_timings(out, json{{"total_seconds", watch.seconds()}});

  std::printf("averaged %d spectra (window %d, overlap %d); wrote %s\n", n, avg.window_len,
              avg.overlap, a.out.c_str());
  return 0;
}

// -- reconstruct -------------------------------------------------------

struct ReconstructArgs {
  std::string data;
  std::string model;
  std::string out;
  std::string level = "full";
  std::string eps = "zero";
  std::uint64_t sample_seed = 0;
  int batch = 30;
  bool force = false;
};

int cmd_reconstruct(const ReconstructArgs& a) {
  Stopwatch watch;
  prepare_file(a.out, a.force);
  const std::vector<data::SegmentTensor> segments = data::read_segments(a.data);
  if (segments.empty()) throw Error(ErrorCategory::Input, a.data + " holds no segments");
  models::Model model = models::load_checkpoint(a.model);
  const models::DecodeMode mode = parse_level(a.level, model.spec());

  Rng rng(a.sample_seed);
  Rng* rng_ptr = a.eps == "sampled" ? &rng : nullptr;
  std::vector<data::SegmentTensor> recon = segments;
  const int channels = segments[0].channels;
  const int samples = segments[0].samples;
  for (std::size_t from = 0; from < segments.size();) {
    const std::size_t to = std::min(segments.size(), from + static_cast<std::size_t>(a.batch));
    Tensor4 batch(static_cast<int>(to - from), 1, channels, samples);
    for (std::size_t i = from; i < to; ++i) {
      for (int c = 0; c < channels; ++c) {
        for (int t = 0; t < samples; ++t) {
          batch.at(static_cast<int>(i - from), 0, c, t) = segments[i].at(c, t);
        }
      }
    }
    const Tensor4 x =
        model.run(batch, grad::Phase::Eval, rng_ptr, mode, false, false).reconstruction;
    for (std::size_t i = from; i < to; ++i) {
      for (int c = 0; c < channels; ++c) {
        for (int t = 0; t < samples; ++t) {
          recon[i].at(c, t) = static_cast<float>(x.at(static_cast<int>(i - from), 0, c, t));
        }
      }
    }
    from = to;
  }
  data::write_segments(a.out, recon);

  json m;
  m["command"] = "reconstruct";
  m["version"] = manifest::tool_version();
  m["config"]["level"] = a.level;
  m["config"]["eps"] = a.eps;
  m["config"]["sample_seed"] = a.sample_seed;
  m["config"]["batch"] = a.batch;
  m["inputs"][fs::path(a.data).filename().string()] = manifest::file_digest_hex(a.data);
  m["inputs"][fs::path(a.model).filename().string()] = manifest::file_digest_hex(a.model);
  m["outputs"][fs::path(a.out).filename().string()] = manifest::file_digest_hex(a.out);
  manifest::write_atomic(a.out + ".manifest.json", m.dump(2) + "\n");

  std::printf("reconstructed %zu segment(s) at level %s; wrote %s in %.2fs\n", segments.size(),
              a.level.c_str(), a.out.c_str(), watch.seconds());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchical variational time-series reconstruction and anomaly detection"};
  app.require_subcommand(1);

  SynthArgs synth;
  CLI::App* s = app.add_subcommand("synth", "generate a synthetic segment file");
  s->add_option("--out", synth.out, "output .hvsg path")->required();
  s->add_option("--segments", synth.cfg.n_segments, "number of segments");
  s->add_option("--channels", synth.cfg.channels, "channels per segment");
  s->add_option("--samples", synth.cfg.samples, "samples per channel");
  s->add_option("--fs", synth.cfg.fs, "sampling rate, Hz");
  s->add_option("--slope", synth.cfg.spectral_slope, "power-law exponent of the 1/f shape");
  s->add_option("--alpha-gain", synth.cfg.alpha_gain, "alpha bump gain (0 disables)");
  s->add_option("--beta-gain", synth.cfg.beta_gain, "beta bump gain (0 disables)");
  s->add_option("--noise-floor", synth.cfg.noise_floor, "broadband noise floor");
  s->add_option("--amplitude", synth.cfg.amplitude, "overall scale");
  s->add_option("--labels", synth.cfg.n_labels, "number of class labels");
  s->add_option("--seed", synth.cfg.seed, "generator seed");
  s->add_option("--saturate-frac", synth.saturate_frac, "fraction of segments to clip");
  s->add_option("--saturate-rail", synth.saturate_rail, "clipping rail");
  s->add_option("--line-freq", synth.line_freq, "mains interference frequency (0 = off)");
  s->add_option("--line-amp", synth.line_amp, "mains interference amplitude");
  s->add_option("--line-frac", synth.line_frac, "fraction of segments with interference");
  s->add_option("--line-channel", synth.line_channel, "channel to contaminate (-1 = all)");
  s->add_flag("--force", synth.force, "overwrite existing output");

  TrainArgs train;
  CLI::App* t = app.add_subcommand("train", "train reconstruction models");
  t->add_option("--data", train.data, "input .hvsg path")->required();
  t->add_option("--out", train.out, "output directory")->required();
  t->add_option("--variant", train.variant, "model variant")
      ->check(CLI::IsMember({"v3", "hv"}));
  t->add_option("--prior", train.prior, "latent prior")
      ->check(CLI::IsMember({"standard", "conditional"}));
  t->add_option("--optimizer", train.optimizer, "optimizer")
      ->check(CLI::IsMember({"adam", "sgd"}));
  t->add_option("--epochs", train.cfg.epochs, "training epochs");
  t->add_option("--runs", train.cfg.runs, "independent runs");
  t->add_option("--batch", train.cfg.batch_size, "batch size");
  t->add_option("--lr", train.cfg.lr0, "initial learning rate");
  t->add_option("--gamma-lr", train.cfg.lr_decay, "per-epoch learning-rate factor");
  t->add_option("--gamma-dtw", train.gamma_dtw, "soft-DTW smoothing");
  t->add_option("--beta", train.beta, "KL weight");
  t->add_option("--dropout", train.dropout, "dropout probability");
  t->add_option("--seed", train.cfg.seed, "base seed");
  t->add_option("--train-frac", train.train_frac, "per-label training-pool fraction");
  t->add_option("--val-frac", train.val_frac, "validation fraction of the pool");
  t->add_option("--fail-threshold", train.cfg.fail_threshold,
                "unsuccessful-run multiple of the peer median");
  t->add_option("--early-stop-frac", train.cfg.early_stop_frac,
                "stop when train DTW falls below this fraction of its first-epoch value");
  t->add_option("--checkpoint-every", train.checkpoint_every,
                "save a checkpoint every N epochs (0 = final only)");
  t->add_option("--pool-spatial", train.pool_spatial, "override the spatial pooling window");
  t->add_option("--pool-sep", train.pool_separable, "override the separable pooling window");
  t->add_flag("--force", train.force, "overwrite existing output");

  ScoreArgs score;
  CLI::App* sc = app.add_subcommand("score", "error matrices from trained models");
  sc->add_option("--data", score.data, "input .hvsg path")->required();
  sc->add_option("--model", score.model_paths, "checkpoint path (repeatable)")->required();
  sc->add_option("--out", score.out, "output directory")->required();
  sc->add_option("--eps", score.eps, "decode noise")->check(CLI::IsMember({"zero", "sampled"}));
  sc->add_option("--sample-seed", score.sample_seed, "seed for sampled decode noise");
  sc->add_option("--batch", score.batch, "scoring batch size");
  sc->add_flag("--force", score.force, "overwrite existing output");

  DetectArgs detect;
  CLI::App* d = app.add_subcommand("detect", "flag anomalous repetitions");
  d->add_option("--matrix", detect.matrix, "error-matrix .tsv path")->required();
  d->add_option("--out", detect.out, "output directory")->required();
  d->add_option("--k", detect.k, "neighbour rank for k-distances");
  d->add_flag("--auto-k", detect.auto_k, "use the dataset-scaled k = max(3, rows/20)");
  d->add_flag("--force", detect.force, "overwrite existing output");

  SpectraArgs spectra;
  CLI::App* sp = app.add_subcommand("spectra", "Welch power spectral density");
  sp->add_option("--data", spectra.data, "input .hvsg path")->required();
  sp->add_option("--out", spectra.out, "output directory")->required();
  sp->add_option("--window", spectra.window, "window length, samples");
  sp->add_option("--overlap", spectra.overlap, "window overlap, samples");
  sp->add_option("--channel", spectra.channel, "channel to analyse");
  sp->add_option("--segment", spectra.segment, "segment to analyse (-1 = average all)");
  sp->add_flag("--force", spectra.force, "overwrite existing output");

  ReconstructArgs recon;
  CLI::App* rc = app.add_subcommand("reconstruct", "write reconstructed segments");
  rc->add_option("--data", recon.data, "input .hvsg path")->required();
  rc->add_option("--model", recon.model, "checkpoint path")->required();
  rc->add_option("--out", recon.out, "output .hvsg path")->required();
  rc->add_option("--level", recon.level, "decode depth")
      ->check(CLI::IsMember({"full", "z1", "z2", "z3"}));
  rc->add_option("--eps", recon.eps, "decode noise")->check(CLI::IsMember({"zero", "sampled"}));
  rc->add_option("--sample-seed", recon.sample_seed, "seed for sampled decode noise");
  rc->add_option("--batch", recon.batch, "decode batch size");
  rc->add_flag("--force", recon.force, "overwrite existing output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc2 = app.exit(e);
    return rc2 == 0 ? 0 : Error::exit_code(ErrorCategory::Usage);
  }

  try {
    if (s->parsed()) return cmd_synth(synth);
    if (t->parsed()) return cmd_train(train);
    if (sc->parsed()) return cmd_score(score);
    if (d->parsed()) return cmd_detect(detect);
    if (sp->parsed()) return cmd_spectra(spectra);
    if (rc->parsed()) return cmd_reconstruct(recon);
  } catch (const Error& e) {
    std::fprintf(stderr, "error (%s): %s\n", Error::category_name(e.category()), e.what());
    return Error::exit_code(e.category());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error (internal): %s\n", e.what());
    return Error::exit_code(ErrorCategory::Internal);
  }
  return 0;
}
