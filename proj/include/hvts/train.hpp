#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hvts/data.hpp"
#include "hvts/model.hpp"

namespace hvts::training {

enum class Optimizer { Adam, Sgd };

struct TrainConfig {
  int batch_size = 30;
  double lr0 = 0.01;
  double lr_decay = 0.999;  // per-epoch multiplicative factor
  int epochs = 80;
  int runs = 20;
  Optimizer optimizer = Optimizer::Adam;
  std::uint64_t seed = 1;
  // A run whose final mean normalized DTW exceeds this multiple of the
  // median across completed runs is marked unsuccessful.
  double fail_threshold = 5.0;
  // Stop once the training-pool mean normalized DTW drops below this
  // fraction of its first-epoch value; 0 disables early stopping.
  double early_stop_frac = 0.0;
};

// Losses and fit metrics recorded after each epoch.  Losses marked train_*
// are the batch-size-weighted means over that epoch's optimisation steps;
// val_* come from a deterministic pass (dropout off, batch norm on running
// statistics, eps = 0).  The DTW statistics are computed from deterministic
// reconstructions: per segment the channel-mean normalized DTW, then mean
// and population std across segments.  An empty validation split mirrors
// the training-pool metrics into the val_* fields.
struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  double train_total = 0.0;
  double train_recon = 0.0;
  std::vector<double> train_kl;  // per level, deepest first
  double val_total = 0.0;
  double val_recon = 0.0;
  std::vector<double> val_kl;
  double train_dtw_mean = 0.0;
  double train_dtw_std = 0.0;
  double val_dtw_mean = 0.0;
  double val_dtw_std = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;   // length = completed epochs
  bool diverged = false;            // hit a non-finite value and stopped
  std::string divergence_note;      // what tripped, empty when clean
  bool unsuccessful = false;        // set across runs, see mark_unsuccessful
  std::string status_reason;        // "numerical" / "outlier-run" when unsuccessful
  std::uint64_t run_seed = 0;
  int early_stopped_epoch = -1;     // -1 when training ran to completion
};

// Called after each recorded epoch; return false to stop the run early.
using EpochHook = std::function<bool(models::Model&, const EpochStats&)>;

// lr(e) = lr0 * decay^e for epoch index e starting at 0.
double lr_at(const TrainConfig& config, int epoch);

// Trains the model in place on the training pool of the split.  Divergence
// (a non-finite value anywhere in the graph) halts the run, preserving the
// history collected so far and setting `diverged`.  Deterministic given
// (model initial state, segments, split, config, run_seed).
TrainHistory train_run(models::Model& model, const std::vector<data::SegmentTensor>& segments,
                       const data::DatasetSplit& split, const TrainConfig& config,
                       std::uint64_t run_seed, const EpochHook& hook = nullptr);

struct MultiRunResult {
  std::vector<TrainHistory> runs;
  // Final-epoch training-pool mean normalized DTW per run; NaN for runs
  // that diverged before completing one epoch.
  std::vector<double> final_dtw;
  std::vector<int> unsuccessful;  // run indices, ascending
  double median_final = 0.0;      // median over runs with a finite final_dtw
};

// Per-run hook used by multi_run; the int is the run index.
using RunEpochHook = std::function<bool(int, models::Model&, const EpochStats&)>;

// Called once per run with the trained model and its history (before the
// unsuccessful-run rule is applied); used to persist final checkpoints.
using RunFinishHook = std::function<void(int, models::Model&, const TrainHistory&)>;

// Runs config.runs independent trainings.  Each run builds a fresh model
// via make_model(derived seed) and trains with its own derived shuffle /
// sampling seed, so runs are independent and reproducible individually.
// Runs execute on up to HVTS_THREADS worker threads (default 1); results
// are identical regardless of the thread count, and hooks for different
// runs may fire concurrently.  Afterwards the unsuccessful-run rule is
// applied with config.fail_threshold.
MultiRunResult multi_run(const std::function<models::Model(std::uint64_t)>& make_model,
                         const std::vector<data::SegmentTensor>& segments,
                         const data::DatasetSplit& split, const TrainConfig& config,
                         const RunEpochHook& hook = nullptr,
                         const RunFinishHook& on_finish = nullptr);

// Marks runs as unsuccessful: always when diverged, otherwise when the final
// mean normalized DTW exceeds threshold times the median over completed
// runs.  Fills final_dtw / median_final / unsuccessful.  Exposed for testing.
void mark_unsuccessful(MultiRunResult& result, double threshold);

// Per-epoch mean and population std of one scalar across runs; epochs past a
// run's history length simply do not contribute (count tracks how many runs
// reached each epoch).  successful_only skips runs marked unsuccessful.  The
// metric defaults to train_dtw_mean.
struct AggregateCurves {
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<int> count;
};

AggregateCurves aggregate(const std::vector<TrainHistory>& runs, bool successful_only,
                          const std::function<double(const EpochStats&)>& metric = nullptr);

}  // namespace hvts::training
