// Training loop: schedule exactness, overfit smoke test, divergence
// handling, the unsuccessful-run rule, determinism and aggregation.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>
#include <vector>

#include "hvts/data.hpp"
#include "hvts/error.hpp"
#include "hvts/model.hpp"
#include "hvts/train.hpp"

using hvts::Error;
using hvts::ErrorCategory;
namespace data = hvts::data;
namespace models = hvts::models;
namespace training = hvts::training;

namespace {

models::ModelSpec tiny_spec(int channels = 4, int samples = 64) {
  auto spec = models::ModelSpec::hv(channels, samples);
  spec.temporal_kernel = 16;
  spec.separable_kernel = 8;
  spec.pool_separable = 8;
  spec.dropout_p = 0.1;
  return spec;
}

std::vector<data::SegmentTensor> tiny_segments(int n, std::uint64_t seed = 5,
                                               int channels = 4, int samples = 64,
                                               double amplitude = 1.0) {
  data::SynthConfig cfg;
  cfg.n_segments = n;
  cfg.channels = channels;
  cfg.samples = samples;
  cfg.amplitude = amplitude;
  cfg.n_labels = 1;
  cfg.seed = seed;
  return data::synth_dataset(cfg);
}

data::DatasetSplit all_train(int n) {
  data::DatasetSplit sp;
  for (int i = 0; i < n; ++i) sp.train.push_back(i);
  return sp;
}

bool same_stats(const training::EpochStats& a, const training::EpochStats& b) {
  return a.epoch == b.epoch && a.lr == b.lr && a.train_total == b.train_total &&
         a.train_recon == b.train_recon && a.train_kl == b.train_kl &&
         a.val_total == b.val_total && a.val_recon == b.val_recon && a.val_kl == b.val_kl &&
         a.train_dtw_mean == b.train_dtw_mean && a.train_dtw_std == b.train_dtw_std &&
         a.val_dtw_mean == b.val_dtw_mean && a.val_dtw_std == b.val_dtw_std;
}

}  // namespace

TEST_CASE("learning-rate schedule is the exact exponential") {
  training::TrainConfig cfg;
  CHECK(training::lr_at(cfg, 0) == 0.01);
  for (int e = 0; e <= 200; ++e) {
    CHECK(training::lr_at(cfg, e) == 0.01 * std::pow(0.999, e));
    if (e >= 1) {
      const double ratio = training::lr_at(cfg, e) / training::lr_at(cfg, e - 1);
      CHECK(ratio == doctest::Approx(0.999).epsilon(1e-12));
    }
  }
  cfg.lr0 = 0.5;
  cfg.lr_decay = 0.9;
  CHECK(training::lr_at(cfg, 2) == 0.5 * std::pow(0.9, 2));
}

TEST_CASE("config validation rejects unusable settings") {
  const auto segs = tiny_segments(4);
  const auto sp = all_train(4);
  auto expect_usage = [&](training::TrainConfig cfg) {
    models::Model model(tiny_spec(), 1);
    try {
      training::train_run(model, segs, sp, cfg, 1);
      CHECK(false);
    } catch (const Error& e) {
      CHECK(e.category() == ErrorCategory::Usage);
    }
  };
  training::TrainConfig cfg;
  cfg.batch_size = 0;
  expect_usage(cfg);
  cfg = {};
  cfg.epochs = 0;
  expect_usage(cfg);
  cfg = {};
  cfg.runs = 0;
  expect_usage(cfg);
  cfg = {};
  cfg.lr0 = 0.0;
  expect_usage(cfg);
  cfg = {};
  cfg.lr_decay = -1.0;
  expect_usage(cfg);
  cfg = {};
  cfg.fail_threshold = 0.0;
  expect_usage(cfg);
  cfg = {};
  cfg.early_stop_frac = -0.1;
  expect_usage(cfg);

  models::Model model(tiny_spec(), 1);
  CHECK_THROWS_AS(training::train_run(model, segs, {}, {}, 1), Error);  // empty train split
}

TEST_CASE("a tiny model overfits a handful of segments") {
  // Microvolt-scale data: squared alignment costs stay large against the
  // default smoothing, which keeps the loss surface sharp.
  const auto segs = tiny_segments(4, 5, 4, 64, 10.0);
  const auto sp = all_train(4);
  models::Model model(tiny_spec(), 42);

  training::TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.epochs = 150;
  cfg.early_stop_frac = 0.25;  // stop at a 4x error reduction
  cfg.seed = 7;

  const auto history = training::train_run(model, segs, sp, cfg, 7);
  REQUIRE(!history.epochs.empty());
  CHECK(!history.diverged);

  const double first = history.epochs.front().train_dtw_mean;
  const double last = history.epochs.back().train_dtw_mean;
  INFO("first epoch dtw ", first, " final dtw ", last, " after ",
       history.epochs.size(), " epochs");
  CHECK(last <= 0.25 * first);
  CHECK(history.early_stopped_epoch >= 1);

  // Epoch bookkeeping rides along.
  for (std::size_t e = 0; e < history.epochs.size(); ++e) {
    const auto& s = history.epochs[e];
    CHECK(s.epoch == static_cast<int>(e));
    CHECK(s.lr == training::lr_at(cfg, static_cast<int>(e)));
    CHECK(s.train_kl.size() == 3);
    CHECK(std::isfinite(s.train_total));
    // No validation split: metrics mirror the training pool.
    CHECK(s.val_total == s.train_total);
    CHECK(s.val_dtw_mean == s.train_dtw_mean);
  }
}

TEST_CASE("validation split populates separate metrics") {
  const auto segs = tiny_segments(6);
  data::DatasetSplit sp;
  sp.train = {0, 1, 2, 3};
  sp.val = {4, 5};
  models::Model model(tiny_spec(), 3);
  training::TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.epochs = 2;
  const auto history = training::train_run(model, segs, sp, cfg, 11);
  REQUIRE(history.epochs.size() == 2);
  for (const auto& s : history.epochs) {
    CHECK(std::isfinite(s.val_total));
    CHECK(std::isfinite(s.val_dtw_mean));
    // Train losses come from noisy optimisation passes, val losses from a
    // deterministic pass; they coinciding bitwise would be a mirroring bug.
    CHECK(s.val_total != s.train_total);
  }
}

TEST_CASE("divergence preserves the completed epochs") {
  const auto segs = tiny_segments(4);
  const auto sp = all_train(4);
  models::Model model(tiny_spec(), 21);
  training::TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.epochs = 6;

  // Poison a sampling-layer bias after the second epoch: exp(logvar)
  // overflows during the next KL evaluation.
  const auto hook = [](models::Model& m, const training::EpochStats& s) {
    if (s.epoch == 1) {
      for (auto& p : m.params()) {
        if (p.name == "encoder.sample_z1.bias") p.value.fill(1000.0);
      }
    }
    return true;
  };
  const auto history = training::train_run(model, segs, sp, cfg, 13, hook);
  CHECK(history.diverged);
  CHECK(history.epochs.size() == 2);  // epochs 0 and 1 survived
  CHECK(!history.divergence_note.empty());
  CHECK(history.early_stopped_epoch == -1);
}

TEST_CASE("epoch hook can stop a run early") {
  const auto segs = tiny_segments(4);
  const auto sp = all_train(4);
  models::Model model(tiny_spec(), 31);
  training::TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.epochs = 10;
  const auto history = training::train_run(
      model, segs, sp, cfg, 17,
      [](models::Model&, const training::EpochStats& s) { return s.epoch < 2; });
  CHECK(history.epochs.size() == 3);  // epochs 0..2 recorded, stop after 2
  CHECK(history.early_stopped_epoch == 2);
  CHECK(!history.diverged);
}

TEST_CASE("mismatched segment shapes surface as shape errors, not divergence") {
  auto segs = tiny_segments(2);
  auto odd = tiny_segments(1, 6, 4, 32);
  segs.push_back(odd[0]);
  models::Model model(tiny_spec(), 1);
  training::TrainConfig cfg;
  cfg.batch_size = 3;
  cfg.epochs = 1;
  try {
    training::train_run(model, segs, all_train(3), cfg, 1);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::Shape);
  }
}

TEST_CASE("unsuccessful-run rule: divergence and the median multiple") {
  training::MultiRunResult result;
  result.runs.resize(5);
  auto with_final = [](double dtw) {
    training::TrainHistory h;
    training::EpochStats s;
    s.train_dtw_mean = dtw;
    h.epochs.push_back(s);
    return h;
  };
  result.runs[0] = with_final(1.0);
  result.runs[1] = with_final(1.1);
  result.runs[2] = with_final(0.9);
  result.runs[3] = with_final(12.0);
  result.runs[4].diverged = true;

  training::mark_unsuccessful(result, 5.0);
  // Median over completed runs {0.9, 1.0, 1.1, 12.0} -> 1.05.
  CHECK(result.median_final == doctest::Approx(1.05).epsilon(1e-15));
  CHECK(result.unsuccessful == std::vector<int>{3, 4});
  CHECK(result.runs[3].status_reason == "outlier-run");
  CHECK(result.runs[4].status_reason == "numerical");
  CHECK(std::isnan(result.final_dtw[4]));
  CHECK(result.final_dtw[3] == 12.0);
  CHECK(!result.runs[0].unsuccessful);

  // Exactly at the threshold multiple stays successful (strictly-greater
  // rule).
  training::MultiRunResult edge;
  edge.runs.resize(3);
  edge.runs[0] = with_final(1.0);
  edge.runs[1] = with_final(1.0);
  edge.runs[2] = with_final(5.0);  // median 1.0, threshold 5 -> 5 == 5*1
  training::mark_unsuccessful(edge, 5.0);
  CHECK(edge.unsuccessful.empty());

  // All-diverged pools still terminate with everything marked numerical.
  training::MultiRunResult dead;
  dead.runs.resize(2);
  dead.runs[0].diverged = true;
  dead.runs[1].diverged = true;
  training::mark_unsuccessful(dead, 5.0);
  CHECK(dead.unsuccessful == std::vector<int>{0, 1});
  CHECK(dead.median_final == 0.0);
}

TEST_CASE("multi_run: derived seeds, determinism, thread-count invariance") {
  const auto segs = tiny_segments(4);
  const auto sp = all_train(4);
  training::TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.epochs = 2;
  cfg.runs = 3;
  cfg.seed = 99;

  const auto spec = tiny_spec();
  auto make_model = [&spec](std::uint64_t seed) { return models::Model(spec, seed); };

  const auto a = training::multi_run(make_model, segs, sp, cfg);
  REQUIRE(a.runs.size() == 3);
  REQUIRE(a.final_dtw.size() == 3);
  // Runs see different models and shuffles.
  CHECK(a.runs[0].run_seed != a.runs[1].run_seed);
  CHECK(a.final_dtw[0] != a.final_dtw[1]);
  for (const auto& run : a.runs) CHECK(run.epochs.size() == 2);

  const auto b = training::multi_run(make_model, segs, sp, cfg);
  for (int i = 0; i < 3; ++i) {
    CHECK(a.runs[i].run_seed == b.runs[i].run_seed);
    REQUIRE(a.runs[i].epochs.size() == b.runs[i].epochs.size());
    for (std::size_t e = 0; e < a.runs[i].epochs.size(); ++e)
      CHECK(same_stats(a.runs[i].epochs[e], b.runs[i].epochs[e]));
  }

  // Worker count must not leak into results.
  setenv("HVTS_THREADS", "3", 1);
  const auto c = training::multi_run(make_model, segs, sp, cfg);
  unsetenv("HVTS_THREADS");
  for (int i = 0; i < 3; ++i) {
    REQUIRE(c.runs[i].epochs.size() == a.runs[i].epochs.size());
    for (std::size_t e = 0; e < a.runs[i].epochs.size(); ++e)
      CHECK(same_stats(a.runs[i].epochs[e], c.runs[i].epochs[e]));
  }

  // The finish hook sees every run exactly once, in run-index terms.
  std::vector<int> finished;
  std::vector<std::uint64_t> seeds;
  training::multi_run(make_model, segs, sp, cfg, nullptr,
                      [&](int i, models::Model&, const training::TrainHistory& h) {
                        finished.push_back(i);
                        seeds.push_back(h.run_seed);
                      });
  CHECK(finished.size() == 3);
  std::sort(finished.begin(), finished.end());
  CHECK(finished == std::vector<int>{0, 1, 2});
}

TEST_CASE("aggregate curves: ragged histories and the successful-only filter") {
  auto with_curve = [](std::vector<double> dtw, bool unsuccessful) {
    training::TrainHistory h;
    for (std::size_t e = 0; e < dtw.size(); ++e) {
      training::EpochStats s;
      s.epoch = static_cast<int>(e);
      s.train_dtw_mean = dtw[e];
      s.val_total = 10.0 + dtw[e];
      h.epochs.push_back(s);
    }
    h.unsuccessful = unsuccessful;
    return h;
  };
  std::vector<training::TrainHistory> runs;
  runs.push_back(with_curve({3.0, 2.0, 1.0}, false));
  runs.push_back(with_curve({5.0, 4.0}, true));

  const auto all = training::aggregate(runs, false);
  REQUIRE(all.mean.size() == 3);
  CHECK(all.mean[0] == 4.0);
  CHECK(all.stddev[0] == 1.0);  // population std of {3, 5}
  CHECK(all.mean[1] == 3.0);
  CHECK(all.mean[2] == 1.0);
  CHECK(all.count == std::vector<int>{2, 2, 1});

  const auto good = training::aggregate(runs, true);
  REQUIRE(good.mean.size() == 3);
  CHECK(good.mean[0] == 3.0);
  CHECK(good.stddev[0] == 0.0);
  CHECK(good.count == std::vector<int>{1, 1, 1});

  // Custom metric selector.
  const auto val = training::aggregate(
      runs, false, [](const training::EpochStats& s) { return s.val_total; });
  CHECK(val.mean[0] == 14.0);

  CHECK(training::aggregate({}, false).mean.empty());
}
