#include "hvts/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>
#include <tuple>
#include <utility>

#include "hvts/dtw.hpp"
#include "hvts/error.hpp"

namespace hvts::training {

namespace {

models::DecodeMode full_mode(const models::ModelSpec& spec) {
  return spec.variant == models::Variant::Hv ? models::DecodeMode::WithZ3
                                             : models::DecodeMode::FromZ1;
}

// Population mean/std of a scalar sample.
std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(xs.size());
  return {mean, std::sqrt(var)};
}

Tensor4 make_batch(const std::vector<data::SegmentTensor>& segments,
                   const std::vector<int>& order, std::size_t from, std::size_t to) {
  const data::SegmentTensor& first = segments[order[from]];
  Tensor4 batch(static_cast<int>(to - from), 1, first.channels, first.samples);
  for (std::size_t i = from; i < to; ++i) {
    const data::SegmentTensor& seg = segments[order[i]];
    if (seg.channels != first.channels || seg.samples != first.samples) {
      throw Error(ErrorCategory::Shape, "segments in one batch differ in shape");
    }
    const int b = static_cast<int>(i - from);
    for (int c = 0; c < seg.channels; ++c) {
      for (int t = 0; t < seg.samples; ++t) batch.at(b, 0, c, t) = seg.at(c, t);
    }
  }
  return batch;
}

// Channel-mean normalized DTW per segment from deterministic reconstructions,
// then mean/std across segments.
std::pair<double, double> dtw_stats(models::Model& model,
                                    const std::vector<data::SegmentTensor>& segments,
                                    const std::vector<int>& indices, int batch_size) {
  std::vector<double> per_segment;
  per_segment.reserve(indices.size());
  const models::DecodeMode mode = full_mode(model.spec());
  for (std::size_t from = 0; from < indices.size();) {
    const std::size_t to = std::min(indices.size(), from + static_cast<std::size_t>(batch_size));
    const Tensor4 batch = make_batch(segments, indices, from, to);
    const Tensor4 recon = model.reconstruct(batch, mode);
    for (std::size_t i = from; i < to; ++i) {
      const data::SegmentTensor& seg = segments[indices[i]];
      const int b = static_cast<int>(i - from);
      double acc = 0.0;
      for (int c = 0; c < seg.channels; ++c) {
        std::vector<double> rec(seg.samples);
        for (int t = 0; t < seg.samples; ++t) rec[t] = recon.at(b, 0, c, t);
        acc += dtw::dtw(seg.channel(c), rec).normalized_score;
      }
      per_segment.push_back(acc / seg.channels);
    }
    from = to;
  }
  return mean_std(per_segment);
}

struct EvalLosses {
  double total = 0.0;
  double recon = 0.0;
  std::vector<double> kl;
};

// Segment-weighted deterministic losses over a pool.
EvalLosses eval_losses(models::Model& model, const std::vector<data::SegmentTensor>& segments,
                       const std::vector<int>& indices, int batch_size) {
  EvalLosses out;
  out.kl.assign(model.spec().latent_levels(), 0.0);
  const models::DecodeMode mode = full_mode(model.spec());
  for (std::size_t from = 0; from < indices.size();) {
    const std::size_t to = std::min(indices.size(), from + static_cast<std::size_t>(batch_size));
    const Tensor4 batch = make_batch(segments, indices, from, to);
    const models::ForwardResult r =
        model.run(batch, grad::Phase::Eval, nullptr, mode, false, true);
    const double w = static_cast<double>(to - from);
    out.total += w * r.total_loss;
    out.recon += w * r.recon_loss;
    for (std::size_t k = 0; k < out.kl.size(); ++k) out.kl[k] += w * r.kl_per_level[k];
    from = to;
  }
  const double n = static_cast<double>(indices.size());
  if (n > 0) {
    out.total /= n;
    out.recon /= n;
    for (double& k : out.kl) k /= n;
  }
  return out;
}

// Adam moments (or nothing, for plain SGD) over the model's parameter list.
class OptimizerState {
 public:
  OptimizerState(Optimizer kind, const std::vector<models::Param>& params) : kind_(kind) {
    if (kind_ == Optimizer::Adam) {
      for (const models::Param& p : params) {
        m_.emplace_back(p.value.size(), 0.0);
        v_.emplace_back(p.value.size(), 0.0);
      }
    }
  }

  void step(std::vector<models::Param>& params, double lr) {
    if (kind_ == Optimizer::Sgd) {
      for (models::Param& p : params) {
        for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] -= lr * p.grad[i];
      }
      return;
    }
    ++t_;
    const double c1 = 1.0 - std::pow(kB1, t_);
    const double c2 = 1.0 - std::pow(kB2, t_);
    for (std::size_t j = 0; j < params.size(); ++j) {
      models::Param& p = params[j];
      std::vector<double>& m = m_[j];
      std::vector<double>& v = v_[j];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        m[i] = kB1 * m[i] + (1.0 - kB1) * g;
        v[i] = kB2 * v[i] + (1.0 - kB2) * g * g;
        p.value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + kEps);
      }
    }
  }

 private:
  static constexpr double kB1 = 0.9;
  static constexpr double kB2 = 0.999;
  static constexpr double kEps = 1e-8;

  Optimizer kind_;
  int t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

void validate(const TrainConfig& config) {
  if (config.batch_size < 1) throw Error(ErrorCategory::Usage, "batch size must be >= 1");
  if (config.epochs < 1) throw Error(ErrorCategory::Usage, "epochs must be >= 1");
  if (config.runs < 1) throw Error(ErrorCategory::Usage, "runs must be >= 1");
  if (config.lr0 <= 0.0) throw Error(ErrorCategory::Usage, "learning rate must be positive");
  if (config.lr_decay <= 0.0) throw Error(ErrorCategory::Usage, "lr decay must be positive");
  if (config.fail_threshold <= 0.0) {
    throw Error(ErrorCategory::Usage, "fail threshold must be positive");
  }
  if (config.early_stop_frac < 0.0) {
    throw Error(ErrorCategory::Usage, "early stop fraction must be >= 0");
  }
}

int worker_count(int runs) {
  int threads = 1;
  if (const char* env = std::getenv("HVTS_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) threads = static_cast<int>(v);
  }
  return std::min(threads, runs);
}

}  // namespace

double lr_at(const TrainConfig& config, int epoch) {
  return config.lr0 * std::pow(config.lr_decay, epoch);
}

TrainHistory train_run(models::Model& model, const std::vector<data::SegmentTensor>& segments,
                       const data::DatasetSplit& split, const TrainConfig& config,
                       std::uint64_t run_seed, const EpochHook& hook) {
  validate(config);
  if (split.train.empty()) throw Error(ErrorCategory::Input, "training split is empty");
  for (int idx : split.train) {
    if (idx < 0 || idx >= static_cast<int>(segments.size())) {
      throw Error(ErrorCategory::Input, "split index " + std::to_string(idx) + " out of range");
    }
  }

  TrainHistory history;
  history.run_seed = run_seed;
  Rng rng(run_seed);
  std::vector<int> order = split.train;
  OptimizerState opt(config.optimizer, model.params());
  const models::DecodeMode mode = full_mode(model.spec());
  const int levels = model.spec().latent_levels();

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr_at(config, epoch);
    stats.train_kl.assign(levels, 0.0);
    try {
      shuffle(order, rng);
      for (std::size_t from = 0; from < order.size();) {
        const std::size_t to =
            std::min(order.size(), from + static_cast<std::size_t>(config.batch_size));
        const Tensor4 batch = make_batch(segments, order, from, to);
        const models::ForwardResult r =
            model.run(batch, grad::Phase::Train, &rng, mode, true, true);
        opt.step(model.params(), stats.lr);
        const double w = static_cast<double>(to - from);
        stats.train_total += w * r.total_loss;
        stats.train_recon += w * r.recon_loss;
        for (int k = 0; k < levels; ++k) stats.train_kl[k] += w * r.kl_per_level[k];
        from = to;
      }
      const double n = static_cast<double>(order.size());
      stats.train_total /= n;
      stats.train_recon /= n;
      for (double& k : stats.train_kl) k /= n;

      std::tie(stats.train_dtw_mean, stats.train_dtw_std) =
          dtw_stats(model, segments, split.train, config.batch_size);
      if (split.val.empty()) {
        stats.val_total = stats.train_total;
        stats.val_recon = stats.train_recon;
        stats.val_kl = stats.train_kl;
        stats.val_dtw_mean = stats.train_dtw_mean;
        stats.val_dtw_std = stats.train_dtw_std;
      } else {
        const EvalLosses v = eval_losses(model, segments, split.val, config.batch_size);
        stats.val_total = v.total;
        stats.val_recon = v.recon;
        stats.val_kl = v.kl;
        std::tie(stats.val_dtw_mean, stats.val_dtw_std) =
            dtw_stats(model, segments, split.val, config.batch_size);
      }
    } catch (const Error& e) {
      if (e.category() == ErrorCategory::Numerical) {
        history.diverged = true;
        history.divergence_note = e.what();
        break;
      }
      throw;
    }
    history.epochs.push_back(stats);
    if (hook && !hook(model, stats)) {
      history.early_stopped_epoch = epoch;
      break;
    }
    if (config.early_stop_frac > 0.0 && epoch >= 1 &&
        stats.train_dtw_mean <= config.early_stop_frac * history.epochs[0].train_dtw_mean) {
      history.early_stopped_epoch = epoch;
      break;
    }
  }
  return history;
}

MultiRunResult multi_run(const std::function<models::Model(std::uint64_t)>& make_model,
                         const std::vector<data::SegmentTensor>& segments,
                         const data::DatasetSplit& split, const TrainConfig& config,
                         const RunEpochHook& hook, const RunFinishHook& on_finish) {
  validate(config);
  MultiRunResult result;
  result.runs.resize(config.runs);

  // Seeds derive from (config.seed, run index) alone so results do not
  // depend on worker scheduling.
  const Rng base(config.seed);
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto work = [&]() {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= config.runs) return;
      try {
        const std::uint64_t model_seed = base.fork(2 * static_cast<std::uint64_t>(i)).next_u64();
        const std::uint64_t run_seed =
            base.fork(2 * static_cast<std::uint64_t>(i) + 1).next_u64();
        models::Model model = make_model(model_seed);
        EpochHook epoch_hook;
        if (hook) {
          epoch_hook = [i, &hook](models::Model& m, const EpochStats& s) { return hook(i, m, s); };
        }
        result.runs[i] = train_run(model, segments, split, config, run_seed, epoch_hook);
        if (on_finish) on_finish(i, model, result.runs[i]);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };

  const int workers = worker_count(config.runs);
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (std::thread& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  mark_unsuccessful(result, config.fail_threshold);
  return result;
}

void mark_unsuccessful(MultiRunResult& result, double threshold) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  result.final_dtw.assign(result.runs.size(), nan);
  std::vector<double> completed;
  for (std::size_t i = 0; i < result.runs.size(); ++i) {
    const TrainHistory& run = result.runs[i];
    if (!run.diverged && !run.epochs.empty()) {
      result.final_dtw[i] = run.epochs.back().train_dtw_mean;
      completed.push_back(result.final_dtw[i]);
    }
  }
  result.median_final = 0.0;
  if (!completed.empty()) {
    std::sort(completed.begin(), completed.end());
    const std::size_t mid = completed.size() / 2;
    result.median_final = completed.size() % 2 == 1
                              ? completed[mid]
                              : 0.5 * (completed[mid - 1] + completed[mid]);
  }
  result.unsuccessful.clear();
  for (std::size_t i = 0; i < result.runs.size(); ++i) {
    TrainHistory& run = result.runs[i];
    run.unsuccessful = false;
    run.status_reason.clear();
    if (run.diverged || run.epochs.empty()) {
      run.unsuccessful = true;
      run.status_reason = "numerical";
    } else if (result.final_dtw[i] > threshold * result.median_final) {
      run.unsuccessful = true;
      run.status_reason = "outlier-run";
    }
    if (run.unsuccessful) result.unsuccessful.push_back(static_cast<int>(i));
  }
}

AggregateCurves aggregate(const std::vector<TrainHistory>& runs, bool successful_only,
                          const std::function<double(const EpochStats&)>& metric) {
  std::function<double(const EpochStats&)> value = metric;
  if (!value) value = [](const EpochStats& s) { return s.train_dtw_mean; };
  std::size_t max_epochs = 0;
  for (const TrainHistory& run : runs) {
    if (successful_only && run.unsuccessful) continue;
    max_epochs = std::max(max_epochs, run.epochs.size());
  }
  AggregateCurves curves;
  for (std::size_t e = 0; e < max_epochs; ++e) {
    std::vector<double> xs;
    for (const TrainHistory& run : runs) {
      if (successful_only && run.unsuccessful) continue;
      if (e < run.epochs.size()) xs.push_back(value(run.epochs[e]));
    }
    const auto [mean, stddev] = mean_std(xs);
    curves.mean.push_back(mean);
    curves.stddev.push_back(stddev);
    curves.count.push_back(static_cast<int>(xs.size()));
  }
  return curves;
}

}  // namespace hvts::training
