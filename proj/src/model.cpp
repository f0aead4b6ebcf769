#include "hvts/model.hpp"

#include <json.hpp>

#include <cmath>
#include <memory>
#include <utility>

namespace hvts::models {

using grad::Graph;
using grad::Pad;
using grad::Phase;
using NodeId = Graph::NodeId;

ModelSpec ModelSpec::v3(int channels, int samples) {
  ModelSpec s;
  s.variant = Variant::V3;
  s.channels = channels;
  s.samples = samples;
  s.pool_spatial = 4;
  s.pool_separable = 8;
  return s;
}

ModelSpec ModelSpec::hv(int channels, int samples) {
  ModelSpec s;
  s.variant = Variant::Hv;
  s.channels = channels;
  s.samples = samples;
  s.pool_spatial = 1;
  s.pool_separable = 10;
  return s;
}

void ModelSpec::validate() const {
  if (channels < 1 || samples < 1) {
    throw Error(ErrorCategory::Shape, "model spec: non-positive geometry");
  }
  if (temporal_kernel < 1 || separable_kernel < 1) {
    throw Error(ErrorCategory::Shape, "model spec: kernels must be positive");
  }
  if (depth_temporal < 1 || depth_spatial < 1 || depth_spatial % depth_temporal != 0) {
    throw Error(ErrorCategory::Shape,
                "model spec: spatial depth must be a positive multiple of temporal depth");
  }
  if (pool_spatial < 1 || pool_separable < 1) {
    throw Error(ErrorCategory::Shape, "model spec: pool windows must be >= 1");
  }
  if (samples % pool_spatial != 0 || (samples / pool_spatial) % pool_separable != 0) {
    throw Error(ErrorCategory::Shape,
                "model spec: pooling (" + std::to_string(pool_spatial) + "," +
                    std::to_string(pool_separable) + ") does not divide " +
                    std::to_string(samples) + " time samples");
  }
  if (dropout_p < 0.0 || dropout_p >= 1.0) {
    throw Error(ErrorCategory::Numerical, "model spec: dropout_p must be in [0,1)");
  }
  if (!(dtw_gamma > 0.0)) {
    throw Error(ErrorCategory::Numerical, "model spec: dtw_gamma must be positive");
  }
  if (kl_beta < 0.0) {
    throw Error(ErrorCategory::Numerical, "model spec: kl_beta must be non-negative");
  }
}

std::string ModelSpec::to_json() const {
  nlohmann::json j;
  j["variant"] = variant == Variant::V3 ? "v3" : "hv";
  j["channels"] = channels;
  j["samples"] = samples;
  j["temporal_kernel"] = temporal_kernel;
  j["separable_kernel"] = separable_kernel;
  j["depth_temporal"] = depth_temporal;
  j["depth_spatial"] = depth_spatial;
  j["pool_spatial"] = pool_spatial;
  j["pool_separable"] = pool_separable;
  j["dropout_p"] = dropout_p;
  j["prior"] = prior == PriorMode::Standard ? "standard" : "conditional";
  j["dtw_gamma"] = dtw_gamma;
  j["kl_beta"] = kl_beta;
  return j.dump();
}

ModelSpec ModelSpec::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::Input, std::string("model spec: bad JSON: ") + e.what());
  }
  ModelSpec s;
  try {
    const std::string variant = j.at("variant").get<std::string>();
    if (variant == "v3") {
      s.variant = Variant::V3;
    } else if (variant == "hv") {
      s.variant = Variant::Hv;
    } else {
      throw Error(ErrorCategory::Input, "model spec: unknown variant '" + variant + "'");
    }
    s.channels = j.at("channels").get<int>();
    s.samples = j.at("samples").get<int>();
    s.temporal_kernel = j.at("temporal_kernel").get<int>();
    s.separable_kernel = j.at("separable_kernel").get<int>();
    s.depth_temporal = j.at("depth_temporal").get<int>();
    s.depth_spatial = j.at("depth_spatial").get<int>();
    s.pool_spatial = j.at("pool_spatial").get<int>();
    s.pool_separable = j.at("pool_separable").get<int>();
    s.dropout_p = j.at("dropout_p").get<double>();
    const std::string prior = j.at("prior").get<std::string>();
    if (prior == "standard") {
      s.prior = PriorMode::Standard;
    } else if (prior == "conditional") {
      s.prior = PriorMode::Conditional;
    } else {
      throw Error(ErrorCategory::Input, "model spec: unknown prior '" + prior + "'");
    }
    s.dtw_gamma = j.at("dtw_gamma").get<double>();
    s.kl_beta = j.at("kl_beta").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::Input, std::string("model spec: missing field: ") + e.what());
  }
  return s;
}

Tensor4 sample(const Posterior& p, Rng* rng) {
  require_same_shape(p.mu, p.logvar, "sample");
  Tensor4 z(p.mu.shape());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double eps = rng ? rng->normal() : 0.0;
    z[i] = p.mu[i] + std::exp(0.5 * p.logvar[i]) * eps;
  }
  return z;
}

double kl_standard(const Tensor4& mu, const Tensor4& logvar) {
  require_same_shape(mu, logvar, "kl_standard");
  double acc = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    acc += std::exp(logvar[i]) + mu[i] * mu[i] - 1.0 - logvar[i];
  }
  return 0.5 * acc;
}

double kl_gaussian(const Posterior& q, const Posterior& p) {
  require_same_shape(q.mu, p.mu, "kl_gaussian");
  double acc = 0.0;
  for (std::size_t i = 0; i < q.mu.size(); ++i) {
    const double dm = q.mu[i] - p.mu[i];
    acc += p.logvar[i] - q.logvar[i] +
           (std::exp(q.logvar[i]) + dm * dm) / std::exp(p.logvar[i]) - 1.0;
  }
  return 0.5 * acc;
}

std::vector<double> kl_hierarchical(const std::vector<Posterior>& posteriors,
                                    const std::vector<Posterior>& priors, PriorMode mode) {
  if (posteriors.empty()) {
    throw Error(ErrorCategory::Shape, "kl_hierarchical: no posteriors");
  }
  std::vector<double> out;
  out.reserve(posteriors.size());
  out.push_back(kl_standard(posteriors[0].mu, posteriors[0].logvar));
  for (std::size_t l = 1; l < posteriors.size(); ++l) {
    if (mode == PriorMode::Standard) {
      out.push_back(kl_standard(posteriors[l].mu, posteriors[l].logvar));
    } else {
      if (priors.size() != posteriors.size() - 1) {
        throw Error(ErrorCategory::Shape,
                    "kl_hierarchical: conditional mode needs one prior per level beyond the first");
      }
      out.push_back(kl_gaussian(posteriors[l], priors[l - 1]));
    }
  }
  return out;
}

namespace {

void check_static(const ModelSpec& s) {
  if (s.channels < 1 || s.temporal_kernel < 1 || s.separable_kernel < 1 ||
      s.depth_temporal < 1 || s.depth_spatial < 1 || s.depth_spatial % s.depth_temporal != 0) {
    throw Error(ErrorCategory::Shape, "model spec: inconsistent layer geometry");
  }
}

// Trainable tensors in their fixed ledger order.  Shapes depend only on the
// static layer geometry, never on the segment length.
std::vector<Param> make_params(const ModelSpec& s) {
  check_static(s);
  const int d1 = s.depth_temporal;
  const int d2 = s.depth_spatial;
  const bool hv = s.variant == Variant::Hv;
  const bool cond = hv && s.prior == PriorMode::Conditional;

  std::vector<Param> p;
  auto add = [&p](const std::string& name, Shape4 shape) {
    p.push_back(Param{name, Tensor4(shape), Tensor4(shape)});
  };

  add("encoder.temporal.conv.weight", {d1, 1, 1, s.temporal_kernel});
  add("encoder.temporal.bn.scale", {1, d1, 1, 1});
  add("encoder.temporal.bn.shift", {1, d1, 1, 1});
  add("encoder.spatial.conv.weight", {d2, 1, s.channels, 1});
  add("encoder.spatial.bn.scale", {1, d2, 1, 1});
  add("encoder.spatial.bn.shift", {1, d2, 1, 1});
  add("encoder.separable.depthwise.weight", {d2, 1, 1, s.separable_kernel});
  add("encoder.separable.pointwise.weight", {d2, d2, 1, 1});
  add("encoder.separable.bn.scale", {1, d2, 1, 1});
  add("encoder.separable.bn.shift", {1, d2, 1, 1});
  add("encoder.sample_z1.weight", {2 * d2, d2, 1, 1});
  add("encoder.sample_z1.bias", {1, 2 * d2, 1, 1});
  if (hv) {
    add("encoder.sample_z2.weight", {2 * d2, d2, 1, 1});
    add("encoder.sample_z2.bias", {1, 2 * d2, 1, 1});
    add("encoder.sample_z3.weight", {2 * d1, d1, 1, 1});
    add("encoder.sample_z3.bias", {1, 2 * d1, 1, 1});
  }
  add("decoder.separable.bn.scale", {1, d2, 1, 1});
  add("decoder.separable.bn.shift", {1, d2, 1, 1});
  add("decoder.separable.pointwise.weight", {d2, d2, 1, 1});
  add("decoder.separable.depthwise.weight", {d2, 1, 1, s.separable_kernel});
  if (cond) {
    add("decoder.prior_z2.weight", {2 * d2, d2, 1, 1});
    add("decoder.prior_z2.bias", {1, 2 * d2, 1, 1});
  }
  add("decoder.spatial.bn.scale", {1, d2, 1, 1});
  add("decoder.spatial.bn.shift", {1, d2, 1, 1});
  add("decoder.spatial.conv.weight", {d2, 1, s.channels, 1});
  if (cond) {
    add("decoder.prior_z3.weight", {2 * d1, d1, 1, 1});
    add("decoder.prior_z3.bias", {1, 2 * d1, 1, 1});
  }
  add("decoder.temporal.bn.scale", {1, d1, 1, 1});
  add("decoder.temporal.bn.shift", {1, d1, 1, 1});
  add("decoder.temporal.conv.weight", {d1, 1, 1, s.temporal_kernel});
  return p;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

Ledger param_ledger(const ModelSpec& spec) {
  Ledger ledger;
  for (const Param& p : make_params(spec)) {
    LedgerEntry e{p.name, p.value.shape(), p.value.size()};
    ledger.total += e.count;
    if (p.name.rfind("encoder.", 0) == 0) {
      ledger.encoder_total += e.count;
    } else {
      ledger.decoder_total += e.count;
    }
    ledger.entries.push_back(std::move(e));
  }
  return ledger;
}

Model::Model(ModelSpec spec, std::uint64_t init_seed) : spec_(spec) {
  spec_.validate();
  params_ = make_params(spec_);
  bn_.assign(6, grad::BatchNormState());
  const int d1 = spec_.depth_temporal;
  const int d2 = spec_.depth_spatial;
  const int depths[6] = {d1, d2, d2, d2, d2, d1};
  for (int i = 0; i < 6; ++i) bn_[i] = grad::BatchNormState(depths[i]);

  // Uniform(+-1/sqrt(fan_in)) for conv weights, biases sharing the bound of
  // their convolution; batch-norm starts at identity.
  Rng rng(init_seed);
  double last_bound = 1.0;
  for (Param& p : params_) {
    if (ends_with(p.name, ".weight")) {
      const Shape4 s = p.value.shape();
      const double fan_in = static_cast<double>(s.d) * s.h * s.w;
      last_bound = 1.0 / std::sqrt(fan_in);
      for (std::size_t i = 0; i < p.value.size(); ++i)
        p.value[i] = rng.uniform(-last_bound, last_bound);
    } else if (ends_with(p.name, ".bias")) {
      for (std::size_t i = 0; i < p.value.size(); ++i)
        p.value[i] = rng.uniform(-last_bound, last_bound);
    } else if (ends_with(p.name, ".scale")) {
      p.value.fill(1.0);
    } else {
      p.value.fill(0.0);
    }
  }
}

int Model::find_param(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return static_cast<int>(i);
  }
  throw Error(ErrorCategory::Internal, "unknown parameter " + name);
}

std::vector<std::pair<std::string, grad::BatchNormState*>> Model::bn_states() {
  return {
      {"encoder.temporal.bn", &bn_[0]},  {"encoder.spatial.bn", &bn_[1]},
      {"encoder.separable.bn", &bn_[2]}, {"decoder.separable.bn", &bn_[3]},
      {"decoder.spatial.bn", &bn_[4]},   {"decoder.temporal.bn", &bn_[5]},
  };
}

ForwardResult Model::run(const Tensor4& batch, Phase phase, Rng* rng, DecodeMode mode,
                         bool backward, bool with_loss) {
  const Shape4 bs = batch.shape();
  if (bs.d != 1 || bs.h != spec_.channels || bs.w != spec_.samples) {
    throw Error(ErrorCategory::Shape, "model input " + bs.str() + " does not match spec (1,1," +
                                          std::to_string(spec_.channels) + "," +
                                          std::to_string(spec_.samples) + ")");
  }
  if (phase == Phase::Train && rng == nullptr) {
    throw Error(ErrorCategory::Internal, "training pass needs an rng");
  }
  const bool hv = spec_.variant == Variant::Hv;
  if (!hv && mode != DecodeMode::FromZ1) {
    throw Error(ErrorCategory::Shape, "decode modes with_z2/with_z3 require the hv variant");
  }
  const bool use_z2 = hv && mode != DecodeMode::FromZ1;
  const bool use_z3 = hv && mode == DecodeMode::WithZ3;
  const bool cond = hv && spec_.prior == PriorMode::Conditional;
  const int d1 = spec_.depth_temporal;
  const int d2 = spec_.depth_spatial;
  const double p = spec_.dropout_p;

  Graph g;
  std::vector<NodeId> pid(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) pid[i] = g.input(params_[i].value);
  auto P = [&](const char* name) { return pid[find_param(name)]; };

  Rng fallback(0);
  Rng& r = rng ? *rng : fallback;
  auto draw_eps = [&](const Shape4& s) {
    Tensor4 e(s);
    if (rng) {
      for (std::size_t i = 0; i < e.size(); ++i) e[i] = rng->normal();
    }
    return e;
  };

  const NodeId x = g.input(batch);

  // Encoder.  Te block: temporal convolution + batch norm.
  NodeId te = g.conv2d(x, P("encoder.temporal.conv.weight"), 1, Pad::SameTime);
  te = g.batch_norm(te, P("encoder.temporal.bn.scale"), P("encoder.temporal.bn.shift"), bn_[0],
                    phase);
  NodeId mu3 = -1, lv3 = -1;
  if (hv) {
    NodeId p3 = g.conv2d(te, P("encoder.sample_z3.weight"), 1, Pad::Valid);
    p3 = g.bias_add(p3, P("encoder.sample_z3.bias"));
    mu3 = g.slice_depth(p3, 0, d1);
    lv3 = g.slice_depth(p3, d1, 2 * d1);
  }

  // Sp block: spatial convolution collapsing the electrode axis.
  NodeId sp = g.conv2d(te, P("encoder.spatial.conv.weight"), d1, Pad::Valid);
  sp = g.batch_norm(sp, P("encoder.spatial.bn.scale"), P("encoder.spatial.bn.shift"), bn_[1],
                    phase);
  sp = g.elu(sp);
  if (spec_.pool_spatial > 1) sp = g.avg_pool(sp, 1, spec_.pool_spatial);
  sp = g.dropout(sp, p, phase, r);
  NodeId mu2 = -1, lv2 = -1;
  if (hv) {
    NodeId p2 = g.conv2d(sp, P("encoder.sample_z2.weight"), 1, Pad::Valid);
    p2 = g.bias_add(p2, P("encoder.sample_z2.bias"));
    mu2 = g.slice_depth(p2, 0, d2);
    lv2 = g.slice_depth(p2, d2, 2 * d2);
  }

  // SC block: separable convolution (depthwise + pointwise).
  NodeId sc = g.conv2d(sp, P("encoder.separable.depthwise.weight"), d2, Pad::SameTime);
  sc = g.conv2d(sc, P("encoder.separable.pointwise.weight"), 1, Pad::Valid);
  sc = g.batch_norm(sc, P("encoder.separable.bn.scale"), P("encoder.separable.bn.shift"), bn_[2],
                    phase);
  sc = g.elu(sc);
  sc = g.avg_pool(sc, 1, spec_.pool_separable);
  sc = g.dropout(sc, p, phase, r);
  NodeId p1 = g.conv2d(sc, P("encoder.sample_z1.weight"), 1, Pad::Valid);
  p1 = g.bias_add(p1, P("encoder.sample_z1.bias"));
  const NodeId mu1 = g.slice_depth(p1, 0, d2);
  const NodeId lv1 = g.slice_depth(p1, d2, 2 * d2);

  // Decoder, mirroring the encoder stack.
  const NodeId z1 = g.reparam(mu1, lv1, draw_eps(g.value(mu1).shape()));
  NodeId d = g.dropout(z1, p, phase, r);
  d = g.upsample(d, 1, spec_.pool_separable);
  d = g.elu(d);
  d = g.batch_norm(d, P("decoder.separable.bn.scale"), P("decoder.separable.bn.shift"), bn_[3],
                   phase);
  d = g.transpose_conv2d(d, P("decoder.separable.pointwise.weight"), 1, Pad::Valid);
  d = g.transpose_conv2d(d, P("decoder.separable.depthwise.weight"), d2, Pad::SameTime);

  NodeId mu_p2 = -1, lv_p2 = -1, z2 = -1;
  if (hv) {
    if (cond) {
      NodeId q2 = g.conv2d(d, P("decoder.prior_z2.weight"), 1, Pad::Valid);
      q2 = g.bias_add(q2, P("decoder.prior_z2.bias"));
      mu_p2 = g.slice_depth(q2, 0, d2);
      lv_p2 = g.slice_depth(q2, d2, 2 * d2);
    }
    z2 = g.reparam(mu2, lv2, draw_eps(g.value(mu2).shape()));
    if (use_z2) d = g.add(d, z2);
  }
  d = g.dropout(d, p, phase, r);
  if (spec_.pool_spatial > 1) d = g.upsample(d, 1, spec_.pool_spatial);
  d = g.elu(d);
  d = g.batch_norm(d, P("decoder.spatial.bn.scale"), P("decoder.spatial.bn.shift"), bn_[4], phase);
  d = g.transpose_conv2d(d, P("decoder.spatial.conv.weight"), d1, Pad::Valid);

  NodeId mu_p3 = -1, lv_p3 = -1, z3 = -1;
  if (hv) {
    if (cond) {
      NodeId q3 = g.conv2d(d, P("decoder.prior_z3.weight"), 1, Pad::Valid);
      q3 = g.bias_add(q3, P("decoder.prior_z3.bias"));
      mu_p3 = g.slice_depth(q3, 0, d1);
      lv_p3 = g.slice_depth(q3, d1, 2 * d1);
    }
    z3 = g.reparam(mu3, lv3, draw_eps(g.value(mu3).shape()));
    if (use_z3) d = g.add(d, z3);
  }
  d = g.batch_norm(d, P("decoder.temporal.bn.scale"), P("decoder.temporal.bn.shift"), bn_[5],
                   phase);
  const NodeId recon = g.transpose_conv2d(d, P("decoder.temporal.conv.weight"), 1, Pad::SameTime);

  // Losses.  Reconstruction: per-segment sum of per-channel soft-DTW scores,
  // averaged over the batch; gradients are computed here so the backward
  // closure is pure arithmetic.
  const int nb = bs.b, nc = bs.h, nt = bs.w;
  const double inv_b = 1.0 / nb;
  std::vector<NodeId> kl_nodes;
  kl_nodes.push_back(g.kl_standard(mu1, lv1));
  if (hv) {
    kl_nodes.push_back(cond ? g.kl_gaussian(mu2, lv2, mu_p2, lv_p2) : g.kl_standard(mu2, lv2));
    kl_nodes.push_back(cond ? g.kl_gaussian(mu3, lv3, mu_p3, lv_p3) : g.kl_standard(mu3, lv3));
  }

  NodeId total = -1, recon_loss = -1;
  if (with_loss) {
    const Tensor4& xhat = g.value(recon);
    auto recon_grad = std::make_shared<Tensor4>(xhat.shape());
    double recon_sum = 0.0;
    std::vector<double> row_hat(nt), row_x(nt);
    for (int b = 0; b < nb; ++b) {
      for (int c = 0; c < nc; ++c) {
        for (int t = 0; t < nt; ++t) {
          row_hat[t] = xhat.at(b, 0, c, t);
          row_x[t] = batch.at(b, 0, c, t);
        }
        const dtw::SoftDtwResult res = dtw::soft_dtw_grad(row_hat, row_x, spec_.dtw_gamma);
        recon_sum += res.value;
        for (int t = 0; t < nt; ++t) recon_grad->at(b, 0, c, t) = res.grad_a[t];
      }
    }
    recon_loss = g.custom_scalar(
        recon_sum * inv_b, {recon},
        [recon_grad, inv_b](Graph& gg, double gy, const std::vector<NodeId>& ins) {
          Tensor4& gx = gg.gradient_mut(ins[0]);
          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy * inv_b * (*recon_grad)[i];
        });
    NodeId kl_sum = kl_nodes[0];
    for (std::size_t l = 1; l < kl_nodes.size(); ++l) kl_sum = g.add(kl_sum, kl_nodes[l]);
    total = g.add(recon_loss, g.scale_by(kl_sum, spec_.kl_beta * inv_b));
  }

  if (backward) {
    if (!with_loss) {
      throw Error(ErrorCategory::Internal, "backward pass needs the loss graph");
    }
    g.backward(total);
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i].grad = g.gradient(pid[i]);
  }

  ForwardResult out;
  out.reconstruction = g.value(recon);
  out.posteriors.push_back({g.value(mu1), g.value(lv1)});
  if (hv) {
    out.posteriors.push_back({g.value(mu2), g.value(lv2)});
    out.posteriors.push_back({g.value(mu3), g.value(lv3)});
  }
  for (NodeId k : kl_nodes) out.kl_per_level.push_back(g.value(k).scalar() * inv_b);
  if (with_loss) {
    out.recon_loss = g.value(recon_loss).scalar();
    out.total_loss = g.value(total).scalar();
  }
  return out;
}

Tensor4 Model::reconstruct(const Tensor4& batch, DecodeMode mode) {
  return run(batch, Phase::Eval, nullptr, mode, false, false).reconstruction;
}

std::vector<Posterior> Model::encode(const Tensor4& batch) {
  return run(batch, Phase::Eval, nullptr,
             spec_.variant == Variant::Hv ? DecodeMode::WithZ3 : DecodeMode::FromZ1, false, false)
      .posteriors;
}

}  // namespace hvts::models
