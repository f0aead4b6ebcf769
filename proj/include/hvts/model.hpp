#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hvts/dtw.hpp"
#include "hvts/graph.hpp"
#include "hvts/rng.hpp"
#include "hvts/tensor.hpp"

namespace hvts::models {

// V3: single latent space after the separable-convolution block.
// Hv: three latent spaces tapped after each encoder block, samples injected
// additively into the matching decoder stages.
enum class Variant { V3, Hv };

// Prior over each latent level.  Standard is N(0, I) everywhere.  Conditional
// predicts diagonal-normal parameters for the shallower levels from the
// decoder features at the injection point via (1,1) convolutions; the deepest
// level keeps the standard prior.  For V3 the two modes coincide.
enum class PriorMode { Standard, Conditional };

// Which latent levels contribute samples during decoding.  FromZ1 zeroes the
// z2/z3 injections, WithZ2 adds z2, WithZ3 adds both (the full model).  V3
// only supports FromZ1.
enum class DecodeMode { FromZ1, WithZ2, WithZ3 };

struct ModelSpec {
  Variant variant = Variant::Hv;
  int channels = 22;
  int samples = 1000;
  int temporal_kernel = 128;
  int separable_kernel = 32;
  int depth_temporal = 8;
  int depth_spatial = 16;
  int pool_spatial = 1;    // v3: 4, hv: none
  int pool_separable = 10; // v3: 8, hv: 10
  double dropout_p = 0.5;
  PriorMode prior = PriorMode::Standard;
  double dtw_gamma = 1.0;
  double kl_beta = 1.0;

  static ModelSpec v3(int channels, int samples);
  static ModelSpec hv(int channels, int samples);

  // Throws on inconsistent geometry (e.g. pooling that does not divide the
  // time axis).
  void validate() const;

  int latent_levels() const { return variant == Variant::Hv ? 3 : 1; }

  // Canonical JSON (sorted keys); used in checkpoints and manifests.
  std::string to_json() const;
  static ModelSpec from_json(const std::string& text);
};

struct Posterior {
  Tensor4 mu;
  Tensor4 logvar;
};

// z = mu + exp(0.5 * logvar) * eps; rng == nullptr draws eps = 0.
Tensor4 sample(const Posterior& p, Rng* rng);

// 0.5 * sum(exp(logvar) + mu^2 - 1 - logvar) against the standard normal.
double kl_standard(const Tensor4& mu, const Tensor4& logvar);

// KL(q || p) for diagonal Gaussians.
double kl_gaussian(const Posterior& q, const Posterior& p);

// Per-level KL terms.  With PriorMode::Standard the priors argument is
// ignored; with Conditional it must supply one prior per level beyond the
// first (deepest), which always uses the standard prior.
std::vector<double> kl_hierarchical(const std::vector<Posterior>& posteriors,
                                    const std::vector<Posterior>& priors, PriorMode mode);

// One tensor in the trainable state.
struct Param {
  std::string name;
  Tensor4 value;
  Tensor4 grad;
};

struct LedgerEntry {
  std::string name;
  Shape4 shape;
  std::size_t count = 0;
};

struct Ledger {
  std::vector<LedgerEntry> entries;
  std::size_t total = 0;
  std::size_t encoder_total = 0;
  std::size_t decoder_total = 0;
};

// Everything a forward pass produces that callers inspect.
struct ForwardResult {
  Tensor4 reconstruction;             // (B, 1, C, T)
  std::vector<Posterior> posteriors;  // deepest first: z1 [, z2, z3]
  double recon_loss = 0.0;            // batch mean of channel-summed soft-DTW
  std::vector<double> kl_per_level;   // batch means
  double total_loss = 0.0;            // recon + beta * sum(kl)
};

class Model {
 public:
  Model(ModelSpec spec, std::uint64_t init_seed);

  const ModelSpec& spec() const { return spec_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }

  // Forward pass.  Train phase enables dropout, batch statistics and
  // running-stat updates and requires an rng (also used for the
  // reparameterisation draws).  In Eval phase an rng samples eps only;
  // rng == nullptr decodes the posterior means.  When backward is set the
  // parameter gradients are filled.  with_loss = false skips the soft-DTW
  // evaluation for reconstruction-only callers.
  ForwardResult run(const Tensor4& batch, grad::Phase phase, Rng* rng, DecodeMode mode,
                    bool backward, bool with_loss = true);

  // Deterministic reconstruction: eval phase, eps = 0.
  Tensor4 reconstruct(const Tensor4& batch, DecodeMode mode);

  // Posteriors for a batch, eval phase.
  std::vector<Posterior> encode(const Tensor4& batch);

  // Batch-norm running statistics, exposed for checkpointing.  Order is
  // fixed: encoder temporal/spatial/separable, decoder separable/spatial/
  // temporal.
  std::vector<std::pair<std::string, grad::BatchNormState*>> bn_states();

 private:
  friend Ledger param_ledger(const ModelSpec& spec);

  int find_param(const std::string& name) const;

  ModelSpec spec_;
  std::vector<Param> params_;
  std::vector<grad::BatchNormState> bn_;
};

// Name, shape and count of every trainable tensor, plus encoder/decoder
// subtotals (sample layers count toward the encoder, conditional-prior
// predictors toward the decoder).
Ledger param_ledger(const ModelSpec& spec);

}  // namespace hvts::models
