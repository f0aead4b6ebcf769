// Model structure: parameter ledgers, latent shapes, KL terms against Monte
// Carlo, decode modes and checkpoint round-trips.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "hvts/checkpoint.hpp"
#include "hvts/dtw.hpp"
#include "hvts/error.hpp"
#include "hvts/model.hpp"
#include "hvts/rng.hpp"
#include "hvts/tensor.hpp"

using hvts::Error;
using hvts::ErrorCategory;
using hvts::Rng;
using hvts::Shape4;
using hvts::Tensor4;
namespace models = hvts::models;
namespace fs = std::filesystem;

namespace {

// Small geometry that exercises every block quickly.
models::ModelSpec desk_spec() {
  auto spec = models::ModelSpec::hv(4, 64);
  spec.temporal_kernel = 16;
  spec.separable_kernel = 8;
  spec.pool_separable = 8;
  spec.dropout_p = 0.25;
  return spec;
}

Tensor4 random_batch(const models::ModelSpec& spec, int b, std::uint64_t seed) {
  Rng rng(seed);
  Tensor4 t(b, 1, spec.channels, spec.samples);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
  return t;
}

std::string tmp_file(const std::string& name) {
  fs::create_directories("test_model_tmp");
  return (fs::path("test_model_tmp") / name).string();
}

// Monte Carlo estimate of KL(q || p) from log-density differences.
double mc_kl_standard(const Tensor4& mu, const Tensor4& lv, int draws, std::uint64_t seed) {
  Rng rng(seed);
  double acc = 0.0;
  for (int s = 0; s < draws; ++s) {
    for (std::size_t i = 0; i < mu.size(); ++i) {
      const double eps = rng.normal();
      const double z = mu[i] + std::exp(0.5 * lv[i]) * eps;
      acc += 0.5 * (z * z - lv[i] - eps * eps);
    }
  }
  return acc / draws;
}

double mc_kl_gaussian(const models::Posterior& q, const models::Posterior& p, int draws,
                      std::uint64_t seed) {
  Rng rng(seed);
  double acc = 0.0;
  for (int s = 0; s < draws; ++s) {
    for (std::size_t i = 0; i < q.mu.size(); ++i) {
      const double eps = rng.normal();
      const double z = q.mu[i] + std::exp(0.5 * q.logvar[i]) * eps;
      const double dz = z - p.mu[i];
      acc += 0.5 * (p.logvar[i] - q.logvar[i] + dz * dz * std::exp(-p.logvar[i]) - eps * eps);
    }
  }
  return acc / draws;
}

}  // namespace

TEST_CASE("parameter ledger: reference single-latent geometry") {
  const auto ledger = models::param_ledger(models::ModelSpec::v3(22, 1000));
  CHECK(ledger.total == 4992);
  CHECK(ledger.encoder_total == 2768);
  CHECK(ledger.decoder_total == 2224);
  CHECK(ledger.encoder_total + ledger.decoder_total == ledger.total);

  std::size_t sum = 0;
  std::set<std::string> names;
  for (const auto& e : ledger.entries) {
    CHECK(e.count == e.shape.count());
    sum += e.count;
    names.insert(e.name);
  }
  CHECK(sum == ledger.total);
  CHECK(names.size() == ledger.entries.size());  // unique names
}

TEST_CASE("parameter ledger: hierarchical geometry and conditional prior") {
  auto spec = models::ModelSpec::hv(22, 1000);
  const auto standard = models::param_ledger(spec);
  // The two extra sample layers add (32*16+32) + (16*8+16) on top of the
  // single-latent stack.
  CHECK(standard.total == 4992 + 544 + 144);
  CHECK(standard.total == 5680);

  spec.prior = models::PriorMode::Conditional;
  const auto cond = models::param_ledger(spec);
  CHECK(cond.total == 5680 + 544 + 144);
  CHECK(cond.total == 6368);

  // Conditional-prior predictors live on the decoder side.
  CHECK(cond.encoder_total == standard.encoder_total);
  CHECK(cond.decoder_total == standard.decoder_total + 688);

  // Counts scale with the static geometry only, never the segment length.
  CHECK(models::param_ledger(models::ModelSpec::hv(22, 2000)).total == 5680);
}

TEST_CASE("ledger names and shapes match the live parameter vector") {
  const auto spec = desk_spec();
  const auto ledger = models::param_ledger(spec);
  models::Model model(spec, 5);
  REQUIRE(ledger.entries.size() == model.params().size());
  for (std::size_t i = 0; i < ledger.entries.size(); ++i) {
    CHECK(ledger.entries[i].name == model.params()[i].name);
    CHECK(ledger.entries[i].count == model.params()[i].value.size());
  }
}

TEST_CASE("spec validation rejects inconsistent geometry") {
  auto expect = [](models::ModelSpec spec, ErrorCategory cat) {
    try {
      spec.validate();
      CHECK(false);
    } catch (const Error& e) {
      CHECK(e.category() == cat);
    }
  };

  auto bad_pool = models::ModelSpec::hv(8, 256);  // 256 not divisible by 10
  expect(bad_pool, ErrorCategory::Shape);

  auto ok = desk_spec();
  CHECK_NOTHROW(ok.validate());

  auto d = ok;
  d.dropout_p = 1.0;
  expect(d, ErrorCategory::Numerical);
  auto gma = ok;
  gma.dtw_gamma = 0.0;
  expect(gma, ErrorCategory::Numerical);
  auto beta = ok;
  beta.kl_beta = -0.5;
  expect(beta, ErrorCategory::Numerical);
  auto depth = ok;
  depth.depth_spatial = 15;  // not a multiple of depth_temporal
  expect(depth, ErrorCategory::Shape);
  auto geo = ok;
  geo.channels = 0;
  expect(geo, ErrorCategory::Shape);
}

TEST_CASE("spec JSON round-trips and rejects malformed input") {
  auto spec = desk_spec();
  spec.prior = models::PriorMode::Conditional;
  spec.dtw_gamma = 0.25;
  spec.kl_beta = 2.5;
  const auto back = models::ModelSpec::from_json(spec.to_json());
  CHECK(back.variant == spec.variant);
  CHECK(back.channels == spec.channels);
  CHECK(back.samples == spec.samples);
  CHECK(back.temporal_kernel == spec.temporal_kernel);
  CHECK(back.separable_kernel == spec.separable_kernel);
  CHECK(back.depth_temporal == spec.depth_temporal);
  CHECK(back.depth_spatial == spec.depth_spatial);
  CHECK(back.pool_spatial == spec.pool_spatial);
  CHECK(back.pool_separable == spec.pool_separable);
  CHECK(back.dropout_p == spec.dropout_p);
  CHECK(back.prior == spec.prior);
  CHECK(back.dtw_gamma == spec.dtw_gamma);
  CHECK(back.kl_beta == spec.kl_beta);

  auto expect_input = [](const std::string& text) {
    try {
      models::ModelSpec::from_json(text);
      CHECK(false);
    } catch (const Error& e) {
      CHECK(e.category() == ErrorCategory::Input);
    }
  };
  expect_input("not json");
  expect_input("{\"variant\":\"other\"}");
  expect_input("{\"variant\":\"hv\"}");  // missing fields
}

TEST_CASE("initialisation: bounded fan-in uniform, identity norms, seeded") {
  const auto spec = desk_spec();
  models::Model a(spec, 17);
  for (const auto& p : a.params()) {
    const auto name = p.name;
    if (name.find(".bn.scale") != std::string::npos) {
      for (std::size_t i = 0; i < p.value.size(); ++i) CHECK(p.value[i] == 1.0);
    } else if (name.find(".bn.shift") != std::string::npos) {
      for (std::size_t i = 0; i < p.value.size(); ++i) CHECK(p.value[i] == 0.0);
    } else if (name.find(".weight") != std::string::npos) {
      const Shape4 s = p.value.shape();
      const double bound = 1.0 / std::sqrt(static_cast<double>(s.d) * s.h * s.w);
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        CHECK(p.value[i] <= bound);
        CHECK(p.value[i] >= -bound);
      }
    }
  }

  models::Model b(spec, 17);
  for (std::size_t i = 0; i < a.params().size(); ++i)
    CHECK(a.params()[i].value == b.params()[i].value);
  models::Model c(spec, 18);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.params().size(); ++i)
    if (a.params()[i].value != c.params()[i].value) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("posterior sampling: zero-noise passthrough and moments") {
  models::Posterior p;
  p.mu = Tensor4(1, 2, 1, 3);
  p.logvar = Tensor4(1, 2, 1, 3);
  Rng mk(3);
  for (std::size_t i = 0; i < p.mu.size(); ++i) {
    p.mu[i] = mk.normal();
    p.logvar[i] = 0.5 * mk.normal();
  }
  const Tensor4 mean_decode = models::sample(p, nullptr);
  for (std::size_t i = 0; i < p.mu.size(); ++i) CHECK(mean_decode[i] == p.mu[i]);

  // Big-sample moments of one coordinate.
  models::Posterior wide;
  wide.mu = Tensor4(1, 1, 1, 1);
  wide.logvar = Tensor4(1, 1, 1, 1);
  wide.mu[0] = 0.7;
  wide.logvar[0] = std::log(2.25);
  Rng rng(9);
  double m1 = 0.0, m2 = 0.0;
  const int draws = 40000;
  for (int i = 0; i < draws; ++i) {
    const double z = models::sample(wide, &rng)[0];
    m1 += z;
    m2 += z * z;
  }
  m1 /= draws;
  m2 = m2 / draws - m1 * m1;
  CHECK(m1 == doctest::Approx(0.7).epsilon(0.03));
  CHECK(m2 == doctest::Approx(2.25).epsilon(0.05));
}

TEST_CASE("closed-form KL terms agree with Monte Carlo") {
  Rng mk(23);
  models::Posterior q, p;
  q.mu = Tensor4(1, 4, 1, 6);
  q.logvar = Tensor4(1, 4, 1, 6);
  p.mu = Tensor4(1, 4, 1, 6);
  p.logvar = Tensor4(1, 4, 1, 6);
  for (std::size_t i = 0; i < q.mu.size(); ++i) {
    q.mu[i] = 0.8 * mk.normal();
    q.logvar[i] = 0.5 * mk.normal();
    p.mu[i] = 0.8 * mk.normal();
    p.logvar[i] = 0.5 * mk.normal();
  }

  const double closed_std = models::kl_standard(q.mu, q.logvar);
  const double mc_std = mc_kl_standard(q.mu, q.logvar, 100000, 31);
  CHECK(std::fabs(mc_std - closed_std) / closed_std < 0.01);

  const double closed_g = models::kl_gaussian(q, p);
  const double mc_g = mc_kl_gaussian(q, p, 100000, 37);
  CHECK(std::fabs(mc_g - closed_g) / closed_g < 0.01);

  // Degenerate check: q == p has zero divergence.
  CHECK(models::kl_gaussian(q, q) == 0.0);
}

TEST_CASE("hierarchical KL respects the prior mode") {
  Rng mk(41);
  std::vector<models::Posterior> posts(3);
  for (auto& p : posts) {
    p.mu = Tensor4(1, 2, 1, 2);
    p.logvar = Tensor4(1, 2, 1, 2);
    for (std::size_t i = 0; i < p.mu.size(); ++i) {
      p.mu[i] = mk.normal();
      p.logvar[i] = 0.3 * mk.normal();
    }
  }
  std::vector<models::Posterior> priors(2);
  for (auto& p : priors) {
    p.mu = Tensor4(1, 2, 1, 2);
    p.logvar = Tensor4(1, 2, 1, 2);
    for (std::size_t i = 0; i < p.mu.size(); ++i) {
      p.mu[i] = mk.normal();
      p.logvar[i] = 0.3 * mk.normal();
    }
  }

  const auto standard = models::kl_hierarchical(posts, {}, models::PriorMode::Standard);
  REQUIRE(standard.size() == 3);
  for (int l = 0; l < 3; ++l)
    CHECK(standard[l] == models::kl_standard(posts[l].mu, posts[l].logvar));

  const auto cond = models::kl_hierarchical(posts, priors, models::PriorMode::Conditional);
  CHECK(cond[0] == standard[0]);  // deepest level always uses the unit prior
  CHECK(cond[1] == models::kl_gaussian(posts[1], priors[0]));
  CHECK(cond[2] == models::kl_gaussian(posts[2], priors[1]));

  CHECK_THROWS_AS(models::kl_hierarchical(posts, {}, models::PriorMode::Conditional), Error);
  CHECK_THROWS_AS(models::kl_hierarchical({}, {}, models::PriorMode::Standard), Error);
}

TEST_CASE("forward pass shapes per variant") {
  const auto spec = desk_spec();
  models::Model model(spec, 3);
  const Tensor4 batch = random_batch(spec, 2, 100);
  Rng rng(1);
  auto res = model.run(batch, hvts::grad::Phase::Eval, &rng, models::DecodeMode::WithZ3, false);

  CHECK(res.reconstruction.shape().count() == batch.shape().count());
  CHECK(res.reconstruction.shape().h == 4);
  CHECK(res.reconstruction.shape().w == 64);
  REQUIRE(res.posteriors.size() == 3);
  // Deepest first: z1 after both pools, z2 after the spatial stage, z3 on
  // the temporal features.
  CHECK(res.posteriors[0].mu.shape() == Shape4{2, 16, 1, 8});
  CHECK(res.posteriors[1].mu.shape() == Shape4{2, 16, 1, 64});
  CHECK(res.posteriors[2].mu.shape() == Shape4{2, 8, 4, 64});
  CHECK(res.kl_per_level.size() == 3);

  auto v3spec = models::ModelSpec::v3(4, 64);
  v3spec.temporal_kernel = 16;
  v3spec.separable_kernel = 8;  // pools 4 * 8 divide 64
  v3spec.pool_separable = 4;
  models::Model v3(v3spec, 3);
  auto v3res = v3.run(random_batch(v3spec, 2, 101), hvts::grad::Phase::Eval, nullptr,
                      models::DecodeMode::FromZ1, false);
  CHECK(v3res.posteriors.size() == 1);
  CHECK(v3res.posteriors[0].mu.shape() == Shape4{2, 16, 1, 4});
  CHECK(v3res.kl_per_level.size() == 1);

  // Guard rails.
  CHECK_THROWS_AS(v3.run(random_batch(v3spec, 1, 5), hvts::grad::Phase::Eval, nullptr,
                         models::DecodeMode::WithZ2, false),
                  Error);
  auto narrow = v3spec;
  narrow.channels = 3;
  CHECK_THROWS_AS(model.run(random_batch(narrow, 1, 5), hvts::grad::Phase::Eval, nullptr,
                            models::DecodeMode::FromZ1, false),
                  Error);  // batch channel count does not match the model
  CHECK_THROWS_AS(model.run(batch, hvts::grad::Phase::Train, nullptr,
                            models::DecodeMode::WithZ3, true),
                  Error);  // training needs an rng
}

TEST_CASE("decode modes gate the shallow latent injections") {
  const auto spec = desk_spec();
  models::Model model(spec, 29);
  const Tensor4 batch = random_batch(spec, 2, 200);

  const Tensor4 from_z1 = model.reconstruct(batch, models::DecodeMode::FromZ1);
  const Tensor4 with_z2 = model.reconstruct(batch, models::DecodeMode::WithZ2);
  const Tensor4 with_z3 = model.reconstruct(batch, models::DecodeMode::WithZ3);

  CHECK(from_z1.shape().count() == batch.shape().count());
  // Posterior means are generically non-zero, so each injection moves the
  // output.
  bool z2_differs = false, z3_differs = false;
  for (std::size_t i = 0; i < from_z1.size(); ++i) {
    if (from_z1[i] != with_z2[i]) z2_differs = true;
    if (with_z2[i] != with_z3[i]) z3_differs = true;
  }
  CHECK(z2_differs);
  CHECK(z3_differs);

  // Deterministic mean decode: repeated calls are bitwise identical.
  const Tensor4 again = model.reconstruct(batch, models::DecodeMode::WithZ3);
  bool same = true;
  for (std::size_t i = 0; i < again.size(); ++i)
    if (again[i] != with_z3[i]) same = false;
  CHECK(same);
}

TEST_CASE("single-latent variant ignores the prior mode entirely") {
  auto std_spec = models::ModelSpec::v3(4, 64);
  std_spec.temporal_kernel = 16;
  std_spec.separable_kernel = 8;
  std_spec.pool_separable = 4;
  auto cond_spec = std_spec;
  cond_spec.prior = models::PriorMode::Conditional;

  models::Model a(std_spec, 7);
  models::Model b(cond_spec, 7);
  REQUIRE(a.params().size() == b.params().size());
  const Tensor4 batch = random_batch(std_spec, 2, 300);
  const Tensor4 ra = a.reconstruct(batch, models::DecodeMode::FromZ1);
  const Tensor4 rb = b.reconstruct(batch, models::DecodeMode::FromZ1);
  bool same = true;
  for (std::size_t i = 0; i < ra.size(); ++i)
    if (ra[i] != rb[i]) same = false;
  CHECK(same);
}

TEST_CASE("losses decompose as documented") {
  auto spec = desk_spec();
  spec.kl_beta = 0.7;
  spec.dtw_gamma = 0.5;
  models::Model model(spec, 11);
  const int B = 3;
  const Tensor4 batch = random_batch(spec, B, 400);
  auto res = model.run(batch, hvts::grad::Phase::Eval, nullptr, models::DecodeMode::WithZ3, false);

  // Reconstruction loss: batch mean of channel-summed smooth alignment
  // scores between reconstruction and input.
  double manual = 0.0;
  for (int b = 0; b < B; ++b) {
    std::vector<std::vector<double>> xs(spec.channels, std::vector<double>(spec.samples));
    std::vector<std::vector<double>> ys(spec.channels, std::vector<double>(spec.samples));
    for (int c = 0; c < spec.channels; ++c)
      for (int t = 0; t < spec.samples; ++t) {
        xs[c][t] = res.reconstruction.at(b, 0, c, t);
        ys[c][t] = batch.at(b, 0, c, t);
      }
    manual += hvts::dtw::multichannel_loss(xs, ys, spec.dtw_gamma);
  }
  manual /= B;
  CHECK(res.recon_loss == doctest::Approx(manual).epsilon(1e-12));

  // Per-level KL values are batch means of the closed forms.
  for (std::size_t l = 0; l < res.posteriors.size(); ++l) {
    const double direct =
        models::kl_standard(res.posteriors[l].mu, res.posteriors[l].logvar) / B;
    CHECK(res.kl_per_level[l] == doctest::Approx(direct).epsilon(1e-12));
  }

  double kl_sum = 0.0;
  for (double k : res.kl_per_level) kl_sum += k;
  CHECK(res.total_loss == doctest::Approx(res.recon_loss + 0.7 * kl_sum).epsilon(1e-12));
}

TEST_CASE("checkpoints round-trip bitwise, including running statistics") {
  const auto spec = desk_spec();
  models::Model model(spec, 13);

  // Touch both parameters and running stats before saving.
  Rng rng(500);
  const Tensor4 batch = random_batch(spec, 4, 500);
  auto res = model.run(batch, hvts::grad::Phase::Train, &rng, models::DecodeMode::WithZ3, true);
  for (auto& p : model.params())
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] -= 0.01 * p.grad[i];

  const std::string path = tmp_file("model.hvts");
  models::save_checkpoint(path, model);
  auto loaded = models::load_checkpoint(path);

  CHECK(loaded.spec().to_json() == model.spec().to_json());
  REQUIRE(loaded.params().size() == model.params().size());
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    CHECK(loaded.params()[i].name == model.params()[i].name);
    CHECK(loaded.params()[i].value == model.params()[i].value);
  }
  auto bn_a = model.bn_states();
  auto bn_b = loaded.bn_states();
  REQUIRE(bn_a.size() == bn_b.size());
  for (std::size_t i = 0; i < bn_a.size(); ++i) {
    CHECK(bn_b[i].first == bn_a[i].first);
    CHECK(bn_b[i].second->running_mean == bn_a[i].second->running_mean);
    CHECK(bn_b[i].second->running_var == bn_a[i].second->running_var);
  }

  // Same state -> same bytes on re-serialisation.
  const std::string path2 = tmp_file("model_again.hvts");
  models::save_checkpoint(path2, loaded);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  const std::string bytes1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string bytes2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(bytes1 == bytes2);

  // Reconstructions from the restored model are bitwise identical.
  const Tensor4 ra = model.reconstruct(batch, models::DecodeMode::WithZ3);
  const Tensor4 rb = loaded.reconstruct(batch, models::DecodeMode::WithZ3);
  bool same = true;
  for (std::size_t i = 0; i < ra.size(); ++i)
    if (ra[i] != rb[i]) same = false;
  CHECK(same);
}

TEST_CASE("checkpoint loader refuses damaged files") {
  const auto spec = desk_spec();
  models::Model model(spec, 19);
  const std::string path = tmp_file("damage_me.hvts");
  models::save_checkpoint(path, model);
  std::ifstream in(path, std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();

  auto expect_input = [&](std::string contents, const std::string& needle) {
    const std::string p = tmp_file("damaged.hvts");
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.close();
    try {
      models::load_checkpoint(p);
      CHECK(false);
    } catch (const Error& e) {
      CHECK(e.category() == ErrorCategory::Input);
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };

  std::string bad_magic = bytes;
  bad_magic[0] = 'Z';
  expect_input(bad_magic, "bad magic");
  expect_input(bytes.substr(0, bytes.size() - 9), "truncated");
  expect_input(bytes + "x", "trailing bytes");

  std::string bad_name = bytes;
  const auto pos = bad_name.find("encoder.temporal.conv.weight");
  REQUIRE(pos != std::string::npos);
  bad_name[pos] = 'x';
  expect_input(bad_name, "unexpected blob");
}
