// End-to-end drive of the hvts binary: every subcommand, reproducibility of
// the artifacts it writes, agreement with the library, and exit codes.
// argv[1] is the path to the binary under test.

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hvts/anomaly.hpp"
#include "hvts/checkpoint.hpp"
#include "hvts/data.hpp"
#include "hvts/metrics.hpp"
#include "hvts/model.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
namespace anomaly = hvts::anomaly;
namespace data = hvts::data;
namespace metrics = hvts::metrics;
namespace models = hvts::models;

namespace {

int failures = 0;
std::string bin;
const fs::path tmp = "cli_tmp";

void report(bool ok, const std::string& name) {
  std::printf("[%s] %s\n", ok ? "PASS" : "FAIL", name.c_str());
  if (!ok) ++failures;
}

// Runs one CLI invocation, captures combined output, returns the exit code.
int run_cli(const std::string& args) {
  const std::string cmd = "\"" + bin + "\" " + args + " > " + (tmp / "last.log").string() +
                          " 2>&1";
  const int status = std::system(cmd.c_str());
  if (status == -1 || !WIFEXITED(status)) return -1;
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

bool same_bytes(const fs::path& a, const fs::path& b) {
  const std::string sa = slurp(a), sb = slurp(b);
  return !sa.empty() && sa == sb;
}

std::string p(const fs::path& rel) { return (tmp / rel).string(); }

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: test_cli <path-to-hvts-binary>\n");
    return 2;
  }
  bin = argv[1];
  fs::remove_all(tmp);
  fs::create_directories(tmp);

  // ---- synth: determinism and manifests --------------------------------
  const std::string synth_args =
      "synth --segments 8 --channels 4 --samples 100 --labels 1 --amplitude 1 --seed 3 --out ";
  report(run_cli(synth_args + p("a/data.hvsg")) == 0, "synth exits cleanly");
  report(run_cli(synth_args + p("b/data.hvsg")) == 0, "synth exits cleanly again");
  report(same_bytes(p("a/data.hvsg"), p("b/data.hvsg")), "same seed, identical container bytes");
  report(same_bytes(p("a/data.hvsg.manifest.json"), p("b/data.hvsg.manifest.json")),
         "same seed, identical manifests across directories");
  const std::string synth_seed4 =
      "synth --segments 8 --channels 4 --samples 100 --labels 1 --amplitude 1 --seed 4 --out ";
  report(run_cli(synth_seed4 + p("c/data.hvsg")) == 0, "synth with another seed");
  report(!same_bytes(p("a/data.hvsg"), p("c/data.hvsg")), "different seed, different bytes");

  {
    const int rc = run_cli(
        "synth --segments 8 --channels 2 --samples 64 --labels 1 --seed 5 "
        "--saturate-frac 0.25 --out " +
        p("sat.hvsg"));
    const json m = json::parse(slurp(p("sat.hvsg.manifest.json")));
    report(rc == 0 && m["injected"]["saturated"].size() == 2,
           "saturation injection is recorded in the manifest");
  }

  // ---- train: smoke run, artifacts, reproducibility --------------------
  const std::string train_args =
      "train --data " + p("a/data.hvsg") +
      " --epochs 2 --runs 1 --batch 4 --seed 5 --dropout 0.1 --out ";
  report(run_cli(train_args + p("runA")) == 0, "train exits cleanly");
  for (const char* rel : {"manifest.json", "timings.json", "checkpoints/run_000_final.hvts",
                          "metrics/history_run_000.tsv", "metrics/aggregate_train_dtw.tsv",
                          "plots/train_dtw.svg"}) {
    report(fs::exists(tmp / "runA" / rel), std::string("train wrote ") + rel);
  }
  {
    const json m = json::parse(slurp(p("runA/manifest.json")));
    report(m["command"] == "train" && m["runs"][0]["epochs_completed"] == 2,
           "train manifest records the completed epochs");
    report(m["split"]["train"].size() == 4 && m["split"]["val"].size() == 0 &&
               m["split"]["test"].size() == 4,
           "train manifest records the stratified split");
    report(m["runs"][0]["diverged"] == false, "smoke run does not diverge");
  }
  report(run_cli(train_args + p("runB")) == 0, "identical train into another directory");
  report(same_bytes(p("runA/manifest.json"), p("runB/manifest.json")),
         "train manifests are byte-identical across directories");
  report(same_bytes(p("runA/checkpoints/run_000_final.hvts"),
                    p("runB/checkpoints/run_000_final.hvts")),
         "checkpoints are byte-identical across directories");
  report(same_bytes(p("a/data.hvsg"), p("b/data.hvsg")), "training does not mutate its input");

  // ---- score: tables match the library ----------------------------------
  const std::string ckpt = p("runA/checkpoints/run_000_final.hvts");
  report(run_cli("score --data " + p("a/data.hvsg") + " --model " + ckpt + " --model " +
                 p("runB/checkpoints/run_000_final.hvts") + " --out " + p("scoreA")) == 0,
         "score exits cleanly");
  for (const char* rel : {"manifest.json", "metrics/error_000.tsv", "metrics/error_001.tsv",
                          "metrics/error_avg.tsv", "metrics/summary.json",
                          "plots/error_avg.svg"}) {
    report(fs::exists(tmp / "scoreA" / rel), std::string("score wrote ") + rel);
  }
  {
    const metrics::ErrorMatrix table =
        metrics::matrix_from_table(slurp(p("scoreA/metrics/error_000.tsv")));
    report(table.rows == 8 && table.cols == 4, "error matrix covers every repetition/channel");

    models::Model model = models::load_checkpoint(ckpt);
    const auto segments = data::read_segments(p("a/data.hvsg"));
    const metrics::ErrorMatrix direct = metrics::error_matrix(model, segments);
    report(table.values == direct.values, "CLI error matrix equals the library result");

    // Two identical checkpoints: the average equals each member.
    const metrics::ErrorMatrix avg =
        metrics::matrix_from_table(slurp(p("scoreA/metrics/error_avg.tsv")));
    report(avg.values == table.values, "average of identical runs reproduces each run");

    const json summary = json::parse(slurp(p("scoreA/metrics/summary.json")));
    const metrics::SubjectSummary s = metrics::subject_summary(direct);
    report(summary["average"]["mean"].get<double>() == s.mean &&
               summary["runs"].size() == 2,
           "summary json carries the subject-level statistics");
  }

  // ---- detect: CLI equals the library ------------------------------------
  report(run_cli("detect --matrix " + p("scoreA/metrics/error_000.tsv") + " --k 3 --out " +
                 p("detA")) == 0,
         "detect exits cleanly");
  {
    const json out = json::parse(slurp(p("detA/outliers.json")));
    const metrics::ErrorMatrix table =
        metrics::matrix_from_table(slurp(p("scoreA/metrics/error_000.tsv")));
    const anomaly::OutlierReport direct = anomaly::detect_outliers(table, 3);
    report(out["flagged"].get<std::vector<int>>() == direct.flagged &&
               out["threshold"].get<double>() == direct.threshold &&
               out["k_distance"].get<std::vector<double>>() == direct.k_distance,
           "CLI outlier report equals the library result");
    report(fs::exists(p("detA/outliers.tsv")), "detect wrote the per-repetition table");

    const int rc = run_cli("detect --matrix " + p("scoreA/metrics/error_000.tsv") +
                           " --auto-k --out " + p("detB"));
    const json m = json::parse(slurp(p("detB/manifest.json")));
    report(rc == 0 && m["config"]["k"] == 3 && m["config"]["auto_k"] == true,
           "auto-k resolves to the dataset-scaled neighbour count");
  }

  // ---- spectra ------------------------------------------------------------
  report(run_cli("spectra --data " + p("a/data.hvsg") + " --window 50 --overlap 25 "
                 "--channel 1 --out " + p("specA")) == 0,
         "spectra exits cleanly");
  {
    const std::string psd = slurp(p("specA/psd.tsv"));
    const long lines = std::count(psd.begin(), psd.end(), '\n');
    report(lines == 26 + 2, "psd table has one line per bin plus headers");
    const json m = json::parse(slurp(p("specA/manifest.json")));
    report(m["short_series"] == false, "full-length windows fit the series");
  }

  // ---- reconstruct ---------------------------------------------------------
  report(run_cli("reconstruct --data " + p("a/data.hvsg") + " --model " + ckpt +
                 " --level z1 --out " + p("recon_z1.hvsg")) == 0,
         "reconstruct exits cleanly");
  report(run_cli("reconstruct --data " + p("a/data.hvsg") + " --model " + ckpt +
                 " --level full --out " + p("recon_full.hvsg")) == 0,
         "reconstruct at full depth");
  {
    const auto original = data::read_segments(p("a/data.hvsg"));
    const auto recon = data::read_segments(p("recon_z1.hvsg"));
    bool ok = recon.size() == original.size();
    for (std::size_t i = 0; ok && i < recon.size(); ++i) {
      ok = recon[i].channels == original[i].channels &&
           recon[i].samples == original[i].samples && recon[i].label == original[i].label &&
           recon[i].repetition == original[i].repetition;
    }
    report(ok, "reconstructions preserve segment geometry and metadata");
    report(!same_bytes(p("recon_z1.hvsg"), p("recon_full.hvsg")),
           "deeper decode levels change the reconstruction");
    report(run_cli("reconstruct --data " + p("a/data.hvsg") + " --model " + ckpt +
                   " --level z1 --force --out " + p("recon_z1b.hvsg")) == 0 &&
               same_bytes(p("recon_z1.hvsg"), p("recon_z1b.hvsg")),
           "reconstruction is deterministic");
  }

  // ---- exit codes ------------------------------------------------------------
  report(run_cli("") == 2, "missing subcommand is a usage error");
  report(run_cli("synth --segments 4") == 2, "missing required flag is a usage error");
  report(run_cli("synth --out x.hvsg --frobnicate") == 2, "unknown flag is a usage error");
  report(run_cli("score --data " + p("a/data.hvsg") + " --model " + ckpt +
                 " --eps bogus --out " + p("badeps")) == 2,
         "out-of-set option value is a usage error");
  report(run_cli(train_args + p("runA")) == 2,
         "refusing to overwrite a finished run without --force");
  report(run_cli(train_args + p("runA") + " --force") == 0, "--force allows the overwrite");
  report(run_cli("train --data " + p("missing.hvsg") + " --out " + p("runX")) == 3,
         "missing input file is an input error");
  {
    std::ofstream bad(p("garbage.hvsg"), std::ios::binary);
    bad << "this is not a segment container";
    bad.close();
    report(run_cli("spectra --data " + p("garbage.hvsg") + " --out " + p("specBad")) == 3,
           "corrupt container is an input error");
  }
  report(run_cli("spectra --data " + p("a/data.hvsg") + " --channel 9 --out " + p("specC")) ==
             2,
         "out-of-range channel is a usage error");
  report(run_cli("detect --matrix " + p("scoreA/metrics/error_000.tsv") + " --k 20 --out " +
                 p("detC")) == 3,
         "k larger than the pool is an input error");
  report(run_cli("detect --matrix " + p("nothing.tsv") + " --out " + p("detD")) == 3,
         "missing matrix is an input error");
  {
    // The shallow-variant model only decodes from its single latent space.
    auto spec = models::ModelSpec::v3(2, 128);
    models::Model v3(spec, 8);
    models::save_checkpoint(p("v3.hvts"), v3);
    report(run_cli("synth --segments 2 --channels 2 --samples 128 --labels 1 --seed 6 --out " +
                   p("v3_data.hvsg")) == 0,
           "synth for the shallow variant");
    report(run_cli("reconstruct --data " + p("v3_data.hvsg") + " --model " + p("v3.hvts") +
                   " --level z3 --out " + p("v3_recon.hvsg")) == 4,
           "z3 decode on the single-latent variant is a shape error");
    report(run_cli("reconstruct --data " + p("v3_data.hvsg") + " --model " + p("v3.hvts") +
                   " --level z1 --out " + p("v3_recon.hvsg")) == 0,
           "z1 decode on the single-latent variant works");
  }

  std::printf("\n%s: %d failure(s)\n", failures == 0 ? "OK" : "FAILED", failures);
  return failures == 0 ? 0 : 1;
}
