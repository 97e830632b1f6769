// Prints one PASS/FAIL line per acceptance criterion; exit status is the
// number of failures.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "latseg/dataset.hpp"
#include "latseg/fit.hpp"
#include "latseg/maskgen.hpp"
#include "latseg/metrics.hpp"
#include "latseg/nn/train.hpp"
#include "latseg/ranking.hpp"
#include "latseg/synthetic.hpp"
#include "reference_metrics.hpp"
#include "support.hpp"

using namespace latseg;
namespace fs = std::filesystem;
using testing_support::TempDir;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double iou_up_to_swap(const Mask& a, const Mask& gt) {
  return std::max(reference::iou(SoftMask::from_mask(a), gt), reference::iou(SoftMask::from_mask(a.complement()), gt));
}

int cli(const std::string& args) {
  const std::string cmd = std::string(LATSEG_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// relative path -> contents for every regular file under root
std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return out;
}

Outcome operator_recovery() {
  const SuiteSpec spec;  // 32x32, delta 0.3, sigma 0.01
  std::size_t good = 0, total = 0;
  double worst_iou = 1.0, worst_loss = 0.0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto src = synthetic_affine_source(spec, seed);
    FitConfig cfg;  // 200 steps, lr 0.005, batch 4, 64 training pairs
    cfg.seed = seed;
    const FitResult r = fit_operators(src, cfg);
    worst_loss = std::max(worst_loss, r.final_loss);
    for (std::size_t i = 1000; i < 1032; ++i) {
      const PairSample s = src.at(i);
      const double v = iou_up_to_swap(mask_from_assignment(s, r.pair), *s.gt_mask);
      worst_iou = std::min(worst_iou, v);
      good += v >= 0.99;
      ++total;
    }
  }
  return {good == total && worst_loss < 5 * spec.noise_sigma,
          fmt("held-out IoU min %.4f (%zu/%zu >= 0.99), final_loss max %.4f < %.3f", worst_iou, good, total,
              worst_loss, 5 * spec.noise_sigma)};
}

Outcome direction_selection() {
  SuiteSpec spec;
  spec.candidates = {CandidateKind::Segmenting,   CandidateKind::GlobalAffine, CandidateKind::GlobalAffine,
                     CandidateKind::GlobalAffine, CandidateKind::Identity,     CandidateKind::Identity,
                     CandidateKind::Warp,         CandidateKind::Warp};
  const std::string target = direction_id(spec.segmenting_index());
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto suite = synthetic_direction_suite(spec, 1000 + seed);
    FitConfig cfg;
    cfg.seed = seed;
    std::vector<DirectionReport> reports;
    for (const auto& c : suite) reports.push_back(DirectionReport::from_fit(c.direction.id, fit_operators(*c.source, cfg)));
    hits += rank_directions(reports).selected == target;
  }
  return {hits >= 95, fmt("segmenting candidate selected in %d/100 trials", hits)};
}

Outcome metric_oracle() {
  auto rng = make_rng(2024, {});
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    SoftMask p(8, 8);
    for (std::size_t i = 0; i < p.size(); ++i) {
      // a share of values sits exactly on the threshold grid
      p[i] = rng() % 3 == 0 ? static_cast<double>(rng() % 256) / 255.0 : uniform(rng, 0, 1);
    }
    Mask g = t % 50 == 0 ? Mask(8, 8) : testing_support::random_mask(rng, 8, 8, uniform(rng, 0.05, 0.95));
    worst = std::max(worst, std::abs(max_f_beta(p, g).value - reference::max_f(p, g)));
    worst = std::max(worst, std::abs(iou(p, g) - reference::iou(p, g)));
    worst = std::max(worst, std::abs(accuracy(p, g) - reference::accuracy(p, g)));
  }
  return {worst <= 1e-12, fmt("1000 pairs, max abs difference %.3g", worst)};
}

Outcome filter_correctness() {
  std::vector<std::string> failed;
  auto check = [&](bool ok, const std::string& what) {
    if (!ok) failed.push_back(what);
  };
  Mask half(8, 8), over(8, 8);
  for (std::size_t i = 0; i < 32; ++i) half[i] = over[i] = 1;
  over[32] = 1;
  check(size_filter(half, 0.5), "50% kept");
  check(!size_filter(over, 0.5), "50%+1 rejected");

  Mask ten_two(6, 6), ten_one(6, 6);
  for (std::size_t y = 0; y < 2; ++y) {
    for (std::size_t x = 0; x < 5; ++x) ten_two(y, x) = ten_one(y, x) = 1;
  }
  ten_two(5, 4) = ten_two(5, 5) = 1;
  ten_one(5, 5) = 1;
  check(cc_filter(ten_two, 0.2) == ten_two, "cc (10,2) kept");
  const Mask pruned = cc_filter(ten_one, 0.2);
  check(pruned.foreground_count() == 10 && pruned(5, 5) == 0, "cc (10,1) pruned");

  std::vector<double> bimodal(16 * 16 * 3);
  for (std::size_t i = 0; i < 256; ++i) {
    for (int c = 0; c < 3; ++c) bimodal[3 * i + c] = i % 2 ? 0.95 : 0.05;
  }
  check(histogram_filter(Image(16, 16, bimodal)), "bimodal kept");
  check(!histogram_filter(Image(16, 16, Color{0.5, 0.5, 0.5})), "mid-gray rejected");

  auto rng = make_rng(77, {});
  int unstable = 0;
  for (int t = 0; t < 1000; ++t) {
    const Mask m = testing_support::random_mask(rng, 1 + rng() % 16, 1 + rng() % 16, uniform(rng, 0.1, 0.7));
    const Mask once = cc_filter(m, 0.2);
    unstable += !(cc_filter(once, 0.2) == once);
  }
  check(unstable == 0, "cc idempotence");
  std::string d = fmt("6 boundary cases, cc idempotent on %d/1000 masks", 1000 - unstable);
  for (const auto& f : failed) d += "; failed: " + f;
  return {failed.empty(), d};
}

Outcome gradient_fidelity() {
  nn::ModelConfig mc;
  mc.side = 8;
  mc.widths = {4, 6, 8};
  nn::UNet<double> m(mc);
  m.init_he_uniform(5);
  auto rng = make_rng(5, {});
  nn::Tensor<double> in(3, 8, 8);
  for (auto& v : in.v) v = uniform(rng, 0, 1);
  const Mask target = testing_support::random_mask(rng, 8, 8, 0.4);
  nn::GradCheckOptions o;
  o.samples = 300;
  const auto clean = nn::gradient_check(m, in, target, o);
  double weakest_fault = 1e300;
  for (std::size_t li = 0; li < m.layers().size(); ++li) {
    o.fault_layer = li;
    weakest_fault = std::min(weakest_fault, nn::gradient_check(m, in, target, o).max_rel_error);
  }
  return {clean.max_rel_error < 1e-4 && weakest_fault > 1e-3,
          fmt("clean max rel error %.2g over %zu params; x1.01 fault min error %.2g across %zu layers",
              clean.max_rel_error, clean.checked, weakest_fault, m.layers().size())};
}

Outcome overfit() {
  SuiteSpec spec;
  const auto src = synthetic_affine_source(spec, 21);
  std::vector<nn::TrainSample> data;
  for (std::size_t i = 0; i < 8; ++i) {
    const auto s = src.at(i);
    data.push_back({s.id, nn::image_tensor<float>(s.image), *s.gt_mask});
  }
  nn::ModelConfig mc;
  mc.side = spec.image_side;
  mc.seed = 21;
  nn::TrainConfig tc;
  tc.steps = 500;
  tc.batch = 8;
  tc.learning_rate = 0.005;
  tc.decay_step = 400;
  tc.val_fraction = 0.0;
  tc.seed = 21;
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = nn::train(data, mc, tc);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto ev = nn::evaluate_samples(r.model, data, 0, data.size());
  return {ev.iou >= 0.95 && secs < 120, fmt("train IoU %.4f after 500 steps in %.1f s", ev.iou, secs)};
}

Outcome end_to_end() {
  TempDir t("acc7");
  const std::string c = " --seed 7 --workers 1";
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = cli("synth --count 256" + c + " --out " + q(t / "pairs")) == 0 &&
            cli("fit --data " + q(t / "pairs") + c + " --out " + q(t / "fit")) == 0 &&
            cli("masks --data " + q(t / "pairs") + " --mode assignment --filters all --fit " +
                q(t / "fit" / "fit.json") + c + " --out " + q(t / "masked")) == 0 &&
            cli("train --data " + q(t / "masked") + " --steps 800 --batch 8 --lr 0.005" + c + " --out " +
                q(t / "model")) == 0 &&
            cli("synth --count 64 --start 100000" + c + " --out " + q(t / "test")) == 0 &&
            cli("eval --data " + q(t / "test") + " --model " + q(t / "model" / "model.bin") + c + " --out " +
                q(t / "eval")) == 0;
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!ok) return {false, "a pipeline stage exited non-zero"};
  const auto m = read_json_file(t / "eval" / "metrics.json");
  const double i = m["iou"].get<double>(), f = m["max_f_beta"].get<double>();
  const std::size_t kept = PairDataset(t / "masked").size();
  return {i >= 0.9 && f >= 0.9 && secs < 600,
          fmt("held-out IoU %.4f, max F-beta %.4f (%zu/256 masks kept) in %.1f s", i, f, kept, secs)};
}

Outcome joint_vs_per_sample() {
  const auto src = synthetic_affine_source(SuiteSpec{}, 8);
  FitConfig cfg;
  cfg.seed = 8;
  const FitResult joint = fit_operators(src, cfg);
  std::vector<Mask> a, b;
  for (std::size_t i = 0; i < 128; ++i) {
    const PairSample s = src.at(i);
    a.push_back(mask_from_assignment(s, joint.pair));
    b.push_back(mask_from_assignment(s, fit_per_sample(s, cfg).pair));
  }
  const Agreement ag = masks_agreement(a, b);
  return {ag.iou >= 0.95 && ag.accuracy >= 0.98,
          fmt("128 samples: IoU %.4f, accuracy %.4f", ag.iou, ag.accuracy)};
}

Outcome determinism() {
  TempDir t("acc9");
  const fs::path w = t.path();
  const std::string c = " --seed 5 --workers 1";
  // stages share inputs, so each runs against outputs of the ones above it
  const std::vector<std::pair<std::string, std::string>> stages{
      {"pairs", "synth --count 40 --side 16" + c},
      {"suite", "synth --kind suite --count 16 --side 12" + c},
      {"fit", "fit --data " + q(w / "pairs") + " --per-sample --per-sample-count 4" + c},
      {"rank", "rank --suite " + q(w / "suite") + " --steps 50" + c},
      {"masks", "masks --data " + q(w / "pairs") + " --fit " + q(w / "fit" / "fit.json") + c},
      {"lat", "noise-latents --latents " + q(w / "lat-in") + " --alpha 0.2 --count 9" + c},
      {"emit", "emit --oracle --side 16 --target 12 --fit " + q(w / "fit" / "fit.json") + c},
      {"train", "train --data " + q(w / "masks") + " --side 16 --steps 120 --batch 4" + c},
      {"eval", "eval --data " + q(w / "pairs") + " --model " + q(w / "train" / "model.bin") + " --save-pred" + c},
      {"sweep", "sweep --data " + q(w / "masks") + " --grid " + q(w / "grid.json") +
                    " --side 16 --steps 40 --batch 4" + c},
  };
  save_latents(LatentMatrix(3, kLatentDim, std::vector<double>(3 * kLatentDim, 0.1)), w / "lat-in");
  write_text_file(w / "grid.json", R"({"learning_rate": [0.001, 0.01], "batch": [2, 4]})");
  std::vector<std::string> differing;
  for (const auto& [dir, args] : stages) {
    const fs::path out = w / dir;
    if (cli(args + " --out " + q(out)) != 0) {
      differing.push_back(dir + " (exit)");
      continue;
    }
    const auto first = tree(out);
    fs::rename(out, w / (dir + ".first"));
    if (cli(args + " --out " + q(out)) != 0 || tree(out) != first) differing.push_back(dir);
  }
  std::string d = fmt("%zu subcommand runs compared byte for byte", stages.size());
  for (const auto& s : differing) d += "; differs: " + s;
  return {differing.empty(), d};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"operator recovery", operator_recovery},
      {"direction selection", direction_selection},
      {"metric oracle equivalence", metric_oracle},
      {"filter correctness", filter_correctness},
      {"gradient fidelity", gradient_fidelity},
      {"overfit sanity", overfit},
      {"end-to-end", end_to_end},
      {"joint vs per-sample agreement", joint_vs_per_sample},
      {"determinism", determinism},
  };
  int failures = 0;
  std::set<std::size_t> only;  // optional criterion numbers on the command line
  for (int i = 1; i < argc; ++i) only.insert(std::stoul(argv[i]));
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    if (!only.empty() && !only.count(k + 1)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << k + 1 << ". " << criteria[k].first << ": " << o.detail
              << fmt("  [%.1f s]", secs) << std::endl;
  }
  return failures;
}
