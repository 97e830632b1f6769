#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "latseg/dataset.hpp"
#include "latseg/fit.hpp"
#include "latseg/maskgen.hpp"
#include "latseg/metrics.hpp"
#include "latseg/nn/train.hpp"
#include "latseg/pair_source.hpp"
#include "latseg/parallel.hpp"
#include "latseg/ranking.hpp"
#include "latseg/synthetic.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace latseg;

namespace {

struct Common {
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::string out;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  sub->add_option("--workers", c.workers, "Worker threads (1 = bitwise reproducible)")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  sub->add_option("--out", c.out, "Output directory")->required();
}

// Every flag of the subcommand with its effective value.
void write_run_config(const CLI::App* sub, const fs::path& out) {
  json opts = json::object();
  for (const CLI::Option* o : sub->get_options()) {
    const std::string name = o->get_single_name();
    if (name.empty() || name == "help") continue;
    const bool flag = o->get_expected_max() == 0;
    if (flag) {
      opts[name] = o->count() > 0;
    } else if (o->count() > 0) {
      const auto& r = o->results();
      if (o->get_expected_max() > 1) {
        opts[name] = r;
      } else {
        opts[name] = r.empty() ? "" : r.front();
      }
    } else {
      opts[name] = o->get_default_str();
    }
  }
  fs::create_directories(out);
  write_json_file(out / "run_config.json", json{{"subcommand", sub->get_name()}, {"options", std::move(opts)}});
}

void log_line(const std::string& s) { std::cerr << s << '\n'; }

// ---- shared option groups --------------------------------------------------

struct OracleOptions {
  std::size_t side = 32;
  double sigma = 0.01;
  double delta = 0.3;
};

void add_oracle_options(CLI::App* sub, OracleOptions& o) {
  sub->add_option("--side", o.side, "Oracle image side")->capture_default_str();
  sub->add_option("--sigma", o.sigma, "Oracle pixel noise sigma")->capture_default_str();
  sub->add_option("--delta", o.delta, "Oracle operator separation margin")->capture_default_str();
}

SuiteSpec oracle_spec(const OracleOptions& o) {
  SuiteSpec s;
  s.image_side = o.side;
  s.noise_sigma = o.sigma;
  s.margin_delta = o.delta;
  s.validate();
  return s;
}

void add_fit_options(CLI::App* sub, FitConfig& f) {
  sub->add_option("--steps", f.steps, "Adam steps per fit")->capture_default_str();
  sub->add_option("--lr", f.learning_rate, "Adam learning rate")->capture_default_str();
  sub->add_option("--batch", f.batch, "Samples per mini-batch")->capture_default_str();
  sub->add_option("--restarts", f.restarts, "Independent initializations (best held-out loss kept)")
      ->capture_default_str();
  sub->add_option("--init-sigma", f.init_noise_sigma, "Std of the noise added to the identity init")
      ->capture_default_str();
  sub->add_option("--train-pool", f.train_pool, "Samples feeding the mini-batches")->capture_default_str();
  sub->add_option("--eval-samples", f.eval_samples, "Held-out samples for loss and distance")->capture_default_str();
}

struct MaskOptions {
  std::string mode = "assignment";
  std::string fit;
  std::string foreground = "auto";
  std::string filters = "all";
  FilterConfig cfg;
  bool keep_size_for_mean = false;
};

void add_mask_options(CLI::App* sub, MaskOptions& m) {
  sub->add_option("--mode", m.mode, "Mask variant: assignment|norm|mean-threshold")->capture_default_str();
  sub->add_option("--fit", m.fit, "fit.json with the operator pair (assignment mode)");
  sub->add_option("--foreground", m.foreground, "Foreground operator: auto|first|second")->capture_default_str();
  sub->add_option("--filters", m.filters, "Filter stages: all, none, or a list of size,histogram,cc")
      ->capture_default_str();
  sub->add_option("--size-threshold", m.cfg.size_threshold, "Reject masks with a larger foreground ratio")
      ->capture_default_str();
  sub->add_option("--hist-bins", m.cfg.histogram_bins, "Gray histogram bins")->capture_default_str();
  sub->add_option("--smoothing", m.cfg.smoothing_window, "Histogram moving-average window")->capture_default_str();
  sub->add_option("--cc-ratio", m.cfg.cc_ratio, "Drop components smaller than this fraction of the largest")
      ->capture_default_str();
  sub->add_flag("--keep-size-filter", m.keep_size_for_mean, "Keep the size stage in mean-threshold mode");
}

MaskSettings mask_settings(const MaskOptions& m) {
  MaskSettings s;
  s.mode = mask_mode_from_string(m.mode);
  s.rule = foreground_rule_from_string(m.foreground);
  if (!m.fit.empty()) s.pair = FitResult::from_json(read_json_file(m.fit)).pair;
  if (s.mode == MaskMode::Assignment && !s.pair) throw DataError("assignment mode needs --fit");
  return s;
}

FilterConfig filter_config(const MaskOptions& m, MaskMode mode) {
  FilterConfig cfg = m.cfg;
  cfg.stages = FilterConfig::parse_stages(m.filters);
  cfg = effective_filters(cfg, mode, m.keep_size_for_mean);
  cfg.validate();
  return cfg;
}

struct ModelOptions {
  nn::ModelConfig cfg;
  bool no_skips = false;
};

void add_model_options(CLI::App* sub, ModelOptions& m) {
  sub->add_option("--side", m.cfg.side, "Network input side")->capture_default_str();
  sub->add_option("--widths", m.cfg.widths, "Channel widths per encoder stage plus bottleneck")
      ->delimiter(',')
      ->capture_default_str();
  sub->add_option("--depth", m.cfg.depth, "Downsampling stages")->capture_default_str();
  sub->add_flag("--no-skips", m.no_skips, "Disable encoder-decoder skip connections");
}

struct TrainOptions {
  nn::TrainConfig cfg;
  std::optional<std::size_t> decay_step;
};

void add_train_options(CLI::App* sub, TrainOptions& t) {
  sub->add_option("--steps", t.cfg.steps, "Optimizer steps")->capture_default_str();
  sub->add_option("--batch", t.cfg.batch, "Samples per step (drawn with replacement)")->capture_default_str();
  sub->add_option("--lr", t.cfg.learning_rate, "Adam learning rate")->capture_default_str();
  sub->add_option("--decay-factor", t.cfg.decay_factor, "Learning-rate multiplier after --decay-step")
      ->capture_default_str();
  sub->add_option("--decay-step", t.decay_step, "Step after which the rate is decayed [default: 2/3 of --steps]");
  sub->add_option("--val-fraction", t.cfg.val_fraction, "Tail fraction of the dataset held out")
      ->capture_default_str();
}

nn::TrainConfig train_config(const TrainOptions& t, std::uint64_t seed) {
  nn::TrainConfig c = t.cfg;
  c.seed = seed;
  c.decay_step = t.decay_step ? *t.decay_step : c.steps * 2 / 3;
  c.validate();
  return c;
}

nn::ModelConfig model_config(const ModelOptions& m, std::uint64_t seed) {
  nn::ModelConfig c = m.cfg;
  c.skips = !m.no_skips;
  c.seed = seed;
  c.validate();
  return c;
}

std::vector<PairSample> load_all(const PairDataset& ds, std::size_t workers) {
  std::vector<PairSample> out(ds.size());
  parallel_for(ds.size(), workers, [&](std::size_t i) { out[i] = ds.load(i); });
  return out;
}

// ---- subcommands -----------------------------------------------------------

int run_synth(const CLI::App* sub, const Common& c, const std::string& kind, const OracleOptions& oo,
              std::size_t count, std::size_t start, const std::string& candidates, double scale) {
  SuiteSpec spec = oracle_spec(oo);
  spec.count = count;
  const fs::path out(c.out);
  write_run_config(sub, out);
  if (kind == "pairs") {
    auto src = synthetic_affine_source(spec, c.seed);
    std::vector<PairSample> samples(count);
    parallel_for(count, c.workers, [&](std::size_t i) { samples[i] = src.at(start + i); });
    save_pair_dataset(samples, out,
                      {{"source", "oracle"}, {"seed", std::to_string(c.seed)}, {"start", std::to_string(start)}});
    const auto& truth = *src.ground_truth();
    write_json_file(out / "truth.json", json{{"a1", operator_to_json(truth.a1)}, {"a2", operator_to_json(truth.a2)}});
    log_line("synth: wrote " + std::to_string(count) + " oracle pairs to " + out.string());
    return 0;
  }
  if (kind != "suite") throw DataError("unknown synth kind: " + kind + " (expected pairs|suite)");
  if (!candidates.empty()) {
    spec.candidates.clear();
    std::stringstream ss(candidates);
    std::string item;
    while (std::getline(ss, item, ',')) spec.candidates.push_back(candidate_kind_from_string(item));
    spec.validate();
  }
  const auto suite = synthetic_direction_suite(spec, c.seed);
  json dirs = json::array();
  std::ostringstream vectors;
  vectors.precision(17);
  for (const auto& cand : suite) {
    const auto h = scale_direction(cand.direction, scale);
    std::vector<PairSample> samples(count);
    parallel_for(count, c.workers, [&](std::size_t i) { samples[i] = cand.source->at(start + i); });
    save_pair_dataset(samples, out / h.id, {{"direction", h.id}, {"kind", to_string(cand.source->kind())}});
    dirs.push_back(json{{"id", h.id}, {"kind", to_string(cand.source->kind())}, {"path", h.id}, {"scale", h.scale}});
    for (std::size_t k = 0; k < h.components.size(); ++k) vectors << (k ? " " : "") << h.components[k];
    vectors << '\n';
  }
  json sj = spec.to_json();
  sj["seed"] = c.seed;
  sj["start"] = start;
  sj["directions"] = std::move(dirs);
  write_json_file(out / "suite.json", sj);
  write_text_file(out / "directions.txt", vectors.str());
  log_line("synth: wrote suite of " + std::to_string(suite.size()) + " candidates to " + out.string());
  return 0;
}

int run_fit(const CLI::App* sub, const Common& c, const std::string& data, FitConfig cfg, bool per_sample,
            std::optional<std::size_t> per_sample_count, const std::string& foreground) {
  cfg.seed = c.seed;
  cfg.validate();
  const fs::path out(c.out);
  DatasetSource src(data);
  write_run_config(sub, out);
  const FitResult joint = fit_operators(src, cfg);
  write_json_file(out / "fit.json", joint.to_json());
  std::ostringstream msg;
  msg << "fit: loss " << joint.final_loss << " distance " << joint.distance;
  log_line(msg.str());
  if (!per_sample) return 0;

  const auto rule = foreground_rule_from_string(foreground);
  const std::size_t n = std::min(per_sample_count.value_or(src.dataset().size()), src.dataset().size());
  std::vector<FitResult> fits(n);
  std::vector<Mask> joint_masks(n), own_masks(n);
  std::vector<std::string> ids(n);
  parallel_for(n, c.workers, [&](std::size_t i) {
    const PairSample s = src.at(i);
    ids[i] = s.id;
    fits[i] = fit_per_sample(s, cfg);
    joint_masks[i] = mask_from_assignment(s, joint.pair, rule);
    own_masks[i] = mask_from_assignment(s, fits[i].pair, rule);
  });
  json rows = json::array();
  for (std::size_t i = 0; i < n; ++i) {
    rows.push_back(json{{"id", ids[i]},
                        {"a1", operator_to_json(fits[i].pair.a1)},
                        {"a2", operator_to_json(fits[i].pair.a2)},
                        {"loss", fits[i].final_loss},
                        {"distance", fits[i].distance}});
  }
  write_json_file(out / "per_sample.json", rows);
  const Agreement ag = masks_agreement(joint_masks, own_masks);
  write_json_file(out / "agreement.json", json{{"iou", ag.iou}, {"accuracy", ag.accuracy}, {"n", n}});
  std::ostringstream m2;
  m2 << "fit: joint vs per-sample agreement over " << n << " samples: iou " << ag.iou << " accuracy " << ag.accuracy;
  log_line(m2.str());
  return 0;
}

int run_rank(const CLI::App* sub, const Common& c, const std::string& suite_dir, FitConfig cfg, double quantile) {
  cfg.seed = c.seed;
  cfg.validate();
  const fs::path root(suite_dir);
  const json sj = read_json_file(root / "suite.json");
  std::vector<std::pair<std::string, fs::path>> cands;
  try {
    for (const auto& d : sj.at("directions")) {
      cands.emplace_back(d.at("id").get<std::string>(), root / d.at("path").get<std::string>());
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed suite.json: ") + e.what());
  }
  require(!cands.empty(), "suite lists no directions");
  const fs::path out(c.out);
  write_run_config(sub, out);
  std::vector<DirectionReport> reports(cands.size());
  parallel_for(cands.size(), c.workers, [&](std::size_t k) {
    DatasetSource src(cands[k].second);
    reports[k] = DirectionReport::from_fit(cands[k].first, fit_operators(src, cfg));
  });
  const RankResult rank = rank_directions(reports, quantile);
  json sel = selection_to_json(rank, reports);
  write_json_file(out / "selection.json", sel);
  std::ostringstream csv;
  csv.precision(17);
  csv << "id,loss,distance\n";
  for (const auto& r : reports) csv << r.direction_id << ',' << r.loss << ',' << r.distance << '\n';
  write_text_file(out / "reports.csv", csv.str());
  fs::create_directories(out / "fits");
  for (const auto& r : reports) write_json_file(out / "fits" / (r.direction_id + ".json"), r.fit.to_json());
  log_line("rank: selected " + rank.selected);
  return 0;
}

int run_masks(const CLI::App* sub, const Common& c, const std::string& data, const MaskOptions& mo) {
  const MaskSettings settings = mask_settings(mo);
  const FilterConfig filters = filter_config(mo, settings.mode);
  const PairDataset ds(data);
  const fs::path out(c.out);
  write_run_config(sub, out);
  std::vector<PairSample> samples = load_all(ds, c.workers);
  std::vector<FilterOutcome> outcomes(samples.size());
  parallel_for(samples.size(), c.workers, [&](std::size_t i) {
    outcomes[i] = run_filter_pipeline(samples[i], make_mask(samples[i], settings), filters);
  });
  std::vector<PairSample> kept;
  std::vector<Mask> masks;
  std::vector<FilterReport> reports;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    reports.push_back(outcomes[i].report);
    if (!outcomes[i].kept) continue;
    samples[i].gt_mask.reset();
    kept.push_back(std::move(samples[i]));
    masks.push_back(std::move(outcomes[i].mask));
  }
  if (kept.empty()) throw DataError("masks: every sample was rejected by the filters");
  save_pair_dataset(kept, out, {{"mask_mode", to_string(settings.mode)}}, masks);
  write_json_file(out / "filter_report.json", reports_to_json(reports));
  log_line("masks: kept " + std::to_string(kept.size()) + " of " + std::to_string(samples.size()));
  return 0;
}

int run_noise(const CLI::App* sub, const Common& c, const std::string& latents, double alpha,
              std::optional<std::size_t> count) {
  const LatentMatrix in = load_latents(latents);
  const fs::path out(c.out);
  write_run_config(sub, out);
  const LatentMatrix res = noisy_latents(in, alpha, count.value_or(in.n), c.seed);
  save_latents(res, out);
  log_line("noise-latents: wrote " + std::to_string(res.n) + " x " + std::to_string(res.d));
  return 0;
}

int run_emit(const CLI::App* sub, const Common& c, const std::string& source_dir, bool oracle,
             const OracleOptions& oo, const MaskOptions& mo, std::size_t target) {
  if (oracle == !source_dir.empty()) throw DataError("emit needs exactly one of --source or --oracle");
  const MaskSettings settings = mask_settings(mo);
  const FilterConfig filters = filter_config(mo, settings.mode);
  std::unique_ptr<PairSource> src;
  if (oracle) {
    src = std::make_unique<SyntheticPairSource>(synthetic_affine_source(oracle_spec(oo), c.seed));
  } else {
    src = std::make_unique<DatasetSource>(source_dir);
  }
  const fs::path out(c.out);
  write_run_config(sub, out);
  const EmitResult r = emit_dataset(*src, settings, filters, target, out, c.workers);
  log_line("emit: kept " + std::to_string(r.manifest.samples.size()) + " after " +
           std::to_string(r.reports.size()) + " attempts");
  return 0;
}

int run_train(const CLI::App* sub, const Common& c, const std::string& data, const ModelOptions& mo,
              const TrainOptions& to) {
  const nn::ModelConfig mcfg = model_config(mo, c.seed);
  const nn::TrainConfig tcfg = train_config(to, c.seed);
  const auto samples = nn::load_training_data(data, mcfg.side, c.workers);
  const fs::path out(c.out);
  write_run_config(sub, out);
  auto progress = [](const nn::LogRow& r) {
    std::ostringstream m;
    m << "train: step " << r.step << " lr " << r.lr << " loss " << r.loss;
    if (r.val_iou) m << " val_iou " << *r.val_iou;
    log_line(m.str());
  };
  const nn::TrainResult res = nn::train(samples, mcfg, tcfg, c.workers, progress);
  nn::save_model(res.model, out / "model.bin");
  write_text_file(out / "train_log.csv", nn::log_csv(res.log));
  json summary{{"model", mcfg.to_json()},
               {"train", tcfg.to_json()},
               {"train_samples", res.split.train},
               {"val_samples", res.split.val},
               {"parameter_count", res.model.parameter_count()},
               {"final_loss", res.log.back().loss}};
  if (res.validation) {
    summary["validation"] = json{{"iou", res.validation->iou},
                                 {"accuracy", res.validation->accuracy},
                                 {"max_f_beta", res.validation->max_f_beta}};
  }
  write_json_file(out / "train_summary.json", summary);
  return 0;
}

int run_eval(const CLI::App* sub, const Common& c, const std::string& data, const std::string& model_path,
             const std::string& pred_dir, const std::string& mode, double beta_sq, bool save_pred) {
  if (model_path.empty() == pred_dir.empty()) throw DataError("eval needs exactly one of --model or --pred");
  const Aggregation agg = mode == "dataset" ? Aggregation::DatasetLevel
                          : mode == "per-image"
                              ? Aggregation::PerImage
                              : throw DataError("unknown eval mode: " + mode + " (expected dataset|per-image)");
  const PairDataset ds(data);
  require(ds.has_masks(), "eval: dataset " + data + " has samples without ground-truth masks");
  std::vector<PairSample> samples = load_all(ds, c.workers);
  std::map<std::string, Mask> gts;
  for (auto& s : samples) gts.emplace(s.id, *s.gt_mask);
  std::map<std::string, SoftMask> preds;
  if (!model_path.empty()) {
    const auto model = nn::load_model(model_path);
    std::vector<SoftMask> p(samples.size());
    parallel_for(samples.size(), c.workers, [&](std::size_t i) { p[i] = nn::predict(model, samples[i].image); });
    for (std::size_t i = 0; i < samples.size(); ++i) preds.emplace(samples[i].id, std::move(p[i]));
  } else {
    require(fs::is_directory(pred_dir), "prediction directory not found: " + pred_dir);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(pred_dir)) {
      if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) preds.emplace(f.stem().string(), load_soft_mask(f));
  }
  const fs::path out(c.out);
  const MetricReport rep = evaluate_dataset(preds, gts, agg, beta_sq);
  write_run_config(sub, out);
  write_json_file(out / "metrics.json", json{{"max_f_beta", rep.max_f_beta},
                                             {"iou", rep.iou},
                                             {"accuracy", rep.accuracy},
                                             {"n_images", rep.n_images},
                                             {"mode", to_string(rep.mode)},
                                             {"beta_sq", beta_sq}});
  std::ostringstream csv;
  csv.precision(17);
  csv << "threshold,precision,recall,f\n";
  for (const auto& p : rep.curve) csv << p.threshold << ',' << p.precision << ',' << p.recall << ',' << p.f << '\n';
  write_text_file(out / "curve.csv", csv.str());
  if (save_pred) {
    fs::create_directories(out / "pred");
    for (const auto& [id, m] : preds) save_soft_mask(out / "pred" / (id + ".png"), m);
  }
  std::ostringstream m;
  m << "eval: n " << rep.n_images << " max_f_beta " << rep.max_f_beta << " iou " << rep.iou << " accuracy "
    << rep.accuracy;
  log_line(m.str());
  return 0;
}

int run_sweep(const CLI::App* sub, const Common& c, const std::string& data, const std::string& grid_path,
              const ModelOptions& mo, const TrainOptions& to) {
  const nn::ModelConfig mcfg = model_config(mo, c.seed);
  nn::TrainConfig base = to.cfg;
  base.seed = c.seed;
  base.decay_step = to.decay_step ? *to.decay_step : base.steps * 2 / 3;
  const json grid = read_json_file(grid_path);
  auto points = nn::expand_grid(base, grid);
  // a grid that varies steps but not decay_step keeps the 2/3 default per point
  if (!to.decay_step && !grid.contains("decay_step")) {
    for (auto& p : points) {
      if (p.error.empty()) {
        p.config.decay_step = p.config.steps * 2 / 3;
        try {
          p.config.validate();
        } catch (const DataError& e) {
          p.error = e.what();
        }
      }
    }
  }
  const auto samples = nn::load_training_data(data, mcfg.side, c.workers);
  const fs::path out(c.out);
  write_run_config(sub, out);
  const auto ranked = nn::rank_sweep(nn::sweep(samples, mcfg, points, c.workers));
  write_text_file(out / "sweep.csv", nn::sweep_csv(ranked));
  json rows = json::array();
  for (const auto& p : ranked) {
    json r{{"index", p.index}, {"overrides", p.overrides}, {"config", p.config.to_json()}};
    if (p.result) {
      r["final_loss"] = p.final_loss;
      r["iou"] = p.result->iou;
      r["accuracy"] = p.result->accuracy;
      r["max_f_beta"] = p.result->max_f_beta;
    }
    if (!p.error.empty()) r["error"] = p.error;
    rows.push_back(std::move(r));
  }
  json res{{"rows", rows}};
  if (!ranked.empty() && ranked.front().result) res["best"] = ranked.front().index;
  write_json_file(out / "sweep.json", res);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised object segmentation from latent-shift image pairs"};
  app.name("latseg");
  app.require_subcommand(1);
  app.fallthrough(false);

  Common common;

  auto* synth = app.add_subcommand("synth", "Write oracle pair datasets or a direction suite");
  std::string synth_kind = "pairs", synth_candidates;
  std::size_t synth_count = 64, synth_start = 0;
  double synth_scale = kDefaultDirectionScale;
  OracleOptions synth_oracle;
  add_common(synth, common);
  synth->add_option("--kind", synth_kind, "pairs (segmenting stream) or suite (all candidates)")->capture_default_str();
  synth->add_option("--count", synth_count, "Samples per dataset")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--start", synth_start, "Index of the first sample in the stream")->capture_default_str();
  synth->add_option("--candidates", synth_candidates,
                    "Suite candidate kinds, comma separated (segmenting|global-affine|identity|warp)");
  synth->add_option("--scale", synth_scale, "Multiplier applied to suite direction vectors")->capture_default_str();
  add_oracle_options(synth, synth_oracle);

  auto* fit = app.add_subcommand("fit", "Fit the two pixel operators of a pair dataset");
  std::string fit_data, fit_fg = "auto";
  FitConfig fit_cfg;
  bool fit_per = false;
  std::optional<std::size_t> fit_per_count;
  add_common(fit, common);
  fit->add_option("--data", fit_data, "Pair dataset directory")->required();
  add_fit_options(fit, fit_cfg);
  fit->add_flag("--per-sample", fit_per, "Also fit each sample alone and report mask agreement");
  fit->add_option("--per-sample-count", fit_per_count, "Limit per-sample fits to the first N samples");
  fit->add_option("--foreground", fit_fg, "Foreground operator for agreement masks: auto|first|second")
      ->capture_default_str();

  auto* rank = app.add_subcommand("rank", "Fit every suite candidate and select the segmenting direction");
  std::string rank_suite;
  FitConfig rank_cfg;
  double rank_q = kDefaultLossQuantile;
  add_common(rank, common);
  rank->add_option("--suite", rank_suite, "Suite directory written by synth --kind suite")->required();
  rank->add_option("--quantile", rank_q, "Fraction of lowest-loss candidates kept")->capture_default_str();
  add_fit_options(rank, rank_cfg);

  auto* masks = app.add_subcommand("masks", "Build and filter masks for a pair dataset");
  std::string masks_data;
  MaskOptions masks_opt;
  add_common(masks, common);
  masks->add_option("--data", masks_data, "Pair dataset directory")->required();
  add_mask_options(masks, masks_opt);

  auto* noise = app.add_subcommand("noise-latents", "Sample latent codes around a latent matrix");
  std::string noise_in;
  double noise_alpha = 0.2;
  std::optional<std::size_t> noise_count;
  add_common(noise, common);
  noise->add_option("--latents", noise_in, "Latents directory (latents.bin + latents.json)")->required();
  noise->add_option("--alpha", noise_alpha, "Noise scale")->capture_default_str();
  noise->add_option("--count", noise_count, "Rows to draw [default: input rows]");

  auto* emit = app.add_subcommand("emit", "Draw samples until enough pass the filters and write them");
  std::string emit_source;
  bool emit_oracle = false;
  std::size_t emit_target = 64;
  OracleOptions emit_oo;
  MaskOptions emit_mo;
  add_common(emit, common);
  emit->add_option("--source", emit_source, "Pair dataset to draw from");
  emit->add_flag("--oracle", emit_oracle, "Draw from the oracle stream instead");
  emit->add_option("--target", emit_target, "Samples to keep")->capture_default_str()->check(CLI::PositiveNumber);
  add_oracle_options(emit, emit_oo);
  add_mask_options(emit, emit_mo);

  auto* train = app.add_subcommand("train", "Train the segmentation network on a masked dataset");
  std::string train_data;
  ModelOptions train_mo;
  TrainOptions train_to;
  add_common(train, common);
  train->add_option("--data", train_data, "Dataset with masks")->required();
  add_model_options(train, train_mo);
  add_train_options(train, train_to);

  auto* eval = app.add_subcommand("eval", "Score predictions against ground-truth masks");
  std::string eval_data, eval_model, eval_pred, eval_mode = "dataset";
  double eval_beta = kDefaultBetaSq;
  bool eval_save = false;
  add_common(eval, common);
  eval->add_option("--data", eval_data, "Dataset with ground-truth masks")->required();
  eval->add_option("--model", eval_model, "model.bin to predict with");
  eval->add_option("--pred", eval_pred, "Directory of <id>.png soft masks");
  eval->add_option("--mode", eval_mode, "Aggregation: dataset|per-image")->capture_default_str();
  eval->add_option("--beta-sq", eval_beta, "F-measure beta squared")->capture_default_str();
  eval->add_flag("--save-pred", eval_save, "Write predictions to <out>/pred");

  auto* sw = app.add_subcommand("sweep", "Train a grid of configurations and rank them on the validation split");
  std::string sw_data, sw_grid;
  ModelOptions sw_mo;
  TrainOptions sw_to;
  add_common(sw, common);
  sw->add_option("--data", sw_data, "Dataset with masks")->required();
  sw->add_option("--grid", sw_grid, "JSON object mapping train config keys to value lists")->required();
  add_model_options(sw, sw_mo);
  add_train_options(sw, sw_to);

  if (argc <= 1) {
    std::cerr << app.help();
    return 1;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) {
      return run_synth(synth, common, synth_kind, synth_oracle, synth_count, synth_start, synth_candidates,
                       synth_scale);
    }
    if (fit->parsed()) return run_fit(fit, common, fit_data, fit_cfg, fit_per, fit_per_count, fit_fg);
    if (rank->parsed()) return run_rank(rank, common, rank_suite, rank_cfg, rank_q);
    if (masks->parsed()) return run_masks(masks, common, masks_data, masks_opt);
    if (noise->parsed()) return run_noise(noise, common, noise_in, noise_alpha, noise_count);
    if (emit->parsed()) return run_emit(emit, common, emit_source, emit_oracle, emit_oo, emit_mo, emit_target);
    if (train->parsed()) return run_train(train, common, train_data, train_mo, train_to);
    if (eval->parsed()) {
      return run_eval(eval, common, eval_data, eval_model, eval_pred, eval_mode, eval_beta, eval_save);
    }
    if (sw->parsed()) return run_sweep(sw, common, sw_data, sw_grid, sw_mo, sw_to);
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
