#include "byov/experiments.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "byov/rng.hpp"

namespace byov {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// metrics.jsonl sink; the first record embeds the effective config verbatim
class MetricsWriter {
 public:
  MetricsWriter(const RunContext& ctx, const std::string& subcommand)
      : os_(ctx.run_dir + "/metrics.jsonl", std::ios::trunc) {
    if (!os_) throw IoError("cannot open metrics.jsonl under '" + ctx.run_dir + "'");
    json head{{"type", "config"},
              {"subcommand", subcommand},
              {"experiment", ctx.cfg.experiment},
              {"seed", ctx.cfg.seed},
              {"config_hash", ctx.config_hash},
              {"config", json::parse(ctx.config_text)}};
    write(head);
  }

  void write(const json& j) {
    os_ << j.dump() << "\n";
    os_.flush();
  }

 private:
  std::ofstream os_;
};

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header) : os_(path, std::ios::trunc) {
    if (!os_) throw IoError("cannot open '" + path + "'");
    for (size_t i = 0; i < header.size(); ++i) os_ << (i ? "," : "") << header[i];
    os_ << "\n";
  }

  void row(const std::vector<std::string>& cells) {
    for (size_t i = 0; i < cells.size(); ++i) os_ << (i ? "," : "") << cells[i];
    os_ << "\n";
  }

 private:
  std::ofstream os_;
};

json step_json(const StepRecord& r) {
  json j{{"type", "step"},   {"step", r.step}, {"epoch", r.epoch},
         {"loss_total", r.loss_total}, {"loss_distill", r.loss_distill},
         {"kl", r.kl},       {"beta", r.beta}};
  if (r.train_acc) j["train_acc"] = *r.train_acc;
  return j;
}

json epoch_json(const EpochRecord& r) {
  json layers = json::array();
  for (const auto& [id, st] : r.layers) {
    layers.push_back({{"layer", id},
                      {"mean_sigma", st.mean_sigma},
                      {"max_sigma", st.max_sigma},
                      {"mean_snr", st.mean_snr},
                      {"max_snr", st.max_snr}});
  }
  return json{{"type", "epoch"}, {"epoch", r.epoch}, {"mean_loss", r.mean_loss}, {"layers", layers}};
}

json calibration_json(const CalibrationReport& rep) {
  json bins = json::array();
  for (const BinStat& b : rep.bins) {
    bins.push_back({{"conf_lo", b.conf_lo},
                    {"conf_hi", b.conf_hi},
                    {"mean_conf", b.mean_conf},
                    {"accuracy", b.accuracy},
                    {"count", b.count}});
  }
  return json{{"ece", rep.ece},
              {"brier", rep.brier},
              {"reliability", rep.reliability},
              {"resolution", rep.resolution},
              {"uncertainty", rep.uncertainty},
              {"top1", rep.top1},
              {"top5", rep.top5},
              {"bins", bins}};
}

}  // namespace

Dataset load_split(const DataConfig& data, Split split) {
  if (data.format == "idx") {
    const std::string& images = split == Split::Train ? data.images : data.test_images;
    const std::string& labels = split == Split::Train ? data.labels : data.test_labels;
    if (images.empty()) throw ConfigError("config: data.images/test_images required for idx format");
    return load_idx(images, labels.empty() ? std::nullopt : std::make_optional(labels), split);
  }
  SyntheticSpec spec = data.synthetic;
  if (split == Split::Test) spec.n = data.synthetic_n_test;
  return make_synthetic(spec, split);
}

RunContext prepare_run(const std::string& subcommand, const CliOptions& opts) {
  json raw = json::object();
  if (!opts.config_path.empty()) {
    std::string text;
    try {
      text = read_file(opts.config_path);
    } catch (const IoError& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    try {
      raw = json::parse(text);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
  }
  for (const std::string& ov : opts.overrides) apply_override(raw, ov);
  if (opts.seed) raw["seed"] = *opts.seed;

  RunContext ctx;
  ctx.cfg = parse_config(raw);
  ctx.config_text = canonical_text(ctx.cfg);
  ctx.config_hash = hash_hex(config_hash(ctx.config_text));
  ctx.resume_path = opts.resume_path;

  std::string root = ctx.cfg.output_dir;
  if (root.empty()) {
    const char* env = std::getenv("BYOV_OUT_DIR");
    root = env && *env ? env : "runs";
  }
  ctx.run_dir = root + "/" + ctx.cfg.experiment + "-" + subcommand;
  if (fs::exists(ctx.run_dir) && !opts.force) {
    throw IoError("output directory '" + ctx.run_dir + "' exists; pass --force to reuse");
  }
  fs::create_directories(ctx.run_dir);
  std::ofstream(ctx.run_dir + "/config.json", std::ios::trunc) << ctx.config_text << "\n";
  return ctx;
}

void save_run(const TrainState& ts, const std::string& config_text, const std::string& path) {
  TensorStore store;
  save_train_state(ts, store);
  Tensor text(Shape{std::max<size_t>(config_text.size(), 1)});
  for (size_t i = 0; i < config_text.size(); ++i) {
    text[i] = static_cast<double>(static_cast<unsigned char>(config_text[i]));
  }
  store.put("meta/config_utf8", std::move(text));
  save_store(store, path);
}

LoadedRun load_run(const std::string& checkpoint_path) {
  TensorStore store = load_store(checkpoint_path);
  const Tensor& text = store.get("meta/config_utf8");
  std::string config_text(text.size(), '\0');
  for (size_t i = 0; i < text.size(); ++i) config_text[i] = static_cast<char>(text[i]);

  LoadedRun run;
  run.cfg = parse_config_text(config_text);
  run.config_text = config_text;
  const auto kind = static_cast<ModelKind>(static_cast<int>(store.get_scalar("meta/kind")));
  run.state = restore_train_state(run.cfg.train_settings(kind), store);
  run.checkpoint_hash = hash_hex(config_hash(read_file(checkpoint_path)));
  return run;
}

namespace {

void require_dims_match(const NetworkSpec& net, const Dataset& d) {
  if (net.image_c != d.c() || net.image_h != d.h() || net.image_w != d.w()) {
    throw ConfigError("config: model.image_channels/height/width " + std::to_string(net.image_c) +
                      "x" + std::to_string(net.image_h) + "x" + std::to_string(net.image_w) +
                      " do not match the dataset " + std::to_string(d.c()) + "x" +
                      std::to_string(d.h()) + "x" + std::to_string(d.w()));
  }
  if (d.labels && d.num_classes() > static_cast<int>(net.num_classes)) {
    throw ConfigError("config: model.num_classes " + std::to_string(net.num_classes) +
                      " is below the dataset's label range " + std::to_string(d.num_classes()));
  }
}

void run_training(ModelKind kind, const std::string& subcommand, const RunContext& ctx) {
  Dataset train = load_split(ctx.cfg.data, Split::Train);
  TrainSettings settings = ctx.cfg.train_settings(kind);
  require_dims_match(settings.net, train);
  TrainState ts = ctx.resume_path.empty()
                      ? TrainState::init(settings, train.n())
                      : restore_train_state(settings, load_store(ctx.resume_path));
  MetricsWriter metrics(ctx, subcommand);
  const std::string last_path = ctx.run_dir + "/checkpoint_last.byov";
  train_run(
      ts, train, [&](const StepRecord& r) { metrics.write(step_json(r)); },
      [&](const EpochRecord& r) {
        metrics.write(epoch_json(r));
        save_run(ts, ctx.config_text, last_path);
      });
  save_run(ts, ctx.config_text, ctx.run_dir + "/checkpoint_final.byov");
  metrics.write({{"type", "done"}, {"steps", ts.step}});
}

// evaluation plumbing shared by the eval subcommands
struct EvalModel {
  LoadedRun run;
  std::optional<Probe> probe;
  std::string name;
};

EvalModel load_eval_model(const RunContext& ctx, const std::string& checkpoint_key,
                          const std::string& path) {
  if (path.empty()) {
    throw ConfigError("config: eval." + checkpoint_key + " is required for this subcommand");
  }
  EvalModel em{load_run(path), std::nullopt, ""};
  em.name = em.run.cfg.experiment;
  if (em.run.state.model.kind != ModelKind::SupervisedBbb) {
    Dataset train = load_split(ctx.cfg.data, Split::Train);
    em.probe = fit_linear_probe(em.run.state.model, train, ctx.cfg.eval.probe_mode,
                                ctx.cfg.eval.probe, ctx.cfg.seed);
    if (!em.probe->converged) {
      std::cerr << "warning: linear probe stopped above tolerance (grad norm "
                << em.probe->final_grad_norm << ")\n";
    }
  }
  return em;
}

PredictiveSummary predict(const EvalModel& em, const Dataset& data, int draws, uint64_t seed) {
  return mc_predict(em.run.state.model, em.probe ? &*em.probe : nullptr, data, draws, seed);
}

// calibration-style scoring honors eval.inference (MAP mirrors the model
// means; "mc" averages sampled networks)
PredictiveSummary score_predict(const RunContext& ctx, const EvalModel& em, const Dataset& data) {
  if (ctx.cfg.eval.mc_inference) return predict(em, data, ctx.cfg.eval.mc_draws, ctx.cfg.seed);
  return map_predict(em.run.state.model, em.probe ? &*em.probe : nullptr, data);
}

void run_eval_calibration(const RunContext& ctx) {
  MetricsWriter metrics(ctx, "eval-calibration");
  EvalModel em = load_eval_model(ctx, "checkpoint", ctx.cfg.eval.checkpoint);
  Dataset test = load_split(ctx.cfg.data, Split::Test);
  if (!test.labels) throw ConfigError("config: calibration needs a labeled test split");
  if ((!em.run.state.model.any_bayesian() || !ctx.cfg.eval.mc_inference) &&
      ctx.cfg.eval.mc_draws > 1) {
    std::cerr << "warning: predictive std is degenerate (point-estimate checkpoint or MAP "
                 "inference); draws collapse to one prediction\n";
    metrics.write({{"type", "warning"}, {"message", "degenerate predictive std"}});
  }
  PredictiveSummary summary = score_predict(ctx, em, test);
  CalibrationReport rep = calibration(summary, *test.labels, ctx.cfg.eval.ece_bins);
  metrics.write({{"type", "calibration"}, {"model", em.name}, {"report", calibration_json(rep)}});

  CsvWriter csv(ctx.run_dir + "/calibration_bins.csv",
                {"bin", "conf_lo", "conf_hi", "mean_conf", "accuracy", "count", "config_hash"});
  for (size_t b = 0; b < rep.bins.size(); ++b) {
    const BinStat& bs = rep.bins[b];
    csv.row({std::to_string(b), fmt_double(bs.conf_lo), fmt_double(bs.conf_hi),
             fmt_double(bs.mean_conf), fmt_double(bs.accuracy), std::to_string(bs.count),
             ctx.config_hash});
  }
}

void run_eval_ood_grid(const RunContext& ctx) {
  MetricsWriter metrics(ctx, "eval-ood-grid");
  std::vector<EvalModel> models;
  models.push_back(load_eval_model(ctx, "checkpoint", ctx.cfg.eval.checkpoint));
  if (!ctx.cfg.eval.baseline_checkpoint.empty()) {
    models.push_back(load_eval_model(ctx, "baseline_checkpoint", ctx.cfg.eval.baseline_checkpoint));
  }
  Dataset test = load_split(ctx.cfg.data, Split::Test);
  if (!test.labels) throw ConfigError("config: the OOD grid needs a labeled test split");

  CsvWriter csv(ctx.run_dir + "/ood_grid.csv",
                {"model", "augmentation", "strength", "ece", "brier", "reliability", "resolution",
                 "uncertainty", "top1", "top5", "config_hash"});
  for (const EvalModel& em : models) {
    for (const AugmentationSpec& spec : ctx.cfg.ood_ladder) {
      Dataset corrupted = apply_ood(test, spec, derive_key(ctx.cfg.seed, "ood_grid"));
      PredictiveSummary summary = score_predict(ctx, em, corrupted);
      CalibrationReport rep = calibration(summary, *corrupted.labels, ctx.cfg.eval.ece_bins);
      metrics.write({{"type", "ood_point"},
                     {"model", em.name},
                     {"augmentation", ood_kind_name(spec.kind)},
                     {"strength", spec.strength},
                     {"report", calibration_json(rep)}});
      csv.row({em.name, ood_kind_name(spec.kind), fmt_double(spec.strength), fmt_double(rep.ece),
               fmt_double(rep.brier), fmt_double(rep.reliability), fmt_double(rep.resolution),
               fmt_double(rep.uncertainty), fmt_double(rep.top1), fmt_double(rep.top5),
               ctx.config_hash});
    }
  }

  // latent-variance profile over the gaussian-noise rungs (primary model only)
  const EvalModel& primary = models.front();
  if (primary.run.state.model.kind != ModelKind::SupervisedBbb) {
    std::vector<double> ladder;
    for (const AugmentationSpec& spec : ctx.cfg.ood_ladder) {
      if (spec.kind == OodKind::GaussianNoise) ladder.push_back(spec.strength);
    }
    if (!ladder.empty()) {
      const size_t n_img = std::min<size_t>(test.n(), ctx.cfg.eval.latent_images);
      Tensor imgs(Shape{n_img, test.c(), test.h(), test.w()});
      std::copy(test.images.data(), test.images.data() + imgs.size(), imgs.data());
      auto rows = latent_variance_profile(primary.run.state.model, imgs, ladder,
                                          ctx.cfg.eval.latent_draws, ctx.cfg.seed);
      CsvWriter lcsv(ctx.run_dir + "/latent_variance.csv",
                     {"noise_sigma", "stage", "image", "variance", "config_hash"});
      for (const auto& r : rows) {
        lcsv.row({fmt_double(r.noise), r.stage, std::to_string(r.image), fmt_double(r.variance),
                  ctx.config_hash});
      }
    }
  }
}

void run_eval_std_compare(const RunContext& ctx) {
  MetricsWriter metrics(ctx, "eval-std-compare");
  EvalModel a = load_eval_model(ctx, "checkpoint", ctx.cfg.eval.checkpoint);
  EvalModel b = load_eval_model(ctx, "compare_checkpoint", ctx.cfg.eval.compare_checkpoint);
  if (to_json(a.run.cfg)["data"].dump() != to_json(b.run.cfg)["data"].dump()) {
    throw ValueError("eval-std-compare: checkpoints were trained on different datasets");
  }
  Dataset test = load_split(ctx.cfg.data, Split::Test);
  const int draws = ctx.cfg.eval.std_compare_draws;
  PredictiveSummary sa = predict(a, test, draws, ctx.cfg.seed);
  PredictiveSummary sb = predict(b, test, draws, derive_key(ctx.cfg.seed, "compare"));
  StdCompare cmp = compare_predictive_std(sa, sb);

  CsvWriter csv(ctx.run_dir + "/std_compare.csv", {"sample", "std_" + a.name, "std_" + b.name});
  for (size_t i = 0; i < cmp.std_a.size(); ++i) {
    csv.row({std::to_string(i), fmt_double(cmp.std_a[i]), fmt_double(cmp.std_b[i])});
  }
  CsvWriter sum(ctx.run_dir + "/std_compare_summary.csv",
                {"pearson", "mean_a", "mean_b", "sd_a", "sd_b", "cov", "n", "draws", "config_hash"});
  sum.row({fmt_double(cmp.pearson), fmt_double(cmp.mean_a), fmt_double(cmp.mean_b),
           fmt_double(cmp.sd_a), fmt_double(cmp.sd_b), fmt_double(cmp.cov),
           std::to_string(cmp.std_a.size()), std::to_string(draws), ctx.config_hash});
  metrics.write({{"type", "std_compare"},
                 {"pearson", std::isnan(cmp.pearson) ? json() : json(cmp.pearson)},
                 {"n", cmp.std_a.size()},
                 {"draws", draws}});
}

Dataset head_subset(const Dataset& d, size_t n) {
  n = std::min(n, d.n());
  Dataset out;
  out.split = d.split;
  out.images = Tensor(Shape{n, d.c(), d.h(), d.w()});
  std::copy(d.images.data(), d.images.data() + out.images.size(), out.images.data());
  if (d.labels) out.labels = std::vector<int>(d.labels->begin(), d.labels->begin() + n);
  return out;
}

void run_eval_mc_ablation(const RunContext& ctx) {
  MetricsWriter metrics(ctx, "eval-mc-ablation");
  EvalModel em = load_eval_model(ctx, "checkpoint", ctx.cfg.eval.checkpoint);
  Dataset test = head_subset(load_split(ctx.cfg.data, Split::Test),
                             static_cast<size_t>(ctx.cfg.eval.mc_ablation_samples));
  McAblation ab = mc_ablation(em.run.state.model, em.probe ? &*em.probe : nullptr, test,
                              ctx.cfg.eval.mc_ablation_max_k, ctx.cfg.eval.mc_ablation_bootstrap,
                              ctx.cfg.seed);
  CsvWriter csv(ctx.run_dir + "/mc_ablation.csv",
                {"k", "std_running_mean", "mean_running_mean", "config_hash"});
  for (const McAblationRow& r : ab.rows) {
    csv.row({std::to_string(r.k), fmt_double(r.std_running_mean), fmt_double(r.mean_running_mean),
             ctx.config_hash});
  }
  metrics.write({{"type", "mc_ablation"}, {"loglog_slope", ab.loglog_slope}});
}

void run_prune_sweep(const RunContext& ctx) {
  MetricsWriter metrics(ctx, "prune-sweep");
  EvalModel em = load_eval_model(ctx, "checkpoint", ctx.cfg.eval.checkpoint);
  if (!em.probe) throw ConfigError("prune-sweep: supervised checkpoints have no probe path");
  Dataset test = load_split(ctx.cfg.data, Split::Test);
  auto rows = sparsity_sweep(em.run.state.model, *em.probe, test, ctx.cfg.prune.criteria,
                             ctx.cfg.prune.keep_percentiles);
  CsvWriter csv(ctx.run_dir + "/prune_sweep.csv",
                {"criterion", "keep_pct", "top1", "top5", "effective_sparsity", "config_hash",
                 "checkpoint_hash"});
  for (const SweepRow& r : rows) {
    csv.row({r.criterion, fmt_double(r.keep_pct), fmt_double(r.top1), fmt_double(r.top5),
             fmt_double(r.effective_sparsity), ctx.config_hash, em.run.checkpoint_hash});
    metrics.write({{"type", "prune_point"},
                   {"criterion", r.criterion},
                   {"keep_pct", r.keep_pct},
                   {"top1", r.top1},
                   {"top5", r.top5},
                   {"effective_sparsity", r.effective_sparsity}});
  }
}

struct AblationOutcome {
  double final_loss = 0.0;
  double final_kl = 0.0;
  double probe_top1 = 0.0;
  double ece = 0.0;
  double brier = 0.0;
};

AblationOutcome train_and_score(const ExperimentConfig& sub_cfg, const std::string& sub_dir) {
  fs::create_directories(sub_dir);
  Dataset train = load_split(sub_cfg.data, Split::Train);
  Dataset test = load_split(sub_cfg.data, Split::Test);
  TrainSettings settings = sub_cfg.train_settings(ModelKind::Byov);
  require_dims_match(settings.net, train);
  TrainState ts = TrainState::init(settings, train.n());
  AblationOutcome out;
  std::ofstream jsonl(sub_dir + "/metrics.jsonl", std::ios::trunc);
  jsonl << json{{"type", "config"}, {"config", json::parse(canonical_text(sub_cfg))}}.dump() << "\n";
  train_run(
      ts, train,
      [&](const StepRecord& r) {
        jsonl << step_json(r).dump() << "\n";
        out.final_loss = r.loss_total;
        out.final_kl = r.kl;
      },
      [&](const EpochRecord& r) { jsonl << epoch_json(r).dump() << "\n"; });
  save_run(ts, canonical_text(sub_cfg), sub_dir + "/checkpoint_final.byov");

  Probe probe = fit_linear_probe(ts.model, train, sub_cfg.eval.probe_mode, sub_cfg.eval.probe,
                                 sub_cfg.seed);
  PredictiveSummary summary =
      sub_cfg.eval.mc_inference ? mc_predict(ts.model, &probe, test, sub_cfg.eval.mc_draws, sub_cfg.seed)
                                : map_predict(ts.model, &probe, test);
  CalibrationReport rep = calibration(summary, *test.labels, sub_cfg.eval.ece_bins);
  out.probe_top1 = rep.top1;
  out.ece = rep.ece;
  out.brier = rep.brier;
  return out;
}

void run_ablate_priors(const RunContext& ctx) {
  MetricsWriter metrics(ctx, "ablate-priors");
  CsvWriter csv(ctx.run_dir + "/ablate_priors.csv",
                {"prior", "final_loss", "final_kl", "probe_top1", "ece", "brier", "config_hash"});
  for (PriorKind kind : ctx.cfg.ablate.priors) {
    ExperimentConfig sub = ctx.cfg;
    sub.prior_kind = kind;
    sub.experiment = ctx.cfg.experiment + "-prior-" + prior_kind_name(kind);
    AblationOutcome out = train_and_score(sub, ctx.run_dir + "/prior_" + prior_kind_name(kind));
    csv.row({prior_kind_name(kind), fmt_double(out.final_loss), fmt_double(out.final_kl),
             fmt_double(out.probe_top1), fmt_double(out.ece), fmt_double(out.brier),
             ctx.config_hash});
    metrics.write({{"type", "ablation_point"},
                   {"prior", prior_kind_name(kind)},
                   {"probe_top1", out.probe_top1},
                   {"ece", out.ece},
                   {"brier", out.brier}});
  }
}

void run_ablate_beta(const RunContext& ctx) {
  MetricsWriter metrics(ctx, "ablate-beta");
  CsvWriter csv(ctx.run_dir + "/ablate_beta.csv",
                {"beta_end", "final_loss", "final_kl", "probe_top1", "ece", "brier", "config_hash"});
  for (double beta_end : ctx.cfg.ablate.betas) {
    ExperimentConfig sub = ctx.cfg;
    sub.beta_start = 0.0;  // every schedule rises from zero
    sub.beta_end = beta_end;
    sub.experiment = ctx.cfg.experiment + "-beta-" + fmt_double(beta_end);
    AblationOutcome out = train_and_score(sub, ctx.run_dir + "/beta_" + fmt_double(beta_end));
    csv.row({fmt_double(beta_end), fmt_double(out.final_loss), fmt_double(out.final_kl),
             fmt_double(out.probe_top1), fmt_double(out.ece), fmt_double(out.brier),
             ctx.config_hash});
    metrics.write({{"type", "ablation_point"},
                   {"beta_end", beta_end},
                   {"probe_top1", out.probe_top1},
                   {"ece", out.ece},
                   {"brier", out.brier}});
  }
}

}  // namespace

std::vector<std::string> subcommand_names() {
  return {"train-byov",      "train-byol",       "train-supervised-bbb", "eval-calibration",
          "eval-ood-grid",   "eval-std-compare", "eval-mc-ablation",     "prune-sweep",
          "ablate-priors",   "ablate-beta"};
}

void run_subcommand(const std::string& name, const RunContext& ctx) {
  if (name == "train-byov") return run_training(ModelKind::Byov, name, ctx);
  if (name == "train-byol") return run_training(ModelKind::DeterministicByol, name, ctx);
  if (name == "train-supervised-bbb") return run_training(ModelKind::SupervisedBbb, name, ctx);
  if (name == "eval-calibration") return run_eval_calibration(ctx);
  if (name == "eval-ood-grid") return run_eval_ood_grid(ctx);
  if (name == "eval-std-compare") return run_eval_std_compare(ctx);
  if (name == "eval-mc-ablation") return run_eval_mc_ablation(ctx);
  if (name == "prune-sweep") return run_prune_sweep(ctx);
  if (name == "ablate-priors") return run_ablate_priors(ctx);
  if (name == "ablate-beta") return run_ablate_beta(ctx);
  throw ConfigError("unknown subcommand '" + name + "'");
}

}  // namespace byov
