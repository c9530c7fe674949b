#include "byov/config.hpp"

#include <set>

#include "byov/rng.hpp"

namespace byov {

namespace {

using nlohmann::json;

// Pulls known keys out of an object and rejects the rest by full path.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: " + where() + " must be an object");
  }

  std::string where() const { return path_.empty() ? "<root>" : path_; }

  template <typename T>
  T get(const char* key, T dflt) {
    used_.insert(key);
    if (!j_.contains(key)) return dflt;
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config: bad value for " + sub(key));
    }
  }

  json raw(const char* key) {
    used_.insert(key);
    return j_.contains(key) ? j_.at(key) : json{};
  }

  bool has(const char* key) const { return j_.contains(key); }

  Reader section(const char* key) {
    used_.insert(key);
    return Reader(j_.contains(key) ? j_.at(key) : json::object(), sub(key));
  }

  std::string sub(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void done() const {
    for (const auto& [key, value] : j_.items()) {
      (void)value;
      if (!used_.count(key)) throw ConfigError("config: unknown key " + sub(key.c_str()));
    }
  }

 private:
  json j_;  // by value so sections outlive temporaries
  std::string path_;
  std::set<std::string> used_;
};

}  // namespace

ExperimentConfig parse_config(const nlohmann::json& j) {
  ExperimentConfig cfg;
  Reader root(j, "");
  cfg.experiment = root.get<std::string>("experiment", cfg.experiment);
  cfg.seed = root.get<uint64_t>("seed", cfg.seed);
  cfg.output_dir = root.get<std::string>("output_dir", cfg.output_dir);

  {
    Reader d = root.section("data");
    cfg.data.format = d.get<std::string>("format", cfg.data.format);
    if (cfg.data.format != "synthetic" && cfg.data.format != "idx") {
      throw ConfigError("config: data.format must be 'synthetic' or 'idx'");
    }
    cfg.data.images = d.get<std::string>("images", "");
    cfg.data.labels = d.get<std::string>("labels", "");
    cfg.data.test_images = d.get<std::string>("test_images", "");
    cfg.data.test_labels = d.get<std::string>("test_labels", "");
    {
      Reader s = d.section("synthetic");
      cfg.data.synthetic.n = s.get<size_t>("n_train", cfg.data.synthetic.n);
      cfg.data.synthetic_n_test = s.get<size_t>("n_test", cfg.data.synthetic_n_test);
      cfg.data.synthetic.classes = s.get<size_t>("classes", cfg.data.synthetic.classes);
      cfg.data.synthetic.height = s.get<size_t>("height", cfg.data.synthetic.height);
      cfg.data.synthetic.width = s.get<size_t>("width", cfg.data.synthetic.width);
      cfg.data.synthetic.seed = s.get<uint64_t>("seed", cfg.data.synthetic.seed);
      cfg.data.synthetic.contrast_min = s.get<double>("contrast_min", cfg.data.synthetic.contrast_min);
      cfg.data.synthetic.contrast_max = s.get<double>("contrast_max", cfg.data.synthetic.contrast_max);
      cfg.data.synthetic.noise_min = s.get<double>("noise_min", cfg.data.synthetic.noise_min);
      cfg.data.synthetic.noise_max = s.get<double>("noise_max", cfg.data.synthetic.noise_max);
      s.done();
    }
    {
      Reader a = d.section("augment");
      cfg.data.augment.max_shift = a.get<int>("max_shift", cfg.data.augment.max_shift);
      cfg.data.augment.flip_prob = a.get<double>("flip_prob", cfg.data.augment.flip_prob);
      cfg.data.augment.brightness = a.get<double>("brightness", cfg.data.augment.brightness);
      cfg.data.augment.noise_sigma = a.get<double>("noise_sigma", cfg.data.augment.noise_sigma);
      a.done();
    }
    d.done();
  }

  {
    Reader m = root.section("model");
    cfg.net.image_c = m.get<size_t>("image_channels", cfg.net.image_c);
    cfg.net.image_h = m.get<size_t>("image_height", cfg.net.image_h);
    cfg.net.image_w = m.get<size_t>("image_width", cfg.net.image_w);
    cfg.net.num_classes = m.get<size_t>("num_classes", cfg.net.num_classes);
    cfg.net.patch_conv = m.get<bool>("patch_conv", cfg.net.patch_conv);
    cfg.net.patch_size = m.get<size_t>("patch_size", cfg.net.patch_size);
    cfg.net.patch_embed_dim = m.get<size_t>("patch_embed_dim", cfg.net.patch_embed_dim);
    cfg.net.encoder_hidden = m.get<std::vector<size_t>>("encoder_hidden", cfg.net.encoder_hidden);
    cfg.net.encoder_layer_norm = m.get<bool>("encoder_layer_norm", cfg.net.encoder_layer_norm);
    cfg.net.mlp_layer_norm = m.get<bool>("mlp_layer_norm", cfg.net.mlp_layer_norm);
    cfg.net.activation = parse_nonlinearity(m.get<std::string>("activation", "relu"));
    cfg.net.projector_hidden = m.get<size_t>("projector_hidden", cfg.net.projector_hidden);
    cfg.net.projector_out = m.get<size_t>("projector_out", cfg.net.projector_out);
    cfg.net.predictor_hidden = m.get<size_t>("predictor_hidden", cfg.net.predictor_hidden);
    cfg.net.scope = parse_scope(m.get<std::string>("bayesian_scope", "all"));
    cfg.init_log_var = m.get<double>("init_log_var", cfg.init_log_var);
    m.done();
  }

  {
    Reader t = root.section("train");
    cfg.opt.kind = parse_opt_kind(t.get<std::string>("optimizer", "adam"));
    cfg.opt.lr = t.get<double>("lr", cfg.opt.lr);
    cfg.opt.momentum = t.get<double>("momentum", cfg.opt.momentum);
    cfg.opt.beta1 = t.get<double>("adam_beta1", cfg.opt.beta1);
    cfg.opt.beta2 = t.get<double>("adam_beta2", cfg.opt.beta2);
    cfg.opt.weight_decay = t.get<double>("weight_decay", cfg.opt.weight_decay);
    cfg.batch_size = t.get<size_t>("batch_size", cfg.batch_size);
    cfg.epochs = t.get<size_t>("epochs", cfg.epochs);
    cfg.tau = t.get<double>("tau", cfg.tau);
    cfg.beta_start = t.get<double>("beta_start", cfg.beta_start);
    cfg.beta_end = t.get<double>("beta_end", cfg.beta_end);
    {
      Reader p = t.section("prior");
      cfg.prior_kind = parse_prior_kind(p.get<std::string>("kind", "standard_normal"));
      cfg.prior_gamma = p.get<double>("gamma", cfg.prior_gamma);
      cfg.prior_var_floor = p.get<double>("var_floor", cfg.prior_var_floor);
      p.done();
    }
    t.done();
  }

  {
    Reader e = root.section("eval");
    cfg.eval.checkpoint = e.get<std::string>("checkpoint", "");
    cfg.eval.baseline_checkpoint = e.get<std::string>("baseline_checkpoint", "");
    cfg.eval.compare_checkpoint = e.get<std::string>("compare_checkpoint", "");
    {
      const std::string inf = e.get<std::string>("inference", "map");
      if (inf != "map" && inf != "mc") throw ConfigError("config: eval.inference must be 'map' or 'mc'");
      cfg.eval.mc_inference = inf == "mc";
    }
    cfg.eval.mc_draws = e.get<int>("mc_draws", cfg.eval.mc_draws);
    cfg.eval.ece_bins = e.get<int>("ece_bins", cfg.eval.ece_bins);
    cfg.eval.std_compare_draws = e.get<int>("std_compare_draws", cfg.eval.std_compare_draws);
    cfg.eval.mc_ablation_max_k = e.get<int>("mc_ablation_max_k", cfg.eval.mc_ablation_max_k);
    cfg.eval.mc_ablation_bootstrap =
        e.get<int>("mc_ablation_bootstrap", cfg.eval.mc_ablation_bootstrap);
    cfg.eval.mc_ablation_samples = e.get<int>("mc_ablation_samples", cfg.eval.mc_ablation_samples);
    cfg.eval.latent_images = e.get<int>("latent_images", cfg.eval.latent_images);
    cfg.eval.latent_draws = e.get<int>("latent_draws", cfg.eval.latent_draws);
    {
      Reader p = e.section("probe");
      cfg.eval.probe_mode = parse_probe_mode(p.get<std::string>("mode", "map"));
      cfg.eval.probe.max_iters = p.get<int>("max_iters", cfg.eval.probe.max_iters);
      cfg.eval.probe.lr = p.get<double>("lr", cfg.eval.probe.lr);
      cfg.eval.probe.grad_tol = p.get<double>("grad_tol", cfg.eval.probe.grad_tol);
      cfg.eval.probe.l2 = p.get<double>("l2", cfg.eval.probe.l2);
      cfg.eval.probe.mean_draws = p.get<int>("mean_draws", cfg.eval.probe.mean_draws);
      p.done();
    }
    e.done();
  }

  {
    Reader o = root.section("ood");
    if (o.has("ladder")) {
      json ladder = o.raw("ladder");
      if (!ladder.is_array()) throw ConfigError("config: ood.ladder must be an array");
      for (size_t i = 0; i < ladder.size(); ++i) {
        Reader entry(ladder[i], "ood.ladder[" + std::to_string(i) + "]");
        AugmentationSpec spec;
        spec.kind = parse_ood_kind(entry.get<std::string>("kind", "identity"));
        spec.strength = entry.get<double>("strength", 0.0);
        entry.done();
        cfg.ood_ladder.push_back(spec);
      }
    } else {
      // documented default ladder
      for (double s : {0.05, 0.1, 0.2, 0.4, 0.8}) cfg.ood_ladder.push_back({OodKind::GaussianNoise, s});
      for (double s : {0.02, 0.05, 0.1, 0.2}) cfg.ood_ladder.push_back({OodKind::SaltPepper, s});
      for (double s : {5.0, 10.0, 15.0, 25.0}) cfg.ood_ladder.push_back({OodKind::Shear, s});
      for (double s : {-0.4, -0.2, 0.2, 0.4}) cfg.ood_ladder.push_back({OodKind::Brightness, s});
      for (double s : {0.1, 0.2, 0.3}) cfg.ood_ladder.push_back({OodKind::Crop, s});
      cfg.ood_ladder.push_back({OodKind::Flip, 1.0});
    }
    (void)o.raw("ladder");
    o.done();
  }

  {
    Reader p = root.section("prune");
    if (p.has("criteria")) {
      cfg.prune.criteria.clear();
      for (const std::string& c : p.get<std::vector<std::string>>("criteria", {})) {
        cfg.prune.criteria.push_back(parse_criterion(c));
      }
    } else {
      (void)p.raw("criteria");
    }
    cfg.prune.keep_percentiles =
        p.get<std::vector<double>>("keep_percentiles", cfg.prune.keep_percentiles);
    p.done();
  }

  {
    Reader a = root.section("ablate");
    cfg.ablate.betas = a.get<std::vector<double>>("betas", cfg.ablate.betas);
    if (a.has("priors")) {
      cfg.ablate.priors.clear();
      for (const std::string& s : a.get<std::vector<std::string>>("priors", {})) {
        cfg.ablate.priors.push_back(parse_prior_kind(s));
      }
    } else {
      (void)a.raw("priors");
    }
    a.done();
  }

  root.done();
  return cfg;
}

ExperimentConfig parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  return parse_config(j);
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override: expected key.path=value, got '" + assignment + "'");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);

  json* node = &j;
  size_t start = 0;
  for (;;) {
    const size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw ConfigError("override: empty key segment in '" + path + "'");
    if (dot == std::string::npos) {
      json parsed;
      try {
        parsed = json::parse(value);
      } catch (const json::exception&) {
        parsed = value;  // plain string
      }
      (*node)[key] = parsed;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

TrainSettings ExperimentConfig::train_settings(ModelKind kind) const {
  TrainSettings ts;
  ts.kind = kind;
  ts.net = net;
  if (data.format == "synthetic") {
    ts.net.image_c = 1;
    ts.net.image_h = data.synthetic.height;
    ts.net.image_w = data.synthetic.width;
    ts.net.num_classes = data.synthetic.classes;
  }
  ts.opt = opt;
  ts.batch_size = batch_size;
  ts.epochs = epochs;
  ts.seed = seed;
  ts.tau = tau;
  ts.prior_kind = prior_kind;
  ts.prior_gamma = prior_gamma;
  ts.prior_var_floor = prior_var_floor;
  ts.beta_start = beta_start;
  ts.beta_end = beta_end;
  ts.init_log_var = init_log_var;
  ts.augment = data.augment;
  return ts;
}

nlohmann::json to_json(const ExperimentConfig& cfg) {
  json j;
  j["experiment"] = cfg.experiment;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  j["data"] = {
      {"format", cfg.data.format},
      {"images", cfg.data.images},
      {"labels", cfg.data.labels},
      {"test_images", cfg.data.test_images},
      {"test_labels", cfg.data.test_labels},
      {"synthetic",
       {{"n_train", cfg.data.synthetic.n},
        {"n_test", cfg.data.synthetic_n_test},
        {"classes", cfg.data.synthetic.classes},
        {"height", cfg.data.synthetic.height},
        {"width", cfg.data.synthetic.width},
        {"seed", cfg.data.synthetic.seed},
        {"contrast_min", cfg.data.synthetic.contrast_min},
        {"contrast_max", cfg.data.synthetic.contrast_max},
        {"noise_min", cfg.data.synthetic.noise_min},
        {"noise_max", cfg.data.synthetic.noise_max}}},
      {"augment",
       {{"max_shift", cfg.data.augment.max_shift},
        {"flip_prob", cfg.data.augment.flip_prob},
        {"brightness", cfg.data.augment.brightness},
        {"noise_sigma", cfg.data.augment.noise_sigma}}},
  };
  j["model"] = {
      {"image_channels", cfg.net.image_c},
      {"image_height", cfg.net.image_h},
      {"image_width", cfg.net.image_w},
      {"num_classes", cfg.net.num_classes},
      {"patch_conv", cfg.net.patch_conv},
      {"patch_size", cfg.net.patch_size},
      {"patch_embed_dim", cfg.net.patch_embed_dim},
      {"encoder_hidden", cfg.net.encoder_hidden},
      {"encoder_layer_norm", cfg.net.encoder_layer_norm},
      {"mlp_layer_norm", cfg.net.mlp_layer_norm},
      {"activation", cfg.net.activation == Nonlinearity::Relu ? "relu" : "tanh"},
      {"projector_hidden", cfg.net.projector_hidden},
      {"projector_out", cfg.net.projector_out},
      {"predictor_hidden", cfg.net.predictor_hidden},
      {"bayesian_scope", scope_name(cfg.net.scope)},
      {"init_log_var", cfg.init_log_var},
  };
  j["train"] = {
      {"optimizer", cfg.opt.kind == OptKind::Adam ? "adam" : "sgd"},
      {"lr", cfg.opt.lr},
      {"momentum", cfg.opt.momentum},
      {"adam_beta1", cfg.opt.beta1},
      {"adam_beta2", cfg.opt.beta2},
      {"weight_decay", cfg.opt.weight_decay},
      {"batch_size", cfg.batch_size},
      {"epochs", cfg.epochs},
      {"tau", cfg.tau},
      {"beta_start", cfg.beta_start},
      {"beta_end", cfg.beta_end},
      {"prior",
       {{"kind", prior_kind_name(cfg.prior_kind)},
        {"gamma", cfg.prior_gamma},
        {"var_floor", cfg.prior_var_floor}}},
  };
  j["eval"] = {
      {"checkpoint", cfg.eval.checkpoint},
      {"baseline_checkpoint", cfg.eval.baseline_checkpoint},
      {"compare_checkpoint", cfg.eval.compare_checkpoint},
      {"inference", cfg.eval.mc_inference ? "mc" : "map"},
      {"mc_draws", cfg.eval.mc_draws},
      {"ece_bins", cfg.eval.ece_bins},
      {"std_compare_draws", cfg.eval.std_compare_draws},
      {"mc_ablation_max_k", cfg.eval.mc_ablation_max_k},
      {"mc_ablation_bootstrap", cfg.eval.mc_ablation_bootstrap},
      {"mc_ablation_samples", cfg.eval.mc_ablation_samples},
      {"latent_images", cfg.eval.latent_images},
      {"latent_draws", cfg.eval.latent_draws},
      {"probe",
       {{"mode", cfg.eval.probe_mode == ProbeMode::Map ? "map" : "posterior_mean"},
        {"max_iters", cfg.eval.probe.max_iters},
        {"lr", cfg.eval.probe.lr},
        {"grad_tol", cfg.eval.probe.grad_tol},
        {"l2", cfg.eval.probe.l2},
        {"mean_draws", cfg.eval.probe.mean_draws}}},
  };
  json ladder = json::array();
  for (const AugmentationSpec& s : cfg.ood_ladder) {
    ladder.push_back({{"kind", ood_kind_name(s.kind)}, {"strength", s.strength}});
  }
  j["ood"] = {{"ladder", ladder}};
  json crits = json::array();
  for (PruneCriterion c : cfg.prune.criteria) crits.push_back(criterion_name(c));
  j["prune"] = {{"criteria", crits}, {"keep_percentiles", cfg.prune.keep_percentiles}};
  json priors = json::array();
  for (PriorKind p : cfg.ablate.priors) priors.push_back(prior_kind_name(p));
  j["ablate"] = {{"betas", cfg.ablate.betas}, {"priors", priors}};
  return j;
}

std::string canonical_text(const ExperimentConfig& cfg) { return to_json(cfg).dump(2); }

uint64_t config_hash(const std::string& text) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_hex(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace byov
