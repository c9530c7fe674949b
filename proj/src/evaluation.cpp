#include "byov/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "byov/priors.hpp"
#include "byov/rng.hpp"

namespace byov {

ProbeMode parse_probe_mode(const std::string& s) {
  if (s == "map") return ProbeMode::Map;
  if (s == "posterior_mean") return ProbeMode::PosteriorMean;
  throw ConfigError("probe: unknown mode '" + s + "'");
}

Tensor representations(const Model& m, const Tensor& images, ProbeMode mode, int mean_draws,
                       uint64_t seed) {
  // with no Bayesian layers every draw is the MAP, exactly
  if (mode == ProbeMode::Map || !m.any_bayesian()) {
    return encoder_forward(m, map_weights(m), images);
  }
  if (mean_draws < 1) throw ConfigError("probe: mean_draws must be >= 1");
  Tensor acc;
  for (int k = 0; k < mean_draws; ++k) {
    Tensor h = encoder_forward(m, sampled_weights(m, derive_key(seed, "repr", k)), images);
    if (k == 0) {
      acc = std::move(h);
    } else {
      for (size_t i = 0; i < acc.size(); ++i) acc[i] += h[i];
    }
  }
  for (size_t i = 0; i < acc.size(); ++i) acc[i] /= static_cast<double>(mean_draws);
  return acc;
}

Probe fit_linear_probe(const Model& m, const Dataset& train, ProbeMode mode,
                       const ProbeConfig& cfg, uint64_t seed) {
  if (!train.labels) throw ValueError("probe: training split has no labels");
  const size_t n = train.n();
  const size_t classes = static_cast<size_t>(train.num_classes());
  Tensor h = representations(m, train.images, mode, cfg.mean_draws, seed);
  const size_t d = h.shape()[1];

  Probe probe;
  probe.classes = classes;
  probe.feat_mean = Tensor(Shape{d});
  probe.feat_inv_std = Tensor(Shape{d});
  for (size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (size_t i = 0; i < n; ++i) mean += h[i * d + j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (size_t i = 0; i < n; ++i) var += (h[i * d + j] - mean) * (h[i * d + j] - mean);
    var /= static_cast<double>(n);
    probe.feat_mean[j] = mean;
    probe.feat_inv_std[j] = 1.0 / std::sqrt(var + 1e-8);
  }
  Tensor hs(h.shape());
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < d; ++j)
      hs[i * d + j] = (h[i * d + j] - probe.feat_mean[j]) * probe.feat_inv_std[j];

  Tensor onehot(Shape{n, classes});
  for (size_t i = 0; i < n; ++i) onehot[i * classes + static_cast<size_t>((*train.labels)[i])] = 1.0;

  Tensor w(Shape{d, classes});
  Tensor b(Shape{classes});
  Tensor mw(w.shape()), vw(w.shape()), mb(b.shape()), vb(b.shape());
  const double lr = cfg.lr, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double grad_norm = 0.0;
  int it = 0;
  for (; it < cfg.max_iters; ++it) {
    Tape tape;
    Var wv = tape.param(w);
    Var bv = tape.param(b);
    Var logits = add_rowvec(matmul(tape.constant(hs), wv), bv);
    Var nll = mul(mean(sum_lastaxis(mul(log_softmax(logits), tape.constant(onehot)))), -1.0);
    Var loss = cfg.l2 > 0.0 ? add(nll, mul(sum(mul(wv, wv)), cfg.l2)) : nll;
    tape.backward(loss);
    const Tensor& gw = wv.grad();
    const Tensor& gb = bv.grad();
    grad_norm = 0.0;
    for (size_t i = 0; i < gw.size(); ++i) grad_norm += gw[i] * gw[i];
    for (size_t i = 0; i < gb.size(); ++i) grad_norm += gb[i] * gb[i];
    grad_norm = std::sqrt(grad_norm);
    if (grad_norm < cfg.grad_tol) break;
    const double c1 = 1.0 - std::pow(b1, it + 1.0);
    const double c2 = 1.0 - std::pow(b2, it + 1.0);
    for (size_t i = 0; i < w.size(); ++i) {
      mw[i] = b1 * mw[i] + (1.0 - b1) * gw[i];
      vw[i] = b2 * vw[i] + (1.0 - b2) * gw[i] * gw[i];
      w[i] -= lr * (mw[i] / c1) / (std::sqrt(vw[i] / c2) + eps);
    }
    for (size_t i = 0; i < b.size(); ++i) {
      mb[i] = b1 * mb[i] + (1.0 - b1) * gb[i];
      vb[i] = b2 * vb[i] + (1.0 - b2) * gb[i] * gb[i];
      b[i] -= lr * (mb[i] / c1) / (std::sqrt(vb[i] / c2) + eps);
    }
  }
  probe.w = std::move(w);
  probe.b = std::move(b);
  probe.converged = grad_norm < cfg.grad_tol;
  probe.final_grad_norm = grad_norm;
  return probe;
}

Tensor probe_logits(const Probe& probe, const Tensor& h) {
  const size_t d = h.shape().back();
  if (d != probe.feat_mean.size()) {
    throw ShapeError("probe: representation dim " + std::to_string(d) + " does not match probe " +
                     std::to_string(probe.feat_mean.size()));
  }
  Tensor hs(h.shape());
  const size_t n = h.size() / d;
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < d; ++j)
      hs[i * d + j] = (h[i * d + j] - probe.feat_mean[j]) * probe.feat_inv_std[j];
  return add_rowvec(matmul(hs, probe.w), probe.b);
}

PredictiveSummary mc_predict(const Model& m, const Probe* probe, const Dataset& data, int draws,
                             uint64_t seed) {
  if (draws < 1) throw ConfigError("mc_predict: draws must be >= 1");
  const bool supervised = m.kind == ModelKind::SupervisedBbb;
  if (!supervised && !probe) throw ValueError("mc_predict: model has no head and no probe given");

  PredictiveSummary out;
  out.draws = draws;
  Tensor mean, m2;  // Welford: exact zero spread for identical draws
  for (int k = 0; k < draws; ++k) {
    auto weights = sampled_weights(m, derive_key(seed, "mc", k));
    Tensor logits = supervised ? head_logits(m, weights, data.images)
                               : probe_logits(*probe, encoder_forward(m, weights, data.images));
    Tensor probs = softmax(logits);
    if (data.labels) out.per_draw_top1.push_back(accuracy_topk(probs, *data.labels, 1));
    if (k == 0) {
      mean = probs;
      m2 = Tensor(probs.shape());
    } else {
      for (size_t i = 0; i < probs.size(); ++i) {
        const double delta = probs[i] - mean[i];
        mean[i] += delta / static_cast<double>(k + 1);
        m2[i] += delta * (probs[i] - mean[i]);
      }
    }
  }
  out.probs_mean = std::move(mean);
  out.probs_std = Tensor(m2.shape());
  for (size_t i = 0; i < m2.size(); ++i) {
    out.probs_std[i] = std::sqrt(std::max(0.0, m2[i] / static_cast<double>(draws)));
  }
  return out;
}

PredictiveSummary map_predict(const Model& m, const Probe* probe, const Dataset& data) {
  const bool supervised = m.kind == ModelKind::SupervisedBbb;
  if (!supervised && !probe) throw ValueError("map_predict: model has no head and no probe given");
  auto weights = map_weights(m);
  Tensor logits = supervised ? head_logits(m, weights, data.images)
                             : probe_logits(*probe, encoder_forward(m, weights, data.images));
  PredictiveSummary out;
  out.draws = 1;
  out.probs_mean = softmax(logits);
  out.probs_std = Tensor(out.probs_mean.shape());
  if (data.labels) out.per_draw_top1.push_back(accuracy_topk(out.probs_mean, *data.labels, 1));
  return out;
}

double accuracy_topk(const Tensor& probs, const std::vector<int>& labels, size_t k) {
  const size_t classes = probs.shape().back();
  const size_t n = probs.size() / classes;
  k = std::min(k, classes);
  size_t hits = 0;
  std::vector<size_t> idx(classes);
  for (size_t i = 0; i < n; ++i) {
    const double* row = probs.data() + i * classes;
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                      [row](size_t a, size_t b) { return row[a] > row[b]; });
    for (size_t j = 0; j < k; ++j) {
      if (idx[j] == static_cast<size_t>(labels[i])) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

CalibrationReport calibration(const PredictiveSummary& summary, const std::vector<int>& labels,
                              int num_bins) {
  const size_t classes = summary.probs_mean.shape().back();
  const size_t n = summary.probs_mean.size() / classes;
  if (n == 0 || labels.size() != n) {
    throw ValueError("calibration: empty dataset or label count mismatch");
  }
  if (num_bins < 1) throw ConfigError("calibration: num_bins must be >= 1");

  CalibrationReport rep;
  const size_t nb = static_cast<size_t>(num_bins);
  std::vector<size_t> bin_of(n);
  std::vector<size_t> count(nb, 0);
  std::vector<double> conf_sum(nb, 0.0), acc_sum(nb, 0.0);
  std::vector<std::vector<double>> pbar(nb, std::vector<double>(classes, 0.0));
  std::vector<std::vector<double>> obar(nb, std::vector<double>(classes, 0.0));
  std::vector<double> omean(classes, 0.0);

  size_t top1 = 0;
  for (size_t i = 0; i < n; ++i) {
    const double* row = summary.probs_mean.data() + i * classes;
    size_t arg = 0;
    for (size_t c = 1; c < classes; ++c) {
      if (row[c] > row[arg]) arg = c;
    }
    const double conf = row[arg];
    const bool correct = arg == static_cast<size_t>(labels[i]);
    top1 += correct;
    size_t b = static_cast<size_t>(conf * nb);
    if (b >= nb) b = nb - 1;
    bin_of[i] = b;
    ++count[b];
    conf_sum[b] += conf;
    acc_sum[b] += correct ? 1.0 : 0.0;
    for (size_t c = 0; c < classes; ++c) pbar[b][c] += row[c];
    obar[b][static_cast<size_t>(labels[i])] += 1.0;
    omean[static_cast<size_t>(labels[i])] += 1.0;
  }
  const double nd = static_cast<double>(n);
  for (size_t c = 0; c < classes; ++c) omean[c] /= nd;

  rep.top1 = static_cast<double>(top1) / nd;
  rep.top5 = accuracy_topk(summary.probs_mean, labels, 5);

  // Brier on the mean predictive distribution (squared distance summed over
  // classes, averaged over samples).
  double brier = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double* row = summary.probs_mean.data() + i * classes;
    for (size_t c = 0; c < classes; ++c) {
      const double y = c == static_cast<size_t>(labels[i]) ? 1.0 : 0.0;
      brier += (row[c] - y) * (row[c] - y);
    }
  }
  rep.brier = brier / nd;

  double ece = 0.0, rel = 0.0, res_classic = 0.0, wbv = 0.0, wbc = 0.0;
  for (size_t b = 0; b < nb; ++b) {
    BinStat bs;
    bs.conf_lo = static_cast<double>(b) / nb;
    bs.conf_hi = static_cast<double>(b + 1) / nb;
    bs.count = count[b];
    if (count[b] > 0) {
      const double cb = static_cast<double>(count[b]);
      bs.mean_conf = conf_sum[b] / cb;
      bs.accuracy = acc_sum[b] / cb;
      ece += (cb / nd) * std::fabs(bs.accuracy - bs.mean_conf);
      for (size_t c = 0; c < classes; ++c) {
        pbar[b][c] /= cb;
        obar[b][c] /= cb;
        rel += (cb / nd) * (pbar[b][c] - obar[b][c]) * (pbar[b][c] - obar[b][c]);
        res_classic += (cb / nd) * (obar[b][c] - omean[c]) * (obar[b][c] - omean[c]);
      }
    }
    rep.bins.push_back(bs);
  }
  for (size_t i = 0; i < n; ++i) {
    const double* row = summary.probs_mean.data() + i * classes;
    const size_t b = bin_of[i];
    for (size_t c = 0; c < classes; ++c) {
      const double dp = row[c] - pbar[b][c];
      const double y = c == static_cast<size_t>(labels[i]) ? 1.0 : 0.0;
      wbv += dp * dp / nd;
      wbc += dp * (y - obar[b][c]) / nd;
    }
  }
  double unc = 0.0;
  for (size_t c = 0; c < classes; ++c) unc += omean[c] * (1.0 - omean[c]);

  rep.ece = ece;
  rep.reliability = rel;
  rep.uncertainty = unc;
  rep.resolution = res_classic - wbv + 2.0 * wbc;  // generalized: keeps the identity exact
  return rep;
}

StdCompare compare_predictive_std(const PredictiveSummary& a, const PredictiveSummary& b) {
  const size_t ca = a.probs_std.shape().back();
  const size_t cb = b.probs_std.shape().back();
  const size_t n = a.probs_std.size() / ca;
  if (b.probs_std.size() / cb != n) {
    throw ValueError("compare_predictive_std: sample counts differ");
  }
  StdCompare out;
  out.std_a.resize(n);
  out.std_b.resize(n);
  for (size_t i = 0; i < n; ++i) {
    double sa = 0.0, sb = 0.0;
    for (size_t c = 0; c < ca; ++c) sa += a.probs_std[i * ca + c];
    for (size_t c = 0; c < cb; ++c) sb += b.probs_std[i * cb + c];
    out.std_a[i] = sa / static_cast<double>(ca);
    out.std_b[i] = sb / static_cast<double>(cb);
  }
  const double nd = static_cast<double>(n);
  for (size_t i = 0; i < n; ++i) {
    out.mean_a += out.std_a[i] / nd;
    out.mean_b += out.std_b[i] / nd;
  }
  double va = 0.0, vb = 0.0;
  for (size_t i = 0; i < n; ++i) {
    va += (out.std_a[i] - out.mean_a) * (out.std_a[i] - out.mean_a) / nd;
    vb += (out.std_b[i] - out.mean_b) * (out.std_b[i] - out.mean_b) / nd;
    out.cov += (out.std_a[i] - out.mean_a) * (out.std_b[i] - out.mean_b) / nd;
  }
  out.sd_a = std::sqrt(va);
  out.sd_b = std::sqrt(vb);
  // degenerate spread: correlation undefined, reported as NaN
  out.pearson = (out.sd_a > 0.0 && out.sd_b > 0.0)
                    ? out.cov / (out.sd_a * out.sd_b)
                    : std::numeric_limits<double>::quiet_NaN();
  return out;
}

std::vector<LatentVarianceRow> latent_variance_profile(const Model& m, const Tensor& images,
                                                       std::span<const double> noise_ladder,
                                                       int m_draws, uint64_t seed) {
  if (m_draws < 2) throw ConfigError("latent_variance: need at least 2 draws");
  if (m.kind == ModelKind::SupervisedBbb) {
    throw ValueError("latent_variance: model has no projector/predictor stages");
  }
  const size_t n = images.shape()[0];
  std::vector<LatentVarianceRow> rows;
  if (!m.any_bayesian()) {  // no posterior spread: variances are exactly zero
    for (double noise : noise_ladder) {
      for (const char* stage : {"encoder", "projector", "predictor"}) {
        for (size_t i = 0; i < n; ++i) rows.push_back({noise, stage, i, 0.0});
      }
    }
    return rows;
  }

  Dataset base;
  base.images = images;
  base.split = Split::Test;
  for (double noise : noise_ladder) {
    Dataset noisy = apply_ood(base, {OodKind::GaussianNoise, noise}, derive_key(seed, "noise"));
    struct Acc {  // Welford across draws
      Tensor mean, m2;
      int k = 0;
      void add(const Tensor& t) {
        ++k;
        if (mean.empty()) {
          mean = t;
          m2 = Tensor(t.shape());
          return;
        }
        for (size_t i = 0; i < t.size(); ++i) {
          const double delta = t[i] - mean[i];
          mean[i] += delta / static_cast<double>(k);
          m2[i] += delta * (t[i] - mean[i]);
        }
      }
    } acc_h, acc_z, acc_p;
    for (int k = 0; k < m_draws; ++k) {
      auto weights = sampled_weights(m, derive_key(seed, "latent", k));
      Tensor h = encoder_forward(m, weights, noisy.images);
      Tensor z = subnet_forward(m, m.projector, weights, h);
      Tensor p = subnet_forward(m, m.predictor, weights, z);
      acc_h.add(h);
      acc_z.add(z);
      acc_p.add(p);
    }
    auto emit = [&](const char* stage, const Acc& acc) {
      const size_t d = acc.mean.shape().back();
      for (size_t i = 0; i < n; ++i) {
        double v = 0.0;
        for (size_t j = 0; j < d; ++j) v += acc.m2[i * d + j] / static_cast<double>(m_draws);
        rows.push_back({noise, stage, i, v / static_cast<double>(d)});
      }
    };
    emit("encoder", acc_h);
    emit("projector", acc_z);
    emit("predictor", acc_p);
  }
  return rows;
}

McAblation mc_ablation(const Model& m, const Probe* probe, const Dataset& data, int max_k,
                       int bootstrap, uint64_t seed) {
  if (max_k < 2 || bootstrap < 2) throw ConfigError("mc_ablation: need max_k >= 2, bootstrap >= 2");
  const bool supervised = m.kind == ModelKind::SupervisedBbb;
  const size_t cells = [&] {
    auto weights = map_weights(m);
    Tensor logits = supervised ? head_logits(m, weights, data.images)
                               : probe_logits(*probe, encoder_forward(m, weights, data.images));
    return logits.size();
  }();

  std::vector<std::vector<double>> running(static_cast<size_t>(bootstrap),
                                           std::vector<double>(cells, 0.0));
  McAblation out;
  std::vector<double> log_k, log_std;
  for (int k = 1; k <= max_k; ++k) {
    for (int r = 0; r < bootstrap; ++r) {
      const uint64_t draw_seed = derive_key(seed, "ablation", static_cast<uint64_t>(r) * 10007 + k);
      auto weights = sampled_weights(m, draw_seed);
      Tensor logits = supervised ? head_logits(m, weights, data.images)
                                 : probe_logits(*probe, encoder_forward(m, weights, data.images));
      Tensor probs = softmax(logits);
      for (size_t i = 0; i < cells; ++i) running[r][i] += probs[i];
    }
    // std across replicates of the k-draw running mean, averaged over cells
    double std_acc = 0.0, mean_acc = 0.0;
    for (size_t i = 0; i < cells; ++i) {
      double s = 0.0, ss = 0.0;
      for (int r = 0; r < bootstrap; ++r) {
        const double v = running[r][i] / k;
        s += v;
        ss += v * v;
      }
      const double mu = s / bootstrap;
      std_acc += std::sqrt(std::max(0.0, ss / bootstrap - mu * mu));
      mean_acc += mu;
    }
    McAblationRow row;
    row.k = k;
    row.std_running_mean = std_acc / static_cast<double>(cells);
    row.mean_running_mean = mean_acc / static_cast<double>(cells);
    out.rows.push_back(row);
    if (row.std_running_mean > 0.0) {
      log_k.push_back(std::log(static_cast<double>(k)));
      log_std.push_back(std::log(row.std_running_mean));
    }
  }
  // least-squares slope
  const size_t np = log_k.size();
  if (np >= 2) {
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < np; ++i) {
      mx += log_k[i] / np;
      my += log_std[i] / np;
    }
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < np; ++i) {
      num += (log_k[i] - mx) * (log_std[i] - my);
      den += (log_k[i] - mx) * (log_k[i] - mx);
    }
    out.loglog_slope = num / den;
  }
  return out;
}

}  // namespace byov
