#pragma once

// Physics-informed pretraining, frozen-encoder fine-tuning, checkpoints and
// the JSON-lines training log.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "vtwin/hemo1d.hpp"
#include "vtwin/nnet/model.hpp"
#include "vtwin/physloss.hpp"
#include "vtwin/vgraph.hpp"

namespace vtwin::nnet {

/// One twin ready for training: graph context plus the physics geometry at
/// the centerline output points.
struct Sample {
  std::string id;
  GraphContext ctx;
  hemo::PhysicalGeometry geom;
  hemo::SegmentMap seg;
};

inline Sample prepare_sample(const DigitalTwin& t, const EncoderConfig& cfg) {
  Sample s;
  s.id = t.meta.id;
  s.ctx = make_context(vgraph::build_graph(t), cfg);
  const DigitalTwin at_n = (t.size() == cfg.n_centerline && t.centerline.spacing_deviation() <= hemo::kUniformSpacingTol)
                               ? t
                               : resample_twin(t, cfg.n_centerline);
  s.geom = hemo::physical_geometry(at_n);
  s.seg = hemo::derive_segments(at_n);
  return s;
}

inline std::span<const double> as_span(const Eigen::VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

/// Loss of one sample; when `grad` is given, accumulates scale * dLoss/dparams.
inline physloss::LossReport sample_loss(const Sample& s, const EncoderParams& prm, const EncoderConfig& cfg,
                                        const physloss::LossConfig& lc, EncoderParams* grad = nullptr,
                                        double scale = 1.0) {
  ForwardCache cache;
  const auto out = forward(s.ctx, prm, cfg, grad ? &cache : nullptr);
  auto rep = physloss::total_loss(as_span(out.p), as_span(out.q), s.geom, s.seg, lc);
  if (!std::isfinite(rep.total)) throw Error("non-finite physics loss on twin '" + s.id + "'");
  if (grad) {
    const auto n = static_cast<Index>(rep.grad_p.size());
    const Eigen::VectorXd gq = scale * Eigen::Map<const Eigen::VectorXd>(rep.grad_q.data(), n);
    const Eigen::VectorXd gp = scale * Eigen::Map<const Eigen::VectorXd>(rep.grad_p.data(), n);
    backward(gq, gp, s.ctx, prm, cfg, cache, *grad);
  }
  return rep;
}

struct MeanLoss {
  double residual = 0.0, global = 0.0, local = 0.0, total = 0.0;
};

inline MeanLoss mean_loss(const std::vector<Sample>& samples, const EncoderParams& prm, const EncoderConfig& cfg,
                          const physloss::LossConfig& lc) {
  MeanLoss m;
  for (const auto& s : samples) {
    const auto r = sample_loss(s, prm, cfg, lc);
    m.residual += r.residual;
    m.global += r.global;
    m.local += r.local;
    m.total += r.total;
  }
  const double n = static_cast<double>(samples.size());
  m.residual /= n;
  m.global /= n;
  m.local /= n;
  m.total /= n;
  return m;
}

// ---------------------------------------------------------------------------
// Pretraining

struct OptimConfig {
  double lr = 1e-3;
  double momentum = 0.9;
  std::size_t epochs = 10;
  std::size_t batch_size = 8;
  /// Global gradient-norm clip; 0 disables. Initial physics gradients are ~1e5.
  double clip_norm = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr >= 0.0)) throw Error("optimizer: lr must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("optimizer: momentum must be in [0, 1)");
    if (batch_size < 1) throw Error("optimizer: batch_size must be >= 1");
    if (!(clip_norm >= 0.0)) throw Error("optimizer: clip_norm must be >= 0");
  }
};

struct TrainStep {
  std::size_t step = 0, epoch = 0;
  MeanLoss loss;  // batch means before the update
  double grad_norm = 0.0;
};

inline nlohmann::json to_json(const TrainStep& s) {
  return {{"step", s.step},          {"epoch", s.epoch},       {"residual", s.loss.residual},
          {"global", s.loss.global}, {"local", s.loss.local},  {"total", s.loss.total},
          {"grad_norm", s.grad_norm}};
}

inline double group_norm(const EncoderParams& g, Group which) {
  double sq = 0.0;
  visit(g, [&](const std::string&, const Mat& t, Group grp) {
    if (grp == which) sq += t.squaredNorm();
  });
  return std::sqrt(sq);
}

/// Epoch order: a permutation drawn from the run seed and the epoch index.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch)};
  std::mt19937_64 rng(seq);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

/// SGD with momentum on the encoder and pretraining head.
inline std::vector<TrainStep> pretrain(EncoderParams& prm, const std::vector<Sample>& samples, const EncoderConfig& cfg,
                                       const physloss::LossConfig& lc, const OptimConfig& opt,
                                       const std::function<void(const TrainStep&)>& on_step = {}) {
  if (samples.empty()) throw Error("pretrain: empty corpus");
  opt.validate();
  EncoderParams velocity = zeros_like(prm);
  std::vector<TrainStep> log;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    const auto order = epoch_order(samples.size(), opt.seed, epoch);
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t stop = std::min(order.size(), start + opt.batch_size);
      const double inv = 1.0 / static_cast<double>(stop - start);
      EncoderParams grad = zeros_like(prm);
      TrainStep ts;
      ts.step = step++;
      ts.epoch = epoch;
      for (std::size_t i = start; i < stop; ++i) {
        const auto r = sample_loss(samples[order[i]], prm, cfg, lc, &grad, inv);
        ts.loss.residual += inv * r.residual;
        ts.loss.global += inv * r.global;
        ts.loss.local += inv * r.local;
        ts.loss.total += inv * r.total;
      }
      ts.grad_norm = group_norm(grad, Group::encoder);
      if (!std::isfinite(ts.grad_norm)) throw Error("pretrain: non-finite gradient at step " + std::to_string(ts.step));
      const double clip = (opt.clip_norm > 0.0 && ts.grad_norm > opt.clip_norm) ? opt.clip_norm / ts.grad_norm : 1.0;
      visit2(velocity, grad, [&](Mat& v, const Mat& g, Group grp) {
        if (grp == Group::encoder) v = opt.momentum * v - opt.lr * clip * g;
      });
      visit2(prm, velocity, [&](Mat& p, const Mat& v, Group grp) {
        if (grp == Group::encoder) p += v;
      });
      log.push_back(ts);
      if (on_step) on_step(ts);
    }
  }
  return log;
}

inline void write_log_line(std::ostream& out, const TrainStep& s) { out << to_json(s).dump() << '\n'; }

/// Least-squares slope of total loss against step; negative means decreasing.
inline double loss_trend(const std::vector<TrainStep>& log) {
  if (log.size() < 2) return 0.0;
  const double n = static_cast<double>(log.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& s : log) {
    const double x = static_cast<double>(s.step), y = s.loss.total;
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// ---------------------------------------------------------------------------
// Fine-tuning

struct FinetuneConfig {
  double lr = 0.1;
  double momentum = 0.9;
  std::size_t epochs = 500;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr >= 0.0)) throw Error("finetune: lr must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("finetune: momentum must be in [0, 1)");
  }
};

struct FinetuneResult {
  Eigen::VectorXd probabilities;
  double loss = 0.0;      // final mean binary cross-entropy
  double accuracy = 0.0;  // training accuracy at threshold 0.5
};

inline Mat embeddings(const std::vector<Sample>& samples, const EncoderParams& prm, const EncoderConfig& cfg) {
  Mat e(static_cast<Index>(samples.size()), static_cast<Index>(cfg.embedding_width()));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    e.row(static_cast<Index>(i)) = forward(samples[i].ctx, prm, cfg).embedding.transpose();
  }
  return e;
}

inline double bce(const Eigen::VectorXd& prob, const std::vector<int>& labels) {
  constexpr double tiny = 1e-12;
  double s = 0.0;
  for (Index i = 0; i < prob.size(); ++i) {
    const double p = std::clamp(prob[i], tiny, 1.0 - tiny);
    s -= labels[static_cast<std::size_t>(i)] == 1 ? std::log(p) : std::log(1.0 - p);
  }
  return s / static_cast<double>(prob.size());
}

/// Trains only the classifier head (and its embedding standardization) on
/// fixed embeddings; encoder tensors are never written.
inline FinetuneResult finetune(EncoderParams& prm, const Mat& emb, const std::vector<int>& labels,
                               const EncoderConfig& cfg, const FinetuneConfig& opt) {
  opt.validate();
  if (static_cast<std::size_t>(emb.rows()) != labels.size()) throw Error("finetune: embedding/label count mismatch");
  const auto pos = std::count(labels.begin(), labels.end(), 1);
  const auto neg = std::count(labels.begin(), labels.end(), 0);
  if (pos + neg != static_cast<std::ptrdiff_t>(labels.size())) throw Error("finetune: labels must be 0 or 1");
  if (pos < 2 || neg < 2) throw Error("finetune: need at least 2 labels of each class");
  if (emb.cols() != static_cast<Index>(cfg.embedding_width())) throw Error("finetune: embedding width mismatch");

  prm.embed_mean = emb.colwise().mean();
  Mat centered = emb.rowwise() - prm.embed_mean.row(0);
  prm.embed_std = (centered.array().square().colwise().sum() / static_cast<double>(emb.rows())).sqrt().matrix();
  prm.embed_std = prm.embed_std.cwiseMax(1e-8);

  std::mt19937_64 rng(opt.seed);
  prm.classifier = {he_linear(static_cast<Index>(cfg.embedding_width()), static_cast<Index>(cfg.d), rng),
                    glorot_linear(static_cast<Index>(cfg.d), 1, rng)};
  const Mat x = standardize(emb, prm);
  std::vector<Linear> velocity = prm.classifier;
  for (auto& v : velocity) {
    v.w.setZero();
    v.b.setZero();
  }
  const double n = static_cast<double>(labels.size());
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    MlpCache cache;
    const Mat logit = mlp_forward(x, prm.classifier, true, &cache);
    Mat g(logit.rows(), 1);
    for (Index i = 0; i < logit.rows(); ++i) g(i, 0) = (sigmoid(logit(i, 0)) - labels[static_cast<std::size_t>(i)]) / n;
    std::vector<Linear> grads = velocity;
    for (auto& l : grads) {
      l.w.setZero();
      l.b.setZero();
    }
    mlp_backward(g, prm.classifier, true, cache, grads);
    for (std::size_t i = 0; i < grads.size(); ++i) {
      velocity[i].w = opt.momentum * velocity[i].w - opt.lr * grads[i].w;
      velocity[i].b = opt.momentum * velocity[i].b - opt.lr * grads[i].b;
      prm.classifier[i].w += velocity[i].w;
      prm.classifier[i].b += velocity[i].b;
    }
  }
  FinetuneResult r;
  r.probabilities = classify(emb, prm);
  r.loss = bce(r.probabilities, labels);
  std::size_t correct = 0;
  for (Index i = 0; i < r.probabilities.size(); ++i) {
    correct += (r.probabilities[i] >= 0.5) == (labels[static_cast<std::size_t>(i)] == 1);
  }
  r.accuracy = static_cast<double>(correct) / n;
  return r;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointVersion = 1;

inline std::string shape_string(const Mat& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

inline nlohmann::json checkpoint_json(const EncoderConfig& cfg, const EncoderParams& prm) {
  nlohmann::json tensors = nlohmann::json::array();
  visit(prm, [&](const std::string& name, const Mat& t, Group) {
    tensors.push_back({{"name", name},
                       {"shape", {t.rows(), t.cols()}},
                       {"data", std::vector<double>(t.data(), t.data() + t.size())}});
  });
  return {{"format", "vtwin-checkpoint"}, {"format_version", kCheckpointVersion}, {"config", to_json(cfg)},
          {"tensors", tensors}};
}

/// Parameters shaped by `cfg` filled from checkpoint tensors; every shape must match.
inline EncoderParams params_from_json(const nlohmann::json& tensors, const EncoderConfig& cfg) {
  EncoderParams prm = zeros_like(init_params(cfg));
  std::size_t i = 0;
  visit(prm, [&](const std::string& name, Mat& t, Group) {
    if (i >= tensors.size()) throw Error("checkpoint: missing tensor " + name + " (expected shape " + shape_string(t) + ")");
    const auto& j = tensors[i++];
    const auto got_name = j.at("name").get<std::string>();
    const auto shape = j.at("shape").get<std::vector<Index>>();
    const auto data = j.at("data").get<std::vector<double>>();
    const std::string got_shape = shape.size() == 2 ? std::to_string(shape[0]) + "x" + std::to_string(shape[1]) : "?";
    if (got_name != name || shape.size() != 2 || shape[0] != t.rows() || shape[1] != t.cols()) {
      throw Error("checkpoint/config mismatch: checkpoint tensor " + got_name + " has shape " + got_shape +
                  ", config expects " + name + " with shape " + shape_string(t));
    }
    if (data.size() != static_cast<std::size_t>(t.size())) throw Error("checkpoint: data length mismatch in " + name);
    std::copy(data.begin(), data.end(), t.data());
  });
  if (i != tensors.size()) throw Error("checkpoint: unexpected extra tensors");
  return prm;
}

struct Checkpoint {
  EncoderConfig config;
  EncoderParams params;
};

inline void save_checkpoint(const std::string& path, const EncoderConfig& cfg, const EncoderParams& prm) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint " + path);
  out << checkpoint_json(cfg, prm).dump() << '\n';
  if (!out) throw Error("failed writing checkpoint " + path);
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "vtwin-checkpoint") throw Error("not a checkpoint file");
  if (j.at("format_version").get<int>() != kCheckpointVersion) throw Error("unsupported checkpoint version");
  Checkpoint c;
  c.config = encoder_config_from_json(j.at("config"));
  c.params = params_from_json(j.at("tensors"), c.config);
  return c;
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read checkpoint " + path);
  try {
    return checkpoint_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error("checkpoint " + path + ": " + e.what());
  }
}

/// Checks that a checkpoint fits the run's encoder config; the error names
/// the first differing tensor shape on both sides.
inline void check_compatible(const EncoderConfig& file_cfg, const EncoderConfig& run_cfg) {
  const auto a = init_params(file_cfg), b = init_params(run_cfg);
  std::vector<std::pair<std::string, std::string>> sa, sb;
  visit(a, [&](const std::string& n, const Mat& t, Group) { sa.emplace_back(n, shape_string(t)); });
  visit(b, [&](const std::string& n, const Mat& t, Group) { sb.emplace_back(n, shape_string(t)); });
  for (std::size_t i = 0; i < std::max(sa.size(), sb.size()); ++i) {
    const auto la = i < sa.size() ? sa[i] : std::make_pair(std::string("(none)"), std::string("-"));
    const auto lb = i < sb.size() ? sb[i] : std::make_pair(std::string("(none)"), std::string("-"));
    if (la != lb) {
      throw Error("checkpoint/config mismatch: checkpoint " + la.first + " has shape " + la.second + ", config expects " +
                  lb.first + " with shape " + lb.second);
    }
  }
  auto strip = [](EncoderConfig c) {
    c.seed = 0;
    return c;
  };
  if (!(strip(file_cfg) == strip(run_cfg))) {
    throw Error("checkpoint/config mismatch: encoder settings differ (checkpoint " + to_json(file_cfg).dump() +
                ", config " + to_json(run_cfg).dump() + ")");
  }
}

}  // namespace vtwin::nnet
