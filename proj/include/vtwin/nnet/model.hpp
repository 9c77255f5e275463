#pragma once

// Hierarchical GCN encoder with Top-K pooling and centerline aggregation,
// the (Q, P) pretraining head and the classification head.

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "vtwin/geometry.hpp"
#include "vtwin/hemo1d.hpp"
#include "vtwin/nnet/layers.hpp"
#include "vtwin/vgraph.hpp"

namespace vtwin::nnet {

enum class EmbeddingPool { mean, max };

struct EncoderConfig {
  std::size_t d = 64;
  std::size_t blocks = 3;
  std::size_t layers_per_block = 4;
  double pool_ratio = 0.5;
  std::size_t k_ca = 8;
  std::size_t n_centerline = 500;
  std::uint64_t seed = 0;
  /// Q = q_scale (1 + out_0) in cm^3/s, P = p_scale (1 + out_1) in dyne/cm^2.
  double q_scale = 1.0;
  double p_scale = 100.0 * hemo::kDynePerMmHg;
  /// Multipliers for the node features (x, y, z, area, distance).
  std::array<double, 5> input_scale{1.0, 1.0, 1.0, 100.0, 10.0};
  EmbeddingPool embedding_pool = EmbeddingPool::mean;

  void validate() const {
    if (d < 1) throw Error("EncoderConfig: d must be >= 1");
    if (blocks < 1 || layers_per_block < 1) throw Error("EncoderConfig: blocks and layers_per_block must be >= 1");
    if (!(pool_ratio > 0.0 && pool_ratio <= 1.0)) throw Error("EncoderConfig: pool_ratio must be in (0, 1]");
    if (k_ca < 1) throw Error("EncoderConfig: k_ca must be >= 1");
    if (n_centerline < 2) throw Error("EncoderConfig: n_centerline must be >= 2");
    if (!(q_scale > 0.0) || !(p_scale > 0.0)) throw Error("EncoderConfig: output scales must be > 0");
  }

  std::size_t width(std::size_t block) const { return (block + 1) * d; }
  std::size_t top_width() const { return width(blocks - 1); }
  std::size_t concat_width() const { return d * blocks * (blocks + 1) / 2; }
  std::size_t embedding_width() const { return top_width(); }

  bool operator==(const EncoderConfig&) const = default;
};

inline const char* to_string(EmbeddingPool p) { return p == EmbeddingPool::mean ? "mean" : "max"; }

inline nlohmann::json to_json(const EncoderConfig& c) {
  return {{"d", c.d}, {"blocks", c.blocks}, {"layers_per_block", c.layers_per_block},
          {"pool_ratio", c.pool_ratio}, {"k_ca", c.k_ca}, {"n_centerline", c.n_centerline},
          {"seed", c.seed}, {"q_scale", c.q_scale}, {"p_scale", c.p_scale},
          {"input_scale", c.input_scale}, {"embedding_pool", to_string(c.embedding_pool)}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.d = j.at("d").get<std::size_t>();
  c.blocks = j.at("blocks").get<std::size_t>();
  c.layers_per_block = j.at("layers_per_block").get<std::size_t>();
  c.pool_ratio = j.at("pool_ratio").get<double>();
  c.k_ca = j.at("k_ca").get<std::size_t>();
  c.n_centerline = j.at("n_centerline").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.q_scale = j.at("q_scale").get<double>();
  c.p_scale = j.at("p_scale").get<double>();
  c.input_scale = j.at("input_scale").get<std::array<double, 5>>();
  const auto pool = j.at("embedding_pool").get<std::string>();
  if (pool != "mean" && pool != "max") throw Error("embedding_pool must be mean or max");
  c.embedding_pool = pool == "mean" ? EmbeddingPool::mean : EmbeddingPool::max;
  c.validate();
  return c;
}

struct EncoderParams {
  std::vector<Linear> gcn;   // blocks * layers_per_block
  std::vector<Mat> pool;     // blocks - 1 projection vectors, width x 1
  std::vector<Linear> ca;    // one mixing layer per level
  std::vector<Linear> fusion;
  std::vector<Linear> head;  // 4 layers, last linear
  std::vector<Linear> classifier;
  Mat embed_mean, embed_std;  // standardization of embeddings, 1 x width
};

enum class Group { encoder, classifier, stats };

/// Calls f(name, tensor, group) for every tensor in a fixed order.
template <class Params, class F>
void visit(Params& p, F&& f) {
  auto lin = [&](auto& layers, const std::string& prefix, Group g) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      f(prefix + "." + std::to_string(i) + ".w", layers[i].w, g);
      f(prefix + "." + std::to_string(i) + ".b", layers[i].b, g);
    }
  };
  lin(p.gcn, "gcn", Group::encoder);
  for (std::size_t i = 0; i < p.pool.size(); ++i) f("pool." + std::to_string(i) + ".p", p.pool[i], Group::encoder);
  lin(p.ca, "ca", Group::encoder);
  lin(p.fusion, "fusion", Group::encoder);
  lin(p.head, "head", Group::encoder);
  lin(p.classifier, "classifier", Group::classifier);
  f(std::string("embed.mean"), p.embed_mean, Group::stats);
  f(std::string("embed.std"), p.embed_std, Group::stats);
}

/// Calls f(a_tensor, b_tensor, group) over matching tensors.
template <class A, class B, class F>
void visit2(A& a, B& b, F&& f) {
  std::vector<decltype(&b.embed_mean)> bs;
  visit(b, [&](const std::string&, auto& t, Group) { bs.push_back(&t); });
  std::size_t i = 0;
  visit(a, [&](const std::string&, auto& t, Group g) { f(t, *bs[i++], g); });
}

inline std::vector<std::size_t> head_widths(const EncoderConfig& c) {
  const std::size_t t = c.top_width();
  return {t, 2 * c.d, c.d, std::max<std::size_t>(c.d / 2, 1), 2};
}

inline EncoderParams init_params(const EncoderConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  auto ix = [](std::size_t v) { return static_cast<Index>(v); };
  EncoderParams p;
  std::size_t in = vgraph::kFeatureDim;
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    for (std::size_t l = 0; l < cfg.layers_per_block; ++l) {
      p.gcn.push_back(he_linear(ix(in), ix(cfg.width(b)), rng));
      in = cfg.width(b);
    }
  }
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  for (std::size_t b = 0; b + 1 < cfg.blocks; ++b) {
    Mat v(ix(cfg.width(b)), 1);
    for (Index i = 0; i < v.rows(); ++i) v(i, 0) = uni(rng);
    p.pool.push_back(v);
  }
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    p.ca.push_back(he_linear(ix(cfg.width(b) + 3), ix(cfg.width(b)), rng));
  }
  p.fusion.push_back(he_linear(ix(cfg.concat_width()), ix(cfg.top_width()), rng));
  p.fusion.push_back(he_linear(ix(cfg.top_width()), ix(cfg.top_width()), rng));
  const auto hw = head_widths(cfg);
  for (std::size_t i = 0; i + 1 < hw.size(); ++i) {
    if (i + 2 == hw.size()) {
      // Small output layer: initial predictions stay near (q_scale, p_scale).
      p.head.push_back(make_linear(ix(hw[i]), ix(hw[i + 1]), 0.1 * std::sqrt(6.0 / double(hw[i] + hw[i + 1])), rng));
    } else {
      p.head.push_back(he_linear(ix(hw[i]), ix(hw[i + 1]), rng));
    }
  }
  p.classifier.push_back(he_linear(ix(cfg.embedding_width()), ix(cfg.d), rng));
  p.classifier.push_back(glorot_linear(ix(cfg.d), 1, rng));
  p.embed_mean = Mat::Zero(1, ix(cfg.embedding_width()));
  p.embed_std = Mat::Ones(1, ix(cfg.embedding_width()));
  return p;
}

inline EncoderParams zeros_like(const EncoderParams& p) {
  EncoderParams z = p;
  visit(z, [](const std::string&, Mat& t, Group) { t.setZero(); });
  return z;
}

// ---------------------------------------------------------------------------
// Forward / backward

/// Parameter-independent inputs derived from one graph.
struct GraphContext {
  Mat features;    // scaled node features
  Mat coords;      // node coordinates
  std::vector<Edge> edges;
  SpMat adj;
  Mat centerline;  // n_centerline x 3
  std::vector<std::uint32_t> knn0;
};

inline Mat centerline_matrix(const Centerline& c, std::size_t n) {
  const auto r = resample(c, n);
  Mat m(static_cast<Index>(n), 3);
  for (std::size_t i = 0; i < n; ++i) m.row(static_cast<Index>(i)) = r.points()[i].transpose();
  return m;
}

inline GraphContext make_context(const vgraph::VascularGraph& g, const EncoderConfig& cfg) {
  cfg.validate();
  GraphContext c;
  c.features = g.node_features;
  for (Index j = 0; j < c.features.cols(); ++j) c.features.col(j) *= cfg.input_scale[static_cast<std::size_t>(j)];
  c.coords = g.node_coords;
  c.edges = g.edges;
  c.adj = normalized_adjacency(g.num_nodes(), g.edges);
  c.centerline = centerline_matrix(g.centerline, cfg.n_centerline);
  c.knn0 = knn_indices(c.centerline, c.coords, cfg.k_ca);
  return c;
}

struct LevelCache {
  SpMat adj;
  Mat coords;
  std::vector<Edge> edges;
  std::vector<GcnCache> gcn;
  Mat out;
  AggregateCache ca;
  PoolResult pool;  // pooling from this level to the next
};

struct ForwardResult {
  Eigen::VectorXd q, p;
  Eigen::VectorXd embedding;
  Mat fused;  // n_centerline x top width
};

struct ForwardCache {
  std::vector<LevelCache> levels;
  MlpCache fusion, head;
};

inline ForwardResult forward(const GraphContext& ctx, const EncoderParams& prm, const EncoderConfig& cfg,
                             ForwardCache* cache = nullptr) {
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.levels.assign(cfg.blocks, {});
  std::vector<Mat> ca_out;
  Mat h = ctx.features;
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    auto& lv = c.levels[b];
    const SpMat& adj = b == 0 ? ctx.adj : lv.adj;
    const Mat& coords = b == 0 ? ctx.coords : lv.coords;
    lv.gcn.resize(cfg.layers_per_block);
    for (std::size_t l = 0; l < cfg.layers_per_block; ++l) {
      h = gcn_layer(adj, h, prm.gcn[b * cfg.layers_per_block + l], &lv.gcn[l]);
    }
    lv.out = h;
    const auto knn = b == 0 ? ctx.knn0 : knn_indices(ctx.centerline, coords, cfg.k_ca);
    ca_out.push_back(centerline_aggregate(h, coords, ctx.centerline, knn, cfg.k_ca, prm.ca[b], &lv.ca));
    if (b + 1 < cfg.blocks) {
      lv.pool = topk_pool(h, b == 0 ? ctx.edges : lv.edges, prm.pool[b], cfg.pool_ratio, &coords);
      auto& next = c.levels[b + 1];
      next.coords.resize(static_cast<Index>(lv.pool.kept.size()), 3);
      for (std::size_t k = 0; k < lv.pool.kept.size(); ++k) {
        next.coords.row(static_cast<Index>(k)) = coords.row(lv.pool.kept[k]);
      }
      next.edges = lv.pool.edges;
      next.adj = normalized_adjacency(lv.pool.kept.size(), next.edges);
      h = lv.pool.x;
    }
  }
  Mat cat(ctx.centerline.rows(), static_cast<Index>(cfg.concat_width()));
  Index col = 0;
  for (const auto& m : ca_out) {
    cat.middleCols(col, m.cols()) = m;
    col += m.cols();
  }
  ForwardResult r;
  r.fused = mlp_forward(cat, prm.fusion, false, &c.fusion);
  const Mat out = mlp_forward(r.fused, prm.head, true, &c.head);
  r.q = cfg.q_scale * (1.0 + out.col(0).array()).matrix();
  r.p = cfg.p_scale * (1.0 + out.col(1).array()).matrix();
  r.embedding = cfg.embedding_pool == EmbeddingPool::mean ? Eigen::VectorXd(r.fused.colwise().mean().transpose())
                                                          : Eigen::VectorXd(r.fused.colwise().maxCoeff().transpose());
  return r;
}

inline ForwardResult forward(const vgraph::VascularGraph& g, const EncoderParams& prm, const EncoderConfig& cfg) {
  return forward(make_context(g, cfg), prm, cfg);
}

/// Accumulates d(loss)/d(encoder params) into `grad` given dL/dQ and dL/dP.
inline void backward(const Eigen::VectorXd& gq, const Eigen::VectorXd& gp, const GraphContext& ctx,
                     const EncoderParams& prm, const EncoderConfig& cfg, const ForwardCache& c,
                     EncoderParams& grad) {
  Mat gout(gq.size(), 2);
  gout.col(0) = gq * cfg.q_scale;
  gout.col(1) = gp * cfg.p_scale;
  const Mat gfused = mlp_backward(gout, prm.head, true, c.head, grad.head);
  const Mat gcat = mlp_backward(gfused, prm.fusion, false, c.fusion, grad.fusion);
  std::vector<Index> offset(cfg.blocks, 0);
  for (std::size_t b = 1; b < cfg.blocks; ++b) offset[b] = offset[b - 1] + static_cast<Index>(cfg.width(b - 1));
  Mat gx_next;  // gradient w.r.t. the input of the level above
  for (std::size_t b = cfg.blocks; b-- > 0;) {
    const auto& lv = c.levels[b];
    const SpMat& adj = b == 0 ? ctx.adj : lv.adj;
    Mat gh = aggregate_backward(gcat.middleCols(offset[b], static_cast<Index>(cfg.width(b))), lv.out.rows(), lv.ca,
                                prm.ca[b], grad.ca[b]);
    if (b + 1 < cfg.blocks) gh += topk_backward(gx_next, lv.out, prm.pool[b], lv.pool, grad.pool[b]);
    for (std::size_t l = cfg.layers_per_block; l-- > 0;) {
      const std::size_t idx = b * cfg.layers_per_block + l;
      gh = gcn_backward(gh, adj, lv.gcn[l], prm.gcn[idx], grad.gcn[idx]);
    }
    gx_next = std::move(gh);
  }
}

// ---------------------------------------------------------------------------
// Classification head

/// Standardized embedding.
inline Mat standardize(const Mat& emb, const EncoderParams& p) {
  Mat z = emb;
  z.rowwise() -= p.embed_mean.row(0);
  z.array().rowwise() /= p.embed_std.row(0).array();
  return z;
}

inline double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

/// Event probabilities for rows of raw embeddings.
inline Eigen::VectorXd classify(const Mat& embeddings, const EncoderParams& p, MlpCache* cache = nullptr) {
  const Mat logit = mlp_forward(standardize(embeddings, p), p.classifier, true, cache);
  Eigen::VectorXd out(logit.rows());
  for (Index i = 0; i < logit.rows(); ++i) out[i] = sigmoid(logit(i, 0));
  return out;
}

}  // namespace vtwin::nnet
