#pragma once

// Differentiable building blocks with explicit backward rules: GCN
// propagation, Top-K pooling, centerline aggregation and dense layers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "vtwin/error.hpp"

namespace vtwin::nnet {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using SpMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Edge = std::pair<std::uint32_t, std::uint32_t>;
using Index = Eigen::Index;

struct Linear {
  Mat w;  // in x out
  Mat b;  // 1 x out

  Index in() const { return w.rows(); }
  Index out() const { return w.cols(); }
};

/// Uniform(-limit, limit) weights, zero bias.
inline Linear make_linear(Index in, Index out, double limit, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(-limit, limit);
  Linear l;
  l.w.resize(in, out);
  for (Index i = 0; i < l.w.size(); ++i) l.w.data()[i] = uni(rng);
  l.b = Mat::Zero(1, out);
  return l;
}

inline Linear he_linear(Index in, Index out, std::mt19937_64& rng) {
  return make_linear(in, out, std::sqrt(6.0 / static_cast<double>(in)), rng);
}

inline Linear glorot_linear(Index in, Index out, std::mt19937_64& rng) {
  return make_linear(in, out, std::sqrt(6.0 / static_cast<double>(in + out)), rng);
}

inline Mat relu(const Mat& s) { return s.cwiseMax(0.0); }

/// G masked by s > 0.
inline Mat relu_backward(const Mat& g, const Mat& s) {
  return (s.array() > 0.0).select(g, 0.0);
}

inline Mat affine(const Mat& x, const Linear& l) {
  Mat s = x * l.w;
  s.rowwise() += l.b.row(0);
  return s;
}

/// Accumulates dW, db for s = x W + b and returns dx.
inline Mat affine_backward(const Mat& gs, const Mat& x, const Linear& l, Linear& grad) {
  grad.w.noalias() += x.transpose() * gs;
  grad.b += gs.colwise().sum();
  return gs * l.w.transpose();
}

// ---------------------------------------------------------------------------
// GCN

/// D^{-1/2} (A + I) D^{-1/2} over undirected edges.
inline SpMat normalized_adjacency(std::size_t n, const std::vector<Edge>& edges) {
  std::vector<double> degree(n, 1.0);
  for (const auto& [a, b] : edges) {
    if (a == b) throw Error("normalized_adjacency: self-loop in edge list");
    degree[a] += 1.0;
    degree[b] += 1.0;
  }
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(n + 2 * edges.size());
  for (std::size_t i = 0; i < n; ++i) {
    trip.emplace_back(static_cast<Index>(i), static_cast<Index>(i), 1.0 / degree[i]);
  }
  for (const auto& [a, b] : edges) {
    const double w = 1.0 / std::sqrt(degree[a] * degree[b]);
    trip.emplace_back(a, b, w);
    trip.emplace_back(b, a, w);
  }
  SpMat m(static_cast<Index>(n), static_cast<Index>(n));
  m.setFromTriplets(trip.begin(), trip.end());
  return m;
}

struct GcnCache {
  Mat ah;  // A_hat H
  Mat s;   // pre-activation
};

/// relu(A_hat X W + b).
inline Mat gcn_layer(const SpMat& adj, const Mat& x, const Linear& l, GcnCache* cache = nullptr) {
  if (x.cols() != l.in() || adj.cols() != x.rows()) throw Error("gcn_layer: shape mismatch");
  Mat ah = adj * x;
  Mat s = affine(ah, l);
  Mat y = relu(s);
  if (cache) {
    cache->ah = std::move(ah);
    cache->s = std::move(s);
  }
  return y;
}

inline Mat gcn_backward(const Mat& gy, const SpMat& adj, const GcnCache& cache, const Linear& l,
                        Linear& grad) {
  const Mat gs = relu_backward(gy, cache.s);
  const Mat gah = affine_backward(gs, cache.ah, l, grad);
  return adj.transpose() * gah;
}

// ---------------------------------------------------------------------------
// Top-K pooling

struct PoolResult {
  Mat x;                              // kept features gated by tanh(score)
  std::vector<Edge> edges;            // induced on kept nodes, re-indexed
  std::vector<std::uint32_t> kept;    // original indices, ascending
  std::vector<double> gate;           // tanh(score) per kept node
};

inline std::size_t pooled_count(std::size_t n, double ratio) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw Error("topk_pool: ratio must be in (0, 1]");
  const auto k = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9));
  return std::clamp<std::size_t>(k, 1, n);
}

/// Indices of the `count` largest scores (ties to the lower index), ascending.
/// Equal scores are ordered by the rows of `tiebreak` (lexicographic) when
/// given, then by index.
inline std::vector<std::uint32_t> top_indices(const Eigen::VectorXd& score, std::size_t count,
                                              const Mat* tiebreak = nullptr) {
  std::vector<std::uint32_t> idx(static_cast<std::size_t>(score.size()));
  std::iota(idx.begin(), idx.end(), 0u);
  auto before = [&](std::uint32_t a, std::uint32_t b) {
    if (score[a] != score[b]) return score[a] > score[b];
    if (tiebreak) {
      for (Index j = 0; j < tiebreak->cols(); ++j) {
        const double u = (*tiebreak)(a, j), v = (*tiebreak)(b, j);
        if (u != v) return u < v;
      }
    }
    return a < b;
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count), idx.end(), before);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Score y = X p / |p|; keep ceil(ratio n) highest; gate kept rows by tanh(y).
inline PoolResult topk_pool(const Mat& x, const std::vector<Edge>& edges, const Mat& p, double ratio,
                            const Mat* tiebreak = nullptr) {
  if (p.rows() != x.cols() || p.cols() != 1) throw Error("topk_pool: projection shape mismatch");
  const auto n = static_cast<std::size_t>(x.rows());
  // A zero projection scores every node 0.
  const double pn = p.norm();
  const Eigen::VectorXd score = pn > 0.0 ? Eigen::VectorXd((x * p).col(0) / pn) : Eigen::VectorXd::Zero(x.rows());
  PoolResult r;
  r.kept = top_indices(score, pooled_count(n, ratio), tiebreak);
  std::vector<std::int64_t> remap(n, -1);
  r.x.resize(static_cast<Index>(r.kept.size()), x.cols());
  r.gate.resize(r.kept.size());
  for (std::size_t k = 0; k < r.kept.size(); ++k) {
    remap[r.kept[k]] = static_cast<std::int64_t>(k);
    r.gate[k] = std::tanh(score[r.kept[k]]);
    r.x.row(static_cast<Index>(k)) = x.row(r.kept[k]) * r.gate[k];
  }
  for (const auto& [a, b] : edges) {
    if (remap[a] >= 0 && remap[b] >= 0) {
      r.edges.emplace_back(static_cast<std::uint32_t>(remap[a]), static_cast<std::uint32_t>(remap[b]));
    }
  }
  return r;
}

/// Returns dX; accumulates dp.
inline Mat topk_backward(const Mat& gx_out, const Mat& x, const Mat& p, const PoolResult& r, Mat& gp) {
  Mat gx = Mat::Zero(x.rows(), x.cols());
  const double pn = p.norm();
  const Eigen::VectorXd pu = pn > 0.0 ? Eigen::VectorXd(p.col(0) / pn) : Eigen::VectorXd::Zero(p.rows());
  for (std::size_t k = 0; k < r.kept.size(); ++k) {
    const Index v = r.kept[k];
    const auto g = gx_out.row(static_cast<Index>(k));
    const double gate = r.gate[k];
    gx.row(v) += g * gate;
    const double dgate = g.dot(x.row(v));
    const double dy = dgate * (1.0 - gate * gate);
    gx.row(v) += dy * pu.transpose();
    const double proj = x.row(v).dot(pu);
    if (pn > 0.0) gp.col(0) += dy * (x.row(v).transpose() - proj * pu) / pn;
  }
  return gx;
}

// ---------------------------------------------------------------------------
// Centerline aggregation

/// For each query point, indices of the k nearest rows of `coords`; ties to
/// the lower index; nearest first.
inline std::vector<std::uint32_t> knn_indices(const Mat& queries, const Mat& coords, std::size_t k) {
  const auto n = static_cast<std::size_t>(coords.rows());
  if (k == 0 || n < k) throw Error("centerline_aggregate: fewer graph nodes than k_ca");
  std::vector<std::uint32_t> out(static_cast<std::size_t>(queries.rows()) * k);
  std::vector<std::pair<double, std::uint32_t>> d(n);
  for (Index i = 0; i < queries.rows(); ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      d[j] = {(coords.row(static_cast<Index>(j)) - queries.row(i)).squaredNorm(), static_cast<std::uint32_t>(j)};
    }
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
    for (std::size_t j = 0; j < k; ++j) out[static_cast<std::size_t>(i) * k + j] = d[j].second;
  }
  return out;
}

struct AggregateCache {
  Mat gathered;  // (N k) x (D + 3): neighbour features, relative coordinates
  Mat s;         // (N k) x D pre-activation
  std::vector<std::uint32_t> neighbors;
  std::size_t k = 0;
};

/// Per centerline point: mean over its k nearest nodes of
/// relu([F_j, P_j - CP_i] W + b).
inline Mat centerline_aggregate(const Mat& features, const Mat& coords, const Mat& centerline,
                                const std::vector<std::uint32_t>& neighbors, std::size_t k,
                                const Linear& l, AggregateCache* cache = nullptr) {
  const Index d = features.cols();
  if (l.in() != d + 3) throw Error("centerline_aggregate: mixing weight shape mismatch");
  const Index n_cl = centerline.rows();
  if (neighbors.size() != static_cast<std::size_t>(n_cl) * k) throw Error("centerline_aggregate: neighbour table mismatch");
  Mat gathered(n_cl * static_cast<Index>(k), d + 3);
  for (Index i = 0; i < n_cl; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const Index row = i * static_cast<Index>(k) + static_cast<Index>(j);
      const Index v = neighbors[static_cast<std::size_t>(row)];
      gathered.block(row, 0, 1, d) = features.row(v);
      gathered.block(row, d, 1, 3) = coords.row(v) - centerline.row(i);
    }
  }
  Mat s = affine(gathered, l);
  const Mat m = relu(s);
  Mat out(n_cl, l.out());
  for (Index i = 0; i < n_cl; ++i) {
    out.row(i) = m.middleRows(i * static_cast<Index>(k), static_cast<Index>(k)).colwise().mean();
  }
  if (cache) {
    cache->gathered = std::move(gathered);
    cache->s = std::move(s);
    cache->neighbors = neighbors;
    cache->k = k;
  }
  return out;
}

/// Returns d(features); accumulates mixing-weight gradients.
inline Mat aggregate_backward(const Mat& gout, Index num_nodes, const AggregateCache& c, const Linear& l,
                              Linear& grad) {
  const auto k = static_cast<Index>(c.k);
  Mat gm(c.s.rows(), c.s.cols());
  for (Index i = 0; i < gout.rows(); ++i) {
    gm.middleRows(i * k, k).rowwise() = gout.row(i) / static_cast<double>(k);
  }
  const Mat gs = relu_backward(gm, c.s);
  const Mat gg = affine_backward(gs, c.gathered, l, grad);
  const Index d = l.in() - 3;
  Mat gf = Mat::Zero(num_nodes, d);
  for (Index row = 0; row < gg.rows(); ++row) {
    gf.row(c.neighbors[static_cast<std::size_t>(row)]) += gg.block(row, 0, 1, d);
  }
  return gf;
}

// ---------------------------------------------------------------------------
// Multilayer perceptron

struct MlpCache {
  std::vector<Mat> inputs;  // input of each layer
  std::vector<Mat> pre;     // pre-activation of each layer
};

/// Dense layers with relu after each, except the last when `linear_out`.
inline Mat mlp_forward(const Mat& x, const std::vector<Linear>& layers, bool linear_out, MlpCache* cache = nullptr) {
  Mat h = x;
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Mat s = affine(h, layers[i]);
    if (cache) {
      cache->inputs.push_back(h);
      cache->pre.push_back(s);
    }
    h = (linear_out && i + 1 == layers.size()) ? s : relu(s);
  }
  return h;
}

inline Mat mlp_backward(const Mat& gout, const std::vector<Linear>& layers, bool linear_out, const MlpCache& c,
                        std::vector<Linear>& grads) {
  Mat g = gout;
  for (std::size_t i = layers.size(); i-- > 0;) {
    const Mat gs = (linear_out && i + 1 == layers.size()) ? g : relu_backward(g, c.pre[i]);
    g = affine_backward(gs, c.inputs[i], layers[i], grads[i]);
  }
  return g;
}

}  // namespace vtwin::nnet
