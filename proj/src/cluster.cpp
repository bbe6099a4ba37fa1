#include "proxysynth/cluster.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "proxysynth/errors.hpp"

namespace proxysynth {

namespace {

double sq_dist(const double* a, const double* b, int dim) {
  double s = 0.0;
  for (int i = 0; i < dim; ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

std::size_t count_distinct(std::span<const double> points, int dim, std::size_t enough) {
  const std::size_t n = points.size() / dim;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto row = [&](std::size_t i) { return points.begin() + static_cast<std::ptrdiff_t>(i * dim); };
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::lexicographical_compare(row(a), row(a) + dim, row(b), row(b) + dim);
  });
  std::size_t distinct = n ? 1 : 0;
  for (std::size_t i = 1; i < n && distinct < enough; ++i) {
    if (!std::equal(row(order[i]), row(order[i]) + dim, row(order[i - 1]))) ++distinct;
  }
  return distinct;
}

// One restart: k-means++ seeding then Lloyd iterations to an assignment fixpoint.
KMeansResult lloyd(std::span<const double> points, int dim, int k, std::mt19937_64& rng, int max_iter) {
  const std::size_t n = points.size() / dim;
  const double* p = points.data();
  KMeansResult r;
  r.centroids.assign(static_cast<std::size_t>(k) * dim, 0.0);

  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::size_t first = pick(rng);
  std::copy_n(p + first * dim, dim, r.centroids.begin());
  for (int c = 1; c < k; ++c) {
    const double* prev = &r.centroids[static_cast<std::size_t>(c - 1) * dim];
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], sq_dist(p + i * dim, prev, dim));
      total += nearest[i];
    }
    std::size_t chosen = 0;
    if (total > 0.0) {
      double u = std::uniform_real_distribution<double>(0.0, total)(rng), acc = 0.0;
      chosen = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += nearest[i];
        if (acc >= u && nearest[i] > 0.0) {
          chosen = i;
          break;
        }
      }
    }
    std::copy_n(p + chosen * dim, dim, r.centroids.begin() + static_cast<std::ptrdiff_t>(c) * dim);
  }

  r.labels.assign(n, -1);
  std::vector<double> dist(n);
  std::vector<double> sums(static_cast<std::size_t>(k) * dim);
  std::vector<std::size_t> counts(k);
  for (int it = 0; it < max_iter; ++it) {
    bool changed = false;
    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        double d = sq_dist(p + i * dim, &r.centroids[static_cast<std::size_t>(c) * dim], dim);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (r.labels[i] != best) changed = true;
      r.labels[i] = best;
      dist[i] = best_d;
      objective += best_d;
    }
    r.objective = objective;
    r.objective_history.push_back(objective);
    r.iterations = it + 1;
    if (!changed) break;

    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[r.labels[i]];
      double* s = &sums[static_cast<std::size_t>(r.labels[i]) * dim];
      for (int d = 0; d < dim; ++d) s[d] += p[i * dim + d];
    }
    for (int c = 0; c < k; ++c) {
      double* centroid = &r.centroids[static_cast<std::size_t>(c) * dim];
      if (counts[c] > 0) {
        for (int d = 0; d < dim; ++d) centroid[d] = sums[static_cast<std::size_t>(c) * dim + d] / counts[c];
        continue;
      }
      // Empty cluster: move it onto the point farthest from its current centroid.
      std::size_t far = static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
      std::copy_n(p + far * dim, dim, centroid);
      dist[far] = 0.0;
      ++r.reseeded_clusters;
    }
  }
  return r;
}

// Single-point transfers: moving x from cluster a (size n_a > 1) to b changes
// the objective by n_b/(n_b+1) |x-c_b|^2 - n_a/(n_a-1) |x-c_a|^2. Applies the
// best strictly negative move per point until a sweep makes none.
void refine_transfers(std::span<const double> points, int dim, int k, KMeansResult& r) {
  const std::size_t n = points.size() / dim;
  const double* p = points.data();
  std::vector<double> sums(static_cast<std::size_t>(k) * dim, 0.0);
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < n; ++i) {
    ++counts[r.labels[i]];
    for (int d = 0; d < dim; ++d) sums[static_cast<std::size_t>(r.labels[i]) * dim + d] += p[i * dim + d];
  }
  std::vector<double> centroid(dim);
  auto dist_to = [&](std::size_t i, int c) {
    double s = 0.0;
    for (int d = 0; d < dim; ++d) {
      double diff = p[i * dim + d] - sums[static_cast<std::size_t>(c) * dim + d] / counts[c];
      s += diff * diff;
    }
    return s;
  };
  for (int sweep = 0; sweep < 1000; ++sweep) {
    bool moved = false;
    for (std::size_t i = 0; i < n; ++i) {
      const int a = r.labels[i];
      if (counts[a] <= 1) continue;
      const double na = static_cast<double>(counts[a]);
      const double leave = na / (na - 1.0) * dist_to(i, a);
      int best = a;
      double best_delta = -1e-12 * std::max(1.0, leave);
      for (int b = 0; b < k; ++b) {
        if (b == a) continue;
        const double nb = static_cast<double>(counts[b]);
        const double join = counts[b] ? nb / (nb + 1.0) * dist_to(i, b) : 0.0;
        if (join - leave < best_delta) {
          best_delta = join - leave;
          best = b;
        }
      }
      if (best == a) continue;
      for (int d = 0; d < dim; ++d) {
        sums[static_cast<std::size_t>(a) * dim + d] -= p[i * dim + d];
        sums[static_cast<std::size_t>(best) * dim + d] += p[i * dim + d];
      }
      --counts[a];
      ++counts[best];
      r.labels[i] = best;
      moved = true;
    }
    if (!moved) break;
    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) objective += dist_to(i, r.labels[i]);
    r.objective = objective;
    r.objective_history.push_back(objective);
  }
  for (int c = 0; c < k; ++c)
    for (int d = 0; d < dim && counts[c]; ++d)
      r.centroids[static_cast<std::size_t>(c) * dim + d] = sums[static_cast<std::size_t>(c) * dim + d] / counts[c];
}

torch::Tensor normalized(const torch::Tensor& f, const ClusterModel& model) {
  if (!model.normalizes()) return f;
  auto mean = model.channel_mean.to(f.dtype()).view({1, -1, 1, 1});
  auto std = model.channel_std.to(f.dtype()).view({1, -1, 1, 1});
  return (f - mean) / std;
}

void check_features(const torch::Tensor& f, const ClusterModel& model, const char* what) {
  if (f.dim() != 4 || f.size(1) != model.channels())
    throw DimensionError(std::string(what) + ": feature channels must equal centroid width " +
                         std::to_string(model.channels()));
}

}  // namespace

KMeansResult kmeans(std::span<const double> points, int dim, int k, std::uint64_t seed, const KMeansOptions& opts) {
  if (dim <= 0 || points.size() % dim != 0) throw DimensionError("kmeans: point buffer is not a whole number of rows");
  if (k < 1) throw DegenerateInputError("kmeans: k must be positive");
  if (count_distinct(points, dim, static_cast<std::size_t>(k)) < static_cast<std::size_t>(k))
    throw DegenerateInputError("fit_clusters: fewer than " + std::to_string(k) + " distinct feature vectors");

  std::mt19937_64 rng(seed);
  KMeansResult best;
  best.objective = std::numeric_limits<double>::infinity();
  for (int run = 0; run < std::max(1, opts.n_init); ++run) {
    auto r = lloyd(points, dim, k, rng, opts.max_iter);
    if (opts.refine) refine_transfers(points, dim, k, r);
    if (r.objective < best.objective) best = std::move(r);
  }
  return best;
}

ClusterModel fit_clusters(const torch::Tensor& features, int k, std::uint64_t seed, double tau,
                          const KMeansOptions& opts, bool normalize) {
  if (features.dim() != 4) throw DimensionError("fit_clusters: expected features [N,C,H,W]");
  if (!(tau > 0)) throw ConfigError("fit_clusters: tau must be > 0");
  ClusterModel model;
  model.tau = tau;
  auto f = features.detach().to(torch::kFloat64);
  if (normalize) {
    model.channel_mean = f.mean({0, 2, 3}).to(torch::kFloat32);
    model.channel_std = (f.std({0, 2, 3}) + 1e-6).to(torch::kFloat32);
    f = normalized(f, model);
  }
  const int dim = static_cast<int>(f.size(1));
  auto rows = f.permute({0, 2, 3, 1}).reshape({-1, dim}).contiguous();
  std::span<const double> points(rows.data_ptr<double>(), static_cast<std::size_t>(rows.numel()));
  auto result = kmeans(points, dim, k, seed, opts);
  model.centroids = torch::from_blob(result.centroids.data(), {k, dim}, torch::kFloat64).to(torch::kFloat32).clone();
  model.fitted_on = rows.size(0);
  return model;
}

torch::Tensor cluster_logits(const torch::Tensor& f, const ClusterModel& model) {
  check_features(f, model, "assign");
  auto x = normalized(f, model);
  auto c = model.centroids.to(x.dtype()).detach().view({1, model.k(), model.channels(), 1, 1});
  auto d2 = (x.unsqueeze(1) - c).pow(2).sum(2);  // [B, K, H, W]
  return -d2 / model.tau;
}

torch::Tensor assign_hard(const torch::Tensor& f, const ClusterModel& model) {
  torch::NoGradGuard guard;
  check_features(f, model, "assign_hard");
  auto x = normalized(f, model);
  auto c = model.centroids.to(x.dtype()).view({1, model.k(), model.channels(), 1, 1});
  auto d2 = (x.unsqueeze(1) - c).pow(2).sum(2);
  return d2.argmin(1);
}

torch::Tensor assign_soft(const torch::Tensor& f, const ClusterModel& model) {
  return torch::softmax(cluster_logits(f, model), 1);
}

torch::Tensor hflip(const torch::Tensor& x) { return x.flip({-1}); }

}  // namespace proxysynth
