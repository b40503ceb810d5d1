#include "decs/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "decs/stability_grad.hpp"

namespace decs {

void TrainConfig::validate() const {
  if (k == 0) throw std::invalid_argument("TrainConfig: k must be >= 1");
  if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (!(sgd_lr > 0.0)) throw std::invalid_argument("TrainConfig: sgd_lr must be > 0");
  if (!(sgd_momentum >= 0.0 && sgd_momentum < 1.0)) {
    throw std::invalid_argument("TrainConfig: sgd_momentum must be in [0, 1)");
  }
  if (!(label_change_tol >= 0.0 && label_change_tol <= 1.0)) {
    throw std::invalid_argument("TrainConfig: label_change_tol must be in [0, 1]");
  }
  if (augment_in_clustering && !augment) {
    throw std::invalid_argument("TrainConfig: augment_in_clustering needs an augment spec");
  }
  StabilityParams{alpha, lambda, 0.5}.validate();
}

namespace {

// Nearest centroid of every row (lowest index on ties) and its squared distance.
void nearest(const EmbeddingBatch& z, const CentroidSet& m, AssignmentLabels& labels,
             std::vector<double>& dist) {
  const std::size_t n = z.rows();
  labels.resize(n);
  dist.resize(n);
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (std::size_t j = 0; j < m.rows(); ++j) {
      const double d = squared_distance(z.row(i), m.row(j));
      if (d < best) {
        best = d;
        arg = static_cast<int>(j);
      }
    }
    labels[i] = arg;
    dist[i] = best;
  }
}

CentroidSet kmeans_plus_plus(const EmbeddingBatch& z, std::size_t k, std::mt19937_64& rng) {
  const std::size_t n = z.rows();
  CentroidSet m(k, z.cols());
  std::vector<char> chosen(n, 0);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  for (std::size_t j = 0; j < k; ++j) {
    if (j > 0) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) total += d2[i];
      if (total > 0.0) {
        const double target = u(rng) * total;
        double acc = 0.0;
        pick = n;
        for (std::size_t i = 0; i < n; ++i) {
          if (d2[i] <= 0.0) continue;
          acc += d2[i];
          pick = i;
          if (acc > target) break;
        }
      } else {
        // Every remaining point coincides with a chosen one.
        pick = static_cast<std::size_t>(std::find(chosen.begin(), chosen.end(), 0) - chosen.begin());
      }
    }
    chosen[pick] = 1;
    std::copy(z.row(pick).begin(), z.row(pick).end(), m.row(j).begin());
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], squared_distance(z.row(i), m.row(j)));
  }
  return m;
}

}  // namespace

KMeansResult kmeans_init(const EmbeddingBatch& z, std::size_t k, std::uint64_t seed,
                         std::size_t max_rounds) {
  if (k == 0) throw std::invalid_argument("kmeans_init: k must be >= 1");
  if (z.rows() < k) {
    throw std::invalid_argument("kmeans_init: " + std::to_string(z.rows()) +
                                " samples cannot form " + std::to_string(k) + " clusters");
  }
  require_finite(z, "kmeans_init input");
  std::mt19937_64 rng(seed);
  KMeansResult r;
  r.centroids = kmeans_plus_plus(z, k, rng);
  const std::size_t n = z.rows(), d = z.cols();
  std::vector<double> dist;
  nearest(z, r.centroids, r.labels, dist);
  AssignmentLabels previous;
  for (r.rounds = 0; r.rounds < max_rounds; ++r.rounds) {
    Matrix sums(k, d);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto j = static_cast<std::size_t>(r.labels[i]);
      ++counts[j];
      auto s = sums.row(j);
      const auto zi = z.row(i);
      for (std::size_t c = 0; c < d; ++c) s[c] += zi[c];
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] == 0) {
        // Re-seed with the point worst served by its current centroid.
        const auto far = static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
        std::copy(z.row(far).begin(), z.row(far).end(), r.centroids.row(j).begin());
        dist[far] = 0.0;
        continue;
      }
      for (std::size_t c = 0; c < d; ++c) r.centroids(j, c) = sums(j, c) / static_cast<double>(counts[j]);
    }
    previous = r.labels;
    nearest(z, r.centroids, r.labels, dist);
    if (r.labels == previous) break;
  }
  r.distortion = std::accumulate(dist.begin(), dist.end(), 0.0) / static_cast<double>(n);
  return r;
}

AssignmentLabels assign_clusters(const AssignmentMatrix& q) {
  AssignmentLabels labels(q.rows());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    const auto row = q.row(i);
    labels[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return labels;
}

std::size_t forward_invariant_violations(const StabilityForward& f) {
  std::size_t bad = 0;
  for (std::size_t i = 0; i < f.q.rows(); ++i) {
    const auto row = f.q.row(i);
    double s = 0.0;
    for (const double v : row) s += v;
    if (!(std::abs(s - 1.0) <= 1e-9)) ++bad;
  }
  for (const double v : f.fq.values().flat()) {
    if (!(v >= 0.0 && v <= 1.0)) ++bad;
  }
  for (const double v : f.sq.values) {
    if (!(v <= 1.0)) ++bad;
  }
  if (!(f.loss >= 0.0)) ++bad;
  return bad;
}

AssignmentLabels predict(const Matrix& x, const EncoderParams& enc, const CentroidSet& m,
                         double alpha) {
  return assign_clusters(co_association(encode(x, enc), m, alpha));
}

namespace {

double label_change_fraction(const AssignmentLabels& a, const AssignmentLabels& b) {
  std::size_t changed = 0;
  for (std::size_t i = 0; i < a.size(); ++i) changed += a[i] != b[i];
  return static_cast<double>(changed) / static_cast<double>(a.size());
}

}  // namespace

TrainResult train(const Matrix& x, const EncoderParams& enc, const TrainConfig& config,
                  const TrainHooks& hooks, const DecoderParams* dec) {
  config.validate();
  if (config.include_reconstruction_in_clustering && dec == nullptr) {
    throw std::invalid_argument("train: reconstruction in clustering needs a decoder");
  }
  if (config.augment) config.augment->validate(x.cols());
  require_finite(x, "train input");

  TrainResult out;
  out.encoder = enc;
  if (config.include_reconstruction_in_clustering) out.decoder = *dec;
  const std::size_t n = x.rows();

  Matrix z_all = encode(x, out.encoder);
  const auto km = kmeans_init(z_all, config.k, config.seed);
  out.centroids = km.centroids;
  out.labels = km.labels;
  out.initial_labels = km.labels;

  StabilityParams params{config.alpha, config.lambda, 0.5};
  const auto snapshot = [&](std::size_t iter) {
    if (!hooks.on_snapshot) return;
    Snapshot s;
    s.iter = iter;
    s.embeddings = encode(x, out.encoder);
    s.centroids = out.centroids;
    s.labels = assign_clusters(co_association(s.embeddings, out.centroids, params.alpha));
    hooks.on_snapshot(s);
  };
  if (config.snapshot_every > 0 && config.max_iter > 0) snapshot(0);

  std::vector<std::span<double>> views;
  if (!config.freeze_encoder) views = parameter_views({&out.encoder});
  if (out.decoder) {
    const auto dv = parameter_views({&*out.decoder});
    views.insert(views.end(), dv.begin(), dv.end());
  }
  views.push_back(out.centroids.flat());
  SgdMomentum sgd(config.sgd_lr, config.sgd_momentum);

  std::mt19937_64 shuffle_rng(config.seed + 1);
  std::mt19937_64 augment_rng(config.augment ? config.augment->seed : 0);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  const auto diverged = [&](const std::string& what) {
    return TrainingDivergence("train: " + what + " at iteration " + std::to_string(out.iterations),
                              out.iterations, out.encoder, out.centroids);
  };

  AssignmentLabels previous = out.labels;
  for (std::size_t epoch = 0; out.iterations < config.max_iter; ++epoch) {
    // Epoch start: threshold, labels and diagnostics over the whole dataset.
    if (epoch > 0) {
      try {
        z_all = encode(x, out.encoder);
      } catch (const NonFiniteError& e) {
        throw diverged(e.what());
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.iter = out.iterations;
    const auto otsu = otsu_threshold(co_association(z_all, out.centroids, params.alpha));
    params.t = otsu.threshold;
    rec.t = otsu.threshold;
    rec.t_degenerate = otsu.degenerate;
    const auto fwd = stability_forward(z_all, out.centroids, params);
    const auto full = clustering_backward(z_all, out.centroids, params);
    if (!std::isfinite(fwd.loss)) throw diverged("non-finite clustering loss");
    rec.loss = fwd.loss;
    rec.mean_stability = fwd.sq.mean();
    rec.grad_norm = full.grads.max_centroid_norm();
    rec.bound_m = lipschitz_bound(z_all, out.centroids, params);
    rec.invariant_violations = forward_invariant_violations(fwd);
    const auto labels = assign_clusters(fwd.q);
    rec.label_change = label_change_fraction(labels, previous);
    out.labels = labels;
    previous = labels;
    const bool stop = epoch > 0 && rec.label_change < config.label_change_tol;

    if (!stop) {
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      for (std::size_t start = 0; start < n && out.iterations < config.max_iter;
           start += config.batch_size) {
        const std::size_t stop_at = std::min(n, start + config.batch_size);
        const std::span<const std::size_t> idx(order.data() + start, stop_at - start);
        Matrix batch = x.gather_rows(idx);
        if (config.augment_in_clustering) batch = augment(batch, *config.augment, augment_rng);

        ForwardCache enc_cache;
        Matrix zb;
        try {
          zb = encode(batch, out.encoder, &enc_cache);
        } catch (const NonFiniteError& e) {
          throw diverged(e.what());
        }
        const auto cb = clustering_backward(zb, out.centroids, params);
        if (!std::isfinite(cb.loss)) throw diverged("non-finite clustering loss");
        const double batch_bound = lipschitz_bound(zb, out.centroids, params);
        if (batch_bound > 0.0) {
          rec.max_batch_bound_ratio =
              std::max(rec.max_batch_bound_ratio, cb.grads.max_centroid_norm() / batch_bound);
        }

        Matrix d_z = cb.grads.d_loss_d_z;
        NetworkGradients dec_grads;
        if (out.decoder) {
          ForwardCache dec_cache;
          const Matrix rec_x = decode(zb, *out.decoder, &dec_cache);
          const double scale = 2.0 / static_cast<double>(batch.rows());
          Matrix d_rec(rec_x.rows(), rec_x.cols());
          for (std::size_t e = 0; e < d_rec.size(); ++e) {
            d_rec.flat()[e] = scale * (rec_x.flat()[e] - batch.flat()[e]);
          }
          const Matrix d_z_rec = backward(*out.decoder, dec_cache, d_rec, dec_grads);
          for (std::size_t e = 0; e < d_z.size(); ++e) d_z.flat()[e] += d_z_rec.flat()[e];
        }
        std::vector<std::span<const double>> grads;
        NetworkGradients enc_grads;
        if (!config.freeze_encoder) {
          backward(out.encoder, enc_cache, d_z, enc_grads);
          grads = gradient_views({&enc_grads});
        }
        if (out.decoder) {
          const auto dg = gradient_views({&dec_grads});
          grads.insert(grads.end(), dg.begin(), dg.end());
        }
        grads.push_back(cb.grads.d_loss_d_m.flat());
        sgd.step(views, grads);

        out.loss_trace.push_back(cb.loss);
        ++out.iterations;
        if (config.snapshot_every > 0 && out.iterations % config.snapshot_every == 0) {
          snapshot(out.iterations);
        }
      }
    }
    out.history.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
    if (stop) {
      out.converged = true;
      break;
    }
  }
  if (out.iterations > 0 && !out.converged) {
    out.labels = predict(x, out.encoder, out.centroids, params.alpha);
  }
  return out;
}

}  // namespace decs
