#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "decs/autoencoder.hpp"
#include "decs/metrics.hpp"
#include "decs/stability.hpp"

namespace decs {

struct TrainConfig {
  std::size_t k = 10;
  double alpha = 1.0;
  double lambda = 0.8;
  std::size_t batch_size = 256;
  std::size_t max_iter = 10000;
  double sgd_lr = 0.01;
  double sgd_momentum = 0.9;
  double label_change_tol = 0.001;
  std::uint64_t seed = 0;
  std::size_t snapshot_every = 0;  ///< 0 disables snapshots
  /// Adds the reconstruction loss to L_c and trains the decoder as well.
  bool include_reconstruction_in_clustering = false;
  /// Keeps encoder weights fixed; only centroids move.
  bool freeze_encoder = false;
  /// Feeds augmented batches to the encoder during clustering.
  bool augment_in_clustering = false;
  std::optional<AugmentSpec> augment;

  /// Throws std::invalid_argument on out-of-range fields.
  void validate() const;
};

struct KMeansResult {
  CentroidSet centroids;
  AssignmentLabels labels;
  std::size_t rounds = 0;
  double distortion = 0.0;  ///< mean squared distance to the assigned centroid
};

/// k-means++ seeding followed by Lloyd rounds until assignments stop changing
/// or `max_rounds` is reached. An emptied cluster is re-seeded with the point
/// farthest from its own centroid. Throws std::invalid_argument if n < k.
KMeansResult kmeans_init(const EmbeddingBatch& z, std::size_t k, std::uint64_t seed,
                         std::size_t max_rounds = 300);

/// Per-sample argmax of q; ties go to the lowest index.
AssignmentLabels assign_clusters(const AssignmentMatrix& q);

/// Counts entries breaking the forward invariants: q rows summing to 1
/// within 1e-9, fq in [0, 1], sq <= 1, loss >= 0.
std::size_t forward_invariant_violations(const StabilityForward& f);

/// Measured once per epoch on the full dataset, before that epoch's updates.
struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t iter = 0;           ///< iterations completed before this epoch
  double loss = 0.0;              ///< L_c over all samples
  double t = 0.5;
  bool t_degenerate = false;
  double grad_norm = 0.0;         ///< largest per-centroid gradient norm, full batch
  double bound_m = 0.0;           ///< Lipschitz bound for the same (z, m, t)
  double mean_stability = 0.0;
  double label_change = 1.0;      ///< fraction of labels changed since the previous epoch
  std::size_t invariant_violations = 0;
  /// Largest ratio of a mini-batch centroid-gradient norm to that batch's own
  /// bound during this epoch (0 when no batch ran).
  double max_batch_bound_ratio = 0.0;
};

struct Snapshot {
  std::size_t iter = 0;
  Matrix embeddings;
  CentroidSet centroids;
  AssignmentLabels labels;
};

struct TrainHooks {
  std::function<void(const Snapshot&)> on_snapshot;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  EncoderParams encoder;
  std::optional<DecoderParams> decoder;
  CentroidSet centroids;
  AssignmentLabels labels;
  AssignmentLabels initial_labels;  ///< from kmeans_init
  std::vector<EpochRecord> history;
  std::vector<double> loss_trace;  ///< mini-batch L_c per iteration
  std::size_t iterations = 0;
  bool converged = false;  ///< stopped by the label-change tolerance
};

/// Non-finite loss during clustering. Carries the last finite state.
class TrainingDivergence : public std::runtime_error {
 public:
  TrainingDivergence(const std::string& what, std::size_t iter, EncoderParams enc, CentroidSet m)
      : std::runtime_error(what), iter_(iter), encoder_(std::move(enc)), centroids_(std::move(m)) {}
  std::size_t iter() const noexcept { return iter_; }
  const EncoderParams& encoder() const noexcept { return encoder_; }
  const CentroidSet& centroids() const noexcept { return centroids_; }

 private:
  std::size_t iter_;
  EncoderParams encoder_;
  CentroidSet centroids_;
};

/// Joint SGD-with-momentum optimization of encoder weights and centroids on
/// the stability loss, starting from k-means on the pretrained embedding.
/// Every epoch recomputes t by Otsu over the full q, relabels, and stops once
/// the label-change fraction falls below the tolerance (checked from the
/// second epoch) or max_iter iterations have run. `dec` is required when
/// include_reconstruction_in_clustering is set.
TrainResult train(const Matrix& x, const EncoderParams& enc, const TrainConfig& config,
                  const TrainHooks& hooks = {}, const DecoderParams* dec = nullptr);

/// Labels of `x` under an encoder and centroid set.
AssignmentLabels predict(const Matrix& x, const EncoderParams& enc, const CentroidSet& m,
                         double alpha);

}  // namespace decs
