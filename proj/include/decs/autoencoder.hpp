#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "decs/gradcheck.hpp"
#include "decs/matrix.hpp"

namespace decs {

enum class Activation { relu, identity };

/// y = act(x W^T + b) with W stored out x in.
struct DenseLayer {
  Matrix weights;
  std::vector<double> bias;
  Activation activation = Activation::relu;

  std::size_t in() const noexcept { return weights.cols(); }
  std::size_t out() const noexcept { return weights.rows(); }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Ordered dense layers. The last layer of a network is always identity.
struct Network {
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t parameter_count() const noexcept;
  /// Throws DimensionError if consecutive layers do not chain.
  void validate() const;

  friend bool operator==(const Network&, const Network&) = default;
};

struct EncoderParams : Network {
  std::size_t latent_dim() const { return output_dim(); }
};
struct DecoderParams : Network {};

/// Builds a relu network through `widths` (input first, output last) with an
/// identity output layer. Weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Network make_network(std::span<const std::size_t> widths, std::mt19937_64& rng);

/// Encoder input -> hidden... -> latent and the mirrored decoder, drawn from one seed.
struct Autoencoder {
  EncoderParams encoder;
  DecoderParams decoder;
};
Autoencoder make_autoencoder(std::size_t input_dim, std::span<const std::size_t> hidden,
                             std::size_t latent_dim, std::uint64_t seed);

/// Per-layer activations of one forward pass: activations[0] is the input,
/// activations[l + 1] the output of layer l.
struct ForwardCache {
  std::vector<Matrix> activations;
  const Matrix& output() const { return activations.back(); }
};

/// Forward pass. Throws DimensionError on a width mismatch and NonFiniteError
/// if any activation stops being finite.
Matrix forward(const Network& net, const Matrix& x, ForwardCache* cache = nullptr);
Matrix encode(const Matrix& x, const EncoderParams& enc, ForwardCache* cache = nullptr);
Matrix decode(const Matrix& z, const DecoderParams& dec, ForwardCache* cache = nullptr);

struct LayerGradients {
  Matrix d_weights;
  std::vector<double> d_bias;
};

struct NetworkGradients {
  std::vector<LayerGradients> layers;

  /// Zero gradients shaped like `net`.
  static NetworkGradients zeros_like(const Network& net);
  double squared_norm() const noexcept;
};

/// Back-propagates `d_output` through the cached pass, writing parameter
/// gradients into `grads` (overwritten) and returning the input gradient.
Matrix backward(const Network& net, const ForwardCache& cache, const Matrix& d_output,
                NetworkGradients& grads);

/// (1/n) * sum_i ||x_rec_i - x_aug_i||^2
double reconstruction_loss(const Matrix& x_aug, const Matrix& x_rec);

struct AutoencoderGradients {
  double loss = 0.0;
  NetworkGradients encoder;
  NetworkGradients decoder;
};

/// Gradients of reconstruction_loss(x_aug, decode(encode(x_aug))).
AutoencoderGradients ae_backward(const Matrix& x_aug, const EncoderParams& enc,
                                 const DecoderParams& dec);

/// Finite-difference check of ae_backward on every weight and bias.
GradCheckReport ae_gradient_check(const Matrix& x_aug, EncoderParams enc, DecoderParams dec,
                                  double tolerance, double step = 1e-6,
                                  double magnitude_floor = 1e-3);

/// Seeded random network + data sweep used by the gradcheck tool.
GradCheckReport ae_gradient_check(std::uint64_t seed, double tolerance, std::size_t input_dim = 6,
                                  std::size_t latent_dim = 2, std::size_t samples = 5);

// ---------------------------------------------------------------------------
// Augmentation

enum class AugmentMode { image, vector };

struct AugmentSpec {
  AugmentMode mode = AugmentMode::vector;
  std::size_t max_shift_px = 2;
  double max_rotate_deg = 10.0;
  double noise_sigma = 0.01;
  std::uint64_t seed = 0;
  /// Required in image mode; input width must equal height * width.
  std::optional<std::size_t> image_height;
  std::optional<std::size_t> image_width;

  void validate(std::size_t input_dim) const;
};

/// Shifts an H x W image by (dx, dy) pixels (dx moves columns right, dy rows
/// down) after rotating it by `degrees` about its center with nearest-neighbour
/// sampling. Pixels mapped from outside the frame become 0.
void transform_image(std::span<const double> in, std::size_t height, std::size_t width, int dx,
                     int dy, double degrees, std::span<double> out);

/// Augments every row, drawing per-sample parameters from `rng`.
Matrix augment(const Matrix& x, const AugmentSpec& spec, std::mt19937_64& rng);
/// Same, seeded from spec.seed.
Matrix augment(const Matrix& x, const AugmentSpec& spec);

// ---------------------------------------------------------------------------
// Optimizers over flat parameter views

/// Mutable views of every weight and bias of the listed networks, in layer order.
std::vector<std::span<double>> parameter_views(std::initializer_list<Network*> nets);
std::vector<std::span<const double>> gradient_views(
    std::initializer_list<const NetworkGradients*> grads);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}
  /// One bias-corrected update of `params` from matching `grads`.
  void step(const std::vector<std::span<double>>& params,
            const std::vector<std::span<const double>>& grads);
  std::size_t steps() const noexcept { return t_; }

 private:
  AdamConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t t_ = 0;
};

/// v = momentum * v - lr * g;  p += v
class SgdMomentum {
 public:
  SgdMomentum(double learning_rate, double momentum) : lr_(learning_rate), momentum_(momentum) {}
  void step(const std::vector<std::span<double>>& params,
            const std::vector<std::span<const double>>& grads);

 private:
  double lr_;
  double momentum_;
  std::vector<std::vector<double>> velocity_;
};

// ---------------------------------------------------------------------------
// Pretraining

/// Raised when the reconstruction loss stops being finite.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::size_t epoch, std::size_t step)
      : std::runtime_error(what), epoch_(epoch), step_(step) {}
  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t epoch_;
  std::size_t step_;
};

struct PretrainConfig {
  std::size_t epochs = 500;
  std::size_t batch_size = 256;
  AdamConfig adam{};
  std::uint64_t seed = 0;
  /// Augment inputs (and with them the reconstruction targets) when set.
  std::optional<AugmentSpec> augment;
};

struct PretrainResult {
  std::vector<double> epoch_loss;  ///< mean mini-batch loss per epoch
};

/// Adam on reconstruction loss over shuffled mini-batches. Deterministic for a
/// fixed config. Throws DivergenceError on a non-finite loss.
PretrainResult pretrain(const Matrix& x, EncoderParams& enc, DecoderParams& dec,
                        const PretrainConfig& config,
                        const std::function<void(std::size_t, double)>& on_epoch = {});

}  // namespace decs
