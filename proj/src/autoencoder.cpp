#include "decs/autoencoder.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "decs/kernels.hpp"

namespace decs {

std::size_t Network::input_dim() const {
  if (layers.empty()) throw DimensionError("network has no layers");
  return layers.front().in();
}

std::size_t Network::output_dim() const {
  if (layers.empty()) throw DimensionError("network has no layers");
  return layers.back().out();
}

std::size_t Network::parameter_count() const noexcept {
  std::size_t total = 0;
  for (const auto& l : layers) total += l.weights.size() + l.bias.size();
  return total;
}

void Network::validate() const {
  if (layers.empty()) throw DimensionError("network has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.bias.size() != layer.out()) {
      throw DimensionError("layer " + std::to_string(l) + ": bias length " +
                           std::to_string(layer.bias.size()) + " != " +
                           std::to_string(layer.out()));
    }
    if (l > 0 && layers[l - 1].out() != layer.in()) {
      throw DimensionError("layer " + std::to_string(l) + " expects " +
                           std::to_string(layer.in()) + " inputs, previous layer gives " +
                           std::to_string(layers[l - 1].out()));
    }
  }
}

Network make_network(std::span<const std::size_t> widths, std::mt19937_64& rng) {
  if (widths.size() < 2) throw std::invalid_argument("make_network: need at least two widths");
  Network net;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t in = widths[l], out = widths[l + 1];
    if (in == 0 || out == 0) throw std::invalid_argument("make_network: zero width");
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    DenseLayer layer;
    layer.weights = Matrix(out, in);
    for (auto& w : layer.weights.flat()) w = u(rng);
    layer.bias.resize(out);
    for (auto& b : layer.bias) b = u(rng);
    layer.activation = l + 2 == widths.size() ? Activation::identity : Activation::relu;
    net.layers.push_back(std::move(layer));
  }
  return net;
}

Autoencoder make_autoencoder(std::size_t input_dim, std::span<const std::size_t> hidden,
                             std::size_t latent_dim, std::uint64_t seed) {
  std::vector<std::size_t> widths{input_dim};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(latent_dim);
  std::mt19937_64 rng(seed);
  Autoencoder ae;
  static_cast<Network&>(ae.encoder) = make_network(widths, rng);
  std::reverse(widths.begin(), widths.end());
  static_cast<Network&>(ae.decoder) = make_network(widths, rng);
  return ae;
}

Matrix forward(const Network& net, const Matrix& x, ForwardCache* cache) {
  net.validate();
  if (x.cols() != net.input_dim()) {
    throw DimensionError("forward: input has " + std::to_string(x.cols()) +
                         " columns, network expects " + std::to_string(net.input_dim()));
  }
  if (cache) {
    cache->activations.clear();
    cache->activations.reserve(net.layers.size() + 1);
    cache->activations.push_back(x);
  }
  Matrix a = x;
  Matrix y;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    kernels::gemm_nt(a, layer.weights, y);
    const std::size_t n = y.rows(), out = y.cols();
    bool finite = true;
#pragma omp parallel for schedule(static) reduction(&& : finite)
    for (std::size_t i = 0; i < n; ++i) {
      double* row = y.data() + i * out;
      for (std::size_t j = 0; j < out; ++j) {
        double v = row[j] + layer.bias[j];
        if (layer.activation == Activation::relu && v < 0.0) v = 0.0;
        finite = finite && std::isfinite(v);
        row[j] = v;
      }
    }
    if (!finite) throw NonFiniteError("forward: non-finite activation in layer " + std::to_string(l));
    std::swap(a, y);
    if (cache) cache->activations.push_back(a);
  }
  return a;
}

Matrix encode(const Matrix& x, const EncoderParams& enc, ForwardCache* cache) {
  return forward(enc, x, cache);
}

Matrix decode(const Matrix& z, const DecoderParams& dec, ForwardCache* cache) {
  return forward(dec, z, cache);
}

NetworkGradients NetworkGradients::zeros_like(const Network& net) {
  NetworkGradients g;
  for (const auto& l : net.layers) {
    g.layers.push_back({Matrix(l.out(), l.in()), std::vector<double>(l.out(), 0.0)});
  }
  return g;
}

double NetworkGradients::squared_norm() const noexcept {
  double s = 0.0;
  for (const auto& l : layers) {
    for (const double v : l.d_weights.flat()) s += v * v;
    for (const double v : l.d_bias) s += v * v;
  }
  return s;
}

Matrix backward(const Network& net, const ForwardCache& cache, const Matrix& d_output,
                NetworkGradients& grads) {
  const std::size_t depth = net.layers.size();
  if (cache.activations.size() != depth + 1) {
    throw DimensionError("backward: cache does not match network depth");
  }
  const Matrix& out = cache.output();
  if (d_output.rows() != out.rows() || d_output.cols() != out.cols()) {
    throw DimensionError("backward: output gradient shape mismatch");
  }
  grads.layers.resize(depth);
  Matrix delta = d_output;
  Matrix next;
  for (std::size_t l = depth; l-- > 0;) {
    const auto& layer = net.layers[l];
    const Matrix& y = cache.activations[l + 1];
    const std::size_t n = delta.rows(), width = delta.cols();
    if (layer.activation == Activation::relu) {
      // Output is zero exactly where the pre-activation was clipped.
      for (std::size_t e = 0; e < delta.size(); ++e) {
        if (y.flat()[e] <= 0.0) delta.flat()[e] = 0.0;
      }
    }
    auto& g = grads.layers[l];
    kernels::gemm_tn(delta, cache.activations[l], g.d_weights);
    g.d_bias.assign(width, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = delta.row(i);
      for (std::size_t j = 0; j < width; ++j) g.d_bias[j] += row[j];
    }
    kernels::gemm_nn(delta, layer.weights, next);
    std::swap(delta, next);
  }
  return delta;
}

double reconstruction_loss(const Matrix& x_aug, const Matrix& x_rec) {
  if (x_aug.rows() != x_rec.rows() || x_aug.cols() != x_rec.cols()) {
    throw DimensionError("reconstruction_loss: shape mismatch");
  }
  if (x_aug.rows() == 0) throw DimensionError("reconstruction_loss: empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < x_aug.rows(); ++i) total += squared_distance(x_rec.row(i), x_aug.row(i));
  return total / static_cast<double>(x_aug.rows());
}

AutoencoderGradients ae_backward(const Matrix& x_aug, const EncoderParams& enc,
                                 const DecoderParams& dec) {
  ForwardCache enc_cache, dec_cache;
  const Matrix z = encode(x_aug, enc, &enc_cache);
  const Matrix rec = decode(z, dec, &dec_cache);
  if (rec.cols() != x_aug.cols()) throw DimensionError("ae_backward: decoder output width mismatch");
  AutoencoderGradients out;
  out.loss = reconstruction_loss(x_aug, rec);
  const double scale = 2.0 / static_cast<double>(x_aug.rows());
  Matrix d_rec(rec.rows(), rec.cols());
  for (std::size_t e = 0; e < rec.size(); ++e) d_rec.flat()[e] = scale * (rec.flat()[e] - x_aug.flat()[e]);
  const Matrix d_z = backward(dec, dec_cache, d_rec, out.decoder);
  backward(enc, enc_cache, d_z, out.encoder);
  return out;
}

namespace {

void check_network(GradCheckBuilder& builder, const std::string& name, Network& net,
                   const NetworkGradients& grads, double step, const std::function<double()>& loss) {
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    auto& layer = net.layers[l];
    const std::string prefix = name + "." + std::to_string(l);
    builder.begin_block(prefix + ".weight");
    for (std::size_t r = 0; r < layer.out(); ++r) {
      for (std::size_t c = 0; c < layer.in(); ++c) {
        const double numeric = central_difference(layer.weights(r, c), step, loss);
        builder.add("[" + std::to_string(r) + "][" + std::to_string(c) + "]",
                    grads.layers[l].d_weights(r, c), numeric);
      }
    }
    builder.begin_block(prefix + ".bias");
    for (std::size_t r = 0; r < layer.out(); ++r) {
      const double numeric = central_difference(layer.bias[r], step, loss);
      builder.add("[" + std::to_string(r) + "]", grads.layers[l].d_bias[r], numeric);
    }
  }
}

}  // namespace

GradCheckReport ae_gradient_check(const Matrix& x_aug, EncoderParams enc, DecoderParams dec,
                                  double tolerance, double step, double magnitude_floor) {
  if (!(tolerance > 0.0)) throw std::invalid_argument("ae_gradient_check: tolerance must be > 0");
  const auto analytic = ae_backward(x_aug, enc, dec);
  const auto loss = [&] { return reconstruction_loss(x_aug, decode(encode(x_aug, enc), dec)); };
  GradCheckBuilder builder(tolerance, magnitude_floor);
  check_network(builder, "encoder", enc, analytic.encoder, step, loss);
  check_network(builder, "decoder", dec, analytic.decoder, step, loss);
  return builder.finish();
}

GradCheckReport ae_gradient_check(std::uint64_t seed, double tolerance, std::size_t input_dim,
                                  std::size_t latent_dim, std::size_t samples) {
  const std::size_t hidden[] = {4};
  const auto ae = make_autoencoder(input_dim, hidden, latent_dim, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix x(samples, input_dim);
  for (auto& v : x.flat()) v = u(rng);
  return ae_gradient_check(x, ae.encoder, ae.decoder, tolerance);
}

// ---------------------------------------------------------------------------

void AugmentSpec::validate(std::size_t input_dim) const {
  if (!(max_rotate_deg >= 0.0) || !(noise_sigma >= 0.0)) {
    throw std::invalid_argument("AugmentSpec: magnitudes must be non-negative");
  }
  if (mode == AugmentMode::image) {
    if (!image_height || !image_width) {
      throw std::invalid_argument("AugmentSpec: image mode requires image height and width");
    }
    if (*image_height * *image_width != input_dim) {
      throw DimensionError("AugmentSpec: image " + std::to_string(*image_height) + "x" +
                           std::to_string(*image_width) + " does not match input width " +
                           std::to_string(input_dim));
    }
  }
}

void transform_image(std::span<const double> in, std::size_t height, std::size_t width, int dx,
                     int dy, double degrees, std::span<double> out) {
  if (in.size() != height * width || out.size() != in.size()) {
    throw DimensionError("transform_image: buffer size does not match image shape");
  }
  const double theta = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  const double cy = (static_cast<double>(height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(width) - 1.0) / 2.0;
  const auto h = static_cast<long>(height), w = static_cast<long>(width);
  for (long r = 0; r < h; ++r) {
    for (long c = 0; c < w; ++c) {
      // Undo the shift, then the rotation, and sample the nearest source pixel.
      const double u = static_cast<double>(c - dx) - cx;
      const double v = static_cast<double>(r - dy) - cy;
      const long sc = std::lround(cs * u + sn * v + cx);
      const long sr = std::lround(-sn * u + cs * v + cy);
      const bool inside = sr >= 0 && sr < h && sc >= 0 && sc < w;
      out[static_cast<std::size_t>(r * w + c)] =
          inside ? in[static_cast<std::size_t>(sr * w + sc)] : 0.0;
    }
  }
}

Matrix augment(const Matrix& x, const AugmentSpec& spec, std::mt19937_64& rng) {
  spec.validate(x.cols());
  Matrix out(x.rows(), x.cols());
  if (spec.mode == AugmentMode::vector) {
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t e = 0; e < x.size(); ++e) out.flat()[e] = x.flat()[e] + spec.noise_sigma * noise(rng);
    return out;
  }
  const auto s = static_cast<int>(spec.max_shift_px);
  std::uniform_int_distribution<int> shift(-s, s);
  std::uniform_real_distribution<double> angle(-spec.max_rotate_deg, spec.max_rotate_deg);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const int dx = shift(rng);
    const int dy = shift(rng);
    const double deg = spec.max_rotate_deg > 0.0 ? angle(rng) : 0.0;
    transform_image(x.row(i), *spec.image_height, *spec.image_width, dx, dy, deg, out.row(i));
  }
  return out;
}

Matrix augment(const Matrix& x, const AugmentSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  return augment(x, spec, rng);
}

// ---------------------------------------------------------------------------

std::vector<std::span<double>> parameter_views(std::initializer_list<Network*> nets) {
  std::vector<std::span<double>> views;
  for (Network* net : nets) {
    for (auto& l : net->layers) {
      views.push_back(l.weights.flat());
      views.push_back(l.bias);
    }
  }
  return views;
}

std::vector<std::span<const double>> gradient_views(
    std::initializer_list<const NetworkGradients*> grads) {
  std::vector<std::span<const double>> views;
  for (const NetworkGradients* g : grads) {
    for (const auto& l : g->layers) {
      views.push_back(l.d_weights.flat());
      views.push_back(l.d_bias);
    }
  }
  return views;
}

namespace {

void check_views(const std::vector<std::span<double>>& params,
                 const std::vector<std::span<const double>>& grads) {
  if (params.size() != grads.size()) throw DimensionError("optimizer: parameter/gradient count mismatch");
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (params[p].size() != grads[p].size()) throw DimensionError("optimizer: view size mismatch");
  }
}

void ensure_state(std::vector<std::vector<double>>& state,
                  const std::vector<std::span<double>>& params) {
  if (state.empty()) {
    for (const auto& p : params) state.emplace_back(p.size(), 0.0);
  } else if (state.size() != params.size()) {
    throw DimensionError("optimizer: parameter set changed between steps");
  }
}

}  // namespace

void Adam::step(const std::vector<std::span<double>>& params,
                const std::vector<std::span<const double>>& grads) {
  check_views(params, grads);
  ensure_state(m_, params);
  ensure_state(v_, params);
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double lr = config_.learning_rate, eps = config_.epsilon;
  for (std::size_t p = 0; p < params.size(); ++p) {
    double* w = params[p].data();
    const double* g = grads[p].data();
    double* m = m_[p].data();
    double* v = v_[p].data();
    const std::size_t len = params[p].size();
#pragma omp parallel for simd schedule(static)
    for (std::size_t e = 0; e < len; ++e) {
      m[e] = b1 * m[e] + (1.0 - b1) * g[e];
      v[e] = b2 * v[e] + (1.0 - b2) * g[e] * g[e];
      w[e] -= lr * (m[e] / c1) / (std::sqrt(v[e] / c2) + eps);
    }
  }
}

void SgdMomentum::step(const std::vector<std::span<double>>& params,
                       const std::vector<std::span<const double>>& grads) {
  check_views(params, grads);
  ensure_state(velocity_, params);
  for (std::size_t p = 0; p < params.size(); ++p) {
    double* w = params[p].data();
    const double* g = grads[p].data();
    double* vel = velocity_[p].data();
    const std::size_t len = params[p].size();
#pragma omp parallel for simd schedule(static)
    for (std::size_t e = 0; e < len; ++e) {
      vel[e] = momentum_ * vel[e] - lr_ * g[e];
      w[e] += vel[e];
    }
  }
}

// ---------------------------------------------------------------------------

PretrainResult pretrain(const Matrix& x, EncoderParams& enc, DecoderParams& dec,
                        const PretrainConfig& config,
                        const std::function<void(std::size_t, double)>& on_epoch) {
  if (config.batch_size == 0) throw std::invalid_argument("pretrain: batch_size must be > 0");
  if (!(config.adam.learning_rate > 0.0)) throw std::invalid_argument("pretrain: learning rate must be > 0");
  if (x.rows() == 0) throw DimensionError("pretrain: empty dataset");
  require_finite(x, "pretrain input");
  if (config.augment) config.augment->validate(x.cols());

  std::mt19937_64 shuffle_rng(config.seed);
  std::mt19937_64 augment_rng(config.augment ? config.augment->seed : 0);
  std::vector<std::size_t> order(x.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Adam adam(config.adam);
  const auto params = parameter_views({&enc, &dec});

  PretrainResult result;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double weighted = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      Matrix batch = x.gather_rows(idx);
      if (config.augment) batch = augment(batch, *config.augment, augment_rng);
      const std::string where = " at epoch " + std::to_string(epoch) + ", step " + std::to_string(step);
      AutoencoderGradients g;
      try {
        g = ae_backward(batch, enc, dec);
      } catch (const NonFiniteError& e) {
        throw DivergenceError(std::string("pretrain: ") + e.what() + where, epoch, step);
      }
      if (!std::isfinite(g.loss)) {
        throw DivergenceError("pretrain: reconstruction loss became non-finite" + where, epoch, step);
      }
      adam.step(params, gradient_views({&g.encoder, &g.decoder}));
      weighted += g.loss * static_cast<double>(idx.size());
      ++step;
    }
    const double mean = weighted / static_cast<double>(x.rows());
    result.epoch_loss.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  return result;
}

}  // namespace decs
