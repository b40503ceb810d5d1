#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "decs/autoencoder.hpp"
#include "decs/data_io.hpp"

using namespace decs;

namespace {

Network single_layer(Matrix w, std::vector<double> b, Activation act) {
  Network net;
  net.layers.push_back({std::move(w), std::move(b), act});
  return net;
}

EncoderParams as_encoder(Network n) {
  EncoderParams e;
  static_cast<Network&>(e) = std::move(n);
  return e;
}

DecoderParams as_decoder(Network n) {
  DecoderParams d;
  static_cast<Network&>(d) = std::move(n);
  return d;
}

Matrix uniform(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix m(r, c);
  for (auto& v : m.flat()) v = u(rng);
  return m;
}

// Cyclic Jacobi eigenvalues of a symmetric matrix.
std::vector<double> symmetric_eigenvalues(Matrix a) {
  const std::size_t n = a.rows();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a(i, i);
  std::sort(ev.begin(), ev.end());
  return ev;
}

// Best achievable (1/n) sum ||x - x_hat||^2 with a rank-r affine reconstruction.
double pca_floor(const Matrix& x, std::size_t r) {
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) mean[c] += x(i, c) / static_cast<double>(n);
  Matrix cov(d, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b)
        cov(a, b) += (x(i, a) - mean[a]) * (x(i, b) - mean[b]) / static_cast<double>(n);
  const auto ev = symmetric_eigenvalues(cov);
  double floor = 0.0;
  for (std::size_t k = 0; k + r < d; ++k) floor += ev[k];
  return floor;
}

}  // namespace

TEST_SUITE("network construction") {
  TEST_CASE("make_autoencoder mirrors widths and ends in identity layers") {
    const std::size_t hidden[] = {5, 4};
    const auto ae = make_autoencoder(7, hidden, 2, 3);
    REQUIRE(ae.encoder.layers.size() == 3);
    REQUIRE(ae.decoder.layers.size() == 3);
    CHECK(ae.encoder.input_dim() == 7);
    CHECK(ae.encoder.latent_dim() == 2);
    CHECK(ae.decoder.input_dim() == 2);
    CHECK(ae.decoder.output_dim() == 7);
    CHECK(ae.decoder.layers[1].out() == 5);
    CHECK(ae.encoder.layers[0].activation == Activation::relu);
    CHECK(ae.encoder.layers.back().activation == Activation::identity);
    CHECK(ae.decoder.layers.back().activation == Activation::identity);
    for (const auto& l : ae.encoder.layers) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(l.in()));
      for (const double w : l.weights.flat()) CHECK(std::abs(w) <= bound);
    }
    CHECK(make_autoencoder(7, hidden, 2, 3).encoder == ae.encoder);
    CHECK_FALSE(make_autoencoder(7, hidden, 2, 4).encoder == ae.encoder);
  }

  TEST_CASE("validate catches broken chains") {
    Network n = single_layer(Matrix(3, 2), {0, 0, 0}, Activation::relu);
    n.layers.push_back({Matrix(2, 4), {0, 0}, Activation::identity});
    CHECK_THROWS_AS(n.validate(), DimensionError);
    Network bad_bias = single_layer(Matrix(3, 2), {0, 0}, Activation::identity);
    CHECK_THROWS_AS(bad_bias.validate(), DimensionError);
    CHECK_THROWS_AS(Network{}.validate(), DimensionError);
  }
}

TEST_SUITE("encode / decode") {
  TEST_CASE("zero parameters give a zero embedding and reconstruction") {
    const auto enc = as_encoder(single_layer(Matrix(3, 5), std::vector<double>(3, 0.0), Activation::relu));
    const Matrix x = uniform(4, 5, 1);
    const Matrix z = encode(x, enc);
    for (const double v : z.flat()) CHECK(v == 0.0);
    const auto dec = as_decoder(single_layer(Matrix(5, 3), std::vector<double>(5, 0.0), Activation::identity));
    const Matrix rec = decode(z, dec);
    CHECK(rec.rows() == 4);
    CHECK(rec.cols() == 5);
    for (const double v : rec.flat()) CHECK(v == 0.0);
  }

  TEST_CASE("identity layer passes input through") {
    Matrix eye(4, 4);
    for (std::size_t i = 0; i < 4; ++i) eye(i, i) = 1.0;
    const auto enc = as_encoder(single_layer(eye, std::vector<double>(4, 0.0), Activation::identity));
    Matrix x = uniform(3, 4, 2);
    x(0, 0) = -2.5;
    CHECK(encode(x, enc) == x);
  }

  TEST_CASE("orthonormal linear encoder is inverted by its transpose") {
    // Rotation in the plane of coordinates (0, 2).
    const double a = 0.7;
    Matrix q(3, 3);
    q(0, 0) = std::cos(a), q(0, 2) = -std::sin(a);
    q(1, 1) = 1.0;
    q(2, 0) = std::sin(a), q(2, 2) = std::cos(a);
    Matrix qt(3, 3);
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 3; ++c) qt(r, c) = q(c, r);
    const auto enc = as_encoder(single_layer(q, {0.0, 0.0, 0.0}, Activation::identity));
    const auto dec = as_decoder(single_layer(qt, {0.0, 0.0, 0.0}, Activation::identity));
    const Matrix x = uniform(6, 3, 3);
    const Matrix rec = decode(encode(x, enc), dec);
    for (std::size_t e = 0; e < x.size(); ++e) CHECK(std::abs(rec.flat()[e] - x.flat()[e]) <= 1e-10);
  }

  TEST_CASE("forward is deterministic and caches every activation") {
    const std::size_t hidden[] = {8};
    const auto ae = make_autoencoder(5, hidden, 3, 11);
    const Matrix x = uniform(7, 5, 4);
    ForwardCache cache;
    const Matrix z1 = encode(x, ae.encoder, &cache);
    CHECK(encode(x, ae.encoder) == z1);
    REQUIRE(cache.activations.size() == 3);
    CHECK(cache.activations[0] == x);
    CHECK(cache.output() == z1);
    for (const double v : cache.activations[1].flat()) CHECK(v >= 0.0);
  }

  TEST_CASE("errors") {
    const std::size_t hidden[] = {4};
    const auto ae = make_autoencoder(5, hidden, 2, 0);
    CHECK_THROWS_AS(encode(Matrix(2, 4), ae.encoder), DimensionError);
    Matrix x(1, 5, 0.0);
    x(0, 1) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(encode(x, ae.encoder), NonFiniteError);
  }
}

TEST_SUITE("reconstruction_loss") {
  TEST_CASE("examples") {
    const Matrix x(2, 3, 0.25);
    CHECK(reconstruction_loss(x, x) == 0.0);
    CHECK(reconstruction_loss(Matrix(1, 4, 0.0), Matrix(1, 4, 1.0)) == 4.0);
    const Matrix a = uniform(5, 3, 7), b = uniform(5, 3, 8);
    Matrix b2 = a;
    for (std::size_t e = 0; e < a.size(); ++e) b2.flat()[e] = a.flat()[e] + 2.0 * (b.flat()[e] - a.flat()[e]);
    CHECK(reconstruction_loss(a, b2) == doctest::Approx(4.0 * reconstruction_loss(a, b)).epsilon(1e-14));
    CHECK_THROWS_AS(reconstruction_loss(Matrix(2, 3), Matrix(3, 2)), DimensionError);
  }
}

TEST_SUITE("ae_backward") {
  TEST_CASE("matches finite differences on a small network") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto report = ae_gradient_check(seed, 1e-5);
      CAPTURE(seed);
      CAPTURE(report.max_rel_err);
      CHECK(report.pass);
      CHECK(report.checked > 0);
    }
  }

  TEST_CASE("perfect reconstruction has zero gradient") {
    Matrix eye(3, 3);
    for (std::size_t i = 0; i < 3; ++i) eye(i, i) = 1.0;
    const auto enc = as_encoder(single_layer(eye, {0, 0, 0}, Activation::identity));
    const auto dec = as_decoder(single_layer(eye, {0, 0, 0}, Activation::identity));
    const auto g = ae_backward(uniform(4, 3, 5), enc, dec);
    CHECK(g.loss == 0.0);
    CHECK(g.encoder.squared_norm() == 0.0);
    CHECK(g.decoder.squared_norm() == 0.0);
  }

  TEST_CASE("dead relu unit gets no weight gradient") {
    const std::size_t hidden[] = {4};
    auto ae = make_autoencoder(6, hidden, 2, 12);
    // Unit 1 of the first layer: negative weights and bias on non-negative input.
    auto& first = ae.encoder.layers[0];
    for (std::size_t c = 0; c < 6; ++c) first.weights(1, c) = -0.5;
    first.bias[1] = -0.1;
    const auto g = ae_backward(uniform(8, 6, 6), ae.encoder, ae.decoder);
    for (std::size_t c = 0; c < 6; ++c) CHECK(g.encoder.layers[0].d_weights(1, c) == 0.0);
    CHECK(g.encoder.layers[0].d_bias[1] == 0.0);
    double other = 0.0;
    for (const std::size_t unit : {0, 2, 3})
      for (std::size_t c = 0; c < 6; ++c) other += std::abs(g.encoder.layers[0].d_weights(unit, c));
    CHECK(other > 0.0);
  }

  TEST_CASE("backward rejects a mismatched cache") {
    const std::size_t hidden[] = {4};
    const auto ae = make_autoencoder(6, hidden, 2, 1);
    ForwardCache cache;
    encode(uniform(3, 6, 1), ae.encoder, &cache);
    NetworkGradients g;
    CHECK_THROWS_AS(backward(ae.decoder, cache, Matrix(3, 6), g), DimensionError);
    CHECK_THROWS_AS(backward(ae.encoder, cache, Matrix(2, 2), g), DimensionError);
  }
}

TEST_SUITE("augment") {
  TEST_CASE("zero magnitudes are the identity") {
    const Matrix x = uniform(5, 12, 9);
    AugmentSpec vec;
    vec.noise_sigma = 0.0;
    CHECK(augment(x, vec) == x);
    AugmentSpec img;
    img.mode = AugmentMode::image;
    img.image_height = 3;
    img.image_width = 4;
    img.max_shift_px = 0;
    img.max_rotate_deg = 0.0;
    CHECK(augment(x, img) == x);
  }

  TEST_CASE("fixed seed reproduces the batch, different seed does not") {
    const Matrix x = uniform(6, 16, 10);
    AugmentSpec spec;
    spec.mode = AugmentMode::image;
    spec.image_height = 4;
    spec.image_width = 4;
    spec.seed = 42;
    const Matrix a = augment(x, spec);
    CHECK(augment(x, spec) == a);
    AugmentSpec vec;
    vec.seed = 42;
    CHECK(augment(x, vec) == augment(x, vec));
    vec.seed = 43;
    CHECK_FALSE(augment(x, vec) == augment(x, AugmentSpec{.seed = 42}));
  }

  TEST_CASE("vector noise has the requested scale") {
    const Matrix x(200, 50, 0.5);
    AugmentSpec spec;
    spec.noise_sigma = 0.01;
    const Matrix y = augment(x, spec);
    double ss = 0.0;
    for (std::size_t e = 0; e < x.size(); ++e) ss += (y.flat()[e] - 0.5) * (y.flat()[e] - 0.5);
    CHECK(std::sqrt(ss / static_cast<double>(x.size())) == doctest::Approx(0.01).epsilon(0.05));
  }

  TEST_CASE("shift moves a one-hot pixel") {
    std::vector<double> img(5 * 5, 0.0), out(25);
    img[2 * 5 + 2] = 1.0;
    transform_image(img, 5, 5, 1, 0, 0.0, out);
    CHECK(out[2 * 5 + 3] == 1.0);
    CHECK(std::count(out.begin(), out.end(), 1.0) == 1);
    transform_image(img, 5, 5, 0, -2, 0.0, out);
    CHECK(out[0 * 5 + 2] == 1.0);
    transform_image(img, 5, 5, 3, 0, 0.0, out);  // shifted off the frame
    CHECK(std::count(out.begin(), out.end(), 0.0) == 25);
  }

  TEST_CASE("quarter turn rotates about the center") {
    std::vector<double> img(3 * 3, 0.0), out(9);
    img[0 * 3 + 2] = 1.0;  // top-right corner
    transform_image(img, 3, 3, 0, 0, 90.0, out);
    CHECK(std::count(out.begin(), out.end(), 1.0) == 1);
    CHECK(out[4] == 0.0);
    CHECK((out[0] == 1.0 || out[8] == 1.0));  // a corner adjacent by a quarter turn
    CHECK(out[6] == 0.0);
  }

  TEST_CASE("augmented sample stays within the configured envelope") {
    // A single bright pixel may move at most shift + rotation displacement.
    std::vector<double> base(28 * 28, 0.0);
    base[14 * 28 + 20] = 1.0;
    Matrix x(50, 28 * 28);
    for (std::size_t i = 0; i < 50; ++i) std::copy(base.begin(), base.end(), x.row(i).begin());
    AugmentSpec spec;
    spec.mode = AugmentMode::image;
    spec.image_height = 28;
    spec.image_width = 28;
    const Matrix y = augment(x, spec);
    for (std::size_t i = 0; i < 50; ++i) {
      const auto row = y.row(i);
      for (std::size_t p = 0; p < row.size(); ++p) {
        if (row[p] == 0.0) continue;
        const double r = static_cast<double>(p / 28), c = static_cast<double>(p % 28);
        // radius 6.5 from center, 10 degrees -> arc < 1.2 px, plus shift <= 2 per axis, plus rounding
        CHECK(std::hypot(r - 14.0, c - 20.0) <= 1.2 + 2.0 * std::sqrt(2.0) + 1.0);
      }
    }
  }

  TEST_CASE("image mode requires matching metadata") {
    AugmentSpec spec;
    spec.mode = AugmentMode::image;
    CHECK_THROWS_AS(augment(Matrix(2, 9), spec), std::invalid_argument);
    spec.image_height = 2;
    spec.image_width = 4;
    CHECK_THROWS_AS(augment(Matrix(2, 9), spec), DimensionError);
    AugmentSpec neg;
    neg.noise_sigma = -1.0;
    CHECK_THROWS_AS(augment(Matrix(2, 9), neg), std::invalid_argument);
  }
}

TEST_SUITE("optimizers") {
  TEST_CASE("first Adam step moves each parameter by lr against the gradient sign") {
    std::vector<double> w{1.0, -2.0, 0.5};
    const std::vector<double> g{0.3, -4.0, 0.0};
    Adam adam;
    adam.step({std::span<double>(w)}, {std::span<const double>(g)});
    CHECK(w[0] == doctest::Approx(1.0 - 1e-3).epsilon(1e-9));
    CHECK(w[1] == doctest::Approx(-2.0 + 1e-3).epsilon(1e-9));
    CHECK(w[2] == 0.5);
    CHECK(adam.steps() == 1);
  }

  TEST_CASE("SGD momentum accumulates velocity") {
    std::vector<double> w{0.0};
    const std::vector<double> g{1.0};
    SgdMomentum sgd(0.1, 0.9);
    sgd.step({std::span<double>(w)}, {std::span<const double>(g)});
    CHECK(w[0] == doctest::Approx(-0.1));
    sgd.step({std::span<double>(w)}, {std::span<const double>(g)});
    CHECK(w[0] == doctest::Approx(-0.1 - 0.19));
  }

  TEST_CASE("mismatched views are rejected") {
    std::vector<double> w{0.0, 1.0};
    const std::vector<double> g{1.0};
    Adam adam;
    CHECK_THROWS_AS(adam.step({std::span<double>(w)}, {std::span<const double>(g)}), DimensionError);
  }
}

TEST_SUITE("pretrain") {
  TEST_CASE("zero epochs leaves parameters unchanged") {
    const std::size_t hidden[] = {4};
    auto ae = make_autoencoder(6, hidden, 2, 1);
    const auto before = ae;
    PretrainConfig cfg;
    cfg.epochs = 0;
    const auto result = pretrain(uniform(10, 6, 1), ae.encoder, ae.decoder, cfg);
    CHECK(result.epoch_loss.empty());
    CHECK(ae.encoder == before.encoder);
    CHECK(ae.decoder == before.decoder);
  }

  TEST_CASE("linear autoencoder reaches the principal-subspace residual") {
    // Rank-3 signal in 6 dimensions plus small isotropic noise.
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix basis(3, 6);
    for (auto& v : basis.flat()) v = g(rng);
    Matrix x(200, 6);
    for (std::size_t i = 0; i < 200; ++i) {
      double coef[3] = {g(rng), g(rng), g(rng)};
      for (std::size_t c = 0; c < 6; ++c) {
        double v = 0.3 + 0.01 * g(rng);
        for (std::size_t r = 0; r < 3; ++r) v += coef[r] * basis(r, c) * 0.2;
        x(i, c) = v;
      }
    }
    for (const std::size_t r : {std::size_t{2}, std::size_t{3}}) {
      const auto ae = make_autoencoder(6, std::span<const std::size_t>{}, r, 7);
      auto enc = ae.encoder;
      auto dec = ae.decoder;
      PretrainConfig cfg;
      cfg.epochs = 10000;
      cfg.batch_size = 200;
      cfg.adam.learning_rate = 1e-2;
      const auto result = pretrain(x, enc, dec, cfg);
      const double floor = pca_floor(x, r);
      const double final_loss = reconstruction_loss(x, decode(encode(x, enc), dec));
      CAPTURE(r);
      CAPTURE(floor);
      CAPTURE(final_loss);
      CHECK(final_loss >= floor * (1.0 - 1e-9));
      CHECK(final_loss <= floor * 1.02 + 1e-6);
      CHECK(result.epoch_loss.size() == 10000);
    }
  }

  TEST_CASE("windowed median of the loss trace is non-increasing on blobs") {
    BlobSpec spec;
    spec.k = 4;
    spec.per_cluster = 125;
    spec.dim = 16;
    spec.seed = 3;
    auto data = gen_blobs(spec);
    min_max_normalize(data.features);
    const std::size_t hidden[] = {32};
    auto ae = make_autoencoder(16, hidden, 4, 2);
    PretrainConfig cfg;
    cfg.epochs = 200;
    cfg.batch_size = 64;
    cfg.seed = 1;
    const auto trace = pretrain(data.features, ae.encoder, ae.decoder, cfg).epoch_loss;
    REQUIRE(trace.size() == 200);
    double previous = INFINITY;
    for (std::size_t start = 0; start < trace.size(); start += 10) {
      std::vector<double> window(trace.begin() + static_cast<long>(start),
                                 trace.begin() + static_cast<long>(start + 10));
      std::sort(window.begin(), window.end());
      const double median = 0.5 * (window[4] + window[5]);
      CHECK(median <= previous + 1e-4);
      previous = median;
    }
    CHECK(trace.back() < trace.front());
  }

  TEST_CASE("fixed seed gives bitwise-identical parameters, augmentation included") {
    const std::size_t hidden[] = {6};
    const Matrix x = uniform(40, 16, 3);
    PretrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 8;
    cfg.augment = AugmentSpec{.mode = AugmentMode::image, .seed = 9, .image_height = 4, .image_width = 4};
    auto a = make_autoencoder(16, hidden, 2, 5);
    auto b = make_autoencoder(16, hidden, 2, 5);
    const auto ta = pretrain(x, a.encoder, a.decoder, cfg);
    const auto tb = pretrain(x, b.encoder, b.decoder, cfg);
    CHECK(ta.epoch_loss == tb.epoch_loss);
    CHECK(a.encoder == b.encoder);
    CHECK(a.decoder == b.decoder);
  }

  TEST_CASE("divergence aborts with a diagnostic") {
    const std::size_t hidden[] = {8};
    auto ae = make_autoencoder(4, hidden, 2, 1);
    Matrix x = uniform(16, 4, 2);
    for (auto& v : x.flat()) v *= 1e160;
    PretrainConfig cfg;
    cfg.epochs = 3;
    CHECK_THROWS_AS(pretrain(x, ae.encoder, ae.decoder, cfg), DivergenceError);
  }

  TEST_CASE("invalid config") {
    const std::size_t hidden[] = {4};
    auto ae = make_autoencoder(4, hidden, 2, 1);
    PretrainConfig cfg;
    cfg.batch_size = 0;
    CHECK_THROWS_AS(pretrain(Matrix(3, 4), ae.encoder, ae.decoder, cfg), std::invalid_argument);
  }
}
