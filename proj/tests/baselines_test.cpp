#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "sclld/baselines.hpp"
#include "sclld/error.hpp"

using namespace sclld;

namespace {

using Rows = std::vector<std::vector<double>>;

Rows column(const std::vector<double>& xs) {
  Rows out;
  for (double x : xs) out.push_back({x});
  return out;
}

// Exact unnormalized log posterior for two points, with the 2x2 inverse by hand.
double log_post_2(const oracle::GpToy& toy, double f0, double f1) {
  const double a = toy.kernel(toy.x[0], toy.x[0], 0, 0), b = toy.kernel(toy.x[0], toy.x[1], 0, 1);
  const double d = toy.kernel(toy.x[1], toy.x[1], 1, 1);
  const double det = a * d - b * b;
  const double quad = (d * f0 * f0 - 2.0 * b * f0 * f1 + a * f1 * f1) / det;
  return std::log(oracle::logistic(toy.y[0] * f0)) + std::log(oracle::logistic(toy.y[1] * f1)) - 0.5 * quad;
}

}  // namespace

TEST_SUITE("baselines") {

TEST_CASE("squared exponential kernel") {
  GpHyperparameters h{1.5, 0.3, 2.0};
  const std::vector<double> t{0.2, -1.0, 3.0};
  CHECK(se_kernel(t, t, 4, 4, h) == doctest::Approx(1.5 * 1.5 + 0.3 * 0.3).epsilon(1e-15));
  CHECK(se_kernel(t, t, 1, 2, h) == 1.5 * 1.5);
  const std::vector<double> far{1e3, 1e3, 1e3};
  CHECK(se_kernel(t, far, 0, 1, h) < 1e-300);
  const std::vector<double> u{0.0, 0.0, 0.0};
  CHECK(se_kernel(t, u, 0, 1, h) ==
        doctest::Approx(2.25 * std::exp(-(0.04 + 1.0 + 9.0) / 8.0)).epsilon(1e-15));

  CHECK_THROWS_AS(se_kernel(t, std::vector<double>{1.0}, 0, 1, h), Error);
  CHECK_THROWS_AS(se_kernel(t, t, 0, 1, GpHyperparameters{1.0, 0.1, 0.0}), Error);
  CHECK_THROWS_AS(se_kernel(t, t, 0, 1, GpHyperparameters{1.0, -0.1, 1.0}), Error);
}

TEST_CASE("kernel matrices are symmetric and factor") {
  std::mt19937_64 rng(41);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 1 + rng() % 30, d = 1 + rng() % 5;
    Rows X(n, std::vector<double>(d));
    for (auto& row : X)
      for (auto& v : row) v = normal(rng);
    const GpHyperparameters h{0.5 + std::abs(normal(rng)), 0.05, 0.3 + std::abs(normal(rng))};
    const auto K = kernel_matrix(X, h);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) CHECK(K[i * n + j] == K[j * n + i]);
    std::vector<double> L_ref;
    CHECK(oracle::cholesky(K, n, L_ref));
    const auto L = cholesky_with_jitter(K, n);
    CHECK(max_abs_diff(L, L_ref) < 1e-10);
  }
}

TEST_CASE("cholesky jitter rescues a singular matrix") {
  const std::vector<double> ones(4, 1.0);  // rank one
  const auto L = cholesky_with_jitter(ones, 2);
  CHECK(std::isfinite(L[3]));
  const std::vector<double> negative{-1.0, 0.0, 0.0, -1.0};
  CHECK_THROWS_AS(cholesky_with_jitter(negative, 2), Error);
}

TEST_CASE("single positive point pulls the mode positive") {
  const auto m = gp_fit_laplace({{0.0}}, {1}, {});
  CHECK(m.mode[0] > 0.0);
  CHECK(gp_predict(m, std::vector<double>{0.0}) > 0.5);
}

TEST_CASE("mode matches a grid search of the exact log posterior") {
  oracle::GpToy toy;
  toy.x = {1.0, -1.0};
  toy.y = {-1, 1};
  const GpHyperparameters h{toy.sigma_f, toy.sigma_n, toy.length};
  const auto m = gp_fit_laplace(column(toy.x), toy.y, h);

  double best = -1e300, b0 = 0.0, b1 = 0.0;
  double c0 = 0.0, c1 = 0.0;
  for (double step : {0.05, 0.002, 0.0001}) {
    const double lo0 = c0 - 40 * step, lo1 = c1 - 40 * step;
    for (int i = 0; i <= 80; ++i)
      for (int j = 0; j <= 80; ++j) {
        const double f0 = lo0 + i * step, f1 = lo1 + j * step;
        const double v = log_post_2(toy, f0, f1);
        if (v > best) {
          best = v;
          b0 = f0;
          b1 = f1;
        }
      }
    c0 = b0;
    c1 = b1;
  }
  CHECK(std::abs(m.mode[0] - b0) < 1e-3);
  CHECK(std::abs(m.mode[1] - b1) < 1e-3);
  CHECK(gp_log_posterior(column(toy.x), toy.y, h, m.mode) == doctest::Approx(log_post_2(toy, m.mode[0], m.mode[1])));
}

TEST_CASE("label flip mirrors the mode and the prediction") {
  const Rows X = column({-1.5, -0.2, 0.4, 2.0});
  const std::vector<int> y{1, 1, -1, -1}, flipped{-1, -1, 1, 1};
  const GpHyperparameters h{1.3, 0.1, 0.9};
  const auto a = gp_fit_laplace(X, y, h), b = gp_fit_laplace(X, flipped, h);
  for (std::size_t i = 0; i < 4; ++i) CHECK(a.mode[i] == doctest::Approx(-b.mode[i]).epsilon(1e-10));
  for (double xs : {-2.0, 0.1, 0.7}) {
    const std::vector<double> x{xs};
    CHECK(std::abs(gp_predict(a, x) - (1.0 - gp_predict(b, x))) < 1e-10);
  }
}

TEST_CASE("far away the prediction reverts to one half") {
  const auto m = gp_fit_laplace(column({0.0, 1.0}), {1, -1}, {});
  CHECK(std::abs(gp_predict(m, std::vector<double>{1e4}) - 0.5) < 1e-12);
  CHECK_THROWS_AS(gp_predict(m, std::vector<double>{1.0, 2.0}), Error);
}

TEST_CASE("predictions stay inside (0,1) and follow separable labels") {
  const Rows X = column({-2.0, -1.5, -1.0, 1.0, 1.5, 2.0});
  const std::vector<int> y{1, 1, 1, -1, -1, -1};
  const auto m = gp_fit_laplace(X, y, {2.0, 0.1, 1.0});
  for (std::size_t i = 0; i < X.size(); ++i) {
    const double p = gp_predict(m, X[i]);
    CHECK((p > 0.0 && p < 1.0));
    CHECK((y[i] == 1) == (p > 0.5));
  }
  CHECK(m.newton_iterations <= kGpNewtonMaxIterations);
}

TEST_CASE("Newton iteration never lowers the log posterior") {
  const Rows X = column({-1.0, 0.0, 0.5, 1.2});
  const std::vector<int> y{1, -1, 1, -1};
  const GpHyperparameters h{2.0, 0.01, 0.3};
  const auto m = gp_fit_laplace(X, y, h);
  const std::vector<double> zero(4, 0.0);
  CHECK(gp_log_posterior(X, y, h, m.mode) >= gp_log_posterior(X, y, h, zero));
  // Stationarity: K^-1 f = grad log p(y|f) at the mode.
  const auto K = kernel_matrix(X, h);
  for (std::size_t i = 0; i < 4; ++i) {
    double kg = 0.0;
    for (std::size_t j = 0; j < 4; ++j) kg += K[i * 4 + j] * m.grad_loglik[j];
    CHECK(std::abs(kg - m.mode[i]) < 1e-7);
  }
}

TEST_CASE("quadrature agrees with dense integration on a four-point toy") {
  oracle::GpToy toy;
  toy.x = {-1.0, -0.3, 0.6, 1.4};
  toy.y = {1, -1, -1, 1};
  toy.sigma_f = 1.7;
  const auto m = gp_fit_laplace(column(toy.x), toy.y, {toy.sigma_f, toy.sigma_n, toy.length});
  for (double xs : {-1.2, 0.1, 0.9, 2.5}) {
    const std::vector<double> x{xs};
    const auto lat = gp_latent(m, x);
    CHECK(std::abs(gp_predict(m, x) - oracle::expected_sigmoid_dense(lat.mean, lat.variance)) < 1e-3);
  }
}

TEST_CASE("Laplace predictions track the exact posterior predictive") {
  oracle::GpToy toy;
  toy.x = {-1.0, 0.2, 1.1};
  toy.y = {1, 1, -1};
  const auto m = gp_fit_laplace(column(toy.x), toy.y, {toy.sigma_f, toy.sigma_n, toy.length});
  for (double xs : {-0.5, 0.7, 2.0}) {
    CHECK(std::abs(gp_predict(m, std::vector<double>{xs}) - oracle::exact_gp_predictive(toy, xs)) < 2e-2);
  }
}

TEST_CASE("gauss-hermite rule matches the independent construction") {
  const auto rule = gauss_hermite(20);
  std::vector<double> x, w;
  oracle::hermite_rule(20, x, w);
  std::vector<double> a = rule.nodes, b = x;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(max_abs_diff(a, b) < 1e-10);
  double total = 0.0;
  for (double v : rule.weights) total += v;
  CHECK(total == doctest::Approx(std::sqrt(3.14159265358979323846)).epsilon(1e-12));
  CHECK(expected_sigmoid(0.0, 4.0) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("hyperparameter selection") {
  const Rows X = column({-1.0, -0.5, 0.3, 0.9, 1.6});
  const std::vector<int> y{1, 1, -1, -1, 1};
  const GpHyperparameters only{0.7, 0.1, 0.5};
  CHECK(gp_select_hyperparameters(X, y, {only}) == only);
  CHECK_THROWS_AS(gp_select_hyperparameters(X, y, {}), Error);

  const auto grid = default_gp_grid(X);
  CHECK(grid.size() == 30);
  const auto chosen = gp_select_hyperparameters(X, y, grid);
  const double best = gp_fit_laplace(X, y, chosen).log_marginal;
  for (const auto& h : grid) CHECK(gp_fit_laplace(X, y, h).log_marginal <= best);

  // With one training point the marginal does not depend on the length-scale.
  const Rows one{{0.0}};
  const auto tie = gp_select_hyperparameters(one, {1}, {{1.0, 0.1, 3.0}, {1.0, 0.1, 0.5}, {1.0, 0.1, 2.0}});
  CHECK(tie.length == 0.5);
}

TEST_CASE("gp model serialization roundtrip") {
  const auto m = gp_fit_laplace(column({-1.0, 0.5, 2.0}), {1, -1, 1}, {1.2, 0.1, 0.8});
  const auto bytes = serialize_gp_model(m);
  const auto back = deserialize_gp_model(bytes);
  CHECK(serialize_gp_model(back) == bytes);
  CHECK(back.hyper == m.hyper);
  CHECK(gp_predict(back, std::vector<double>{0.3}) == gp_predict(m, std::vector<double>{0.3}));
  CHECK_THROWS_AS(deserialize_gp_model(bytes.substr(0, bytes.size() - 1)), Error);
  CHECK_THROWS_AS(deserialize_gp_model("NOPE" + bytes.substr(4)), Error);
  CHECK_THROWS_AS(gp_fit_laplace(column({0.0}), {0}, {}), Error);
}

TEST_CASE("cnn baseline shares the discriminator ladder and is seeded") {
  LabelledImages tiny;
  Rng rng(42);
  for (int i = 0; i < 4; ++i) {
    const Label l = i % 2 ? Label::Covid : Label::Healthy;
    tiny.images.push_back(to_tensor(preprocess(synthesize_image(l, rng), true)));
    tiny.labels.push_back(l);
  }
  TrainConfig c;
  c.seed = 43;
  c.finetune_epochs_max = 2;
  auto a = cnn_train_supervised(tiny, tiny, c);
  auto b = cnn_train_supervised(tiny, tiny, c);
  CHECK(serialize_checkpoint(a.model.checkpoint()) == serialize_checkpoint(b.model.checkpoint()));
  CHECK(a.model.role() == ModelRole::Cnn);

  Rng init(44);
  Discriminator d(init);
  const auto dc = d.checkpoint(), cc = a.model.checkpoint();
  REQUIRE(dc.params.size() == cc.params.size());
  for (std::size_t i = 0; i < dc.params.size(); ++i) {
    CHECK(dc.params[i].name == cc.params[i].name);
    CHECK(dc.params[i].value.dims() == cc.params[i].value.dims());
  }
  CHECK(parameter_count(d.parameters()) == parameter_count(a.model.parameters()));

  const auto p1 = cnn_predict(a.model, tiny.images[0]);
  const auto p2 = cnn_predict(a.model, tiny.images[0]);
  CHECK(p1.p_covid == p2.p_covid);
  CHECK(p1.label == label_from_probability(p1.p_covid));
  CHECK_THROWS_AS(cnn_predict(d, tiny.images[0]), Error);

  LabelledImages empty;
  CHECK_THROWS_AS(cnn_train_supervised(empty, tiny, c), Error);
}

}  // TEST_SUITE
