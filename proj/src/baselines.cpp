#include "sclld/baselines.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "binary_io.hpp"
#include "sclld/error.hpp"

namespace sclld {

namespace {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void check_hyper(const GpHyperparameters& h) {
  if (!(h.length > 0.0)) fail(ErrorKind::InvalidArgument, "se_kernel: length-scale must be positive");
  if (!(h.sigma_f > 0.0)) fail(ErrorKind::InvalidArgument, "se_kernel: sigma_f must be positive");
  if (!(h.sigma_n >= 0.0)) fail(ErrorKind::InvalidArgument, "se_kernel: sigma_n must be nonnegative");
}

void check_training_set(const std::vector<std::vector<double>>& X, const std::vector<int>& y) {
  if (X.empty()) fail(ErrorKind::InvalidArgument, "GP needs at least one training point");
  if (X.size() != y.size()) fail(ErrorKind::ShapeMismatch, "GP inputs and labels differ in length");
  for (const auto& row : X) {
    if (row.size() != X.front().size()) fail(ErrorKind::ShapeMismatch, "GP inputs have ragged rows");
  }
  for (int label : y) {
    if (label != 1 && label != -1) fail(ErrorKind::InvalidArgument, "GP labels must be +1 or -1");
  }
}

double log_sigmoid(double z) {
  return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Matrix to_matrix(const std::vector<double>& rowmajor, std::size_t n) {
  const auto m = static_cast<Eigen::Index>(n);
  return Eigen::Map<const RowMajor>(rowmajor.data(), m, m);
}

std::vector<double> to_rowmajor(const Matrix& m) {
  std::vector<double> out(static_cast<std::size_t>(m.size()));
  Eigen::Map<RowMajor>(out.data(), m.rows(), m.cols()) = m;
  return out;
}

Matrix cholesky_lower(const Matrix& a) {
  const auto n = a.rows();
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  for (double jitter = 1e-10; jitter <= 1e-6 * 1.0001; jitter *= 10.0) {
    llt.compute(a + jitter * Matrix::Identity(n, n));
    if (llt.info() == Eigen::Success) return llt.matrixL();
  }
  fail(ErrorKind::Numerical, "Cholesky failed even with 1e-6 jitter");
}

double log_likelihood(const Vector& f, const std::vector<int>& y) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < f.size(); ++i) s += log_sigmoid(y[static_cast<std::size_t>(i)] * f[i]);
  return s;
}

struct NewtonTerms {
  Vector grad;    // d log p(y|f) / df
  Vector sqrt_w;  // sqrt(pi (1 - pi))
  Matrix chol_b;  // lower factor of I + sW K sW
};

NewtonTerms newton_terms(const Matrix& K, const Vector& f, const std::vector<int>& y) {
  const auto n = f.size();
  NewtonTerms t{Vector(n), Vector(n), Matrix()};
  for (Eigen::Index i = 0; i < n; ++i) {
    const double pi = sigmoid(f[i]);
    const double target = y[static_cast<std::size_t>(i)] > 0 ? 1.0 : 0.0;
    t.grad[i] = target - pi;
    t.sqrt_w[i] = std::sqrt(pi * (1.0 - pi));
  }
  Matrix b = t.sqrt_w.asDiagonal() * K * t.sqrt_w.asDiagonal();
  b.diagonal().array() += 1.0;
  t.chol_b = cholesky_lower(b);
  return t;
}

}  // namespace

double se_kernel(std::span<const double> t_i, std::span<const double> t_j, std::size_t i,
                 std::size_t j, const GpHyperparameters& h) {
  if (t_i.size() != t_j.size()) fail(ErrorKind::ShapeMismatch, "se_kernel: vector lengths differ");
  check_hyper(h);
  double d2 = 0.0;
  for (std::size_t k = 0; k < t_i.size(); ++k) {
    const double d = t_i[k] - t_j[k];
    d2 += d * d;
  }
  const double k = h.sigma_f * h.sigma_f * std::exp(-d2 / (2.0 * h.length * h.length));
  return i == j ? k + h.sigma_n * h.sigma_n : k;
}

std::vector<double> kernel_matrix(const std::vector<std::vector<double>>& X,
                                  const GpHyperparameters& h) {
  check_hyper(h);
  const std::size_t n = X.size();
  std::vector<double> K(n * n);
  const auto rows = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const auto i = static_cast<std::size_t>(r);
    for (std::size_t j = 0; j <= i; ++j) K[i * n + j] = se_kernel(X[i], X[j], i, j, h);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) K[i * n + j] = K[j * n + i];
  }
  return K;
}

std::vector<double> cholesky_with_jitter(std::span<const double> matrix, std::size_t n) {
  if (matrix.size() != n * n) fail(ErrorKind::ShapeMismatch, "cholesky: matrix is not n x n");
  return to_rowmajor(cholesky_lower(to_matrix({matrix.begin(), matrix.end()}, n)));
}

GpModel gp_fit_laplace(const std::vector<std::vector<double>>& X, const std::vector<int>& y,
                       const GpHyperparameters& h) {
  check_training_set(X, y);
  const std::size_t n = X.size();
  const Matrix K = to_matrix(kernel_matrix(X, h), n);
  const auto m = static_cast<Eigen::Index>(n);

  Vector f = Vector::Zero(m);
  Vector a = Vector::Zero(m);
  double psi = log_likelihood(f, y);
  std::size_t iterations = 0;
  while (iterations < kGpNewtonMaxIterations) {
    ++iterations;
    const NewtonTerms t = newton_terms(K, f, y);
    const Vector w = t.sqrt_w.array().square();
    const Vector b = w.cwiseProduct(f) + t.grad;
    const auto L = t.chol_b.triangularView<Eigen::Lower>();
    Vector c = t.sqrt_w.cwiseProduct(K * b);
    L.solveInPlace(c);
    L.transpose().solveInPlace(c);
    Vector a_new = b - t.sqrt_w.cwiseProduct(c);
    Vector f_new = K * a_new;
    double psi_new = -0.5 * a_new.dot(f_new) + log_likelihood(f_new, y);
    for (int halvings = 0; psi_new < psi && halvings < 40; ++halvings) {
      a_new = 0.5 * (a + a_new);
      f_new = K * a_new;
      psi_new = -0.5 * a_new.dot(f_new) + log_likelihood(f_new, y);
    }
    const double step = (f_new - f).cwiseAbs().maxCoeff();
    a = std::move(a_new);
    f = std::move(f_new);
    psi = psi_new;
    if (step < kGpNewtonTolerance) break;
  }

  const NewtonTerms t = newton_terms(K, f, y);
  GpModel model;
  model.hyper = h;
  model.inputs = X;
  model.labels = y;
  model.mode.assign(f.data(), f.data() + m);
  model.grad_loglik.assign(t.grad.data(), t.grad.data() + m);
  model.sqrt_w.assign(t.sqrt_w.data(), t.sqrt_w.data() + m);
  model.chol_b = to_rowmajor(t.chol_b);
  model.log_marginal = -0.5 * a.dot(f) + log_likelihood(f, y) -
                       t.chol_b.diagonal().array().log().sum();
  model.newton_iterations = iterations;
  return model;
}

double gp_log_posterior(const std::vector<std::vector<double>>& X, const std::vector<int>& y,
                        const GpHyperparameters& h, std::span<const double> f) {
  check_training_set(X, y);
  if (f.size() != X.size()) fail(ErrorKind::ShapeMismatch, "gp_log_posterior: latent length");
  const auto m = static_cast<Eigen::Index>(X.size());
  const Matrix L = cholesky_lower(to_matrix(kernel_matrix(X, h), X.size()));
  const Vector fv = Eigen::Map<const Vector>(f.data(), m);
  const Vector z = L.triangularView<Eigen::Lower>().solve(fv);
  return log_likelihood(fv, y) - 0.5 * z.squaredNorm();
}

GpLatent gp_latent(const GpModel& model, std::span<const double> x_star) {
  const std::size_t n = model.size();
  if (n == 0) fail(ErrorKind::Precondition, "gp_predict: model is not fitted");
  if (x_star.size() != model.dimension()) {
    fail(ErrorKind::ShapeMismatch, "gp_predict: input has " + std::to_string(x_star.size()) +
                                       " features, model expects " +
                                       std::to_string(model.dimension()));
  }
  const auto m = static_cast<Eigen::Index>(n);
  Vector k_star(m);
  for (std::size_t i = 0; i < n; ++i) {
    k_star[static_cast<Eigen::Index>(i)] = se_kernel(model.inputs[i], x_star, i, n, model.hyper);
  }
  const Vector grad = Eigen::Map<const Vector>(model.grad_loglik.data(), m);
  const Vector sqrt_w = Eigen::Map<const Vector>(model.sqrt_w.data(), m);
  const Matrix L = to_matrix(model.chol_b, n);
  const Vector v = L.triangularView<Eigen::Lower>().solve(sqrt_w.cwiseProduct(k_star));
  const double k_ss = se_kernel(x_star, x_star, n, n, model.hyper);
  return {k_star.dot(grad), std::max(0.0, k_ss - v.squaredNorm())};
}

QuadratureRule gauss_hermite(std::size_t n) {
  if (n == 0) fail(ErrorKind::InvalidArgument, "gauss_hermite: need at least one node");
  const auto m = static_cast<Eigen::Index>(n);
  Matrix J = Matrix::Zero(m, m);
  for (Eigen::Index k = 1; k < m; ++k) {
    J(k, k - 1) = J(k - 1, k) = std::sqrt(static_cast<double>(k) / 2.0);
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(J);
  QuadratureRule rule;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double v0 = eig.eigenvectors()(0, i);
    rule.nodes.push_back(eig.eigenvalues()[i]);
    rule.weights.push_back(std::sqrt(std::numbers::pi) * v0 * v0);
  }
  return rule;
}

double expected_sigmoid(double mean, double variance) {
  static const QuadratureRule rule = gauss_hermite(20);
  if (!(variance > 0.0)) return sigmoid(mean);
  const double scale = std::sqrt(2.0 * variance);
  double s = 0.0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    s += rule.weights[i] * sigmoid(mean + scale * rule.nodes[i]);
  }
  return s / std::sqrt(std::numbers::pi);
}

double gp_predict(const GpModel& model, std::span<const double> x_star) {
  const auto latent = gp_latent(model, x_star);
  return expected_sigmoid(latent.mean, latent.variance);
}

GpHyperparameters gp_select_hyperparameters(const std::vector<std::vector<double>>& X,
                                            const std::vector<int>& y,
                                            const std::vector<GpHyperparameters>& grid) {
  if (grid.empty()) fail(ErrorKind::InvalidArgument, "hyperparameter grid is empty");
  GpHyperparameters best = grid.front();
  double best_score = gp_fit_laplace(X, y, best).log_marginal;
  for (std::size_t i = 1; i < grid.size(); ++i) {
    const auto& h = grid[i];
    const double score = gp_fit_laplace(X, y, h).log_marginal;
    const bool tie_wins =
        score == best_score &&
        (h.length < best.length || (h.length == best.length && h.sigma_n < best.sigma_n));
    if (score > best_score || tie_wins) {
      best = h;
      best_score = score;
    }
  }
  return best;
}

std::vector<GpHyperparameters> default_gp_grid(const std::vector<std::vector<double>>& X) {
  std::vector<double> dists;
  for (std::size_t i = 0; i < X.size(); ++i) {
    for (std::size_t j = i + 1; j < X.size(); ++j) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < X[i].size(); ++k) d2 += (X[i][k] - X[j][k]) * (X[i][k] - X[j][k]);
      dists.push_back(std::sqrt(d2));
    }
  }
  double median = 1.0;
  if (!dists.empty()) {
    std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2),
                     dists.end());
    median = std::max(dists[dists.size() / 2], 1e-6);
  }
  std::vector<GpHyperparameters> grid;
  for (double sf : {0.5, 1.0, 2.0}) {
    for (double sn : {0.01, 0.1}) {
      for (double mult : {0.25, 0.5, 1.0, 2.0, 4.0}) grid.push_back({sf, sn, mult * median});
    }
  }
  return grid;
}

// ---------------------------------------------------------------------------
// GP model codec

std::string serialize_gp_model(const GpModel& model) {
  using detail::put;
  const std::size_t n = model.size(), d = model.dimension();
  if (model.labels.size() != n || model.mode.size() != n || model.grad_loglik.size() != n ||
      model.sqrt_w.size() != n || model.chol_b.size() != n * n) {
    fail(ErrorKind::InvalidArgument, "GP model fields have inconsistent sizes");
  }
  std::string out = "SGPM";
  put<std::uint32_t>(out, kGpModelVersion);
  put<double>(out, model.hyper.sigma_f);
  put<double>(out, model.hyper.sigma_n);
  put<double>(out, model.hyper.length);
  put<std::uint64_t>(out, n);
  put<std::uint64_t>(out, d);
  for (const auto& row : model.inputs) {
    for (double v : row) put<double>(out, v);
  }
  for (int label : model.labels) put<std::int32_t>(out, label);
  for (const auto* vec : {&model.mode, &model.grad_loglik, &model.sqrt_w, &model.chol_b}) {
    for (double v : *vec) put<double>(out, v);
  }
  put<double>(out, model.log_marginal);
  put<std::uint64_t>(out, model.newton_iterations);
  return out;
}

GpModel deserialize_gp_model(std::string_view bytes) {
  detail::Reader in(bytes, "GP model");
  if (in.take(4) != "SGPM") fail(ErrorKind::Format, "not a GP model (bad magic)");
  const auto version = in.get<std::uint32_t>();
  if (version != kGpModelVersion) {
    fail(ErrorKind::Format, "unsupported GP model version " + std::to_string(version));
  }
  GpModel model;
  model.hyper.sigma_f = in.get<double>();
  model.hyper.sigma_n = in.get<double>();
  model.hyper.length = in.get<double>();
  const auto n = static_cast<std::size_t>(in.get<std::uint64_t>());
  const auto d = static_cast<std::size_t>(in.get<std::uint64_t>());
  const std::size_t doubles = n * d + 3 * n + n * n;
  if (n == 0 || d == 0 || doubles / 8 > in.remaining()) {
    fail(ErrorKind::Format, "GP model sizes do not fit the payload");
  }
  model.inputs.assign(n, std::vector<double>(d));
  for (auto& row : model.inputs) {
    for (auto& v : row) v = in.get<double>();
  }
  model.labels.resize(n);
  for (auto& label : model.labels) {
    label = in.get<std::int32_t>();
    if (label != 1 && label != -1) fail(ErrorKind::Format, "GP model label outside {-1,+1}");
  }
  for (auto* vec : {&model.mode, &model.grad_loglik, &model.sqrt_w}) {
    vec->resize(n);
    for (auto& v : *vec) v = in.get<double>();
  }
  model.chol_b.resize(n * n);
  for (auto& v : model.chol_b) v = in.get<double>();
  model.log_marginal = in.get<double>();
  model.newton_iterations = static_cast<std::size_t>(in.get<std::uint64_t>());
  if (!in.done()) fail(ErrorKind::Format, "trailing bytes after GP model");
  return model;
}

void save_gp_model(const std::filesystem::path& path, const GpModel& model) {
  detail::write_bytes(path, serialize_gp_model(model));
}

GpModel load_gp_model(const std::filesystem::path& path) {
  return deserialize_gp_model(detail::read_bytes(path));
}

// ---------------------------------------------------------------------------
// Inputs and the CNN comparator

std::vector<std::vector<double>> flatten_images(const std::vector<Tensor>& images) {
  std::vector<std::vector<double>> X;
  X.reserve(images.size());
  for (const auto& img : images) X.emplace_back(img.values().begin(), img.values().end());
  return X;
}

std::vector<int> signed_labels(const std::vector<Label>& labels) {
  std::vector<int> y;
  y.reserve(labels.size());
  for (auto l : labels) y.push_back(l == Label::Covid ? 1 : -1);
  return y;
}

FinetuneResult cnn_train_supervised(const LabelledImages& train, const LabelledImages& validation,
                                    const TrainConfig& config) {
  config.validate();
  if (train.size() == 0) fail(ErrorKind::Precondition, "CNN baseline: labelled pool is empty");
  Rng rng = derive_rng(config.seed, 3);
  Discriminator fresh(rng, config.layers, ModelRole::Cnn);
  return supervised_finetune(std::move(fresh), train, validation, config);
}

Classification cnn_predict(Discriminator& model, const Tensor& image) {
  if (model.role() != ModelRole::Cnn) {
    fail(ErrorKind::Precondition, "cnn_predict needs a checkpoint with role cnn");
  }
  return classify(model, image);
}

}  // namespace sclld
