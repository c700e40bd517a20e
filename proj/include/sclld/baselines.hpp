#pragma once

// Supervised comparators: Gaussian-process classification with a Laplace
// posterior, and a CNN with the discriminator's architecture trained from
// random initialization on the labelled pool alone.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sclld/gan.hpp"

namespace sclld {

struct GpHyperparameters {
  double sigma_f = 1.0;  // signal std
  double sigma_n = 0.1;  // noise std, added on the diagonal only
  double length = 1.0;   // shared length-scale

  friend bool operator==(const GpHyperparameters&, const GpHyperparameters&) = default;
};

// sigma_f^2 exp(-|t_i - t_j|^2 / 2l^2) + sigma_n^2 [i == j]. The noise term
// is keyed on the indices, not on the vectors.
double se_kernel(std::span<const double> t_i, std::span<const double> t_j, std::size_t i,
                 std::size_t j, const GpHyperparameters& h);

// Row-major N x N matrix over the rows of X.
std::vector<double> kernel_matrix(const std::vector<std::vector<double>>& X,
                                  const GpHyperparameters& h);

// Lower Cholesky factor of a symmetric N x N matrix (row-major), retrying with
// diagonal jitter 1e-10, 1e-9, ..., 1e-6 before giving up.
std::vector<double> cholesky_with_jitter(std::span<const double> matrix, std::size_t n);

struct GpModel {
  GpHyperparameters hyper;
  std::vector<std::vector<double>> inputs;
  std::vector<int> labels;          // +1 / -1
  std::vector<double> mode;         // posterior mode f
  std::vector<double> grad_loglik;  // d log p(y|f) / df at the mode
  std::vector<double> sqrt_w;       // sqrt of the negative Hessian diagonal
  std::vector<double> chol_b;       // lower factor of I + W^1/2 K W^1/2, row-major
  double log_marginal = 0.0;        // Laplace approximation of log p(y|X)
  std::size_t newton_iterations = 0;

  std::size_t size() const { return inputs.size(); }
  std::size_t dimension() const { return inputs.empty() ? 0 : inputs.front().size(); }
};

inline constexpr double kGpNewtonTolerance = 1e-8;
inline constexpr std::size_t kGpNewtonMaxIterations = 100;

// Newton iteration for the mode of the logistic-likelihood posterior, with
// step halving whenever the log posterior would drop.
GpModel gp_fit_laplace(const std::vector<std::vector<double>>& X, const std::vector<int>& y,
                       const GpHyperparameters& h);

// Unnormalized log posterior log p(y|f) - f'K^-1 f / 2 (constant terms dropped).
double gp_log_posterior(const std::vector<std::vector<double>>& X, const std::vector<int>& y,
                        const GpHyperparameters& h, std::span<const double> f);

struct GpLatent {
  double mean = 0.0;
  double variance = 0.0;
};

// Gaussian approximation of the latent at x_star.
GpLatent gp_latent(const GpModel& model, std::span<const double> x_star);

// E[sigmoid(f)] under the latent Gaussian, by 20-node Gauss-Hermite.
double gp_predict(const GpModel& model, std::span<const double> x_star);

// Nodes and weights of the n-point Gauss-Hermite rule (weight exp(-x^2)).
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};
QuadratureRule gauss_hermite(std::size_t n);

// Expected sigmoid under N(mean, variance) by 20-node Gauss-Hermite.
double expected_sigmoid(double mean, double variance);

// Grid point with the largest Laplace log marginal likelihood. Ties go to the
// smallest length, then the smallest sigma_n.
GpHyperparameters gp_select_hyperparameters(const std::vector<std::vector<double>>& X,
                                            const std::vector<int>& y,
                                            const std::vector<GpHyperparameters>& grid);

// sigma_f in {0.5, 1, 2}, sigma_n in {0.01, 0.1}, and lengths at
// {0.25, 0.5, 1, 2, 4} times the median pairwise distance of X.
std::vector<GpHyperparameters> default_gp_grid(const std::vector<std::vector<double>>& X);

inline constexpr std::uint32_t kGpModelVersion = 1;

// Layout (little-endian): "SGPM", u32 version, f64 sigma_f, sigma_n, length,
// u64 N, u64 D, then X (N*D f64), y (N i32), mode, grad_loglik, sqrt_w
// (N f64 each), chol_b (N*N f64), f64 log_marginal, u64 newton_iterations.
std::string serialize_gp_model(const GpModel& model);
GpModel deserialize_gp_model(std::string_view bytes);
void save_gp_model(const std::filesystem::path& path, const GpModel& model);
GpModel load_gp_model(const std::filesystem::path& path);

// Flattened preprocessed images and +/-1 labels.
std::vector<std::vector<double>> flatten_images(const std::vector<Tensor>& images);
std::vector<int> signed_labels(const std::vector<Label>& labels);

// Fresh discriminator-shaped network (role cnn) from the seed's CNN stream,
// trained exactly like the phase-2 fine-tune.
FinetuneResult cnn_train_supervised(const LabelledImages& train, const LabelledImages& validation,
                                    const TrainConfig& config);

// classify() with CNN weights.
Classification cnn_predict(Discriminator& model, const Tensor& image);

}  // namespace sclld
