#pragma once

// Two-phase semi-supervised training.
//
// Phase 1 trains a generator/discriminator pair adversarially on unlabelled
// images only. Phase 2 starts from the phase-1 discriminator (every layer,
// head included) and fine-tunes it with binary cross-entropy on the labelled
// pool, reading the sigmoid head as p(COVID).

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "sclld/autodiff.hpp"
#include "sclld/dataset.hpp"
#include "sclld/networks.hpp"

namespace sclld {

inline constexpr std::array<std::size_t, 3> kIterationPresets{3500, 4000, 4500};

struct TrainConfig {
  std::size_t iterations = 4000;
  std::size_t batch_size = 32;
  double lr_g = 1e-3;
  double lr_d = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::uint64_t seed = 0;
  std::size_t finetune_epochs_max = 100;
  std::size_t early_stop_patience = 5;
  LayerSettings layers;

  void validate() const;
};

// Independent stream `stream` derived from a run seed.
Rng derive_rng(std::uint64_t seed, std::uint64_t stream);

struct Models {
  Generator generator;
  Discriminator discriminator;
};

Models init_models(std::uint64_t seed, LayerSettings layers = {});

// Value of the minimax objective, mean ln D(x) + mean ln(1 - D(G(z))), with
// probabilities clamped like the BCE loss.
double gan_objective(std::span<const double> d_real, std::span<const double> d_fake);

struct GanStepLosses {
  double loss_real = 0.0;  // BCE of D on the real batch against 1
  double loss_fake = 0.0;  // BCE of D on the fake batch against 0
  double loss_gen = 0.0;   // BCE of the updated D on the fakes against 1
  double objective = 0.0;  // minimax value before the D update
  double mean_d_real = 0.0;
  double mean_d_fake = 0.0;
};

struct GanStepOptions {
  bool update_generator = true;
};

// One discriminator update on real (target 1) and fake (target 0) batches,
// then one generator update with the non-saturating target 1 on the same
// fakes. real_batch must be [batch_size,1,100,100].
GanStepLosses gan_train_step(const Tensor& real_batch, Models& models, AdamState& opt_g,
                             AdamState& opt_d, Rng& rng, std::size_t batch_size,
                             GanStepOptions options = {});

struct GanCurveRow {
  std::size_t iteration = 0;
  double loss_real = 0.0;
  double loss_fake = 0.0;
  double loss_gen = 0.0;
};

struct Phase1Result {
  Models models;
  std::vector<GanCurveRow> curve;
};

using GanProgress = std::function<void(const GanCurveRow&)>;

// Runs exactly config.iterations steps, drawing minibatches from a seeded
// shuffle that is redrawn each time the pool is exhausted. Takes bare image
// tensors: labels never reach this code path.
Phase1Result unsupervised_train(const std::vector<Tensor>& images, const TrainConfig& config,
                                const GanProgress& progress = {});
Phase1Result unsupervised_train(const std::vector<Tensor>& images, const TrainConfig& config,
                                Models start, const GanProgress& progress = {});

// Ids of the phase-1 pool: unlabelled plus labelled training samples;
// validation and test are excluded.
std::vector<Sample> phase1_pool(const DatasetSplit& split);

struct LabelledImages {
  std::vector<Tensor> images;
  std::vector<Label> labels;

  std::size_t size() const { return images.size(); }
};

LabelledImages load_labelled(const std::vector<Sample>& samples, bool use_sobel);

class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  // Records one epoch's validation loss; true when it is a new best.
  bool update(double val_loss);
  bool should_stop() const { return since_best_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }

 private:
  std::size_t patience_;
  std::size_t epoch_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t since_best_ = 0;
  double best_loss_ = 0.0;
};

struct FinetuneCurveRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct FinetuneResult {
  Discriminator model;
  std::vector<FinetuneCurveRow> curve;
  std::size_t best_epoch = 0;
};

// BCE + Adam over the labelled pool with early stopping on validation loss;
// returns the best-validation weights tagged phase 2.
FinetuneResult supervised_finetune(Discriminator start, const LabelledImages& train,
                                   const LabelledImages& validation, const TrainConfig& config);

// Eval-mode p(head = 1) for each image, batched. No phase check.
std::vector<double> predict_probabilities(Discriminator& model, const std::vector<Tensor>& images,
                                          std::size_t batch_size = 32);

double mean_bce(std::span<const double> probabilities, std::span<const Label> labels);

inline Label label_from_probability(double p_covid) {
  return p_covid > 0.5 ? Label::Covid : Label::Healthy;
}

struct Classification {
  Label label = Label::Healthy;
  double p_covid = 0.0;
};

// Requires a phase-2 checkpoint; image is a preprocessed [1,100,100] tensor.
Classification classify(Discriminator& model, const Tensor& image);

// 1 - 2|p - 0.5|: 1 when p = 0.5, 0 when p is 0 or 1.
double uncertainty_score(double p_covid);

}  // namespace sclld
