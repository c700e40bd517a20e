#include "sclld/gan.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sclld/error.hpp"

namespace sclld {

void TrainConfig::validate() const {
  if (batch_size == 0) fail(ErrorKind::Config, "batch_size must be positive");
  if (!(lr_g > 0.0) || !(lr_d > 0.0)) fail(ErrorKind::Config, "learning rates must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    fail(ErrorKind::Config, "adam betas must be in (0,1)");
  }
  if (finetune_epochs_max == 0) fail(ErrorKind::Config, "finetune_epochs_max must be positive");
  if (early_stop_patience == 0) fail(ErrorKind::Config, "early_stop_patience must be positive");
  if (!(layers.dropout_rate >= 0.0 && layers.dropout_rate < 1.0)) {
    fail(ErrorKind::Config, "dropout must be in [0,1)");
  }
  if (!(layers.leaky_slope >= 0.0 && layers.leaky_slope < 1.0)) {
    fail(ErrorKind::Config, "leaky_slope must be in [0,1)");
  }
}

Rng derive_rng(std::uint64_t seed, std::uint64_t stream) {
  return Rng(seed * 0x9E3779B97F4A7C15ull + stream * 0xD1B54A32D192ED03ull + 1);
}

Models init_models(std::uint64_t seed, LayerSettings layers) {
  Rng rng = derive_rng(seed, 0);
  Generator g(rng, layers);
  Discriminator d(rng, layers);
  return {std::move(g), std::move(d)};
}

double gan_objective(std::span<const double> d_real, std::span<const double> d_fake) {
  const double lo = ad::kBceEpsilon, hi = 1.0 - ad::kBceEpsilon;
  auto mean_log = [&](std::span<const double> ps, bool complement) {
    double s = 0.0;
    for (double p : ps) {
      const double q = std::clamp(p, lo, hi);
      s += std::log(complement ? 1.0 - q : q);
    }
    return s / static_cast<double>(ps.size());
  };
  return mean_log(d_real, false) + mean_log(d_fake, true);
}

namespace {

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

AdamState make_adam(std::vector<Parameter*> params, double lr, const TrainConfig& c) {
  return AdamState(params, AdamConfig{lr, c.beta1, c.beta2, 1e-8});
}

}  // namespace

GanStepLosses gan_train_step(const Tensor& real_batch, Models& models, AdamState& opt_g,
                             AdamState& opt_d, Rng& rng, std::size_t batch_size,
                             GanStepOptions options) {
  const auto& d = real_batch.dims();
  if (d.size() != 4 || d[0] != batch_size || d[1] != 1 || d[2] != kImageSide ||
      d[3] != kImageSide) {
    fail(ErrorKind::ShapeMismatch, "real batch must be [" + std::to_string(batch_size) +
                                       ",1,100,100], got " + shape_to_string(d));
  }
  auto g_params = models.generator.parameters();
  auto d_params = models.discriminator.parameters();
  zero_grads(g_params);
  zero_grads(d_params);

  Tape gen_tape;
  Var noise = gen_tape.constant(Tensor::randn({batch_size, kNoiseLength}, 1.0, rng));
  Var fake = models.generator.forward(gen_tape, noise);

  const Tensor ones({batch_size, 1}, 1.0);
  const Tensor zeros({batch_size, 1}, 0.0);

  GanStepLosses out;
  {
    Tape tape;
    auto real_out = models.discriminator.forward(tape, tape.constant_ref(real_batch), Mode::Train, rng);
    auto fake_out = models.discriminator.forward(tape, tape.constant_ref(fake.value()), Mode::Train, rng);
    Var loss_real = ad::bce_loss(real_out.probability, ones);
    Var loss_fake = ad::bce_loss(fake_out.probability, zeros);
    tape.backward(ad::add(loss_real, loss_fake));
    adam_step(d_params, opt_d);

    out.loss_real = loss_real.value()[0];
    out.loss_fake = loss_fake.value()[0];
    out.mean_d_real = mean_of(real_out.probability.value().data());
    out.mean_d_fake = mean_of(fake_out.probability.value().data());
    out.objective =
        gan_objective(real_out.probability.value().data(), fake_out.probability.value().data());
  }

  auto judged = models.discriminator.forward(gen_tape, fake, Mode::Train, rng, /*frozen=*/true);
  Var loss_gen = ad::bce_loss(judged.probability, ones);
  out.loss_gen = loss_gen.value()[0];
  if (options.update_generator) {
    gen_tape.backward(loss_gen);
    adam_step(g_params, opt_g);
  }
  return out;
}

Phase1Result unsupervised_train(const std::vector<Tensor>& images, const TrainConfig& config,
                                const GanProgress& progress) {
  return unsupervised_train(images, config, init_models(config.seed, config.layers), progress);
}

Phase1Result unsupervised_train(const std::vector<Tensor>& images, const TrainConfig& config,
                                Models start, const GanProgress& progress) {
  config.validate();
  if (images.empty()) fail(ErrorKind::Precondition, "phase-1 training pool is empty");
  Phase1Result result{std::move(start), {}};
  Models& models = result.models;
  AdamState opt_g = make_adam(models.generator.parameters(), config.lr_g, config);
  AdamState opt_d = make_adam(models.discriminator.parameters(), config.lr_d, config);
  Rng rng = derive_rng(config.seed, 1);

  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  result.curve.reserve(config.iterations);
  std::vector<const Tensor*> batch(config.batch_size);
  for (std::size_t it = 1; it <= config.iterations; ++it) {
    for (auto& slot : batch) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      slot = &images[order[cursor++]];
    }
    const auto losses =
        gan_train_step(stack_images(batch), models, opt_g, opt_d, rng, config.batch_size);
    GanCurveRow row{it, losses.loss_real, losses.loss_fake, losses.loss_gen};
    result.curve.push_back(row);
    if (progress) progress(row);
  }
  models.discriminator.set_phase(TrainingPhase::Phase1);
  return result;
}

std::vector<Sample> phase1_pool(const DatasetSplit& split) {
  std::vector<Sample> pool;
  for (const auto& s : split.train_unlabelled) pool.push_back(s.without_label());
  for (const auto& s : split.train_labelled) pool.push_back(s.without_label());
  std::sort(pool.begin(), pool.end(), [](const Sample& a, const Sample& b) { return a.id() < b.id(); });
  return pool;
}

LabelledImages load_labelled(const std::vector<Sample>& samples, bool use_sobel) {
  LabelledImages out;
  for (const auto& s : samples) {
    out.labels.push_back(s.label());
    out.images.push_back(load_preprocessed(s, use_sobel));
  }
  return out;
}

bool EarlyStopping::update(double val_loss) {
  ++epoch_;
  if (epoch_ == 1 || val_loss < best_loss_) {
    best_loss_ = val_loss;
    best_epoch_ = epoch_;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

namespace {

Tensor label_targets(const std::vector<Label>& labels, std::span<const std::size_t> idx) {
  Tensor t({idx.size(), 1});
  for (std::size_t i = 0; i < idx.size(); ++i) t[i] = static_cast<double>(to_int(labels[idx[i]]));
  return t;
}

Tensor gather(const std::vector<Tensor>& images, std::span<const std::size_t> idx) {
  std::vector<const Tensor*> ptrs;
  for (auto i : idx) ptrs.push_back(&images[i]);
  return stack_images(ptrs);
}

}  // namespace

FinetuneResult supervised_finetune(Discriminator start, const LabelledImages& train,
                                   const LabelledImages& validation, const TrainConfig& config) {
  config.validate();
  if (train.size() == 0) {
    fail(ErrorKind::Precondition, "no labelled training samples: semi-supervision still requires some labels");
  }
  if (validation.size() == 0) fail(ErrorKind::Precondition, "validation pool is empty");

  Discriminator model = std::move(start);
  auto params = model.parameters();
  AdamState opt = make_adam(params, config.lr_d, config);
  Rng rng = derive_rng(config.seed, 2);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  EarlyStopping stopper(config.early_stop_patience);
  std::vector<Parameter> best = model.named_parameters();
  std::vector<FinetuneCurveRow> curve;

  for (std::size_t epoch = 1; epoch <= config.finetune_epochs_max; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start_i = 0; start_i < order.size(); start_i += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - start_i);
      std::span<const std::size_t> idx(order.data() + start_i, n);
      zero_grads(params);
      Tape tape;
      auto out = model.forward(tape, tape.constant(gather(train.images, idx)), Mode::Train, rng);
      Var loss = ad::bce_loss(out.probability, label_targets(train.labels, idx));
      tape.backward(loss);
      adam_step(params, opt);
      loss_sum += loss.value()[0] * static_cast<double>(n);
    }
    const double train_loss = loss_sum / static_cast<double>(order.size());
    const auto val_p = predict_probabilities(model, validation.images, config.batch_size);
    const double val_loss = mean_bce(val_p, validation.labels);
    curve.push_back({epoch, train_loss, val_loss});
    if (stopper.update(val_loss)) best = model.named_parameters();
    if (stopper.should_stop()) break;
  }

  model.named_parameters() = std::move(best);
  model.set_phase(TrainingPhase::Phase2);
  return {std::move(model), std::move(curve), stopper.best_epoch()};
}

std::vector<double> predict_probabilities(Discriminator& model, const std::vector<Tensor>& images,
                                          std::size_t batch_size) {
  std::vector<double> out;
  out.reserve(images.size());
  Rng unused(0);
  std::vector<std::size_t> idx(images.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t s = 0; s < images.size(); s += batch_size) {
    const std::size_t n = std::min(batch_size, images.size() - s);
    Tape tape;
    auto res = model.forward(tape, tape.constant(gather(images, {idx.data() + s, n})), Mode::Eval,
                             unused, /*frozen=*/true);
    for (double p : res.probability.value().data()) out.push_back(p);
  }
  return out;
}

double mean_bce(std::span<const double> probabilities, std::span<const Label> labels) {
  if (probabilities.size() != labels.size() || probabilities.empty()) {
    fail(ErrorKind::ShapeMismatch, "mean_bce: need equal, nonzero lengths");
  }
  const double lo = ad::kBceEpsilon, hi = 1.0 - ad::kBceEpsilon;
  double s = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double q = std::clamp(probabilities[i], lo, hi);
    s -= labels[i] == Label::Covid ? std::log(q) : std::log(1.0 - q);
  }
  return s / static_cast<double>(labels.size());
}

Classification classify(Discriminator& model, const Tensor& image) {
  if (model.phase() != TrainingPhase::Phase2) {
    fail(ErrorKind::Precondition, "classify needs a phase-2 (fine-tuned) checkpoint");
  }
  const double p = predict_probabilities(model, {image}, 1).front();
  return {label_from_probability(p), p};
}

double uncertainty_score(double p_covid) {
  if (!(p_covid >= 0.0 && p_covid <= 1.0)) {
    fail(ErrorKind::InvalidArgument, "probability outside [0,1]");
  }
  return 1.0 - 2.0 * std::abs(p_covid - 0.5);
}

}  // namespace sclld
