// sclld: command-line driver for corpus synthesis, splits, training,
// evaluation, the labelled-fraction sweep and Grad-CAM galleries.

#include <malloc.h>

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "sclld/error.hpp"
#include "sclld/harness.hpp"

namespace fs = std::filesystem;
using namespace sclld;

namespace {

void log_line(const std::string& line) { std::cerr << line << std::endl; }

// Flags that mirror ExperimentConfig keys. Unset flags leave the config-file
// value (or the default) alone.
struct ConfigFlags {
  std::string config_path;
  std::optional<std::string> corpus, method, output_dir;
  std::optional<std::size_t> synthetic_count, iterations, batch_size, finetune_epochs_max,
      early_stop_patience;
  std::optional<double> labelled_fraction, lr_g, lr_d, beta1, beta2, dropout, leaky_slope;
  std::optional<std::uint64_t> seed;
  std::optional<bool> sobel;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    app->add_option("--corpus", corpus, "manifest.csv of an existing corpus");
    app->add_option("--synthetic-count", synthetic_count, "synthetic corpus size when no corpus");
    app->add_option("--labelled-fraction", labelled_fraction, "labelled share of the training pool");
    app->add_option("--iterations", iterations, "phase-1 iterations");
    app->add_option("--batch-size", batch_size, "minibatch size");
    app->add_option("--lr-g", lr_g, "generator learning rate");
    app->add_option("--lr-d", lr_d, "discriminator learning rate");
    app->add_option("--beta1", beta1, "Adam beta1");
    app->add_option("--beta2", beta2, "Adam beta2");
    app->add_option("--finetune-epochs-max", finetune_epochs_max, "phase-2 epoch cap");
    app->add_option("--early-stop-patience", early_stop_patience, "phase-2 patience in epochs");
    app->add_option("--dropout", dropout, "dropout rate");
    app->add_option("--leaky-slope", leaky_slope, "leaky-ReLU slope");
    app->add_option("--sobel", sobel, "Sobel preprocessing (true/false)");
    app->add_option("--method", method, "sclld | gan-only | cnn | gp");
    app->add_option("--output-dir", output_dir, "artifact directory");
    app->add_option("--seed", seed, "run seed");
  }

  ExperimentConfig resolve() const {
    ExperimentConfig c = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    if (corpus) c.corpus = *corpus;
    if (synthetic_count) c.synthetic_count = *synthetic_count;
    if (labelled_fraction) c.labelled_fraction = *labelled_fraction;
    if (iterations) c.train.iterations = *iterations;
    if (batch_size) c.train.batch_size = *batch_size;
    if (lr_g) c.train.lr_g = *lr_g;
    if (lr_d) c.train.lr_d = *lr_d;
    if (beta1) c.train.beta1 = *beta1;
    if (beta2) c.train.beta2 = *beta2;
    if (finetune_epochs_max) c.train.finetune_epochs_max = *finetune_epochs_max;
    if (early_stop_patience) c.train.early_stop_patience = *early_stop_patience;
    if (dropout) c.train.layers.dropout_rate = *dropout;
    if (leaky_slope) c.train.layers.leaky_slope = *leaky_slope;
    if (sobel) c.sobel = *sobel;
    if (method) c.method = parse_method(*method);
    if (output_dir) c.output_dir = *output_dir;
    if (seed) c.train.seed = *seed;
    c.validate();
    return c;
  }
};

DatasetSplit split_for(const ExperimentConfig& c, const std::string& split_dir) {
  if (!split_dir.empty()) return load_split(split_dir);
  return make_split(c, c.output_dir);
}

void print_metrics(const MetricsReport& m) { std::cout << metrics_text(m); }

}  // namespace

int main(int argc, char** argv) {
  // Training allocates and frees many large tensors per step; keep them on
  // the heap instead of round-tripping through mmap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"Semi-supervised lung-lesion classifier: GAN pretraining + fine-tuning"};
  app.require_subcommand(1);

  // synth
  std::size_t synth_count = 0;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "write a synthetic PGM corpus and manifest");
  synth->add_option("--count", synth_count, "number of images (even)")->required();
  synth->add_option("--seed", synth_seed, "corpus seed");
  synth->add_option("--out", synth_out, "output directory")->required();

  // split
  std::string split_manifest, split_out;
  double split_fraction = 0.10;
  std::uint64_t split_seed = 0;
  auto* split = app.add_subcommand("split", "partition a manifest into the four pools");
  split->add_option("--manifest", split_manifest, "corpus manifest.csv")->required();
  split->add_option("--labelled-fraction", split_fraction, "labelled share of the training pool");
  split->add_option("--seed", split_seed, "split seed");
  split->add_option("--out", split_out, "split directory")->required();

  // train-gan
  ConfigFlags gan_flags;
  std::string gan_split;
  auto* train_gan = app.add_subcommand("train-gan", "phase 1: adversarial training on unlabelled images");
  gan_flags.attach(train_gan);
  train_gan->add_option("--split", gan_split, "saved split directory (default: build one)");

  // finetune
  ConfigFlags ft_flags;
  std::string ft_split, ft_disc;
  auto* finetune = app.add_subcommand("finetune", "phase 2: supervised fine-tuning of a phase-1 discriminator");
  ft_flags.attach(finetune);
  finetune->add_option("--split", ft_split, "saved split directory")->required();
  finetune->add_option("--discriminator", ft_disc, "phase-1 discriminator checkpoint")->required();

  // eval
  ConfigFlags eval_flags;
  std::string eval_split, eval_ckpt;
  auto* eval = app.add_subcommand("eval", "evaluate a discriminator-shaped checkpoint on the test pool");
  eval_flags.attach(eval);
  eval->add_option("--split", eval_split, "saved split directory")->required();
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint to evaluate")->required();

  // cnn / gp
  ConfigFlags cnn_flags, gp_flags;
  std::string cnn_split, gp_split;
  auto* cnn = app.add_subcommand("cnn", "supervised CNN baseline from random init");
  cnn_flags.attach(cnn);
  cnn->add_option("--split", cnn_split, "saved split directory (default: build one)");
  auto* gp = app.add_subcommand("gp", "Gaussian-process baseline on flattened images");
  gp_flags.attach(gp);
  gp->add_option("--split", gp_split, "saved split directory (default: build one)");

  // sweep
  ConfigFlags sweep_flags;
  std::vector<double> sweep_fractions;
  auto* sweep = app.add_subcommand("sweep", "run_experiment over several labelled fractions");
  sweep_flags.attach(sweep);
  sweep->add_option("--fractions", sweep_fractions, "labelled fractions (default 0.01..0.10)");

  // gradcam
  std::string cam_ckpt, cam_manifest, cam_out;
  std::size_t cam_count = 4;
  bool cam_sobel = true;
  auto* cam = app.add_subcommand("gradcam", "raw / Sobel / Grad-CAM triplets for a phase-2 model");
  cam->add_option("--checkpoint", cam_ckpt, "phase-2 checkpoint")->required();
  cam->add_option("--manifest", cam_manifest, "labelled manifest.csv")->required();
  cam->add_option("--out", cam_out, "output directory")->required();
  cam->add_option("--count", cam_count, "number of images, half per class");
  cam->add_option("--sobel", cam_sobel, "model input uses Sobel preprocessing");

  // run
  ConfigFlags run_flags;
  auto* run = app.add_subcommand("run", "full pipeline for the configured method");
  run_flags.attach(run);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << std::endl;
    return 2;
  }

  try {
    if (*synth) {
      const auto samples = generate_synthetic(synth_count, synth_seed, synth_out);
      std::cout << "wrote " << samples.size() << " images and manifest.csv to " << synth_out << "\n";
    } else if (*split) {
      const auto s = partition_dataset(load_manifest(split_manifest), split_fraction, split_seed);
      save_split(s, split_out);
      std::cout << "unlabelled " << s.train_unlabelled.size() << ", labelled "
                << s.train_labelled.size() << ", validation " << s.validation.size() << ", test "
                << s.test.size() << "\n";
    } else if (*train_gan) {
      const auto c = gan_flags.resolve();
      const auto s = split_for(c, gan_split);
      write_text_file(fs::path(c.output_dir) / "config.json", config_to_json(c));
      const auto out = run_phase1(s, c, c.output_dir, log_line);
      std::cout << "phase-1 label reads: " << out.label_reads << "\n";
      std::cout << "checkpoints in " << c.output_dir << "\n";
    } else if (*finetune) {
      const auto c = ft_flags.resolve();
      const auto s = load_split(ft_split);
      Discriminator start(load_checkpoint(ft_disc), c.train.layers);
      if (start.role() != ModelRole::Discriminator) {
        fail(ErrorKind::Precondition, "finetune needs a discriminator checkpoint");
      }
      const auto train = load_labelled(s.train_labelled, c.sobel);
      const auto val = load_labelled(s.validation, c.sobel);
      auto tuned = supervised_finetune(std::move(start), train, val, c.train);
      const fs::path dir = c.output_dir;
      write_curve_csv(dir / "phase2_curve.csv", tuned.curve);
      save_checkpoint(dir / "discriminator_phase2.ckpt", tuned.model.checkpoint());
      log_line("best epoch " + std::to_string(tuned.best_epoch) + " of " +
               std::to_string(tuned.curve.size()));
      print_metrics(evaluate_model(tuned.model, s.test, c, dir));
    } else if (*eval) {
      const auto c = eval_flags.resolve();
      const auto s = load_split(eval_split);
      Discriminator model(load_checkpoint(eval_ckpt), c.train.layers);
      print_metrics(evaluate_model(model, s.test, c, c.output_dir));
    } else if (*cnn || *gp) {
      auto c = (*cnn ? cnn_flags : gp_flags).resolve();
      c.method = *cnn ? Method::Cnn : Method::Gp;
      const auto s = split_for(c, *cnn ? cnn_split : gp_split);
      print_metrics(run_with_split(c, s, log_line).metrics);
    } else if (*sweep) {
      const auto c = sweep_flags.resolve();
      const auto fractions = sweep_fractions.empty() ? default_sweep_fractions() : sweep_fractions;
      sweep_labelled_fraction(c, fractions, log_line);
      std::cout << "wrote " << (fs::path(c.output_dir) / "sweep.csv").string() << "\n";
    } else if (*cam) {
      const auto files = emit_gradcam_gallery(cam_ckpt, cam_manifest, cam_out, cam_count, cam_sobel);
      std::cout << "wrote " << files.size() << " PGM files to " << cam_out << "\n";
    } else if (*run) {
      const auto record = run_experiment(run_flags.resolve(), log_line);
      print_metrics(record.metrics);
      std::cout << "phase-1 label reads: " << record.phase1_label_reads << "\n"
                << "duration " << record.duration() << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.kind()) << ": " << e.what() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
