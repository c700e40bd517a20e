#pragma once

// Config-driven experiment runs, the labelled-fraction sweep and the Grad-CAM
// gallery. Every artifact lands under the run's output directory.

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "sclld/baselines.hpp"
#include "sclld/evalreport.hpp"
#include "sclld/gan.hpp"

namespace sclld {

enum class Method { Sclld, GanOnly, Cnn, Gp };

std::string_view to_string(Method m);
Method parse_method(std::string_view s);

struct ExperimentConfig {
  std::string corpus;                // manifest path; empty means synthesize
  std::size_t synthetic_count = 2500;
  double labelled_fraction = 0.10;
  TrainConfig train;                 // seed lives here
  bool sobel = true;
  Method method = Method::Sclld;
  std::string output_dir = "runs/default";

  void validate() const;
};

// JSON keys: corpus, synthetic_count, labelled_fraction, iterations,
// batch_size, lr_g, lr_d, beta1, beta2, finetune_epochs_max,
// early_stop_patience, dropout, leaky_slope, sobel, method, output_dir, seed.
// Absent keys keep their defaults; unknown keys are rejected by name.
std::string config_to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(std::string_view text, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {});
const std::vector<std::string>& config_keys();

// H:MM:SS.ffffff
std::string format_duration(std::int64_t microseconds);
std::int64_t parse_duration(std::string_view text);

struct RunRecord {
  ExperimentConfig config;
  std::int64_t duration_us = 0;
  MetricsReport metrics;
  std::uint64_t phase1_label_reads = 0;
  std::vector<std::filesystem::path> files;  // every artifact written

  std::string duration() const { return format_duration(duration_us); }
};

using LogSink = std::function<void(const std::string&)>;

// Steps, each writing into `dir`. Return values feed the next step.
std::vector<Sample> resolve_corpus(const ExperimentConfig& config);
DatasetSplit make_split(const ExperimentConfig& config, const std::filesystem::path& dir);

struct Phase1Outcome {
  Phase1Result result;
  std::uint64_t label_reads = 0;
};
Phase1Outcome run_phase1(const DatasetSplit& split, const ExperimentConfig& config,
                         const std::filesystem::path& dir, const LogSink& log = {});

// Test-set evaluation of a discriminator-shaped model; writes metrics.csv,
// metrics.txt, roc.csv and predictions.csv.
MetricsReport evaluate_model(Discriminator& model, const std::vector<Sample>& test,
                             const ExperimentConfig& config, const std::filesystem::path& dir,
                             std::vector<std::filesystem::path>* written = nullptr);

void write_curve_csv(const std::filesystem::path& path, const std::vector<GanCurveRow>& curve);
void write_curve_csv(const std::filesystem::path& path, const std::vector<FinetuneCurveRow>& curve);
void write_report_files(const std::filesystem::path& dir, const MetricsReport& report,
                        std::span<const double> scores, const std::vector<Sample>& samples,
                        std::vector<std::filesystem::path>* written = nullptr);

// Full pipeline for config.method; writes run.json last.
RunRecord run_experiment(const ExperimentConfig& config, const LogSink& log = {});

// The same pipeline on an existing split; config.labelled_fraction and the
// corpus keys are then informational only. Duration counts from `start`.
RunRecord run_with_split(const ExperimentConfig& config, const DatasetSplit& split,
                         const LogSink& log = {},
                         std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now());

inline constexpr const char* kSweepHeader =
    "fraction,accuracy,precision,recall,specificity,f1,loss,auc,duration";

// One run per fraction under <output_dir>/fraction_<f>, sharing the corpus
// and seed, then <output_dir>/sweep.csv.
std::vector<RunRecord> sweep_labelled_fraction(const ExperimentConfig& base,
                                               const std::vector<double>& fractions,
                                               const LogSink& log = {});
std::vector<double> default_sweep_fractions();

// Writes <id>_raw.pgm, <id>_sobel.pgm and <id>_cam.pgm for `count` labelled
// manifest entries, half per class (the extra one of an odd count is healthy).
// The model sees each image preprocessed with `use_sobel`.
std::vector<std::filesystem::path> emit_gradcam_gallery(const std::filesystem::path& checkpoint,
                                                        const std::filesystem::path& manifest,
                                                        const std::filesystem::path& out_dir,
                                                        std::size_t count,
                                                        bool use_sobel = true,
                                                        LayerSettings layers = {});

void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace sclld
