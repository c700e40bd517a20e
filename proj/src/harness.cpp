#include "sclld/harness.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "sclld/error.hpp"

namespace sclld {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Method m) {
  switch (m) {
    case Method::Sclld: return "sclld";
    case Method::GanOnly: return "gan-only";
    case Method::Cnn: return "cnn";
    case Method::Gp: return "gp";
  }
  return "unknown";
}

Method parse_method(std::string_view s) {
  for (auto m : {Method::Sclld, Method::GanOnly, Method::Cnn, Method::Gp}) {
    if (to_string(m) == s) return m;
  }
  fail(ErrorKind::Config, "unknown method \"" + std::string(s) + "\" (sclld, gan-only, cnn, gp)");
}

void ExperimentConfig::validate() const {
  train.validate();
  if (!(labelled_fraction > 0.0 && labelled_fraction <= 1.0)) {
    fail(ErrorKind::Config, "labelled_fraction must be in (0,1]");
  }
  if (corpus.empty() && (synthetic_count == 0 || synthetic_count % 2 != 0)) {
    fail(ErrorKind::Config, "synthetic_count must be even and positive");
  }
  if (output_dir.empty()) fail(ErrorKind::Config, "output_dir must not be empty");
}

// ---------------------------------------------------------------------------
// Config JSON

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{
      "corpus",      "synthetic_count",     "labelled_fraction",   "iterations", "batch_size",
      "lr_g",        "lr_d",                "beta1",               "beta2",      "finetune_epochs_max",
      "early_stop_patience", "dropout",     "leaky_slope",         "sobel",      "method",
      "output_dir",  "seed"};
  return keys;
}

std::string config_to_json(const ExperimentConfig& c) {
  json j = json::object();
  j["corpus"] = c.corpus;
  j["synthetic_count"] = c.synthetic_count;
  j["labelled_fraction"] = c.labelled_fraction;
  j["iterations"] = c.train.iterations;
  j["batch_size"] = c.train.batch_size;
  j["lr_g"] = c.train.lr_g;
  j["lr_d"] = c.train.lr_d;
  j["beta1"] = c.train.beta1;
  j["beta2"] = c.train.beta2;
  j["finetune_epochs_max"] = c.train.finetune_epochs_max;
  j["early_stop_patience"] = c.train.early_stop_patience;
  j["dropout"] = c.train.layers.dropout_rate;
  j["leaky_slope"] = c.train.layers.leaky_slope;
  j["sobel"] = c.sobel;
  j["method"] = std::string(to_string(c.method));
  j["output_dir"] = c.output_dir;
  j["seed"] = c.train.seed;
  return j.dump(2) + "\n";
}

namespace {

template <typename T>
T read_key(const json& j, const std::string& key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::Config, "config key \"" + key + "\" has the wrong type");
  }
}

std::size_t read_count(const json& j, const std::string& key) {
  if (!j.at(key).is_number_integer() || j.at(key).get<long long>() < 0) {
    fail(ErrorKind::Config, "config key \"" + key + "\" must be a nonnegative integer");
  }
  return j.at(key).get<std::size_t>();
}

}  // namespace

ExperimentConfig config_from_json(std::string_view text, ExperimentConfig c) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) fail(ErrorKind::Config, "config must be a JSON object");
  const std::set<std::string> known(config_keys().begin(), config_keys().end());
  for (const auto& item : j.items()) {
    if (!known.contains(item.key())) fail(ErrorKind::Config, "unknown config key \"" + item.key() + "\"");
  }
  auto has = [&](const char* k) { return j.contains(k); };
  if (has("corpus")) c.corpus = read_key<std::string>(j, "corpus");
  if (has("synthetic_count")) c.synthetic_count = read_count(j, "synthetic_count");
  if (has("labelled_fraction")) c.labelled_fraction = read_key<double>(j, "labelled_fraction");
  if (has("iterations")) c.train.iterations = read_count(j, "iterations");
  if (has("batch_size")) c.train.batch_size = read_count(j, "batch_size");
  if (has("lr_g")) c.train.lr_g = read_key<double>(j, "lr_g");
  if (has("lr_d")) c.train.lr_d = read_key<double>(j, "lr_d");
  if (has("beta1")) c.train.beta1 = read_key<double>(j, "beta1");
  if (has("beta2")) c.train.beta2 = read_key<double>(j, "beta2");
  if (has("finetune_epochs_max")) c.train.finetune_epochs_max = read_count(j, "finetune_epochs_max");
  if (has("early_stop_patience")) c.train.early_stop_patience = read_count(j, "early_stop_patience");
  if (has("dropout")) c.train.layers.dropout_rate = read_key<double>(j, "dropout");
  if (has("leaky_slope")) c.train.layers.leaky_slope = read_key<double>(j, "leaky_slope");
  if (has("sobel")) c.sobel = read_key<bool>(j, "sobel");
  if (has("method")) c.method = parse_method(read_key<std::string>(j, "method"));
  if (has("output_dir")) c.output_dir = read_key<std::string>(j, "output_dir");
  if (has("seed")) c.train.seed = read_count(j, "seed");
  c.validate();
  return c;
}

ExperimentConfig load_config(const fs::path& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return config_from_json(buf.str(), std::move(base));
}

// ---------------------------------------------------------------------------
// Durations

std::string format_duration(std::int64_t us) {
  if (us < 0) fail(ErrorKind::InvalidArgument, "negative duration");
  const std::int64_t micros = us % 1000000;
  const std::int64_t total_s = us / 1000000;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%lld:%02lld:%02lld.%06lld", static_cast<long long>(total_s / 3600),
                static_cast<long long>(total_s / 60 % 60), static_cast<long long>(total_s % 60),
                static_cast<long long>(micros));
  return buf;
}

std::int64_t parse_duration(std::string_view text) {
  long long h = 0, m = 0, s = 0, f = 0;
  int consumed = 0;
  const std::string str(text);
  if (std::sscanf(str.c_str(), "%lld:%2lld:%2lld.%6lld%n", &h, &m, &s, &f, &consumed) != 4 ||
      consumed != static_cast<int>(str.size()) || str.size() < 14 || m > 59 || s > 59 || h < 0 ||
      str[str.size() - 7] != '.') {
    fail(ErrorKind::Format, "duration must look like H:MM:SS.ffffff, got \"" + str + "\"");
  }
  return ((h * 60 + m) * 60 + s) * 1000000 + f;
}

// ---------------------------------------------------------------------------
// Files

void write_text_file(const fs::path& path, std::string_view text) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) fail(ErrorKind::Io, "short write to " + path.string());
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) fail(ErrorKind::Io, "cannot create directory " + dir.string());
}

void emit(const LogSink& log, const std::string& line) {
  if (log) log(line);
}

}  // namespace

void write_curve_csv(const fs::path& path, const std::vector<GanCurveRow>& curve) {
  std::string out = "iteration,loss_real,loss_fake,loss_gen\n";
  for (const auto& r : curve) {
    out += std::to_string(r.iteration) + "," + fmt(r.loss_real) + "," + fmt(r.loss_fake) + "," +
           fmt(r.loss_gen) + "\n";
  }
  write_text_file(path, out);
}

void write_curve_csv(const fs::path& path, const std::vector<FinetuneCurveRow>& curve) {
  std::string out = "epoch,train_loss,val_loss\n";
  for (const auto& r : curve) {
    out += std::to_string(r.epoch) + "," + fmt(r.train_loss) + "," + fmt(r.val_loss) + "\n";
  }
  write_text_file(path, out);
}

void write_report_files(const fs::path& dir, const MetricsReport& report,
                        std::span<const double> scores, const std::vector<Sample>& samples,
                        std::vector<fs::path>* written) {
  std::vector<fs::path> files{dir / "metrics.csv", dir / "metrics.txt", dir / "predictions.csv"};
  write_text_file(files[0], metrics_csv_header() + "\n" + metrics_csv_row(report) + "\n");
  write_text_file(files[1], metrics_text(report));
  std::string preds = "id,truth,predicted,p_covid\n";
  std::vector<Label> truths;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Label truth = samples[i].label();
    truths.push_back(truth);
    preds += samples[i].id() + "," + std::to_string(to_int(truth)) + "," +
             std::to_string(to_int(label_from_probability(scores[i]))) + "," +
             fmt(scores[i]) + "\n";
  }
  write_text_file(files[2], preds);
  if (report.auc) {
    files.push_back(dir / "roc.csv");
    write_text_file(files.back(), roc_csv(roc_auc(scores, truths)));
  }
  if (written != nullptr) written->insert(written->end(), files.begin(), files.end());
}

// ---------------------------------------------------------------------------
// Steps

std::vector<Sample> resolve_corpus(const ExperimentConfig& config) {
  if (!config.corpus.empty()) return load_manifest(config.corpus);
  const fs::path dir = fs::path(config.output_dir) / "corpus";
  return generate_synthetic(config.synthetic_count, config.train.seed, dir);
}

DatasetSplit make_split(const ExperimentConfig& config, const fs::path& dir) {
  const auto samples = resolve_corpus(config);
  DatasetSplit split = partition_dataset(samples, config.labelled_fraction, config.train.seed);
  save_split(split, dir / "split");
  return split;
}

Phase1Outcome run_phase1(const DatasetSplit& split, const ExperimentConfig& config,
                         const fs::path& dir, const LogSink& log) {
  ensure_dir(dir);
  label_audit::reset();
  const auto pool = load_preprocessed(phase1_pool(split), config.sobel);
  const std::size_t every = std::max<std::size_t>(1, config.train.iterations / 20);
  auto progress = [&](const GanCurveRow& r) {
    if (r.iteration % every == 0 || r.iteration == config.train.iterations) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "phase1 %zu/%zu loss_real %.4f loss_fake %.4f loss_gen %.4f",
                    r.iteration, config.train.iterations, r.loss_real, r.loss_fake, r.loss_gen);
      emit(log, buf);
    }
  };
  Phase1Outcome out{unsupervised_train(pool, config.train, progress), 0};
  out.label_reads = label_audit::reads();
  write_curve_csv(dir / "phase1_curve.csv", out.result.curve);
  save_checkpoint(dir / "generator_phase1.ckpt", out.result.models.generator.checkpoint());
  save_checkpoint(dir / "discriminator_phase1.ckpt", out.result.models.discriminator.checkpoint());
  return out;
}

MetricsReport evaluate_model(Discriminator& model, const std::vector<Sample>& test,
                             const ExperimentConfig& config, const fs::path& dir,
                             std::vector<fs::path>* written) {
  const auto data = load_labelled(test, config.sobel);
  const auto p = predict_probabilities(model, data.images, config.train.batch_size);
  const auto report = evaluate_probabilities(p, data.labels);
  write_report_files(dir, report, p, test, written);
  return report;
}

namespace {

MetricsReport run_gp(const DatasetSplit& split, const ExperimentConfig& config, const fs::path& dir,
                     std::vector<fs::path>& files, const LogSink& log) {
  const auto train = load_labelled(split.train_labelled, config.sobel);
  const auto X = flatten_images(train.images);
  const auto y = signed_labels(train.labels);
  const auto hyper = gp_select_hyperparameters(X, y, default_gp_grid(X));
  emit(log, "gp hyperparameters sigma_f " + fmt(hyper.sigma_f) + " sigma_n " + fmt(hyper.sigma_n) +
                " length " + fmt(hyper.length));
  const GpModel model = gp_fit_laplace(X, y, hyper);
  files.push_back(dir / "gp.model");
  save_gp_model(files.back(), model);

  const auto test = load_labelled(split.test, config.sobel);
  std::vector<double> p;
  for (const auto& img : test.images) p.push_back(gp_predict(model, img.values()));
  const auto report = evaluate_probabilities(p, test.labels);
  write_report_files(dir, report, p, split.test, &files);
  return report;
}

}  // namespace

RunRecord run_experiment(const ExperimentConfig& config, const LogSink& log) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  ensure_dir(config.output_dir);
  const DatasetSplit split = make_split(config, config.output_dir);
  return run_with_split(config, split, log, start);
}

RunRecord run_with_split(const ExperimentConfig& config, const DatasetSplit& split,
                         const LogSink& log, std::chrono::steady_clock::time_point start) {
  config.validate();
  const fs::path dir = config.output_dir;
  ensure_dir(dir);
  RunRecord record;
  record.config = config;
  auto& files = record.files;
  files.push_back(dir / "config.json");
  write_text_file(files.back(), config_to_json(config));

  emit(log, "split: " + std::to_string(split.train_unlabelled.size()) + " unlabelled, " +
                std::to_string(split.train_labelled.size()) + " labelled, " +
                std::to_string(split.validation.size()) + " validation, " +
                std::to_string(split.test.size()) + " test");

  switch (config.method) {
    case Method::Sclld:
    case Method::GanOnly: {
      auto phase1 = run_phase1(split, config, dir, log);
      record.phase1_label_reads = phase1.label_reads;
      for (const char* f : {"phase1_curve.csv", "generator_phase1.ckpt", "discriminator_phase1.ckpt"}) {
        files.push_back(dir / f);
      }
      if (config.method == Method::GanOnly) {
        record.metrics = evaluate_model(phase1.result.models.discriminator, split.test, config, dir, &files);
        break;
      }
      const auto train = load_labelled(split.train_labelled, config.sobel);
      const auto val = load_labelled(split.validation, config.sobel);
      auto tuned = supervised_finetune(std::move(phase1.result.models.discriminator), train, val,
                                       config.train);
      emit(log, "phase2 stopped after " + std::to_string(tuned.curve.size()) +
                    " epochs, best epoch " + std::to_string(tuned.best_epoch));
      files.push_back(dir / "phase2_curve.csv");
      write_curve_csv(files.back(), tuned.curve);
      files.push_back(dir / "discriminator_phase2.ckpt");
      save_checkpoint(files.back(), tuned.model.checkpoint());
      record.metrics = evaluate_model(tuned.model, split.test, config, dir, &files);
      break;
    }
    case Method::Cnn: {
      const auto train = load_labelled(split.train_labelled, config.sobel);
      const auto val = load_labelled(split.validation, config.sobel);
      auto cnn = cnn_train_supervised(train, val, config.train);
      emit(log, "cnn stopped after " + std::to_string(cnn.curve.size()) + " epochs, best epoch " +
                    std::to_string(cnn.best_epoch));
      files.push_back(dir / "cnn_curve.csv");
      write_curve_csv(files.back(), cnn.curve);
      files.push_back(dir / "cnn.ckpt");
      save_checkpoint(files.back(), cnn.model.checkpoint());
      record.metrics = evaluate_model(cnn.model, split.test, config, dir, &files);
      break;
    }
    case Method::Gp:
      record.metrics = run_gp(split, config, dir, files, log);
      break;
  }

  record.duration_us = std::chrono::duration_cast<std::chrono::microseconds>(
                           std::chrono::steady_clock::now() - start)
                           .count();
  json run;
  run["config"] = json::parse(config_to_json(config));
  run["duration"] = record.duration();
  run["phase1_label_reads"] = record.phase1_label_reads;
  run["metrics"] = metrics_csv_row(record.metrics);
  run["files"] = json::array();
  for (const auto& f : files) run["files"].push_back(f.lexically_relative(dir).generic_string());
  files.push_back(dir / "run.json");
  write_text_file(files.back(), run.dump(2) + "\n");
  emit(log, "accuracy " + format_percent(record.metrics.accuracy) + "% in " + record.duration());
  return record;
}

// ---------------------------------------------------------------------------
// Sweep

std::vector<double> default_sweep_fractions() {
  return {0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.10};
}

std::vector<RunRecord> sweep_labelled_fraction(const ExperimentConfig& base,
                                               const std::vector<double>& fractions,
                                               const LogSink& log) {
  if (fractions.empty()) fail(ErrorKind::Config, "sweep needs at least one labelled fraction");
  base.validate();
  const fs::path root = base.output_dir;
  ensure_dir(root);
  ExperimentConfig shared = base;
  if (shared.corpus.empty()) {
    generate_synthetic(base.synthetic_count, base.train.seed, root / "corpus");
    shared.corpus = (root / "corpus" / "manifest.csv").string();
  }

  std::vector<RunRecord> records;
  std::string table = std::string(kSweepHeader) + "\n";
  for (double f : fractions) {
    ExperimentConfig c = shared;
    c.labelled_fraction = f;
    char name[32];
    std::snprintf(name, sizeof name, "fraction_%.2f", f);
    c.output_dir = (root / name).string();
    emit(log, std::string("sweep point ") + name);
    records.push_back(run_experiment(c, log));
    const auto& m = records.back().metrics;
    char frac[32];
    std::snprintf(frac, sizeof frac, "%.2f", f);
    table += std::string(frac) + "," + metrics_csv_row(m) + "," + records.back().duration() + "\n";
  }
  write_text_file(root / "sweep.csv", table);
  return records;
}

// ---------------------------------------------------------------------------
// Grad-CAM gallery

std::vector<fs::path> emit_gradcam_gallery(const fs::path& checkpoint, const fs::path& manifest,
                                           const fs::path& out_dir, std::size_t count,
                                           bool use_sobel, LayerSettings layers) {
  const auto samples = load_manifest(manifest);
  if (count > samples.size()) {
    fail(ErrorKind::InvalidArgument, "gallery count " + std::to_string(count) +
                                         " exceeds manifest size " + std::to_string(samples.size()));
  }
  std::vector<fs::path> written;
  if (count == 0) return written;

  Discriminator model(load_checkpoint(checkpoint), layers);
  const std::size_t want_covid = count / 2;
  const std::size_t want_healthy = count - want_covid;
  std::vector<const Sample*> picked;
  std::size_t healthy = 0, covid = 0;
  for (const auto& s : samples) {
    if (!s.has_label()) continue;
    if (s.label() == Label::Healthy && healthy < want_healthy) {
      ++healthy;
      picked.push_back(&s);
    } else if (s.label() == Label::Covid && covid < want_covid) {
      ++covid;
      picked.push_back(&s);
    }
  }
  if (healthy < want_healthy || covid < want_covid) {
    fail(ErrorKind::InvalidArgument, "manifest lacks enough labelled samples of each class");
  }

  ensure_dir(out_dir);
  for (const auto* s : picked) {
    const GrayImage raw = read_pgm_file(s->image_path());
    const GrayImage cam = gradcam(model, to_tensor(preprocess(raw, use_sobel)));
    const fs::path base = out_dir / s->id();
    written.push_back(base.string() + "_raw.pgm");
    write_pgm_file(written.back(), raw);
    written.push_back(base.string() + "_sobel.pgm");
    write_pgm_file(written.back(), preprocess(raw, true), PixelScale::Unit);
    written.push_back(base.string() + "_cam.pgm");
    write_pgm_file(written.back(), cam, PixelScale::Unit);
  }
  return written;
}

}  // namespace sclld
