#include "sclld/evalreport.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "sclld/error.hpp"
#include "sclld/gan.hpp"

namespace sclld {

ConfusionCounts confusion_counts(std::span<const Label> predictions, std::span<const Label> truths) {
  if (predictions.size() != truths.size()) {
    fail(ErrorKind::ShapeMismatch, "confusion_counts: " + std::to_string(predictions.size()) +
                                       " predictions vs " + std::to_string(truths.size()) +
                                       " truths");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    const bool pred = predictions[i] == Label::Covid;
    const bool truth = truths[i] == Label::Covid;
    if (pred && truth) ++c.tp;
    if (pred && !truth) ++c.fp;
    if (!pred && !truth) ++c.tn;
    if (!pred && truth) ++c.fn;
  }
  return c;
}

namespace {

Metric ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

RocResult roc_auc(std::span<const double> scores, std::span<const Label> truths) {
  if (scores.size() != truths.size()) fail(ErrorKind::ShapeMismatch, "roc_auc: length mismatch");
  std::size_t positives = 0;
  for (auto t : truths) positives += t == Label::Covid ? 1 : 0;
  const std::size_t negatives = truths.size() - positives;
  if (positives == 0 || negatives == 0) {
    fail(ErrorKind::InvalidArgument, "AUC undefined: truths contain a single class");
  }

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocResult roc;
  roc.curve.push_back({0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) {
      if (truths[order[i]] == Label::Covid) {
        ++tp;
      } else {
        ++fp;
      }
    }
    const RocPoint next{static_cast<double>(fp) / static_cast<double>(negatives),
                        static_cast<double>(tp) / static_cast<double>(positives)};
    const RocPoint& prev = roc.curve.back();
    roc.auc += (next.fpr - prev.fpr) * (next.tpr + prev.tpr) / 2.0;
    roc.curve.push_back(next);
  }
  return roc;
}

MetricsReport compute_metrics(const ConfusionCounts& c, std::optional<double> mean_loss,
                              std::optional<ScoredTruths> scores) {
  MetricsReport r;
  r.counts = c;
  r.accuracy = ratio(c.tp + c.tn, c.total());
  r.recall = ratio(c.tp, c.tp + c.fn);
  r.precision = ratio(c.tp, c.tp + c.fp);
  r.specificity = ratio(c.tn, c.tn + c.fp);
  r.f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
  r.loss = mean_loss;
  if (scores) {
    const bool has_pos = std::find(scores->truths.begin(), scores->truths.end(), Label::Covid) !=
                         scores->truths.end();
    const bool has_neg = std::find(scores->truths.begin(), scores->truths.end(), Label::Healthy) !=
                         scores->truths.end();
    if (has_pos && has_neg) r.auc = roc_auc(scores->scores, scores->truths).auc;
  }
  return r;
}

MetricsReport evaluate_probabilities(std::span<const double> p_covid, std::span<const Label> truths) {
  std::vector<Label> predicted;
  predicted.reserve(p_covid.size());
  for (double p : p_covid) predicted.push_back(label_from_probability(p));
  const auto counts = confusion_counts(predicted, truths);
  return compute_metrics(counts, mean_bce(p_covid, truths), ScoredTruths{p_covid, truths});
}

std::string metrics_csv_header() { return "accuracy,precision,recall,specificity,f1,loss,auc"; }

std::string format_percent(const Metric& m) {
  if (!m) return kUndefinedMarker;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * *m);
  return buf;
}

std::string format_loss(const Metric& m) {
  if (!m) return kUndefinedMarker;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *m);
  return buf;
}

std::string metrics_csv_row(const MetricsReport& r) {
  return format_percent(r.accuracy) + "," + format_percent(r.precision) + "," +
         format_percent(r.recall) + "," + format_percent(r.specificity) + "," +
         format_percent(r.f1) + "," + format_loss(r.loss) + "," + format_percent(r.auc);
}

std::string metrics_text(const MetricsReport& r) {
  auto pct = [](const Metric& m) { return m ? format_percent(m) + "%" : format_percent(m); };
  std::ostringstream out;
  out << "accuracy     " << pct(r.accuracy) << "\n"
      << "precision    " << pct(r.precision) << "\n"
      << "recall       " << pct(r.recall) << "\n"
      << "specificity  " << pct(r.specificity) << "\n"
      << "f1           " << pct(r.f1) << "\n"
      << "auc          " << pct(r.auc) << "\n"
      << "loss         " << format_loss(r.loss) << "\n"
      << "tp=" << r.counts.tp << " fp=" << r.counts.fp << " tn=" << r.counts.tn
      << " fn=" << r.counts.fn << "\n";
  return out.str();
}

std::string roc_csv(const RocResult& roc) {
  std::string out = "fpr,tpr\n";
  char buf[64];
  for (const auto& p : roc.curve) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", p.fpr, p.tpr);
    out += buf;
  }
  return out;
}

GrayImage gradcam(Discriminator& model, const Tensor& image) {
  if (model.phase() != TrainingPhase::Phase2) {
    fail(ErrorKind::Precondition, "gradcam needs a phase-2 (fine-tuned) checkpoint");
  }
  if (image.dims() != Shape{1, kImageSide, kImageSide}) {
    fail(ErrorKind::ShapeMismatch, "gradcam: image must be [1,100,100], got " +
                                       shape_to_string(image.dims()));
  }
  Tape tape;
  Rng unused(0);
  const Var input = tape.variable(image.reshaped({1, 1, kImageSide, kImageSide}));
  auto out = model.forward(tape, input, Mode::Eval, unused, /*frozen=*/true);
  tape.backward(out.logit);

  const Tensor& feats = out.features.value();
  const Tensor& grads = out.features.grad();
  const std::size_t channels = feats.dim(1), h = feats.dim(2), w = feats.dim(3);
  const std::size_t plane = h * w;
  GrayImage cam(w, h);
  for (std::size_t c = 0; c < channels; ++c) {
    double alpha = 0.0;
    for (std::size_t i = 0; i < plane; ++i) alpha += grads[c * plane + i];
    alpha /= static_cast<double>(plane);
    for (std::size_t i = 0; i < plane; ++i) cam.pixels[i] += alpha * feats[c * plane + i];
  }
  for (auto& v : cam.pixels) v = std::max(v, 0.0);

  GrayImage up = resize_bilinear(cam, kImageSide, kImageSide);
  const double peak = *std::max_element(up.pixels.begin(), up.pixels.end());
  for (auto& v : up.pixels) v = peak > 0.0 ? std::clamp(v / peak, 0.0, 1.0) : 0.0;
  return up;
}

}  // namespace sclld
