#include "sclld/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "json.hpp"
#include "sclld/error.hpp"

namespace sclld {

namespace fs = std::filesystem;

namespace {
std::atomic<std::uint64_t> g_label_reads{0};
}  // namespace

namespace label_audit {
std::uint64_t reads() { return g_label_reads.load(); }
void reset() { g_label_reads.store(0); }
}  // namespace label_audit

Label Sample::label() const {
  g_label_reads.fetch_add(1, std::memory_order_relaxed);
  if (!label_) fail(ErrorKind::Precondition, "sample " + id_ + " has no label");
  return *label_;
}

std::size_t round_half_up(double x) {
  return static_cast<std::size_t>(std::floor(x + 0.5 + 1e-9));
}

// ---------------------------------------------------------------------------
// Partitioning

namespace {

// Alternates between the two class queues (starting with the one holding
// more samples) so the drawn set is as balanced as the queues allow.
std::vector<Sample> draw_stratified(std::vector<Sample>& healthy, std::vector<Sample>& covid,
                                    std::size_t count) {
  std::vector<Sample> out;
  std::size_t h = 0, c = 0;
  bool take_covid = covid.size() > healthy.size();
  while (out.size() < count && (h < healthy.size() || c < covid.size())) {
    if ((take_covid && c < covid.size()) || h >= healthy.size()) {
      out.push_back(covid[c++]);
    } else {
      out.push_back(healthy[h++]);
    }
    take_covid = !take_covid;
  }
  healthy.erase(healthy.begin(), healthy.begin() + static_cast<std::ptrdiff_t>(h));
  covid.erase(covid.begin(), covid.begin() + static_cast<std::ptrdiff_t>(c));
  return out;
}

}  // namespace

DatasetSplit partition_dataset(const std::vector<Sample>& samples, double labelled_fraction,
                               std::uint64_t seed) {
  if (!(labelled_fraction > 0.0 && labelled_fraction <= 1.0)) {
    fail(ErrorKind::InvalidArgument, "labelled fraction must be in (0, 1]");
  }
  const std::size_t n = samples.size();
  const std::size_t n_test = round_half_up(0.20 * static_cast<double>(n));
  const std::size_t n_train = n - std::min(n, n_test);
  const std::size_t n_labelled =
      std::min(n_train, round_half_up(labelled_fraction * 0.80 * static_cast<double>(n)));
  const std::size_t n_val = round_half_up(0.20 * static_cast<double>(n_labelled));
  const std::size_t n_unlabelled = n_train - n_labelled;
  if (n_test == 0 || n_val == 0 || n_labelled <= n_val ||
      (n_unlabelled == 0 && labelled_fraction < 1.0)) {
    fail(ErrorKind::Precondition, "too few samples (" + std::to_string(n) +
                                      ") to populate every pool at labelled fraction " +
                                      std::to_string(labelled_fraction));
  }

  std::set<std::string> ids;
  for (const auto& s : samples) {
    if (!ids.insert(s.id()).second) fail(ErrorKind::InvalidArgument, "duplicate sample id " + s.id());
  }

  std::vector<Sample> order = samples;
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  DatasetSplit split;
  split.seed = seed;
  split.labelled_fraction = labelled_fraction;

  std::vector<Sample> unlabelled_only;
  std::vector<Sample> healthy, covid;
  for (auto& s : order) {
    if (!s.has_label()) {
      unlabelled_only.push_back(std::move(s));
    } else if (split.test.size() < n_test) {
      split.test.push_back(std::move(s));
    } else if (s.label() == Label::Covid) {
      covid.push_back(std::move(s));
    } else {
      healthy.push_back(std::move(s));
    }
  }
  if (split.test.size() < n_test || healthy.size() + covid.size() < n_labelled) {
    fail(ErrorKind::Precondition, "not enough labelled samples for the test and labelled pools");
  }

  std::vector<Sample> labelled = draw_stratified(healthy, covid, n_labelled);
  // Validation is drawn stratified from the labelled pool as well.
  std::vector<Sample> lab_healthy, lab_covid;
  for (auto& s : labelled) {
    (s.label() == Label::Covid ? lab_covid : lab_healthy).push_back(std::move(s));
  }
  split.validation = draw_stratified(lab_healthy, lab_covid, n_val);
  std::vector<Sample> rest = draw_stratified(lab_healthy, lab_covid, n_labelled - n_val);
  split.train_labelled = std::move(rest);

  // Whatever is left of the training pool goes in unlabelled, labels dropped.
  std::vector<Sample> remaining = std::move(healthy);
  for (auto& s : covid) remaining.push_back(std::move(s));
  for (auto& s : unlabelled_only) remaining.push_back(std::move(s));
  std::sort(remaining.begin(), remaining.end(),
            [](const Sample& a, const Sample& b) { return a.id() < b.id(); });
  for (const auto& s : remaining) split.train_unlabelled.push_back(s.without_label());
  return split;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

// Soft-edged disc mask value at distance d for radius r.
double soft_disc(double d, double r) { return 1.0 / (1.0 + std::exp((d - r) / 1.5)); }

}  // namespace

GrayImage synthesize_image(Label label, Rng& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  const auto side = static_cast<double>(kImageSide);
  GrayImage img(kImageSide, kImageSide);

  // Smooth body: one or two broad blobs.
  struct Blob { double cx, cy, sx, sy, amp; };
  std::vector<Blob> blobs;
  const int n_blobs = uni(rng) < 0.5 ? 1 : 2;
  for (int b = 0; b < n_blobs; ++b) {
    blobs.push_back({side * (0.3 + 0.4 * uni(rng)), side * (0.3 + 0.4 * uni(rng)),
                     side * (0.10 + 0.12 * uni(rng)), side * (0.10 + 0.12 * uni(rng)),
                     100.0 + 80.0 * uni(rng)});
  }
  const double background = 30.0 + 20.0 * uni(rng);
  for (std::size_t y = 0; y < kImageSide; ++y) {
    for (std::size_t x = 0; x < kImageSide; ++x) {
      double v = background;
      for (const auto& b : blobs) {
        const double dx = (static_cast<double>(x) - b.cx) / b.sx;
        const double dy = (static_cast<double>(y) - b.cy) / b.sy;
        v += b.amp * std::exp(-0.5 * (dx * dx + dy * dy));
      }
      img.at(x, y) = v;
    }
  }

  // Lesions: small discs of fine speckle placed inside a blob.
  if (label == Label::Covid) {
    const int n_lesions = 2 + static_cast<int>(uni(rng) * 3.0);
    for (int l = 0; l < n_lesions; ++l) {
      const auto& host = blobs[static_cast<std::size_t>(uni(rng) * static_cast<double>(blobs.size()))];
      const double cx = host.cx + host.sx * (uni(rng) - 0.5);
      const double cy = host.cy + host.sy * (uni(rng) - 0.5);
      const double radius = 3.0 + 3.0 * uni(rng);
      const double amp = 5.0 + 3.0 * uni(rng);
      for (std::size_t y = 0; y < kImageSide; ++y) {
        for (std::size_t x = 0; x < kImageSide; ++x) {
          const double d = std::hypot(static_cast<double>(x) - cx, static_cast<double>(y) - cy);
          if (d > radius + 8.0) continue;
          img.at(x, y) += amp * soft_disc(d, radius) * noise(rng);
        }
      }
    }
  }

  // Unit sensor noise everywhere; speckle sits just above it.
  for (auto& v : img.pixels) v += noise(rng);

  // Stretch to span the full byte range.
  const auto [lo, hi] = std::minmax_element(img.pixels.begin(), img.pixels.end());
  const double low = *lo, span = std::max(*hi - *lo, 1e-9);
  for (auto& v : img.pixels) v = std::round(255.0 * (v - low) / span);
  return img;
}

std::vector<Sample> generate_synthetic(std::size_t count, std::uint64_t seed,
                                       const fs::path& out_dir) {
  if (count == 0 || count % 2 != 0) {
    fail(ErrorKind::InvalidArgument, "synthetic corpus size must be even and positive");
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) fail(ErrorKind::Io, "cannot create " + out_dir.string());

  Rng rng(seed);
  std::vector<Label> labels(count, Label::Healthy);
  std::fill(labels.begin() + static_cast<std::ptrdiff_t>(count / 2), labels.end(), Label::Covid);
  std::shuffle(labels.begin(), labels.end(), rng);

  std::vector<Sample> samples;
  samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::ostringstream id;
    id << "img_" << std::setw(5) << std::setfill('0') << i;
    const fs::path path = out_dir / (id.str() + ".pgm");
    write_pgm_file(path, synthesize_image(labels[i], rng));
    samples.emplace_back(id.str(), path.lexically_normal(), labels[i]);
  }
  save_manifest(samples, out_dir / "manifest.csv");
  return samples;
}

// ---------------------------------------------------------------------------
// Manifests

namespace {

fs::path manifest_base(const fs::path& manifest) {
  fs::path base = manifest.parent_path();
  return base.empty() ? fs::path(".") : base;
}

std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cell);
      cell.clear();
    } else {
      cell.push_back(c);
    }
  }
  cells.push_back(cell);
  return cells;
}

}  // namespace

void save_manifest(const std::vector<Sample>& samples, const fs::path& path) {
  std::vector<const Sample*> sorted;
  for (const auto& s : samples) sorted.push_back(&s);
  std::sort(sorted.begin(), sorted.end(),
            [](const Sample* a, const Sample* b) { return a->id() < b->id(); });

  const fs::path base = fs::absolute(manifest_base(path)).lexically_normal();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write manifest " + path.string());
  out << "id,path,label\n";
  for (const auto* s : sorted) {
    fs::path p = s->image_path();
    if (p.is_relative()) p = fs::absolute(p);
    const fs::path rel = p.lexically_normal().lexically_relative(base);
    out << s->id() << ',' << (rel.empty() ? p.generic_string() : rel.generic_string()) << ',';
    if (s->has_label()) out << to_int(s->label());
    out << '\n';
  }
  if (!out) fail(ErrorKind::Io, "short write to manifest " + path.string());
}

std::vector<Sample> load_manifest(const fs::path& path, bool check_files) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open manifest " + path.string());
  const fs::path base = fs::absolute(manifest_base(path)).lexically_normal();
  std::string line;
  if (!std::getline(in, line) || line != "id,path,label") {
    fail(ErrorKind::Format, "manifest header must be 'id,path,label'");
  }
  std::vector<Sample> samples;
  std::set<std::string> ids;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto cells = split_csv_row(line);
    if (cells.size() != 3 || cells[0].empty() || cells[1].empty()) {
      fail(ErrorKind::Format, "malformed manifest row " + std::to_string(row));
    }
    std::optional<Label> label;
    if (cells[2] == "0") {
      label = Label::Healthy;
    } else if (cells[2] == "1") {
      label = Label::Covid;
    } else if (!cells[2].empty()) {
      fail(ErrorKind::Format, "manifest row " + std::to_string(row) + ": label must be 0, 1 or empty");
    }
    if (!ids.insert(cells[0]).second) fail(ErrorKind::Format, "duplicate id " + cells[0]);
    fs::path p(cells[1]);
    if (p.is_relative()) p = base / p;
    p = p.lexically_normal();
    if (check_files && !fs::exists(p)) {
      fail(ErrorKind::Io, "manifest row " + std::to_string(row) + ": missing file " + p.string());
    }
    samples.emplace_back(cells[0], p, label);
  }
  std::sort(samples.begin(), samples.end(),
            [](const Sample& a, const Sample& b) { return a.id() < b.id(); });
  return samples;
}

void save_split(const DatasetSplit& split, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) fail(ErrorKind::Io, "cannot create " + dir.string());
  save_manifest(split.train_unlabelled, dir / "train_unlabelled.csv");
  save_manifest(split.train_labelled, dir / "train_labelled.csv");
  save_manifest(split.validation, dir / "validation.csv");
  save_manifest(split.test, dir / "test.csv");
  nlohmann::json meta{{"seed", split.seed}, {"labelled_fraction", split.labelled_fraction}};
  std::ofstream out(dir / "split.json", std::ios::trunc);
  out << meta.dump(2) << '\n';
  if (!out) fail(ErrorKind::Io, "cannot write split.json");
}

DatasetSplit load_split(const fs::path& dir) {
  DatasetSplit split;
  split.train_unlabelled = load_manifest(dir / "train_unlabelled.csv");
  split.train_labelled = load_manifest(dir / "train_labelled.csv");
  split.validation = load_manifest(dir / "validation.csv");
  split.test = load_manifest(dir / "test.csv");
  std::ifstream in(dir / "split.json");
  if (!in) fail(ErrorKind::Io, "missing split.json in " + dir.string());
  try {
    const auto meta = nlohmann::json::parse(in);
    split.seed = meta.at("seed").get<std::uint64_t>();
    split.labelled_fraction = meta.at("labelled_fraction").get<double>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, std::string("split.json: ") + e.what());
  }
  return split;
}

Tensor load_preprocessed(const Sample& sample, bool use_sobel) {
  return to_tensor(preprocess(read_pgm_file(sample.image_path()), use_sobel));
}

std::vector<Tensor> load_preprocessed(const std::vector<Sample>& samples, bool use_sobel) {
  std::vector<Tensor> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(load_preprocessed(s, use_sobel));
  return out;
}

}  // namespace sclld
