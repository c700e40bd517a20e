#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "sclld/dataset.hpp"
#include "sclld/error.hpp"

using namespace sclld;
namespace fs = std::filesystem;

namespace {

std::vector<Sample> fake_corpus(std::size_t n) {
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::ostringstream id;
    id << "s" << i;
    out.emplace_back(id.str(), "/nonexistent/" + id.str() + ".pgm",
                     i % 2 == 0 ? Label::Healthy : Label::Covid);
  }
  return out;
}

std::set<std::string> ids(const std::vector<Sample>& v) {
  std::set<std::string> s;
  for (const auto& x : v) s.insert(x.id());
  return s;
}

std::size_t count_label(const std::vector<Sample>& v, Label l) {
  std::size_t n = 0;
  for (const auto& s : v) n += s.label() == l ? 1 : 0;
  return n;
}

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("sclld_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("ten thousand samples at ten percent") {
  const auto s = partition_dataset(fake_corpus(10000), 0.10, 1);
  CHECK(s.test.size() == 2000);
  CHECK(s.train_labelled.size() + s.validation.size() == 800);
  CHECK(s.validation.size() == 160);
  CHECK(s.train_unlabelled.size() == 7200);
}

TEST_CASE("one hundred samples at ten percent") {
  const auto s = partition_dataset(fake_corpus(100), 0.10, 2);
  CHECK(s.test.size() == 20);
  CHECK(s.train_labelled.size() + s.validation.size() == 8);
  CHECK(s.validation.size() == 2);
  CHECK(s.train_unlabelled.size() + s.train_labelled.size() + s.validation.size() == 80);
}

TEST_CASE("pools are disjoint, balanced and unlabelled where required") {
  const auto s = partition_dataset(fake_corpus(1000), 0.05, 3);
  std::set<std::string> all;
  std::size_t total = 0;
  for (const auto* pool : {&s.train_unlabelled, &s.train_labelled, &s.validation, &s.test}) {
    const auto p = ids(*pool);
    total += p.size();
    all.insert(p.begin(), p.end());
  }
  CHECK(all.size() == total);
  CHECK(total == 1000);
  for (const auto& u : s.train_unlabelled) CHECK_FALSE(u.has_label());
  for (const auto& t : s.test) CHECK(t.has_label());
  CHECK(count_label(s.train_labelled, Label::Covid) == count_label(s.train_labelled, Label::Healthy));
  CHECK(count_label(s.validation, Label::Covid) == count_label(s.validation, Label::Healthy));
}

TEST_CASE("sweep fractions all give valid splits") {
  const auto corpus = fake_corpus(1000);
  for (int pct = 1; pct <= 10; ++pct) {
    const double f = pct / 100.0;
    const auto s = partition_dataset(corpus, f, 4);
    CHECK(s.test.size() == 200);
    CHECK(s.train_labelled.size() + s.validation.size() == round_half_up(f * 800));
    CHECK_FALSE(s.train_labelled.empty());
    CHECK_FALSE(s.validation.empty());
    CHECK(s.train_unlabelled.size() + s.train_labelled.size() + s.validation.size() == 800);
  }
}

TEST_CASE("partitioning is deterministic per seed") {
  const auto corpus = fake_corpus(300);
  const auto a = partition_dataset(corpus, 0.10, 5);
  const auto b = partition_dataset(corpus, 0.10, 5);
  CHECK(a.test == b.test);
  CHECK(a.train_labelled == b.train_labelled);
  CHECK(a.validation == b.validation);
  CHECK(a.train_unlabelled == b.train_unlabelled);
  const auto c = partition_dataset(corpus, 0.10, 6);
  CHECK_FALSE(a.test == c.test);
}

TEST_CASE("partitioning errors") {
  CHECK_THROWS_AS(partition_dataset(fake_corpus(10), 0.10, 1), Error);
  CHECK_THROWS_AS(partition_dataset(fake_corpus(100), 0.0, 1), Error);
  CHECK_THROWS_AS(partition_dataset(fake_corpus(100), 1.5, 1), Error);
  auto dup = fake_corpus(100);
  dup.push_back(dup.front());
  CHECK_THROWS_AS(partition_dataset(dup, 0.10, 1), Error);
}

TEST_CASE("round half up") {
  CHECK(round_half_up(2.5) == 3);
  CHECK(round_half_up(1.6) == 2);
  CHECK(round_half_up(0.4) == 0);
  CHECK(round_half_up(0.1 * 0.8 * 100) == 8);
}

TEST_CASE("label reads are audited") {
  Sample s("a", "a.pgm", Label::Covid);
  label_audit::reset();
  CHECK(label_audit::reads() == 0);
  CHECK(s.label() == Label::Covid);
  CHECK(label_audit::reads() == 1);
  CHECK_THROWS_AS(s.without_label().label(), Error);
  CHECK(s.has_label());
  CHECK_FALSE(s.without_label().has_label());
}

TEST_CASE("synthetic corpus") {
  const auto dir = scratch_dir("synth");
  const auto samples = generate_synthetic(10, 7, dir / "a");
  CHECK(samples.size() == 10);
  CHECK(count_label(samples, Label::Covid) == 5);
  CHECK(count_label(samples, Label::Healthy) == 5);
  CHECK(fs::exists(dir / "a" / "manifest.csv"));

  generate_synthetic(10, 7, dir / "b");
  for (const auto& s : samples) {
    const auto name = s.image_path().filename();
    CHECK(file_bytes(dir / "a" / name) == file_bytes(dir / "b" / name));
    const auto img = read_pgm_file(s.image_path());
    CHECK(img.width == 100);
    CHECK(img.height == 100);
    CHECK(*std::min_element(img.pixels.begin(), img.pixels.end()) == 0.0);
    CHECK(*std::max_element(img.pixels.begin(), img.pixels.end()) == 255.0);
  }
  CHECK_THROWS_AS(generate_synthetic(9, 7, dir / "c"), Error);
  fs::remove_all(dir);
}

TEST_CASE("classes differ in edge texture, not brightness") {
  Rng rng(8);
  double peak[2] = {0.0, 0.0}, brightness[2] = {0.0, 0.0};
  for (int i = 0; i < 200; ++i) {
    const Label l = i % 2 == 0 ? Label::Healthy : Label::Covid;
    const auto img = synthesize_image(l, rng);
    const auto g = sobel_gradient(img);
    peak[to_int(l)] += *std::max_element(g.pixels.begin(), g.pixels.end()) / 100.0;
    brightness[to_int(l)] +=
        std::accumulate(img.pixels.begin(), img.pixels.end(), 0.0) / static_cast<double>(img.pixels.size()) / 100.0;
  }
  CHECK(peak[1] > 1.2 * peak[0]);
  CHECK(std::abs(brightness[1] - brightness[0]) < 5.0);
}

TEST_CASE("manifest roundtrip and parsing rules") {
  const auto dir = scratch_dir("manifest");
  std::vector<Sample> samples{{"b", dir / "b.pgm", Label::Covid},
                              {"a", dir / "a.pgm", Label::Healthy},
                              {"c", dir / "c.pgm", std::nullopt}};
  save_manifest(samples, dir / "m.csv");
  const auto loaded = load_manifest(dir / "m.csv", false);
  REQUIRE(loaded.size() == 3);
  CHECK(loaded[0] == samples[1]);
  CHECK(loaded[1] == samples[0]);
  CHECK(loaded[2] == samples[2]);
  CHECK_FALSE(loaded[2].has_label());
  CHECK(file_bytes(dir / "m.csv") == "id,path,label\na,a.pgm,0\nb,b.pgm,1\nc,c.pgm,\n");

  CHECK_THROWS_AS(load_manifest(dir / "m.csv", true), Error);  // files are missing

  std::ofstream(dir / "dup.csv") << "id,path,label\nx,x.pgm,1\nx,y.pgm,0\n";
  try {
    load_manifest(dir / "dup.csv", false);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("x") != std::string::npos);
  }
  std::ofstream(dir / "bad.csv") << "id,path,label\nx,x.pgm\n";
  CHECK_THROWS_AS(load_manifest(dir / "bad.csv", false), Error);
  std::ofstream(dir / "badlabel.csv") << "id,path,label\nx,x.pgm,2\n";
  CHECK_THROWS_AS(load_manifest(dir / "badlabel.csv", false), Error);
  std::ofstream(dir / "header.csv") << "name,file\n";
  CHECK_THROWS_AS(load_manifest(dir / "header.csv", false), Error);
  fs::remove_all(dir);
}

TEST_CASE("split save and load") {
  const auto dir = scratch_dir("split");
  const auto samples = generate_synthetic(100, 9, dir / "corpus");
  const auto s = partition_dataset(samples, 0.10, 10);
  save_split(s, dir / "split");
  const auto back = load_split(dir / "split");
  CHECK(back.seed == 10);
  CHECK(back.labelled_fraction == 0.10);
  CHECK(ids(back.test) == ids(s.test));
  CHECK(ids(back.train_labelled) == ids(s.train_labelled));
  CHECK(ids(back.validation) == ids(s.validation));
  CHECK(ids(back.train_unlabelled) == ids(s.train_unlabelled));
  for (const auto& u : back.train_unlabelled) CHECK_FALSE(u.has_label());

  const auto t = load_preprocessed(back.test.front(), true);
  CHECK(t.dims() == Shape{1, 100, 100});
  fs::remove_all(dir);
}

}  // TEST_SUITE
