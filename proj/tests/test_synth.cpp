#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <map>
#include <set>

#include "habit/dataset_io.hpp"
#include "habit/error.hpp"
#include "habit/synth.hpp"

using namespace habit;

namespace {

GenConfig small_config(double sigma, std::uint64_t seed) {
  GenConfig cfg;
  cfg.n_triplets = 300;
  cfg.n_gallery = 400;
  cfg.sigma = sigma;
  cfg.seed = seed;
  return cfg;
}

std::map<NoiseLabel, int> count_labels(const Dataset& d) {
  std::map<NoiseLabel, int> out;
  for (const auto& r : d.records) ++out[r.noise_label];
  return out;
}

int hamming(const std::vector<int>& a, const std::vector<int>& b) {
  int n = 0;
  for (std::size_t k = 0; k < a.size(); ++k) n += a[k] != b[k];
  return n;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("habit_test_synth_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("sigma zero yields only clean records") {
  const Dataset d = generate(small_config(0.0, 1));
  CHECK(count_labels(d)[NoiseLabel::Clean] == 300);
}

TEST_CASE("corruption count is exactly floor(sigma N) for every seed") {
  GenConfig cfg;
  cfg.n_triplets = 1000;
  cfg.n_gallery = 1200;
  cfg.sigma = 0.5;
  const Dataset d = generate(cfg);
  CHECK(1000 - count_labels(d)[NoiseLabel::Clean] == 500);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (double sigma : {0.13, 0.2, 0.77, 1.0}) {
      const Dataset e = generate(small_config(sigma, seed));
      auto counts = count_labels(e);
      const int noisy = static_cast<int>(std::floor(sigma * 300));
      CHECK(counts[NoiseLabel::Partial] + counts[NoiseLabel::Mismatch] == noisy);
      CHECK(counts[NoiseLabel::Partial] == static_cast<int>(std::floor(0.5 * noisy)));
    }
  }
}

TEST_CASE("noise labels match the latent attribute ground truth") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const GenConfig cfg = small_config(0.6, seed);
    const Dataset d = generate(cfg);
    REQUIRE(d.gallery.size() == 400);
    std::map<std::vector<int>, std::int64_t> by_attrs;
    for (const auto& g : d.gallery) by_attrs[g.attributes] = g.id;
    CHECK(by_attrs.size() == d.gallery.size());

    for (std::size_t i = 0; i < d.records.size(); ++i) {
      const auto& r = d.records[i];
      REQUIRE(r.target_id >= 0);
      REQUIRE(r.target_id < 400);
      const auto& got = d.gallery[static_cast<std::size_t>(r.target_id)].attributes;
      const auto& want = d.intended_attributes[i];
      switch (r.noise_label) {
        case NoiseLabel::Clean:
          CHECK(got == want);
          break;
        case NoiseLabel::Partial: {
          // Some but not all of the delta's coordinates are missing.
          const int missing = hamming(got, want);
          CHECK(missing >= 1);
          CHECK(missing <= cfg.max_delta_support - 1);
          break;
        }
        case NoiseLabel::Mismatch:
          CHECK(got != want);
          CHECK(by_attrs.contains(want));
          CHECK(by_attrs.at(want) != r.target_id);
          break;
      }
    }
  }
}

TEST_CASE("gallery ids are dense and vectors separate without discrepancy noise") {
  GenConfig cfg = small_config(0.0, 3);
  cfg.unmentioned_noise_std = 0.0;
  const Dataset d = generate(cfg);
  for (std::size_t k = 0; k < d.gallery.size(); ++k) CHECK(d.gallery[k].id == static_cast<std::int64_t>(k));
  // An orthonormal embedding is an isometry of the attribute lattice, so
  // distinct attribute vectors stay at least distance 1 apart.
  for (std::size_t a = 0; a < 60; ++a) {
    for (std::size_t b = a + 1; b < 60; ++b) {
      const auto& ga = d.gallery[a];
      const auto& gb = d.gallery[b];
      double attr_dist2 = 0;
      for (std::size_t k = 0; k < ga.attributes.size(); ++k) {
        const double diff = ga.attributes[k] - gb.attributes[k];
        attr_dist2 += diff * diff;
      }
      CHECK((ga.vec - gb.vec).squaredNorm() == doctest::Approx(attr_dist2).epsilon(1e-9));
      CHECK(attr_dist2 >= 1.0);
    }
  }
}

TEST_CASE("generation is deterministic down to the bytes") {
  const GenConfig cfg = small_config(0.4, 9);
  const auto a = temp_dir("a"), b = temp_dir("b");
  write_dataset(a, generate(cfg));
  write_dataset(b, generate(cfg));
  for (const char* file : {kTripletsFile, kGalleryFile}) {
    CHECK(read_text_file(a / file) == read_text_file(b / file));
  }
  const Dataset back = read_dataset(a);
  const Dataset orig = generate(cfg);
  REQUIRE(back.records.size() == orig.records.size());
  for (std::size_t i = 0; i < orig.records.size(); ++i) {
    CHECK(back.records[i].ref == orig.records[i].ref);
    CHECK(back.records[i].mod == orig.records[i].mod);
    CHECK(back.records[i].target_id == orig.records[i].target_id);
    CHECK(back.records[i].noise_label == orig.records[i].noise_label);
  }
  for (std::size_t k = 0; k < orig.gallery.size(); ++k) CHECK(back.gallery[k].vec == orig.gallery[k].vec);
  CHECK(generate(small_config(0.4, 10)).records[0].ref != orig.records[0].ref);
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
}

TEST_CASE("jsonl parsing rejects malformed input") {
  CHECK_THROWS_AS(triplets_from_jsonl("{\"id\": 0}\n"), FormatError);
  CHECK_THROWS_AS(triplets_from_jsonl("not json\n"), FormatError);
  CHECK_THROWS_AS(
      triplets_from_jsonl("{\"id\":0,\"ref\":[1],\"mod\":[1],\"target_id\":0,\"noise_label\":\"odd\"}\n"),
      FormatError);
  CHECK_THROWS_AS(gallery_from_jsonl("{\"id\":1,\"vec\":[0.5]}\n"), FormatError);
  CHECK_THROWS_AS(read_dataset(temp_dir("missing")), IoError);
}

TEST_CASE("config validation names the field") {
  GenConfig cfg = small_config(1.5, 0);
  CHECK_THROWS_WITH_AS(validate(cfg), doctest::Contains("sigma"), ConfigError);
  cfg = small_config(0.1, 0);
  cfg.n_gallery = 10;
  CHECK_THROWS_WITH_AS(validate(cfg), doctest::Contains("n_gallery"), ConfigError);
  cfg = small_config(0.1, 0);
  cfg.d_in = 4;
  CHECK_THROWS_WITH_AS(validate(cfg), doctest::Contains("d_in"), ConfigError);
  cfg = small_config(0.1, 0);
  cfg.n_attrs = 2;
  cfg.n_attr_values = 2;
  cfg.d_in = 16;
  cfg.max_delta_support = 2;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
}

namespace {

std::vector<TripletRecord> labelled(int clean, int noisy) {
  std::vector<TripletRecord> out;
  for (int k = 0; k < clean + noisy; ++k) {
    TripletRecord r;
    r.id = k;
    r.noise_label = k < clean ? NoiseLabel::Clean : NoiseLabel::Mismatch;
    out.push_back(r);
  }
  return out;
}

std::set<std::int64_t> ids(const std::vector<TripletRecord>& rs) {
  std::set<std::int64_t> out;
  for (const auto& r : rs) out.insert(r.id);
  return out;
}

}  // namespace

TEST_CASE("split examples") {
  const Split half = split(labelled(10, 0), 0.5, 1);
  CHECK(half.train.size() == 5);
  CHECK(half.test.size() == 5);
  CHECK_FALSE(half.warning);

  const Split noisy = split(labelled(0, 8), 0.25, 1);
  CHECK(noisy.test.empty());
  CHECK(noisy.train.size() == 8);
  CHECK(noisy.warning);

  CHECK_THROWS_AS(split(labelled(4, 0), 0.0, 1), ConfigError);
  CHECK_THROWS_AS(split(labelled(4, 0), 1.0, 1), ConfigError);
}

TEST_CASE("split is disjoint, exhaustive, clean-only and seeded") {
  const auto records = labelled(60, 40);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Split s = split(records, 0.2, seed);
    const auto tr = ids(s.train), te = ids(s.test);
    CHECK(tr.size() + te.size() == records.size());
    for (auto id : te) {
      CHECK_FALSE(tr.contains(id));
      CHECK(records[static_cast<std::size_t>(id)].noise_label == NoiseLabel::Clean);
    }
    CHECK(te.size() == 20);
    CHECK(ids(split(records, 0.2, seed).test) == te);
  }
  CHECK(ids(split(records, 0.2, 1).test) != ids(split(records, 0.2, 2).test));
}
