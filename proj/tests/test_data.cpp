#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "hiclass/data.hpp"
#include "test_util.hpp"

using namespace hiclass;

namespace {

// Random bag whose features are exactly representable in f32, as every bag
// produced by the generator is.
Bag random_bag(Rng& rng, std::size_t n_patches, std::size_t dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Bag bag;
  bag.slide_id = "random";
  bag.features = Matrix(n_patches, dim);
  for (double& x : bag.features.data())
    x = static_cast<double>(static_cast<float>(normal(rng)));
  bag.coarse_label = 0;
  bag.fine_label = 0;
  return bag;
}

}  // namespace

TEST_CASE("bag files round trip bit-exactly", "[data]") {
  testutil::ScratchDir dir("bagio");
  Rng rng(5);
  const Bag bag = random_bag(rng, 100, 64);
  const auto path = dir.path() / "a.bag";
  write_bag(bag, path);
  const std::string first = testutil::file_bytes(path);

  const Bag loaded = read_bag(path);
  REQUIRE(loaded.features == bag.features);
  REQUIRE(loaded.coarse_label == bag.coarse_label);
  REQUIRE(loaded.fine_label == bag.fine_label);
  REQUIRE(loaded.slide_id == "a");

  const auto path2 = dir.path() / "b.bag";
  write_bag(loaded, path2);
  REQUIRE(testutil::file_bytes(path2) == first);
}

TEST_CASE("bag reader rejects malformed files", "[data]") {
  testutil::ScratchDir dir("bagbad");
  Rng rng(6);
  const Bag bag = random_bag(rng, 10, 8);
  const auto good = dir.path() / "good.bag";
  write_bag(bag, good);
  const std::string bytes = testutil::file_bytes(good);

  SECTION("truncated payload") {
    std::ofstream out(dir.path() / "trunc.bag", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 7));
    out.close();
    REQUIRE_THROWS_WITH(read_bag(dir.path() / "trunc.bag"),
                        Catch::Matchers::ContainsSubstring("truncated"));
  }
  SECTION("trailing bytes") {
    std::ofstream out(dir.path() / "extra.bag", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.put('x');
    out.close();
    REQUIRE_THROWS_WITH(read_bag(dir.path() / "extra.bag"),
                        Catch::Matchers::ContainsSubstring("trailing"));
  }
  SECTION("bad magic") {
    std::string corrupt = bytes;
    corrupt[0] = 'X';
    std::ofstream out(dir.path() / "magic.bag", std::ios::binary);
    out.write(corrupt.data(), static_cast<std::streamsize>(corrupt.size()));
    out.close();
    REQUIRE_THROWS_WITH(read_bag(dir.path() / "magic.bag"),
                        Catch::Matchers::ContainsSubstring("magic"));
  }
  SECTION("zero patches in header") {
    // header says n_patches = 0: invariant violation
    std::string corrupt = bytes;
    corrupt[8] = corrupt[9] = corrupt[10] = corrupt[11] = 0;
    std::ofstream out(dir.path() / "zero.bag", std::ios::binary);
    out.write(corrupt.data(), static_cast<std::streamsize>(corrupt.size()));
    out.close();
    REQUIRE_THROWS_WITH(read_bag(dir.path() / "zero.bag"),
                        Catch::Matchers::ContainsSubstring("zero patches"));
  }
  SECTION("missing file") {
    REQUIRE_THROWS_AS(read_bag(dir.path() / "missing.bag"), std::runtime_error);
  }
}

TEST_CASE("bag validation catches invariant violations", "[data]") {
  const Taxonomy tax = default_gastric_taxonomy();
  Bag bag;
  bag.slide_id = "bad";
  bag.features = Matrix(0, 4);
  REQUIRE_THROWS_AS(validate_bag(bag), std::invalid_argument);

  bag.features = Matrix(2, 4, 1.0);
  bag.features(1, 2) = std::nan("");
  REQUIRE_THROWS_AS(validate_bag(bag), std::invalid_argument);

  bag.features(1, 2) = 0.0;
  bag.coarse_label = 0;
  bag.fine_label = 13;  // Ulceration belongs to Gastritis, not Benign
  REQUIRE_THROWS_WITH(validate_bag(bag, &tax),
                      Catch::Matchers::ContainsSubstring("inconsistent"));
}

TEST_CASE("manifest round trips and rejects unknown keys", "[data]") {
  testutil::ScratchDir dir("manifest");
  std::vector<ManifestEntry> entries{
      {"s1", Split::train, 0, 0, "bags/s1.bag"},
      {"s2", Split::val, 3, 13, "bags/s2.bag"},
      {"s3", Split::test, 1, 4, "bags/s3.bag"},
  };
  const auto path = dir.path() / "manifest.json";
  write_manifest(entries, path);
  const auto loaded = read_manifest(path);
  REQUIRE(loaded.size() == 3);
  REQUIRE(loaded[1].slide_id == "s2");
  REQUIRE(loaded[1].split == Split::val);
  REQUIRE(loaded[1].coarse == 3);
  REQUIRE(loaded[1].fine == 13);
  REQUIRE(loaded[2].relative_path == "bags/s3.bag");

  std::ofstream out(dir.path() / "bad.json");
  out << R"([{"slide_id":"x","split":"train","coarse":0,"fine":0,)"
      << R"("relative_path":"p","surprise":true}])";
  out.close();
  REQUIRE_THROWS_WITH(read_manifest(dir.path() / "bad.json"),
                      Catch::Matchers::ContainsSubstring("surprise"));
}

TEST_CASE("split names round trip", "[data]") {
  for (Split s : kAllSplits) REQUIRE(split_from_string(to_string(s)) == s);
  REQUIRE_THROWS_AS(split_from_string("training"), std::invalid_argument);
}

TEST_CASE("bag write-read identity over randomized shapes", "[data]") {
  testutil::ScratchDir dir("bagprop");
  Rng rng(71);
  for (int it = 0; it < 50; ++it) {
    const std::size_t n = 1 + static_cast<std::size_t>(rng() % 20);
    const std::size_t d = 1 + static_cast<std::size_t>(rng() % 32);
    Bag bag = random_bag(rng, n, d);
    bag.coarse_label = static_cast<std::size_t>(rng() % 4);
    bag.fine_label = static_cast<std::size_t>(rng() % 14);
    const auto path = dir.path() / "p.bag";
    write_bag(bag, path);
    const std::string bytes = testutil::file_bytes(path);
    const Bag loaded = read_bag(path);
    REQUIRE(loaded.features == bag.features);
    REQUIRE(loaded.coarse_label == bag.coarse_label);
    REQUIRE(loaded.fine_label == bag.fine_label);
    write_bag(loaded, path);
    REQUIRE(testutil::file_bytes(path) == bytes);
  }
}
