#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>

#include "hiclass/taxonomy.hpp"

using namespace hiclass;

TEST_CASE("gastric hierarchy validates with 4 coarse and 14 fine classes",
          "[taxonomy]") {
  const Taxonomy tax = default_gastric_taxonomy();
  REQUIRE(tax.num_coarse() == 4);
  REQUIRE(tax.num_fine() == 14);

  REQUIRE(tax.coarse_name(tax.group_of(tax.fine_index("Tubular adenocarcinoma"))) ==
          "Cancer");
  REQUIRE(tax.coarse_name(tax.group_of(tax.fine_index("Chronic gastritis"))) ==
          "Gastritis");

  const std::size_t erosion = tax.fine_index("Erosion");
  const auto& siblings = tax.siblings_of(erosion);
  std::set<std::string> names;
  for (std::size_t f : siblings) names.insert(tax.fine_name(f));
  REQUIRE(names == std::set<std::string>{"Chronic active gastritis",
                                         "Chronic gastritis", "Erosion",
                                         "Ulceration"});
  REQUIRE(tax.complement_of(erosion).size() == 10);
}

TEST_CASE("minimal one-by-one hierarchy", "[taxonomy]") {
  const Taxonomy tax = Taxonomy::validate({{"only", {"sole"}}});
  REQUIRE(tax.num_coarse() == 1);
  REQUIRE(tax.num_fine() == 1);
  REQUIRE(tax.group_of(0) == 0);
  REQUIRE(tax.siblings_of(0) == std::vector<std::size_t>{0});
  REQUIRE(tax.complement_of(0).empty());
}

TEST_CASE("validation rejects malformed hierarchies", "[taxonomy]") {
  REQUIRE_THROWS_AS(Taxonomy::validate({}), std::invalid_argument);
  REQUIRE_THROWS_WITH(
      Taxonomy::validate({{"a", {"x"}}, {"b", {}}}),
      Catch::Matchers::ContainsSubstring("b"));
  // same fine name under two coarse parents
  REQUIRE_THROWS_WITH(
      Taxonomy::validate({{"a", {"shared"}}, {"b", {"shared"}}}),
      Catch::Matchers::ContainsSubstring("shared"));
  REQUIRE_THROWS_WITH(
      Taxonomy::validate({{"dup", {"x"}}, {"dup", {"y"}}}),
      Catch::Matchers::ContainsSubstring("dup"));
  REQUIRE_THROWS_AS(Taxonomy::validate({{"", {"x"}}}), std::invalid_argument);
}

TEST_CASE("json parsing enforces the two-level shape", "[taxonomy]") {
  const auto deep = nlohmann::json::parse(
      R"([{"name": "a", "fine": [["nested", "tree"]]}])");
  REQUIRE_THROWS_WITH(Taxonomy::from_json(deep),
                      Catch::Matchers::ContainsSubstring("two levels"));

  const auto unknown = nlohmann::json::parse(
      R"([{"name": "a", "fine": ["x"], "extra": 1}])");
  REQUIRE_THROWS_WITH(Taxonomy::from_json(unknown),
                      Catch::Matchers::ContainsSubstring("extra"));

  const auto not_array = nlohmann::json::parse(R"({"name": "a"})");
  REQUIRE_THROWS_AS(Taxonomy::from_json(not_array), std::invalid_argument);
}

TEST_CASE("json round trip and bundled fixture agree with the built-in",
          "[taxonomy]") {
  const Taxonomy tax = default_gastric_taxonomy();
  REQUIRE(Taxonomy::from_json(tax.to_json()) == tax);
  REQUIRE(Taxonomy::load(std::string(HICLASS_DATA_DIR) + "/gastric_taxonomy.json") ==
          tax);
  REQUIRE_THROWS_WITH(Taxonomy::load("/nonexistent/tax.json"),
                      Catch::Matchers::ContainsSubstring("/nonexistent/tax.json"));
}

TEST_CASE("sibling/complement partition over every fine class", "[taxonomy]") {
  const Taxonomy tax = default_gastric_taxonomy();
  for (std::size_t f = 0; f < tax.num_fine(); ++f) {
    const auto& siblings = tax.siblings_of(f);
    const auto complement = tax.complement_of(f);
    REQUIRE(std::count(siblings.begin(), siblings.end(), f) == 1);

    std::set<std::size_t> all(siblings.begin(), siblings.end());
    for (std::size_t c : complement) REQUIRE(all.insert(c).second);  // disjoint
    REQUIRE(all.size() == tax.num_fine());  // union covers everything

    for (std::size_t g = 0; g < tax.num_fine(); ++g) {
      const bool is_sibling =
          std::count(siblings.begin(), siblings.end(), g) == 1;
      REQUIRE(is_sibling == (tax.group_of(f) == tax.group_of(g)));
    }
  }
}

TEST_CASE("index range errors", "[taxonomy]") {
  const Taxonomy tax = default_gastric_taxonomy();
  REQUIRE_THROWS_AS(tax.group_of(14), std::out_of_range);
  REQUIRE_THROWS_AS(tax.siblings_of(99), std::out_of_range);
  REQUIRE_THROWS_AS(tax.fine_name(14), std::out_of_range);
  REQUIRE_THROWS_AS(tax.fine_index("missing"), std::invalid_argument);
}

TEST_CASE("uniform taxonomy helper spreads classes evenly", "[taxonomy]") {
  const Taxonomy tax = make_uniform_taxonomy(2, 5);
  REQUIRE(tax.num_coarse() == 2);
  REQUIRE(tax.num_fine() == 5);
  REQUIRE(tax.siblings_of(0).size() == 3);
  REQUIRE(tax.siblings_of(4).size() == 2);
  REQUIRE_THROWS_AS(make_uniform_taxonomy(3, 2), std::invalid_argument);
}
