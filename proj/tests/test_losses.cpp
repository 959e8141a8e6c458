#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "hiclass/gradcheck.hpp"
#include "hiclass/losses.hpp"
#include "test_util.hpp"

using namespace hiclass;

namespace {

// Long-double cross entropy, the independent oracle.
double naive_ce(const Vector& logits, std::size_t label) {
  long double sum = 0.0L;
  for (double x : logits) sum += std::exp(static_cast<long double>(x));
  return static_cast<double>(std::log(sum) -
                             static_cast<long double>(logits[label]));
}

Matrix rows_from(const std::vector<Vector>& rows) {
  Matrix m(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  return m;
}

}  // namespace

TEST_CASE("cross entropy values and gradient", "[losses]") {
  const CeResult uniform = ce_loss(Vector{0.7, 0.7, 0.7, 0.7}, 2);
  REQUIRE(uniform.value == Catch::Approx(std::log(4.0)).margin(1e-12));

  const CeResult confident = ce_loss(Vector{50.0, 0.0, 0.0, 0.0}, 0);
  REQUIRE(confident.value >= 0.0);
  REQUIRE(confident.value < 1e-20);

  Rng rng(31);
  const Vector logits = testutil::random_vector(rng, 14, 2.0);
  const std::size_t label = 9;
  const CeResult r = ce_loss(logits, label);
  REQUIRE(std::abs(r.value - naive_ce(logits, label)) < 1e-12);

  const Vector fd = finite_diff_grad(
      [&](const Vector& v) { return ce_loss(v, label).value; }, logits);
  for (std::size_t i = 0; i < logits.size(); ++i)
    REQUIRE(std::abs(fd[i] - r.grad[i]) < 1e-6);

  REQUIRE_THROWS_AS(ce_loss(logits, 14), std::out_of_range);
}

TEST_CASE("consistency loss selects argmax rows and matches the jsd oracle",
          "[losses]") {
  Rng rng(32);

  SECTION("equal selected rows give exactly zero") {
    const Vector shared = testutil::random_vector(rng, 6);
    Matrix f_c = testutil::random_matrix(rng, 3, 6);
    Matrix f_f = testutil::random_matrix(rng, 5, 6);
    for (std::size_t j = 0; j < 6; ++j) {
      f_c(1, j) = shared[j];
      f_f(4, j) = shared[j];
    }
    const ConResult r = con_loss(f_c, f_f, Vector{0.0, 9.0, 1.0},
                                 Vector{0.0, 1.0, 2.0, 3.0, 9.0});
    REQUIRE(r.selected_coarse == 1);
    REQUIRE(r.selected_fine == 4);
    REQUIRE(r.value == 0.0);
  }

  SECTION("strongly separated rows approach ln 2 from below") {
    Matrix f_c(1, 4), f_f(1, 4);
    f_c(0, 0) = 40.0;  // softmax ~ onehot(0)
    f_f(0, 3) = 40.0;  // softmax ~ onehot(3)
    const ConResult r = con_loss(f_c, f_f, Vector{1.0}, Vector{1.0});
    REQUIRE(r.value < std::log(2.0));
    REQUIRE(r.value > std::log(2.0) - 1e-6);
  }

  SECTION("random case matches the composed oracle and finite differences") {
    const Matrix f_c = testutil::random_matrix(rng, 4, 5);
    const Matrix f_f = testutil::random_matrix(rng, 14, 5);
    const Vector o_c = testutil::random_vector(rng, 4, 2.0);
    const Vector o_f = testutil::random_vector(rng, 14, 2.0);
    const ConResult r = con_loss(f_c, f_f, o_c, o_f);
    const double oracle =
        jsd(softmax(f_c.row_vector(r.selected_coarse)),
            softmax(f_f.row_vector(r.selected_fine)));
    REQUIRE(std::abs(r.value - oracle) < 1e-12);

    // finite differences through the selected coarse row
    Vector row = f_c.row_vector(r.selected_coarse);
    const Vector fd = finite_diff_grad(
        [&](const Vector& v) {
          Matrix probe = f_c;
          for (std::size_t j = 0; j < v.size(); ++j)
            probe(r.selected_coarse, j) = v[j];
          return con_loss(probe, f_f, o_c, o_f).value;
        },
        row);
    for (std::size_t j = 0; j < row.size(); ++j)
      REQUIRE(std::abs(fd[j] - r.d_class_feat_coarse(r.selected_coarse, j)) < 1e-5);
  }

  SECTION("gradients are zero outside the selected rows") {
    const Matrix f_c = testutil::random_matrix(rng, 4, 5);
    const Matrix f_f = testutil::random_matrix(rng, 6, 5);
    const Vector o_c = testutil::random_vector(rng, 4, 2.0);
    const Vector o_f = testutil::random_vector(rng, 6, 2.0);
    const ConResult r = con_loss(f_c, f_f, o_c, o_f);
    for (std::size_t i = 0; i < 4; ++i) {
      if (i == r.selected_coarse) continue;
      for (std::size_t j = 0; j < 5; ++j)
        REQUIRE(r.d_class_feat_coarse(i, j) == 0.0);
    }
    for (std::size_t i = 0; i < 6; ++i) {
      if (i == r.selected_fine) continue;
      for (std::size_t j = 0; j < 5; ++j)
        REQUIRE(r.d_class_feat_fine(i, j) == 0.0);
    }
  }

  SECTION("invariant to shifting a selected row by a constant") {
    Matrix f_c = testutil::random_matrix(rng, 3, 7);
    const Matrix f_f = testutil::random_matrix(rng, 5, 7);
    const Vector o_c{5.0, 0.0, 0.0};
    const Vector o_f{5.0, 0.0, 0.0, 0.0, 0.0};
    const double before = con_loss(f_c, f_f, o_c, o_f).value;
    for (std::size_t j = 0; j < 7; ++j) f_c(0, j) += 42.0;
    const double after = con_loss(f_c, f_f, o_c, o_f).value;
    REQUIRE(std::abs(before - after) < 1e-12);
  }
}

TEST_CASE("intra/inter-class distance loss", "[losses]") {
  const Taxonomy tax = default_gastric_taxonomy();
  Rng rng(33);

  SECTION("identical rows: attract vanishes, every hinge is fully open") {
    const Vector row = testutil::random_vector(rng, 8);
    std::vector<Vector> rows(14, row);
    const std::size_t erosion = tax.fine_index("Erosion");
    const IntResult r = int_loss(rows_from(rows), erosion, tax, 1.0);
    REQUIRE(r.value == 10.0);  // |complement| * alpha, exactly
    const IntResult r2 = int_loss(rows_from(rows), erosion, tax, 0.7);
    REQUIRE(r2.value == Catch::Approx(10.0 * 0.7).margin(1e-12));
  }

  SECTION("separated complement and identical siblings give zero") {
    const std::size_t true_fine = tax.fine_index("Chronic gastritis");
    std::vector<Vector> rows(14, Vector(6, 0.0));
    for (std::size_t f = 0; f < 14; ++f) {
      if (tax.group_of(f) == tax.group_of(true_fine)) continue;
      rows[f][0] = -30.0;  // complement rows concentrate elsewhere: KL >> alpha
      rows[f][1] = 30.0;
    }
    const IntResult r = int_loss(rows_from(rows), true_fine, tax, 1.0);
    REQUIRE(r.value == 0.0);
    // attract terms at p == q contribute a constant d/dp, which the softmax
    // pullback annihilates up to rounding dust
    for (double g : r.d_class_feat_fine.data()) REQUIRE(std::abs(g) <= 1e-15);
  }

  SECTION("random matrix matches a double-loop oracle") {
    const Matrix f_f = testutil::random_matrix(rng, 14, 8);
    const std::size_t true_fine = 6;
    const double alpha = 1.0;
    const IntResult r = int_loss(f_f, true_fine, tax, alpha);

    double oracle = 0.0;
    const Vector p_true = softmax(f_f.row_vector(true_fine));
    for (std::size_t f : tax.siblings_of(true_fine)) {
      if (f == true_fine) continue;
      oracle += kl_div(p_true, softmax(f_f.row_vector(f)));
    }
    for (std::size_t f : tax.complement_of(true_fine))
      oracle += std::max(0.0, alpha - kl_div(p_true, softmax(f_f.row_vector(f))));
    REQUIRE(std::abs(r.value - oracle) < 1e-10);
    REQUIRE(r.value >= 0.0);
  }

  SECTION("gradient matches finite differences on the whole matrix") {
    const Taxonomy small = make_uniform_taxonomy(2, 4);
    const Matrix f_f = testutil::random_matrix(rng, 4, 5);
    const std::size_t true_fine = 1;
    const IntResult r = int_loss(f_f, true_fine, small, 1.0);
    Vector flat = f_f.data();
    const Vector fd = finite_diff_grad(
        [&](const Vector& v) {
          Matrix probe(4, 5);
          probe.data() = v;
          return int_loss(probe, true_fine, small, 1.0).value;
        },
        flat);
    for (std::size_t i = 0; i < flat.size(); ++i)
      REQUIRE(std::abs(fd[i] - r.d_class_feat_fine.data()[i]) < 1e-5);
  }

  SECTION("index errors") {
    const Matrix f_f = testutil::random_matrix(rng, 14, 4);
    REQUIRE_THROWS_AS(int_loss(f_f, 14, tax, 1.0), std::out_of_range);
    const Matrix wrong = testutil::random_matrix(rng, 13, 4);
    REQUIRE_THROWS_AS(int_loss(wrong, 0, tax, 1.0), std::invalid_argument);
  }
}

TEST_CASE("group-wise cross entropy", "[losses]") {
  SECTION("uniform logits in a group of three give ln 3") {
    const Taxonomy tax = make_uniform_taxonomy(2, 5);  // groups of 3 and 2
    const Vector logits(5, 0.4);
    const CeResult r = gce_loss(logits, 1, tax);
    REQUIRE(r.value == Catch::Approx(std::log(3.0)).margin(1e-12));
    REQUIRE(r.grad[3] == 0.0);  // outside the group
    REQUIRE(r.grad[4] == 0.0);
  }

  SECTION("one-coarse taxonomy reduces to plain cross entropy") {
    std::vector<std::string> names;
    for (int i = 0; i < 14; ++i) names.push_back("f" + std::to_string(i));
    const Taxonomy flat = Taxonomy::validate({{"all", names}});
    Rng rng(34);
    for (int it = 0; it < 30; ++it) {
      const Vector logits = testutil::random_vector(rng, 14, 3.0);
      const std::size_t label = static_cast<std::size_t>(rng() % 14);
      const CeResult g = gce_loss(logits, label, flat);
      const CeResult c = ce_loss(logits, label);
      REQUIRE(std::abs(g.value - c.value) <= 1e-12);
      for (std::size_t i = 0; i < 14; ++i)
        REQUIRE(std::abs(g.grad[i] - c.grad[i]) <= 1e-12);
    }
  }

  SECTION("singleton group is certain: loss 0, gradient 0") {
    const Taxonomy tax = Taxonomy::validate({{"a", {"only"}}, {"b", {"x", "y"}}});
    Rng rng(35);
    const Vector logits = testutil::random_vector(rng, 3, 2.0);
    const CeResult r = gce_loss(logits, 0, tax);
    REQUIRE(r.value == 0.0);
    for (double g : r.grad) REQUIRE(g == 0.0);
  }

  SECTION("gradient is the restricted softmax minus onehot") {
    const Taxonomy tax = default_gastric_taxonomy();
    Rng rng(36);
    const Vector logits = testutil::random_vector(rng, 14, 2.0);
    const std::size_t label = tax.fine_index("Ulceration");
    const CeResult r = gce_loss(logits, label, tax);
    const Vector fd = finite_diff_grad(
        [&](const Vector& v) { return gce_loss(v, label, tax).value; }, logits);
    for (std::size_t i = 0; i < 14; ++i)
      REQUIRE(std::abs(fd[i] - r.grad[i]) < 1e-6);
  }
}

TEST_CASE("total loss composition and seed routing", "[losses]") {
  const Taxonomy tax = default_gastric_taxonomy();
  Rng rng(37);
  HeadOutputs heads;
  heads.class_feat_coarse = testutil::random_matrix(rng, 4, 6);
  heads.class_feat_fine = testutil::random_matrix(rng, 14, 6);
  heads.logits_coarse = testutil::random_vector(rng, 4, 2.0);
  heads.logits_fine = testutil::random_vector(rng, 14, 2.0);
  const std::size_t fine_label = tax.fine_index("Neuroendocrine tumor");
  const std::size_t coarse_label = tax.group_of(fine_label);

  SECTION("all toggles off leaves only the two cross entropies") {
    LossConfig lc;
    lc.enable_con = lc.enable_int = lc.enable_gce = false;
    const TotalLoss r = total_loss(heads, coarse_label, fine_label, tax, lc);
    REQUIRE(r.breakdown.con == 0.0);
    REQUIRE(r.breakdown.intra_inter == 0.0);
    REQUIRE(r.breakdown.gce == 0.0);
    REQUIRE(r.breakdown.total ==
            Catch::Approx(r.breakdown.ce_coarse + r.breakdown.ce_fine)
                .margin(1e-12));
    for (double g : r.seeds.d_class_feat_coarse.data()) REQUIRE(g == 0.0);
    for (double g : r.seeds.d_class_feat_fine.data()) REQUIRE(g == 0.0);
  }

  SECTION("all terms on with unit weights sum the five scalars") {
    const LossConfig lc;
    const TotalLoss r = total_loss(heads, coarse_label, fine_label, tax, lc);
    const double recomposed =
        ce_loss(heads.logits_coarse, coarse_label).value +
        ce_loss(heads.logits_fine, fine_label).value +
        con_loss(heads.class_feat_coarse, heads.class_feat_fine,
                 heads.logits_coarse, heads.logits_fine)
            .value +
        int_loss(heads.class_feat_fine, fine_label, tax, lc.alpha).value +
        gce_loss(heads.logits_fine, fine_label, tax).value;
    REQUIRE(std::abs(r.breakdown.total - recomposed) < 1e-12);
    REQUIRE(r.breakdown.ce_coarse >= 0.0);
    REQUIRE(r.breakdown.ce_fine >= 0.0);
    REQUIRE(r.breakdown.con >= 0.0);
    REQUIRE(r.breakdown.intra_inter >= 0.0);
    REQUIRE(r.breakdown.gce >= 0.0);
  }

  SECTION("only gce enabled leaves coarse features untouched") {
    LossConfig lc;
    lc.enable_con = lc.enable_int = false;
    lc.weight_ce_coarse = 0.0;
    lc.weight_ce_fine = 0.0;
    const TotalLoss r = total_loss(heads, coarse_label, fine_label, tax, lc);
    for (double g : r.seeds.d_class_feat_coarse.data()) REQUIRE(g == 0.0);
    for (double g : r.seeds.d_logits_coarse) REQUIRE(g == 0.0);
  }

  SECTION("only con enabled touches just the two selected rows") {
    LossConfig lc;
    lc.enable_int = lc.enable_gce = false;
    lc.weight_ce_coarse = 0.0;
    lc.weight_ce_fine = 0.0;
    const TotalLoss r = total_loss(heads, coarse_label, fine_label, tax, lc);
    const ConResult con =
        con_loss(heads.class_feat_coarse, heads.class_feat_fine,
                 heads.logits_coarse, heads.logits_fine);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 6; ++j)
        if (i != con.selected_coarse)
          REQUIRE(r.seeds.d_class_feat_coarse(i, j) == 0.0);
    for (std::size_t i = 0; i < 14; ++i)
      for (std::size_t j = 0; j < 6; ++j)
        if (i != con.selected_fine)
          REQUIRE(r.seeds.d_class_feat_fine(i, j) == 0.0);
  }

  SECTION("inconsistent label pair is rejected") {
    const LossConfig lc;
    REQUIRE_THROWS_AS(total_loss(heads, 0, fine_label, tax, lc),
                      std::invalid_argument);
  }

  SECTION("negative weight is rejected") {
    LossConfig lc;
    lc.weight_int = -0.5;
    REQUIRE_THROWS_AS(total_loss(heads, coarse_label, fine_label, tax, lc),
                      std::invalid_argument);
  }
}

TEST_CASE("every single-term gradient survives the finite-difference oracle",
          "[losses][gradcheck]") {
  // Routes each term's seeds through forward/backward in isolation.
  const Taxonomy tax = make_uniform_taxonomy(2, 4);
  ModelConfig model;
  model.feature_dim = 8;
  model.aggregate_dim = 8;
  model.split_dim = 4;
  model.class_feature_dim = 4;
  model.attention_dim = 4;
  model.num_coarse = 2;
  model.num_fine = 4;

  struct Case {
    const char* name;
    bool con, intra, gce;
  };
  for (const Case& c : {Case{"con only", true, false, false},
                        Case{"int only", false, true, false},
                        Case{"gce only", false, false, true}}) {
    GradCheckSettings settings;
    settings.model = model;
    settings.loss.enable_con = c.con;
    settings.loss.enable_int = c.intra;
    settings.loss.enable_gce = c.gce;
    settings.seed = 400;
    const auto reports = run_gradcheck(settings, tax);
    for (const auto& r : reports) {
      INFO(c.name << " block " << r.name << " err " << r.max_rel_err);
      REQUIRE(r.pass);
    }
  }
}
