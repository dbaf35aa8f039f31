#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dtfit/eval.hpp"
#include "dtfit/finetune.hpp"

using namespace dtfit;

namespace {

// exact-eps oracle for a known clean image: inverts q_sample analytically
template <class S>
std::function<Tensor<S>(const Tensor<S>&, int)> perfect_eps_oracle(
    const Tensor<S>& x0, const NoiseSchedule& sched) {
  return [&x0, &sched](const Tensor<S>& xt, int t) {
    double ab = sched.alpha_bar[t];
    return scale(sub(xt, scale(x0, std::sqrt(ab))),
                 1.0 / std::sqrt(1.0 - ab));
  };
}

std::vector<FeatureVector> standardized_1d(int n, double mean, double sd,
                                           uint64_t seed) {
  Rng rng(seed);
  std::vector<double> raw(n);
  double m = 0;
  for (auto& v : raw) {
    v = rng.normal();
    m += v;
  }
  m /= n;
  double var = 0;
  for (double v : raw) var += (v - m) * (v - m);
  var /= (n - 1);  // sample convention, matching the metric
  std::vector<FeatureVector> out;
  for (double v : raw)
    out.push_back({mean + (v - m) / std::sqrt(var) * sd});
  return out;
}

}  // namespace

TEST_CASE("sampler determinism and the empty case") {
  DiTConfig cfg;
  cfg.image_size = 8;
  cfg.patch = 4;
  cfg.dim = 16;
  cfg.depth = 1;
  cfg.heads = 1;
  cfg.num_source_classes = 3;
  cfg.horizon = 8;
  DiT<float> model(cfg, 1);
  auto sched = build_linear(8, kDefaultBeta1, kDefaultBetaT);

  Rng r1(5), r2(5);
  auto a = ddpm_sample(model, sched, 0, r1, 2);
  auto b = ddpm_sample(model, sched, 0, r2, 2);
  REQUIRE(a.size() == 2);
  CHECK(a[0].data == b[0].data);
  CHECK(a[1].data == b[1].data);

  Rng r3(5);
  CHECK(ddpm_sample(model, sched, 0, r3, 0).empty());

  auto wrong = build_linear(9, kDefaultBeta1, kDefaultBetaT);
  Rng r4(5);
  CHECK_THROWS_AS(ddpm_sample(model, wrong, 0, r4, 1), ParamError);

  for (float v : a[0].data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("a perfect-eps oracle collapses the chain onto its target") {
  auto sched = build_linear(50, kDefaultBeta1, kDefaultBetaT);
  Rng rng(7);
  auto x0 = Tensor<double>::from_data(
      {1, 2, 2}, {0.25, 0.5, 0.75, 1.0});
  auto oracle = perfect_eps_oracle<double>(x0, sched);

  double mse = 0;
  const int trials = 5;
  for (int i = 0; i < trials; ++i) {
    auto out = ddpm_sample_chain<double>(oracle, sched, x0.shape(), rng);
    for (int k = 0; k < 4; ++k) {
      double d = out.values()[k] - x0.values()[k];
      mse += d * d / 4.0;
    }
  }
  CHECK(mse / trials < 1e-2);
}

TEST_CASE("frechet distance axioms") {
  Rng rng(11);
  std::vector<FeatureVector> set_a, set_b;
  for (int i = 0; i < 50; ++i) {
    FeatureVector f(6);
    for (auto& v : f) v = rng.normal();
    set_a.push_back(f);
    for (auto& v : f) v += 0.5;
    set_b.push_back(f);
  }
  CHECK(frechet_feature_distance(set_a, set_a) < 1e-8);
  double ab = frechet_feature_distance(set_a, set_b);
  double ba = frechet_feature_distance(set_b, set_a);
  CHECK(ab >= 0.0);
  CHECK(std::abs(ab - ba) < 1e-10);
  CHECK_THROWS_AS(
      frechet_feature_distance({{1.0}}, std::vector<FeatureVector>{{1.0}}),
      ParamError);
}

TEST_CASE("frechet matches the 1-D closed form") {
  // N(0,1) vs N(1,1) population statistics: squared distance is exactly 1
  auto a = standardized_1d(64, 0.0, 1.0, 21);
  auto b = standardized_1d(64, 1.0, 1.0, 22);
  CHECK(frechet_feature_distance(a, b) == doctest::Approx(1.0).epsilon(1e-9));

  // variance-only gap: (sqrt(1) - sqrt(4))^2 = 1
  auto c = standardized_1d(64, 0.0, 2.0, 23);
  CHECK(frechet_feature_distance(a, c) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("diagonal fallback engages below full-rank sample counts") {
  // 5-dim features, 4 samples per set: below dim+1, still well defined
  Rng rng(31);
  std::vector<FeatureVector> a, b;
  for (int i = 0; i < 4; ++i) {
    FeatureVector f(5), g(5);
    for (auto& v : f) v = rng.normal();
    for (auto& v : g) v = rng.normal() + 2.0;
    a.push_back(f);
    b.push_back(g);
  }
  double d = frechet_feature_distance(a, b);
  CHECK(std::isfinite(d));
  CHECK(d > 0.0);
  CHECK(frechet_feature_distance(a, a) < 1e-8);
}

TEST_CASE("spd product square root squares back to the product") {
  Rng rng(41);
  const int n = 8;
  auto random_spd = [&]() {
    std::vector<double> m(n * n, 0.0);
    std::vector<double> basis(n * n);
    for (auto& v : basis) v = rng.normal();
    // A = B B^T + n*I keeps it comfortably positive definite
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        for (int k = 0; k < n; ++k)
          m[i * n + j] += basis[i * n + k] * basis[j * n + k];
        if (i == j) m[i * n + j] += n;
      }
    return m;
  };
  for (int trial = 0; trial < 10; ++trial) {
    auto s1 = random_spd();
    auto s2 = random_spd();
    auto root = spd_product_sqrt(s1, s2, n);
    // squared root vs the plain product, Frobenius-relative
    std::vector<double> sq(n * n, 0.0), prod(n * n, 0.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k) {
          sq[i * n + j] += root[i * n + k] * root[k * n + j];
          prod[i * n + j] += s1[i * n + k] * s2[k * n + j];
        }
    double num = 0, den = 0;
    for (int i = 0; i < n * n; ++i) {
      num += (sq[i] - prod[i]) * (sq[i] - prod[i]);
      den += prod[i] * prod[i];
    }
    CHECK(std::sqrt(num / den) < 1e-6);
  }
}

TEST_CASE("knn precision and recall") {
  Rng rng(51);
  std::vector<FeatureVector> cloud;
  for (int i = 0; i < 30; ++i) {
    FeatureVector f(4);
    for (auto& v : f) v = rng.normal();
    cloud.push_back(f);
  }
  SUBCASE("identical sets give (1,1)") {
    auto [p, r] = knn_precision_recall(cloud, cloud, 3);
    CHECK(p == 1.0);
    CHECK(r == 1.0);
  }
  SUBCASE("far-apart clusters give (0,0)") {
    auto far = cloud;
    for (auto& f : far)
      for (auto& v : f) v += 1e4;
    auto [p, r] = knn_precision_recall(cloud, far, 3);
    CHECK(p == 0.0);
    CHECK(r == 0.0);
  }
  SUBCASE("precision is permutation invariant") {
    auto shuffled = cloud;
    std::swap(shuffled[0], shuffled[7]);
    std::swap(shuffled[3], shuffled[19]);
    auto gen = cloud;
    for (auto& f : gen)
      for (auto& v : f) v += 0.3;
    auto [p1, r1] = knn_precision_recall(cloud, gen, 3);
    auto [p2, r2] = knn_precision_recall(shuffled, gen, 3);
    CHECK(p1 == p2);
    CHECK(r1 == r2);
  }
  SUBCASE("k too large is rejected") {
    CHECK_THROWS_AS(knn_precision_recall(cloud, cloud, 30), ParamError);
  }
}

TEST_CASE("object region error") {
  auto sched = build_linear(100, kDefaultBeta1, kDefaultBetaT);
  auto data = gen_target_dataset(6, 61);
  std::vector<SceneSample> small;
  for (auto& s : data) small.push_back(s);

  SUBCASE("perfect oracle scores zero") {
    // per-sample oracle: captures each sample's clean image
    std::function<Tensor<double>(const Tensor<double>&, int, int)> eps_fn;
    for (size_t i = 0; i < small.size(); ++i) {
      // evaluate one sample at a time so the oracle knows its x0
      std::vector<SceneSample> one{small[i]};
      auto x0 = image_to_tensor<double>(small[i].image);
      eps_fn = [&x0, &sched](const Tensor<double>& xt, int t, int) {
        double ab = sched.alpha_bar[t];
        return scale(sub(xt, scale(x0, std::sqrt(ab))),
                     1.0 / std::sqrt(1.0 - ab));
      };
      double err = object_region_error<double>(eps_fn, sched, one, 20, 71);
      CHECK(err < 1e-20);
    }
  }
  SUBCASE("error ignores pixels outside every box") {
    std::function<Tensor<double>(const Tensor<double>&, int, int)> zero_fn =
        [](const Tensor<double>& xt, int, int) {
          return Tensor<double>::zeros(xt.shape());
        };
    double base = object_region_error<double>(zero_fn, sched, small, 20, 72);
    auto perturbed = small;
    for (auto& s : perturbed) {
      auto inside = [&](int x, int y) {
        for (const auto& b : s.boxes)
          if (x >= b.x && x < b.x + b.w && y >= b.y && y < b.y + b.h)
            return true;
        return false;
      };
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 32; ++y)
          for (int x = 0; x < 32; ++x)
            if (!inside(x, y)) s.image.at(c, y, x) = 0.123f;
    }
    double moved = object_region_error<double>(zero_fn, sched, perturbed, 20,
                                               72);
    CHECK(base == moved);
  }
  SUBCASE("contract errors") {
    std::function<Tensor<double>(const Tensor<double>&, int, int)> zero_fn =
        [](const Tensor<double>& xt, int, int) {
          return Tensor<double>::zeros(xt.shape());
        };
    CHECK_THROWS_AS(
        object_region_error<double>(zero_fn, sched, small, 0, 73),
        ParamError);
    auto no_boxes = small;
    for (auto& s : no_boxes) s.boxes.clear();
    CHECK_THROWS_AS(
        object_region_error<double>(zero_fn, sched, no_boxes, 20, 74),
        ContractError);
  }
}

TEST_CASE("survival report buckets, ordering, and the NA sentinel") {
  auto lin = build_linear(1000, 1e-4, 0.02);
  auto sc2 = build_scos(1000, 2, 0.008, 1e-4, 0.02);
  auto data = gen_target_dataset(400, 81);
  auto rows = survival_report(data, {&lin, &sc2}, 1.0);
  REQUIRE(rows.size() == 6);

  // bucket means rise with size under the same schedule
  for (int s = 0; s < 2; ++s) {
    CHECK(rows[s * 3 + 0].mean_survival <= rows[s * 3 + 1].mean_survival);
    CHECK(rows[s * 3 + 1].mean_survival <= rows[s * 3 + 2].mean_survival);
  }
  // the scos2 grid holds every bucket longer than linear
  for (int b = 0; b < 3; ++b) {
    CHECK(rows[b].count == rows[3 + b].count);
    CHECK(rows[3 + b].mean_survival > rows[b].mean_survival);
  }

  // empty bucket: all boxes sized 3 leave 5-6 and 7-8 empty
  std::vector<SceneSample> small_only;
  SceneSample s;
  s.image = Image(3, 32, 32);
  for (auto& v : s.image.data) v = 0.5f;
  for (int c = 0; c < 3; ++c)
    for (int y = 10; y < 13; ++y)
      for (int x = 10; x < 13; ++x) s.image.at(c, y, x) = 1.0f;
  s.boxes.push_back(BBox{10, 10, 3, 3});
  small_only.push_back(s);
  auto na_rows = survival_report(small_only, {&lin}, 1.0);
  CHECK(na_rows[0].count == 1);
  CHECK(na_rows[1].count == 0);
  CHECK(std::isnan(na_rows[1].mean_survival));
  auto csv = survival_csv(na_rows);
  CHECK(csv.find("NA") != std::string::npos);
  CHECK(csv.rfind("schedule,bucket,count,mean_survival", 0) == 0);
}
