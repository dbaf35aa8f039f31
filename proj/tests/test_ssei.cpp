#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dtfit/model.hpp"
#include "dtfit/ssei.hpp"

using namespace dtfit;

namespace {

Image solid(float r, float g, float b) {
  Image img(3, 32, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      img.at(0, y, x) = r;
      img.at(1, y, x) = g;
      img.at(2, y, x) = b;
    }
  return img;
}

// independent 64-bit oracle: normalize, then argmax of the dot product
int brute_force_argmax(const FeatureVector& target,
                       const std::vector<FeatureVector>& sources) {
  auto normalized = [](const FeatureVector& v) {
    double n = 0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    FeatureVector out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
    return out;
  };
  auto tn = normalized(target);
  int best = 0;
  double best_dot = -2.0;
  for (size_t i = 0; i < sources.size(); ++i) {
    auto sn = normalized(sources[i]);
    double dot = 0;
    for (size_t k = 0; k < tn.size(); ++k) dot += sn[k] * tn[k];
    if (dot > best_dot) {
      best_dot = dot;
      best = int(i);
    }
  }
  return best;
}

}  // namespace

TEST_CASE("feature extraction on flat images") {
  auto black = extract_features(solid(0, 0, 0));
  REQUIRE(int(black.size()) == kFeatureDim);
  for (int i = 0; i < 27; ++i) CHECK(black[i] == 0.0);  // grid means
  for (int ch = 0; ch < 3; ++ch) {
    CHECK(black[27 + ch * 4 + 0] == 0.0);  // mean
    CHECK(black[27 + ch * 4 + 1] == 0.0);  // std
    CHECK(black[27 + ch * 4 + 2] == 0.0);  // min
    CHECK(black[27 + ch * 4 + 3] == 0.0);  // max
  }

  auto white = extract_features(solid(1, 1, 1));
  for (int i = 0; i < 27; ++i) CHECK(white[i] == 1.0);

  Image bad = solid(0.5f, 0.5f, 0.5f);
  bad.at(0, 3, 3) = 1.5f;
  CHECK_THROWS_AS(extract_features(bad), ParamError);
}

TEST_CASE("feature extraction resolves the left-red right-blue split") {
  Image img(3, 32, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      if (x < 16)
        img.at(0, y, x) = 1.0f;
      else
        img.at(2, y, x) = 1.0f;
    }
  auto f = extract_features(img);
  // grid cell (gy, gx) channels live at (gy*3+gx)*3 + c
  for (int gy = 0; gy < 3; ++gy) {
    CHECK(f[(gy * 3 + 0) * 3 + 0] == 1.0);  // left column: red
    CHECK(f[(gy * 3 + 0) * 3 + 2] == 0.0);
    CHECK(f[(gy * 3 + 2) * 3 + 2] == 1.0);  // right column: blue
    CHECK(f[(gy * 3 + 2) * 3 + 0] == 0.0);
  }
  CHECK(extract_features(img) == f);  // deterministic on repeat
}

TEST_CASE("nearest source class basics") {
  FeatureVector e1{1, 0}, e2{0, 1};
  std::vector<FeatureVector> sources{e1, e2};

  CHECK(nearest_source_class(e2, sources) == 1);  // exact match wins
  CHECK(nearest_source_class({0.9, 0.1}, sources) == 0);
  CHECK(cosine_similarity({0.9, 0.1}, e1) == doctest::Approx(0.9938837));

  // positive scaling leaves the argmax unchanged
  for (double c : {0.001, 0.5, 3.0, 1e6}) {
    CHECK(nearest_source_class({0.9 * c, 0.1 * c}, sources) == 0);
  }

  // exact tie breaks toward the lowest index
  std::vector<FeatureVector> dup{{2, 2}, {1, 1}};
  CHECK(nearest_source_class({5, 5}, dup) == 0);

  CHECK_THROWS_AS(nearest_source_class({0, 0}, sources), DomainError);
  CHECK_THROWS_AS(nearest_source_class({1, 1}, {{0, 0}, {1, 0}}), DomainError);
}

TEST_CASE("argmax matches the 64-bit brute-force oracle on 1000 instances") {
  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    int n = 2 + int(rng.next_u64() % 12);
    std::vector<FeatureVector> sources;
    for (int i = 0; i < n; ++i) {
      FeatureVector f(kFeatureDim);
      for (auto& v : f) v = rng.normal();
      sources.push_back(std::move(f));
    }
    FeatureVector target(kFeatureDim);
    for (auto& v : target) v = rng.normal();
    CHECK(nearest_source_class(target, sources) ==
          brute_force_argmax(target, sources));
  }
}

TEST_CASE("semantic index aggregates per-group means") {
  auto source = gen_source_dataset(40, 7);
  auto target = gen_target_dataset(20, 8);
  auto index = build_semantic_index(source, target);
  REQUIRE(index.source_means.size() == size_t(kNumSourceClasses));
  REQUIRE(index.target_means.size() == size_t(kNumConditions));

  // identical datasets produce identical assignments (no RNG in this module)
  auto again = build_semantic_index(source, target);
  CHECK(ssei_assignments(index).size() == size_t(kNumConditions));
  auto a1 = ssei_assignments(index);
  auto a2 = ssei_assignments(again);
  for (int c = 0; c < kNumConditions; ++c) {
    CHECK(a1[c].source_class == a2[c].source_class);
    CHECK(a1[c].similarity == a2[c].similarity);
  }

  // a dataset missing one class id cannot build an index
  std::vector<SceneSample> partial(source.begin(), source.begin() + 5);
  CHECK_THROWS_AS(build_semantic_index(partial, target), ParamError);
}

TEST_CASE("condition embedding initialization copies assigned rows") {
  Rng rng(9);
  auto table = ConditionEmbeddingTable<double>::init(10, 16, rng);
  std::vector<std::vector<double>> sources_before;
  for (int i = 0; i < 10; ++i) sources_before.push_back(table.row(i).values());

  table.append_rows(5, rng);
  CHECK(table.size() == 15);

  std::vector<SseiAssignment> assignments{
      {0, 3, 0.9}, {1, 3, 0.8}, {2, 0, 0.7}, {3, 9, 0.6}, {4, 5, 0.5}};
  init_condition_embeddings(table, assignments);

  CHECK(table.row(10).values() == table.row(3).values());
  CHECK(table.row(11).values() == table.row(3).values());
  CHECK(table.row(12).values() == table.row(0).values());
  CHECK(table.row(13).values() == table.row(9).values());
  CHECK(table.row(14).values() == table.row(5).values());
  for (int i = 0; i < 10; ++i)
    CHECK(table.row(i).values() == sources_before[i]);

  CHECK_THROWS_AS(init_condition_embeddings(
                      table, std::vector<SseiAssignment>{{0, 99, 0.0}}),
                  ParamError);
}
