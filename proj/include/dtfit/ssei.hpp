#pragma once

// Semantic-selective embedding initialization: map each target condition to
// the source class whose mean feature vector is nearest in cosine similarity
// and copy that class's embedding row. Features come from a deterministic
// handcrafted extractor (3x3 grid RGB means + per-channel global stats).

#include <vector>

#include "dtfit/common.hpp"
#include "dtfit/model.hpp"
#include "dtfit/scenes.hpp"

namespace dtfit {

inline constexpr int kFeatureDim = 39;  // 27 grid means + 12 global stats

using FeatureVector = std::vector<double>;

FeatureVector extract_features(const Image& img);

double cosine_similarity(const FeatureVector& a, const FeatureVector& b);

// argmax over cosine similarity; ties break toward the lowest index
int nearest_source_class(const FeatureVector& target_mean,
                         const std::vector<FeatureVector>& source_means);

struct SemanticIndex {
  std::vector<FeatureVector> source_means;  // per source class
  std::vector<FeatureVector> target_means;  // per target condition
};

SemanticIndex build_semantic_index(const std::vector<SceneSample>& source,
                                   const std::vector<SceneSample>& target,
                                   int num_source_classes = kNumSourceClasses,
                                   int num_conditions = kNumConditions);

struct SseiAssignment {
  int condition_id;
  int source_class;
  double similarity;
};

std::vector<SseiAssignment> ssei_assignments(const SemanticIndex& index);

// Copy each assigned source row into the appended condition row. Condition c
// lives at table row num_source + c.
template <class S>
void init_condition_embeddings(ConditionEmbeddingTable<S>& table,
                               const std::vector<SseiAssignment>& assignments) {
  for (const auto& a : assignments) {
    DTFIT_CHECK(a.source_class >= 0 && a.source_class < table.num_source,
                ParamError, "ssei init: source class ", a.source_class,
                " out of range");
    int dst = table.num_source + a.condition_id;
    DTFIT_CHECK(dst < table.size(), ParamError, "ssei init: condition ",
                a.condition_id, " has no appended row");
    table.assign_row_from(dst, a.source_class);
  }
}

}  // namespace dtfit
