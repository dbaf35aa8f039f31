#include "dtfit/ssei.hpp"

#include <cmath>

namespace dtfit {

FeatureVector extract_features(const Image& img) {
  for (float v : img.data)
    DTFIT_CHECK(v >= 0.f && v <= 1.f, ParamError,
                "extract_features: pixel value ", v, " outside [0,1]");
  FeatureVector f;
  f.reserve(kFeatureDim);
  // 3x3 grid of per-cell RGB means; cell k spans [k*n/3, (k+1)*n/3)
  for (int gy = 0; gy < 3; ++gy)
    for (int gx = 0; gx < 3; ++gx) {
      int y0 = gy * img.h / 3, y1 = (gy + 1) * img.h / 3;
      int x0 = gx * img.w / 3, x1 = (gx + 1) * img.w / 3;
      for (int ch = 0; ch < 3; ++ch) {
        double acc = 0.0;
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x) acc += img.at(ch, y, x);
        f.push_back(acc / (double(y1 - y0) * (x1 - x0)));
      }
    }
  // per-channel global mean / std / min / max
  for (int ch = 0; ch < 3; ++ch) {
    double acc = 0.0, mn = 1.0, mx = 0.0;
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) {
        double v = img.at(ch, y, x);
        acc += v;
        mn = std::min(mn, v);
        mx = std::max(mx, v);
      }
    double mean = acc / (double(img.h) * img.w);
    double var = 0.0;
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) {
        double d = img.at(ch, y, x) - mean;
        var += d * d;
      }
    var /= double(img.h) * img.w;
    f.push_back(mean);
    f.push_back(std::sqrt(var));
    f.push_back(mn);
    f.push_back(mx);
  }
  return f;
}

double cosine_similarity(const FeatureVector& a, const FeatureVector& b) {
  DTFIT_CHECK(a.size() == b.size(), ShapeError,
              "cosine_similarity: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  DTFIT_CHECK(na > 0.0 && nb > 0.0, DomainError,
              "cosine_similarity: zero vector has no direction");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

int nearest_source_class(const FeatureVector& target_mean,
                         const std::vector<FeatureVector>& source_means) {
  DTFIT_CHECK(!source_means.empty(), ParamError,
              "nearest_source_class: no source classes");
  int best = 0;
  double best_sim = cosine_similarity(source_means[0], target_mean);
  for (size_t i = 1; i < source_means.size(); ++i) {
    double sim = cosine_similarity(source_means[i], target_mean);
    if (sim > best_sim) {
      best_sim = sim;
      best = static_cast<int>(i);
    }
  }
  return best;
}

SemanticIndex build_semantic_index(const std::vector<SceneSample>& source,
                                   const std::vector<SceneSample>& target,
                                   int num_source_classes, int num_conditions) {
  SemanticIndex index;
  auto mean_by_id = [](const std::vector<SceneSample>& samples, int groups) {
    std::vector<FeatureVector> means(groups, FeatureVector(kFeatureDim, 0.0));
    std::vector<long> counts(groups, 0);
    for (const auto& s : samples) {
      DTFIT_CHECK(s.condition_id >= 0 && s.condition_id < groups, ParamError,
                  "semantic index: id ", s.condition_id, " outside [0,",
                  groups - 1, "]");
      auto f = extract_features(s.image);
      for (int i = 0; i < kFeatureDim; ++i) means[s.condition_id][i] += f[i];
      ++counts[s.condition_id];
    }
    for (int g = 0; g < groups; ++g) {
      DTFIT_CHECK(counts[g] >= 1, ParamError,
                  "semantic index: group ", g, " has no samples");
      for (auto& v : means[g]) v /= double(counts[g]);
    }
    return means;
  };
  index.source_means = mean_by_id(source, num_source_classes);
  index.target_means = mean_by_id(target, num_conditions);
  return index;
}

std::vector<SseiAssignment> ssei_assignments(const SemanticIndex& index) {
  std::vector<SseiAssignment> out;
  for (size_t c = 0; c < index.target_means.size(); ++c) {
    int best = nearest_source_class(index.target_means[c], index.source_means);
    out.push_back({static_cast<int>(c), best,
                   cosine_similarity(index.source_means[best],
                                     index.target_means[c])});
  }
  return out;
}

}  // namespace dtfit
