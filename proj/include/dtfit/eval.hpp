#pragma once

// Ancestral DDPM sampling and evaluation metrics: feature-space Frechet
// distance, k-NN precision/recall, object-region reconstruction error, and
// the schedule survival report.

#include <functional>
#include <string>
#include <vector>

#include "dtfit/common.hpp"
#include "dtfit/image_tensor.hpp"
#include "dtfit/model.hpp"
#include "dtfit/scenes.hpp"
#include "dtfit/schedule.hpp"
#include "dtfit/ssei.hpp"
#include "dtfit/tensor.hpp"

namespace dtfit {

struct MetricReport {
  double frechet_distance = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double object_region_mse = 0.0;
  double trainable_param_fraction = 0.0;
  double runtime_seconds = 0.0;
};

// ---------------------------------------------------------------------------
// Sampling

// One reverse chain from x_T ~ N(0, I). eps_fn(x_t, t) predicts the noise.
// The final x_0 is clamped to [0,1]; intermediate states are not.
template <class S>
Tensor<S> ddpm_sample_chain(
    const std::function<Tensor<S>(const Tensor<S>&, int)>& eps_fn,
    const NoiseSchedule& sched, const Shape& shape, Rng& rng) {
  Tensor<S> x = Tensor<S>::randn(shape, rng);
  for (int t = sched.T; t >= 1; --t) {
    auto mu = mu_from_eps(x, t, eps_fn(x, t), sched);
    if (t > 1) {
      auto z = Tensor<S>::randn(shape, rng);
      x = add(mu, scale(z, std::sqrt(sched.posterior_var[t])));
    } else {
      x = mu;
    }
  }
  auto clamped = x.values();
  for (auto& v : clamped) v = std::clamp(v, S(0), S(1));
  return Tensor<S>::from_data(shape, std::move(clamped));
}

template <class S>
std::vector<Image> ddpm_sample(const DiT<S>& model, const NoiseSchedule& sched,
                               int condition_id, Rng& rng, int n) {
  DTFIT_CHECK(model.cfg.horizon == sched.T, ParamError,
              "ddpm_sample: model horizon ", model.cfg.horizon,
              " != schedule T ", sched.T);
  DTFIT_CHECK(n >= 0, ParamError, "ddpm_sample: n must be >= 0");
  Shape shape{model.cfg.channels, model.cfg.image_size, model.cfg.image_size};
  std::function<Tensor<S>(const Tensor<S>&, int)> eps_fn =
      [&](const Tensor<S>& x, int t) {
        return model.forward(x, t, condition_id);
      };
  std::vector<Image> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    auto x0 = ddpm_sample_chain<S>(eps_fn, sched, shape, rng);
    Image img(model.cfg.channels, model.cfg.image_size, model.cfg.image_size);
    for (size_t k = 0; k < img.data.size(); ++k)
      img.data[k] = static_cast<float>(x0.values()[k]);
    out.push_back(std::move(img));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Frechet feature distance over the handcrafted feature space

// symmetric PSD square root via eigendecomposition, eigenvalues clamped at 0
std::vector<double> spd_sqrt(const std::vector<double>& mat, int n);

// (S1*S2)^(1/2) for SPD inputs; used by the metric (trace) and by tests
std::vector<double> spd_product_sqrt(const std::vector<double>& s1,
                                     const std::vector<double>& s2, int n);

double frechet_feature_distance(const std::vector<FeatureVector>& set_a,
                                const std::vector<FeatureVector>& set_b);

std::pair<double, double> knn_precision_recall(
    const std::vector<FeatureVector>& real_feats,
    const std::vector<FeatureVector>& gen_feats, int k);

// ---------------------------------------------------------------------------
// Object-region reconstruction probe

// For each sample: q-sample to t_probe with seeded noise, one-shot
// x0_hat = (x_t - sqrt(1-abar) eps_theta) / sqrt(abar), then MSE inside the
// boxes only.
template <class S>
double object_region_error(
    const std::function<Tensor<S>(const Tensor<S>&, int, int)>& eps_fn,
    const NoiseSchedule& sched, const std::vector<SceneSample>& samples,
    int t_probe, uint64_t seed, int condition_offset = 0) {
  DTFIT_CHECK(t_probe >= 1 && t_probe <= sched.T, ParamError,
              "object_region_error: t_probe outside [1,T]");
  bool any_boxes = false;
  for (const auto& s : samples) any_boxes = any_boxes || !s.boxes.empty();
  DTFIT_CHECK(any_boxes, ContractError,
              "object_region_error: no sample carries boxes");
  const double ab = sched.alpha_bar[t_probe];
  double acc = 0.0;
  long count = 0;
  for (size_t i = 0; i < samples.size(); ++i) {
    const auto& sample = samples[i];
    if (sample.boxes.empty()) continue;
    Rng rng(mix_seed(seed, i));
    auto x0 = image_to_tensor<S>(sample.image);
    auto eps = Tensor<S>::randn(x0.shape(), rng);
    auto x_t = q_sample(x0, t_probe, eps, sched);
    auto pred = eps_fn(x_t, t_probe, sample.condition_id + condition_offset);
    auto x0_hat = scale(sub(x_t, scale(pred, std::sqrt(1.0 - ab))),
                        1.0 / std::sqrt(ab));
    const auto& hv = x0_hat.values();
    const auto& ov = x0.values();
    const int h = sample.image.h, w = sample.image.w;
    for (const auto& b : sample.boxes)
      for (int c = 0; c < sample.image.c; ++c)
        for (int y = b.y; y < b.y + b.h; ++y)
          for (int x = b.x; x < b.x + b.w; ++x) {
            double d = double(hv[(c * h + y) * w + x]) -
                       double(ov[(c * h + y) * w + x]);
            acc += d * d;
            ++count;
          }
  }
  return acc / double(count);
}

// ---------------------------------------------------------------------------
// Survival report

struct SurvivalRow {
  std::string schedule_name;
  std::string bucket;  // "3-4", "5-6", "7-8"
  long count = 0;
  double mean_survival = 0.0;  // NaN when the bucket is empty
};

std::vector<SurvivalRow> survival_report(
    const std::vector<SceneSample>& dataset,
    const std::vector<const NoiseSchedule*>& schedules, double threshold);

std::string survival_csv(const std::vector<SurvivalRow>& rows);
std::string metric_report_csv(const MetricReport& report);

}  // namespace dtfit
