#pragma once

// Procedural data: a single-object "source" set (10 classes, large centered
// shapes) and a multi-object "target" driving set (5 weather/lighting
// conditions, 1-4 small vehicles with ground-truth boxes).

#include <cstdint>
#include <string>
#include <vector>

#include "dtfit/rng.hpp"

namespace dtfit {

struct Image {
  int c = 3, h = 32, w = 32;
  std::vector<float> data;  // channel-major, values in [0,1]

  Image() = default;
  Image(int c_, int h_, int w_) : c(c_), h(h_), w(w_), data(c_ * h_ * w_, 0.f) {}

  float& at(int ch, int y, int x) { return data[(ch * h + y) * w + x]; }
  float at(int ch, int y, int x) const { return data[(ch * h + y) * w + x]; }
};

struct BBox {
  int x = 0, y = 0, w = 0, h = 0;
};

struct SceneSample {
  Image image;
  int condition_id = 0;  // source: class id 0..9, target: condition 0..4
  std::vector<BBox> boxes;
};

inline constexpr int kNumSourceClasses = 10;
inline constexpr int kNumConditions = 5;  // sunny, cloudy, rainy, snowy, night

SceneSample gen_source_sample(int class_id, Rng& rng);
SceneSample gen_target_sample(int condition_id, Rng& rng);

// Deterministic datasets: sample i is a pure function of (kind, seed, i).
std::vector<SceneSample> gen_source_dataset(int count, uint64_t seed);
std::vector<SceneSample> gen_target_dataset(int count, uint64_t seed);

// "SCN1" container with u8-quantized pixels
void write_dataset(const std::vector<SceneSample>& samples,
                   const std::string& path);
std::vector<SceneSample> read_dataset(const std::string& path);

// binary portable pixmap (P6, maxval 255)
void write_ppm(const Image& img, const std::string& path);

}  // namespace dtfit
