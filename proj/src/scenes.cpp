#include "dtfit/scenes.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

#include "dtfit/common.hpp"

namespace dtfit {

namespace {

constexpr int kSize = 32;

struct Color {
  float r, g, b;
};

inline float clamp01(double v) {
  return static_cast<float>(std::clamp(v, 0.0, 1.0));
}

void fill_bg(Image& img, Color c, Rng& rng, double noise) {
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      double n = rng.normal() * noise;
      img.at(0, y, x) = clamp01(c.r + n);
      img.at(1, y, x) = clamp01(c.g + n);
      img.at(2, y, x) = clamp01(c.b + n);
    }
}

void put(Image& img, int y, int x, Color c) {
  img.at(0, y, x) = clamp01(c.r);
  img.at(1, y, x) = clamp01(c.g);
  img.at(2, y, x) = clamp01(c.b);
}

// class palettes: background / shape color pairs, loosely echoing the five
// driving conditions so nearest-feature lookups have natural matches
struct ClassSpec {
  Color bg, fg;
  int shape;  // 0 square, 1 circle, 2 triangle, 3 diamond, 4 cross,
              // 5 ring, 6 hbar, 7 triangle (inverted)
};

const std::array<ClassSpec, kNumSourceClasses> kClasses = {{
    {{0.78f, 0.78f, 0.80f}, {0.97f, 0.97f, 0.97f}, 0},  // bright/white
    {{0.03f, 0.03f, 0.06f}, {0.12f, 0.12f, 0.26f}, 1},  // near-black
    {{0.60f, 0.61f, 0.63f}, {0.35f, 0.35f, 0.38f}, 2},  // flat gray
    {{0.45f, 0.70f, 0.95f}, {0.95f, 0.85f, 0.25f}, 3},  // bright blue sky
    {{0.30f, 0.34f, 0.42f}, {0.55f, 0.58f, 0.66f}, 4},  // blue-gray
    {{0.20f, 0.55f, 0.25f}, {0.85f, 0.15f, 0.10f}, 5},
    {{0.90f, 0.55f, 0.15f}, {0.45f, 0.10f, 0.60f}, 6},
    {{0.80f, 0.15f, 0.70f}, {0.10f, 0.85f, 0.90f}, 1},
    {{0.10f, 0.55f, 0.55f}, {0.95f, 0.50f, 0.10f}, 7},
    {{0.45f, 0.30f, 0.15f}, {0.30f, 0.80f, 0.30f}, 3},
}};

// Footprints stay >= 25% of the image for every shape.
void draw_shape(Image& img, int shape, int cx, int cy, Color fg) {
  switch (shape) {
    case 0:  // 20x20 square
      for (int y = cy - 10; y < cy + 10; ++y)
        for (int x = cx - 10; x < cx + 10; ++x) put(img, y, x, fg);
      break;
    case 1:  // circle r=10
      for (int y = cy - 10; y <= cy + 10; ++y)
        for (int x = cx - 10; x <= cx + 10; ++x)
          if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= 100)
            put(img, y, x, fg);
      break;
    case 2:  // triangle, base 30 height 22
      for (int dy = 0; dy < 22; ++dy) {
        int half = 1 + dy * 15 / 22;
        for (int x = cx - half; x <= cx + half; ++x)
          put(img, cy - 11 + dy, x, fg);
      }
      break;
    case 3:  // diamond radius 13
      for (int dy = -13; dy <= 13; ++dy)
        for (int dx = -13; dx <= 13; ++dx)
          if (std::abs(dx) + std::abs(dy) <= 13) put(img, cy + dy, cx + dx, fg);
      break;
    case 4:  // cross, 30-long 10-wide bars
      for (int y = cy - 5; y < cy + 5; ++y)
        for (int x = cx - 15; x < cx + 15; ++x) put(img, y, x, fg);
      for (int y = cy - 15; y < cy + 15; ++y)
        for (int x = cx - 5; x < cx + 5; ++x) put(img, y, x, fg);
      break;
    case 5:  // ring, outer 13 inner 6
      for (int dy = -13; dy <= 13; ++dy)
        for (int dx = -13; dx <= 13; ++dx) {
          int d2 = dx * dx + dy * dy;
          if (d2 <= 169 && d2 > 36) put(img, cy + dy, cx + dx, fg);
        }
      break;
    case 6:  // horizontal bar 28x10
      for (int y = cy - 5; y < cy + 5; ++y)
        for (int x = cx - 14; x < cx + 14; ++x) put(img, y, x, fg);
      break;
    case 7:  // inverted triangle
      for (int dy = 0; dy < 22; ++dy) {
        int half = 15 - dy * 15 / 22;
        for (int x = cx - half; x <= cx + half; ++x)
          put(img, cy - 11 + dy, x, fg);
      }
      break;
    default:
      DTFIT_CHECK(false, ParamError, "draw_shape: bad shape id ", shape);
  }
}

struct ConditionSpec {
  Color sky, ground;
};

const std::array<ConditionSpec, kNumConditions> kConditions = {{
    {{0.45f, 0.70f, 0.95f}, {0.52f, 0.50f, 0.48f}},  // sunny
    {{0.62f, 0.63f, 0.65f}, {0.45f, 0.44f, 0.43f}},  // cloudy
    {{0.28f, 0.31f, 0.38f}, {0.22f, 0.24f, 0.28f}},  // rainy
    {{0.70f, 0.72f, 0.78f}, {0.88f, 0.89f, 0.92f}},  // snowy
    {{0.02f, 0.02f, 0.05f}, {0.07f, 0.07f, 0.09f}},  // night
}};

bool boxes_overlap(const BBox& a, const BBox& b) {
  return a.x < b.x + b.w && b.x < a.x + a.w && a.y < b.y + b.h &&
         b.y < a.y + a.h;
}

}  // namespace

SceneSample gen_source_sample(int class_id, Rng& rng) {
  DTFIT_CHECK(class_id >= 0 && class_id < kNumSourceClasses, ParamError,
              "gen_source_sample: class id ", class_id, " outside [0,",
              kNumSourceClasses - 1, "]");
  const ClassSpec& spec = kClasses[class_id];
  SceneSample s;
  s.image = Image(3, kSize, kSize);
  s.condition_id = class_id;
  fill_bg(s.image, spec.bg, rng, 0.006);
  float jr = static_cast<float>(rng.normal() * 0.015);
  Color fg{clamp01(spec.fg.r + jr), clamp01(spec.fg.g + jr),
           clamp01(spec.fg.b + jr)};
  int cx = 16 + rng.uniform_int(-1, 0);
  int cy = 16 + rng.uniform_int(-1, 0);
  draw_shape(s.image, spec.shape, cx, cy, fg);
  return s;
}

SceneSample gen_target_sample(int condition_id, Rng& rng) {
  DTFIT_CHECK(condition_id >= 0 && condition_id < kNumConditions, ParamError,
              "gen_target_sample: condition id ", condition_id, " outside [0,",
              kNumConditions - 1, "]");
  const ConditionSpec& spec = kConditions[condition_id];
  SceneSample s;
  s.image = Image(3, kSize, kSize);
  s.condition_id = condition_id;

  int horizon = 14 + rng.uniform_int(0, 4);
  for (int y = 0; y < kSize; ++y) {
    Color c = (y < horizon) ? spec.sky : spec.ground;
    for (int x = 0; x < kSize; ++x) {
      double n = rng.normal() * 0.01;
      put(s.image, y, x, {clamp01(c.r + n), clamp01(c.g + n), clamp01(c.b + n)});
    }
  }

  if (condition_id == 2) {  // rain streaks in the sky and upper ground
    int streaks = 8 + rng.uniform_int(0, 6);
    for (int k = 0; k < streaks; ++k) {
      int x = rng.uniform_int(0, kSize - 1);
      int y0 = rng.uniform_int(0, horizon - 4);
      int len = rng.uniform_int(3, 7);
      for (int y = y0; y < std::min(kSize, y0 + len); ++y) {
        put(s.image, y, x,
            {clamp01(s.image.at(0, y, x) + 0.10f),
             clamp01(s.image.at(1, y, x) + 0.10f),
             clamp01(s.image.at(2, y, x) + 0.12f)});
      }
    }
  }

  // 1-4 vehicles on the ground; contrast rises with footprint so bigger
  // vehicles keep their region signal longer under forward diffusion
  int n_vehicles = rng.uniform_int(1, 4);
  for (int v = 0; v < n_vehicles; ++v) {
    BBox box;
    bool placed = false;
    for (int attempt = 0; attempt < 8 && !placed; ++attempt) {
      box.w = rng.uniform_int(3, 8);
      box.h = rng.uniform_int(3, 8);
      box.x = rng.uniform_int(1, kSize - 1 - box.w);
      int ymin = horizon + 1;
      int ymax = kSize - 1 - box.h;
      box.y = rng.uniform_int(ymin, ymax);
      placed = true;
      for (const auto& other : s.boxes)
        if (boxes_overlap(box, other)) placed = false;
    }
    if (!placed) continue;

    double size_frac = (std::max(box.w, box.h) - 3) / 5.0;
    double contrast = 0.35 + 0.55 * size_frac;
    Color body;
    if (condition_id == 4) {
      double lift = 0.08 + 0.30 * size_frac;
      body = {clamp01(spec.ground.r + lift), clamp01(spec.ground.g + lift),
              clamp01(spec.ground.b + lift * 1.1)};
    } else {
      // alternate bright/dark bodies, both offset by the contrast budget
      double dir = (rng.uniform() < 0.5) ? 1.0 : -1.0;
      double hue = rng.uniform() * 0.15;
      body = {clamp01(spec.ground.r + dir * contrast + hue),
              clamp01(spec.ground.g + dir * contrast),
              clamp01(spec.ground.b + dir * contrast - hue)};
    }
    for (int y = box.y; y < box.y + box.h; ++y)
      for (int x = box.x; x < box.x + box.w; ++x) put(s.image, y, x, body);

    if (condition_id == 4) {  // headlights, brighter on bigger vehicles
      float lum = clamp01(spec.ground.r + 0.30 + 0.60 * size_frac);
      int hy = box.y + box.h - 1;
      put(s.image, hy, box.x, {lum, lum, clamp01(lum * 0.72)});
      put(s.image, hy, box.x + box.w - 1, {lum, lum, clamp01(lum * 0.72)});
    }
    if (condition_id == 2 && box.y + box.h + 1 < kSize) {  // puddle reflection
      int ry = box.y + box.h;
      for (int x = box.x; x < box.x + box.w; ++x) {
        put(s.image, ry, x,
            {clamp01(0.5f * body.r + 0.5f * spec.ground.r),
             clamp01(0.5f * body.g + 0.5f * spec.ground.g),
             clamp01(0.5f * body.b + 0.5f * spec.ground.b + 0.03f)});
      }
    }
    s.boxes.push_back(box);
  }
  if (s.boxes.empty()) {  // placement can fail only by overlap; force one
    BBox box{12, horizon + 2, 5, 4};
    Color body{clamp01(spec.ground.r + 0.5), clamp01(spec.ground.g + 0.5),
               clamp01(spec.ground.b + 0.5)};
    for (int y = box.y; y < box.y + box.h; ++y)
      for (int x = box.x; x < box.x + box.w; ++x) put(s.image, y, x, body);
    s.boxes.push_back(box);
  }
  return s;
}

std::vector<SceneSample> gen_source_dataset(int count, uint64_t seed) {
  std::vector<SceneSample> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    Rng rng(mix_seed(seed, static_cast<uint64_t>(i)));
    out.push_back(gen_source_sample(i % kNumSourceClasses, rng));
  }
  return out;
}

std::vector<SceneSample> gen_target_dataset(int count, uint64_t seed) {
  std::vector<SceneSample> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    Rng rng(mix_seed(seed, static_cast<uint64_t>(i)));
    out.push_back(gen_target_sample(i % kNumConditions, rng));
  }
  return out;
}

// ---------------------------------------------------------------------------
// SCN1 container

namespace {
constexpr char kSceneMagic[4] = {'S', 'C', 'N', '1'};
constexpr uint32_t kSceneVersion = 1;

void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}
uint32_t read_u32(std::istream& is, const char* what) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  DTFIT_CHECK(is.good(), IoError, "scene file: truncated ", what);
  return v;
}
}  // namespace

void write_dataset(const std::vector<SceneSample>& samples,
                   const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  DTFIT_CHECK(os.good(), IoError, "scene file: cannot open ", path);
  os.write(kSceneMagic, 4);
  write_u32(os, static_cast<uint32_t>(samples.size()));
  int c = samples.empty() ? 3 : samples[0].image.c;
  int h = samples.empty() ? kSize : samples[0].image.h;
  int w = samples.empty() ? kSize : samples[0].image.w;
  write_u32(os, c);
  write_u32(os, h);
  write_u32(os, w);
  write_u32(os, kSceneVersion);
  for (const auto& s : samples) {
    DTFIT_CHECK(s.image.c == c && s.image.h == h && s.image.w == w,
                ContractError, "scene file: mixed image extents");
    DTFIT_CHECK(s.boxes.size() <= 255, ContractError, "scene file: too many boxes");
    uint8_t cid = static_cast<uint8_t>(s.condition_id);
    uint8_t nb = static_cast<uint8_t>(s.boxes.size());
    os.put(static_cast<char>(cid));
    os.put(static_cast<char>(nb));
    for (const auto& b : s.boxes) {
      os.put(static_cast<char>(b.x));
      os.put(static_cast<char>(b.y));
      os.put(static_cast<char>(b.w));
      os.put(static_cast<char>(b.h));
    }
    for (float v : s.image.data) {
      int q = static_cast<int>(std::lround(std::clamp(v, 0.f, 1.f) * 255.f));
      os.put(static_cast<char>(q));
    }
  }
  DTFIT_CHECK(os.good(), IoError, "scene file: write failed for ", path);
}

std::vector<SceneSample> read_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  DTFIT_CHECK(is.good(), IoError, "scene file: cannot open ", path);
  char magic[4];
  is.read(magic, 4);
  DTFIT_CHECK(is.good() && std::memcmp(magic, kSceneMagic, 4) == 0, IoError,
              "scene file: unknown magic in ", path);
  uint32_t count = read_u32(is, "count");
  uint32_t c = read_u32(is, "channels");
  uint32_t h = read_u32(is, "height");
  uint32_t w = read_u32(is, "width");
  uint32_t version = read_u32(is, "version");
  DTFIT_CHECK(version == kSceneVersion, IoError,
              "scene file: unsupported layout version ", version);
  DTFIT_CHECK(c <= 4 && h <= 4096 && w <= 4096, IoError,
              "scene file: implausible extents");
  std::vector<SceneSample> out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    SceneSample s;
    int cid = is.get();
    int nb = is.get();
    DTFIT_CHECK(cid != EOF && nb != EOF, IoError,
                "scene file: truncated record header at sample ", i);
    s.condition_id = cid;
    for (int b = 0; b < nb; ++b) {
      int x = is.get(), y = is.get(), bw = is.get(), bh = is.get();
      DTFIT_CHECK(bh != EOF, IoError, "scene file: truncated box at sample ", i);
      s.boxes.push_back(BBox{x, y, bw, bh});
    }
    s.image = Image(static_cast<int>(c), static_cast<int>(h),
                    static_cast<int>(w));
    for (auto& v : s.image.data) {
      int q = is.get();
      DTFIT_CHECK(q != EOF, IoError, "scene file: truncated pixels at sample ",
                  i);
      v = static_cast<float>(q) / 255.f;
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_ppm(const Image& img, const std::string& path) {
  DTFIT_CHECK(img.c == 3, ParamError, "write_ppm: needs a 3-channel image");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  DTFIT_CHECK(os.good(), IoError, "ppm: cannot open ", path);
  os << "P6\n" << img.w << " " << img.h << "\n255\n";
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int ch = 0; ch < 3; ++ch) {
        float v = std::clamp(img.at(ch, y, x), 0.f, 1.f);
        os.put(static_cast<char>(std::lround(v * 255.f)));
      }
  DTFIT_CHECK(os.good(), IoError, "ppm: write failed for ", path);
}

}  // namespace dtfit
