#include "dtfit/schedule.hpp"

#include <algorithm>
#include <cmath>

namespace dtfit {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kBetaClip = 0.999;

void finalize(NoiseSchedule& s) {
  s.alpha.assign(s.T + 1, 0.0);
  s.alpha_bar.assign(s.T + 1, 0.0);
  s.posterior_var.assign(s.T + 1, 0.0);
  s.alpha_bar[0] = 1.0;
  for (int t = 1; t <= s.T; ++t) {
    DTFIT_CHECK(s.beta[t] > 0.0 && s.beta[t] < 1.0, ParamError,
                "schedule: beta[", t, "]=", s.beta[t], " outside (0,1)");
    s.alpha[t] = 1.0 - s.beta[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    s.posterior_var[t] =
        (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]) * s.beta[t];
  }
}

std::vector<double> linear_betas(int T, double beta_1, double beta_T) {
  std::vector<double> beta(T + 1, 0.0);
  for (int t = 1; t <= T; ++t)
    beta[t] = (T == 1) ? beta_1
                       : beta_1 + (beta_T - beta_1) * (t - 1) / double(T - 1);
  return beta;
}

// f_s(t) = cos^s(((t/T + b) / (1 + b)) * pi/2); abar_t = f_s(t) / f_s(0)
std::vector<double> cosine_power_betas(int T, int s, double b) {
  auto f = [&](double t) {
    return std::pow(std::cos((t / T + b) / (1.0 + b) * kPi / 2.0), s);
  };
  const double f0 = f(0.0);
  std::vector<double> beta(T + 1, 0.0);
  double ab_prev = 1.0;
  for (int t = 1; t <= T; ++t) {
    double ab = f(double(t)) / f0;
    double bt = 1.0 - ab / ab_prev;
    beta[t] = std::clamp(bt, 1e-12, kBetaClip);
    ab_prev = ab;
  }
  return beta;
}

}  // namespace

std::string NoiseSchedule::name() const {
  switch (kind) {
    case ScheduleKind::linear:
      return "linear";
    case ScheduleKind::cosine_power:
      return "cos" + std::to_string(power_s);
    case ScheduleKind::scos:
      return "scos" + std::to_string(power_s);
  }
  return "?";
}

NoiseSchedule build_linear(int T, double beta_1, double beta_T) {
  DTFIT_CHECK(T >= 1, ParamError, "build_linear: T must be >= 1");
  DTFIT_CHECK(0.0 < beta_1 && beta_1 <= beta_T && beta_T < 1.0, ParamError,
              "build_linear: need 0 < beta_1 <= beta_T < 1, got ", beta_1,
              ", ", beta_T);
  NoiseSchedule s;
  s.kind = ScheduleKind::linear;
  s.T = T;
  s.beta_1 = beta_1;
  s.beta_T = beta_T;
  s.beta = linear_betas(T, beta_1, beta_T);
  finalize(s);
  return s;
}

NoiseSchedule build_cosine_power(int T, int s, double b) {
  DTFIT_CHECK(T >= 1, ParamError, "build_cosine_power: T must be >= 1");
  DTFIT_CHECK(s >= 1, ParamError, "build_cosine_power: power s must be >= 1");
  DTFIT_CHECK(b > 0.0, ParamError, "build_cosine_power: offset b must be > 0");
  NoiseSchedule out;
  out.kind = ScheduleKind::cosine_power;
  out.T = T;
  out.power_s = s;
  out.offset_b = b;
  out.beta = cosine_power_betas(T, s, b);
  finalize(out);
  return out;
}

NoiseSchedule build_scos(int T, int s, double b, double beta_1, double beta_T) {
  DTFIT_CHECK(T >= 1, ParamError, "build_scos: T must be >= 1");
  DTFIT_CHECK(s >= 1, ParamError, "build_scos: power s must be >= 1");
  DTFIT_CHECK(b > 0.0, ParamError, "build_scos: offset b must be > 0");
  DTFIT_CHECK(0.0 < beta_1 && beta_1 <= beta_T && beta_T < 1.0, ParamError,
              "build_scos: need 0 < beta_1 <= beta_T < 1");
  auto beta_cos = cosine_power_betas(T, s, b);
  auto beta_lin = linear_betas(T, beta_1, beta_T);
  // splice at the first step whose cosine-power beta reaches the linear grid
  int splice = -1;
  for (int t = 1; t <= T; ++t) {
    if (beta_cos[t] >= beta_lin[t]) {
      splice = t;
      break;
    }
  }
  DTFIT_CHECK(splice != -1, ParamError,
              "build_scos: cosine-power beta never crosses the linear grid "
              "(T=", T, ", s=", s, ", b=", b, "); no splice point exists");
  NoiseSchedule out;
  out.kind = ScheduleKind::scos;
  out.T = T;
  out.power_s = s;
  out.offset_b = b;
  out.beta_1 = beta_1;
  out.beta_T = beta_T;
  out.splice_index = splice;
  out.beta.assign(T + 1, 0.0);
  for (int t = 1; t <= T; ++t)
    out.beta[t] = (t < splice) ? beta_cos[t] : beta_lin[t];
  finalize(out);
  return out;
}

int current_power(const ProgressiveController& pc, long step) {
  DTFIT_CHECK(step >= 0, ParamError, "current_power: step must be >= 0");
  if (step >= pc.tau) return pc.s_end;  // annealing span exhausted
  long s = pc.s_start - step / pc.stage_length;
  return static_cast<int>(std::clamp<long>(s, pc.s_end, pc.s_start));
}

double region_contrast_power(const Image& img, const BBox& box) {
  DTFIT_CHECK(box.w > 0 && box.h > 0, ParamError,
              "region_contrast_power: empty box");
  DTFIT_CHECK(box.x >= 0 && box.y >= 0 && box.x + box.w <= img.w &&
                  box.y + box.h <= img.h,
              ParamError, "region_contrast_power: box outside image bounds");
  // background = ring of up to 2px around the box; whole image as fallback
  const int margin = 2;
  int x0 = std::max(0, box.x - margin), x1 = std::min(img.w, box.x + box.w + margin);
  int y0 = std::max(0, box.y - margin), y1 = std::min(img.h, box.y + box.h + margin);
  std::vector<double> bg_mean(img.c, 0.0);
  for (int ch = 0; ch < img.c; ++ch) {
    double acc = 0.0;
    long cnt = 0;
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) {
        bool inside = x >= box.x && x < box.x + box.w && y >= box.y &&
                      y < box.y + box.h;
        if (inside) continue;
        acc += img.at(ch, y, x);
        ++cnt;
      }
    if (cnt == 0) {  // box covers the ring entirely; average the whole image
      for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) acc += img.at(ch, y, x);
      cnt = long(img.h) * img.w;
    }
    bg_mean[ch] = acc / double(cnt);
  }
  double power = 0.0;
  for (int ch = 0; ch < img.c; ++ch)
    for (int y = box.y; y < box.y + box.h; ++y)
      for (int x = box.x; x < box.x + box.w; ++x) {
        double d = img.at(ch, y, x) - bg_mean[ch];
        power += d * d;
      }
  return power / double(img.c * box.w * box.h);
}

int region_survival_time(const Image& img, const BBox& box,
                         const NoiseSchedule& sched, double threshold) {
  DTFIT_CHECK(threshold > 0.0, ParamError,
              "region_survival_time: threshold must be > 0");
  double p = region_contrast_power(img, box);
  int last = 0;
  for (int t = 1; t <= sched.T; ++t) {
    if (sched.snr(t) * p >= threshold) last = t;
  }
  return last;
}

}  // namespace dtfit
