#pragma once

// Noise schedules for the forward diffusion process: the conventional linear
// grid, the cosine-power family, and the spliced "scos" schedule that keeps
// the cosine-power profile early and the linear tail late. Grid math is kept
// in double precision; tensor-facing ops cast per use.

#include <string>
#include <utility>
#include <vector>

#include "dtfit/common.hpp"
#include "dtfit/scenes.hpp"
#include "dtfit/tensor.hpp"

namespace dtfit {

enum class ScheduleKind { linear, cosine_power, scos };

struct NoiseSchedule {
  ScheduleKind kind = ScheduleKind::linear;
  int T = 0;
  // index t in [1, T]; slot 0 unused except alpha_bar[0] = 1
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  std::vector<double> posterior_var;  // beta-tilde; posterior_var[1] = 0
  int splice_index = -1;              // scos only
  int power_s = 0;                    // cosine_power / scos
  double offset_b = 0.0;
  double beta_1 = 0.0, beta_T = 0.0;  // linear / scos

  std::string name() const;
  double snr(int t) const { return alpha_bar[t] / (1.0 - alpha_bar[t]); }
};

inline constexpr int kDefaultHorizon = 1000;
inline constexpr double kDefaultBeta1 = 1e-4;
inline constexpr double kDefaultBetaT = 0.02;
inline constexpr double kDefaultOffsetB = 0.008;

NoiseSchedule build_linear(int T, double beta_1, double beta_T);
NoiseSchedule build_cosine_power(int T, int s, double b);
NoiseSchedule build_scos(int T, int s, double b, double beta_1, double beta_T);

// Anneals the scos power 6 -> 2 in equal integer stages across tau steps.
struct ProgressiveController {
  int s_start = 6;
  int s_end = 2;
  long tau = 0;
  long stage_length = 1;

  explicit ProgressiveController(long tau_steps)
      : tau(tau_steps),
        stage_length((tau_steps + (s_start - s_end)) / (s_start - s_end + 1)) {
    DTFIT_CHECK(tau_steps >= 1, ParamError,
                "progressive controller: tau must be >= 1");
  }
};

int current_power(const ProgressiveController& pc, long step);

// ------------------------------------------------------------------
// Forward-process math (templated over scalar precision)

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
template <class S>
Tensor<S> q_sample(const Tensor<S>& x0, int t, const Tensor<S>& eps,
                   const NoiseSchedule& sched) {
  DTFIT_CHECK(t >= 1 && t <= sched.T, ParamError, "q_sample: t=", t,
              " outside [1,", sched.T, "]");
  DTFIT_CHECK(x0.shape() == eps.shape(), ShapeError,
              "q_sample: eps shape must match x0");
  double ab = sched.alpha_bar[t];
  return add(scale(x0, std::sqrt(ab)), scale(eps, std::sqrt(1.0 - ab)));
}

// posterior q(x_{t-1} | x_t, x0): mean and variance beta-tilde
template <class S>
std::pair<Tensor<S>, double> posterior_mean_var(const Tensor<S>& x0,
                                                const Tensor<S>& xt, int t,
                                                const NoiseSchedule& sched) {
  DTFIT_CHECK(t >= 1 && t <= sched.T, ParamError, "posterior: t=", t,
              " outside [1,", sched.T, "]");
  double ab_t = sched.alpha_bar[t];
  double ab_prev = sched.alpha_bar[t - 1];
  double c0 = std::sqrt(ab_prev) * sched.beta[t] / (1.0 - ab_t);
  double c1 = std::sqrt(sched.alpha[t]) * (1.0 - ab_prev) / (1.0 - ab_t);
  return {add(scale(x0, c0), scale(xt, c1)), sched.posterior_var[t]};
}

// mu_theta(x_t, t) = (x_t - beta_t / sqrt(1 - abar_t) * eps) / sqrt(alpha_t)
template <class S>
Tensor<S> mu_from_eps(const Tensor<S>& xt, int t, const Tensor<S>& eps_pred,
                      const NoiseSchedule& sched) {
  DTFIT_CHECK(t >= 1 && t <= sched.T, ParamError, "mu_from_eps: t=", t,
              " outside [1,", sched.T, "]");
  DTFIT_CHECK(xt.shape() == eps_pred.shape(), ShapeError,
              "mu_from_eps: shape mismatch");
  double coef = sched.beta[t] / std::sqrt(1.0 - sched.alpha_bar[t]);
  return scale(sub(xt, scale(eps_pred, coef)), 1.0 / std::sqrt(sched.alpha[t]));
}

// ------------------------------------------------------------------
// Small-object fading analysis

// Contrast power of a box region: mean squared deviation of its pixels from
// the per-channel mean of a surrounding background ring.
double region_contrast_power(const Image& img, const BBox& box);

// Largest t with snr(t) * P_box >= threshold; 0 when even t=1 fails.
int region_survival_time(const Image& img, const BBox& box,
                         const NoiseSchedule& sched, double threshold);

}  // namespace dtfit
