#pragma once

// Training harness for both phases: parameter-selection modes, the
// object-sensitive loss, AdamW, progressive schedule integration, and the
// step loop. One loop owns the parameters; everything is deterministic given
// the config seed.

#include <cmath>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "dtfit/common.hpp"
#include "dtfit/image_tensor.hpp"
#include "dtfit/model.hpp"
#include "dtfit/rng.hpp"
#include "dtfit/scenes.hpp"
#include "dtfit/schedule.hpp"
#include "dtfit/tensor.hpp"

namespace dtfit {

enum class TrainMode {
  pretrain_full,
  finetune_full,
  finetune_bias_only,
  finetune_lowrank_additive,
  finetune_modulation,
};

TrainMode train_mode_from_string(const std::string& s);
std::string train_mode_to_string(TrainMode m);

struct TrainConfig {
  TrainMode mode = TrainMode::pretrain_full;
  long steps = 1;
  int batch_size = 32;
  double learning_rate = 1e-4;
  double weight_decay = 0.0;
  uint64_t seed = 0;
  double osl_lambda = 1.0;

  // schedule selection; scos with progressive=true anneals power 6 -> 2
  ScheduleKind schedule = ScheduleKind::linear;
  int scos_power = 2;
  bool progressive = false;
  long tau = 0;  // 0: default to `steps`

  void validate() const {
    DTFIT_CHECK(steps >= 1, ParamError, "train config: steps must be >= 1");
    DTFIT_CHECK(learning_rate > 0.0, ParamError,
                "train config: learning rate must be > 0");
    DTFIT_CHECK(osl_lambda >= 0.0, ParamError,
                "train config: osl lambda must be >= 0");
    DTFIT_CHECK(batch_size >= 1, ParamError,
                "train config: batch size must be >= 1");
  }
};

// image-shaped weight map: 1 outside boxes, 1 + lambda inside any box
template <class S>
Tensor<S> build_mask(const std::vector<BBox>& boxes, int channels, int height,
                     int width, double lambda) {
  DTFIT_CHECK(lambda >= 0.0, ParamError, "build_mask: lambda must be >= 0");
  Tensor<S> mask(Shape{channels, height, width}, S(1));
  auto& mv = mask.mutable_values();
  for (const auto& b : boxes) {
    DTFIT_CHECK(b.w > 0 && b.h > 0 && b.x >= 0 && b.y >= 0 &&
                    b.x + b.w <= width && b.y + b.h <= height,
                ParamError, "build_mask: box out of bounds");
    for (int c = 0; c < channels; ++c)
      for (int y = b.y; y < b.y + b.h; ++y)
        for (int x = b.x; x < b.x + b.w; ++x)
          mv[(c * height + y) * width + x] = static_cast<S>(1.0 + lambda);
  }
  return mask;
}

// mean((mask * (eps_true - eps_pred))^2); the all-ones mask recovers the
// plain diffusion objective
template <class S>
Tensor<S> osl_loss(const Tensor<S>& eps_true, const Tensor<S>& eps_pred,
                   const Tensor<S>& mask) {
  DTFIT_CHECK(eps_true.shape() == eps_pred.shape() &&
                  eps_true.shape() == mask.shape(),
              ShapeError, "osl_loss: shape mismatch");
  auto weighted = mul(mask, sub(eps_true, eps_pred));
  return mean(mul(weighted, weighted));
}

// ---------------------------------------------------------------------------
// AdamW (decoupled weight decay)

template <class S>
struct AdamW {
  double lr = 1e-4;
  double beta1 = 0.9, beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  long step_count = 0;

  struct Slot {
    std::vector<double> m, v;
  };
  std::unordered_map<const void*, Slot> slots;

  void step(std::vector<ParamRef<S>>& params) {
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, double(step_count));
    const double bc2 = 1.0 - std::pow(beta2, double(step_count));
    for (auto& p : params) {
      auto& vals = p.tensor.mutable_values();
      auto& slot = slots[p.tensor.node().get()];
      if (slot.m.empty()) {
        slot.m.assign(vals.size(), 0.0);
        slot.v.assign(vals.size(), 0.0);
      }
      const bool has_grad = p.tensor.has_grad();
      for (size_t i = 0; i < vals.size(); ++i) {
        double g = has_grad ? double(p.tensor.grad()[i]) : 0.0;
        slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * g;
        slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * g * g;
        double mhat = slot.m[i] / bc1;
        double vhat = slot.v[i] / bc2;
        double update = mhat / (std::sqrt(vhat) + eps) + weight_decay * double(vals[i]);
        vals[i] = static_cast<S>(double(vals[i]) - lr * update);
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Parameter selection

template <class S>
std::vector<ParamRef<S>> select_trainable(DiT<S>& model, TrainMode mode) {
  auto all = model.parameters();
  std::vector<ParamRef<S>> out;
  switch (mode) {
    case TrainMode::pretrain_full:
    case TrainMode::finetune_full:
      return all;
    case TrainMode::finetune_bias_only:
      for (auto& p : all)
        if (p.kind == ParamKind::bias || p.kind == ParamKind::gain)
          out.push_back(p);
      return out;
    case TrainMode::finetune_lowrank_additive:
      DTFIT_CHECK(model.adapters_wrapped(), ContractError,
                  "select_trainable: low-rank mode requires wrapped adapters");
      for (auto& p : all)
        if (p.kind == ParamKind::adapter_b) out.push_back(p);
      return out;
    case TrainMode::finetune_modulation:
      DTFIT_CHECK(model.adapters_wrapped(), ContractError,
                  "select_trainable: modulation mode requires wrapped adapters");
      for (auto& p : all)
        if (p.kind == ParamKind::adapter_gamma ||
            p.kind == ParamKind::adapter_b ||
            p.kind == ParamKind::embed_row_new)
          out.push_back(p);
      return out;
  }
  throw ContractError("select_trainable: unknown mode");
}

template <class S>
double trainable_fraction(DiT<S>& model, TrainMode mode) {
  int64_t sel = 0;
  for (auto& p : select_trainable(model, mode)) sel += p.tensor.size();
  return double(sel) / double(model.total_param_count());
}

// ---------------------------------------------------------------------------
// Training loop

struct TraceRow {
  long step;
  double loss;
  int schedule_power;  // 0 for non-scos schedules
};

struct TrainResult {
  std::vector<TraceRow> trace;
  double mean_loss(long first_n = -1) const {
    long n = (first_n < 0) ? long(trace.size())
                           : std::min<long>(first_n, long(trace.size()));
    double acc = 0.0;
    for (long i = 0; i < n; ++i) acc += trace[i].loss;
    return n ? acc / double(n) : 0.0;
  }
};

namespace detail {

inline NoiseSchedule build_train_schedule(const TrainConfig& cfg, int T,
                                          int power) {
  switch (cfg.schedule) {
    case ScheduleKind::linear:
      return build_linear(T, kDefaultBeta1, kDefaultBetaT);
    case ScheduleKind::cosine_power:
      return build_cosine_power(T, power, kDefaultOffsetB);
    case ScheduleKind::scos:
      return build_scos(T, power, kDefaultOffsetB, kDefaultBeta1,
                        kDefaultBetaT);
  }
  throw ContractError("build_train_schedule: unknown schedule kind");
}

}  // namespace detail

// One optimizer step per iteration: draw a batch, per sample draw t and eps,
// q-sample under the step's active schedule, predict, OSL loss, backward,
// AdamW on the selected parameters.
//
// `condition_offset` maps a sample's condition_id to its embedding row
// (source data uses row = class id, target data uses num_source + condition).
template <class S>
TrainResult train(DiT<S>& model, const std::vector<SceneSample>& dataset,
                  const TrainConfig& cfg, int condition_offset = 0) {
  cfg.validate();
  DTFIT_CHECK(!dataset.empty(), ParamError, "train: dataset is empty");
  const int T = model.cfg.horizon;

  auto trainable = select_trainable(model, cfg.mode);
  AdamW<S> opt;
  opt.lr = cfg.learning_rate;
  opt.weight_decay = cfg.weight_decay;

  long tau = cfg.tau > 0 ? cfg.tau : cfg.steps;
  ProgressiveController controller(tau);

  // cache one schedule per power stage; rebuilt tables, not mutated ones
  std::map<int, NoiseSchedule> cache;
  auto schedule_for = [&](int power) -> const NoiseSchedule& {
    auto it = cache.find(power);
    if (it == cache.end())
      it = cache.emplace(power, detail::build_train_schedule(cfg, T, power))
               .first;
    return it->second;
  };

  Rng rng(cfg.seed);
  TrainResult result;
  result.trace.reserve(cfg.steps);

  for (long step = 0; step < cfg.steps; ++step) {
    int power = 0;
    if (cfg.schedule != ScheduleKind::linear)
      power = cfg.progressive ? current_power(controller, step)
                              : cfg.scos_power;
    const NoiseSchedule& sched = schedule_for(power);

    model.zero_grads();
    Tensor<S> loss;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto& sample =
          dataset[size_t(rng.next_u64() % dataset.size())];
      int t = rng.uniform_int(1, T);
      auto x0 = image_to_tensor<S>(sample.image);
      auto eps = Tensor<S>::randn(x0.shape(), rng);
      auto x_t = q_sample(x0, t, eps, sched);
      auto pred = model.forward(x_t, t, sample.condition_id + condition_offset);
      auto mask = build_mask<S>(sample.boxes, model.cfg.channels,
                                model.cfg.image_size, model.cfg.image_size,
                                cfg.osl_lambda);
      auto sample_loss = osl_loss(eps, pred, mask);
      loss = loss.defined() ? add(loss, sample_loss) : sample_loss;
    }
    loss = scale(loss, 1.0 / cfg.batch_size);
    double loss_val = double(loss.scalar());
    DTFIT_CHECK(std::isfinite(loss_val), DomainError,
                "train: non-finite loss at step ", step,
                " (mode=", train_mode_to_string(cfg.mode),
                ", schedule power=", power, "); aborting");
    backward(loss);
    opt.step(trainable);
    result.trace.push_back({step, loss_val, power});
  }
  return result;
}

inline TrainMode train_mode_from_string(const std::string& s) {
  if (s == "pretrain_full") return TrainMode::pretrain_full;
  if (s == "finetune_full") return TrainMode::finetune_full;
  if (s == "finetune_bias_only") return TrainMode::finetune_bias_only;
  if (s == "finetune_lowrank_additive")
    return TrainMode::finetune_lowrank_additive;
  if (s == "finetune_modulation") return TrainMode::finetune_modulation;
  throw ParamError("unknown train mode: " + s);
}

inline std::string train_mode_to_string(TrainMode m) {
  switch (m) {
    case TrainMode::pretrain_full: return "pretrain_full";
    case TrainMode::finetune_full: return "finetune_full";
    case TrainMode::finetune_bias_only: return "finetune_bias_only";
    case TrainMode::finetune_lowrank_additive:
      return "finetune_lowrank_additive";
    case TrainMode::finetune_modulation: return "finetune_modulation";
  }
  return "?";
}

}  // namespace dtfit
