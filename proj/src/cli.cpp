#include "dtfit/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "dtfit/checkpoint.hpp"
#include "dtfit/config.hpp"
#include "dtfit/eval.hpp"
#include "dtfit/finetune.hpp"
#include "dtfit/image_tensor.hpp"
#include "dtfit/model.hpp"
#include "dtfit/scenes.hpp"
#include "dtfit/schedule.hpp"
#include "dtfit/ssei.hpp"

namespace dtfit {

namespace {

using KV = std::map<std::string, std::string>;

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Every run prints its fully resolved configuration and seed up front.
void print_resolved(const std::string& cmd, const KV& kv) {
  std::cout << "command = " << cmd << "\n";
  for (const auto& [k, v] : kv) std::cout << k << " = " << v << "\n";
  std::cout.flush();
}

// Sidecar manifest next to an artifact: CSV of the resolved config.
void write_manifest(const std::string& artifact_path, const std::string& cmd,
                    const KV& kv) {
  std::ofstream os(artifact_path + ".manifest.csv", std::ios::trunc);
  DTFIT_CHECK(os.good(), IoError, "manifest: cannot write next to ",
              artifact_path);
  os << "key,value\n";
  os << "command," << cmd << "\n";
  for (const auto& [k, v] : kv) os << k << "," << v << "\n";
}

// Bridges a subcommand's flags to the optional key=value config file:
// file values apply only where the command line did not set the flag.
class ConfigBridge {
 public:
  explicit ConfigBridge(CLI::App* app) : app_(app) {
    app->add_option("--config", config_path_,
                    "key=value config file; flags override file values");
  }

  void bind(const std::string& key, CLI::Option* opt,
            std::function<void(const std::string&)> setter) {
    table_[key] = {opt, std::move(setter)};
  }

  // call at the start of the subcommand callback
  void apply() {
    if (config_path_.empty()) return;
    for (const auto& e : load_config(config_path_)) {
      auto it = table_.find(e.key);
      DTFIT_CHECK(it != table_.end(), ParamError, config_path_, ":", e.line,
                  ": unknown key '", e.key, "'");
      if (it->second.opt->count() > 0) continue;  // flag wins
      try {
        it->second.setter(e.value);
      } catch (const std::exception&) {
        throw ParamError(detail::concat(config_path_, ":", e.line,
                                        ": bad value '", e.value,
                                        "' for key '", e.key, "'"));
      }
    }
  }

 private:
  struct Entry {
    CLI::Option* opt;
    std::function<void(const std::string&)> setter;
  };
  CLI::App* app_;
  std::string config_path_;
  std::map<std::string, Entry> table_;
};

uint64_t resolve_seed(uint64_t flag_value, const CLI::Option* seed_opt) {
  if (seed_opt->count() == 0) {
    if (const char* env = std::getenv("DFT_SEED")) {
      return std::stoull(env);
    }
  }
  return flag_value;
}

NoiseSchedule schedule_from_name(const std::string& kind, int power, int T,
                                 double beta1, double betaT, double offset) {
  if (kind == "linear") return build_linear(T, beta1, betaT);
  if (kind == "cos") return build_cosine_power(T, power, offset);
  if (kind == "scos") return build_scos(T, power, offset, beta1, betaT);
  throw ParamError("unknown schedule kind: " + kind);
}

ScheduleKind schedule_kind_from_name(const std::string& kind) {
  if (kind == "linear") return ScheduleKind::linear;
  if (kind == "cos") return ScheduleKind::cosine_power;
  if (kind == "scos") return ScheduleKind::scos;
  throw ParamError("unknown schedule kind: " + kind);
}

void write_trace_csv(const std::string& path,
                     const std::vector<TraceRow>& trace) {
  std::ofstream os(path, std::ios::trunc);
  DTFIT_CHECK(os.good(), IoError, "trace: cannot open ", path);
  os << "step,loss,schedule_power\n";
  for (const auto& row : trace)
    os << row.step << "," << fmt_double(row.loss) << "," << row.schedule_power
       << "\n";
}

// condition id -> embedding row: fine-tuned tables address appended rows
int condition_row(const DiT<float>& model, int condition_id) {
  if (model.embed.size() > model.cfg.num_source_classes)
    return model.cfg.num_source_classes + condition_id;
  return condition_id;
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataOpts {
  std::string kind = "source";
  int count = 1000;
  uint64_t seed = 0;
  std::string out;
  std::string export_ppm_dir;
};

void run_gen_data(const GenDataOpts& o, const KV& kv) {
  auto samples = (o.kind == "source") ? gen_source_dataset(o.count, o.seed)
                                      : gen_target_dataset(o.count, o.seed);
  write_dataset(samples, o.out);
  write_manifest(o.out, "gen-data", kv);
  if (!o.export_ppm_dir.empty()) {
    for (size_t i = 0; i < samples.size(); ++i) {
      char name[64];
      std::snprintf(name, sizeof(name), "/img_%05zu.ppm", i);
      write_ppm(samples[i].image, o.export_ppm_dir + name);
    }
  }
  std::cout << "wrote " << samples.size() << " samples to " << o.out << "\n";
}

// ---------------------------------------------------------------------------
// pretrain

struct PretrainOpts {
  std::string data, out;
  long steps = 1000;
  int batch = 32;
  double lr = 1e-4, wd = 0.0;
  uint64_t seed = 0;
  int dim = 128, depth = 4, heads = 4, patch = 4, horizon = 1000;
};

void run_pretrain(const PretrainOpts& o, const KV& kv) {
  auto data = read_dataset(o.data);
  DiTConfig cfg;
  cfg.dim = o.dim;
  cfg.depth = o.depth;
  cfg.heads = o.heads;
  cfg.patch = o.patch;
  cfg.horizon = o.horizon;
  DiT<float> model(cfg, o.seed);

  TrainConfig tc;
  tc.mode = TrainMode::pretrain_full;
  tc.steps = o.steps;
  tc.batch_size = o.batch;
  tc.learning_rate = o.lr;
  tc.weight_decay = o.wd;
  tc.seed = o.seed;
  tc.osl_lambda = 0.0;
  tc.schedule = ScheduleKind::linear;
  auto result = train(model, data, tc);

  save_checkpoint(o.out, model.to_checkpoint());
  write_trace_csv(o.out + ".trace.csv", result.trace);
  write_manifest(o.out, "pretrain", kv);
  std::cout << "pretrained " << o.steps << " steps; final loss "
            << result.trace.back().loss << "; saved " << o.out << "\n";
}

// ---------------------------------------------------------------------------
// ssei

struct SseiOpts {
  std::string source, target, out;
};

void run_ssei(const SseiOpts& o, const KV& kv) {
  auto source = read_dataset(o.source);
  auto target = read_dataset(o.target);
  auto index = build_semantic_index(source, target);
  auto assignments = ssei_assignments(index);
  std::ostringstream csv;
  csv << "condition_id,assigned_source_class,cosine_similarity\n";
  for (const auto& a : assignments)
    csv << a.condition_id << "," << a.source_class << ","
        << fmt_double(a.similarity) << "\n";
  std::cout << csv.str();
  if (!o.out.empty()) {
    std::ofstream os(o.out, std::ios::trunc);
    DTFIT_CHECK(os.good(), IoError, "ssei: cannot open ", o.out);
    os << csv.str();
    write_manifest(o.out, "ssei", kv);
  }
}

// ---------------------------------------------------------------------------
// finetune

struct FinetuneOpts {
  std::string mode = "finetune_modulation";
  long steps = 500;
  double lr = 1e-4, wd = 0.0, lambda = 1.0;
  long tau = 0;  // > 0 enables progressive scos annealing over tau steps
  std::string schedule = "scos";
  int scos_power = 2;
  uint64_t seed = 0;
  std::string data, source_data, ckpt, out;
  std::string init = "ssei";
  int rank = 4;
  int batch = 32;
};

void run_finetune(const FinetuneOpts& o, const KV& kv) {
  auto target = read_dataset(o.data);
  DiT<float> model = DiT<float>::from_checkpoint(load_checkpoint(o.ckpt));
  TrainMode mode = train_mode_from_string(o.mode);

  if (model.embed.size() == model.cfg.num_source_classes) {
    Rng rng(mix_seed(o.seed, 0xE));
    model.embed.append_rows(kNumConditions, rng);
    if (o.init == "ssei") {
      DTFIT_CHECK(!o.source_data.empty(), ParamError,
                  "finetune: --init ssei requires --source-data");
      auto source = read_dataset(o.source_data);
      auto index = build_semantic_index(source, target);
      init_condition_embeddings(model.embed, ssei_assignments(index));
    } else if (o.init == "random") {
      Rng pick(mix_seed(o.seed, 0xF));
      for (int c = 0; c < kNumConditions; ++c)
        model.embed.assign_row_from(
            model.cfg.num_source_classes + c,
            pick.uniform_int(0, model.cfg.num_source_classes - 1));
    } else {
      throw ParamError("finetune: unknown --init mode '" + o.init + "'");
    }
  }

  if ((mode == TrainMode::finetune_modulation ||
       mode == TrainMode::finetune_lowrank_additive) &&
      !model.adapters_wrapped())
    model.wrap_adapters(o.rank, mix_seed(o.seed, 0xA));

  TrainConfig tc;
  tc.mode = mode;
  tc.steps = o.steps;
  tc.batch_size = o.batch;
  tc.learning_rate = o.lr;
  tc.weight_decay = o.wd;
  tc.seed = o.seed;
  tc.osl_lambda = o.lambda;
  tc.schedule = schedule_kind_from_name(o.schedule);
  tc.scos_power = o.scos_power;
  tc.progressive = tc.schedule == ScheduleKind::scos && o.tau > 0;
  tc.tau = o.tau;
  auto result = train(model, target, tc, model.cfg.num_source_classes);

  save_checkpoint(o.out, model.to_checkpoint());
  write_trace_csv(o.out + ".trace.csv", result.trace);
  write_manifest(o.out, "finetune", kv);
  std::cout << "fine-tuned " << o.steps << " steps (" << o.mode
            << "); final loss " << result.trace.back().loss << "; saved "
            << o.out << "\n";
}

// ---------------------------------------------------------------------------
// sample

struct SampleOpts {
  std::string ckpt, out_dir;
  int n = 16;
  int condition = 0;
  uint64_t seed = 0;
  std::string schedule = "linear";
  int scos_power = 2;
};

void run_sample(const SampleOpts& o, const KV& kv) {
  DiT<float> model = DiT<float>::from_checkpoint(load_checkpoint(o.ckpt));
  auto sched = schedule_from_name(o.schedule, o.scos_power, model.cfg.horizon,
                                  kDefaultBeta1, kDefaultBetaT,
                                  kDefaultOffsetB);
  Rng rng(o.seed);
  auto images =
      ddpm_sample(model, sched, condition_row(model, o.condition), rng, o.n);
  for (size_t i = 0; i < images.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "/sample_c%d_%04zu.ppm", o.condition, i);
    write_ppm(images[i], o.out_dir + name);
  }
  write_manifest(o.out_dir + "/samples", "sample", kv);
  std::cout << "wrote " << images.size() << " samples to " << o.out_dir
            << "\n";
}

// ---------------------------------------------------------------------------
// analyze-schedule

struct AnalyzeScheduleOpts {
  std::string schedule = "linear";
  int scos_power = 2;
  int horizon = kDefaultHorizon;
  double beta1 = kDefaultBeta1, betaT = kDefaultBetaT, offset = kDefaultOffsetB;
  std::string out;
};

void run_analyze_schedule(const AnalyzeScheduleOpts& o, const KV& kv) {
  auto sched = schedule_from_name(o.schedule, o.scos_power, o.horizon,
                                  o.beta1, o.betaT, o.offset);
  std::ostringstream csv;
  csv << "t,beta,alpha_bar,snr,schedule_name\n";
  for (int t = 1; t <= sched.T; ++t)
    csv << t << "," << fmt_double(sched.beta[t]) << ","
        << fmt_double(sched.alpha_bar[t]) << "," << fmt_double(sched.snr(t))
        << "," << sched.name() << "\n";
  if (o.out.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream os(o.out, std::ios::trunc);
    DTFIT_CHECK(os.good(), IoError, "analyze-schedule: cannot open ", o.out);
    os << csv.str();
    write_manifest(o.out, "analyze-schedule", kv);
  }
}

// ---------------------------------------------------------------------------
// analyze-survival

struct AnalyzeSurvivalOpts {
  std::string data;
  std::string schedules = "linear,scos2";
  double threshold = 1.0;
  int horizon = kDefaultHorizon;
  std::string out;
};

void run_analyze_survival(const AnalyzeSurvivalOpts& o, const KV& kv) {
  auto data = read_dataset(o.data);
  std::vector<NoiseSchedule> built;
  std::istringstream names(o.schedules);
  std::string name;
  while (std::getline(names, name, ',')) {
    if (name == "linear") {
      built.push_back(build_linear(o.horizon, kDefaultBeta1, kDefaultBetaT));
    } else if (name.rfind("cos", 0) == 0 && name.size() > 3) {
      built.push_back(build_cosine_power(o.horizon, std::stoi(name.substr(3)),
                                         kDefaultOffsetB));
    } else if (name.rfind("scos", 0) == 0 && name.size() > 4) {
      built.push_back(build_scos(o.horizon, std::stoi(name.substr(4)),
                                 kDefaultOffsetB, kDefaultBeta1,
                                 kDefaultBetaT));
    } else {
      throw ParamError("analyze-survival: unknown schedule '" + name + "'");
    }
  }
  std::vector<const NoiseSchedule*> refs;
  for (const auto& s : built) refs.push_back(&s);
  auto rows = survival_report(data, refs, o.threshold);
  auto csv = survival_csv(rows);
  if (o.out.empty()) {
    std::cout << csv;
  } else {
    std::ofstream os(o.out, std::ios::trunc);
    DTFIT_CHECK(os.good(), IoError, "analyze-survival: cannot open ", o.out);
    os << csv;
    write_manifest(o.out, "analyze-survival", kv);
  }
}

// ---------------------------------------------------------------------------
// eval

struct EvalOpts {
  std::string real, ckpt, out_dir;
  int n = 64;
  int k = 3;
  uint64_t seed = 0;
  int t_probe = 200;
  std::string schedule = "linear";
  int scos_power = 2;
};

void run_eval(const EvalOpts& o, const KV& kv) {
  auto start = std::chrono::steady_clock::now();
  auto real = read_dataset(o.real);
  DiT<float> model = DiT<float>::from_checkpoint(load_checkpoint(o.ckpt));
  auto sched = schedule_from_name(o.schedule, o.scos_power, model.cfg.horizon,
                                  kDefaultBeta1, kDefaultBetaT,
                                  kDefaultOffsetB);

  Rng rng(o.seed);
  std::vector<Image> generated;
  for (int i = 0; i < o.n; ++i) {
    int cond = i % kNumConditions;
    auto imgs = ddpm_sample(model, sched, condition_row(model, cond), rng, 1);
    generated.push_back(std::move(imgs[0]));
  }

  std::vector<FeatureVector> real_feats, gen_feats;
  for (const auto& s : real) real_feats.push_back(extract_features(s.image));
  for (const auto& img : generated) gen_feats.push_back(extract_features(img));

  MetricReport report;
  report.frechet_distance = frechet_feature_distance(real_feats, gen_feats);
  auto pr = knn_precision_recall(real_feats, gen_feats, o.k);
  report.precision = pr.first;
  report.recall = pr.second;

  int offset = (model.embed.size() > model.cfg.num_source_classes)
                   ? model.cfg.num_source_classes
                   : 0;
  std::function<Tensor<float>(const Tensor<float>&, int, int)> eps_fn =
      [&](const Tensor<float>& x, int t, int row) {
        return model.forward(x, t, row);
      };
  report.object_region_mse = object_region_error<float>(
      eps_fn, sched, real, std::min(o.t_probe, sched.T), o.seed, offset);
  report.trainable_param_fraction =
      model.adapters_wrapped()
          ? trainable_fraction(model, TrainMode::finetune_modulation)
          : 0.0;
  report.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();

  std::cout << metric_report_csv(report);
  if (!o.out_dir.empty()) {
    for (size_t i = 0; i < generated.size(); ++i) {
      char name[64];
      std::snprintf(name, sizeof(name), "/gen_%04zu.ppm", i);
      write_ppm(generated[i], o.out_dir + name);
    }
    std::ofstream os(o.out_dir + "/metrics.csv", std::ios::trunc);
    os << metric_report_csv(report);
    write_manifest(o.out_dir + "/metrics.csv", "eval", kv);
  }
}

}  // namespace

// ---------------------------------------------------------------------------

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"diffusion-transformer fine-tuning workbench"};
  app.require_subcommand(1);

  // gen-data ---------------------------------------------------------------
  GenDataOpts gd;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  ConfigBridge gd_cfg(gen);
  auto* gd_kind = gen->add_option("--kind", gd.kind, "source|target")
                      ->check(CLI::IsMember({"source", "target"}));
  auto* gd_count = gen->add_option("--count", gd.count, "sample count");
  auto* gd_seed = gen->add_option("--seed", gd.seed, "rng seed");
  gen->add_option("--out", gd.out, "output dataset path")->required();
  gen->add_option("--export-ppm", gd.export_ppm_dir,
                  "also write each image as a P6 pixmap into this directory");
  gd_cfg.bind("kind", gd_kind, [&](const std::string& v) { gd.kind = v; });
  gd_cfg.bind("count", gd_count,
              [&](const std::string& v) { gd.count = std::stoi(v); });
  gd_cfg.bind("seed", gd_seed,
              [&](const std::string& v) { gd.seed = std::stoull(v); });
  gen->callback([&]() {
    gd_cfg.apply();
    gd.seed = resolve_seed(gd.seed, gd_seed);
    KV kv{{"kind", gd.kind},
          {"count", std::to_string(gd.count)},
          {"seed", std::to_string(gd.seed)},
          {"out", gd.out}};
    print_resolved("gen-data", kv);
    run_gen_data(gd, kv);
  });

  // pretrain ---------------------------------------------------------------
  PretrainOpts pt;
  auto* pre = app.add_subcommand("pretrain",
                                 "train from scratch on a source dataset");
  ConfigBridge pt_cfg(pre);
  pre->add_option("--data", pt.data, "source dataset")->required();
  pre->add_option("--out", pt.out, "output checkpoint")->required();
  auto* pt_steps = pre->add_option("--steps", pt.steps);
  auto* pt_batch = pre->add_option("--batch", pt.batch);
  auto* pt_lr = pre->add_option("--lr", pt.lr, "learning rate");
  auto* pt_wd = pre->add_option("--wd", pt.wd, "weight decay");
  auto* pt_seed = pre->add_option("--seed", pt.seed);
  auto* pt_dim = pre->add_option("--dim", pt.dim);
  auto* pt_depth = pre->add_option("--depth", pt.depth);
  auto* pt_heads = pre->add_option("--heads", pt.heads);
  auto* pt_patch = pre->add_option("--patch", pt.patch);
  auto* pt_T = pre->add_option("--horizon", pt.horizon, "diffusion steps T");
  pt_cfg.bind("steps", pt_steps,
              [&](const std::string& v) { pt.steps = std::stol(v); });
  pt_cfg.bind("batch", pt_batch,
              [&](const std::string& v) { pt.batch = std::stoi(v); });
  pt_cfg.bind("lr", pt_lr,
              [&](const std::string& v) { pt.lr = std::stod(v); });
  pt_cfg.bind("wd", pt_wd, [&](const std::string& v) { pt.wd = std::stod(v); });
  pt_cfg.bind("seed", pt_seed,
              [&](const std::string& v) { pt.seed = std::stoull(v); });
  pt_cfg.bind("dim", pt_dim,
              [&](const std::string& v) { pt.dim = std::stoi(v); });
  pt_cfg.bind("depth", pt_depth,
              [&](const std::string& v) { pt.depth = std::stoi(v); });
  pt_cfg.bind("heads", pt_heads,
              [&](const std::string& v) { pt.heads = std::stoi(v); });
  pt_cfg.bind("patch", pt_patch,
              [&](const std::string& v) { pt.patch = std::stoi(v); });
  pt_cfg.bind("horizon", pt_T,
              [&](const std::string& v) { pt.horizon = std::stoi(v); });
  pre->callback([&]() {
    pt_cfg.apply();
    pt.seed = resolve_seed(pt.seed, pt_seed);
    KV kv{{"data", pt.data},         {"out", pt.out},
          {"steps", std::to_string(pt.steps)},
          {"batch", std::to_string(pt.batch)},
          {"lr", fmt_double(pt.lr)}, {"wd", fmt_double(pt.wd)},
          {"seed", std::to_string(pt.seed)},
          {"dim", std::to_string(pt.dim)},
          {"depth", std::to_string(pt.depth)},
          {"heads", std::to_string(pt.heads)},
          {"patch", std::to_string(pt.patch)},
          {"horizon", std::to_string(pt.horizon)}};
    print_resolved("pretrain", kv);
    run_pretrain(pt, kv);
  });

  // ssei -------------------------------------------------------------------
  SseiOpts ss;
  auto* ssei_cmd = app.add_subcommand(
      "ssei", "print nearest-source-class assignments as CSV");
  ssei_cmd->add_option("--source", ss.source, "source dataset")->required();
  ssei_cmd->add_option("--target", ss.target, "target dataset")->required();
  ssei_cmd->add_option("--out", ss.out, "also write the CSV here");
  ssei_cmd->callback([&]() {
    KV kv{{"source", ss.source}, {"target", ss.target}, {"out", ss.out}};
    print_resolved("ssei", kv);
    run_ssei(ss, kv);
  });

  // finetune ---------------------------------------------------------------
  FinetuneOpts ft;
  auto* fin = app.add_subcommand("finetune",
                                 "fine-tune a pretrained checkpoint");
  ConfigBridge ft_cfg(fin);
  auto* ft_mode =
      fin->add_option("--mode", ft.mode, "parameter-selection mode")
          ->check(CLI::IsMember({"pretrain_full", "finetune_full",
                                 "finetune_bias_only",
                                 "finetune_lowrank_additive",
                                 "finetune_modulation"}));
  auto* ft_steps = fin->add_option("--steps", ft.steps);
  auto* ft_lr = fin->add_option("--lr", ft.lr, "learning rate");
  auto* ft_tau = fin->add_option(
      "--tau", ft.tau, "progressive annealing span; 0 disables annealing");
  auto* ft_lambda =
      fin->add_option("--lambda", ft.lambda, "object-loss weight boost");
  auto* ft_sched = fin->add_option("--schedule", ft.schedule)
                       ->check(CLI::IsMember({"linear", "cos", "scos"}));
  auto* ft_power = fin->add_option("--scos-power", ft.scos_power);
  auto* ft_seed = fin->add_option("--seed", ft.seed);
  fin->add_option("--data", ft.data, "target dataset")->required();
  fin->add_option("--source-data", ft.source_data,
                  "source dataset (needed for --init ssei)");
  fin->add_option("--ckpt", ft.ckpt, "pretrained checkpoint")->required();
  auto* ft_init = fin->add_option("--init", ft.init, "random|ssei")
                      ->check(CLI::IsMember({"random", "ssei"}));
  fin->add_option("--out", ft.out, "output checkpoint")->required();
  auto* ft_rank = fin->add_option("--rank", ft.rank, "adapter rank");
  auto* ft_batch = fin->add_option("--batch", ft.batch);
  auto* ft_wd = fin->add_option("--wd", ft.wd, "weight decay");
  ft_cfg.bind("mode", ft_mode, [&](const std::string& v) { ft.mode = v; });
  ft_cfg.bind("steps", ft_steps,
              [&](const std::string& v) { ft.steps = std::stol(v); });
  ft_cfg.bind("lr", ft_lr,
              [&](const std::string& v) { ft.lr = std::stod(v); });
  ft_cfg.bind("tau", ft_tau,
              [&](const std::string& v) { ft.tau = std::stol(v); });
  ft_cfg.bind("lambda", ft_lambda,
              [&](const std::string& v) { ft.lambda = std::stod(v); });
  ft_cfg.bind("schedule", ft_sched,
              [&](const std::string& v) { ft.schedule = v; });
  ft_cfg.bind("scos_power", ft_power,
              [&](const std::string& v) { ft.scos_power = std::stoi(v); });
  ft_cfg.bind("seed", ft_seed,
              [&](const std::string& v) { ft.seed = std::stoull(v); });
  ft_cfg.bind("init", ft_init, [&](const std::string& v) { ft.init = v; });
  ft_cfg.bind("rank", ft_rank,
              [&](const std::string& v) { ft.rank = std::stoi(v); });
  ft_cfg.bind("batch", ft_batch,
              [&](const std::string& v) { ft.batch = std::stoi(v); });
  ft_cfg.bind("wd", ft_wd, [&](const std::string& v) { ft.wd = std::stod(v); });
  fin->callback([&]() {
    ft_cfg.apply();
    ft.seed = resolve_seed(ft.seed, ft_seed);
    KV kv{{"mode", ft.mode},
          {"steps", std::to_string(ft.steps)},
          {"lr", fmt_double(ft.lr)},
          {"tau", std::to_string(ft.tau)},
          {"lambda", fmt_double(ft.lambda)},
          {"schedule", ft.schedule},
          {"scos_power", std::to_string(ft.scos_power)},
          {"seed", std::to_string(ft.seed)},
          {"data", ft.data},
          {"source_data", ft.source_data},
          {"ckpt", ft.ckpt},
          {"init", ft.init},
          {"out", ft.out},
          {"rank", std::to_string(ft.rank)},
          {"batch", std::to_string(ft.batch)},
          {"wd", fmt_double(ft.wd)}};
    print_resolved("finetune", kv);
    run_finetune(ft, kv);
  });

  // sample -----------------------------------------------------------------
  SampleOpts sp;
  auto* sam = app.add_subcommand("sample", "draw samples from a checkpoint");
  sam->add_option("--ckpt", sp.ckpt)->required();
  sam->add_option("--out-dir", sp.out_dir)->required();
  sam->add_option("--n", sp.n);
  sam->add_option("--condition", sp.condition);
  auto* sp_seed = sam->add_option("--seed", sp.seed);
  sam->add_option("--schedule", sp.schedule)
      ->check(CLI::IsMember({"linear", "cos", "scos"}));
  sam->add_option("--scos-power", sp.scos_power);
  sam->callback([&]() {
    sp.seed = resolve_seed(sp.seed, sp_seed);
    KV kv{{"ckpt", sp.ckpt},
          {"out_dir", sp.out_dir},
          {"n", std::to_string(sp.n)},
          {"condition", std::to_string(sp.condition)},
          {"seed", std::to_string(sp.seed)},
          {"schedule", sp.schedule},
          {"scos_power", std::to_string(sp.scos_power)}};
    print_resolved("sample", kv);
    run_sample(sp, kv);
  });

  // analyze-schedule --------------------------------------------------------
  AnalyzeScheduleOpts as;
  auto* ana = app.add_subcommand("analyze-schedule",
                                 "emit per-step schedule CSV");
  ana->add_option("--schedule", as.schedule)
      ->check(CLI::IsMember({"linear", "cos", "scos"}));
  ana->add_option("--scos-power", as.scos_power);
  ana->add_option("--horizon", as.horizon);
  ana->add_option("--beta1", as.beta1);
  ana->add_option("--betaT", as.betaT);
  ana->add_option("--offset-b", as.offset);
  ana->add_option("--out", as.out, "CSV path; stdout when omitted");
  ana->callback([&]() {
    KV kv{{"schedule", as.schedule},
          {"scos_power", std::to_string(as.scos_power)},
          {"horizon", std::to_string(as.horizon)},
          {"beta1", fmt_double(as.beta1)},
          {"betaT", fmt_double(as.betaT)},
          {"offset_b", fmt_double(as.offset)},
          {"out", as.out}};
    print_resolved("analyze-schedule", kv);
    run_analyze_schedule(as, kv);
  });

  // analyze-survival ---------------------------------------------------------
  AnalyzeSurvivalOpts sv;
  auto* sur = app.add_subcommand("analyze-survival",
                                 "per-schedule, per-bucket survival CSV");
  sur->add_option("--data", sv.data)->required();
  sur->add_option("--schedules", sv.schedules,
                  "comma list: linear, cosN, scosN");
  sur->add_option("--threshold", sv.threshold);
  sur->add_option("--horizon", sv.horizon);
  sur->add_option("--out", sv.out, "CSV path; stdout when omitted");
  sur->callback([&]() {
    KV kv{{"data", sv.data},
          {"schedules", sv.schedules},
          {"threshold", fmt_double(sv.threshold)},
          {"horizon", std::to_string(sv.horizon)},
          {"out", sv.out}};
    print_resolved("analyze-survival", kv);
    run_analyze_survival(sv, kv);
  });

  // eval ---------------------------------------------------------------------
  EvalOpts ev;
  auto* evl = app.add_subcommand("eval", "metric report for a checkpoint");
  evl->add_option("--real", ev.real, "held-out dataset")->required();
  evl->add_option("--ckpt", ev.ckpt)->required();
  evl->add_option("--n", ev.n, "generated sample count");
  evl->add_option("--k", ev.k, "k-NN neighbourhood size");
  auto* ev_seed = evl->add_option("--seed", ev.seed);
  evl->add_option("--t-probe", ev.t_probe);
  evl->add_option("--schedule", ev.schedule)
      ->check(CLI::IsMember({"linear", "cos", "scos"}));
  evl->add_option("--scos-power", ev.scos_power);
  evl->add_option("--out-dir", ev.out_dir, "write samples + metrics here");
  evl->callback([&]() {
    ev.seed = resolve_seed(ev.seed, ev_seed);
    KV kv{{"real", ev.real},
          {"ckpt", ev.ckpt},
          {"n", std::to_string(ev.n)},
          {"k", std::to_string(ev.k)},
          {"seed", std::to_string(ev.seed)},
          {"t_probe", std::to_string(ev.t_probe)},
          {"schedule", ev.schedule},
          {"scos_power", std::to_string(ev.scos_power)},
          {"out_dir", ev.out_dir}};
    print_resolved("eval", kv);
    run_eval(ev, kv);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints usage, exit 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const ParamError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace dtfit
