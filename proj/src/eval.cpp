#include "dtfit/eval.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace dtfit {

namespace {

using EMatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                            Eigen::RowMajor>;

EMatD to_eigen(const std::vector<double>& m, int n) {
  return Eigen::Map<const EMatD>(m.data(), n, n);
}

std::vector<double> from_eigen(const EMatD& m) {
  std::vector<double> out(m.size());
  Eigen::Map<EMatD>(out.data(), m.rows(), m.cols()) = m;
  return out;
}

EMatD spd_sqrt_eigen(const EMatD& mat) {
  Eigen::SelfAdjointEigenSolver<EMatD> es(mat);
  Eigen::VectorXd evals = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * evals.cwiseSqrt().asDiagonal() *
         es.eigenvectors().transpose();
}

struct Moments {
  Eigen::VectorXd mean;
  EMatD cov;  // sample covariance (n-1 denominator)
};

Moments fit_moments(const std::vector<FeatureVector>& set) {
  const int n = static_cast<int>(set.size());
  const int d = static_cast<int>(set[0].size());
  Moments m;
  m.mean = Eigen::VectorXd::Zero(d);
  for (const auto& f : set)
    m.mean += Eigen::Map<const Eigen::VectorXd>(f.data(), d);
  m.mean /= double(n);
  m.cov = EMatD::Zero(d, d);
  for (const auto& f : set) {
    Eigen::VectorXd c = Eigen::Map<const Eigen::VectorXd>(f.data(), d) - m.mean;
    m.cov += c * c.transpose();
  }
  m.cov /= double(std::max(1, n - 1));
  return m;
}

double sq_dist(const FeatureVector& a, const FeatureVector& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

}  // namespace

std::vector<double> spd_sqrt(const std::vector<double>& mat, int n) {
  return from_eigen(spd_sqrt_eigen(to_eigen(mat, n)));
}

std::vector<double> spd_product_sqrt(const std::vector<double>& s1,
                                     const std::vector<double>& s2, int n) {
  // (S1 S2)^(1/2) = A (A S2 A)^(1/2) A^{-1} with A = S1^(1/2)
  EMatD a = spd_sqrt_eigen(to_eigen(s1, n));
  EMatD inner = spd_sqrt_eigen(a * to_eigen(s2, n) * a);
  return from_eigen(a * inner * a.inverse());
}

double frechet_feature_distance(const std::vector<FeatureVector>& set_a,
                                const std::vector<FeatureVector>& set_b) {
  DTFIT_CHECK(set_a.size() >= 2 && set_b.size() >= 2, ParamError,
              "frechet: each set needs at least 2 samples");
  const int d = static_cast<int>(set_a[0].size());
  Moments ma = fit_moments(set_a);
  Moments mb = fit_moments(set_b);

  double mean_term = (ma.mean - mb.mean).squaredNorm();
  const bool full_rank_ok = static_cast<int>(set_a.size()) >= d + 1 &&
                            static_cast<int>(set_b.size()) >= d + 1;
  double trace_term;
  if (full_rank_ok) {
    // tr((S1 S2)^(1/2)) = tr((A S2 A)^(1/2)), A = S1^(1/2)
    EMatD a = spd_sqrt_eigen(ma.cov);
    Eigen::SelfAdjointEigenSolver<EMatD> es(a * mb.cov * a);
    double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    trace_term = ma.cov.trace() + mb.cov.trace() - 2.0 * tr_sqrt;
  } else {
    // diagonal-covariance fallback for small sets
    trace_term = 0.0;
    for (int i = 0; i < d; ++i) {
      double v1 = ma.cov(i, i), v2 = mb.cov(i, i);
      trace_term += v1 + v2 - 2.0 * std::sqrt(std::max(0.0, v1 * v2));
    }
  }
  return mean_term + trace_term;
}

std::pair<double, double> knn_precision_recall(
    const std::vector<FeatureVector>& real_feats,
    const std::vector<FeatureVector>& gen_feats, int k) {
  DTFIT_CHECK(k >= 1, ParamError, "knn: k must be >= 1");
  DTFIT_CHECK(static_cast<int>(real_feats.size()) >= k + 1 &&
                  static_cast<int>(gen_feats.size()) >= k + 1,
              ParamError, "knn: both sets need at least k+1 samples");

  // squared radius of each point's k-th nearest neighbour within its own set
  auto radii = [&](const std::vector<FeatureVector>& set) {
    std::vector<double> out(set.size());
    std::vector<double> d2(set.size());
    for (size_t i = 0; i < set.size(); ++i) {
      for (size_t j = 0; j < set.size(); ++j) d2[j] = sq_dist(set[i], set[j]);
      d2[i] = std::numeric_limits<double>::infinity();  // exclude self
      std::nth_element(d2.begin(), d2.begin() + (k - 1), d2.end());
      out[i] = d2[k - 1];
    }
    return out;
  };
  auto covered = [&](const std::vector<FeatureVector>& probes,
                     const std::vector<FeatureVector>& manifold,
                     const std::vector<double>& rad2) {
    long hits = 0;
    for (const auto& p : probes) {
      for (size_t i = 0; i < manifold.size(); ++i) {
        if (sq_dist(p, manifold[i]) <= rad2[i]) {
          ++hits;
          break;
        }
      }
    }
    return double(hits) / double(probes.size());
  };

  auto real_rad = radii(real_feats);
  auto gen_rad = radii(gen_feats);
  double precision = covered(gen_feats, real_feats, real_rad);
  double recall = covered(real_feats, gen_feats, gen_rad);
  return {precision, recall};
}

std::vector<SurvivalRow> survival_report(
    const std::vector<SceneSample>& dataset,
    const std::vector<const NoiseSchedule*>& schedules, double threshold) {
  bool any = false;
  for (const auto& s : dataset) any = any || !s.boxes.empty();
  DTFIT_CHECK(any, ContractError, "survival_report: dataset carries no boxes");

  const std::vector<std::pair<int, int>> buckets = {{3, 4}, {5, 6}, {7, 8}};
  std::vector<SurvivalRow> rows;
  for (const NoiseSchedule* sched : schedules) {
    std::vector<double> acc(buckets.size(), 0.0);
    std::vector<long> count(buckets.size(), 0);
    for (const auto& s : dataset)
      for (const auto& b : s.boxes) {
        int sz = std::max(b.w, b.h);
        for (size_t bi = 0; bi < buckets.size(); ++bi) {
          if (sz >= buckets[bi].first && sz <= buckets[bi].second) {
            acc[bi] += region_survival_time(s.image, b, *sched, threshold);
            ++count[bi];
          }
        }
      }
    for (size_t bi = 0; bi < buckets.size(); ++bi) {
      SurvivalRow row;
      row.schedule_name = sched->name();
      row.bucket = std::to_string(buckets[bi].first) + "-" +
                   std::to_string(buckets[bi].second);
      row.count = count[bi];
      row.mean_survival = count[bi]
                              ? acc[bi] / double(count[bi])
                              : std::numeric_limits<double>::quiet_NaN();
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::string survival_csv(const std::vector<SurvivalRow>& rows) {
  std::ostringstream os;
  os << "schedule,bucket,count,mean_survival\n";
  for (const auto& r : rows) {
    os << r.schedule_name << "," << r.bucket << "," << r.count << ",";
    if (std::isnan(r.mean_survival))
      os << "NA";
    else
      os << r.mean_survival;
    os << "\n";
  }
  return os.str();
}

std::string metric_report_csv(const MetricReport& r) {
  std::ostringstream os;
  os << "frechet_distance,precision,recall,object_region_mse,"
        "trainable_param_fraction,runtime_seconds\n";
  os << r.frechet_distance << "," << r.precision << "," << r.recall << ","
     << r.object_region_mse << "," << r.trainable_param_fraction << ","
     << r.runtime_seconds << "\n";
  return os.str();
}

}  // namespace dtfit
