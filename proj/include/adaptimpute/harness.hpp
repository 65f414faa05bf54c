#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "adaptimpute/adaptive_impute.hpp"
#include "adaptimpute/error.hpp"
#include "adaptimpute/low_rank.hpp"
#include "adaptimpute/matrix_io.hpp"
#include "adaptimpute/observed_matrix.hpp"
#include "adaptimpute/rng.hpp"
#include "adaptimpute/softimpute.hpp"

namespace adaptimpute {

struct SimulationConfig {
  Index n = 170;
  Index d = 100;
  Index r = 5;
  double sigma = 1.0;
  double p = 0.5;
  /// Factors are i.i.d. uniform[-factor_range, factor_range].
  double factor_range = 5.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (n < 1 || d < 1) throw UsageError("simulation: n and d must be positive");
    if (r < 1 || r > std::min(n, d)) throw UsageError("simulation: need 1 <= r <= min(n, d)");
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw UsageError("simulation: sigma must be >= 0");
    if (!(p > 0.0 && p <= 1.0)) throw UsageError("simulation: p must lie in (0, 1]");
    if (!(factor_range > 0.0)) throw UsageError("simulation: factor range must be positive");
  }
};

/// Ground truth M = A B^T and its noisy partial observation.
struct SimulationTruth {
  Eigen::MatrixXd M;
  ObservedMatrix observed;
  std::vector<Cell> omega;
};

inline constexpr int kMaxMaskDraws = 5;

/**
 * Draws A, B, the noise and the Bernoulli(p) mask from one seeded stream.
 * Noise is drawn for every cell so the same seed gives the same noise at
 * every p. A draw with no observed cell is retried up to five times.
 */
inline SimulationTruth generate(const SimulationConfig& cfg) {
  cfg.validate();
  Rng rng(mix_seed(cfg.seed));
  std::uniform_real_distribution<double> factor(-cfg.factor_range, cfg.factor_range);
  Eigen::MatrixXd a(cfg.n, cfg.r), b(cfg.d, cfg.r);
  for (Index j = 0; j < cfg.r; ++j)
    for (Index i = 0; i < cfg.n; ++i) a(i, j) = factor(rng);
  for (Index j = 0; j < cfg.r; ++j)
    for (Index i = 0; i < cfg.d; ++i) b(i, j) = factor(rng);
  Eigen::MatrixXd m = a * b.transpose();

  std::normal_distribution<double> noise(0.0, 1.0);
  Eigen::MatrixXd eps(cfg.n, cfg.d);
  for (Index j = 0; j < cfg.d; ++j)
    for (Index i = 0; i < cfg.n; ++i) eps(i, j) = cfg.sigma * noise(rng);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int attempt = 0; attempt < kMaxMaskDraws; ++attempt) {
    std::vector<Entry> entries;
    std::vector<Cell> omega;
    for (Index j = 0; j < cfg.d; ++j) {
      for (Index i = 0; i < cfg.n; ++i) {
        if (unit(rng) < cfg.p) {
          entries.push_back({i, j, m(i, j) + eps(i, j)});
          omega.push_back({i, j});
        }
      }
    }
    if (!entries.empty()) {
      return SimulationTruth{std::move(m), ObservedMatrix(cfg.n, cfg.d, std::move(entries)),
                             std::move(omega)};
    }
  }
  throw DataError("simulation: every mask draw was empty");
}

struct ErrorTriple {
  /// Absent when every cell is observed.
  std::optional<double> test;
  double training = 0.0;
  double total = 0.0;
};

/// Test / training / total squared-error ratios of an estimate against M.
inline ErrorTriple errors(const Eigen::MatrixXd& estimate, const Eigen::MatrixXd& truth,
                          std::span<const Cell> omega) {
  if (estimate.rows() != truth.rows() || estimate.cols() != truth.cols()) {
    throw UsageError("errors: estimate and truth differ in shape");
  }
  check_cells(omega, truth.rows(), truth.cols());
  const Eigen::MatrixXd diff = estimate - truth;
  double on_num = 0.0, on_den = 0.0;
  for (const auto& c : omega) {
    on_num += diff(c.row, c.col) * diff(c.row, c.col);
    on_den += truth(c.row, c.col) * truth(c.row, c.col);
  }
  const double all_num = diff.squaredNorm();
  const double all_den = truth.squaredNorm();
  if (!(all_den > 0.0) || !(on_den > 0.0)) throw DataError("errors: ground truth is zero");
  ErrorTriple out;
  out.training = on_num / on_den;
  out.total = all_num / all_den;
  const auto cells = static_cast<std::size_t>(truth.rows() * truth.cols());
  if (omega.size() < cells) {
    const double off_num = std::max(0.0, all_num - on_num);
    const double off_den = std::max(0.0, all_den - on_den);
    if (!(off_den > 0.0)) throw DataError("errors: ground truth vanishes off the observed set");
    out.test = off_num / off_den;
  }
  return out;
}

inline ErrorTriple errors(const Eigen::MatrixXd& estimate, const SimulationTruth& truth) {
  return errors(estimate, truth.M, truth.omega);
}

inline ErrorTriple errors(const LowRankFactor& estimate, const SimulationTruth& truth) {
  return errors(estimate.dense(), truth.M, truth.omega);
}

struct Efficiency {
  std::optional<double> test;
  std::optional<double> training;
  std::optional<double> total;
};

/// base error / other error per type; absent where a ratio is undefined.
inline Efficiency relative_efficiency(const ErrorTriple& base, const ErrorTriple& other) {
  auto ratio = [](std::optional<double> a, std::optional<double> b) -> std::optional<double> {
    if (!a || !b || !(*b > 0.0)) return std::nullopt;
    return *a / *b;
  };
  return {ratio(base.test, other.test), ratio(base.training, other.training),
          ratio(base.total, other.total)};
}

/// (1 / ((m_max - m_min) |test|)) sum |prediction - value| over the test set.
inline double nmae(const std::function<double(Index, Index)>& predict,
                   std::span<const Entry> test_set, double m_max, double m_min) {
  if (test_set.empty()) throw UsageError("nmae: empty test set");
  if (!(m_max > m_min)) throw UsageError("nmae: need m_max > m_min");
  double acc = 0.0;
  for (const auto& e : test_set) acc += std::abs(predict(e.row, e.col) - e.value);
  return acc / ((m_max - m_min) * static_cast<double>(test_set.size()));
}

inline double nmae(const Eigen::MatrixXd& estimate, std::span<const Entry> test_set, double m_max,
                   double m_min) {
  for (const auto& e : test_set) {
    if (e.row < 0 || e.row >= estimate.rows() || e.col < 0 || e.col >= estimate.cols()) {
      throw UsageError("nmae: test index out of range");
    }
  }
  return nmae([&](Index i, Index j) { return estimate(i, j); }, test_set, m_max, m_min);
}

inline double nmae(const LowRankFactor& estimate, std::span<const Entry> test_set, double m_max,
                   double m_min, const ClipBounds& clip = {}) {
  for (const auto& e : test_set) {
    if (e.row < 0 || e.row >= estimate.rows() || e.col < 0 || e.col >= estimate.cols()) {
      throw UsageError("nmae: test index out of range");
    }
  }
  return nmae([&](Index i, Index j) { return clip(estimate(i, j)); }, test_set, m_max, m_min);
}

// ---------------------------------------------------------------------------
// Experiment grids

/// A method in a grid: AdaptiveImpute, or a baseline tuned against the truth.
struct MethodSpec {
  std::string name = "adaptive";

  bool adaptive() const { return name == "adaptive"; }
  BaselineVariant variant() const { return parse_baseline_variant(name); }
};

inline MethodSpec parse_method(const std::string& name) {
  MethodSpec m{name};
  if (!m.adaptive()) (void)m.variant();
  return m;
}

struct GridOptions {
  int threads = 1;
  /// Record wall time (makes the CSV non-reproducible).
  bool timing = false;
  double epsilon = 1e-7;
  int max_iters = 500;
  int tau_grid_points = 20;
};

/// One method on one replicate of one configuration.
struct ReplicateRecord {
  std::string method;
  std::size_t config = 0;
  int replicate = 0;
  std::optional<ErrorTriple> errors;
  int iterations = 0;
  double seconds = 0.0;
  /// Oracle threshold for tuned baselines.
  std::optional<double> tau;
  std::string failure;
};

struct MetricsRow {
  std::string method;
  SimulationConfig config;
  int replicates = 0;
  int failures = 0;
  std::optional<double> test, training, total;
  std::optional<double> test_se, training_se, total_se;
  std::optional<double> nmae;
  double iterations = 0.0;
  std::optional<double> seconds;
};

struct GridResult {
  std::vector<MetricsRow> rows;
  std::vector<ReplicateRecord> records;
};

/// Worker count from ADAPTIMPUTE_THREADS, else the hardware concurrency.
inline int default_threads() {
  if (const char* env = std::getenv("ADAPTIMPUTE_THREADS")) {
    const int t = std::atoi(env);
    if (t > 0) return t;
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

/// Runs `task(i)` for i in [0, count) on `threads` workers.
inline void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& task) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, count); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          task(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

/// Runs one method on one simulated instance.
inline ReplicateRecord run_method(const MethodSpec& method, const SimulationTruth& truth,
                                  const SimulationConfig& cfg, std::uint64_t seed,
                                  const GridOptions& opts) {
  ReplicateRecord rec;
  rec.method = method.name;
  const auto start = std::chrono::steady_clock::now();
  try {
    LowRankFactor estimate;
    if (method.adaptive()) {
      AdaptiveConfig ac;
      ac.rank = cfg.r;
      ac.epsilon = opts.epsilon;
      ac.max_iters = opts.max_iters;
      ac.seed = seed;
      AdaptiveRun run = run_adaptive(truth.observed, ac);
      rec.iterations = run.report.iterations_used;
      estimate = std::move(run.factor);
    } else {
      BaselineSpec family;
      family.variant = method.variant();
      if (family.rank_restricted()) family.rank_cap = cfg.r;
      BaselineConfig bc;
      bc.epsilon = opts.epsilon;
      bc.max_iters = opts.max_iters;
      bc.seed = seed;
      const auto grid = default_tau_grid(truth.observed, opts.tau_grid_points, 1e-3, 1.0, seed);
      OracleResult tuned = oracle_tune(truth.M, truth.observed, family, grid, bc);
      rec.iterations = tuned.best.report.iterations_used;
      rec.tau = tuned.best_tau;
      estimate = std::move(tuned.best.factor);
    }
    rec.errors = errors(estimate, truth);
  } catch (const std::exception& e) {
    rec.failure = e.what();
  }
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

namespace detail {

struct MeanSe {
  std::optional<double> mean, se;
};

inline MeanSe mean_se(const std::vector<double>& xs) {
  if (xs.empty()) return {};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  MeanSe out;
  out.mean = mean;
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    out.se = std::sqrt(ss / static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()));
  }
  return out;
}

}  // namespace detail

/**
 * Every method on `replicates` instances of every configuration. Instance
 * (c, k) is drawn with seed derive_seed(master, c, k) and shared by all
 * methods, so rows are comparable cell by cell. Cells run concurrently but
 * results do not depend on the thread count.
 */
inline GridResult run_grid(const std::vector<MethodSpec>& methods,
                           const std::vector<SimulationConfig>& configs, int replicates,
                           std::uint64_t master_seed, const GridOptions& opts = {}) {
  if (methods.empty() || configs.empty()) throw UsageError("grid: need at least one method and config");
  if (replicates < 1) throw UsageError("grid: replicates must be positive");
  for (const auto& c : configs) c.validate();

  const std::size_t cells = configs.size() * static_cast<std::size_t>(replicates);
  std::vector<ReplicateRecord> records(cells * methods.size());
  parallel_for(cells, opts.threads, [&](std::size_t cell) {
    const std::size_t c = cell / static_cast<std::size_t>(replicates);
    const int k = static_cast<int>(cell % static_cast<std::size_t>(replicates));
    SimulationConfig cfg = configs[c];
    cfg.seed = derive_seed(master_seed, c, static_cast<std::uint64_t>(k));
    std::optional<SimulationTruth> truth;
    std::string failure;
    try {
      truth = generate(cfg);
    } catch (const std::exception& e) {
      failure = e.what();
    }
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
      ReplicateRecord rec;
      if (truth) {
        rec = run_method(methods[mi], *truth, cfg, derive_seed(cfg.seed, 7, mi), opts);
      } else {
        rec.method = methods[mi].name;
        rec.failure = failure;
      }
      rec.config = c;
      rec.replicate = k;
      records[cell * methods.size() + mi] = std::move(rec);
    }
  });

  GridResult out;
  for (std::size_t c = 0; c < configs.size(); ++c) {
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
      MetricsRow row;
      row.method = methods[mi].name;
      row.config = configs[c];
      row.replicates = replicates;
      std::vector<double> test, training, total;
      bool test_missing = false;
      double iters = 0.0, secs = 0.0;
      int ok = 0;
      for (int k = 0; k < replicates; ++k) {
        const auto& rec = records[(c * static_cast<std::size_t>(replicates) +
                                   static_cast<std::size_t>(k)) * methods.size() + mi];
        if (!rec.errors) {
          ++row.failures;
          continue;
        }
        ++ok;
        if (rec.errors->test) test.push_back(*rec.errors->test); else test_missing = true;
        training.push_back(rec.errors->training);
        total.push_back(rec.errors->total);
        iters += rec.iterations;
        secs += rec.seconds;
      }
      if (!test_missing) {
        const auto t = detail::mean_se(test);
        row.test = t.mean;
        row.test_se = t.se;
      }
      const auto tr = detail::mean_se(training);
      row.training = tr.mean;
      row.training_se = tr.se;
      const auto to = detail::mean_se(total);
      row.total = to.mean;
      row.total_se = to.se;
      if (ok > 0) row.iterations = iters / ok;
      if (opts.timing && ok > 0) row.seconds = secs / ok;
      out.rows.push_back(std::move(row));
    }
  }
  out.records = std::move(records);
  return out;
}

inline const char* kMetricsHeader =
    "method,n,d,r,sigma,p,replicates,test,training,total,nmae,iters,seconds,"
    "test_se,training_se,total_se,failures";

inline void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
  auto opt = [](const std::optional<double>& v) { return v ? io::format_double(*v) : std::string(); };
  out << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    out << r.method << ',' << r.config.n << ',' << r.config.d << ',' << r.config.r << ','
        << io::format_double(r.config.sigma) << ',' << io::format_double(r.config.p) << ','
        << r.replicates << ',' << opt(r.test) << ',' << opt(r.training) << ',' << opt(r.total)
        << ',' << opt(r.nmae) << ',' << io::format_double(r.iterations) << ',' << opt(r.seconds)
        << ',' << opt(r.test_se) << ',' << opt(r.training_se) << ',' << opt(r.total_se) << ','
        << r.failures << '\n';
  }
}

/// Per-replicate table (one line per method, config and replicate).
inline void write_records_csv(std::ostream& out, const GridResult& grid,
                              const std::vector<SimulationConfig>& configs, bool timing = false) {
  auto opt = [](const std::optional<double>& v) { return v ? io::format_double(*v) : std::string(); };
  out << "method,n,d,r,sigma,p,replicate,test,training,total,iters,tau,seconds,failure\n";
  for (const auto& rec : grid.records) {
    const auto& c = configs.at(rec.config);
    out << rec.method << ',' << c.n << ',' << c.d << ',' << c.r << ',' << io::format_double(c.sigma)
        << ',' << io::format_double(c.p) << ',' << rec.replicate << ','
        << (rec.errors ? opt(rec.errors->test) : "") << ','
        << (rec.errors ? io::format_double(rec.errors->training) : "") << ','
        << (rec.errors ? io::format_double(rec.errors->total) : "") << ',' << rec.iterations << ','
        << opt(rec.tau) << ',' << (timing ? io::format_double(rec.seconds) : "") << ','
        << '"' << rec.failure << '"' << '\n';
  }
}

// ---------------------------------------------------------------------------
// Ratings folds

struct RatingsFold {
  Index rows = 0;
  Index cols = 0;
  std::vector<Entry> train;
  std::vector<Entry> test;
};

/// Shapes both halves to the larger of their extents.
inline RatingsFold make_fold(const io::Triplets& train, const io::Triplets& test) {
  RatingsFold f;
  f.rows = std::max(train.rows, test.rows);
  f.cols = std::max(train.cols, test.cols);
  f.train = train.entries;
  f.test = test.entries;
  if (f.test.empty()) throw DataError("ratings fold: empty test set");
  return f;
}

/// Rating range from the observed training values.
inline std::pair<double, double> rating_range(std::span<const Entry> train) {
  if (train.empty()) throw DataError("ratings fold: empty training set");
  double lo = train[0].value, hi = train[0].value;
  for (const auto& e : train) {
    lo = std::min(lo, e.value);
    hi = std::max(hi, e.value);
  }
  return {hi, lo};
}

struct FoldResult {
  double adaptive_nmae = 0.0;
  int adaptive_iterations = 0;
  double softimpute_nmae = 0.0;
  double softimpute_tau = 0.0;
  std::vector<double> softimpute_scores;
};

/// AdaptiveImpute vs. softImpute with its threshold tuned on the test NMAE.
inline FoldResult evaluate_ratings_fold(const RatingsFold& fold, Index rank, const ClipBounds& clip,
                                        std::uint64_t seed, const GridOptions& opts = {}) {
  const ObservedMatrix m(fold.rows, fold.cols, fold.train);
  const auto [m_max, m_min] = rating_range(fold.train);
  FoldResult out;

  AdaptiveConfig ac;
  ac.rank = rank;
  ac.clip = clip;
  ac.epsilon = opts.epsilon;
  ac.max_iters = opts.max_iters;
  ac.seed = seed;
  const AdaptiveRun run = run_adaptive(m, ac);
  out.adaptive_nmae = nmae(run.factor, fold.test, m_max, m_min, clip);
  out.adaptive_iterations = run.report.iterations_used;

  BaselineSpec family;
  family.variant = BaselineVariant::softimpute;
  BaselineConfig bc;
  bc.epsilon = opts.epsilon;
  bc.max_iters = opts.max_iters;
  bc.seed = seed;
  const auto grid = default_tau_grid(m, opts.tau_grid_points, 1e-3, 1.0, seed);
  const OracleResult tuned = oracle_tune(
      m, family, grid,
      [&](const LowRankFactor& z) { return nmae(z, fold.test, m_max, m_min, clip); }, bc);
  out.softimpute_nmae = tuned.scores[tuned.best_index];
  out.softimpute_tau = tuned.best_tau;
  out.softimpute_scores = tuned.scores;
  return out;
}

}  // namespace adaptimpute
