#pragma once

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "adaptimpute/adaptimpute.hpp"

namespace adaptimpute::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kData = 3, kNumerical = 4 };

// ---------------------------------------------------------------------------
// Small helpers

inline std::uint64_t fnv1a_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 14];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

inline std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::optional<double> parse_number(const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  return std::nullopt;
}

/// "LO:HI" with either side optional, e.g. "1:5", "0:", ":10".
inline ClipBounds parse_clip(const std::string& spec) {
  if (spec.empty()) return {};
  const auto colon = spec.find(':');
  if (colon == std::string::npos) throw UsageError("--clip expects LO:HI, got '" + spec + "'");
  auto side = [&](const std::string& part) -> std::optional<double> {
    const std::string t = trim(part);
    if (t.empty()) return std::nullopt;
    const auto v = parse_number(t);
    if (!v) throw UsageError("--clip: '" + t + "' is not a number");
    return v;
  };
  return ClipBounds(side(spec.substr(0, colon)), side(spec.substr(colon + 1)));
}

/// A number, or the path of a file holding whitespace-separated thresholds.
inline std::variant<double, std::vector<double>> parse_tau(const std::string& spec) {
  if (const auto v = parse_number(trim(spec))) return *v;
  std::ifstream in(spec);
  if (!in) throw UsageError("--tau: '" + spec + "' is neither a number nor a readable file");
  std::vector<double> values;
  std::string tok;
  while (in >> tok) {
    const auto v = parse_number(tok);
    if (!v) throw DataError("--tau file: '" + tok + "' is not a number");
    values.push_back(*v);
  }
  if (values.empty()) throw DataError("--tau file is empty");
  return values;
}

inline std::optional<io::Format> parse_format(const std::string& s) {
  if (s == "auto") return std::nullopt;
  if (s == "mtx") return io::Format::matrix_market;
  if (s == "ratings") return io::Format::ratings;
  throw UsageError("unknown format '" + s + "'");
}

inline ObservedMatrix load_observed(const std::string& path, const std::string& format) {
  io::Triplets t = io::read_triplets(path, parse_format(format));
  return ObservedMatrix(t.rows, t.cols, std::move(t.entries));
}

inline void write_matrix_text(const std::string& path, const Eigen::MatrixXd& a) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) out << (j ? " " : "") << io::format_double(a(i, j));
    out << '\n';
  }
}

inline Eigen::MatrixXd read_matrix_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::vector<double> row;
    for (double v; ss >> v;) row.push_back(v);
    if (!ss.eof()) throw DataError("'" + path + "': malformed number");
    rows.push_back(std::move(row));
  }
  const Index cols = rows.empty() ? 0 : static_cast<Index>(rows[0].size());
  Eigen::MatrixXd a(static_cast<Index>(rows.size()), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<Index>(rows[i].size()) != cols) throw DataError("'" + path + "': ragged rows");
    for (Index j = 0; j < cols; ++j) a(static_cast<Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
  }
  return a;
}

inline std::vector<std::string> write_factor(const std::string& prefix, const LowRankFactor& z) {
  const std::vector<std::string> paths{prefix + ".U.txt", prefix + ".lambda.txt", prefix + ".V.txt"};
  write_matrix_text(paths[0], z.u());
  write_matrix_text(paths[1], z.values());
  write_matrix_text(paths[2], z.v());
  return paths;
}

inline LowRankFactor read_factor(const std::string& prefix) {
  Eigen::MatrixXd u = read_matrix_text(prefix + ".U.txt");
  Eigen::MatrixXd s = read_matrix_text(prefix + ".lambda.txt");
  Eigen::MatrixXd v = read_matrix_text(prefix + ".V.txt");
  if (s.rows() > 0 && s.cols() != 1) throw DataError("lambda file must hold one value per line");
  const Index r = s.rows();
  if (r == 0) {
    u.resize(u.rows(), 0);
    v.resize(v.rows(), 0);
  }
  if (u.cols() != r || v.cols() != r) throw DataError("factor files disagree on the rank");
  return LowRankFactor(std::move(u), s.col(0), std::move(v));
}

/// "row col [...]" lines, 1-based; '#' and '%' start comments.
inline std::vector<Cell> read_cells(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::vector<Cell> cells;
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == '%') continue;
    std::istringstream ss(t);
    long long i = 0, j = 0;
    if (!(ss >> i >> j) || i < 1 || j < 1) throw DataError("cells file: malformed line '" + t + "'");
    cells.push_back({static_cast<Index>(i - 1), static_cast<Index>(j - 1)});
  }
  return cells;
}

// ---------------------------------------------------------------------------
// Manifests and config files

/// key=value lines; re-readable through --config.
class Manifest {
 public:
  void add(const std::string& key, const std::string& value) { entries_.emplace_back(key, value); }

  /// Replaces an existing key in place, or appends it.
  void set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : entries_) {
      if (k == key) {
        v = value;
        return;
      }
    }
    add(key, value);
  }

  void add_options(const CLI::App& sub) {
    for (const CLI::Option* opt : sub.get_options()) {
      const std::string name = opt->get_single_name();
      if (name.empty() || name == "help" || name == "config" || name == "manifest") continue;
      std::string value;
      if (opt->get_expected_min() == 0) {
        bool on = false;
        if (opt->count() > 0) {
          on = opt->as<bool>();
        } else {
          const std::string def = opt->get_default_str();
          on = def == "true" || def == "1";
        }
        value = on ? "true" : "false";
      } else if (opt->count() > 0) {
        for (const auto& r : opt->reduced_results()) value += (value.empty() ? "" : ",") + r;
      } else {
        value = opt->get_default_str();
        if (value == "[]") value.clear();
      }
      if (!value.empty()) add(name, value);
    }
  }

  void add_digest(const std::string& key, const std::string& path) {
    add("digest." + key, "fnv1a64:" + hex(fnv1a_file(path)));
  }

  void write(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    write(out);
  }

  void write(std::ostream& out) const {
    for (const auto& [k, v] : entries_) out << k << '=' << v << '\n';
  }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

inline std::vector<std::pair<std::string, std::string>> read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config '" + path + "'");
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw UsageError("config '" + path + "' line " + std::to_string(lineno) + ": expected key=value");
    }
    out.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return out;
}

/**
 * Splices `--config FILE` into the argument list: each key=value becomes
 * `--key=value` right after the subcommand, unless the same option is also
 * given explicitly. Bookkeeping keys (command, version, dotted keys) are
 * skipped, so manifests can be fed back unchanged.
 */
inline std::vector<std::string> expand_config(std::vector<std::string> args) {
  if (args.size() < 2) return args;
  std::optional<std::string> config;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a == "--config") {
      if (i + 1 >= args.size()) throw UsageError("--config needs a file");
      config = args[++i];
    } else if (a.rfind("--config=", 0) == 0) {
      config = a.substr(9);
    } else {
      rest.push_back(a);
    }
  }
  if (!config) return args;

  std::set<std::string> explicit_keys;
  for (std::size_t i = 2; i < rest.size(); ++i) {
    if (rest[i].rfind("--", 0) == 0) explicit_keys.insert(rest[i].substr(2, rest[i].find('=') - 2));
  }
  std::vector<std::string> injected;
  for (const auto& [key, value] : read_key_values(*config)) {
    if (key == "command") {
      if (rest.size() > 1 && value != rest[1]) {
        throw UsageError("config was written for '" + value + "', not '" + rest[1] + "'");
      }
      continue;
    }
    if (key == "version" || key.find('.') != std::string::npos) continue;
    if (explicit_keys.count(key)) continue;
    injected.push_back("--" + key + "=" + value);
  }
  rest.insert(rest.begin() + 2, injected.begin(), injected.end());
  return rest;
}

/// Writes to a file, or stdout for "-".
class Output {
 public:
  explicit Output(const std::string& path) : path_(path) {
    if (path_ != "-") {
      file_.open(path_);
      if (!file_) throw DataError("cannot write '" + path_ + "'");
    }
  }
  std::ostream& stream() { return path_ == "-" ? std::cout : file_; }
  bool is_file() const { return path_ != "-"; }

 private:
  std::string path_;
  std::ofstream file_;
};

inline void finish_manifest(Manifest& manifest, const std::string& out, const std::string& manifest_path) {
  if (!manifest_path.empty()) {
    manifest.write(manifest_path);
  } else if (out != "-") {
    manifest.write(out + ".manifest");
  }
}

// ---------------------------------------------------------------------------
// complete

struct CompleteArgs {
  std::string input;
  std::string format = "auto";
  std::string method = "adaptive";
  int rank = 0;
  std::string tau;
  double epsilon = 1e-7;
  int max_iters = 500;
  std::string clip;
  bool clip_feedback = true;
  std::string sign_method;
  std::uint64_t seed = 0;
  std::string out;
  std::string predict;
  bool dense = false;
  bool diagnostics = false;
};

inline int cmd_complete(const CompleteArgs& a, const CLI::App& sub) {
  const ObservedMatrix m = load_observed(a.input, a.format);
  const ClipBounds clip = parse_clip(a.clip);
  const bool rank_given = sub.count("--rank") > 0;
  const bool tau_given = !a.tau.empty();

  LowRankFactor estimate;
  SolverReport report;
  Manifest manifest;
  manifest.add("command", "complete");
  manifest.add("version", kVersion);
  manifest.add_options(sub);

  if (a.method == "adaptive") {
    if (!rank_given) throw UsageError("--method adaptive needs --rank");
    if (tau_given) throw UsageError("--tau does not apply to --method adaptive");
    AdaptiveConfig cfg;
    cfg.rank = a.rank;
    cfg.epsilon = a.epsilon;
    cfg.max_iters = a.max_iters;
    cfg.clip = clip;
    cfg.clip_feedback = a.clip_feedback;
    cfg.seed = a.seed;
    cfg.diagnostics = a.diagnostics;
    if (!a.sign_method.empty()) cfg.sign_method = parse_sign_method(a.sign_method);
    AdaptiveRun run = run_adaptive(m, cfg);
    manifest.add("result.p_hat", io::format_double(run.initializer.p_hat));
    manifest.add("result.alpha_tilde", io::format_double(run.initializer.alpha_tilde));
    manifest.add("result.sign_method", to_string(run.initializer.sign_method_used));
    std::string signs;
    for (int s : run.initializer.signs) signs += (signs.empty() ? "" : ",") + std::to_string(s);
    manifest.add("result.signs", signs);
    estimate = std::move(run.factor);
    report = std::move(run.report);
  } else {
    if (!a.sign_method.empty()) throw UsageError("--sign-method only applies to --method adaptive");
    if (!tau_given) throw UsageError("--method " + a.method + " needs --tau");
    BaselineSpec spec;
    spec.variant = parse_baseline_variant(a.method);
    auto tau = parse_tau(a.tau);
    if (auto* v = std::get_if<std::vector<double>>(&tau)) {
      spec.tau = ThresholdVector(Eigen::Map<const Eigen::VectorXd>(v->data(), static_cast<Index>(v->size())));
    } else {
      spec.tau = std::get<double>(tau);
    }
    if (rank_given) spec.rank_cap = a.rank;
    BaselineConfig cfg;
    cfg.epsilon = a.epsilon;
    cfg.max_iters = a.max_iters;
    cfg.seed = a.seed;
    Completion c = run_baseline(m, spec, cfg);
    estimate = std::move(c.factor);
    report = std::move(c.report);
  }
  manifest.add("result.converged", report.converged ? "true" : "false");
  manifest.add("result.iterations", std::to_string(report.iterations_used));
  manifest.add("result.rank", std::to_string(estimate.rank()));
  manifest.add_digest("input", a.input);

  const auto paths = write_factor(a.out, estimate);
  manifest.add("output.U", paths[0]);
  manifest.add("output.lambda", paths[1]);
  manifest.add("output.V", paths[2]);
  {
    const std::string path = a.out + ".report.csv";
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    report.write_csv(out);
    manifest.add("output.report", path);
  }
  if (!a.predict.empty()) {
    const auto cells = read_cells(a.predict);
    check_cells(cells, estimate.rows(), estimate.cols());
    const std::string path = a.out + ".predictions.txt";
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    for (const auto& c : cells) {
      out << (c.row + 1) << ' ' << (c.col + 1) << ' ' << io::format_double(clip(estimate(c.row, c.col)))
          << '\n';
    }
    manifest.add_digest("predict", a.predict);
    manifest.add("output.predictions", path);
  }
  if (a.dense) {
    const std::string path = a.out + ".dense.mtx";
    io::write_dense_matrix_market(path, adaptimpute::clip(estimate.dense(), clip));
    manifest.add("output.dense", path);
  }
  manifest.write(a.out + ".manifest");
  std::cerr << report.method << ": " << (report.converged ? "converged" : "stopped") << " after "
            << report.iterations_used << " iterations, rank " << estimate.rank() << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  SimulationConfig cfg;
  std::string out;
};

inline int cmd_simulate(const SimulateArgs& a, const CLI::App& sub) {
  const SimulationTruth truth = generate(a.cfg);
  const std::string truth_path = a.out + ".truth.mtx";
  const std::string observed_path = a.out + ".observed.mtx";
  io::write_dense_matrix_market(truth_path, truth.M);
  io::write_matrix_market(observed_path, truth.observed);

  Manifest manifest;
  manifest.add("command", "simulate");
  manifest.add("version", kVersion);
  manifest.add_options(sub);
  manifest.add("result.observed", std::to_string(truth.observed.size()));
  manifest.add("output.truth", truth_path);
  manifest.add("output.observed", observed_path);
  manifest.add_digest("truth", truth_path);
  manifest.add_digest("observed", observed_path);
  manifest.write(a.out + ".manifest");
  return kOk;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
  std::string truth;
  std::string observed;
  std::string estimate;
  std::string test;
  std::string format = "auto";
  std::string clip;
  std::string method = "estimate";
  std::string out = "-";
  std::string manifest;
};

inline int cmd_evaluate(const EvaluateArgs& a, const CLI::App& sub) {
  if (a.truth.empty() && a.test.empty()) throw UsageError("evaluate needs --truth or --test");
  if (a.observed.empty()) throw UsageError("evaluate needs --observed");
  const LowRankFactor z = read_factor(a.estimate);
  const ObservedMatrix m = load_observed(a.observed, a.format);
  if (z.rows() != m.original_rows() || z.cols() != m.original_cols()) {
    throw DataError("estimate is " + std::to_string(z.rows()) + "x" + std::to_string(z.cols()) +
                    " but the observed matrix is " + std::to_string(m.original_rows()) + "x" +
                    std::to_string(m.original_cols()));
  }
  const ClipBounds clip = parse_clip(a.clip);
  Manifest manifest;
  manifest.add("command", "evaluate");
  manifest.add("version", kVersion);
  manifest.add_options(sub);
  manifest.add_digest("observed", a.observed);
  manifest.add_digest("estimate.lambda", a.estimate + ".lambda.txt");

  std::optional<ErrorTriple> err;
  if (!a.truth.empty()) {
    const Eigen::MatrixXd truth = io::read_dense_matrix_market(a.truth);
    err = errors(adaptimpute::clip(z.dense(), clip), truth, m.omega());
    manifest.add_digest("truth", a.truth);
  }
  std::optional<double> score;
  if (!a.test.empty()) {
    const io::Triplets test = io::read_triplets(a.test, parse_format(a.format));
    const auto train = m.original_entries();
    const auto [hi, lo] = rating_range(train);
    score = nmae(z, test.entries, hi, lo, clip);
    manifest.add_digest("test", a.test);
  }

  auto opt = [](const std::optional<double>& v) { return v ? io::format_double(*v) : std::string(); };
  Output out(a.out);
  out.stream() << kMetricsHeader << '\n'
               << a.method << ',' << m.original_rows() << ',' << m.original_cols() << ','
               << z.rank() << ",," << io::format_double(m.observed_fraction()) << ",1,"
               << (err ? opt(err->test) : "") << ',' << (err ? io::format_double(err->training) : "")
               << ',' << (err ? io::format_double(err->total) : "") << ',' << opt(score)
               << ",,,,,,0\n";
  if (out.is_file()) manifest.add("output.metrics", a.out);
  finish_manifest(manifest, a.out, a.manifest);
  return kOk;
}

// ---------------------------------------------------------------------------
// scree

struct ScreeArgs {
  std::string input;
  std::string format = "auto";
  int k = 0;
  std::uint64_t seed = 0;
  std::string out = "-";
  std::string manifest;
};

inline int cmd_scree(const ScreeArgs& a, const CLI::App& sub) {
  const ObservedMatrix m = load_observed(a.input, a.format);
  const ScreeResult s = scree(m, a.k > 0 ? std::optional<Index>(a.k) : std::nullopt, a.seed);
  Output out(a.out);
  out.stream() << "index,log_singular_value\n";
  for (std::size_t i = 0; i < s.singular_values.size(); ++i) {
    out.stream() << (i + 1) << ',' << io::format_double(std::log(s.singular_values[i])) << '\n';
  }
  if (s.suggested_rank) {
    std::cerr << "suggested rank: " << *s.suggested_rank << " (largest log-gap / median log-gap = "
              << s.confidence << ")\n";
  } else {
    std::cerr << "warning: " << s.warning << '\n';
  }
  Manifest manifest;
  manifest.add("command", "scree");
  manifest.add("version", kVersion);
  manifest.add_options(sub);
  manifest.add_digest("input", a.input);
  manifest.add("result.suggested_rank", s.suggested_rank ? std::to_string(*s.suggested_rank) : "");
  if (out.is_file()) manifest.add("output.scree", a.out);
  finish_manifest(manifest, a.out, a.manifest);
  return kOk;
}

// ---------------------------------------------------------------------------
// bench

struct BenchArgs {
  std::string preset;
  std::vector<std::string> methods;
  Index n = 170, d = 100, r = 5;
  std::vector<double> sigma;
  std::vector<double> p;
  int replicates = 20;
  std::uint64_t seed = 0;
  int threads = 1;
  bool timing = false;
  int tau_points = 20;
  double epsilon = 1e-7;
  int max_iters = 500;
  std::string out = "-";
  std::string records;
  std::string manifest;
  std::string movielens;
  int folds = 5;
  int rank = 3;
  std::string clip = "1:5";
};

struct Preset {
  std::vector<std::string> methods;
  Index n, d, r;
  std::vector<double> sigma, p;
  int replicates;
  int max_iters = 500;
};

inline Preset preset(const std::string& name) {
  const std::vector<std::string> all{"adaptive", "softimpute", "softimpute-rank", "als", "als-rank"};
  const std::vector<double> ps{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  if (name == "figure1-desk") return {all, 170, 100, 5, {1.0}, ps, 20};
  if (name == "figure3-desk") {
    // At p = 0.1 the solvers need a few thousand iterations to meet epsilon.
    return {all, 170, 100, 5, {0.1, 0.5, 1, 2, 5, 10, 15, 20, 30, 50}, {0.1}, 20, 5000};
  }
  if (name == "figure1-full") return {all, 1700, 1000, 5, {1.0}, ps, 100};
  if (name == "smoke") return {{"adaptive", "softimpute-rank"}, 40, 30, 2, {0.5}, {0.5}, 2};
  throw UsageError("unknown preset '" + name + "' (figure1-desk, figure3-desk, figure1-full, smoke)");
}

inline int bench_movielens(const BenchArgs& a, const CLI::App& sub) {
  GridOptions opts;
  opts.epsilon = a.epsilon;
  opts.max_iters = a.max_iters;
  opts.tau_grid_points = a.tau_points;
  const ClipBounds clip = parse_clip(a.clip);
  Manifest manifest;
  manifest.add("command", "bench");
  manifest.add("version", kVersion);
  manifest.add_options(sub);

  std::vector<FoldResult> results(static_cast<std::size_t>(a.folds));
  std::vector<RatingsFold> folds;
  for (int k = 1; k <= a.folds; ++k) {
    const std::string base = a.movielens + "/u" + std::to_string(k) + ".base";
    const std::string test = a.movielens + "/u" + std::to_string(k) + ".test";
    folds.push_back(make_fold(io::read_ratings(base), io::read_ratings(test)));
    manifest.add_digest("u" + std::to_string(k) + "_base", base);
    manifest.add_digest("u" + std::to_string(k) + "_test", test);
  }
  parallel_for(folds.size(), a.threads, [&](std::size_t k) {
    results[k] = evaluate_ratings_fold(folds[k], a.rank, clip, derive_seed(a.seed, k), opts);
  });
  Output out(a.out);
  out.stream() << "fold,adaptive_nmae,softimpute_nmae,softimpute_tau,adaptive_iters\n";
  for (std::size_t k = 0; k < results.size(); ++k) {
    const auto& r = results[k];
    out.stream() << (k + 1) << ',' << io::format_double(r.adaptive_nmae) << ','
                 << io::format_double(r.softimpute_nmae) << ',' << io::format_double(r.softimpute_tau)
                 << ',' << r.adaptive_iterations << '\n';
  }
  if (out.is_file()) manifest.add("output.folds", a.out);
  finish_manifest(manifest, a.out, a.manifest);
  return kOk;
}

inline int cmd_bench(BenchArgs a, const CLI::App& sub) {
  if (!a.movielens.empty()) return bench_movielens(a, sub);
  if (!a.preset.empty()) {
    const Preset pr = preset(a.preset);
    if (sub.count("--methods") == 0) a.methods = pr.methods;
    if (sub.count("--n") == 0) a.n = pr.n;
    if (sub.count("--d") == 0) a.d = pr.d;
    if (sub.count("--r") == 0) a.r = pr.r;
    if (sub.count("--sigma") == 0) a.sigma = pr.sigma;
    if (sub.count("--p") == 0) a.p = pr.p;
    if (sub.count("--replicates") == 0) a.replicates = pr.replicates;
    if (sub.count("--max-iters") == 0) a.max_iters = pr.max_iters;
  }
  if (a.methods.empty()) a.methods = {"adaptive", "softimpute-rank"};
  if (a.sigma.empty()) a.sigma = {1.0};
  if (a.p.empty()) a.p = {0.5};

  std::vector<MethodSpec> methods;
  for (const auto& name : a.methods) methods.push_back(parse_method(name));
  std::vector<SimulationConfig> configs;
  for (double s : a.sigma) {
    for (double p : a.p) {
      SimulationConfig c;
      c.n = a.n;
      c.d = a.d;
      c.r = a.r;
      c.sigma = s;
      c.p = p;
      configs.push_back(c);
    }
  }
  GridOptions opts;
  opts.threads = a.threads;
  opts.timing = a.timing;
  opts.epsilon = a.epsilon;
  opts.max_iters = a.max_iters;
  opts.tau_grid_points = a.tau_points;
  const GridResult grid = run_grid(methods, configs, a.replicates, a.seed, opts);

  Manifest manifest;
  manifest.add("command", "bench");
  manifest.add("version", kVersion);
  manifest.add_options(sub);
  // Effective values, so a rerun from this manifest does not fall back to defaults.
  auto join = [](const auto& xs) {
    std::string s;
    for (const auto& x : xs) {
      if (!s.empty()) s += ',';
      if constexpr (std::is_same_v<std::decay_t<decltype(x)>, std::string>) s += x;
      else s += io::format_double(x);
    }
    return s;
  };
  manifest.set("methods", join(a.methods));
  manifest.set("n", std::to_string(a.n));
  manifest.set("d", std::to_string(a.d));
  manifest.set("r", std::to_string(a.r));
  manifest.set("sigma", join(a.sigma));
  manifest.set("p", join(a.p));
  manifest.set("replicates", std::to_string(a.replicates));
  manifest.set("max-iters", std::to_string(a.max_iters));
  Output out(a.out);
  write_metrics_csv(out.stream(), grid.rows);
  if (out.is_file()) manifest.add("output.metrics", a.out);
  if (!a.records.empty()) {
    std::ofstream rec(a.records);
    if (!rec) throw DataError("cannot write '" + a.records + "'");
    write_records_csv(rec, grid, configs, a.timing);
    manifest.add("output.records", a.records);
  }
  finish_manifest(manifest, a.out, a.manifest);
  return kOk;
}

// ---------------------------------------------------------------------------
// entry point

inline int run(std::vector<std::string> args) {
  CLI::App app{"Low-rank matrix completion by adaptively thresholded SVD", "adaptimpute"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.add_option("--config", "key=value file of option defaults (placed after the subcommand)");

  CompleteArgs ca;
  auto* complete = app.add_subcommand("complete", "Complete a partially observed matrix");
  complete->add_option("input,--input", ca.input, "Observed entries (.mtx Matrix Market, else ratings)")->required();
  complete->add_option("--format", ca.format, "auto, mtx or ratings");
  complete->add_option("--method", ca.method,
                       "adaptive, softimpute, softimpute-rank, als, als-rank, generalized");
  complete->add_option("--rank", ca.rank, "Target rank (rank cap for baselines)")->check(CLI::PositiveNumber);
  complete->add_option("--tau", ca.tau, "Baseline threshold: a number, or a file of d values");
  complete->add_option("--epsilon", ca.epsilon, "Relative-change stopping tolerance");
  complete->add_option("--max-iters", ca.max_iters, "Iteration cap");
  complete->add_option("--clip", ca.clip, "Clip predictions into LO:HI (either side optional)");
  complete->add_flag("--clip-feedback,!--no-clip-feedback", ca.clip_feedback,
                     "Clip filled-in entries inside the iteration (adaptive)")
      ->default_str("true");
  complete->add_option("--sign-method", ca.sign_method, "exhaustive, svd-sign or regression");
  complete->add_option("--seed", ca.seed, "Random seed");
  complete->add_option("--out", ca.out, "Output prefix")->required();
  complete->add_option("--predict", ca.predict, "File of 1-based 'row col' cells to predict");
  complete->add_flag("--dense", ca.dense, "Also write the dense completed matrix");
  complete->add_flag("--diagnostics", ca.diagnostics, "Record convergence diagnostics (dense, small inputs)");

  SimulateArgs sa;
  auto* simulate = app.add_subcommand("simulate", "Draw a low-rank matrix and a noisy partial observation");
  simulate->add_option("--n", sa.cfg.n, "Rows");
  simulate->add_option("--d", sa.cfg.d, "Columns");
  simulate->add_option("--r", sa.cfg.r, "Rank");
  simulate->add_option("--sigma", sa.cfg.sigma, "Noise standard deviation");
  simulate->add_option("--p", sa.cfg.p, "Observation probability");
  simulate->add_option("--factor-range", sa.cfg.factor_range, "Half-width of the uniform factor entries");
  simulate->add_option("--seed", sa.cfg.seed, "Random seed");
  simulate->add_option("--out", sa.out, "Output prefix")->required();

  EvaluateArgs ea;
  auto* evaluate = app.add_subcommand("evaluate", "Score a factored estimate");
  evaluate->add_option("--estimate", ea.estimate, "Prefix of the U/lambda/V files")->required();
  evaluate->add_option("--observed", ea.observed, "Observed (training) entries")->required();
  evaluate->add_option("--truth", ea.truth, "Dense ground truth (Matrix Market array)");
  evaluate->add_option("--test", ea.test, "Held-out entries for NMAE");
  evaluate->add_option("--format", ea.format, "auto, mtx or ratings");
  evaluate->add_option("--clip", ea.clip, "Clip predictions into LO:HI");
  evaluate->add_option("--method", ea.method, "Label for the method column");
  evaluate->add_option("--out", ea.out, "CSV path ('-' for stdout)");
  evaluate->add_option("--manifest", ea.manifest, "Manifest path (default: OUT.manifest)");

  ScreeArgs sc;
  auto* scree_cmd = app.add_subcommand("scree", "Leading singular values and a gap-based rank suggestion");
  scree_cmd->add_option("input,--input", sc.input, "Observed entries")->required();
  scree_cmd->add_option("--format", sc.format, "auto, mtx or ratings");
  scree_cmd->add_option("--k", sc.k, "Number of singular values (default min(50, d))");
  scree_cmd->add_option("--seed", sc.seed, "Random seed");
  scree_cmd->add_option("--out", sc.out, "CSV path ('-' for stdout)");
  scree_cmd->add_option("--manifest", sc.manifest, "Manifest path (default: OUT.manifest)");

  BenchArgs ba;
  ba.threads = default_threads();
  auto* bench = app.add_subcommand("bench", "Run a simulation grid (or MovieLens folds)");
  bench->add_option("--preset", ba.preset, "figure1-desk, figure3-desk, figure1-full or smoke");
  bench->add_option("--methods", ba.methods, "Comma-separated methods")
      ->delimiter(',')
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  bench->add_option("--n", ba.n, "Rows");
  bench->add_option("--d", ba.d, "Columns");
  bench->add_option("--r", ba.r, "Rank");
  bench->add_option("--sigma", ba.sigma, "Comma-separated noise levels")
      ->delimiter(',')
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  bench->add_option("--p", ba.p, "Comma-separated observation probabilities")
      ->delimiter(',')
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  bench->add_option("--replicates", ba.replicates, "Replicates per configuration");
  bench->add_option("--seed", ba.seed, "Master seed");
  bench->add_option("--threads", ba.threads, "Worker threads (env ADAPTIMPUTE_THREADS)");
  bench->add_flag("--timing", ba.timing, "Fill the seconds column (output no longer reproducible)");
  bench->add_option("--tau-points", ba.tau_points, "Oracle threshold grid size");
  bench->add_option("--epsilon", ba.epsilon, "Relative-change stopping tolerance");
  bench->add_option("--max-iters", ba.max_iters, "Iteration cap");
  bench->add_option("--out", ba.out, "CSV path ('-' for stdout)");
  bench->add_option("--records", ba.records, "Per-replicate CSV path");
  bench->add_option("--manifest", ba.manifest, "Manifest path (default: OUT.manifest)");
  bench->add_option("--movielens", ba.movielens, "Directory with u1.base ... u5.test");
  bench->add_option("--folds", ba.folds, "Number of MovieLens folds");
  bench->add_option("--rank", ba.rank, "Rank for MovieLens folds");
  bench->add_option("--clip", ba.clip, "Rating bounds for MovieLens folds");

  try {
    args = expand_config(std::move(args));
    std::vector<char*> argv;
    for (auto& s : args) argv.push_back(s.data());
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }

  try {
    if (*complete) return cmd_complete(ca, *complete);
    if (*simulate) return cmd_simulate(sa, *simulate);
    if (*evaluate) return cmd_evaluate(ea, *evaluate);
    if (*scree_cmd) return cmd_scree(sc, *scree_cmd);
    if (*bench) return cmd_bench(ba, *bench);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}

}  // namespace adaptimpute::cli
