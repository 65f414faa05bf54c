#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "adaptimpute/adaptimpute.hpp"

namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("adaptimpute_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  /// Runs the binary inside the scratch directory; returns its exit status.
  int run(const std::string& args) const {
    const std::string cmd = "cd '" + dir_.string() + "' && '" ADAPTIMPUTE_CLI "' " + args + " > stdout.txt 2> stderr.txt";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string read(const std::string& name) const {
    std::ifstream in(dir_ / name);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  void write(const std::string& name, const std::string& text) const { std::ofstream(dir_ / name) << text; }

  fs::path dir_;
};

/// Value of `column` in the first data row of a CSV.
double csv_value(const std::string& csv, const std::string& column) {
  std::istringstream in(csv);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  std::istringstream hs(header), rs(row);
  std::string h, v;
  while (std::getline(hs, h, ',')) {
    std::getline(rs, v, ',');
    if (h == column) return std::stod(v);
  }
  throw std::runtime_error("missing column " + column);
}

}  // namespace

TEST_F(Cli, SimulateCompleteEvaluate) {
  ASSERT_EQ(run("simulate --n 20 --d 10 --r 2 --sigma 0 --p 1 --seed 7 --out sim"), 0);
  ASSERT_EQ(run("complete sim.observed.mtx --rank 2 --out est"), 0);
  ASSERT_EQ(run("evaluate --estimate est --observed sim.observed.mtx --truth sim.truth.mtx --out eval.csv"), 0);
  EXPECT_LT(csv_value(read("eval.csv"), "total"), 1e-8);
  EXPECT_NE(read("est.manifest").find("digest.input=fnv1a64:"), std::string::npos);
}

TEST_F(Cli, ManifestReproducesRun) {
  ASSERT_EQ(run("simulate --n 30 --d 15 --r 2 --sigma 0.5 --p 0.6 --seed 3 --out sim"), 0);
  ASSERT_EQ(run("complete sim.observed.mtx --rank 2 --seed 5 --out a"), 0);
  ASSERT_EQ(run("complete --config a.manifest --out b"), 0);
  EXPECT_EQ(read("a.lambda.txt"), read("b.lambda.txt"));
  EXPECT_EQ(read("a.U.txt"), read("b.U.txt"));
  EXPECT_FALSE(read("a.lambda.txt").empty());
}

TEST_F(Cli, ExitCodes) {
  ASSERT_EQ(run("simulate --n 20 --d 10 --r 2 --seed 1 --out sim"), 0);
  EXPECT_EQ(run("complete sim.observed.mtx --out x"), 2);
  EXPECT_EQ(run("complete sim.observed.mtx --rank 0 --out x"), 2);
  EXPECT_EQ(run("complete sim.observed.mtx --method generalized --out x"), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  write("bad.mtx", "not a matrix\n");
  EXPECT_EQ(run("complete bad.mtx --rank 1 --out x"), 3);
  EXPECT_EQ(run("complete missing.mtx --rank 1 --out x"), 3);
  EXPECT_NE(read("stderr.txt").find("error"), std::string::npos);
}

TEST_F(Cli, GeneralizedWithThresholdFile) {
  ASSERT_EQ(run("simulate --n 20 --d 10 --r 2 --sigma 0 --p 1 --seed 7 --out sim"), 0);
  std::string tau;
  for (int i = 10; i >= 1; --i) tau += std::to_string(i / 10.0) + "\n";
  write("tau.txt", tau);
  ASSERT_EQ(run("complete sim.observed.mtx --method generalized --tau tau.txt --out g"), 0);
  EXPECT_FALSE(read("g.lambda.txt").empty());
  write("short.txt", "0.5\n");
  EXPECT_EQ(run("complete sim.observed.mtx --method generalized --tau short.txt --out g"), 2);
}

TEST_F(Cli, Scree) {
  ASSERT_EQ(run("simulate --n 20 --d 10 --r 2 --sigma 0 --p 1 --seed 7 --out sim"), 0);
  ASSERT_EQ(run("scree sim.observed.mtx --k 5 --out s.csv"), 0);
  const std::string csv = read("s.csv");
  EXPECT_EQ(csv.rfind("index,log_singular_value\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
  EXPECT_NE(read("stderr.txt").find("suggested rank: 2"), std::string::npos);
  EXPECT_EQ(run("scree sim.observed.mtx --k 11 --out s.csv"), 2);
}

TEST_F(Cli, CompletesTinyMatrixMarketFile) {
  // Rank one: row i, column j holds (i + 1) * (j + 1).
  write("tiny.mtx",
        "%%MatrixMarket matrix coordinate real general\n3 3 7\n"
        "1 1 1\n1 2 2\n1 3 3\n2 1 2\n2 2 4\n3 1 3\n3 3 9\n");
  write("cells.txt", "2 3\n3 2\n");
  ASSERT_EQ(run("complete tiny.mtx --rank 1 --epsilon 1e-16 --max-iters 20000 --predict cells.txt --out t"), 0);
  std::istringstream in(read("t.predictions.txt"));
  std::vector<double> values;
  for (long i = 0, j = 0; in >> i >> j;) {
    double v = 0.0;
    in >> v;
    values.push_back(v);
  }
  ASSERT_EQ(values.size(), 2u);
  EXPECT_NEAR(values[0], 6.0, 1e-6);
  EXPECT_NEAR(values[1], 6.0, 1e-6);
}

TEST_F(Cli, BenchSmoke) {
  ASSERT_EQ(run("bench --preset smoke --out b.csv --records r.csv"), 0);
  const std::string csv = read("b.csv");
  EXPECT_EQ(csv.rfind(std::string(adaptimpute::kMetricsHeader) + "\n", 0), 0u);
  EXPECT_NE(csv.find("\nadaptive,"), std::string::npos);
  EXPECT_NE(read("b.csv.manifest").find("command=bench"), std::string::npos);
  ASSERT_EQ(run("bench --preset smoke --out c.csv"), 0);
  EXPECT_EQ(read("c.csv"), csv);
}
