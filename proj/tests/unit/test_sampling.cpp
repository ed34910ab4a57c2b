#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "bridge/sampling.hpp"
#include "fixtures.hpp"

namespace bridge {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("bridge-sampling-" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
             "-" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

TEST(CentralLhs, SortedColumnsAreTheMidpointSet) {
  for (std::size_t n : {4u, 100u, 1000u}) {
    const Eigen::MatrixXd u = central_lhs(n, kDesignDims, 17);
    for (Eigen::Index j = 0; j < u.cols(); ++j) {
      std::vector<double> col(u.col(j).begin(), u.col(j).end());
      std::sort(col.begin(), col.end());
      for (std::size_t k = 0; k < n; ++k) {
        EXPECT_EQ(col[k], (static_cast<double>(k) + 0.5) / static_cast<double>(n));
      }
    }
  }
}

TEST(CentralLhs, SeedControlsPermutation) {
  EXPECT_EQ(central_lhs(50, 3, 1), central_lhs(50, 3, 1));
  EXPECT_NE(central_lhs(50, 3, 1), central_lhs(50, 3, 2));
}

TEST(CentralLhs, RejectsEmpty) { EXPECT_THROW(central_lhs(0, 3, 1), std::invalid_argument); }

TEST(ScaleToBounds, MapsCornersAndBinsPierCount) {
  const DesignSpace space;
  Eigen::RowVectorXd u(6);
  u << 0.0, 0.0, 0.0, 0.0, 0.0, 0.0;
  EXPECT_EQ(scale_to_bounds(u, space).n_p, 2);
  EXPECT_DOUBLE_EQ(scale_to_bounds(u, space).h_girder, 0.25);
  u << 1.0, 1.0, 0.999, 1.0, 1.0, 1.0;
  const DesignFeatures top = scale_to_bounds(u, space);
  EXPECT_EQ(top.n_p, 8);
  EXPECT_DOUBLE_EQ(top.w, 7.0);
  u(2) = 1.0;
  EXPECT_EQ(scale_to_bounds(u, space).n_p, 8);
}

TEST(ScaleToBounds, PierClassesEquallyPopulated) {
  const std::size_t n = 700;
  const Eigen::MatrixXd u = central_lhs(n, kDesignDims, 5);
  std::array<int, 7> counts{};
  for (Eigen::Index r = 0; r < u.rows(); ++r) ++counts[scale_to_bounds(u.row(r), DesignSpace{}).n_p - 2];
  for (int c : counts) EXPECT_EQ(c, 100);
}

TEST(Dataset, ByteIdenticalAcrossRunsAndWorkers) {
  const auto& cfg = testing::default_config();
  const std::string a = dataset_to_csv(generate_dataset(200, 9, cfg, {}));
  const std::string b = dataset_to_csv(generate_dataset(200, 9, cfg, {}));
  GenerateOptions many;
  many.workers = 4;
  const std::string c = dataset_to_csv(generate_dataset(200, 9, cfg, many));
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
}

TEST(Dataset, CsvRoundTripIsExact) {
  const Dataset ds = testing::small_dataset();
  const Dataset back = dataset_from_csv(dataset_to_csv(ds));
  ASSERT_EQ(back.records.size(), ds.records.size());
  for (std::size_t k = 0; k < ds.records.size(); ++k) {
    EXPECT_EQ(back.records[k].x, ds.records[k].x);
    EXPECT_EQ(back.records[k].y, ds.records[k].y);
  }
  EXPECT_EQ(back.header.config_hash, ds.header.config_hash);
  EXPECT_EQ(back.header.space.max, ds.header.space.max);
  EXPECT_EQ(back.content_hash(), ds.content_hash());
}

TEST(Dataset, HeaderAndColumns) {
  const std::string text = dataset_to_csv(generate_dataset(3, 1, testing::default_config(), {}));
  EXPECT_EQ(text.rfind("# bridge-dse dataset v1\n", 0), 0u);
  EXPECT_NE(text.find("\nid,h_girder,t_girder,n_p,h_p,i,w,uls_util,sls_util,f1,cost,clearance_ok,"
                      "trees_ok,status\n"),
            std::string::npos);
  EXPECT_EQ(text.find("created="), std::string::npos);
}

TEST(Dataset, FailedRowsAreKeptAndMarked) {
  ProjectConfig cfg = testing::default_config();
  // Girders deeper than the deck height make pier heights negative.
  cfg.site.deck_elevation = 1.0;
  cfg.site.required_clearance = 0.5;
  const Dataset ds = generate_dataset(50, 2, cfg, {});
  EXPECT_EQ(ds.records.size(), 50u);
  EXPECT_GT(ds.failure_count(), 0u);
  EXPECT_LT(ds.ok_records().size(), 50u);
  const std::string text = dataset_to_csv(ds);
  EXPECT_NE(text.find("nan,nan,nan,nan,0,0,sim_failure"), std::string::npos);
  const Dataset back = dataset_from_csv(text);
  EXPECT_EQ(back.failure_count(), ds.failure_count());
}

TEST(Dataset, WriteIsAtomic) {
  TempDir dir;
  const fs::path out = dir.path() / "ds.csv";
  const Dataset ds = generate_dataset(20, 3, testing::default_config(), {});
  write_dataset(ds, out);
  EXPECT_TRUE(fs::exists(out));
  EXPECT_FALSE(fs::exists(dir.path() / "ds.csv.partial"));
  EXPECT_EQ(read_dataset(out).content_hash(), ds.content_hash());
  EXPECT_THROW(write_dataset(ds, dir.path() / "missing" / "ds.csv"), std::runtime_error);
  EXPECT_FALSE(fs::exists(dir.path() / "missing"));
}

TEST(Dataset, MalformedInputIsRejected) {
  EXPECT_THROW(dataset_from_csv("# n=1\n"), std::runtime_error);
  const std::string header =
      "id,h_girder,t_girder,n_p,h_p,i,w,uls_util,sls_util,f1,cost,clearance_ok,trees_ok,status\n";
  EXPECT_THROW(dataset_from_csv(header + "0,1,2\n"), std::runtime_error);
  EXPECT_THROW(dataset_from_csv(header + "0,1,0.1,2,1,1,1,x,1,1,1,0,0,ok\n"), std::runtime_error);
  EXPECT_THROW(dataset_from_csv(header + "0,1,0.1,2,1,1,1,1,1,1,1,0,0,maybe\n"), std::runtime_error);
}

TEST(FormatDouble, ShortestRoundTrip) {
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(std::nan("")), "nan");
  const double v = 0.1 + 0.2;
  EXPECT_EQ(std::stod(format_double(v)), v);
}

}  // namespace
}  // namespace bridge
