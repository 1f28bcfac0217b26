#include <gtest/gtest.h>
#include <zlib.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "ccm/data.hpp"
#include "ccm/error.hpp"
#include "oracles.hpp"
#include "synthetic_data.hpp"

namespace ccm {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("ccm_data_test_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

void put_be32(std::string& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((v >> s) & 0xff));
}

std::string idx_images(std::uint32_t n, std::uint32_t rows, std::uint32_t cols,
                       const std::function<std::uint8_t(std::size_t)>& pixel) {
  std::string s;
  put_be32(s, 0x803);
  put_be32(s, n);
  put_be32(s, rows);
  put_be32(s, cols);
  for (std::size_t i = 0; i < std::size_t{n} * rows * cols; ++i)
    s.push_back(static_cast<char>(pixel(i)));
  return s;
}

std::string idx_labels(const std::vector<std::uint8_t>& labels) {
  std::string s;
  put_be32(s, 0x801);
  put_be32(s, static_cast<std::uint32_t>(labels.size()));
  for (auto l : labels) s.push_back(static_cast<char>(l));
  return s;
}

void write_file(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_gzip(const fs::path& p, const std::string& bytes) {
  gzFile f = gzopen(p.c_str(), "wb");
  ASSERT_NE(f, nullptr);
  gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
  gzclose(f);
}

std::string cifar_record(std::uint8_t label, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  std::string s(1, static_cast<char>(label));
  s += std::string(1024, static_cast<char>(r));
  s += std::string(1024, static_cast<char>(g));
  s += std::string(1024, static_cast<char>(b));
  return s;
}

LabeledDataset ten_class_dataset(std::size_t per_class, std::uint64_t seed = 1) {
  Rng rng(seed);
  return testing::blob_dataset(10, per_class, 6, rng);
}

TEST(LabeledDataset, ValidatesInvariants) {
  EXPECT_THROW(LabeledDataset(Tensor::zeros({2, 1, 2, 2}), {0}), InputError);
  EXPECT_THROW(LabeledDataset(Tensor::zeros({1, 1, 2, 2}), {-1}), InputError);
  EXPECT_THROW(LabeledDataset(Tensor::full({1, 1, 2, 2}, 1.5), {0}), InputError);
  const LabeledDataset d(Tensor::zeros({3, 1, 2, 2}), {4, 1, 4});
  EXPECT_EQ(d.class_set(), (std::vector<int>{1, 4}));
  EXPECT_EQ(d.indices_of(4), (std::vector<std::size_t>{0, 2}));
  EXPECT_THROW(d.indices_of(2), InputError);
}

TEST(LoadIdx, FourImageFixture) {
  TempDir dir;
  write_file(dir / "img", idx_images(4, 28, 28, [](std::size_t i) { return i % 256; }));
  write_file(dir / "lbl", idx_labels({3, 1, 4, 1}));
  const LabeledDataset d = load_idx(dir / "img", dir / "lbl");
  EXPECT_EQ(d.images().shape(), (Shape{4, 1, 28, 28}));
  EXPECT_EQ(d.labels(), (std::vector<int>{3, 1, 4, 1}));
  EXPECT_DOUBLE_EQ(d.images().data()[255], 1.0);
  EXPECT_DOUBLE_EQ(d.images().data()[0], 0.0);
  EXPECT_DOUBLE_EQ(d.images().data()[51], 51.0 / 255.0);
}

TEST(LoadIdx, GzipIsInflated) {
  TempDir dir;
  write_gzip(dir / "img.gz", idx_images(2, 4, 4, [](std::size_t) { return 255; }));
  write_gzip(dir / "lbl.gz", idx_labels({0, 9}));
  const LabeledDataset d = load_idx(dir / "img.gz", dir / "lbl.gz");
  EXPECT_EQ(d.size(), 2u);
  for (double v : d.images().data()) EXPECT_EQ(v, 1.0);
}

TEST(LoadIdx, FormatErrors) {
  TempDir dir;
  write_file(dir / "img", idx_images(4, 2, 2, [](std::size_t) { return 0; }));
  write_file(dir / "short", idx_labels({1, 2, 3}));
  EXPECT_THROW(load_idx(dir / "img", dir / "short"), FormatError);

  write_file(dir / "lbl", idx_labels({1, 2, 3, 4}));
  std::string bad = idx_images(4, 2, 2, [](std::size_t) { return 0; });
  bad[3] = 0x04;
  write_file(dir / "badmagic", bad);
  EXPECT_THROW(load_idx(dir / "badmagic", dir / "lbl"), FormatError);

  std::string trunc = idx_images(4, 2, 2, [](std::size_t) { return 0; });
  trunc.resize(trunc.size() - 3);
  write_file(dir / "trunc", trunc);
  try {
    load_idx(dir / "trunc", dir / "lbl");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_idx(dir / "missing", dir / "lbl"), IoError);
}

TEST(LoadCifar, SingleRecordRedPlane) {
  TempDir dir;
  write_file(dir / "batch", cifar_record(7, 255, 0, 0));
  const std::vector<fs::path> paths{dir / "batch"};
  const LabeledDataset d = load_cifar10_binary(paths);
  EXPECT_EQ(d.images().shape(), (Shape{1, 3, 32, 32}));
  EXPECT_EQ(d.labels(), (std::vector<int>{7}));
  const auto px = d.images().data();
  for (std::size_t i = 0; i < 1024; ++i) {
    EXPECT_EQ(px[i], 1.0);
    EXPECT_EQ(px[1024 + i], 0.0);
    EXPECT_EQ(px[2048 + i], 0.0);
  }
}

TEST(LoadCifar, MultipleBatchesConcatenate) {
  TempDir dir;
  write_file(dir / "a", cifar_record(1, 0, 0, 0) + cifar_record(2, 0, 0, 0));
  write_file(dir / "b", cifar_record(3, 0, 0, 0));
  const std::vector<fs::path> paths{dir / "a", dir / "b"};
  EXPECT_EQ(load_cifar10_binary(paths).labels(), (std::vector<int>{1, 2, 3}));
}

TEST(LoadCifar, Errors) {
  TempDir dir;
  write_file(dir / "odd", cifar_record(1, 0, 0, 0) + "x");
  const std::vector<fs::path> odd{dir / "odd"};
  EXPECT_THROW(load_cifar10_binary(odd), FormatError);
  EXPECT_THROW(load_cifar10_binary({}), InputError);
}

TEST(RawCache, RoundTripIsBitIdentical) {
  TempDir dir;
  Rng rng(3);
  const LabeledDataset d(testing::random_tensor({5, 3, 4, 4}, rng, 0.0, 1.0), {0, 4, 2, 2, 9});
  save_raw_cache(d, dir / "cache");
  const LabeledDataset e = load_raw_cache(dir / "cache");
  EXPECT_EQ(e.images().shape(), d.images().shape());
  EXPECT_EQ(e.labels(), d.labels());
  EXPECT_TRUE(std::equal(d.images().data().begin(), d.images().data().end(),
                         e.images().data().begin()));
  std::ifstream in(dir / "cache", std::ios::binary);
  char magic[4];
  in.read(magic, 4);
  EXPECT_EQ(std::string(magic, 4), "CCMD");
}

TEST(RawCache, TruncatedFileIsFormatError) {
  TempDir dir;
  const LabeledDataset d(Tensor::zeros({2, 1, 2, 2}), {0, 1});
  save_raw_cache(d, dir / "cache");
  fs::resize_file(dir / "cache", fs::file_size(dir / "cache") - 1);
  EXPECT_THROW(load_raw_cache(dir / "cache"), FormatError);
}

TEST(SplitTasks, FivePairsInAscendingOrder) {
  const LabeledDataset train = ten_class_dataset(4), test = ten_class_dataset(2, 2);
  const TaskSequence tasks = split_tasks(train, test, 2);
  ASSERT_EQ(tasks.size(), 5u);
  EXPECT_EQ(tasks[2].classes, (std::vector<int>{4, 5}));
  for (std::size_t t = 0; t < 5; ++t) {
    const std::vector<int> expect{static_cast<int>(2 * t), static_cast<int>(2 * t + 1)};
    EXPECT_EQ(tasks[t].classes, expect);
    EXPECT_EQ(tasks[t].train.class_set(), expect);
    EXPECT_EQ(tasks[t].test.class_set(), expect);
  }
}

TEST(SplitTasks, PartitionsExamples) {
  const LabeledDataset train = ten_class_dataset(7), test = ten_class_dataset(3, 2);
  const TaskSequence tasks = split_tasks(train, test, 2);
  std::size_t total = 0;
  std::set<int> seen;
  for (const Task& t : tasks) {
    total += t.train.size();
    for (int c : t.classes) EXPECT_TRUE(seen.insert(c).second);
  }
  EXPECT_EQ(total, train.size());
  EXPECT_EQ(seen.size(), 10u);
}

TEST(SplitTasks, JointModeAndNonDivisibleError) {
  const LabeledDataset train = ten_class_dataset(2), test = ten_class_dataset(2, 2);
  const TaskSequence joint = split_tasks(train, test, 10);
  ASSERT_EQ(joint.size(), 1u);
  EXPECT_EQ(joint[0].train.size(), train.size());
  EXPECT_THROW(split_tasks(train, test, 3), InputError);
  EXPECT_THROW(split_tasks(train, test, 0), InputError);
}

TEST(SampleClassBatch, DistinctWhenClassIsLarge) {
  Rng rng(1);
  const LabeledDataset d(testing::random_tensor({5000, 1, 1, 2}, rng, 0.0, 1.0),
                         std::vector<int>(5000, 3));
  // Rows are unique with probability ~1, so distinct pixel pairs mean distinct rows.
  const Batch b = sample_class_batch(d, 3, 256, rng);
  ASSERT_EQ(b.size(), 256u);
  std::set<std::pair<double, double>> rows;
  for (std::size_t i = 0; i < 256; ++i)
    rows.insert({b.images.data()[2 * i], b.images.data()[2 * i + 1]});
  EXPECT_EQ(rows.size(), 256u);
  for (int l : b.labels) EXPECT_EQ(l, 3);
}

TEST(SampleClassBatch, RepeatsWhenClassIsSmall) {
  Rng rng(2);
  const LabeledDataset d = ten_class_dataset(4);
  const Batch b = sample_class_batch(d, 6, 10, rng);
  EXPECT_EQ(b.size(), 10u);
  for (int l : b.labels) EXPECT_EQ(l, 6);
  EXPECT_THROW(sample_class_batch(d, 11, 2, rng), InputError);
}

TEST(SampleClassBatch, ReproducibleForSeed) {
  const LabeledDataset d = ten_class_dataset(20);
  Rng a(9), b(9);
  const Batch x = sample_class_batch(d, 2, 8, a), y = sample_class_batch(d, 2, 8, b);
  EXPECT_TRUE(std::equal(x.images.data().begin(), x.images.data().end(), y.images.data().begin()));
}

TEST(LimitPerClass, KeepsFirstRowsOfEachClass) {
  const LabeledDataset d = ten_class_dataset(5);
  const LabeledDataset l = d.limit_per_class(2);
  EXPECT_EQ(l.size(), 20u);
  EXPECT_EQ(l.indices_of(7).size(), 2u);
  EXPECT_EQ(d.limit_per_class(0).size(), d.size());
}

TEST(ConcatBatches, StacksImagesAndLabels) {
  const Batch a{Tensor::zeros({1, 1, 2, 2}), {1}};
  const Batch b{Tensor::ones({2, 1, 2, 2}), {2, 3}};
  const Batch c = concat_batches(a, b);
  EXPECT_EQ(c.images.shape(), (Shape{3, 1, 2, 2}));
  EXPECT_EQ(c.labels, (std::vector<int>{1, 2, 3}));
  EXPECT_EQ(c.images.data()[4], 1.0);
}

}  // namespace
}  // namespace ccm
