#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "helpers.hpp"

using namespace fedbench;
using namespace fedbench::test;

namespace {

void write_raw(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> header(std::uint32_t magic, std::vector<std::uint32_t> dims) {
  std::vector<unsigned char> b;
  auto put = [&](std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>(v >> s));
  };
  put(magic);
  for (auto d : dims) put(d);
  return b;
}

std::set<int> label_set(const ClientDataset& c) {
  std::set<int> s;
  for (const Dataset* d : {&c.train, &c.val, &c.test}) s.insert(d->labels.begin(), d->labels.end());
  return s;
}

}  // namespace

TEST(Idx, HandCraftedZeros) {
  const auto dir = temp_dir("idx_zeros");
  auto img = header(0x803, {2, 3, 4});
  img.resize(img.size() + 2 * 3 * 4, 0);
  auto lab = header(0x801, {2});
  lab.push_back(1);
  lab.push_back(0);
  write_raw(dir / "img", img);
  write_raw(dir / "lab", lab);
  const Dataset d = load_idx((dir / "img").string(), (dir / "lab").string());
  EXPECT_EQ(d.images.shape(), (Shape{2, 3, 4, 1}));
  for (double v : d.images.values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(d.labels, (std::vector<int>{1, 0}));
  EXPECT_EQ(d.n_classes, 2u);
}

TEST(Idx, BadMagicIsIngestionError) {
  const auto dir = temp_dir("idx_magic");
  auto img = header(0x803, {1, 1, 1});
  img.push_back(0);
  write_raw(dir / "img", img);
  // image file passed where labels are expected
  try {
    load_idx((dir / "img").string(), (dir / "img").string());
    FAIL() << "expected IngestionError";
  } catch (const IngestionError& e) {
    EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
  }
  EXPECT_THROW(load_idx((dir / "missing").string(), (dir / "img").string()), IngestionError);
}

TEST(Idx, CountMismatchAndTruncation) {
  const auto dir = temp_dir("idx_count");
  auto img = header(0x803, {2, 1, 1});
  img.push_back(0);
  img.push_back(255);
  auto lab = header(0x801, {3});
  lab.insert(lab.end(), {0, 1, 2});
  write_raw(dir / "img", img);
  write_raw(dir / "lab", lab);
  EXPECT_THROW(load_idx((dir / "img").string(), (dir / "lab").string()), IngestionError);
  img.pop_back();
  write_raw(dir / "img", img);
  EXPECT_THROW(load_idx((dir / "img").string(), (dir / "lab").string()), IngestionError);
}

TEST(Idx, GzipRoundTrip) {
  const auto dir = temp_dir("idx_gz");
  const Dataset d = synth_dataset(20, 4, 5, 3, 0.0);
  write_idx(d, (dir / "i.gz").string(), (dir / "l.gz").string());
  const Dataset back = load_idx((dir / "i.gz").string(), (dir / "l.gz").string(), 4);
  EXPECT_EQ(back.labels, d.labels);
  EXPECT_EQ(back.images, d.images);  // sigma 0: pixels are exactly 0 or 1
}

TEST(Idx, BundledMnistSubset) {
  const auto dir = source_dir() / "data" / "mnist";
  const Dataset d = load_idx((dir / "mnist10k-images-idx3-ubyte.gz").string(),
                             (dir / "mnist10k-labels-idx1-ubyte.gz").string(), 10);
  EXPECT_EQ(d.size(), 10000u);
  EXPECT_EQ(d.sample_shape(), (Shape{28, 28, 1}));
  std::vector<int> counts(10, 0);
  for (int l : d.labels) ++counts[static_cast<std::size_t>(l)];
  for (int c : counts) EXPECT_GT(c, 800);
  for (double v : d.images.values()) {
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
  }
}

TEST(Synth, SeededAndBitIdentical) {
  const Dataset a = synth_dataset(100, 2, 6, 42), b = synth_dataset(100, 2, 6, 42), c = synth_dataset(100, 2, 6, 43);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_FALSE(a.images == c.images);
}

TEST(Synth, ZeroSigmaImagesIdenticalWithinClass) {
  const Dataset d = synth_dataset(50, 5, 4, 1, 0.0);
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = 0; j < d.size(); ++j)
      if (d.labels[i] == d.labels[j])
        EXPECT_TRUE(std::equal(d.images.row(i).begin(), d.images.row(i).end(), d.images.row(j).begin()));
  EXPECT_THROW(synth_dataset(3, 5, 4, 1), PreconditionError);
}

TEST(Partition, IidSplitsAreDisjointAndSized) {
  const Dataset d = synth_dataset(1000, 10, 4, 5);
  PartitionPlan plan;
  plan.n_clients = 9;
  plan.max_per_client = 100;
  plan.seed = 3;
  const auto clients = partition(d, plan);
  std::set<std::size_t> seen;
  std::size_t total = 0;
  for (const auto& c : clients) {
    EXPECT_EQ(c.train.size(), 80u);
    EXPECT_EQ(c.val.size(), 10u);
    EXPECT_EQ(c.test.size(), 10u);
    for (const auto* idx : {&c.train_index, &c.val_index, &c.test_index})
      for (std::size_t i : *idx) {
        seen.insert(i);
        ++total;
      }
    EXPECT_GE(label_set(c).size(), 5u);
  }
  EXPECT_EQ(seen.size(), total);
}

TEST(Partition, SplitRoundingFavoursTrain) {
  const Dataset d = synth_dataset(100, 2, 2, 1);
  PartitionPlan plan;
  plan.n_clients = 1;
  plan.max_per_client = 19;
  const auto c = partition(d, plan).front();
  EXPECT_EQ(c.val.size(), 1u);
  EXPECT_EQ(c.test.size(), 1u);
  EXPECT_EQ(c.train.size(), 17u);
}

TEST(Partition, IidMnistScale) {
  // 30 clients x 300 from the bundled 10k digits.
  const auto dir = source_dir() / "data" / "mnist";
  const Dataset d = load_idx((dir / "mnist10k-images-idx3-ubyte.gz").string(),
                             (dir / "mnist10k-labels-idx1-ubyte.gz").string(), 10);
  PartitionPlan plan;
  plan.n_clients = 30;
  plan.max_per_client = 300;
  const auto clients = partition(d, plan);
  for (const auto& c : clients) {
    EXPECT_EQ(c.train.size() + c.val.size() + c.test.size(), 300u);
    EXPECT_GE(label_set(c).size(), 8u);
  }
  plan.n_clients = 100;
  try {
    partition(d, plan);
    FAIL() << "expected PartitionError";
  } catch (const PartitionError& e) {
    EXPECT_NE(std::string(e.what()).find("shortfall 20000"), std::string::npos) << e.what();
  }
}

TEST(Partition, KClassExactness) {
  const Dataset d = synth_dataset(2000, 10, 4, 9);
  for (std::size_t k : {1u, 2u, 3u}) {
    PartitionPlan plan;
    plan.mode = PartitionMode::k_class;
    plan.k = k;
    plan.n_clients = 10;
    plan.max_per_client = 100;
    plan.seed = 4;
    const auto clients = partition(d, plan);
    std::set<std::size_t> seen;
    std::size_t total = 0;
    for (const auto& c : clients) {
      EXPECT_EQ(label_set(c).size(), k);
      for (const auto* idx : {&c.train_index, &c.val_index, &c.test_index}) {
        seen.insert(idx->begin(), idx->end());
        total += idx->size();
      }
    }
    EXPECT_EQ(seen.size(), total);
  }
}

TEST(Partition, KClassShortfallNamesClass) {
  const Dataset d = synth_dataset(100, 10, 4, 1);
  PartitionPlan plan;
  plan.mode = PartitionMode::k_class;
  plan.k = 1;
  plan.n_clients = 10;
  plan.max_per_client = 50;
  try {
    partition(d, plan);
    FAIL() << "expected PartitionError";
  } catch (const PartitionError& e) {
    EXPECT_NE(std::string(e.what()).find("class 0 needs"), std::string::npos) << e.what();
  }
  plan.k = 11;
  EXPECT_THROW(partition(d, plan), ConfigError);
}

TEST(Partition, SeedStable) {
  const Dataset d = synth_dataset(500, 10, 4, 2);
  PartitionPlan plan;
  plan.n_clients = 5;
  plan.max_per_client = 80;
  plan.seed = 17;
  plan.size_jitter = 0.5;
  const auto a = partition(d, plan), b = partition(d, plan);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].train_index, b[i].train_index);
    EXPECT_EQ(a[i].test_index, b[i].test_index);
    const std::size_t n = a[i].train.size() + a[i].val.size() + a[i].test.size();
    EXPECT_GE(n, 40u);
    EXPECT_LE(n, 80u);
  }
}

TEST(Partition, ClientDirRoundTrip) {
  const auto dir = temp_dir("clients");
  const auto clients = synth_clients(3, 30, 4);
  // pixels are rounded to bytes on disk
  auto rounded = clients;
  for (auto& c : rounded)
    for (Dataset* d : {&c.train, &c.val, &c.test})
      for (double& v : d->images.values()) v = std::round(v * 255.0) / 255.0;
  write_client_dir(dir, rounded);
  const auto back = load_client_dir(dir, 10);
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].train.labels, rounded[i].train.labels);
    for (std::size_t j = 0; j < back[i].train.images.size(); ++j)
      EXPECT_NEAR(back[i].train.images[j], rounded[i].train.images[j], 1e-12);
  }
  EXPECT_THROW(load_client_dir(dir / "nope"), IngestionError);
}
