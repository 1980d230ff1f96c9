#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "iosda/datahub.hpp"

using namespace iosda;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "iosda_tests";
  fs::create_directories(dir);
  return dir / name;
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::trunc) << s; }

std::vector<double> class_mean(const DomainDataset& ds, ClassLabel c) {
  std::vector<double> m(ds.feat_dim(), 0.0);
  std::size_t n = 0;
  for (const auto& s : ds.samples)
    if (s.truth == c) {
      for (std::size_t i = 0; i < m.size(); ++i) m[i] += s.features[i];
      ++n;
    }
  for (double& v : m) v /= static_cast<double>(n);
  return m;
}

double dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST(ClassLabel, CodesAndSlots) {
  EXPECT_EQ(ClassLabel::from_code(2), ClassLabel::known(2));
  EXPECT_EQ(ClassLabel::from_code(-1), ClassLabel::open());
  EXPECT_THROW(ClassLabel::from_code(-2), DataError);
  EXPECT_EQ(ClassLabel::open().slot(4), 4u);
  EXPECT_EQ(ClassLabel::known(3).slot(4), 3u);
  EXPECT_THROW((void)ClassLabel::known(4).slot(4), DataError);
  EXPECT_THROW((void)ClassLabel::hidden().code(), DataError);
  EXPECT_EQ(ClassLabel::from_slot(4, 4), ClassLabel::open());
}

TEST(GenSynthetic, Counts) {
  SynthSpec spec;
  spec.num_known = 4;
  spec.open_per_domain = 2;
  spec.samples_per_class = 50;
  const auto stream = gen_synthetic(spec, 3);
  ASSERT_EQ(stream.size(), 3u);
  EXPECT_EQ(stream[0].size(), 4u * 50u);
  EXPECT_EQ(stream[1].size(), 6u * 50u);
  EXPECT_EQ(stream[2].size(), 6u * 50u);
  for (const auto& s : stream[0].samples) EXPECT_TRUE(s.truth.is_known());
  EXPECT_TRUE(stream[0].labels_visible);
  EXPECT_FALSE(stream[1].labels_visible);
  EXPECT_FALSE(stream[2].labels_visible);
  for (const auto& ds : stream)
    for (const auto& s : ds.samples) EXPECT_EQ(s.domain_id, ds.domain_id);
}

TEST(GenSynthetic, RequiresTwoDomains) { EXPECT_THROW(gen_synthetic(SynthSpec{}, 1), ConfigError); }

TEST(GenSynthetic, DeterministicPerSeed) {
  SynthSpec spec;
  spec.samples_per_class = 20;
  const auto a = gen_synthetic(spec, 3);
  const auto b = gen_synthetic(spec, 3);
  spec.seed = 1;
  const auto c = gen_synthetic(spec, 3);
  for (std::size_t m = 0; m < 3; ++m) {
    EXPECT_EQ(a[m].samples, b[m].samples);
    ASSERT_EQ(a[m].size(), c[m].size());
    EXPECT_NE(a[m].samples.front().features, c[m].samples.front().features);
  }
}

TEST(GenSynthetic, OpenClustersAreDomainSpecific) {
  const auto stream = gen_synthetic(SynthSpec{}, 5);
  EXPECT_TRUE(stream[0].open_cluster_ids.empty());
  std::set<std::uint32_t> seen;
  for (std::size_t m = 1; m < stream.size(); ++m) {
    EXPECT_EQ(stream[m].open_cluster_ids.size(), 2u);
    for (auto id : stream[m].open_cluster_ids) EXPECT_TRUE(seen.insert(id).second) << "cluster " << id << " reused";
  }
}

TEST(GenSynthetic, ZeroShiftGivesMatchingClassConditionals) {
  SynthSpec spec;
  spec.domain_shift = 0.0;
  spec.samples_per_class = 400;
  const auto stream = gen_synthetic(spec, 3);
  // Two sample means of n draws from the same N(μ, σ²I) in d dims differ by
  // about σ·sqrt(2d/n); allow 3x that.
  const double tol = 3.0 * spec.cluster_std * std::sqrt(2.0 * spec.feat_dim / spec.samples_per_class);
  for (std::uint32_t k = 0; k < spec.num_known; ++k)
    for (std::size_t m = 1; m < 3; ++m)
      EXPECT_LT(dist(class_mean(stream[0], ClassLabel::known(k)), class_mean(stream[m], ClassLabel::known(k))), tol);
}

TEST(GenSynthetic, ShiftMovesEveryKnownClassByTheSameOffset) {
  SynthSpec spec;
  spec.domain_shift = 6.0;
  spec.samples_per_class = 400;
  const auto stream = gen_synthetic(spec, 2);
  const double tol = 3.0 * spec.cluster_std * std::sqrt(2.0 * spec.feat_dim / spec.samples_per_class);
  for (std::uint32_t k = 0; k < spec.num_known; ++k)
    EXPECT_NEAR(dist(class_mean(stream[0], ClassLabel::known(k)), class_mean(stream[1], ClassLabel::known(k))), 6.0, tol);
}

TEST(GenSynthetic, DefaultDomainOneIsCentroidSeparable) {
  const SynthSpec spec;
  const auto d1 = gen_synthetic(spec, 3).front();
  std::vector<std::vector<double>> centroids;
  for (std::uint32_t k = 0; k < spec.num_known; ++k) centroids.push_back(class_mean(d1, ClassLabel::known(k)));
  std::size_t correct = 0;
  for (const auto& s : d1.samples) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < centroids.size(); ++k)
      if (dist(s.features, centroids[k]) < dist(s.features, centroids[best])) best = k;
    correct += ClassLabel::known(static_cast<std::uint32_t>(best)) == s.truth;
  }
  EXPECT_GE(static_cast<double>(correct) / static_cast<double>(d1.size()), 0.95);
}

TEST(GenSynthetic, FeaturesAreSinglePrecisionValues) {
  const auto d1 = gen_synthetic(SynthSpec{}, 2).front();
  for (const auto& s : d1.samples)
    for (double v : s.features) ASSERT_EQ(static_cast<double>(static_cast<float>(v)), v);
}

TEST(Views, HiddenLabelsNeverLeakIntoTrainingView) {
  const auto stream = gen_synthetic(SynthSpec{}, 3);
  for (std::size_t m = 1; m < 3; ++m) {
    const auto v = stream[m].training_view();
    for (const auto& l : v.labels) EXPECT_TRUE(l.is_hidden());
    const auto e = stream[m].evaluation_view();
    for (const auto& t : e.truth) EXPECT_FALSE(t.is_hidden());
  }
  for (const auto& l : stream[0].training_view().labels) EXPECT_TRUE(l.is_known());
}

TEST(SplitHoldout, SizesAndDisjointness) {
  SynthSpec spec;
  spec.samples_per_class = 25;
  const auto ds = gen_synthetic(spec, 2)[1];
  const auto [train, hold] = split_holdout(ds, 0.2, 9);
  EXPECT_EQ(hold.size(), 30u);
  EXPECT_EQ(train.size() + hold.size(), ds.size());
  const auto [train2, hold2] = split_holdout(ds, 0.2, 9);
  EXPECT_EQ(hold.samples, hold2.samples);
  for (const auto& h : hold.samples)
    for (const auto& t : train.samples) ASSERT_NE(h.features, t.features);
}

TEST(LoadFeatures, CsvWithKnownAndOpen) {
  const fs::path p = temp_path("three.csv");
  write_text(p, "f0,f1,label,domain\n0.5,1,0,2\n-1,2.25,1,2\n3,4,-1,2\n");
  const auto ds = load_features(p);
  ASSERT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.feat_dim(), 2u);
  EXPECT_EQ(ds.domain_id, 2u);
  EXPECT_FALSE(ds.labels_visible);
  EXPECT_EQ(ds.samples[0].truth, ClassLabel::known(0));
  EXPECT_EQ(ds.samples[1].truth, ClassLabel::known(1));
  EXPECT_EQ(ds.samples[2].truth, ClassLabel::open());
  EXPECT_DOUBLE_EQ(ds.samples[1].features[1], 2.25);
}

TEST(LoadFeatures, Errors) {
  const fs::path empty = temp_path("empty.csv");
  write_text(empty, "");
  try {
    load_features(empty);
    FAIL() << "expected an error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("empty dataset"), std::string::npos);
  }
  const fs::path header_only = temp_path("header_only.csv");
  write_text(header_only, "f0,label,domain\n");
  EXPECT_THROW(load_features(header_only), DataError);
  const fs::path bad_header = temp_path("bad_header.csv");
  write_text(bad_header, "x,y,label,domain\n1,2,0,1\n");
  EXPECT_THROW(load_features(bad_header), DataError);
  const fs::path ragged = temp_path("ragged.csv");
  write_text(ragged, "f0,f1,label,domain\n1,2,0,1\n1,0,1\n");
  EXPECT_THROW(load_features(ragged), DataError);
  const fs::path bad_label = temp_path("bad_label.csv");
  write_text(bad_label, "f0,label,domain\n1,-3,1\n");
  EXPECT_THROW(load_features(bad_label), DataError);
  const fs::path mixed = temp_path("mixed.csv");
  write_text(mixed, "f0,label,domain\n1,0,1\n2,0,2\n");
  EXPECT_THROW(load_features(mixed), DataError);
  EXPECT_THROW(load_features(temp_path("does_not_exist.csv")), DataError);
}

TEST(SaveFeatures, RoundTripsAreBitExact) {
  SynthSpec spec;
  spec.samples_per_class = 10;
  for (const auto& ds : gen_synthetic(spec, 3)) {
    for (auto fmt : {FeatureFormat::csv, FeatureFormat::binary}) {
      const fs::path p = temp_path("rt_" + std::to_string(ds.domain_id) + (fmt == FeatureFormat::csv ? ".csv" : ".bin"));
      save_features(ds, p, fmt);
      const auto back = load_features(p);
      EXPECT_EQ(back.samples, ds.samples);
      EXPECT_EQ(back.domain_id, ds.domain_id);
      EXPECT_EQ(back.labels_visible, ds.labels_visible);
    }
  }
}

TEST(SaveFeatures, BinaryLayout) {
  DomainDataset ds;
  ds.domain_id = 3;
  ds.samples.push_back({{1.5, -2.0}, 3, ClassLabel::open()});
  const fs::path p = temp_path("layout.bin");
  save_features(ds, p, FeatureFormat::binary);
  EXPECT_EQ(fs::file_size(p), 8u + 4 + 4 + 8 + (2 * 4 + 4 + 2));
  std::ifstream is(p, std::ios::binary);
  binio::expect_magic(is, kFeatureMagic, p.string());
  EXPECT_EQ(binio::get_uint<std::uint32_t>(is, "v"), 1u);
  EXPECT_EQ(binio::get_uint<std::uint32_t>(is, "d"), 2u);
  EXPECT_EQ(binio::get_uint<std::uint64_t>(is, "n"), 1u);
  EXPECT_EQ(binio::get_f32(is, "x"), 1.5f);
  EXPECT_EQ(binio::get_f32(is, "x"), -2.0f);
  EXPECT_EQ(static_cast<std::int32_t>(binio::get_uint<std::uint32_t>(is, "l")), -1);
  EXPECT_EQ(binio::get_uint<std::uint16_t>(is, "dom"), 3u);
}

TEST(SaveFeatures, TruncatedBinaryIsRejected) {
  SynthSpec spec;
  spec.samples_per_class = 2;
  const auto ds = gen_synthetic(spec, 2)[0];
  const fs::path p = temp_path("trunc.bin");
  save_features(ds, p, FeatureFormat::binary);
  fs::resize_file(p, fs::file_size(p) - 3);
  EXPECT_THROW(load_features(p), DataError);
}
