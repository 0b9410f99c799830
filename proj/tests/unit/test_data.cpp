#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "fixtures.hpp"
#include "knnmts/data.hpp"
#include "knnmts/errors.hpp"

using namespace knnmts;

namespace {

MtsDataset random_dataset(std::size_t t, std::size_t n, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  MtsDataset ds;
  ds.name = "random";
  ds.steps = t;
  ds.nodes = n;
  ds.channels = c;
  for (std::size_t i = 0; i < n; ++i) ds.node_ids.push_back(std::to_string(i));
  ds.values.resize(t * n * c);
  // float-representable so kmtsbin (f32) round-trips exactly
  for (double& v : ds.values) v = static_cast<float>(rng.normal(50.0, 10.0));
  return ds;
}

void write_text(const std::filesystem::path& p, const std::string& s) { std::ofstream(p) << s; }

}  // namespace

TEST(Data, CsvLoadsDims) {
  auto dir = fixtures::temp_dir("csv_dims");
  write_text(dir / "a.csv", "s1,s2\n1,2\n3,4\n5,6\n");
  auto ds = load_dataset(dir / "a.csv", DatasetFormat::csv);
  EXPECT_EQ(ds.steps, 3u);
  EXPECT_EQ(ds.nodes, 2u);
  EXPECT_EQ(ds.channels, 1u);
  EXPECT_EQ(ds.node_ids, (std::vector<std::string>{"s1", "s2"}));
  EXPECT_EQ(ds.at(2, 1), 6.0);
}

TEST(Data, CsvRejectsRaggedAndNaNWithRowIndex) {
  auto dir = fixtures::temp_dir("csv_bad");
  write_text(dir / "ragged.csv", "a,b\n1,2\n3\n");
  try {
    load_dataset(dir / "ragged.csv", DatasetFormat::csv);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos) << e.what();
  }
  write_text(dir / "nan.csv", "a,b\n1,2\n3,nan\n");
  try {
    load_dataset(dir / "nan.csv", DatasetFormat::csv);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos) << e.what();
  }
  write_text(dir / "empty_cell.csv", "a,b\n1,\n");
  EXPECT_THROW(load_dataset(dir / "empty_cell.csv", DatasetFormat::csv), IoError);
  EXPECT_THROW(load_dataset(dir / "missing.csv", DatasetFormat::csv), IoError);
}

TEST(Data, CsvRoundTripIsExact) {
  auto dir = fixtures::temp_dir("csv_rt");
  auto ds = random_dataset(20, 3, 2, 4);
  for (double& v : ds.values) v = v / 3.0;  // non-float-representable doubles
  save_dataset(ds, dir / "x.csv", DatasetFormat::csv);
  auto back = load_dataset(dir / "x.csv", DatasetFormat::csv, 2);
  EXPECT_EQ(back.values, ds.values);
  EXPECT_EQ(back.node_ids, ds.node_ids);
}

TEST(Data, KmtsbinRoundTripBitIdentical) {
  auto dir = fixtures::temp_dir("kmtsbin_rt");
  auto ds = random_dataset(100, 5, 1, 7);
  save_dataset(ds, dir / "a.kmtsbin", DatasetFormat::kmtsbin);
  auto back = load_dataset(dir / "a.kmtsbin", format_from_path(dir / "a.kmtsbin"));
  EXPECT_EQ(back.values, ds.values);
  EXPECT_EQ(encode_kmtsbin(back), encode_kmtsbin(ds));
}

TEST(Data, KmtsbinHeaderLayout) {
  auto ds = random_dataset(3, 2, 1, 1);
  ds.sample_rate_minutes = 5;
  auto bytes = encode_kmtsbin(ds);
  ASSERT_EQ(bytes.size(), 4 + 2 + 8 + 4 + 4 + 4 + 3 * 2 * 4 + 4u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "KMTS");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 0);
  EXPECT_EQ(bytes[6], 3);  // T, little endian
  EXPECT_EQ(bytes[14], 2);  // N
  EXPECT_EQ(bytes[18], 1);  // C
  EXPECT_EQ(bytes[22], 5);  // sample rate
}

TEST(Data, KmtsbinRejectsTruncationAndBadMagic) {
  auto bytes = encode_kmtsbin(random_dataset(10, 2, 1, 3));
  auto truncated = bytes;
  truncated.resize(truncated.size() - 9);
  EXPECT_THROW(decode_kmtsbin(truncated), IoError);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_kmtsbin(bad), IoError);
}

TEST(Data, Pems04ShapedFileLoads) {
  auto dir = fixtures::temp_dir("pems04");
  MtsDataset ds;
  ds.steps = 16992;
  ds.nodes = 307;
  ds.channels = 1;
  ds.sample_rate_minutes = 5;
  for (std::size_t i = 0; i < ds.nodes; ++i) ds.node_ids.push_back(std::to_string(i));
  ds.values.resize(ds.steps * ds.nodes);
  for (std::size_t i = 0; i < ds.values.size(); ++i) ds.values[i] = static_cast<double>(i % 997);
  save_dataset(ds, dir / "pems04.kmtsbin", DatasetFormat::kmtsbin);
  auto back = load_dataset(dir / "pems04.kmtsbin", DatasetFormat::kmtsbin);
  EXPECT_EQ(back.steps, 16992u);
  EXPECT_EQ(back.nodes, 307u);
  EXPECT_EQ(back.sample_rate_minutes, 5u);
  EXPECT_EQ(back.values, ds.values);
}

TEST(Data, ChronologicalSplitLengths) {
  auto s10 = chronological_split(random_dataset(10, 1, 1, 1), {0.6, 0.2, 0.2});
  EXPECT_EQ(s10.train.steps, 6u);
  EXPECT_EQ(s10.val.steps, 2u);
  EXPECT_EQ(s10.test.steps, 2u);
  auto big = chronological_split(random_dataset(16992, 1, 1, 1), {0.6, 0.2, 0.2});
  EXPECT_EQ(big.train.steps, 10196u);
  EXPECT_EQ(big.val.steps, 3398u);
  EXPECT_EQ(big.test.steps, 3398u);
  auto bay = chronological_split(random_dataset(1000, 1, 1, 1), {0.7, 0.1, 0.2});
  EXPECT_EQ(bay.train.steps, 700u);
  EXPECT_EQ(bay.val.steps, 100u);
  EXPECT_EQ(bay.test.steps, 200u);
  EXPECT_EQ(bay.val.first_step, 700u);
  EXPECT_EQ(bay.test.first_step, 800u);
  EXPECT_THROW(chronological_split(random_dataset(10, 1, 1, 1), {0.5, 0.2, 0.2}), ConfigError);
}

TEST(Data, SplitsAreContiguousAndOrdered) {
  auto ds = random_dataset(50, 2, 1, 9);
  auto s = chronological_split(ds, {});
  std::vector<double> joined = s.train.values;
  joined.insert(joined.end(), s.val.values.begin(), s.val.values.end());
  joined.insert(joined.end(), s.test.values.begin(), s.test.values.end());
  EXPECT_EQ(joined, ds.values);
}

TEST(Data, NormalizerHandValuesAndErrors) {
  SeriesSplit s;
  s.steps = 2;
  s.nodes = 1;
  s.values = {0, 2};
  auto norm = Normalizer::fit(s);
  EXPECT_DOUBLE_EQ(norm.mean()[0], 1.0);
  EXPECT_DOUBLE_EQ(norm.stddev()[0], 1.0);
  EXPECT_DOUBLE_EQ(norm.apply(2.0), 1.0);
  s.values = {3, 3};
  EXPECT_THROW(Normalizer::fit(s), ConfigError);
}

TEST(Data, NormalizerRoundTripAndSpaceTags) {
  Rng rng(3);
  auto raw = fixtures::random_split(40, 3, 2, rng, Space::raw);
  auto norm = Normalizer::fit(raw);
  auto z = norm.apply(raw);
  EXPECT_EQ(z.space, Space::normalized);
  auto back = norm.inverse(z);
  for (std::size_t i = 0; i < raw.values.size(); ++i) EXPECT_NEAR(back.values[i], raw.values[i], 1e-9);
  EXPECT_THROW(norm.apply(z), ContractError);
  EXPECT_THROW(norm.inverse(raw), ContractError);
  EXPECT_THROW(Normalizer::fit(z), ContractError);
}

TEST(Data, WindowCounts) {
  Rng rng(1);
  auto raw = fixtures::random_split(100, 2, 1, rng, Space::raw);
  auto z = raw;
  z.space = Space::normalized;
  WindowSet w(z, raw, {24, 12, 12});
  EXPECT_EQ(w.per_node(), 65u);
  EXPECT_EQ(w.size(), 130u);
  auto exact = fixtures::random_split(36, 1, 1, rng, Space::raw);
  auto exact_z = exact;
  exact_z.space = Space::normalized;
  EXPECT_EQ(WindowSet(exact_z, exact, {24, 12, 12}).per_node(), 1u);
}

TEST(Data, ShortSplitYieldsEmptyStreamWithWarning) {
  Rng rng(1);
  auto raw = fixtures::random_split(30, 2, 1, rng, Space::raw);
  auto z = raw;
  z.space = Space::normalized;
  WindowSet w(z, raw, {24, 12, 12});
  EXPECT_TRUE(w.empty());
  EXPECT_FALSE(w.warning().empty());
}

TEST(Data, SampleInvariants) {
  Rng rng(2);
  auto ds = random_dataset(120, 3, 1, 5);
  auto s = chronological_split(ds, {});
  auto norm = Normalizer::fit(s.train);
  auto z = norm.apply(s.val);
  WindowSet w(z, s.val, {12, 4, 3});
  std::size_t prev_node = 0, prev_end = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    Sample smp = w.at(i);
    // S_P is the tail of X^i
    for (std::size_t t = 0; t < 4; ++t) EXPECT_EQ(smp.short_input.data()[t], smp.long_input.data()[8 + t]);
    // the target never reads past the split
    EXPECT_LE(smp.end_step + 3, s.val.first_step + s.val.steps - 1);
    EXPECT_GE(smp.end_step + 1 - 12, s.val.first_step);
    // raw labels are the inverse of the normalized targets
    for (std::size_t t = 0; t < 3; ++t) EXPECT_NEAR(norm.inverse(smp.target.data()[t]), smp.target_raw[t], 1e-9);
    // raw labels come from the dataset rows following end_step
    for (std::size_t t = 0; t < 3; ++t) EXPECT_EQ(smp.target_raw[t], ds.at(smp.end_step + 1 + t, smp.node));
    // (node, end_step) lexicographic order
    if (i > 0) EXPECT_TRUE(smp.node > prev_node || (smp.node == prev_node && smp.end_step > prev_end));
    prev_node = smp.node;
    prev_end = smp.end_step;
  }
}

TEST(Data, GatherMatchesSamples) {
  Rng rng(4);
  auto raw = fixtures::random_split(40, 3, 2, rng, Space::raw);
  auto z = Normalizer::fit(raw).apply(raw);
  WindowSet w(z, raw, {8, 4, 2});
  std::vector<std::size_t> positions{5, 0, 17};
  Batch b = w.gather(positions);
  ASSERT_EQ(b.long_input.shape(), (Shape{3, 3, 8, 2}));
  ASSERT_EQ(b.target.shape(), (Shape{9, 4}));
  for (std::size_t bi = 0; bi < 3; ++bi)
    for (std::size_t n = 0; n < 3; ++n) {
      Sample s = w.at(n * w.per_node() + positions[bi]);
      EXPECT_EQ(b.end_steps[bi], s.end_step);
      for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(b.long_input.data()[(bi * 3 + n) * 16 + i], s.long_input.data()[i]);
      for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(b.target.data()[(bi * 3 + n) * 4 + i], s.target.data()[i]);
        EXPECT_EQ(b.target_raw[(bi * 3 + n) * 4 + i], s.target_raw[i]);
      }
    }
}
