#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "metcc/dataio.hpp"
#include "metcc/error.hpp"
#include "support.hpp"

using namespace metcc;
using namespace metcc::dataio;

namespace {

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::kInvalidArgument;
}

FeatureMatrix parse_matrix(const std::string& s) {
  auto in = test::text(s);
  return read_matrix(in);
}

SampleMetadata parse_meta(const std::string& s) {
  auto in = test::text(s);
  return read_metadata(in);
}

}  // namespace

TEST_SUITE("dataio") {
  TEST_CASE("matrix TSV loads in file order") {
    const auto m = parse_matrix("sample_id\tg1\tg2\na\t1\t2\nb\t3.5\t-4\nc\t0\t1e-3\n");
    CHECK(m.rows() == 3);
    CHECK(m.cols() == 2);
    CHECK(m.sample_ids == std::vector<std::string>{"a", "b", "c"});
    CHECK(m.feature_ids == std::vector<std::string>{"g1", "g2"});
    CHECK(m.values(1, 0) == 3.5);
    CHECK(m.values(2, 1) == 1e-3);
  }

  TEST_CASE("matrix TSV with group line") {
    const auto m = parse_matrix("sample_id\tg1\tg2\n#group\tchr1\tchrX\na\t1\t2\n");
    CHECK(m.feature_groups == std::vector<std::string>{"chr1", "chrX"});
  }

  TEST_CASE("malformed matrix files") {
    CHECK(code_of([] { parse_matrix("sample_id\tg1\tg2\na\t1\t2\t3\n"); }) == Errc::kMalformedFile);
    CHECK(code_of([] { parse_matrix("id\tg1\na\t1\n"); }) == Errc::kMalformedFile);
    CHECK(code_of([] { parse_matrix("sample_id\tg1\tg2\na\tnan\t2\n"); }) == Errc::kNonFiniteValue);
    CHECK(code_of([] { parse_matrix("sample_id\tg1\na\tinf\n"); }) == Errc::kNonFiniteValue);
    CHECK(code_of([] { parse_matrix("sample_id\tg1\na\tabc\n"); }) == Errc::kNonFiniteValue);
    CHECK(code_of([] { parse_matrix("sample_id\tg1\na\t1\na\t2\n"); }) == Errc::kDuplicateId);
    CHECK(code_of([] { parse_matrix("sample_id\tg1\tg1\na\t1\t2\n"); }) == Errc::kDuplicateId);
  }

  TEST_CASE("matrix round trip is bit exact") {
    Rng rng(7);
    Matrix v = test::random_matrix(6, 5, rng);
    v(0, 0) = 1e-300;
    v(0, 1) = -123456789.123456789;
    v(0, 2) = 0.1 + 0.2;
    v(0, 3) = std::numeric_limits<double>::denorm_min();
    const auto m = test::feature_matrix(v);
    std::ostringstream out;
    write_matrix(out, m);
    auto in = test::text(out.str());
    const auto back = read_matrix(in);
    CHECK(back.values == m.values);
    CHECK(back.sample_ids == m.sample_ids);
    CHECK(back.feature_groups == m.feature_groups);
    std::ostringstream again;
    write_matrix(again, back);
    CHECK(again.str() == out.str());
  }

  TEST_CASE("age binning with default edges") {
    AgeBinning bins;
    CHECK(bins.label_of(52) == "50-55");
    CHECK(bins.label_of(0) == "0-50");
    CHECK(bins.label_of(90) == "85+");
    CHECK(bins.label_of(50) == "50-55");
    CHECK(bins.label_of(84.9) == "80-85");
    CHECK(bins.labels().size() == 7);
    CHECK(code_of([&] { bins.index_of(-1); }) == Errc::kNegativeAge);
    CHECK(code_of([] { AgeBinning::parse("0,50,40"); }) == Errc::kInvalidArgument);
    CHECK(AgeBinning::parse("0,40").label_of(41) == "40+");
  }

  TEST_CASE("metadata loads and bins ages") {
    const auto meta = parse_meta(
        "sample_id\tlabel\tinstitution\tbatch\tage\n"
        "a\tcrc\ti1\tb1\t52\n"
        "b\thealthy\ti2\tb2\t0\n"
        "c\tcrc\ti1\tb3\t90\n");
    CHECK(meta.label == std::vector<int>{1, 0, 1});
    CHECK(meta.age_bin == std::vector<std::string>{"50-55", "0-50", "85+"});
    CHECK(meta.institution[1] == "i2");
  }

  TEST_CASE("metadata errors") {
    CHECK(code_of([] { parse_meta("sample_id\tlabel\tinstitution\tage\na\tcrc\ti\t3\n"); }) == Errc::kMissingColumn);
    CHECK(code_of([] { parse_meta("sample_id\tlabel\tinstitution\tbatch\tage\na\tflu\ti\tb\t3\n"); }) ==
          Errc::kUnknownLabelValue);
    CHECK(code_of([] { parse_meta("sample_id\tlabel\tinstitution\tbatch\tage\na\tcrc\ti\tb\t-3\n"); }) ==
          Errc::kNegativeAge);
  }

  TEST_CASE("metadata respects configured labels") {
    auto in = test::text("sample_id\tlabel\tinstitution\tbatch\tage\na\tcase\ti\tb\t30\nb\tctrl\ti\tb\t30\n");
    const auto meta = read_metadata(in, LabelSet{"ctrl", "case"});
    CHECK(meta.label == std::vector<int>{1, 0});
  }

  TEST_CASE("preprocess standardizes rows with population sd") {
    auto m = test::feature_matrix(Matrix{{1.0, 2.0, 3.0}});
    const auto out = preprocess(m, {});
    const double z = std::sqrt(1.5);
    CHECK(out.values(0, 0) == doctest::Approx(-z).epsilon(1e-14));
    CHECK(std::abs(out.values(0, 1)) < 1e-15);
    CHECK(out.values(0, 2) == doctest::Approx(z).epsilon(1e-14));
  }

  TEST_CASE("preprocess drops feature groups") {
    FeatureMatrix m;
    m.values = Matrix{{1, 2, 3, 4}, {4, 1, 2, 0}};
    m.sample_ids = {"a", "b"};
    m.feature_ids = {"x1", "y1", "g1", "g2"};
    m.feature_groups = {"chrX", "chrY", "chr1", "chr1"};
    const auto out = preprocess(m, {"chrX", "chrY"});
    CHECK(out.feature_ids == std::vector<std::string>{"g1", "g2"});
    CHECK(out.values(0, 0) == doctest::Approx(-1.0));
    CHECK(code_of([&] { preprocess(m, {"chr1", "chrX"}); }) == Errc::kAllFeaturesDropped);
    // Unknown tags are ignored.
    CHECK(preprocess(m, {"chrZ"}).cols() == 4);
  }

  TEST_CASE("constant sample is rejected by id") {
    auto m = test::feature_matrix(Matrix{{1, 2, 3}, {5, 5, 5}});
    try {
      preprocess(m, {});
      FAIL("expected ZeroVarianceSample");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::kZeroVarianceSample);
      CHECK(std::string(e.what()).find("s1") != std::string::npos);
    }
  }

  TEST_CASE("property: standardized rows and idempotence") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
      Matrix v = test::random_matrix(5, 3 + static_cast<Index>(rng.below(30)), rng) * (1 + 100 * rng.uniform());
      v.array() += 50 * rng.normal();
      const auto once = preprocess(test::feature_matrix(v), {});
      for (Index i = 0; i < once.rows(); ++i) {
        const auto row = once.values.row(i);
        const double mean = row.mean();
        const double sd = std::sqrt((row.array() - mean).square().mean());
        CHECK(std::abs(mean) < 1e-10);
        CHECK(std::abs(sd - 1) < 1e-10);
      }
      const auto twice = preprocess(once, {});
      CHECK((twice.values - once.values).cwiseAbs().maxCoeff() < 1e-10);
    }
  }

  TEST_CASE("align keeps the intersection in matrix order") {
    auto m = test::feature_matrix(Matrix{{1, 2}, {3, 4}, {5, 6}});
    m.sample_ids = {"a", "b", "c"};
    auto meta = test::metadata(3);
    meta.sample_ids = {"d", "c", "b"};
    const auto out = align(m, meta);
    CHECK(out.matrix.sample_ids == std::vector<std::string>{"b", "c"});
    CHECK(out.metadata.sample_ids == std::vector<std::string>{"b", "c"});
    CHECK(out.matrix.values(0, 0) == 3);
    CHECK(out.metadata.label == std::vector<int>{0, 1});
    CHECK(out.dropped == 2);

    meta.sample_ids = {"a", "b", "c"};
    const auto same = align(m, meta);
    CHECK(same.matrix.values == m.values);
    CHECK(same.dropped == 0);

    meta.sample_ids = {"x", "y", "z"};
    CHECK(code_of([&] { align(m, meta); }) == Errc::kEmptyIntersection);
  }

  TEST_CASE("align sample set does not depend on input order") {
    auto m = test::feature_matrix(Matrix::Zero(4, 2));
    m.sample_ids = {"d", "a", "c", "b"};
    auto meta = test::metadata(3);
    meta.sample_ids = {"b", "e", "d"};
    const auto out = align(m, meta);
    auto ids = out.matrix.sample_ids;
    std::sort(ids.begin(), ids.end());
    CHECK(ids == std::vector<std::string>{"b", "d"});
  }

  TEST_CASE("key value config") {
    auto in = test::text("# comment\nage_bins=0,40,60\nlabel_positive=case\nalpha = 0.5  # trailing\nflag=true\n");
    const auto cfg = KeyValueConfig::parse(in);
    CHECK(cfg.age_binning().edges == std::vector<double>{0, 40, 60});
    CHECK(cfg.label_set().positive == "case");
    CHECK(cfg.label_set().negative == "healthy");
    CHECK(cfg.get_double("alpha", 0) == 0.5);
    CHECK(cfg.get_bool("flag", false));
    CHECK(cfg.drop_groups() == std::set<std::string>{"chrX", "chrY"});
    CHECK(code_of([&] { cfg.get_int("alpha", 0); }) == Errc::kInvalidArgument);
  }

  TEST_CASE("sectioned file round trip") {
    SectionedFile f;
    f.scalars["format"] = "x";
    f.blocks["m"] = Matrix{{1.5, -2}, {0.1, 3e-20}};
    f.blocks["empty"] = Matrix(0, 3);
    std::ostringstream out;
    f.write(out);
    auto in = test::text(out.str());
    const auto g = SectionedFile::read(in);
    CHECK(g.scalar("format") == "x");
    CHECK(g.block("m") == f.blocks["m"]);
    CHECK(g.block("empty").cols() == 3);
    CHECK(code_of([&] { g.block("nope"); }) == Errc::kMalformedFile);
  }
}
