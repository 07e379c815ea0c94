#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "test_support.hpp"
#include "vpl/datahub/dataset.hpp"
#include "vpl/datahub/manifest.hpp"
#include "vpl/datahub/split.hpp"
#include "vpl/datahub/synthetic.hpp"
#include "vpl/numcore/error.hpp"

using namespace vpl;

namespace {

DatasetManifest parse(const std::string& text, std::optional<std::size_t> k = std::nullopt) {
  std::istringstream in(text);
  return parse_manifest(in, "t", k);
}

std::string parse_error(const std::string& text, std::optional<std::size_t> k = std::nullopt) {
  try {
    parse(text, k);
  } catch (const ParseError& e) {
    return e.what();
  }
  return "";
}

// `patients` patients with `per` samples each.
DatasetManifest cohort(std::size_t patients, std::size_t per = 3) {
  DatasetManifest m;
  m.name = "cohort";
  m.num_classes = 2;
  for (std::size_t p = 0; p < patients; ++p) {
    for (std::size_t i = 0; i < per; ++i) {
      m.entries.push_back({"s" + std::to_string(p) + "_" + std::to_string(i), (p + i) % 2,
                           "p" + std::to_string(p), Modality::kXray});
    }
  }
  return m;
}

std::set<std::string> patients_of(const DatasetManifest& m, const std::vector<std::size_t>& idx) {
  std::set<std::string> out;
  for (std::size_t i : idx) out.insert(m.entries[i].patient_id);
  return out;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

TEST(Manifest, ParsesValidFile) {
  const auto m = parse("sample_ref,label,patient_id,modality\na.pgm,0,p1,xray\nb.pgm,1,p2,ct\n");
  ASSERT_EQ(m.entries.size(), 2u);
  EXPECT_EQ(m.num_classes, 2u);
  EXPECT_EQ(m.entries[1].modality, Modality::kCt);
  EXPECT_EQ(m.patients(), (std::vector<std::string>{"p1", "p2"}));
}

TEST(Manifest, ColumnOrderIsFree) {
  const auto m = parse("label,modality,sample_ref,patient_id\n1,mri,x.raw,q\n", 3);
  EXPECT_EQ(m.entries[0].sample_ref, "x.raw");
  EXPECT_EQ(m.entries[0].label, 1u);
  EXPECT_EQ(m.num_classes, 3u);
}

TEST(Manifest, ErrorsNameTheRow) {
  const std::string h = "sample_ref,label,patient_id,modality\n";
  EXPECT_NE(parse_error(h + "a,0,p,xray\nb,7,p,xray\n", 3).find("row 2"), std::string::npos);
  EXPECT_NE(parse_error(h + "a,0,p,xray\na,1,p,xray\n").find("duplicate"), std::string::npos);
  EXPECT_NE(parse_error("sample_ref,label,modality\na,0,xray\n").find("patient_id"), std::string::npos);
  EXPECT_NE(parse_error("").find("empty"), std::string::npos);
  EXPECT_NE(parse_error(h + "a,zero,p,xray\n").find("row 1"), std::string::npos);
  EXPECT_NE(parse_error(h + "a,0,p,photo\n").find("row 1"), std::string::npos);
  EXPECT_NE(parse_error(h + "a,0,p\n").find("row 1"), std::string::npos);
}

TEST(Manifest, WriteThenLoad) {
  const auto dir = fixtures::scratch_dir("manifest");
  const DatasetManifest m = cohort(4, 2);
  write_manifest(dir / "m.csv", m);
  const DatasetManifest back = load_manifest(dir / "m.csv", 2);
  ASSERT_EQ(back.entries.size(), m.entries.size());
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    EXPECT_EQ(back.entries[i].sample_ref, m.entries[i].sample_ref);
    EXPECT_EQ(back.entries[i].label, m.entries[i].label);
    EXPECT_EQ(back.entries[i].patient_id, m.entries[i].patient_id);
    EXPECT_EQ(back.entries[i].modality, m.entries[i].modality);
  }
}

TEST(Synthetic, DeterministicPerSeedAndIndex) {
  SyntheticDomainSpec spec;
  spec.per_patient_shift_std = 0.3;
  const SyntheticDomain a(spec), b(spec);
  for (std::size_t i : {0u, 17u, 511u}) {
    EXPECT_TRUE(a.sample(i).bitwise_equal(b.sample(i)));
    EXPECT_EQ(a.label(i), b.label(i));
    EXPECT_EQ(a.patient(i), b.patient(i));
  }
  spec.seed = 1;
  EXPECT_FALSE(SyntheticDomain(spec).sample(3).bitwise_equal(a.sample(3)));
  EXPECT_TRUE(synth_images(spec).images.bitwise_equal(synth_images(spec).images));
}

TEST(Synthetic, ClassMeansAreEquidistant) {
  SyntheticDomainSpec spec;
  spec.num_classes = 4;
  spec.class_mean_scale = 3.0;
  const SyntheticDomain dom(spec);
    const Tensor& mu = dom.class_means();
  for (std::size_t a = 0; a < 4; ++a) {
    for (std::size_t b = a + 1; b < 4; ++b) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < mu.cols(); ++j) d2 += std::pow(mu.at(a, j) - mu.at(b, j), 2);
      EXPECT_NEAR(std::sqrt(d2), 3.0, 1e-12);
    }
  }
}

TEST(Synthetic, SubspacesFollowTheTag) {
  for (const char* tag : {"general", "medical"}) {
    SyntheticDomainSpec spec = nlohmann::json{{"domain_tag", tag}}.get<SyntheticDomainSpec>();
    const SyntheticDomain dom(spec);
    const Tensor& mu = dom.class_means();
    const std::size_t half = mu.cols() / 2;
    const std::size_t lo = std::string(tag) == "general" ? half : 0;
    for (std::size_t k = 0; k < mu.rows(); ++k) {
      for (std::size_t j = lo; j < lo + half; ++j) EXPECT_EQ(mu.at(k, j), 0.0) << tag;
    }
  }
}

TEST(Synthetic, ZeroNoiseIsPerfectlySeparable) {
  SyntheticDomainSpec spec;
  spec.noise_std = 0.0;
  spec.num_samples = 200;
  const SyntheticDomain d(spec);
  const Tensor& mu = d.class_means();
  for (std::size_t i = 0; i < spec.num_samples; ++i) {
    const Tensor x = d.sample(i);
    EXPECT_EQ(max_abs_diff(x.reshaped({1, mu.cols()}),
                           Tensor({1, mu.cols()}, std::vector<double>(mu.raw() + d.label(i) * mu.cols(),
                                                                      mu.raw() + (d.label(i) + 1) * mu.cols()))),
              0.0);
  }
}

TEST(Synthetic, ProjectionAccuracyMatchesGaussianOverlap) {
  SyntheticDomainSpec spec;
  spec.class_mean_scale = 4.0;
  spec.noise_std = 1.0;
  spec.num_samples = 2000;
  spec.seed = 3;
  const SyntheticDomain d(spec);
  const Tensor& mu = d.class_means();
  const std::size_t n = mu.cols();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < spec.num_samples; ++i) {
    const Tensor x = d.sample(i);
    // Project onto the mean difference; threshold at the midpoint.
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      s += (x[j] - 0.5 * (mu.at(0, j) + mu.at(1, j))) * (mu.at(1, j) - mu.at(0, j));
    }
    correct += (s > 0.0 ? 1u : 0u) == d.label(i);
  }
  const double acc = static_cast<double>(correct) / spec.num_samples;
  EXPECT_NEAR(acc, normal_cdf(2.0), 0.03);
}

TEST(Synthetic, SpecValidation) {
  SyntheticDomainSpec spec;
  spec.noise_std = -1.0;
  EXPECT_THROW(spec.validate(), ConfigError);
  spec = {};
  spec.patient_count = 0;
  EXPECT_THROW(spec.validate(), ConfigError);
  EXPECT_THROW(nlohmann::json({{"noise", 1.0}}).get<SyntheticDomainSpec>(), ConfigError);
}

TEST(Synthetic, RefsRoundTrip) {
  SynthRef r;
  ASSERT_TRUE(parse_synth_ref(synth_ref("medical", 42), r));
  EXPECT_EQ(r.domain_tag, "medical");
  EXPECT_EQ(r.index, 42u);
  EXPECT_FALSE(parse_synth_ref("img/a.pgm", r));
}

TEST(Split, AllSeenLeavesUnseenEmpty) {
  const auto m = cohort(160);
  const auto s = patient_split(m, {160, 0, 1, 0.8});
  EXPECT_TRUE(s.test_unseen.empty());
  EXPECT_EQ(s.seen.size(), 160u);
  EXPECT_EQ(s.train.size() + s.test_seen.size(), m.entries.size());
}

TEST(Split, SeenAndUnseenAreDisjoint) {
  const auto m = cohort(160);
  const auto s = patient_split(m, {100, 60, 2, 0.8});
  EXPECT_EQ(patients_of(m, s.train).size() <= 100u, true);
  EXPECT_EQ(patients_of(m, s.test_unseen).size(), 60u);
  const std::set<std::string> seen(s.seen.begin(), s.seen.end());
  for (const auto& p : s.unseen) EXPECT_FALSE(seen.contains(p));
  EXPECT_EQ(seen.size(), 100u);
  EXPECT_TRUE(audit_split(m, s).passed());
}

TEST(Split, TrainFractionPerPatient) {
  const auto m = cohort(10, 5);
  const auto s = patient_split(m, {10, 0, 0, 0.8});
  EXPECT_EQ(s.train.size(), 40u);
  EXPECT_EQ(s.test_seen.size(), 10u);
}

TEST(Split, SeedDeterminism) {
  const auto m = cohort(160);
  const auto a = patient_split(m, {80, 40, 7, 0.8});
  const auto b = patient_split(m, {80, 40, 7, 0.8});
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test_unseen, b.test_unseen);
  EXPECT_EQ(split_to_json(m, a), split_to_json(m, b));
  std::set<std::vector<std::string>> seen_sets;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto seen = patient_split(m, {80, 40, seed, 0.8}).seen;
    std::sort(seen.begin(), seen.end());
    seen_sets.insert(seen);
  }
  EXPECT_EQ(seen_sets.size(), 5u);
}

TEST(Split, InfeasibleCountsNameAvailability) {
  try {
    patient_split(cohort(20), {15, 10, 0, 0.8});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("only 20"), std::string::npos);
  }
  DatasetManifest anon = cohort(3);
  anon.entries[0].patient_id.clear();
  EXPECT_THROW(patient_split(anon, {1, 0, 0, 0.8}), ConfigError);
}

TEST(Split, JsonCarriesRefsAndSpec) {
  const auto m = cohort(6, 2);
  const auto s = patient_split(m, {4, 2, 9, 0.5});
  const auto j = split_to_json(m, s);
  EXPECT_EQ(j.at("train").size(), s.train.size());
  EXPECT_EQ(j.at("test_unseen").size(), 4u);
  EXPECT_EQ(j.at("seed").get<std::uint64_t>(), 9u);
  EXPECT_EQ(j.at("spec").get<SplitSpec>(), s.spec);
}

TEST(OodSpecs, ThreeSettings) {
  auto pairs = [](const std::vector<SplitSpec>& v) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (const auto& s : v) out.emplace_back(s.seen_patients, s.unseen_patients);
    return out;
  };
  using P = std::vector<std::pair<std::size_t, std::size_t>>;
  EXPECT_EQ(pairs(ood_sweep_specs(1)), (P{{160, 0}, {100, 60}, {80, 80}, {60, 100}}));
  EXPECT_EQ(pairs(ood_sweep_specs(2)), (P{{80, 80}, {80, 60}, {80, 40}, {80, 20}}));
  EXPECT_EQ(pairs(ood_sweep_specs(3)), (P{{140, 20}, {120, 20}, {100, 20}, {80, 20}, {60, 20}}));
  EXPECT_THROW(ood_sweep_specs(4), ConfigError);
}

TEST(OodSpecs, EverySplitIsLeakFreeAndCovering) {
  const auto m = cohort(160, 2);
  for (int mode = 1; mode <= 3; ++mode) {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      for (const auto& spec : ood_sweep_specs(mode, seed)) {
        const auto s = patient_split(m, spec);
        const auto train = patients_of(m, s.train);
        for (const auto& p : patients_of(m, s.test_unseen)) EXPECT_FALSE(train.contains(p));
        auto seen_side = train;
        for (const auto& p : patients_of(m, s.test_seen)) seen_side.insert(p);
        EXPECT_EQ(seen_side, std::set<std::string>(s.seen.begin(), s.seen.end()));
        EXPECT_TRUE(audit_split(m, s).passed());
      }
    }
  }
}

TEST(Audit, DetectsTamperedSplit) {
  const auto m = cohort(10);
  auto s = patient_split(m, {6, 4, 0, 0.8});
  s.train.push_back(s.test_unseen.front());
  EXPECT_FALSE(audit_split(m, s).disjoint);
  auto t = patient_split(m, {6, 4, 0, 0.8});
  t.seen.push_back("ghost");
  EXPECT_FALSE(audit_split(m, t).passed());
}

TEST(Images, PgmVariants) {
  const auto dir = fixtures::scratch_dir("pnm");
  {
    std::ofstream f(dir / "a.pgm");
    f << "P2\n# comment\n2 2\n4\n0 1\n2 4\n";
  }
  Tensor a = read_pnm(dir / "a.pgm");
  EXPECT_EQ(a.shape(), (Shape{1, 2, 2}));
  EXPECT_EQ(std::vector<double>(a.raw(), a.raw() + 4), (std::vector<double>{0.0, 0.25, 0.5, 1.0}));
  {
    std::ofstream f(dir / "b.pgm", std::ios::binary);
    f << "P5 3 1 255\n";
    f.put(static_cast<char>(0)).put(static_cast<char>(51)).put(static_cast<char>(255));
  }
  Tensor b = read_pnm(dir / "b.pgm");
  EXPECT_EQ(b.shape(), (Shape{1, 1, 3}));
  EXPECT_DOUBLE_EQ(b[1], 0.2);
  {
    std::ofstream f(dir / "c.ppm", std::ios::binary);
    f << "P6\n1 1\n65535\n";
    for (int c : {0x00, 0x00, 0xff, 0xff, 0x80, 0x00}) f.put(static_cast<char>(c));
  }
  Tensor c = read_pnm(dir / "c.ppm");
  EXPECT_EQ(c.shape(), (Shape{3, 1, 1}));
  EXPECT_EQ(c[0], 0.0);
  EXPECT_EQ(c[1], 1.0);
  EXPECT_DOUBLE_EQ(c[2], 32768.0 / 65535.0);
  {
    std::ofstream f(dir / "d.pgm");
    f << "P2\n2 2\n4\n0 1\n";
  }
  EXPECT_THROW(read_pnm(dir / "d.pgm"), ParseError);
  EXPECT_THROW(read_pnm(dir / "missing.pgm"), ParseError);
}

TEST(Images, RawAndFlip) {
  const auto dir = fixtures::scratch_dir("raw");
  const std::vector<float> v = {1, 2, 3, 4, 5, 6};
  {
    std::ofstream f(dir / "x.raw", std::ios::binary);
    f.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 4));
  }
  const Tensor x = read_raw_f32(dir / "x.raw", {1, 2, 3});
  const Tensor f = hflip(x);
  EXPECT_EQ(std::vector<double>(f.raw(), f.raw() + 6), (std::vector<double>{3, 2, 1, 6, 5, 4}));
  EXPECT_TRUE(hflip(hflip(x)).bitwise_equal(x));
  EXPECT_THROW(read_raw_f32(dir / "x.raw", {1, 2, 2}), ParseError);
}

TEST(Materialize, MixesFilesAndSynthetic) {
  const auto dir = fixtures::scratch_dir("materialize");
  {
    std::ofstream f(dir / "img.pgm");
    f << "P2\n8 8\n1\n";
    for (int i = 0; i < 64; ++i) f << (i % 2) << ' ';
  }
  SyntheticDomainSpec spec;
  SampleSource src(1, 8, dir);
  src.add_domain(spec);
  DatasetManifest m;
  m.num_classes = 2;
  m.entries = {{"img.pgm", 1, "p", Modality::kXray}, {synth_ref("general", 5), 0, "q", Modality::kColor}};
  const LabeledImages data = materialize_all(m, src);
  EXPECT_EQ(data.images.shape(), (Shape{2, 1, 8, 8}));
  EXPECT_EQ(data.labels, (std::vector<std::size_t>{1, 0}));
  EXPECT_EQ(data.images[1], 1.0);
  const Tensor s5 = SyntheticDomain(spec).sample(5);
  EXPECT_TRUE(std::equal(s5.raw(), s5.raw() + 64, data.images.raw() + 64));
  const LabeledImages flipped = materialize(m, {0}, src, true);
  EXPECT_EQ(flipped.images[0], 1.0);
  EXPECT_EQ(data.subset({1}).patients, (std::vector<std::string>{"q"}));

  SampleSource wrong(1, 4, dir);
  EXPECT_THROW(wrong.load("img.pgm"), DimensionError);
  EXPECT_THROW(src.load("synth:medical:0"), ConfigError);
  EXPECT_THROW(src.load("img.bmp"), ParseError);
}
