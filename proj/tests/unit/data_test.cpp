#include "mvcl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "mvcl/synthetic.hpp"
#include "test_util.hpp"

namespace mvcl {
namespace {

ManifestRow rated(std::string id, std::vector<int> ratings, double diameter = 6.0, double thickness = 1.0) {
  ManifestRow row;
  row.volume_path = "vol/" + id + ".raw";
  row.lesion_id = std::move(id);
  row.center_mm = {10.0, 20.5, -3.25};
  row.longest_diameter_mm = diameter;
  row.slice_thickness_mm = thickness;
  row.ratings = std::move(ratings);
  return row;
}

ManifestRow classed(std::string id, std::string label, double thickness = 5.0) {
  ManifestRow row;
  row.volume_path = "vol/" + id + ".raw";
  row.lesion_id = std::move(id);
  row.longest_diameter_mm = 2.0;
  row.slice_thickness_mm = thickness;
  row.class_label = std::move(label);
  return row;
}

std::vector<LabeledLesion> balanced(std::size_t per_class, int classes = 2) {
  std::vector<LabeledLesion> out;
  for (int c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      out.push_back({"c" + std::to_string(c) + "_" + std::to_string(i), c, Split::kTrain, ""});
    }
  }
  return out;
}

std::map<int, std::size_t> counts(const std::vector<LabeledLesion>& lesions) {
  std::map<int, std::size_t> out;
  for (const auto& l : lesions) ++out[l.label];
  return out;
}

std::set<std::string> ids(const std::vector<LabeledLesion>& lesions) {
  std::set<std::string> out;
  for (const auto& l : lesions) out.insert(l.lesion_id);
  return out;
}

// ---- consensus ------------------------------------------------------------

TEST(Consensus, Examples) {
  const std::vector<int> low{1, 2, 2}, mid{3, 3, 3}, high{4, 5, 4};
  EXPECT_EQ(consensus_label(low, 3), Consensus::kBenign);
  EXPECT_EQ(consensus_label(mid, 3), Consensus::kExcluded);
  EXPECT_EQ(consensus_label(high, 3), Consensus::kMalignant);
}

TEST(Consensus, RaterThreshold) {
  const std::vector<int> two{1, 1};
  EXPECT_EQ(consensus_label(two, 3), Consensus::kExcluded);
  EXPECT_EQ(consensus_label(two, 1), Consensus::kBenign);
  EXPECT_EQ(min_raters_for(DatasetMode::kLidc), 3);
  EXPECT_EQ(min_raters_for(DatasetMode::kLndb), 1);
}

TEST(Consensus, MeanExactlyThreeIsUncertain) {
  const std::vector<int> a{2, 4}, b{1, 3, 5}, c{2, 3, 4, 3};
  EXPECT_EQ(consensus_label(a, 1), Consensus::kExcluded);
  EXPECT_EQ(consensus_label(b, 1), Consensus::kExcluded);
  EXPECT_EQ(consensus_label(c, 1), Consensus::kExcluded);
  const std::vector<int> just_above{3, 3, 4}, just_below{3, 3, 2};
  EXPECT_EQ(consensus_label(just_above, 3), Consensus::kMalignant);
  EXPECT_EQ(consensus_label(just_below, 3), Consensus::kBenign);
}

TEST(Consensus, InvalidRatings) {
  const std::vector<int> zero{0, 3, 3}, six{6}, empty{};
  EXPECT_MVCL_ERROR(consensus_label(zero, 1), ErrorCode::kInvalidRating);
  EXPECT_MVCL_ERROR(consensus_label(six, 1), ErrorCode::kInvalidRating);
  EXPECT_MVCL_ERROR(consensus_label(empty, 1), ErrorCode::kInvalidRating);
}

TEST(Consensus, PermutationInvariant) {
  std::vector<int> r{5, 1, 2, 4, 4};
  const auto expected = consensus_label(r, 3);
  std::sort(r.begin(), r.end());
  do {
    EXPECT_EQ(consensus_label(r, 3), expected);
  } while (std::next_permutation(r.begin(), r.end()));
}

// ---- filtering and labeling -----------------------------------------------

TEST(FilterManifest, NoduleModesDropThickSlicesAndSmallNodules) {
  const std::vector<ManifestRow> rows{rated("a", {1}), rated("thick", {1}, 6.0, 5.0), rated("b", {5}),
                                      rated("small", {5}, 2.0), rated("edge", {2}, 3.0, 2.5), rated("c", {4})};
  for (auto mode : {DatasetMode::kLidc, DatasetMode::kLndb}) {
    const auto kept = filter_manifest(rows, mode);
    std::vector<std::string> names;
    for (const auto& r : kept) names.push_back(r.lesion_id);
    EXPECT_EQ(names, (std::vector<std::string>{"a", "b", "edge", "c"}));
  }
}

TEST(FilterManifest, MultiDiseaseModeKeepsEverything) {
  const std::vector<ManifestRow> rows{classed("x", "nodule", 5.0), classed("y", "streak_shadow", 0.6)};
  EXPECT_EQ(filter_manifest(rows, DatasetMode::kTianchi).size(), 2U);
}

TEST(LabelManifest, HandCountsInLidcMode) {
  // benign: b1 b2 b3; malignant: m1 m2; excluded: uncertain u1 u2, too few
  // raters f1, filtered t1 (thick) and s1 (small).
  const std::vector<ManifestRow> rows{
      rated("b1", {1, 2, 2}),  rated("u1", {3, 3, 3}),           rated("m1", {4, 5, 4}),
      rated("b2", {1, 1, 1, 2}), rated("f1", {5, 5}),            rated("u2", {2, 4, 3}),
      rated("m2", {3, 4, 4}),  rated("t1", {1, 1, 1}, 6.0, 3.0), rated("s1", {5, 5, 5}, 2.9),
      rated("b3", {2, 3, 2})};
  const auto lidc = label_manifest(rows, DatasetMode::kLidc);
  EXPECT_EQ(counts(lidc), (std::map<int, std::size_t>{{0, 3}, {1, 2}}));
  EXPECT_EQ(ids(lidc), (std::set<std::string>{"b1", "b2", "b3", "m1", "m2"}));
  // LNDb accepts a single rater, so f1 joins the malignant class.
  const auto lndb = label_manifest(rows, DatasetMode::kLndb);
  EXPECT_EQ(counts(lndb), (std::map<int, std::size_t>{{0, 3}, {1, 3}}));
  for (const auto& l : lidc) EXPECT_EQ(l.source, "vol/" + l.lesion_id + ".raw");
}

TEST(LabelManifest, MultiDiseaseClasses) {
  const std::vector<ManifestRow> rows{classed("a", "lymph_node_calcification"), classed("b", "nodule"),
                                      classed("c", "arteriosclerosis_calcification")};
  const auto out = label_manifest(rows, DatasetMode::kTianchi);
  ASSERT_EQ(out.size(), 3U);
  EXPECT_EQ(out[0].label, 3);
  EXPECT_EQ(out[1].label, 0);
  EXPECT_EQ(out[2].label, 2);
  EXPECT_EQ(class_names(DatasetMode::kTianchi).size(), 4U);
  EXPECT_EQ(class_names(DatasetMode::kLidc), (std::vector<std::string>{"benign", "malignant"}));
  // A label-only row that survives the nodule filter has no ratings to vote on.
  auto unrated = classed("d", "nodule", 1.0);
  unrated.longest_diameter_mm = 6.0;
  EXPECT_MVCL_ERROR(label_manifest({unrated}, DatasetMode::kLidc), ErrorCode::kInvalidAnnotation);
}

TEST(ManifestRow, Validation) {
  auto row = rated("a", {1});
  row.validate();
  row.class_label = "nodule";
  EXPECT_MVCL_ERROR(row.validate(), ErrorCode::kInvalidAnnotation);
  auto flat = rated("b", {1}, 0.0);
  EXPECT_MVCL_ERROR(flat.validate(), ErrorCode::kInvalidAnnotation);
}

// ---- manifest IO ----------------------------------------------------------

TEST(ManifestIo, RoundTrip) {
  testing::TempDir dir;
  const std::vector<ManifestRow> rows{rated("a", {1, 2, 5}), rated("b", {4}, 3.5, 0.625), classed("c", "nodule")};
  write_manifest(rows, dir / "m.csv");
  const auto back = read_manifest(dir / "m.csv");
  ASSERT_EQ(back.size(), 3U);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].volume_path, rows[i].volume_path);
    EXPECT_EQ(back[i].lesion_id, rows[i].lesion_id);
    EXPECT_EQ(back[i].center_mm, rows[i].center_mm);
    EXPECT_EQ(back[i].longest_diameter_mm, rows[i].longest_diameter_mm);
    EXPECT_EQ(back[i].slice_thickness_mm, rows[i].slice_thickness_mm);
    EXPECT_EQ(back[i].ratings, rows[i].ratings);
    EXPECT_EQ(back[i].class_label, rows[i].class_label);
  }
}

TEST(ManifestIo, ReadsHandWrittenCsv) {
  testing::TempDir dir;
  {
    std::ofstream out(dir / "m.csv");
    out << "volume_path,lesion_id,cx_mm,cy_mm,cz_mm,diameter_mm,slice_thickness_mm,ratings\n"
        << "scan1.raw,n1,1,2,3,7.5,1.25,3|4|5\n"
        << "scan2.raw,n2,0,0,0,4,2,1\n";
  }
  const auto rows = read_manifest(dir / "m.csv");
  ASSERT_EQ(rows.size(), 2U);
  EXPECT_EQ(rows[0].ratings, (std::vector<int>{3, 4, 5}));
  EXPECT_EQ(rows[0].center_mm, (Vec3{1.0, 2.0, 3.0}));
  EXPECT_FALSE(rows[1].class_label.has_value());
}

TEST(ManifestIo, Errors) {
  testing::TempDir dir;
  EXPECT_MVCL_ERROR(read_manifest(dir / "absent.csv"), ErrorCode::kIo);
  {
    std::ofstream out(dir / "nocol.csv");
    out << "volume_path,lesion_id,cx_mm,cy_mm,cz_mm,diameter_mm,slice_thickness_mm\n";
  }
  EXPECT_MVCL_ERROR(read_manifest(dir / "nocol.csv"), ErrorCode::kInvalidAnnotation);
  {
    std::ofstream out(dir / "bad.csv");
    out << "volume_path,lesion_id,cx_mm,cy_mm,cz_mm,diameter_mm,slice_thickness_mm,ratings\n"
        << "scan.raw,n1,1,2,three,7.5,1.25,3\n";
  }
  EXPECT_MVCL_ERROR(read_manifest(dir / "bad.csv"), ErrorCode::kInvalidAnnotation);
  {
    std::ofstream out(dir / "label.csv");
    out << "volume_path,lesion_id,cx_mm,cy_mm,cz_mm,diameter_mm,slice_thickness_mm,label\n"
        << "scan.raw,n1,1,2,3,7.5,1.25,tumour\n";
  }
  EXPECT_MVCL_ERROR(read_manifest(dir / "label.csv"), ErrorCode::kInvalidAnnotation);
}

TEST(DatasetMode, StringRoundTrip) {
  for (auto mode : {DatasetMode::kLidc, DatasetMode::kLndb, DatasetMode::kTianchi}) {
    EXPECT_EQ(dataset_mode_from_string(to_string(mode)), mode);
  }
  EXPECT_MVCL_ERROR(dataset_mode_from_string("nih"), ErrorCode::kConfiguration);
}

// ---- splitting ------------------------------------------------------------

TEST(SplitDataset, StratifiedEightyTwenty) {
  const auto all = balanced(50);
  const auto [train, test] = split_dataset(all, 0.2, 7);
  EXPECT_EQ(train.size(), 80U);
  EXPECT_EQ(test.size(), 20U);
  EXPECT_EQ(counts(test), (std::map<int, std::size_t>{{0, 10}, {1, 10}}));
  for (const auto& l : train) EXPECT_EQ(l.split, Split::kTrain);
  for (const auto& l : test) EXPECT_EQ(l.split, Split::kTest);
}

TEST(SplitDataset, DisjointCoveringAndDeterministic) {
  const auto all = balanced(23, 3);
  const auto [train, test] = split_dataset(all, 0.3, 11);
  const auto a = ids(train), b = ids(test);
  std::vector<std::string> both;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
  EXPECT_TRUE(both.empty());
  EXPECT_EQ(a.size() + b.size(), all.size());
  const auto again = split_dataset(all, 0.3, 11);
  EXPECT_EQ(ids(again.first), a);
  EXPECT_EQ(ids(again.second), b);
  const auto other = split_dataset(all, 0.3, 12);
  EXPECT_NE(ids(other.second), b);
}

TEST(SplitDataset, PreservesInputOrder) {
  const auto all = balanced(10);
  const auto [train, test] = split_dataset(all, 0.5, 3);
  auto position = [&](const std::string& id) {
    return std::find_if(all.begin(), all.end(), [&](const auto& l) { return l.lesion_id == id; }) - all.begin();
  };
  for (std::size_t i = 1; i < train.size(); ++i) EXPECT_LT(position(train[i - 1].lesion_id), position(train[i].lesion_id));
  for (std::size_t i = 1; i < test.size(); ++i) EXPECT_LT(position(test[i - 1].lesion_id), position(test[i].lesion_id));
}

TEST(SplitDataset, Errors) {
  auto all = balanced(5);
  EXPECT_MVCL_ERROR(split_dataset(all, 0.0, 1), ErrorCode::kInvalidArgument);
  EXPECT_MVCL_ERROR(split_dataset(all, 1.0, 1), ErrorCode::kInvalidArgument);
  all.push_back({"lonely", 2, Split::kTrain, ""});
  EXPECT_MVCL_ERROR(split_dataset(all, 0.2, 1), ErrorCode::kStratification);
}

TEST(SplitDataset, TinyClassesKeepOneOnEachSide) {
  const auto all = balanced(2);
  for (double f : {0.01, 0.99}) {
    const auto [train, test] = split_dataset(all, f, 5);
    EXPECT_EQ(counts(train), (std::map<int, std::size_t>{{0, 1}, {1, 1}}));
    EXPECT_EQ(counts(test), (std::map<int, std::size_t>{{0, 1}, {1, 1}}));
  }
}

TEST(SplitJson, Layout) {
  testing::TempDir dir;
  const auto [train, test] = split_dataset(balanced(5), 0.2, 9);
  write_split_json(train, test, 9, 0.25, dir / "split.json");
  std::ifstream in(dir / "split.json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j.at("seed"), 9);
  EXPECT_EQ(j.at("fraction"), 0.25);
  EXPECT_EQ(j.at("train").size(), train.size());
  EXPECT_EQ(j.at("test").size(), test.size());
  EXPECT_EQ(j.at("test")[0], test[0].lesion_id);
}

// ---- label-fraction subsampling -------------------------------------------

TEST(SubsampleLabels, FullFractionIsIdentity) {
  const auto train = balanced(17, 3);
  const auto sub = subsample_labels(train, 1.0, 4);
  ASSERT_EQ(sub.size(), train.size());
  for (std::size_t i = 0; i < sub.size(); ++i) EXPECT_EQ(sub[i].lesion_id, train[i].lesion_id);
}

TEST(SubsampleLabels, PerClassArithmetic) {
  EXPECT_EQ(counts(subsample_labels(balanced(200), 0.10, 1)), (std::map<int, std::size_t>{{0, 20}, {1, 20}}));
  EXPECT_EQ(counts(subsample_labels(balanced(200), 0.25, 1)), (std::map<int, std::size_t>{{0, 50}, {1, 50}}));
}

TEST(SubsampleLabels, FloorGuardKeepsOnePerClass) {
  const auto sub = subsample_labels(balanced(30), 0.01, 1);
  std::size_t class0 = 0, class1 = 0;
  for (const auto& l : sub) (l.label == 0 ? class0 : class1) += 1;
  EXPECT_EQ(class0, 1U);
  EXPECT_EQ(class1, 1U);
  EXPECT_EQ(sub.size(), 2U);
}

TEST(SubsampleLabels, FractionsNest) {
  const auto train = balanced(40, 2);
  const std::vector<double> fractions{0.01, 0.05, 0.10, 0.25, 0.50, 0.75, 1.0};
  std::set<std::string> previous;
  for (double p : fractions) {
    const auto current = ids(subsample_labels(train, p, 21));
    EXPECT_TRUE(std::includes(current.begin(), current.end(), previous.begin(), previous.end())) << p;
    EXPECT_GE(current.size(), previous.size());
    previous = current;
  }
}

TEST(SubsampleLabels, DeterministicAndRangeChecked) {
  const auto train = balanced(40);
  EXPECT_EQ(ids(subsample_labels(train, 0.3, 2)), ids(subsample_labels(train, 0.3, 2)));
  EXPECT_NE(ids(subsample_labels(train, 0.3, 2)), ids(subsample_labels(train, 0.3, 3)));
  EXPECT_MVCL_ERROR(subsample_labels(train, 0.0, 1), ErrorCode::kInvalidArgument);
  EXPECT_MVCL_ERROR(subsample_labels(train, 1.5, 1), ErrorCode::kInvalidArgument);
}

// ---- synthetic lesions ----------------------------------------------------

TEST(Synthetic, DeterministicAndClamped) {
  for (auto cls : {SyntheticClass::kSmoothBlob, SyntheticClass::kSpiculatedBlob}) {
    const auto a = gen_synthetic_lesion(cls, 24, 99);
    const auto b = gen_synthetic_lesion(cls, 24, 99);
    EXPECT_EQ(a.data, b.data);
    EXPECT_EQ(a.side, 24U);
    EXPECT_EQ(a.data.size(), 24U * 24U * 24U);
    EXPECT_NE(gen_synthetic_lesion(cls, 24, 100).data, a.data);
    for (float v : a.data) {
      EXPECT_GE(v, 0.0F);
      EXPECT_LE(v, 1.0F);
    }
  }
  EXPECT_MVCL_ERROR(gen_synthetic_lesion(SyntheticClass::kSmoothBlob, 8, 1), ErrorCode::kInvalidArgument);
}

TEST(Synthetic, NoiseLevel) {
  // Far corners hold only clamped noise: the mean of max(0, N(0, s)) is s/sqrt(2 pi).
  const auto cube = gen_synthetic_lesion(SyntheticClass::kSmoothBlob, 33, 5);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t z = 0; z < 4; ++z)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 4; ++x) {
        sum += cube.at(x, y, z);
        ++count;
      }
  EXPECT_NEAR(sum / static_cast<double>(count), 0.02 / std::sqrt(2.0 * M_PI), 0.003);
}

// Radial-intensity anisotropy, computed independently of the generator: the
// coefficient of variation, over 64 near-uniform directions, of the mean
// intensity along a ray from the cube centre out to 0.45 of the side.
double radial_anisotropy(const LesionCube& cube) {
  const double c = (static_cast<double>(cube.side) - 1.0) / 2.0;
  const double reach = 0.45 * static_cast<double>(cube.side);
  const int directions = 64, samples = 24;
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  std::vector<double> ray_means;
  for (int k = 0; k < directions; ++k) {
    const double zc = 1.0 - 2.0 * (k + 0.5) / directions;
    const double r = std::sqrt(1.0 - zc * zc);
    const double phi = golden * k;
    const double dir[3] = {r * std::cos(phi), r * std::sin(phi), zc};
    double sum = 0.0;
    for (int s = 1; s <= samples; ++s) {
      const double t = reach * s / samples;
      std::size_t idx[3];
      for (int a = 0; a < 3; ++a) {
        const long v = std::lround(c + t * dir[a]);
        idx[a] = static_cast<std::size_t>(std::clamp<long>(v, 0, static_cast<long>(cube.side) - 1));
      }
      sum += cube.at(idx[0], idx[1], idx[2]);
    }
    ray_means.push_back(sum / samples);
  }
  double mean = 0.0;
  for (double m : ray_means) mean += m;
  mean /= directions;
  double var = 0.0;
  for (double m : ray_means) var += (m - mean) * (m - mean);
  return std::sqrt(var / directions) / mean;
}

TEST(Synthetic, SpiculatedBlobsAreMoreAnisotropic) {
  double smooth = 0.0, spiculated = 0.0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    smooth += radial_anisotropy(gen_synthetic_lesion(SyntheticClass::kSmoothBlob, 32, seed));
    spiculated += radial_anisotropy(gen_synthetic_lesion(SyntheticClass::kSpiculatedBlob, 32, seed));
  }
  smooth /= 200.0;
  spiculated /= 200.0;
  std::cout << "mean anisotropy smooth " << smooth << " spiculated " << spiculated << "\n";
  EXPECT_GT(spiculated, smooth);
}

}  // namespace
}  // namespace mvcl
