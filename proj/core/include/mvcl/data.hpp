#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mvcl/volume.hpp"

namespace mvcl {

enum class DatasetMode { kLidc, kLndb, kTianchi };

std::string to_string(DatasetMode mode);
DatasetMode dataset_mode_from_string(const std::string& text);

/// Four-way lesion classes of the multi-disease dataset, in label order.
inline constexpr std::array<const char*, 4> kTianchiClasses = {
    "nodule", "streak_shadow", "arteriosclerosis_calcification", "lymph_node_calcification"};
inline constexpr std::array<const char*, 2> kBinaryClasses = {"benign", "malignant"};

struct ManifestRow {
  std::string volume_path;
  std::string lesion_id;
  Vec3 center_mm{};
  double longest_diameter_mm = 0.0;
  double slice_thickness_mm = 0.0;
  std::optional<std::vector<int>> ratings;  // malignancy ratings 1..5
  std::optional<std::string> class_label;   // one of kTianchiClasses

  // Exactly one of ratings / class_label, positive diameter.
  void validate() const;
};

// CSV header:
//   volume_path,lesion_id,cx_mm,cy_mm,cz_mm,diameter_mm,slice_thickness_mm,ratings,label
// `ratings` is "|"-joined; the ratings or label column may be omitted or empty.
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::vector<ManifestRow>& rows, const std::filesystem::path& path);

enum class Consensus { kBenign, kMalignant, kExcluded };

/// Mean-rating rule: fewer than min_raters -> excluded; mean < 3 benign,
/// mean == 3 excluded (uncertain), mean > 3 malignant.
Consensus consensus_label(std::span<const int> ratings, int min_raters);
int min_raters_for(DatasetMode mode);  // 3 for LIDC, 1 otherwise

/// Nodule modes drop slices thicker than 2.5 mm and diameters below 3 mm;
/// the multi-disease mode keeps every row. Survivors keep their order.
std::vector<ManifestRow> filter_manifest(const std::vector<ManifestRow>& rows, DatasetMode mode);

enum class Split { kTrain, kTest };

struct LabeledLesion {
  std::string lesion_id;
  int label = 0;  // index into kBinaryClasses or kTianchiClasses
  Split split = Split::kTrain;
  std::string source;  // originating volume path or view stem
};

/// Filter + consensus; uncertain and under-rated lesions never appear.
std::vector<LabeledLesion> label_manifest(const std::vector<ManifestRow>& rows, DatasetMode mode);
std::vector<std::string> class_names(DatasetMode mode);

/// Stratified by label and deterministic for a seed. Each class keeps at least
/// one member on both sides; classes with fewer than two members are an error.
/// Both outputs preserve input order.
std::pair<std::vector<LabeledLesion>, std::vector<LabeledLesion>> split_dataset(
    const std::vector<LabeledLesion>& lesions, double test_fraction, std::uint64_t seed);

/// Stratified subset of max(1, round(p * n_c)) per class, taken as a prefix of
/// one seeded shuffle per class so that smaller fractions nest inside larger
/// ones. Output preserves input order.
std::vector<LabeledLesion> subsample_labels(const std::vector<LabeledLesion>& train, double fraction,
                                            std::uint64_t seed);

/// {train: [ids], test: [ids], seed, fraction}
void write_split_json(const std::vector<LabeledLesion>& train, const std::vector<LabeledLesion>& test,
                      std::uint64_t seed, double fraction, const std::filesystem::path& path);

}  // namespace mvcl
