#include "mvcl/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "io_util.hpp"
#include "mvcl/errors.hpp"

namespace mvcl {

namespace {

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(s);
  while (std::getline(is, field, sep)) out.push_back(field);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto issp = [](unsigned char c) { return std::isspace(c) != 0; };
  s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), issp));
  s.erase(std::find_if_not(s.rbegin(), s.rend(), issp).base(), s.end());
  return s;
}

double parse_double(const std::string& s, const std::string& what, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail(ErrorCode::kInvalidAnnotation, "line " + std::to_string(line) + ": bad " + what + " '" + s + "'");
  }
}

int class_index(const std::string& label) {
  for (std::size_t i = 0; i < kTianchiClasses.size(); ++i) {
    if (label == kTianchiClasses[i]) return static_cast<int>(i);
  }
  fail(ErrorCode::kInvalidAnnotation, "unknown lesion class '" + label + "'");
}

// Seeded stream per (seed, salt) so per-class shuffles are independent of
// class iteration order.
std::mt19937_64 stream(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(salt >> 32)};
  return std::mt19937_64(seq);
}

std::map<int, std::vector<std::size_t>> by_label(const std::vector<LabeledLesion>& lesions) {
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < lesions.size(); ++i) groups[lesions[i].label].push_back(i);
  return groups;
}

}  // namespace

std::string to_string(DatasetMode mode) {
  switch (mode) {
    case DatasetMode::kLidc: return "lidc";
    case DatasetMode::kLndb: return "lndb";
    case DatasetMode::kTianchi: return "tianchi";
  }
  return "lidc";
}

DatasetMode dataset_mode_from_string(const std::string& text) {
  if (text == "lidc") return DatasetMode::kLidc;
  if (text == "lndb") return DatasetMode::kLndb;
  if (text == "tianchi") return DatasetMode::kTianchi;
  fail(ErrorCode::kConfiguration, "unknown dataset mode '" + text + "' (lidc, lndb, tianchi)");
}

void ManifestRow::validate() const {
  if (ratings.has_value() == class_label.has_value()) {
    fail(ErrorCode::kInvalidAnnotation, "lesion '" + lesion_id + "' needs exactly one of ratings or label");
  }
  if (!(longest_diameter_mm > 0.0)) fail(ErrorCode::kInvalidAnnotation, "lesion '" + lesion_id + "' has non-positive diameter");
  if (ratings && ratings->empty()) fail(ErrorCode::kInvalidAnnotation, "lesion '" + lesion_id + "' has an empty rating list");
  if (class_label) class_index(*class_label);
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorCode::kIo, "manifest not found: " + path.string());
  std::istringstream in(detail::read_text(path));
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::kInvalidAnnotation, "empty manifest " + path.string());
  const auto header = split_on(trim(line), ',');
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[trim(header[i])] = i;
  for (const char* required : {"volume_path", "lesion_id", "cx_mm", "cy_mm", "cz_mm", "diameter_mm", "slice_thickness_mm"}) {
    if (!col.count(required)) fail(ErrorCode::kInvalidAnnotation, std::string("manifest lacks column ") + required);
  }
  if (!col.count("ratings") && !col.count("label")) {
    fail(ErrorCode::kInvalidAnnotation, "manifest needs a ratings or label column");
  }

  std::vector<ManifestRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    const auto f = split_on(line, ',');
    if (f.size() != header.size()) {
      fail(ErrorCode::kInvalidAnnotation, "line " + std::to_string(lineno) + ": expected " +
                                              std::to_string(header.size()) + " fields");
    }
    auto get = [&](const char* name) { return trim(f[col.at(name)]); };
    ManifestRow row;
    row.volume_path = get("volume_path");
    row.lesion_id = get("lesion_id");
    row.center_mm = {parse_double(get("cx_mm"), "cx_mm", lineno), parse_double(get("cy_mm"), "cy_mm", lineno),
                     parse_double(get("cz_mm"), "cz_mm", lineno)};
    row.longest_diameter_mm = parse_double(get("diameter_mm"), "diameter_mm", lineno);
    row.slice_thickness_mm = parse_double(get("slice_thickness_mm"), "slice_thickness_mm", lineno);
    if (col.count("ratings") && !get("ratings").empty()) {
      std::vector<int> r;
      for (const auto& tok : split_on(get("ratings"), '|')) {
        r.push_back(static_cast<int>(parse_double(trim(tok), "rating", lineno)));
      }
      row.ratings = std::move(r);
    }
    if (col.count("label") && !get("label").empty()) row.class_label = get("label");
    row.validate();
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_manifest(const std::vector<ManifestRow>& rows, const std::filesystem::path& path) {
  std::ostringstream os;
  os.precision(17);
  os << "volume_path,lesion_id,cx_mm,cy_mm,cz_mm,diameter_mm,slice_thickness_mm,ratings,label\n";
  for (const auto& r : rows) {
    os << r.volume_path << ',' << r.lesion_id << ',' << r.center_mm[0] << ',' << r.center_mm[1] << ','
       << r.center_mm[2] << ',' << r.longest_diameter_mm << ',' << r.slice_thickness_mm << ',';
    if (r.ratings) {
      for (std::size_t i = 0; i < r.ratings->size(); ++i) os << (i ? "|" : "") << (*r.ratings)[i];
    }
    os << ',' << r.class_label.value_or("") << '\n';
  }
  detail::write_text(path, os.str());
}

Consensus consensus_label(std::span<const int> ratings, int min_raters) {
  if (ratings.empty()) fail(ErrorCode::kInvalidRating, "no ratings");
  for (int r : ratings) {
    if (r < 1 || r > 5) fail(ErrorCode::kInvalidRating, "rating " + std::to_string(r) + " outside 1..5");
  }
  if (static_cast<int>(ratings.size()) < min_raters) return Consensus::kExcluded;
  // Compare sum against 3 * count to keep the uncertain band exact.
  const long sum = std::accumulate(ratings.begin(), ratings.end(), 0L);
  const long pivot = 3L * static_cast<long>(ratings.size());
  if (sum < pivot) return Consensus::kBenign;
  if (sum > pivot) return Consensus::kMalignant;
  return Consensus::kExcluded;
}

int min_raters_for(DatasetMode mode) { return mode == DatasetMode::kLidc ? 3 : 1; }

std::vector<ManifestRow> filter_manifest(const std::vector<ManifestRow>& rows, DatasetMode mode) {
  if (mode == DatasetMode::kTianchi) return rows;
  constexpr double kMaxThicknessMm = 2.5;
  constexpr double kMinDiameterMm = 3.0;
  std::vector<ManifestRow> out;
  std::copy_if(rows.begin(), rows.end(), std::back_inserter(out), [](const ManifestRow& r) {
    return r.slice_thickness_mm <= kMaxThicknessMm && r.longest_diameter_mm >= kMinDiameterMm;
  });
  return out;
}

std::vector<std::string> class_names(DatasetMode mode) {
  if (mode == DatasetMode::kTianchi) return {kTianchiClasses.begin(), kTianchiClasses.end()};
  return {kBinaryClasses.begin(), kBinaryClasses.end()};
}

std::vector<LabeledLesion> label_manifest(const std::vector<ManifestRow>& rows, DatasetMode mode) {
  std::vector<LabeledLesion> out;
  for (const auto& row : filter_manifest(rows, mode)) {
    LabeledLesion lesion{row.lesion_id, 0, Split::kTrain, row.volume_path};
    if (mode == DatasetMode::kTianchi) {
      if (!row.class_label) fail(ErrorCode::kInvalidAnnotation, "lesion '" + row.lesion_id + "' lacks a class label");
      lesion.label = class_index(*row.class_label);
    } else {
      if (!row.ratings) fail(ErrorCode::kInvalidAnnotation, "lesion '" + row.lesion_id + "' lacks ratings");
      const auto c = consensus_label(*row.ratings, min_raters_for(mode));
      if (c == Consensus::kExcluded) continue;
      lesion.label = c == Consensus::kMalignant ? 1 : 0;
    }
    out.push_back(std::move(lesion));
  }
  return out;
}

std::pair<std::vector<LabeledLesion>, std::vector<LabeledLesion>> split_dataset(
    const std::vector<LabeledLesion>& lesions, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    fail(ErrorCode::kInvalidArgument, "test_fraction must lie in (0, 1)");
  }
  std::vector<bool> is_test(lesions.size(), false);
  for (auto& [label, members] : by_label(lesions)) {
    if (members.size() < 2) {
      fail(ErrorCode::kStratification, "class " + std::to_string(label) + " has fewer than two lesions");
    }
    auto rng = stream(seed, static_cast<std::uint64_t>(label));
    std::shuffle(members.begin(), members.end(), rng);
    auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(members.size())));
    n_test = std::clamp<std::size_t>(n_test, 1, members.size() - 1);
    for (std::size_t k = 0; k < n_test; ++k) is_test[members[k]] = true;
  }
  std::pair<std::vector<LabeledLesion>, std::vector<LabeledLesion>> out;
  for (std::size_t i = 0; i < lesions.size(); ++i) {
    LabeledLesion l = lesions[i];
    l.split = is_test[i] ? Split::kTest : Split::kTrain;
    (is_test[i] ? out.second : out.first).push_back(std::move(l));
  }
  return out;
}

std::vector<LabeledLesion> subsample_labels(const std::vector<LabeledLesion>& train, double fraction,
                                            std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) fail(ErrorCode::kInvalidArgument, "fraction must lie in (0, 1]");
  std::vector<bool> keep(train.size(), false);
  for (auto& [label, members] : by_label(train)) {
    auto rng = stream(seed ^ 0x5ca1ab1eULL, static_cast<std::uint64_t>(label));
    std::shuffle(members.begin(), members.end(), rng);
    auto n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(members.size())));
    n = std::clamp<std::size_t>(n, 1, members.size());
    for (std::size_t k = 0; k < n; ++k) keep[members[k]] = true;
  }
  std::vector<LabeledLesion> out;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (keep[i]) out.push_back(train[i]);
  }
  return out;
}

void write_split_json(const std::vector<LabeledLesion>& train, const std::vector<LabeledLesion>& test,
                      std::uint64_t seed, double fraction, const std::filesystem::path& path) {
  auto ids = [](const std::vector<LabeledLesion>& v) {
    std::vector<std::string> out;
    for (const auto& l : v) out.push_back(l.lesion_id);
    return out;
  };
  const nlohmann::json j = {{"train", ids(train)}, {"test", ids(test)}, {"seed", seed}, {"fraction", fraction}};
  detail::write_text(path, j.dump(2) + "\n");
}

}  // namespace mvcl
