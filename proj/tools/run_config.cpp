#include "run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "mvcl/errors.hpp"

namespace mvcl::cli {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

const KeySpec* find_key(const std::string& key) {
  for (const auto& spec : key_schema()) {
    if (key == spec.key) return &spec;
  }
  return nullptr;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (text.empty() || ec != std::errc{} || ptr != end) {
    fail(ErrorCode::kConfiguration, "key '" + key + "': '" + text + "' is not a valid number");
  }
  return value;
}

}  // namespace

const std::vector<KeySpec>& key_schema() {
  // Empty defaults for the optimizer keys mean "take the value from the preset".
  static const std::vector<KeySpec> schema{
      {"seed", "0", "seed for initialization, shuffling, splits and heads"},
      {"planes", "1,2,3,4,5,6,7,8,9", "comma-separated view plane ids"},
      {"fraction", "1.0", "labeled fraction of the training split used for evaluation"},
      {"mode", "cmc", "loss mode: cmc or as-written"},
      {"threads", "1", "worker threads for per-view computation"},
      {"out", "runs", "root directory for run directories", true},
      {"dataset", "lidc", "manifest labeling rule: lidc, lndb or tianchi"},
      {"manifest", "", "lesion manifest CSV", true},
      {"views", "", "directory of extracted views", true},
      {"checkpoint", "", "model checkpoint for evaluation", true},
      {"resume", "", "checkpoint to continue pretraining from", true},
      {"runs", "", "directory scanned by report (defaults to out)", true},
      {"n_per_class", "100", "synthetic lesions per class"},
      {"side", "32", "synthetic cube side in voxels"},
      {"noise_sigma", "0.02", "synthetic additive noise"},
      {"out_size", "224", "view side in pixels"},
      {"crop", "auto", "auto (whole cube when already isotropic and normalized), fixed or margin"},
      {"crop_mm", "64", "fixed crop side in mm"},
      {"margin_mm", "20", "margin added to the lesion diameter for margin crops"},
      {"preset", "standard", "architecture preset: standard, desk or test"},
      {"tau", "0.07", "contrastive temperature"},
      {"epochs", "", "pretraining epochs"},
      {"lr", "", "pretraining base learning rate"},
      {"momentum", "", "SGD momentum"},
      {"weight_decay", "", "SGD weight decay"},
      {"batch_size", "", "pretraining batch size"},
      {"decay_epochs", "", "comma-separated epochs at which the learning rate decays"},
      {"decay_factor", "", "learning-rate multiplier at each decay epoch"},
      {"test_fraction", "0.2", "held-out test fraction of labeled lesions"},
      {"log_every", "1", "training log cadence in steps"},
      {"checkpoint_every", "0", "periodic checkpoint cadence in epochs (0 disables)"},
      {"head_epochs", "100", "linear head epochs"},
      {"head_lr", "0.01", "linear head learning rate"},
      {"ft_epochs", "30", "fine-tuning epochs"},
      {"ft_lr", "0.01", "fine-tuning head learning rate"},
      {"ft_encoder_lr", "0.0001", "fine-tuning encoder learning rate"},
      {"ft_batch_size", "32", "fine-tuning batch size"},
  };
  return schema;
}

RunConfig::RunConfig() {
  for (const auto& spec : key_schema()) values_[spec.key] = spec.default_value;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot read config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  auto config = parse(buffer.str(), path.string());
  const auto base = std::filesystem::absolute(path).parent_path();
  config.resolve_paths(base);
  return config;
}

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> seen;
  for (int number = 1; std::getline(in, line); ++number) {
    const std::string body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto eq = body.find('=');
    const std::string where = origin + ":" + std::to_string(number);
    if (eq == std::string::npos) fail(ErrorCode::kConfiguration, where + ": expected key = value");
    const std::string key = trim(body.substr(0, eq));
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) {
      fail(ErrorCode::kConfiguration, where + ": duplicate key '" + key + "'");
    }
    if (!find_key(key)) fail(ErrorCode::kConfiguration, where + ": unknown key '" + key + "'");
    seen.push_back(key);
    config.values_[key] = trim(body.substr(eq + 1));
  }
  return config;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!find_key(key)) fail(ErrorCode::kConfiguration, "unknown key '" + key + "'");
  values_[key] = value;
}

const std::string& RunConfig::raw(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) fail(ErrorCode::kConfiguration, "unknown key '" + key + "'");
  return it->second;
}

long RunConfig::integer(const std::string& key) const { return parse_number<long>(key, raw(key)); }

std::uint64_t RunConfig::unsigned_integer(const std::string& key) const {
  return parse_number<std::uint64_t>(key, raw(key));
}

double RunConfig::real(const std::string& key) const { return parse_number<double>(key, raw(key)); }

std::vector<int> RunConfig::int_list(const std::string& key) const {
  std::vector<int> out;
  std::stringstream in(raw(key));
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(parse_number<int>(key, trim(item)));
  return out;
}

std::filesystem::path RunConfig::path(const std::string& key) const {
  if (raw(key).empty()) fail(ErrorCode::kConfiguration, "key '" + key + "' is required for this command");
  return raw(key);
}

LossMode RunConfig::loss_mode() const { return loss_mode_from_string(raw("mode")); }

DatasetMode RunConfig::dataset() const { return dataset_mode_from_string(raw("dataset")); }

void RunConfig::resolve_paths(const std::filesystem::path& base) {
  for (const auto& spec : key_schema()) {
    auto& value = values_[spec.key];
    if (spec.is_path && !value.empty()) {
      value = std::filesystem::weakly_canonical(base / std::filesystem::path(value)).string();
    }
  }
}

std::string RunConfig::serialize() const {
  std::ostringstream out;
  for (const auto& spec : key_schema()) out << spec.key << " = " << values_.at(spec.key) << '\n';
  return out.str();
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << serialize();
}

}  // namespace mvcl::cli
