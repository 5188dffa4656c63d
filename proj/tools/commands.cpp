#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mvcl/checkpoint.hpp"
#include "mvcl/errors.hpp"
#include "mvcl/eval.hpp"
#include "mvcl/pipeline.hpp"
#include "mvcl/synthetic.hpp"
#include "mvcl/views.hpp"
#include "mvcl/volume.hpp"

namespace mvcl::cli {
namespace fs = std::filesystem;
namespace {

std::string utc_stamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y%m%d-%H%M%S");
  return out.str();
}

void write_json(const nlohmann::json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kIo, path.string() + ": " + e.what());
  }
}

std::uint64_t lesion_seed(std::uint64_t seed, int cls, int index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(cls), static_cast<std::uint32_t>(index)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

std::string padded(int value, int width) {
  std::ostringstream out;
  out << std::setw(width) << std::setfill('0') << value;
  return out.str();
}

// Relative volume paths in a manifest are relative to the manifest itself.
fs::path volume_stem(const ManifestRow& row, const fs::path& manifest) {
  const fs::path p(row.volume_path);
  return p.is_absolute() ? p : manifest.parent_path() / p;
}

LesionCube cube_for(const ManifestRow& row, const fs::path& manifest, const RunConfig& config) {
  Volume volume = load_volume(volume_stem(row, manifest));
  const std::string crop = config.text("crop");
  const auto& dims = volume.dims();
  const auto& spacing = volume.spacing();
  const bool ready_cube = volume.normalized() && dims[0] == dims[1] && dims[1] == dims[2] && spacing[0] == 1.0 &&
                          spacing[1] == 1.0 && spacing[2] == 1.0;
  if (crop == "auto" && ready_cube) {
    LesionCube cube;
    cube.lesion_id = row.lesion_id;
    cube.side = dims[0];
    cube.data = volume.data();
    return cube;
  }
  CropPolicy policy;
  if (crop == "auto" || crop == "fixed") {
    policy = CropPolicy::fixed_nodule(config.real("crop_mm"));
  } else if (crop == "margin") {
    policy = CropPolicy::diameter_plus_margin(config.real("margin_mm"));
  } else {
    fail(ErrorCode::kConfiguration, "crop must be auto, fixed or margin, got '" + crop + "'");
  }
  if (!volume.normalized()) volume = hu_window(volume);
  volume = resample_isotropic(volume, 1.0);
  return crop_lesion(volume, row.center_mm, crop_side_for(policy, row.longest_diameter_mm), row.lesion_id);
}

// Labeled lesions whose views are present; a labeled lesion without views is
// a data error.
std::vector<LabeledLesion> labeled_lesions(const RunConfig& config, const ViewStore& store) {
  const auto labeled = label_manifest(read_manifest(config.path("manifest")), config.dataset());
  for (const auto& l : labeled) {
    if (!store.contains(l.lesion_id)) {
      fail(ErrorCode::kMissingData, "lesion '" + l.lesion_id + "' has no extracted views in " +
                                        config.path("views").string());
    }
  }
  if (labeled.empty()) fail(ErrorCode::kEmptyData, "manifest yields no labeled lesions");
  return labeled;
}

std::vector<ViewSet> view_sets(const ViewStore& store, const std::vector<LabeledLesion>& lesions) {
  std::vector<ViewSet> out;
  out.reserve(lesions.size());
  for (const auto& l : lesions) out.push_back(store.get(l.lesion_id));
  return out;
}

std::vector<int> labels_of(const std::vector<LabeledLesion>& lesions) {
  std::vector<int> out;
  for (const auto& l : lesions) out.push_back(l.label);
  return out;
}

void write_predictions(const Tensor& probabilities, const std::vector<LabeledLesion>& test, const fs::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << "lesion_id,label";
  for (std::size_t c = 0; c < probabilities.dim(1); ++c) out << ",p" << c;
  out << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < test.size(); ++i) {
    out << test[i].lesion_id << ',' << test[i].label;
    for (std::size_t c = 0; c < probabilities.dim(1); ++c) out << ',' << probabilities[i * probabilities.dim(1) + c];
    out << '\n';
  }
}

struct EvalData {
  ModelState state;
  ViewStore store;
  std::vector<LabeledLesion> train, test, labeled_subset;
  std::size_t classes = 0;
};

EvalData prepare_eval(const RunConfig& config, const fs::path& run_dir) {
  EvalData d;
  d.state = checkpoint_load(config.path("checkpoint"));
  d.store = ViewStore::load_directory(config.path("views"));
  const auto seed = config.unsigned_integer("seed");
  std::tie(d.train, d.test) = split_dataset(labeled_lesions(config, d.store), config.real("test_fraction"), seed);
  d.labeled_subset = subsample_labels(d.train, config.real("fraction"), seed);
  d.classes = class_names(config.dataset()).size();
  write_split_json(d.labeled_subset, d.test, seed, config.real("fraction"), run_dir / "split.json");
  return d;
}

void write_metrics(const std::string& protocol, const RunConfig& config, const EvalData& d, const MetricReport& report,
                   const fs::path& run_dir) {
  nlohmann::json j;
  j["protocol"] = protocol;
  j["fraction"] = config.real("fraction");
  j["seed"] = config.unsigned_integer("seed");
  j["dataset"] = config.text("dataset");
  j["classes"] = class_names(config.dataset());
  j["n_labeled"] = d.labeled_subset.size();
  j["n_test"] = d.test.size();
  j["metrics"] = report;
  write_json(j, run_dir / "metrics.json");
  std::cout << protocol << " fraction " << config.real("fraction") << ": accuracy " << report.accuracy << ", auc "
            << report.auc << '\n';
}

}  // namespace

fs::path open_run_dir(const RunConfig& config, const std::string& command) {
  const fs::path root = config.path("out");
  fs::create_directories(root);
  const std::string base = command + "-" + utc_stamp();
  fs::path dir = root / base;
  for (int k = 1; fs::exists(dir); ++k) dir = root / (base + "-" + std::to_string(k));
  fs::create_directories(dir);
  const fs::path latest = root / "LATEST";
  std::error_code ec;
  fs::remove(latest, ec);
  fs::create_directory_symlink(dir.filename(), latest, ec);
  if (ec) fail(ErrorCode::kIo, "cannot update " + latest.string() + ": " + ec.message());
  config.save(dir / "config.resolved");
  return dir;
}

void resolve_optimizer_keys(RunConfig& config) {
  const auto preset = ModelConfig::preset(config.text("preset")).optimizer;
  auto fill = [&](const char* key, const std::string& value) {
    if (!config.has_value(key)) config.set(key, value);
  };
  auto number = [](double v) {
    std::ostringstream out;
    out << std::setprecision(17) << v;
    return out.str();
  };
  fill("epochs", std::to_string(preset.epochs));
  fill("lr", number(preset.base_lr));
  fill("momentum", number(preset.momentum));
  fill("weight_decay", number(preset.weight_decay));
  fill("batch_size", std::to_string(preset.batch_size));
  std::string decays;
  for (int e : preset.decay_epochs) decays += (decays.empty() ? "" : ",") + std::to_string(e);
  fill("decay_epochs", decays);
  fill("decay_factor", number(preset.decay_factor));
}

void cmd_gen_synthetic(const RunConfig& config, const fs::path& run_dir) {
  const long per_class = config.integer("n_per_class");
  const long side = config.integer("side");
  if (per_class < 1) fail(ErrorCode::kConfiguration, "n_per_class must be >= 1");
  const auto seed = config.unsigned_integer("seed");
  SyntheticParams params;
  params.noise_sigma = config.real("noise_sigma");
  fs::create_directories(run_dir / "volumes");
  std::vector<ManifestRow> rows;
  for (int c = 0; c < 2; ++c) {
    const auto cls = c == 0 ? SyntheticClass::kSmoothBlob : SyntheticClass::kSpiculatedBlob;
    for (int i = 0; i < per_class; ++i) {
      auto cube = gen_synthetic_lesion(cls, static_cast<std::size_t>(side), lesion_seed(seed, c, i), params);
      cube.lesion_id = to_string(cls) + "_" + padded(i, 4);
      const std::string stem = "volumes/" + cube.lesion_id;
      save_volume(cube.to_volume(), run_dir / stem);
      // Unanimous ratings encode the class under the nodule labeling rule:
      // smooth -> benign, spiculated -> malignant.
      ManifestRow row;
      row.volume_path = stem;
      row.lesion_id = cube.lesion_id;
      const double centre = (static_cast<double>(side) - 1.0) / 2.0;
      row.center_mm = {centre, centre, centre};
      row.longest_diameter_mm = static_cast<double>(side) / 2.0;
      row.slice_thickness_mm = 1.0;
      row.ratings = std::vector<int>(3, c == 0 ? 1 : 5);
      rows.push_back(std::move(row));
    }
  }
  write_manifest(rows, run_dir / "manifest.csv");
  std::cout << "wrote " << rows.size() << " synthetic lesions to " << run_dir.string() << '\n';
}

void cmd_extract_views(const RunConfig& config, const fs::path& run_dir) {
  const fs::path manifest = config.path("manifest");
  if (!fs::exists(manifest)) fail(ErrorCode::kMissingData, "manifest not found: " + manifest.string());
  const auto rows = read_manifest(manifest);
  if (rows.empty()) fail(ErrorCode::kEmptyData, "manifest has no rows: " + manifest.string());
  const auto planes = config.int_list("planes");
  const long out_size = config.integer("out_size");
  if (out_size < 1) fail(ErrorCode::kConfiguration, "out_size must be >= 1");
  ViewStore store;
  for (const auto& row : rows) {
    store.add(extract_views(cube_for(row, manifest, config), planes, static_cast<std::size_t>(out_size)));
  }
  store.save_directory(run_dir / "views");
  std::cout << "extracted " << planes.size() << " views for " << store.size() << " lesions into "
            << (run_dir / "views").string() << '\n';
}

void cmd_pretrain(RunConfig& config, const fs::path& run_dir) {
  const auto store = ViewStore::load_directory(config.path("views"));
  if (store.size() == 0) fail(ErrorCode::kEmptyData, "no views in " + config.path("views").string());
  const auto seed = config.unsigned_integer("seed");

  auto model = ModelConfig::preset(config.text("preset"));
  model.plane_ids = config.int_list("planes");
  model.optimizer.epochs = static_cast<int>(config.integer("epochs"));
  model.optimizer.base_lr = config.real("lr");
  model.optimizer.momentum = config.real("momentum");
  model.optimizer.weight_decay = config.real("weight_decay");
  model.optimizer.batch_size = static_cast<std::size_t>(config.integer("batch_size"));
  model.optimizer.decay_epochs = config.int_list("decay_epochs");
  model.optimizer.decay_factor = config.real("decay_factor");
  model.validate();

  // With a manifest the held-out test lesions never enter pretraining.
  std::vector<std::string> train_ids = store.ids();
  std::vector<std::string> probe_ids = train_ids;
  if (config.has_value("manifest")) {
    const auto [train, test] = split_dataset(labeled_lesions(config, store), config.real("test_fraction"), seed);
    write_split_json(train, test, seed, 1.0, run_dir / "split.json");
    std::set<std::string> held_out;
    probe_ids.clear();
    for (const auto& l : test) {
      held_out.insert(l.lesion_id);
      probe_ids.push_back(l.lesion_id);
    }
    std::erase_if(train_ids, [&](const std::string& id) { return held_out.count(id) != 0; });
  }

  ModelState state =
      config.has_value("resume") ? checkpoint_load(config.path("resume")) : ModelState::initialize(model, seed);
  if (config.has_value("resume") && !(state.config() == model)) {
    fail(ErrorCode::kConfiguration, "resume checkpoint was trained with a different model configuration");
  }

  PretrainConfig pc;
  pc.plane_ids = model.plane_ids;
  pc.optimizer = model.optimizer;
  pc.mode = config.loss_mode();
  pc.tau = config.real("tau");
  pc.out_size = store.get(train_ids.front()).out_size();
  pc.seed = seed;
  pc.log_every_steps = static_cast<int>(config.integer("log_every"));
  pc.checkpoint_every_epochs = static_cast<int>(config.integer("checkpoint_every"));
  pc.checkpoint_dir = run_dir / "checkpoints";
  pc.log_path = run_dir / "train_log.jsonl";
  pc.threads = static_cast<int>(config.integer("threads"));

  int last_epoch = -1;
  auto result = pretrain(store.subset(train_ids), std::move(state), pc, [&](const TrainLogRow& row) {
    if (row.epoch != last_epoch) {
      last_epoch = row.epoch;
      std::cout << "epoch " << row.epoch << " step " << row.step << " loss " << row.loss << " lr " << row.lr << '\n';
    }
  });
  checkpoint_save(result.state, run_dir / "model.ckpt");

  const auto projections = embed_projections(result.state, store, probe_ids, pc.tau);
  const auto diag = embedding_diagnostics(projections);
  write_json({{"within_mean", diag.within_mean},
              {"between_mean", diag.between_mean},
              {"gap", diag.gap},
              {"lesions", probe_ids.size()}},
             run_dir / "diagnostics.json");
  write_pca_csv(diag, projections, pc.plane_ids, run_dir / "pca.csv");
  std::cout << "embedding gap " << diag.gap << "; checkpoint " << (run_dir / "model.ckpt").string() << '\n';
}

void cmd_linear_eval(const RunConfig& config, const fs::path& run_dir) {
  auto d = prepare_eval(config, run_dir);
  const auto seed = config.unsigned_integer("seed");
  auto train_records = concat_representations(d.state, view_sets(d.store, d.labeled_subset));
  auto test_records = concat_representations(d.state, view_sets(d.store, d.test));
  HeadTrainConfig hc;
  hc.epochs = static_cast<int>(config.integer("head_epochs"));
  hc.lr = config.real("head_lr");
  hc.seed = seed;
  const auto head = train_linear_head(d.state, train_records, labels_of(d.labeled_subset), d.classes, hc);
  const auto probabilities = predict_proba(head, test_records);
  write_predictions(probabilities, d.test, run_dir / "predictions.csv");
  write_metrics("linear", config, d, classification_report(probabilities, labels_of(d.test)), run_dir);
}

void cmd_finetune(const RunConfig& config, const fs::path& run_dir) {
  auto d = prepare_eval(config, run_dir);
  FineTuneConfig fc;
  fc.epochs = static_cast<int>(config.integer("ft_epochs"));
  fc.lr = config.real("ft_lr");
  fc.encoder_lr = config.real("ft_encoder_lr");
  fc.batch_size = static_cast<std::size_t>(config.integer("ft_batch_size"));
  fc.seed = config.unsigned_integer("seed");
  auto [tuned, head] = fine_tune(d.state, view_sets(d.store, d.labeled_subset), labels_of(d.labeled_subset),
                                 d.classes, fc);
  const auto probabilities = predict_proba(tuned, head, view_sets(d.store, d.test));
  write_predictions(probabilities, d.test, run_dir / "predictions.csv");
  checkpoint_save(tuned, run_dir / "model.ckpt");
  write_metrics("finetune", config, d, classification_report(probabilities, labels_of(d.test)), run_dir);
}

void cmd_report(const RunConfig& config, const fs::path& run_dir) {
  const fs::path root = config.has_value("runs") ? config.path("runs") : config.path("out");
  if (!fs::is_directory(root)) fail(ErrorCode::kMissingData, "run directory not found: " + root.string());

  struct Group {
    std::vector<double> auc, sensitivity, specificity, accuracy, precision;
  };
  std::map<std::pair<std::string, double>, Group> groups;
  std::vector<fs::path> sources;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_symlink() || !entry.is_directory()) continue;
    const auto metrics = entry.path() / "metrics.json";
    if (!fs::exists(metrics)) continue;
    sources.push_back(metrics);
  }
  std::sort(sources.begin(), sources.end());
  for (const auto& path : sources) {
    const auto j = read_json(path);
    auto& g = groups[{j.at("protocol").get<std::string>(), j.at("fraction").get<double>()}];
    const auto& m = j.at("metrics");
    g.auc.push_back(m.at("auc").get<double>());
    g.sensitivity.push_back(m.at("sensitivity").get<double>());
    g.specificity.push_back(m.at("specificity").get<double>());
    g.accuracy.push_back(m.at("accuracy").get<double>());
    g.precision.push_back(m.at("precision").get<double>());
  }
  if (groups.empty()) fail(ErrorCode::kEmptyData, "no metrics.json found under " + root.string());

  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  auto stddev = [&](const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
  };
  const fs::path csv = run_dir / "report.csv";
  std::ofstream out(csv);
  if (!out) fail(ErrorCode::kIo, "cannot write " + csv.string());
  out << "protocol,fraction,runs,auc_mean,auc_std,sensitivity_mean,specificity_mean,accuracy_mean,accuracy_std,"
         "precision_mean\n";
  out << std::setprecision(10);
  for (const auto& [key, g] : groups) {
    out << key.first << ',' << key.second << ',' << g.auc.size() << ',' << mean(g.auc) << ',' << stddev(g.auc) << ','
        << mean(g.sensitivity) << ',' << mean(g.specificity) << ',' << mean(g.accuracy) << ',' << stddev(g.accuracy)
        << ',' << mean(g.precision) << '\n';
  }
  std::cout << "aggregated " << sources.size() << " runs into " << groups.size() << " rows: " << csv.string() << '\n';
}

}  // namespace mvcl::cli
