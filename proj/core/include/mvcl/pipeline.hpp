#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mvcl/contrastive.hpp"
#include "mvcl/model.hpp"
#include "mvcl/views.hpp"

namespace mvcl {

/// In-memory cache of extracted views keyed by lesion id.
class ViewStore {
 public:
  void add(ViewSet set);  // kInvalidArgument on a duplicate lesion id
  bool contains(const std::string& lesion_id) const { return sets_.count(lesion_id) != 0; }
  const ViewSet& get(const std::string& lesion_id) const;  // kMissingData if absent
  std::vector<std::string> ids() const;                     // sorted
  std::size_t size() const noexcept { return sets_.size(); }

  // Restricts the store to `ids`, which must all be present.
  ViewStore subset(std::span<const std::string> ids) const;

  // One `<lesion_id>.raw/.json` pair per lesion.
  void save_directory(const std::filesystem::path& dir) const;
  static ViewStore load_directory(const std::filesystem::path& dir);

 private:
  std::map<std::string, ViewSet> sets_;
};

/// One [N, 1, H, W] tensor per plane id, rows in the order of `lesion_ids`.
std::vector<Tensor> assemble_batch(const ViewStore& store, std::span<const std::string> lesion_ids,
                                   std::span<const int> plane_ids);

struct PretrainConfig {
  std::vector<int> plane_ids{1, 2, 3, 4, 5, 6, 7, 8, 9};
  OptimizerConfig optimizer;
  LossMode mode = LossMode::kCmcInclusive;
  Real tau = kDefaultTemperature;
  std::size_t out_size = kDefaultViewSize;
  std::uint64_t seed = 0;
  int log_every_steps = 1;
  int checkpoint_every_epochs = 0;  // 0 disables periodic checkpoints
  std::filesystem::path checkpoint_dir;
  std::filesystem::path log_path;  // JSON lines, appended
  int threads = 1;                 // views are processed in parallel when > 1
  // Returns after this many epochs of the current call, as if interrupted.
  std::optional<int> stop_after_epochs;

  // >= 2 distinct planes that match the model's planes.
  void validate(const ModelState& state) const;
};

struct TrainLogRow {
  int epoch = 0;
  long step = 0;
  Real loss = 0.0;
  Real lr = 0.0;
  double wall_ms = 0.0;
};

void to_json(nlohmann::json& j, const TrainLogRow& row);
void from_json(const nlohmann::json& j, TrainLogRow& row);

struct StepResult {
  Real loss = 0.0;
  ProjectionBatch projections;
};

/// Forward through every private encoder and projector in training mode,
/// batch_loss, and backward through the whole graph. Gradients are zeroed
/// first and left in the parameters; nothing is updated. A non-finite loss
/// raises kNumeric with the similarity matrices in the message.
StepResult forward_backward(ModelState& state, std::span<const Tensor> batch, LossMode mode, Real tau,
                            int threads = 1);

/// forward_backward followed by sgd_step at lr_at(state.epoch()). The loss is
/// the value before the update.
StepResult pretrain_step(ModelState& state, std::span<const Tensor> batch, const PretrainConfig& config);

struct PretrainResult {
  ModelState state;
  std::vector<TrainLogRow> log;
};

/// Runs epochs state.epoch() .. epochs-1. Each epoch shuffles the sorted
/// lesion ids with a generator seeded from (seed, epoch) and drops the last
/// incomplete batch. When the store holds fewer lesions than the batch size,
/// one batch of every lesion is used.
PretrainResult pretrain(const ViewStore& store, ModelState state, const PretrainConfig& config,
                        const std::function<void(const TrainLogRow&)>& on_step = {});

/// Evaluation-mode projections of `lesion_ids` for every model plane.
ProjectionBatch embed_projections(ModelState& state, const ViewStore& store, std::span<const std::string> lesion_ids,
                                  Real tau = kDefaultTemperature, std::size_t batch_size = 64);

}  // namespace mvcl
