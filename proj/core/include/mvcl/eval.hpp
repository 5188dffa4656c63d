#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mvcl/contrastive.hpp"
#include "mvcl/model.hpp"
#include "mvcl/views.hpp"

namespace mvcl {

/// Encoder outputs of every view of one lesion, concatenated in plane order.
struct RepresentationRecord {
  std::string lesion_id;
  std::vector<int> plane_ids;
  std::size_t per_view_dim = 0;
  std::vector<Real> features;  // plane_ids.size() * per_view_dim
  int label = -1;
};

/// [1, 1, H, W] tensor of one view.
Tensor view_tensor(const View2D& view);

/// Runs every view through its private encoder in evaluation mode. The
/// projector is not used. Views are matched to the model's planes by id, so
/// the order of `views.views` is irrelevant.
RepresentationRecord concat_representations(ModelState& state, const ViewSet& views);
std::vector<RepresentationRecord> concat_representations(ModelState& state, std::span<const ViewSet> sets,
                                                         std::size_t batch_size = 64);

/// Single fully connected layer on the concatenated representation.
struct HeadState {
  Tensor weight;  // [classes, features]
  Tensor bias;    // [classes]
  bool from_scratch = true;

  std::size_t classes() const { return weight.dim(0); }
  std::size_t features() const { return weight.dim(1); }
  static HeadState fresh(std::size_t classes, std::size_t features, std::uint64_t seed);
};

struct HeadTrainConfig {
  int epochs = 100;
  Real lr = 0.01;
  Real momentum = 0.9;
  Real weight_decay = 0.0;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
};

/// Softmax cross-entropy on frozen representations. Features are z-scored
/// with training-set statistics during training and the returned head has
/// that scaling folded in, so it applies to raw representations. The encoder hash of
/// `frozen` is taken before and after training (and after every epoch_hook
/// call); any change raises kFrozenViolation.
HeadState train_linear_head(const ModelState& frozen, std::span<const RepresentationRecord> records,
                            std::span<const int> labels, std::size_t classes, const HeadTrainConfig& config,
                            const std::function<void(int)>& epoch_hook = {});

/// Row-wise class probabilities [n, classes].
Tensor predict_proba(const HeadState& head, std::span<const RepresentationRecord> records);

struct FineTuneConfig {
  int epochs = 30;
  Real lr = 0.01;          // head
  Real encoder_lr = 1e-4;  // private encoders
  Real momentum = 0.9;
  Real weight_decay = 1e-4;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

/// Jointly trains every private encoder and a fresh head on the labeled views.
/// As in train_linear_head, the head works on z-scored features; the
/// statistics come from the initial representations of `sets`, stay fixed and
/// are folded into the returned head. Projectors are untouched.
std::pair<ModelState, HeadState> fine_tune(const ModelState& state, std::span<const ViewSet> sets,
                                           std::span<const int> labels, std::size_t classes,
                                           const FineTuneConfig& config);

/// Class probabilities of a fine-tuned (or frozen) model + head.
Tensor predict_proba(ModelState& state, const HeadState& head, std::span<const ViewSet> sets);

struct MetricReport {
  Real auc = 0.0;
  Real sensitivity = 0.0;
  Real specificity = 0.0;
  Real accuracy = 0.0;
  Real precision = 0.0;
  std::vector<Real> per_class_auc;
  std::size_t n_samples = 0;
};

void to_json(nlohmann::json& j, const MetricReport& r);

/// Rank-based AUC: concordant positive/negative pairs, ties count one half.
Real roc_auc(std::span<const Real> scores, std::span<const int> labels);

/// Threshold metrics predict positive when score >= threshold.
/// kUndefinedMetric unless both classes are present.
MetricReport binary_metrics(std::span<const Real> scores, std::span<const int> labels, Real threshold = 0.5);

Real multiclass_accuracy(std::span<const int> predictions, std::span<const int> labels);
std::vector<Real> one_vs_rest_auc(const Tensor& scores, std::span<const int> labels);

/// Binary problems use the positive-class probability; multi-class problems
/// report macro-averaged one-vs-rest metrics.
MetricReport classification_report(const Tensor& probabilities, std::span<const int> labels);

struct PcaPoint {
  std::size_t lesion = 0;
  std::size_t view = 0;
  Real x = 0.0;
  Real y = 0.0;
};

struct EmbeddingDiagnostics {
  Real within_mean = 0.0;   // same lesion, different views
  Real between_mean = 0.0;  // different lesions, any views
  Real gap = 0.0;
  std::vector<PcaPoint> pca;
};

EmbeddingDiagnostics embedding_diagnostics(const ProjectionBatch& projections);

/// lesion_id,view_id,x,y
void write_pca_csv(const EmbeddingDiagnostics& diag, const ProjectionBatch& projections,
                   std::span<const int> plane_ids, const std::filesystem::path& path);

}  // namespace mvcl
