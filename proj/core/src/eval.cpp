#include "mvcl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "io_util.hpp"
#include "mvcl/errors.hpp"
#include "mvcl/optim.hpp"

namespace mvcl {

namespace {

using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void check_planes(const ModelState& state, const ViewSet& set) {
  auto ids = set.plane_ids();
  std::sort(ids.begin(), ids.end());
  if (ids != state.config().plane_ids) {
    fail(ErrorCode::kConfiguration, "lesion '" + set.lesion_id + "' views do not match the model's planes");
  }
}

// [B, 1, H, W] batch of one plane across `sets[idx]`.
Tensor stack_plane(std::span<const ViewSet> sets, std::span<const std::size_t> idx, int plane_id) {
  const auto& first = sets[idx.front()].view_for(plane_id);
  const std::size_t H = first.size;
  Tensor batch({idx.size(), 1, H, H});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto& v = sets[idx[b]].view_for(plane_id);
    if (v.size != H) fail(ErrorCode::kShape, "views in a batch must share one size");
    std::copy(v.pixels.begin(), v.pixels.end(), batch.data() + b * H * H);
  }
  return batch;
}

// Softmax rows of logits in place.
void softmax_rows(RowMatrix& logits) {
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const Real mx = logits.row(r).maxCoeff();
    logits.row(r) = (logits.row(r).array() - mx).exp();
    logits.row(r) /= logits.row(r).sum();
  }
}

struct HeadParams {
  Parameter weight;
  Parameter bias;

  explicit HeadParams(const HeadState& h)
      : weight("head.weight", h.weight.shape()), bias("head.bias", h.bias.shape()) {
    weight.value = h.weight;
    bias.value = h.bias;
  }
  HeadState state() const { return {weight.value, bias.value, true}; }
};

// Mean softmax cross-entropy; accumulates head gradients and returns the
// gradient w.r.t. the inputs.
RowMatrix head_step(HeadParams& head, const RowMatrix& x, std::span<const int> labels) {
  const auto B = x.rows();
  const auto C = static_cast<Eigen::Index>(head.weight.value.dim(0));
  const auto F = static_cast<Eigen::Index>(head.weight.value.dim(1));
  Eigen::Map<const RowMatrix> w(head.weight.value.data(), C, F);
  Eigen::Map<const Eigen::RowVectorXd> b(head.bias.value.data(), C);
  RowMatrix p = x * w.transpose();
  p.rowwise() += b;
  softmax_rows(p);
  for (Eigen::Index r = 0; r < B; ++r) p(r, labels[static_cast<std::size_t>(r)]) -= 1.0;
  p /= static_cast<Real>(B);
  Eigen::Map<RowMatrix> dw(head.weight.grad.data(), C, F);
  Eigen::Map<Eigen::RowVectorXd> db(head.bias.grad.data(), C);
  dw.noalias() += p.transpose() * x;
  db += p.colwise().sum();
  return p * w;
}

void check_labels(std::span<const int> labels, std::size_t classes) {
  if (classes < 2) fail(ErrorCode::kInvalidArgument, "at least two classes are required");
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= classes) fail(ErrorCode::kInvalidArgument, "label out of range");
  }
  std::vector<bool> seen(classes, false);
  for (int l : labels) seen[static_cast<std::size_t>(l)] = true;
  if (std::count(seen.begin(), seen.end(), true) < 2) {
    fail(ErrorCode::kUndefinedMetric, "training labels contain fewer than two classes");
  }
}

// Per-feature z-scoring with fixed statistics; constant features keep unit scale.
struct FeatureScaling {
  Eigen::RowVectorXd mu;
  Eigen::RowVectorXd sigma;

  static FeatureScaling of(const RowMatrix& x) {
    FeatureScaling s;
    s.mu = x.colwise().mean();
    s.sigma = ((x.rowwise() - s.mu).array().square().colwise().sum() / static_cast<Real>(x.rows())).sqrt();
    for (Eigen::Index c = 0; c < s.sigma.size(); ++c) {
      if (s.sigma(c) < 1e-12) s.sigma(c) = 1.0;
    }
    return s;
  }

  RowMatrix apply(const RowMatrix& x) const { return (x.rowwise() - mu).array().rowwise() / sigma.array(); }

  // Head on scaled features -> equivalent head on raw features.
  HeadState fold(HeadState head) const {
    Eigen::Map<RowMatrix> w(head.weight.data(), static_cast<Eigen::Index>(head.classes()),
                            static_cast<Eigen::Index>(head.features()));
    Eigen::Map<Eigen::VectorXd> b(head.bias.data(), static_cast<Eigen::Index>(head.classes()));
    w.array().rowwise() /= sigma.array();
    b -= w * mu.transpose();
    return head;
  }
};

std::vector<std::size_t> iota_vec(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace

Tensor view_tensor(const View2D& view) {
  return Tensor({1, 1, view.size, view.size}, std::vector<Real>(view.pixels.begin(), view.pixels.end()));
}

RepresentationRecord concat_representations(ModelState& state, const ViewSet& views) {
  return concat_representations(state, std::span<const ViewSet>(&views, 1)).front();
}

std::vector<RepresentationRecord> concat_representations(ModelState& state, std::span<const ViewSet> sets,
                                                         std::size_t batch_size) {
  const auto& planes = state.config().plane_ids;
  const std::size_t d = state.config().encoder.output_dim();
  std::vector<RepresentationRecord> out(sets.size());
  for (std::size_t i = 0; i < sets.size(); ++i) {
    check_planes(state, sets[i]);
    out[i].lesion_id = sets[i].lesion_id;
    out[i].plane_ids = planes;
    out[i].per_view_dim = d;
    out[i].features.assign(planes.size() * d, 0.0);
  }
  for (std::size_t start = 0; start < sets.size(); start += batch_size) {
    const std::size_t end = std::min(sets.size(), start + batch_size);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    for (std::size_t m = 0; m < planes.size(); ++m) {
      const Tensor y = encoder_forward(state, planes[m], stack_plane(sets, idx, planes[m]), Mode::kEval);
      for (std::size_t b = 0; b < idx.size(); ++b) {
        std::copy(y.data() + b * d, y.data() + (b + 1) * d, out[idx[b]].features.begin() + static_cast<std::ptrdiff_t>(m * d));
      }
    }
  }
  return out;
}

HeadState HeadState::fresh(std::size_t classes, std::size_t features, std::uint64_t seed) {
  HeadState h{Tensor({classes, features}), Tensor({classes}), true};
  std::mt19937_64 rng(seed ^ 0x4ead5eedULL);
  std::normal_distribution<Real> dist(0.0, std::sqrt(1.0 / static_cast<Real>(features)));
  for (auto& v : h.weight.values()) v = dist(rng);
  return h;
}

HeadState train_linear_head(const ModelState& frozen, std::span<const RepresentationRecord> records,
                            std::span<const int> labels, std::size_t classes, const HeadTrainConfig& config,
                            const std::function<void(int)>& epoch_hook) {
  if (records.empty()) fail(ErrorCode::kEmptyData, "no training records");
  if (records.size() != labels.size()) fail(ErrorCode::kShape, "records and labels differ in length");
  check_labels(labels, classes);
  const std::uint64_t before = encoder_hash(frozen);
  auto check_frozen = [&] {
    if (encoder_hash(frozen) != before) fail(ErrorCode::kFrozenViolation, "encoder parameters changed during linear evaluation");
  };

  const std::size_t F = records.front().features.size();
  RowMatrix x(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(F));
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].features.size() != F) fail(ErrorCode::kShape, "representation length differs across records");
    x.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(records[i].features.data(), static_cast<Eigen::Index>(F));
  }

  // Train on standardized features, then fold the scaling into the head.
  const auto scaling = FeatureScaling::of(x);
  x = scaling.apply(x);

  HeadParams head(HeadState::fresh(classes, F, config.seed));
  const OptimizerConfig opt{config.lr, config.momentum, config.weight_decay, std::max(config.epochs, 1), {}, 0.1,
                            config.batch_size};
  std::mt19937_64 rng(config.seed);
  auto order = iota_vec(records.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      RowMatrix xb(static_cast<Eigen::Index>(end - start), x.cols());
      std::vector<int> yb;
      for (std::size_t k = start; k < end; ++k) {
        xb.row(static_cast<Eigen::Index>(k - start)) = x.row(static_cast<Eigen::Index>(order[k]));
        yb.push_back(labels[order[k]]);
      }
      head.weight.zero_grad();
      head.bias.zero_grad();
      head_step(head, xb, yb);
      sgd_step({&head.weight, &head.bias}, opt, config.lr);
    }
    if (epoch_hook) epoch_hook(epoch);
    check_frozen();
  }
  check_frozen();
  return scaling.fold(head.state());
}

Tensor predict_proba(const HeadState& head, std::span<const RepresentationRecord> records) {
  const auto C = static_cast<Eigen::Index>(head.classes());
  const auto F = static_cast<Eigen::Index>(head.features());
  Eigen::Map<const RowMatrix> w(head.weight.data(), C, F);
  Eigen::Map<const Eigen::RowVectorXd> b(head.bias.data(), C);
  RowMatrix x(static_cast<Eigen::Index>(records.size()), F);
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (static_cast<Eigen::Index>(records[i].features.size()) != F) fail(ErrorCode::kShape, "record width does not match head");
    x.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(records[i].features.data(), F);
  }
  RowMatrix p = x * w.transpose();
  p.rowwise() += b;
  softmax_rows(p);
  Tensor out({records.size(), head.classes()});
  Eigen::Map<RowMatrix>(out.data(), p.rows(), p.cols()) = p;
  return out;
}

std::pair<ModelState, HeadState> fine_tune(const ModelState& state_in, std::span<const ViewSet> sets,
                                           std::span<const int> labels, std::size_t classes,
                                           const FineTuneConfig& config) {
  if (sets.empty()) fail(ErrorCode::kEmptyData, "fine-tuning subset is empty");
  if (sets.size() != labels.size()) fail(ErrorCode::kShape, "view sets and labels differ in length");
  check_labels(labels, classes);
  ModelState state = state_in;
  for (const auto& s : sets) check_planes(state, s);
  const auto& planes = state.config().plane_ids;
  const std::size_t d = state.config().encoder.output_dim();
  const std::size_t F = planes.size() * d;

  // The head sees features standardized with the statistics of the initial
  // representations, held fixed during training and folded in at the end.
  RowMatrix initial(static_cast<Eigen::Index>(sets.size()), static_cast<Eigen::Index>(F));
  const auto records = concat_representations(state, sets);
  for (std::size_t i = 0; i < records.size(); ++i) {
    initial.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::RowVectorXd>(records[i].features.data(), static_cast<Eigen::Index>(F));
  }
  const auto scaling = FeatureScaling::of(initial);

  auto encoder_params = state.encoder_parameters();
  for (auto* p : encoder_params) p->velocity.fill(0.0);
  HeadParams head(HeadState::fresh(classes, F, config.seed));
  const std::vector<Parameter*> head_params{&head.weight, &head.bias};
  const OptimizerConfig opt{config.lr, config.momentum, config.weight_decay, std::max(config.epochs, 1), {}, 0.1,
                            config.batch_size};

  std::mt19937_64 rng(config.seed);
  auto order = iota_vec(sets.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      const auto B = static_cast<Eigen::Index>(idx.size());
      for (auto* p : encoder_params) p->zero_grad();
      for (auto* p : head_params) p->zero_grad();
      RowMatrix x(B, static_cast<Eigen::Index>(F));
      for (std::size_t m = 0; m < planes.size(); ++m) {
        const Tensor y = state.view(planes[m]).encoder.forward(stack_plane(sets, idx, planes[m]), Mode::kTrain);
        x.middleCols(static_cast<Eigen::Index>(m * d), static_cast<Eigen::Index>(d)) =
            Eigen::Map<const RowMatrix>(y.data(), B, static_cast<Eigen::Index>(d));
      }
      std::vector<int> yb;
      for (auto i : idx) yb.push_back(labels[i]);
      const RowMatrix gx = head_step(head, scaling.apply(x), yb).array().rowwise() / scaling.sigma.array();
      for (std::size_t m = 0; m < planes.size(); ++m) {
        Tensor g({idx.size(), d});
        Eigen::Map<RowMatrix>(g.data(), B, static_cast<Eigen::Index>(d)) =
            gx.middleCols(static_cast<Eigen::Index>(m * d), static_cast<Eigen::Index>(d));
        state.view(planes[m]).encoder.backward(g);
      }
      sgd_step(encoder_params, opt, config.encoder_lr);
      sgd_step(head_params, opt, config.lr);
    }
  }
  return {std::move(state), scaling.fold(head.state())};
}

Tensor predict_proba(ModelState& state, const HeadState& head, std::span<const ViewSet> sets) {
  const auto records = concat_representations(state, sets);
  return predict_proba(head, records);
}

// ---- metrics --------------------------------------------------------------

void to_json(nlohmann::json& j, const MetricReport& r) {
  j = {{"auc", r.auc},           {"sensitivity", r.sensitivity}, {"specificity", r.specificity},
       {"accuracy", r.accuracy}, {"precision", r.precision},     {"per_class_auc", r.per_class_auc},
       {"n_samples", r.n_samples}};
}

Real roc_auc(std::span<const Real> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) fail(ErrorCode::kShape, "scores and labels differ in length");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) fail(ErrorCode::kInvalidArgument, "binary labels must be 0 or 1");
    n_pos += static_cast<std::size_t>(l);
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) fail(ErrorCode::kUndefinedMetric, "AUC needs both classes");
  auto order = iota_vec(n);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Mid-ranks over tie groups; the Mann-Whitney U statistic counts ties as 1/2.
  Real rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const Real mid = 0.5 * static_cast<Real>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == 1) rank_sum += mid;
    }
    i = j + 1;
  }
  const Real np = static_cast<Real>(n_pos);
  const Real u = rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<Real>(n_neg));
}

MetricReport binary_metrics(std::span<const Real> scores, std::span<const int> labels, Real threshold) {
  MetricReport r;
  r.auc = roc_auc(scores, labels);
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (labels[i] == 1) {
      (predicted ? tp : fn) += 1;
    } else {
      (predicted ? fp : tn) += 1;
    }
  }
  const auto ratio = [](std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<Real>(a) / static_cast<Real>(b); };
  r.sensitivity = ratio(tp, tp + fn);
  r.specificity = ratio(tn, tn + fp);
  r.precision = ratio(tp, tp + fp);
  r.accuracy = ratio(tp + tn, scores.size());
  // Class 0 is scored by 1 - p against labels 1 - y, which ranks identically.
  r.per_class_auc = {r.auc, r.auc};
  r.n_samples = scores.size();
  return r;
}

Real multiclass_accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) fail(ErrorCode::kShape, "predictions and labels differ in length");
  if (labels.empty()) fail(ErrorCode::kEmptyData, "no samples");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i] ? 1 : 0;
  return static_cast<Real>(hits) / static_cast<Real>(labels.size());
}

std::vector<Real> one_vs_rest_auc(const Tensor& scores, std::span<const int> labels) {
  expect_rank(scores, 2, "one_vs_rest_auc");
  const std::size_t n = scores.dim(0), C = scores.dim(1);
  if (n != labels.size()) fail(ErrorCode::kShape, "scores and labels differ in length");
  if (C < 2) fail(ErrorCode::kInvalidArgument, "one-vs-rest needs at least two classes");
  std::vector<Real> aucs;
  std::vector<Real> col(n);
  std::vector<int> bin(n);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      col[i] = scores[i * C + c];
      bin[i] = labels[i] == static_cast<int>(c) ? 1 : 0;
    }
    aucs.push_back(roc_auc(col, bin));
  }
  return aucs;
}

MetricReport classification_report(const Tensor& probabilities, std::span<const int> labels) {
  expect_rank(probabilities, 2, "classification_report");
  const std::size_t n = probabilities.dim(0), C = probabilities.dim(1);
  if (C == 2) {
    std::vector<Real> pos(n);
    for (std::size_t i = 0; i < n; ++i) pos[i] = probabilities[i * 2 + 1];
    return binary_metrics(pos, labels);
  }
  MetricReport r;
  std::vector<int> pred(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Real* row = probabilities.data() + i * C;
    pred[i] = static_cast<int>(std::max_element(row, row + C) - row);
  }
  r.accuracy = multiclass_accuracy(pred, labels);
  r.per_class_auc = one_vs_rest_auc(probabilities, labels);
  r.auc = std::accumulate(r.per_class_auc.begin(), r.per_class_auc.end(), 0.0) / static_cast<Real>(C);
  for (std::size_t c = 0; c < C; ++c) {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool p = pred[i] == static_cast<int>(c), t = labels[i] == static_cast<int>(c);
      tp += p && t;
      fp += p && !t;
      fn += !p && t;
      tn += !p && !t;
    }
    r.sensitivity += tp + fn ? static_cast<Real>(tp) / static_cast<Real>(tp + fn) : 0.0;
    r.specificity += tn + fp ? static_cast<Real>(tn) / static_cast<Real>(tn + fp) : 0.0;
    r.precision += tp + fp ? static_cast<Real>(tp) / static_cast<Real>(tp + fp) : 0.0;
  }
  r.sensitivity /= static_cast<Real>(C);
  r.specificity /= static_cast<Real>(C);
  r.precision /= static_cast<Real>(C);
  r.n_samples = n;
  return r;
}

// ---- embedding geometry ---------------------------------------------------

EmbeddingDiagnostics embedding_diagnostics(const ProjectionBatch& z) {
  const std::size_t M = z.views, N = z.lesions, D = z.dim;
  if (M < 2 || N < 2) fail(ErrorCode::kInvalidArgument, "diagnostics need >= 2 lesions with >= 2 views each");
  EmbeddingDiagnostics out;
  Real within = 0.0, between = 0.0;
  std::size_t n_within = 0, n_between = 0;
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t m = 0; m < M; ++m) {
      for (std::size_t j = m + 1; j < M; ++j, ++n_within) within += cosine_sim(z.at(m, i), z.at(j, i));
      for (std::size_t k = i + 1; k < N; ++k) {
        for (std::size_t j = 0; j < M; ++j, ++n_between) between += cosine_sim(z.at(m, i), z.at(j, k));
      }
    }
  }
  out.within_mean = within / static_cast<Real>(n_within);
  out.between_mean = between / static_cast<Real>(n_between);
  out.gap = out.within_mean - out.between_mean;

  RowMatrix x(static_cast<Eigen::Index>(M * N), static_cast<Eigen::Index>(D));
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t i = 0; i < N; ++i) {
      x.row(static_cast<Eigen::Index>(i * M + m)) = Eigen::Map<const Eigen::RowVectorXd>(z.at(m, i).data(), static_cast<Eigen::Index>(D));
    }
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<Real>(x.rows());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  Eigen::MatrixXd basis(D, 2);
  for (int c = 0; c < 2; ++c) {
    const auto col = static_cast<Eigen::Index>(D) - 1 - c;
    Eigen::VectorXd v = col >= 0 ? Eigen::VectorXd(eig.eigenvectors().col(col)) : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(D));
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;  // deterministic sign
    basis.col(c) = v;
  }
  const Eigen::MatrixXd coords = x * basis;
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t m = 0; m < M; ++m) {
      const auto r = static_cast<Eigen::Index>(i * M + m);
      out.pca.push_back({i, m, coords(r, 0), coords(r, 1)});
    }
  }
  return out;
}

void write_pca_csv(const EmbeddingDiagnostics& diag, const ProjectionBatch& projections,
                   std::span<const int> plane_ids, const std::filesystem::path& path) {
  std::ostringstream os;
  os.precision(10);
  os << "lesion_id,view_id,x,y\n";
  for (const auto& p : diag.pca) {
    const std::string id = p.lesion < projections.lesion_ids.size() ? projections.lesion_ids[p.lesion]
                                                                      : std::to_string(p.lesion);
    const int view = p.view < plane_ids.size() ? plane_ids[p.view] : static_cast<int>(p.view);
    os << id << ',' << view << ',' << p.x << ',' << p.y << '\n';
  }
  detail::write_text(path, os.str());
}

}  // namespace mvcl
