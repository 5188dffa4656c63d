#include "mvcl/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "mvcl/checkpoint.hpp"
#include "mvcl/errors.hpp"
#include "mvcl/optim.hpp"

namespace mvcl {

namespace {

// Runs fn(m) for m in [0, count), on up to `threads` workers. Work items are
// independent, so the result does not depend on the thread count.
template <typename Fn>
void for_each_view(std::size_t count, int threads, Fn&& fn) {
  const auto workers = static_cast<std::size_t>(std::clamp<long>(threads, 1, static_cast<long>(count)));
  if (workers <= 1) {
    for (std::size_t m = 0; m < count; ++m) fn(m);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t m = w; m < count; m += workers) fn(m);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::string similarity_dump(const ProjectionBatch& z) {
  std::ostringstream os;
  os << std::setprecision(6);
  for (std::size_t m = 0; m < z.views; ++m) {
    for (std::size_t j = 0; j < z.views; ++j) {
      if (j == m) continue;
      os << "\n  s[view " << m << "][view " << j << "] =";
      for (std::size_t i = 0; i < z.lesions; ++i) {
        os << "\n    ";
        for (std::size_t k = 0; k < z.lesions; ++k) {
          Real s = 0.0;
          const auto a = z.at(m, i), b = z.at(j, k);
          for (std::size_t d = 0; d < z.dim; ++d) s += a[d] * b[d];
          os << s << ' ';
        }
      }
    }
  }
  return os.str();
}

std::uint64_t epoch_seed(std::uint64_t seed, int epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x5eedU};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

}  // namespace

// ---- view store -------------------------------------------------------------

void ViewStore::add(ViewSet set) {
  if (set.lesion_id.empty()) fail(ErrorCode::kInvalidArgument, "view set without a lesion id");
  if (contains(set.lesion_id)) fail(ErrorCode::kInvalidArgument, "duplicate lesion id '" + set.lesion_id + "'");
  auto id = set.lesion_id;
  sets_.emplace(std::move(id), std::move(set));
}

const ViewSet& ViewStore::get(const std::string& lesion_id) const {
  const auto it = sets_.find(lesion_id);
  if (it == sets_.end()) fail(ErrorCode::kMissingData, "no views for lesion '" + lesion_id + "'");
  return it->second;
}

std::vector<std::string> ViewStore::ids() const {
  std::vector<std::string> out;
  out.reserve(sets_.size());
  for (const auto& [id, set] : sets_) out.push_back(id);
  return out;
}

ViewStore ViewStore::subset(std::span<const std::string> ids) const {
  ViewStore out;
  for (const auto& id : ids) out.add(get(id));
  return out;
}

void ViewStore::save_directory(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  for (const auto& [id, set] : sets_) save_view_set(set, dir / id);
}

ViewStore ViewStore::load_directory(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) fail(ErrorCode::kMissingData, "view directory not found: " + dir.string());
  std::vector<std::filesystem::path> stems;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") {
      stems.push_back(entry.path().parent_path() / entry.path().stem());
    }
  }
  std::sort(stems.begin(), stems.end());
  ViewStore store;
  for (const auto& stem : stems) store.add(load_view_set(stem));
  if (store.size() == 0) fail(ErrorCode::kEmptyData, "no view sets in " + dir.string());
  return store;
}

std::vector<Tensor> assemble_batch(const ViewStore& store, std::span<const std::string> lesion_ids,
                                   std::span<const int> plane_ids) {
  if (lesion_ids.empty()) fail(ErrorCode::kEmptyData, "empty batch");
  std::set<std::string> seen;
  for (const auto& id : lesion_ids) {
    if (!seen.insert(id).second) fail(ErrorCode::kInvalidArgument, "lesion '" + id + "' appears twice in one batch");
  }
  std::vector<Tensor> out;
  out.reserve(plane_ids.size());
  for (int plane_id : plane_ids) {
    Tensor batch;
    std::size_t H = 0;
    for (std::size_t n = 0; n < lesion_ids.size(); ++n) {
      const auto& set = store.get(lesion_ids[n]);
      const auto it = std::find_if(set.views.begin(), set.views.end(),
                                   [&](const View2D& v) { return v.plane_id == plane_id; });
      if (it == set.views.end()) {
        fail(ErrorCode::kMissingData,
             "lesion '" + lesion_ids[n] + "' has no view for plane " + std::to_string(plane_id));
      }
      if (n == 0) {
        H = it->size;
        batch = Tensor({lesion_ids.size(), 1, H, H});
      } else if (it->size != H) {
        fail(ErrorCode::kShape, "lesion '" + lesion_ids[n] + "' view size differs within the batch");
      }
      std::copy(it->pixels.begin(), it->pixels.end(), batch.data() + n * H * H);
    }
    out.push_back(std::move(batch));
  }
  return out;
}

// ---- training ---------------------------------------------------------------

void PretrainConfig::validate(const ModelState& state) const {
  auto ids = plane_ids;
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) fail(ErrorCode::kConfiguration, "duplicate plane ids");
  if (ids.size() < 2) fail(ErrorCode::kInsufficientViews, "pretraining needs at least two views");
  if (ids != state.config().plane_ids) fail(ErrorCode::kConfiguration, "planes do not match the model state");
  optimizer.validate();
  if (!(tau > 0.0)) fail(ErrorCode::kConfiguration, "temperature must be positive");
  if (log_every_steps < 1) fail(ErrorCode::kConfiguration, "log cadence must be >= 1");
  if (checkpoint_every_epochs < 0) fail(ErrorCode::kConfiguration, "checkpoint cadence must be >= 0");
  if (threads < 1) fail(ErrorCode::kConfiguration, "threads must be >= 1");
}

void to_json(nlohmann::json& j, const TrainLogRow& row) {
  j = {{"epoch", row.epoch}, {"step", row.step}, {"loss", row.loss}, {"lr", row.lr}, {"wall_ms", row.wall_ms}};
}

void from_json(const nlohmann::json& j, TrainLogRow& row) {
  row.epoch = j.at("epoch").get<int>();
  row.step = j.at("step").get<long>();
  row.loss = j.at("loss").get<Real>();
  row.lr = j.at("lr").get<Real>();
  row.wall_ms = j.at("wall_ms").get<double>();
}

StepResult forward_backward(ModelState& state, std::span<const Tensor> batch, LossMode mode, Real tau, int threads) {
  const auto& planes = state.config().plane_ids;
  const std::size_t M = planes.size();
  if (batch.size() != M) fail(ErrorCode::kShape, "batch holds a different number of views than the model");
  const std::size_t N = batch.front().dim(0);
  for (const auto& t : batch) {
    expect_rank(t, 4, "pretrain batch");
    if (t.dim(0) != N) fail(ErrorCode::kShape, "views disagree on the batch size");
  }
  const std::size_t D = state.config().projector.widths[2];
  state.zero_grad();

  StepResult result{0.0, ProjectionBatch(M, N, D, tau)};
  for_each_view(M, threads, [&](std::size_t m) {
    auto& vm = state.view(planes[m]);
    const Tensor z = vm.projector.forward(vm.encoder.forward(batch[m], Mode::kTrain), Mode::kTrain);
    std::copy(z.data(), z.data() + N * D, result.projections.z.begin() + static_cast<std::ptrdiff_t>(m * N * D));
  });
  for (std::size_t m = 0; m < M; ++m) {
    if (!state.view(planes[m]).projector.flagged_rows().empty()) {
      fail(ErrorCode::kNumeric, "projector produced a zero vector for view " + std::to_string(planes[m]));
    }
  }

  LossResult loss;
  try {
    loss = batch_loss_backward(result.projections, mode);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kNumeric) throw;
    fail(ErrorCode::kNumeric, std::string(e.what()) + "; similarity matrices:" + similarity_dump(result.projections));
  }
  result.loss = loss.value;

  for_each_view(M, threads, [&](std::size_t m) {
    Tensor g({N, D}, std::vector<Real>(loss.grad.begin() + static_cast<std::ptrdiff_t>(m * N * D),
                                       loss.grad.begin() + static_cast<std::ptrdiff_t>((m + 1) * N * D)));
    auto& vm = state.view(planes[m]);
    vm.encoder.backward(vm.projector.backward(g));
  });
  return result;
}

StepResult pretrain_step(ModelState& state, std::span<const Tensor> batch, const PretrainConfig& config) {
  StepResult result = forward_backward(state, batch, config.mode, config.tau, config.threads);
  sgd_step(state.parameters(), config.optimizer, lr_at(config.optimizer, state.epoch()));
  return result;
}

PretrainResult pretrain(const ViewStore& store, ModelState state, const PretrainConfig& config,
                        const std::function<void(const TrainLogRow&)>& on_step) {
  config.validate(state);
  const auto ids = store.ids();
  if (ids.size() < 2) fail(ErrorCode::kEmptyData, "pretraining needs at least two lesions");
  const std::size_t batch_size = std::min(config.optimizer.batch_size, ids.size());
  const std::size_t steps_per_epoch = ids.size() / batch_size;
  const auto& planes = state.config().plane_ids;

  std::ofstream log_file;
  if (!config.log_path.empty()) {
    if (config.log_path.has_parent_path()) std::filesystem::create_directories(config.log_path.parent_path());
    log_file.open(config.log_path, std::ios::app);
    if (!log_file) fail(ErrorCode::kIo, "cannot open log " + config.log_path.string());
  }
  auto save = [&](const std::string& name) {
    if (!config.checkpoint_dir.empty()) checkpoint_save(state, config.checkpoint_dir / name);
  };

  PretrainResult result;
  const auto start = std::chrono::steady_clock::now();
  int epochs_run = 0;
  for (int epoch = state.epoch(); epoch < config.optimizer.epochs; ++epoch) {
    if (config.stop_after_epochs && epochs_run >= *config.stop_after_epochs) break;
    auto order = ids;
    std::mt19937_64 rng(epoch_seed(config.seed, epoch));
    std::shuffle(order.begin(), order.end(), rng);
    const Real lr = lr_at(config.optimizer, epoch);
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      std::span<const std::string> chosen(order.data() + b * batch_size, batch_size);
      const auto batch = assemble_batch(store, chosen, planes);
      const StepResult step = pretrain_step(state, batch, config);
      const long global_step = static_cast<long>(epoch) * static_cast<long>(steps_per_epoch) + static_cast<long>(b);
      const double wall =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      TrainLogRow row{epoch, global_step, step.loss, lr, wall};
      if (global_step % config.log_every_steps == 0 || b + 1 == steps_per_epoch) {
        result.log.push_back(row);
        if (log_file) log_file << nlohmann::json(row).dump() << '\n';
      }
      if (on_step) on_step(row);
    }
    state.set_epoch(epoch + 1);
    ++epochs_run;
    if (log_file) log_file.flush();
    if (config.checkpoint_every_epochs > 0 && (epoch + 1) % config.checkpoint_every_epochs == 0) {
      std::ostringstream name;
      name << "epoch_" << std::setw(4) << std::setfill('0') << epoch + 1 << ".ckpt";
      save(name.str());
    }
  }
  save(state.epoch() >= config.optimizer.epochs ? "final.ckpt" : "last.ckpt");
  result.state = std::move(state);
  return result;
}

ProjectionBatch embed_projections(ModelState& state, const ViewStore& store, std::span<const std::string> lesion_ids,
                                  Real tau, std::size_t batch_size) {
  const auto& planes = state.config().plane_ids;
  const std::size_t M = planes.size(), N = lesion_ids.size(), D = state.config().projector.widths[2];
  ProjectionBatch out(M, N, D, tau);
  out.lesion_ids.assign(lesion_ids.begin(), lesion_ids.end());
  for (std::size_t start = 0; start < N; start += batch_size) {
    const std::size_t end = std::min(N, start + batch_size);
    const auto batch = assemble_batch(store, lesion_ids.subspan(start, end - start), planes);
    for (std::size_t m = 0; m < M; ++m) {
      const Tensor z = projector_forward(state, planes[m], encoder_forward(state, planes[m], batch[m]));
      std::copy(z.data(), z.data() + (end - start) * D,
                out.z.begin() + static_cast<std::ptrdiff_t>((m * N + start) * D));
    }
  }
  return out;
}

}  // namespace mvcl
