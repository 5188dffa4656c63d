#include "mvcl/model.hpp"

#include <algorithm>
#include <functional>
#include <string_view>

#include <nlohmann/json.hpp>

#include "mvcl/errors.hpp"

namespace mvcl {

// ---- configs --------------------------------------------------------------

std::vector<std::size_t> EncoderConfig::feature_extents(std::size_t input) const {
  std::vector<std::size_t> extents;
  std::size_t e = input;
  for (std::size_t i = 0; i < 3; ++i) {
    e = Conv2d::out_extent(e, conv[i].kernel, conv[i].stride, conv[i].pad);
    if (e == 0) fail(ErrorCode::kShape, "input " + std::to_string(input) + " px is too small for conv" + std::to_string(i + 1));
    extents.push_back(e);
    if (i < 2 && pool[i]) {
      e = Conv2d::out_extent(e, pool[i]->kernel, pool[i]->stride, 0);
      if (e == 0) fail(ErrorCode::kShape, "input " + std::to_string(input) + " px is too small for pool" + std::to_string(i + 1));
      extents.push_back(e);
    }
  }
  return extents;
}

void EncoderConfig::validate() const {
  if (in_channels == 0 || adaptive_pool == 0) fail(ErrorCode::kConfiguration, "encoder dims must be positive");
  for (const auto& c : conv) {
    if (c.out_channels == 0 || c.kernel == 0 || c.stride == 0) {
      fail(ErrorCode::kConfiguration, "conv layers need positive channels, kernel and stride");
    }
  }
  for (const auto& p : pool) {
    if (p && (p->kernel == 0 || p->stride == 0)) fail(ErrorCode::kConfiguration, "pool kernel/stride must be positive");
  }
}

EncoderConfig EncoderConfig::standard() { return {}; }

EncoderConfig EncoderConfig::desk() {
  EncoderConfig c;
  c.conv = {{{16, 5, 2, 2}, {32, 3, 1, 1}, {32, 3, 1, 1}}};
  c.pool = {PoolSpec{3, 2}, PoolSpec{3, 2}};
  c.adaptive_pool = 2;
  return c;
}

EncoderConfig EncoderConfig::test() {
  EncoderConfig c;
  c.conv = {{{2, 3, 1, 1}, {2, 3, 1, 1}, {3, 3, 1, 1}}};
  c.pool = {PoolSpec{2, 2}, std::nullopt};
  c.adaptive_pool = 1;
  return c;
}

void ProjectorConfig::validate() const {
  for (auto w : widths) {
    if (w == 0) fail(ErrorCode::kConfiguration, "projector widths must be positive");
  }
  if (!(norm_eps > 0.0) || !(bn_eps > 0.0)) fail(ErrorCode::kConfiguration, "projector eps must be positive");
}

ProjectorConfig ProjectorConfig::standard() { return {}; }

ProjectorConfig ProjectorConfig::desk() {
  ProjectorConfig c;
  c.widths = {128, 128, 128};
  return c;
}

ProjectorConfig ProjectorConfig::test() {
  ProjectorConfig c;
  c.widths = {6, 6, 4};
  return c;
}

OptimizerConfig OptimizerConfig::desk() {
  OptimizerConfig c;
  c.base_lr = 0.05;
  c.epochs = 30;
  c.decay_epochs = {20, 25};
  c.batch_size = 16;
  return c;
}

ModelConfig ModelConfig::preset(const std::string& name) {
  ModelConfig c;
  if (name == "standard") return c;
  if (name == "desk") {
    c.encoder = EncoderConfig::desk();
    c.projector = ProjectorConfig::desk();
    c.optimizer = OptimizerConfig::desk();
    return c;
  }
  if (name == "test") {
    c.encoder = EncoderConfig::test();
    c.projector = ProjectorConfig::test();
    c.optimizer = OptimizerConfig::desk();
    c.optimizer.batch_size = 4;
    return c;
  }
  fail(ErrorCode::kConfiguration, "unknown preset '" + name + "' (expected standard, desk or test)");
}

void OptimizerConfig::validate() const {
  if (!(base_lr > 0.0)) fail(ErrorCode::kConfiguration, "base_lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) fail(ErrorCode::kConfiguration, "momentum must be in [0, 1)");
  if (weight_decay < 0.0) fail(ErrorCode::kConfiguration, "weight_decay must be >= 0");
  if (epochs < 1) fail(ErrorCode::kConfiguration, "epochs must be >= 1");
  if (batch_size < 1) fail(ErrorCode::kConfiguration, "batch_size must be >= 1");
  for (std::size_t i = 0; i < decay_epochs.size(); ++i) {
    if (decay_epochs[i] >= epochs || decay_epochs[i] < 0 || (i > 0 && decay_epochs[i] <= decay_epochs[i - 1])) {
      fail(ErrorCode::kConfiguration, "decay epochs must be strictly increasing and below epochs");
    }
  }
}

void ModelConfig::validate() const {
  encoder.validate();
  projector.validate();
  optimizer.validate();
  if (plane_ids.size() < 2) fail(ErrorCode::kInsufficientViews, "at least two planes are required");
  for (std::size_t i = 0; i < plane_ids.size(); ++i) {
    if (plane_ids[i] < 1 || plane_ids[i] > 9) fail(ErrorCode::kConfiguration, "plane ids must be in 1..9");
    if (i > 0 && plane_ids[i] <= plane_ids[i - 1]) {
      fail(ErrorCode::kConfiguration, "plane ids must be strictly increasing");
    }
  }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  nlohmann::json conv = nlohmann::json::array();
  for (const auto& l : c.encoder.conv) {
    conv.push_back({{"out_channels", l.out_channels}, {"kernel", l.kernel}, {"stride", l.stride}, {"pad", l.pad}});
  }
  nlohmann::json pool = nlohmann::json::array();
  for (const auto& p : c.encoder.pool) {
    pool.push_back(p ? nlohmann::json{{"kernel", p->kernel}, {"stride", p->stride}} : nlohmann::json(nullptr));
  }
  j = {
      {"encoder",
       {{"in_channels", c.encoder.in_channels}, {"conv", conv}, {"pool", pool},
        {"adaptive_pool", c.encoder.adaptive_pool}}},
      {"projector",
       {{"widths", c.projector.widths}, {"norm_eps", c.projector.norm_eps}, {"bn_eps", c.projector.bn_eps},
        {"bn_momentum", c.projector.bn_momentum}}},
      {"optimizer",
       {{"base_lr", c.optimizer.base_lr}, {"momentum", c.optimizer.momentum},
        {"weight_decay", c.optimizer.weight_decay}, {"epochs", c.optimizer.epochs},
        {"decay_epochs", c.optimizer.decay_epochs}, {"decay_factor", c.optimizer.decay_factor},
        {"batch_size", c.optimizer.batch_size}}},
      {"plane_ids", c.plane_ids},
  };
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  const auto& e = j.at("encoder");
  c.encoder.in_channels = e.at("in_channels").get<std::size_t>();
  const auto& conv = e.at("conv");
  if (conv.size() != 3) fail(ErrorCode::kConfiguration, "encoder needs exactly three conv layers");
  for (std::size_t i = 0; i < 3; ++i) {
    c.encoder.conv[i] = {conv[i].at("out_channels").get<std::size_t>(), conv[i].at("kernel").get<std::size_t>(),
                         conv[i].at("stride").get<std::size_t>(), conv[i].at("pad").get<std::size_t>()};
  }
  const auto& pool = e.at("pool");
  for (std::size_t i = 0; i < 2; ++i) {
    if (pool.at(i).is_null()) {
      c.encoder.pool[i].reset();
    } else {
      c.encoder.pool[i] = PoolSpec{pool[i].at("kernel").get<std::size_t>(), pool[i].at("stride").get<std::size_t>()};
    }
  }
  c.encoder.adaptive_pool = e.at("adaptive_pool").get<std::size_t>();
  const auto& p = j.at("projector");
  c.projector.widths = p.at("widths").get<std::array<std::size_t, 3>>();
  c.projector.norm_eps = p.at("norm_eps").get<Real>();
  c.projector.bn_eps = p.at("bn_eps").get<Real>();
  c.projector.bn_momentum = p.at("bn_momentum").get<Real>();
  const auto& o = j.at("optimizer");
  c.optimizer.base_lr = o.at("base_lr").get<Real>();
  c.optimizer.momentum = o.at("momentum").get<Real>();
  c.optimizer.weight_decay = o.at("weight_decay").get<Real>();
  c.optimizer.epochs = o.at("epochs").get<int>();
  c.optimizer.decay_epochs = o.at("decay_epochs").get<std::vector<int>>();
  c.optimizer.decay_factor = o.at("decay_factor").get<Real>();
  c.optimizer.batch_size = o.at("batch_size").get<std::size_t>();
  c.plane_ids = j.at("plane_ids").get<std::vector<int>>();
}

// ---- Encoder --------------------------------------------------------------

Encoder::Encoder(const EncoderConfig& config, const std::string& name) : config_(config) {
  config_.validate();
  std::size_t in = config.in_channels;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& c = config.conv[i];
    conv_[i] = Conv2d({in, c.out_channels, c.kernel, c.stride, c.pad}, name + ".conv" + std::to_string(i + 1));
    in = c.out_channels;
  }
  for (std::size_t i = 0; i < 2; ++i) {
    if (config.pool[i]) pool_[i] = MaxPool2d(config.pool[i]->kernel, config.pool[i]->stride);
  }
  gap_ = AdaptiveAvgPool2d(config.adaptive_pool);
}

Tensor Encoder::forward(const Tensor& images, Mode /*mode*/) {
  expect_rank(images, 4, "encoder");
  if (images.dim(1) != config_.in_channels) {
    fail(ErrorCode::kShape, "encoder expects " + std::to_string(config_.in_channels) + " channel(s), got " +
                                shape_string(images.shape()));
  }
  Tensor h = images;
  for (std::size_t i = 0; i < 3; ++i) {
    h = relu_[i].forward(conv_[i].forward(h));
    if (i < 2 && config_.pool[i]) h = pool_[i].forward(h);
  }
  h = gap_.forward(h);
  pooled_shape_ = h.shape();
  return h.reshaped({h.dim(0), config_.output_dim()});
}

Tensor Encoder::backward(const Tensor& grad_repr) {
  Tensor g = gap_.backward(grad_repr.reshaped(pooled_shape_));
  for (std::size_t k = 3; k-- > 0;) {
    if (k < 2 && config_.pool[k]) g = pool_[k].backward(g);
    g = conv_[k].backward(relu_[k].backward(g));
  }
  return g;
}

void Encoder::init(std::mt19937_64& rng) {
  for (auto& c : conv_) c.init(rng);
}

std::vector<Parameter*> Encoder::parameters() {
  std::vector<Parameter*> out;
  for (auto& c : conv_) {
    for (auto* p : c.parameters()) out.push_back(p);
  }
  return out;
}

// ---- Projector ------------------------------------------------------------

Projector::Projector(std::size_t in_dim, const ProjectorConfig& config, const std::string& name)
    : norm_(config.norm_eps) {
  config.validate();
  std::size_t in = in_dim;
  for (std::size_t i = 0; i < 3; ++i) {
    fc_[i] = Linear(in, config.widths[i], name + ".fc" + std::to_string(i + 1));
    in = config.widths[i];
  }
  for (std::size_t i = 0; i < 2; ++i) {
    bn_[i] = BatchNorm1d(config.widths[i], name + ".bn" + std::to_string(i + 1), config.bn_eps, config.bn_momentum);
  }
}

Tensor Projector::forward(const Tensor& repr, Mode mode) {
  if (!repr.all_finite()) fail(ErrorCode::kNumeric, "non-finite representation fed to projector");
  Tensor h = repr;
  for (std::size_t i = 0; i < 2; ++i) h = relu_[i].forward(bn_[i].forward(fc_[i].forward(h), mode));
  return norm_.forward(fc_[2].forward(h));
}

Tensor Projector::backward(const Tensor& grad_z) {
  Tensor g = fc_[2].backward(norm_.backward(grad_z));
  for (std::size_t k = 2; k-- > 0;) g = fc_[k].backward(bn_[k].backward(relu_[k].backward(g)));
  return g;
}

void Projector::init(std::mt19937_64& rng) {
  for (auto& f : fc_) f.init(rng);
}

std::vector<Parameter*> Projector::parameters() {
  std::vector<Parameter*> out;
  for (std::size_t i = 0; i < 3; ++i) {
    for (auto* p : fc_[i].parameters()) out.push_back(p);
    if (i < 2) {
      for (auto* p : bn_[i].parameters()) out.push_back(p);
    }
  }
  return out;
}

std::vector<Tensor*> Projector::buffers() {
  return {&bn_[0].running_mean, &bn_[0].running_var, &bn_[1].running_mean, &bn_[1].running_var};
}

// ---- ModelState -----------------------------------------------------------

ModelState ModelState::initialize(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelState state;
  state.config_ = config;
  state.seed_ = seed;
  for (int id : config.plane_ids) {
    const std::string prefix = "view" + std::to_string(id);
    ViewModel vm;
    vm.plane_id = id;
    vm.encoder = Encoder(config.encoder, prefix + ".encoder");
    vm.projector = Projector(config.encoder.output_dim(), config.projector, prefix + ".projector");
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(id)};
    std::mt19937_64 rng(seq);
    vm.encoder.init(rng);
    vm.projector.init(rng);
    state.views_.push_back(std::move(vm));
  }
  return state;
}

ViewModel& ModelState::view(int plane_id) {
  for (auto& v : views_) {
    if (v.plane_id == plane_id) return v;
  }
  fail(ErrorCode::kConfiguration, "model has no view network for plane " + std::to_string(plane_id));
}

const ViewModel& ModelState::view(int plane_id) const {
  return const_cast<ModelState*>(this)->view(plane_id);
}

std::vector<Parameter*> ModelState::parameters() {
  std::vector<Parameter*> out;
  for (auto& v : views_) {
    for (auto* p : v.encoder.parameters()) out.push_back(p);
    for (auto* p : v.projector.parameters()) out.push_back(p);
  }
  return out;
}

std::vector<const Parameter*> ModelState::parameters() const {
  auto params = const_cast<ModelState*>(this)->parameters();
  return {params.begin(), params.end()};
}

std::vector<Parameter*> ModelState::encoder_parameters() {
  std::vector<Parameter*> out;
  for (auto& v : views_) {
    for (auto* p : v.encoder.parameters()) out.push_back(p);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor*>> ModelState::buffers() {
  static constexpr std::array<const char*, 4> kNames = {"bn1.running_mean", "bn1.running_var", "bn2.running_mean",
                                                        "bn2.running_var"};
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& v : views_) {
    const auto bufs = v.projector.buffers();
    for (std::size_t i = 0; i < bufs.size(); ++i) {
      out.emplace_back("view" + std::to_string(v.plane_id) + ".projector." + kNames[i], bufs[i]);
    }
  }
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelState::buffers() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : const_cast<ModelState*>(this)->buffers()) out.emplace_back(name, t);
  return out;
}

void ModelState::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

bool ModelState::all_finite() const {
  const auto params = parameters();
  return std::all_of(params.begin(), params.end(), [](const Parameter* p) { return p->value.all_finite(); });
}

Tensor encoder_forward(ModelState& state, int plane_id, const Tensor& batch, Mode mode) {
  return state.view(plane_id).encoder.forward(batch, mode);
}

Tensor projector_forward(ModelState& state, int plane_id, const Tensor& repr, Mode mode) {
  return state.view(plane_id).projector.forward(repr, mode);
}

std::size_t parameter_count(const std::vector<Parameter*>& params) {
  std::size_t n = 0;
  for (const auto* p : params) n += p->value.numel();
  return n;
}

std::uint64_t parameter_hash(const std::vector<const Parameter*>& params) {
  std::string bytes;
  for (const auto* p : params) {
    bytes += p->name;
    bytes.push_back('\0');
    bytes.append(reinterpret_cast<const char*>(p->value.data()), p->value.numel() * sizeof(Real));
  }
  return std::hash<std::string_view>{}(bytes);
}

std::uint64_t encoder_hash(const ModelState& state) {
  auto params = const_cast<ModelState&>(state).encoder_parameters();
  return parameter_hash({params.begin(), params.end()});
}

}  // namespace mvcl
