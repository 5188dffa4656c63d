#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mvcl/layers.hpp"
#include "mvcl/tensor.hpp"

namespace mvcl {

struct ConvLayerSpec {
  std::size_t out_channels = 1;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 0;
  friend bool operator==(const ConvLayerSpec&, const ConvLayerSpec&) = default;
};

struct PoolSpec {
  std::size_t kernel = 3;
  std::size_t stride = 2;
  friend bool operator==(const PoolSpec&, const PoolSpec&) = default;
};

/// Three conv + ReLU stages (max-pool after the first two when configured),
/// then adaptive average pooling to adaptive_pool x adaptive_pool.
struct EncoderConfig {
  std::size_t in_channels = 1;
  std::array<ConvLayerSpec, 3> conv{{{48, 11, 4, 2}, {192, 5, 1, 2}, {128, 3, 1, 1}}};
  std::array<std::optional<PoolSpec>, 2> pool{PoolSpec{3, 2}, PoolSpec{3, 2}};
  std::size_t adaptive_pool = 4;

  std::size_t output_dim() const { return conv[2].out_channels * adaptive_pool * adaptive_pool; }

  // Spatial extent after each stage for a square input, or kShape if the
  // input is too small for the stack.
  std::vector<std::size_t> feature_extents(std::size_t input) const;
  void validate() const;

  static EncoderConfig standard();  // 48/192/128 channels, d = 2048
  static EncoderConfig desk();      // 32 px inputs, small channel counts
  static EncoderConfig test();      // 8 px inputs, channels 2/2/3

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// Linear -> BN -> ReLU -> Linear -> BN -> ReLU -> Linear -> l2-normalize.
struct ProjectorConfig {
  std::array<std::size_t, 3> widths{2048, 2048, 128};
  Real norm_eps = 1e-12;
  Real bn_eps = BatchNorm1d::kDefaultEps;
  Real bn_momentum = BatchNorm1d::kDefaultMomentum;

  void validate() const;
  static ProjectorConfig standard();
  static ProjectorConfig desk();
  static ProjectorConfig test();

  friend bool operator==(const ProjectorConfig&, const ProjectorConfig&) = default;
};

struct OptimizerConfig {
  Real base_lr = 0.1;
  Real momentum = 0.9;
  Real weight_decay = 1e-4;
  int epochs = 240;
  std::vector<int> decay_epochs{120, 160, 200};
  Real decay_factor = 0.1;
  std::size_t batch_size = 64;

  void validate() const;
  // 30 epochs, lr 0.05 decayed at epochs 20 and 25, batch 16.
  static OptimizerConfig desk();
  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

struct ModelConfig {
  EncoderConfig encoder = EncoderConfig::standard();
  ProjectorConfig projector = ProjectorConfig::standard();
  OptimizerConfig optimizer;
  std::vector<int> plane_ids{1, 2, 3, 4, 5, 6, 7, 8, 9};

  void validate() const;
  // Named presets: "standard", "desk" or "test" (kConfiguration otherwise).
  static ModelConfig preset(const std::string& name);
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& config, const std::string& name);

  Tensor forward(const Tensor& images, Mode mode);  // [B, C, H, W] -> [B, d]
  Tensor backward(const Tensor& grad_repr);
  void init(std::mt19937_64& rng);
  std::vector<Parameter*> parameters();
  const EncoderConfig& config() const noexcept { return config_; }

 private:
  EncoderConfig config_;
  std::array<Conv2d, 3> conv_;
  std::array<ReLU, 3> relu_;
  std::array<MaxPool2d, 2> pool_;
  AdaptiveAvgPool2d gap_;
  Shape pooled_shape_;
};

class Projector {
 public:
  Projector() = default;
  Projector(std::size_t in_dim, const ProjectorConfig& config, const std::string& name);

  Tensor forward(const Tensor& repr, Mode mode);  // [B, d] -> [B, widths[2]]
  Tensor backward(const Tensor& grad_z);
  void init(std::mt19937_64& rng);
  std::vector<Parameter*> parameters();
  std::vector<Tensor*> buffers();
  const std::vector<std::size_t>& flagged_rows() const { return norm_.flagged_rows(); }

 private:
  std::array<Linear, 3> fc_;
  std::array<BatchNorm1d, 2> bn_;
  std::array<ReLU, 2> relu_;
  L2Normalize norm_;
};

/// Private encoder + projector for one plane id.
struct ViewModel {
  int plane_id = 0;
  Encoder encoder;
  Projector projector;
};

/// Everything needed to continue training: per-view networks, optimizer
/// velocities (inside each Parameter), the epoch counter and the seed.
class ModelState {
 public:
  ModelState() = default;

  // Each view network is initialized from its own stream derived from
  // (seed, plane id).
  static ModelState initialize(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  std::uint64_t seed() const noexcept { return seed_; }
  int epoch() const noexcept { return epoch_; }
  void set_epoch(int epoch) { epoch_ = epoch; }

  std::size_t view_count() const noexcept { return views_.size(); }
  ViewModel& view(int plane_id);
  const ViewModel& view(int plane_id) const;
  std::vector<ViewModel>& views() noexcept { return views_; }

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::vector<Parameter*> encoder_parameters();
  // Non-trainable state (batch-norm running statistics), with names.
  std::vector<std::pair<std::string, Tensor*>> buffers();
  std::vector<std::pair<std::string, const Tensor*>> buffers() const;

  void zero_grad();
  bool all_finite() const;

 private:
  ModelConfig config_;
  std::uint64_t seed_ = 0;
  int epoch_ = 0;
  std::vector<ViewModel> views_;
};

// Free-function surface over ModelState.
Tensor encoder_forward(ModelState& state, int plane_id, const Tensor& batch, Mode mode = Mode::kEval);
Tensor projector_forward(ModelState& state, int plane_id, const Tensor& repr, Mode mode = Mode::kEval);

std::size_t parameter_count(const std::vector<Parameter*>& params);

/// Order-sensitive hash of parameter names and raw values.
std::uint64_t parameter_hash(const std::vector<const Parameter*>& params);
std::uint64_t encoder_hash(const ModelState& state);

}  // namespace mvcl
