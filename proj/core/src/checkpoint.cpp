#include "mvcl/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <map>

#include <nlohmann/json.hpp>

#include "io_util.hpp"
#include "mvcl/errors.hpp"

namespace mvcl {

namespace {

constexpr char kMagic[8] = {'M', 'V', 'C', 'L', 'C', 'K', 'P', 'T'};

// (name, tensor) pairs in payload order.
std::vector<std::pair<std::string, Tensor*>> named_tensors(ModelState& state) {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto* p : state.parameters()) {
    out.emplace_back(p->name, &p->value);
    out.emplace_back(p->name + ".velocity", &p->velocity);
  }
  for (auto& b : state.buffers()) out.push_back(b);
  return out;
}

}  // namespace

void checkpoint_save(const ModelState& state_in, const std::filesystem::path& path) {
  auto& state = const_cast<ModelState&>(state_in);
  const auto tensors = named_tensors(state);
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    const std::uint64_t nbytes = t->numel() * sizeof(Real);
    index.push_back({{"name", name}, {"shape", t->shape()}, {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
  }
  const nlohmann::json header = {
      {"version", kCheckpointVersion},
      {"config", state.config()},
      {"epoch", state.epoch()},
      {"seed", state.seed()},
      {"dtype", "float64"},
      {"tensors", index},
  };
  const std::string text = header.dump();
  const std::uint64_t hlen = text.size();

  std::vector<char> bytes;
  bytes.reserve(sizeof(kMagic) + sizeof(hlen) + text.size() + offset);
  bytes.insert(bytes.end(), std::begin(kMagic), std::end(kMagic));
  const auto* hl = reinterpret_cast<const char*>(&hlen);
  bytes.insert(bytes.end(), hl, hl + sizeof(hlen));
  bytes.insert(bytes.end(), text.begin(), text.end());
  for (const auto& [name, t] : tensors) {
    const auto payload = detail::as_bytes<Real>(t->values());
    bytes.insert(bytes.end(), payload.begin(), payload.end());
  }
  auto tmp = path;
  tmp += ".tmp";
  detail::write_bytes(tmp, bytes);
  std::filesystem::rename(tmp, path);
}

ModelState checkpoint_load(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  const std::string where = " (" + path.string() + ")";
  if (bytes.size() < sizeof(kMagic) + sizeof(std::uint64_t) ||
      std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    fail(ErrorCode::kCorruptCheckpoint, "missing checkpoint magic" + where);
  }
  std::uint64_t hlen = 0;
  std::memcpy(&hlen, bytes.data() + sizeof(kMagic), sizeof(hlen));
  const std::size_t body = sizeof(kMagic) + sizeof(hlen);
  if (hlen > bytes.size() - body) fail(ErrorCode::kCorruptCheckpoint, "truncated header" + where);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(body),
                                   bytes.begin() + static_cast<std::ptrdiff_t>(body + hlen));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kCorruptCheckpoint, std::string("unreadable header: ") + e.what() + where);
  }

  ModelState state;
  std::map<std::string, std::pair<Shape, std::uint64_t>> entries;
  try {
    const int version = header.at("version").get<int>();
    if (version != kCheckpointVersion) {
      fail(ErrorCode::kVersionMismatch, "checkpoint version " + std::to_string(version) + ", expected " +
                                            std::to_string(kCheckpointVersion) + where);
    }
    if (header.at("dtype").get<std::string>() != "float64") {
      fail(ErrorCode::kCorruptCheckpoint, "unsupported payload dtype" + where);
    }
    const auto config = header.at("config").get<ModelConfig>();
    state = ModelState::initialize(config, header.at("seed").get<std::uint64_t>());
    state.set_epoch(header.at("epoch").get<int>());
    for (const auto& e : header.at("tensors")) {
      entries[e.at("name").get<std::string>()] = {e.at("shape").get<Shape>(), e.at("offset").get<std::uint64_t>()};
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kCorruptCheckpoint, std::string("malformed header: ") + e.what() + where);
  }

  const std::size_t payload = body + hlen;
  for (auto& [name, t] : named_tensors(state)) {
    const auto it = entries.find(name);
    if (it == entries.end()) fail(ErrorCode::kCorruptCheckpoint, "missing tensor " + name + where);
    if (it->second.first != t->shape()) fail(ErrorCode::kCorruptCheckpoint, "shape mismatch for " + name + where);
    const std::uint64_t nbytes = t->numel() * sizeof(Real);
    const std::uint64_t off = it->second.second;
    if (off > bytes.size() - payload || nbytes > bytes.size() - payload - off) {
      fail(ErrorCode::kCorruptCheckpoint, "truncated payload for " + name + where);
    }
    std::memcpy(t->data(), bytes.data() + payload + off, nbytes);
  }
  if (!state.all_finite()) fail(ErrorCode::kCorruptCheckpoint, "non-finite parameters" + where);
  return state;
}

bool bitwise_equal(const ModelState& a_in, const ModelState& b_in) {
  auto& a = const_cast<ModelState&>(a_in);
  auto& b = const_cast<ModelState&>(b_in);
  if (!(a.config() == b.config()) || a.epoch() != b.epoch() || a.seed() != b.seed()) return false;
  const auto ta = named_tensors(a);
  const auto tb = named_tensors(b);
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (ta[i].first != tb[i].first || ta[i].second->shape() != tb[i].second->shape()) return false;
    if (std::memcmp(ta[i].second->data(), tb[i].second->data(), ta[i].second->numel() * sizeof(Real)) != 0) {
      return false;
    }
  }
  return true;
}

}  // namespace mvcl
