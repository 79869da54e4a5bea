#include "tracewarp/checkpoint.hpp"

#include <cstring>
#include <map>

namespace tracewarp {

using nlohmann::json;

namespace {

struct Entry {
  std::string name;
  Shape shape;
  std::span<float> values;
};

std::vector<Entry> entries(TrainState& s) {
  std::vector<Entry> out;
  const auto gen = s.params.generator_parameters();
  const auto disc = s.params.discriminator_parameters();
  for (const auto* group : {&gen, &disc})
    for (const auto& p : *group) {
      auto t = p.tensor;
      out.push_back({"param:" + p.name, t.shape(), t.mutable_data()});
    }
  auto moments = [&](const char* prefix, const std::vector<NamedParam<float>>& params, AdamState& st) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      out.push_back({std::string(prefix) + ".m:" + params[i].name, params[i].tensor.shape(), st.m[i]});
      out.push_back({std::string(prefix) + ".v:" + params[i].name, params[i].tensor.shape(), st.v[i]});
    }
  };
  moments("adam_g", gen, s.opt_g);
  moments("adam_d", disc, s.opt_d);
  return out;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(const std::vector<std::uint8_t>& in, std::size_t at, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= std::uint64_t(in[at + i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const TrainConfig& config, const TrainState& state, const std::filesystem::path& path) {
  TrainState copy = state;  // shares tensors; spans below only read
  const auto list = entries(copy);
  json manifest = json::array();
  std::size_t offset = 0;
  for (const auto& e : list) {
    manifest.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", offset}});
    offset += e.values.size();
  }
  const json header = {{"config", to_json(config)},
                       {"epoch", state.epoch},
                       {"adam_g_step", state.opt_g.step},
                       {"adam_d_step", state.opt_d.step},
                       {"log", state.log.to_json()},
                       {"tensors", manifest},
                       {"total_floats", offset}};
  const std::string text = header.dump();
  std::vector<std::uint8_t> out{'T', 'T', 'C', 'K'};
  put_u32(out, kCheckpointVersion);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + 4 * offset);
  for (const auto& e : list)
    for (float x : e.values) {
      std::uint32_t bits;
      std::memcpy(&bits, &x, 4);
      put_u32(out, bits);
    }
  try {
    write_bytes_atomic(path, out);
  } catch (const IoError& e) {
    throw CheckpointError(std::string("checkpoint write failed: ") + e.what());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::vector<std::uint8_t> in;
  try {
    in = read_bytes(path);
  } catch (const IoError& e) {
    throw CheckpointError(e.what());
  }
  if (in.size() < 16 || std::memcmp(in.data(), "TTCK", 4) != 0)
    throw CheckpointError("not a checkpoint (bad magic): " + path.string());
  const auto version = get_le(in, 4, 4);
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = get_le(in, 8, 8);
  if (16 + header_len > in.size()) throw CheckpointError("truncated checkpoint header: " + path.string());
  Checkpoint ck;
  json header;
  std::map<std::string, std::pair<Shape, std::size_t>> manifest;
  std::size_t total = 0;
  try {
    header = json::parse(in.begin() + 16, in.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
    ck.config = train_config_from_json(header.at("config"));
    for (const auto& t : header.at("tensors"))
      manifest[t.at("name").get<std::string>()] = {t.at("shape").get<Shape>(), t.at("offset").get<std::size_t>()};
    total = header.at("total_floats").get<std::size_t>();
  } catch (const std::exception& e) {
    throw CheckpointError("malformed checkpoint header in " + path.string() + ": " + e.what());
  }
  const std::size_t data_at = 16 + header_len;
  if (in.size() != data_at + 4 * total) throw CheckpointError("checkpoint data size mismatch: " + path.string());

  ck.state = TrainState::fresh(ck.config);
  ck.state.epoch = header.at("epoch").get<std::size_t>();
  ck.state.opt_g.step = header.at("adam_g_step").get<std::uint64_t>();
  ck.state.opt_d.step = header.at("adam_d_step").get<std::uint64_t>();
  ck.state.log = TrainLog::from_json(header.at("log"));
  for (auto& e : entries(ck.state)) {
    const auto it = manifest.find(e.name);
    if (it == manifest.end()) throw CheckpointError("checkpoint lacks tensor " + e.name);
    if (it->second.first != e.shape)
      throw CheckpointError("tensor " + e.name + " has shape " + shape_str(it->second.first) + ", expected " +
                            shape_str(e.shape));
    const std::size_t offset = it->second.second;
    if (offset + e.values.size() > total) throw CheckpointError("tensor " + e.name + " out of range");
    for (std::size_t i = 0; i < e.values.size(); ++i) {
      const auto bits = static_cast<std::uint32_t>(get_le(in, data_at + 4 * (offset + i), 4));
      std::memcpy(&e.values[i], &bits, 4);
    }
  }
  return ck;
}

}  // namespace tracewarp
