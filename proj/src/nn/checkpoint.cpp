#include "gliopipe/nn/checkpoint.hpp"

#include <bit>
#include <cstring>

#include <zlib.h>

#include "gliopipe/error.hpp"
#include "gliopipe/volume_io.hpp"

namespace gliopipe::nn {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_floats(std::vector<std::uint8_t>& out, const std::vector<float>& values) {
  for (float f : values) put_u32(out, std::bit_cast<std::uint32_t>(f));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    const std::uint64_t lo = u32();
    const std::uint64_t hi = u32();
    return lo | (hi << 32);
  }
  std::vector<float> floats(std::size_t n) {
    need(n * 4);
    std::vector<float> v(n);
    for (auto& f : v) f = std::bit_cast<float>(u32());
    return v;
  }
  std::string text(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw DataError("corrupt checkpoint: truncated payload");
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace

nlohmann::json spec_to_json(const ResNetSpec& s) {
  return {{"dim", s.dim},
          {"depth", s.depth},
          {"block", to_string(s.block)},
          {"stage_blocks", s.stage_blocks},
          {"base_width", s.base_width},
          {"in_channels", s.in_channels},
          {"out_logits", s.out_logits},
          {"dropout_p", s.dropout_p}};
}

ResNetSpec spec_from_json(const nlohmann::json& j) {
  ResNetSpec s;
  s.dim = j.at("dim").get<int>();
  s.depth = j.at("depth").get<int>();
  const std::string block = j.at("block").get<std::string>();
  if (block == "basic")
    s.block = BlockKind::basic;
  else if (block == "bottleneck")
    s.block = BlockKind::bottleneck;
  else
    throw DataError("unknown block kind '" + block + "'");
  s.stage_blocks = j.at("stage_blocks").get<std::array<int, 4>>();
  s.base_width = j.at("base_width").get<int>();
  s.in_channels = j.value("in_channels", 1);
  s.out_logits = j.value("out_logits", 1);
  s.dropout_p = j.at("dropout_p").get<double>();
  s.validate();
  return s;
}

Checkpoint capture(ResNet<float>& model, AdamW* optimizer) {
  Checkpoint c;
  c.spec = model.spec();
  c.manifest = model.manifest();
  for (const Parameter<float>* p : model.parameters()) c.parameters.push_back(p->value);
  for (const Buffer<float>* b : model.buffers()) {
    c.buffer_names.push_back(b->name);
    c.buffers.push_back(b->value);
  }
  if (optimizer != nullptr) {
    c.has_optimizer = true;
    c.adam_m = optimizer->first_moments();
    c.adam_v = optimizer->second_moments();
    c.optimizer_step = optimizer->step_count();
    c.learning_rate = optimizer->lr();
  }
  return c;
}

void restore(const Checkpoint& c, ResNet<float>& model, AdamW* optimizer) {
  auto& params = model.parameters();
  auto& buffers = model.buffers();
  if (c.parameters.size() != params.size() || c.buffers.size() != buffers.size())
    throw DataError("checkpoint does not match model " + model.spec().name());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (c.manifest[i].name != params[i]->name || c.parameters[i].size() != params[i]->count())
      throw DataError("checkpoint parameter mismatch at '" + params[i]->name + "'");
    params[i]->value = c.parameters[i];
  }
  for (std::size_t i = 0; i < buffers.size(); ++i) {
    if (c.buffer_names[i] != buffers[i]->name || c.buffers[i].size() != buffers[i]->value.size())
      throw DataError("checkpoint buffer mismatch at '" + buffers[i]->name + "'");
    buffers[i]->value = c.buffers[i];
  }
  if (optimizer != nullptr && c.has_optimizer) {
    optimizer->first_moments() = c.adam_m;
    optimizer->second_moments() = c.adam_v;
    optimizer->set_step_count(c.optimizer_step);
    optimizer->set_lr(c.learning_rate);
  }
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  nlohmann::json header;
  header["spec"] = spec_to_json(c.spec);
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& e : c.manifest) manifest.push_back({{"name", e.name}, {"shape", e.shape}, {"count", e.count}});
  header["manifest"] = manifest;
  nlohmann::json bufs = nlohmann::json::array();
  for (std::size_t i = 0; i < c.buffers.size(); ++i)
    bufs.push_back({{"name", c.buffer_names[i]}, {"count", c.buffers[i].size()}});
  header["buffers"] = bufs;
  header["optimizer"] = {{"present", c.has_optimizer}, {"step", c.optimizer_step}, {"lr", c.learning_rate}};
  header["epoch"] = c.epoch;
  header["tune_loss"] = c.tune_loss;
  header["config_hash"] = c.config_hash;
  header["history"] = c.history;
  const std::string text = header.dump();

  std::vector<std::uint8_t> out{'G', 'P', 'C', 'K'};
  put_u32(out, kCheckpointVersion);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& p : c.parameters) put_floats(out, p);
  for (const auto& b : c.buffers) put_floats(out, b);
  if (c.has_optimizer) {
    for (const auto& m : c.adam_m) put_floats(out, m);
    for (const auto& v : c.adam_v) put_floats(out, v);
  }
  const auto crc = static_cast<std::uint32_t>(crc32(0L, out.data(), static_cast<uInt>(out.size())));
  put_u32(out, crc);
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 20 || std::memcmp(bytes.data(), "GPCK", 4) != 0)
    throw DataError("corrupt checkpoint: bad magic");
  const std::size_t body = bytes.size() - 4;
  const auto expect = static_cast<std::uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(body)));
  Reader tail(bytes.subspan(body));
  if (tail.u32() != expect) throw DataError("corrupt checkpoint: checksum mismatch");

  Reader r(bytes.first(body));
  r.text(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  const std::uint64_t header_len = r.u64();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.text(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("corrupt checkpoint header: ") + e.what());
  }

  Checkpoint c;
  c.spec = spec_from_json(header.at("spec"));
  for (const auto& e : header.at("manifest"))
    c.manifest.push_back({e.at("name").get<std::string>(), e.at("shape").get<std::vector<std::size_t>>(),
                          e.at("count").get<std::size_t>()});
  for (const auto& e : c.manifest) c.parameters.push_back(r.floats(e.count));
  for (const auto& b : header.at("buffers")) {
    c.buffer_names.push_back(b.at("name").get<std::string>());
    c.buffers.push_back(r.floats(b.at("count").get<std::size_t>()));
  }
  const auto& opt = header.at("optimizer");
  c.has_optimizer = opt.at("present").get<bool>();
  c.optimizer_step = opt.at("step").get<std::uint64_t>();
  c.learning_rate = opt.at("lr").get<double>();
  if (c.has_optimizer) {
    for (const auto& e : c.manifest) c.adam_m.push_back(r.floats(e.count));
    for (const auto& e : c.manifest) c.adam_v.push_back(r.floats(e.count));
  }
  if (r.pos() != body) throw DataError("corrupt checkpoint: trailing bytes");
  c.epoch = header.at("epoch").get<int>();
  c.tune_loss = header.at("tune_loss").get<double>();
  c.config_hash = header.at("config_hash").get<std::string>();
  c.history = header.at("history");
  return c;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_binary_file(path, encode_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_binary_file(path)); }

}  // namespace gliopipe::nn
