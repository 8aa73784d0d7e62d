#include "rfhit/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include <zlib.h>

#include <json.hpp>

namespace rfhit::ckpt {
namespace {

using nlohmann::json;
using Kind = CheckpointError::Kind;

constexpr char kMagic[8] = {'R', 'F', 'H', 'I', 'T', 'C', 'K', 'P'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

template <typename T>
void put(std::vector<char>& buf, T v) {
  const auto* p = reinterpret_cast<const char*>(&v);
  buf.insert(buf.end(), p, p + sizeof(T));
}

void put_tensor(std::vector<char>& buf, const Tensor& t) {
  const auto* p = reinterpret_cast<const char*>(t.data());
  buf.insert(buf.end(), p, p + sizeof(double) * static_cast<size_t>(t.numel()));
}

class Reader {
 public:
  Reader(const std::vector<char>& buf, size_t end, std::string name)
      : buf_(buf), end_(end), name_(std::move(name)) {}

  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  const char* take(size_t n) {
    if (pos_ + n > end_) throw CheckpointError(Kind::kCorrupt, name_ + ": truncated checkpoint");
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  void read_tensor(Tensor& t) {
    std::memcpy(t.data(), take(sizeof(double) * static_cast<size_t>(t.numel())),
                sizeof(double) * static_cast<size_t>(t.numel()));
  }
  size_t remaining() const { return end_ - pos_; }

 private:
  const std::vector<char>& buf_;
  size_t end_;
  size_t pos_ = 0;
  std::string name_;
};

const char* role_name(nn::ParamRole r) {
  switch (r) {
    case nn::ParamRole::kWeight: return "weight";
    case nn::ParamRole::kGain: return "gain";
    case nn::ParamRole::kBias: return "bias";
    case nn::ParamRole::kLerp: return "lerp";
  }
  return "?";
}

struct Parsed {
  Header header;
  json params;
  std::vector<char> bytes;
  size_t blob_offset = 0;
  size_t blob_end = 0;
};

Parsed parse_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::kIo, "cannot open checkpoint " + path.string());
  Parsed p;
  p.bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  const std::string name = path.string();
  if (p.bytes.size() < sizeof(kMagic) + 4 + 8 + 4 || std::memcmp(p.bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(Kind::kFormat, name + ": not an rfhit checkpoint");
  }
  const size_t body = p.bytes.size() - 4;
  uint32_t stored_crc;
  std::memcpy(&stored_crc, p.bytes.data() + body, 4);
  const auto crc = static_cast<uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(p.bytes.data()), static_cast<uInt>(body)));
  Reader r(p.bytes, body, name);
  r.take(sizeof(kMagic));
  const auto version = r.get<uint32_t>();
  if (version != kVersion) {
    throw CheckpointError(Kind::kVersion, name + ": checkpoint version " + std::to_string(version) +
                                              ", this build reads version " + std::to_string(kVersion));
  }
  if (crc != stored_crc) throw CheckpointError(Kind::kCorrupt, name + ": checksum mismatch (corrupt file)");
  const auto header_len = r.get<uint64_t>();
  const char* h = r.take(header_len);
  json header;
  try {
    header = json::parse(h, h + header_len);
    p.header.config = parse_config(header.at("config").dump()).config;
    p.header.step = header.at("step").get<int64_t>();
    p.header.total_steps = header.at("total_steps").get<int64_t>();
    p.header.optimizer_steps = header.at("optimizer_steps").get<int64_t>();
    p.params = header.at("parameters");
  } catch (const std::exception& e) {
    throw CheckpointError(Kind::kFormat, name + ": bad header: " + e.what());
  }
  p.blob_offset = p.bytes.size() - 4 - r.remaining();
  p.blob_end = body;
  return p;
}

std::vector<std::string> differing_fields(const ModelConfig& a, const ModelConfig& b) {
  const json ja = json::parse(config_to_text({a, {}, {}})).at("model");
  const json jb = json::parse(config_to_text({b, {}, {}})).at("model");
  std::vector<std::string> out;
  for (auto it = ja.begin(); it != ja.end(); ++it) {
    if (!jb.contains(it.key()) || jb.at(it.key()) != it.value()) out.push_back("model." + it.key());
  }
  return out;
}

}  // namespace

void save(const std::filesystem::path& path, const RunConfig& config, const RfHitModel& model,
          const optim::AdamW& optimizer, int64_t step, int64_t total_steps) {
  const auto& items = model.parameters().items();
  if (optimizer.first_moments().size() != items.size()) {
    throw std::invalid_argument("checkpoint save: optimizer does not match the model parameters");
  }
  json params = json::array();
  for (const auto& p : items) params.push_back({{"name", p.name}, {"shape", p.var.shape()}, {"role", role_name(p.role)}});
  RunConfig stored = config;
  stored.model = model.config();
  const json header = {{"config", json::parse(config_to_text(stored))},
                       {"step", step},
                       {"total_steps", total_steps},
                       {"optimizer_steps", optimizer.steps_taken()},
                       {"parameters", params}};
  const std::string htext = header.dump();

  std::vector<char> buf(kMagic, kMagic + sizeof(kMagic));
  put<uint32_t>(buf, kVersion);
  put<uint64_t>(buf, htext.size());
  buf.insert(buf.end(), htext.begin(), htext.end());
  for (size_t i = 0; i < items.size(); ++i) {
    put_tensor(buf, items[i].var.value());
    put_tensor(buf, optimizer.first_moments()[i]);
    put_tensor(buf, optimizer.second_moments()[i]);
  }
  put<uint32_t>(buf, static_cast<uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(buf.data()),
                                                 static_cast<uInt>(buf.size()))));

  // Write then rename so an interrupted save never clobbers a good file.
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(Kind::kIo, "cannot write checkpoint " + tmp.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw CheckpointError(Kind::kIo, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Header read_header(const std::filesystem::path& path) { return parse_file(path).header; }

Header load(const std::filesystem::path& path, RfHitModel& model, optim::AdamW* optimizer) {
  Parsed p = parse_file(path);
  const std::string name = path.string();
  const auto diff = differing_fields(p.header.config.model, model.config());
  if (!diff.empty()) {
    std::string fields;
    for (const auto& f : diff) fields += (fields.empty() ? "" : ", ") + f;
    throw CheckpointError(Kind::kMismatch, name + ": model config mismatch in " + fields);
  }
  auto& items = model.parameters().items();
  if (p.params.size() != items.size()) {
    throw CheckpointError(Kind::kMismatch, name + ": parameter count differs from the model");
  }
  for (size_t i = 0; i < items.size(); ++i) {
    if (p.params[i].at("name").get<std::string>() != items[i].name ||
        p.params[i].at("shape").get<Shape>() != items[i].var.shape()) {
      throw CheckpointError(Kind::kMismatch, name + ": parameter " + items[i].name + " differs from the model");
    }
  }
  Reader r(p.bytes, p.blob_end, name);
  r.take(p.blob_offset);
  std::vector<Tensor> m, v;
  for (auto& item : items) {
    r.read_tensor(item.var.mutable_value());
    m.emplace_back(item.var.shape());
    v.emplace_back(item.var.shape());
    r.read_tensor(m.back());
    r.read_tensor(v.back());
  }
  if (r.remaining() != 0) throw CheckpointError(Kind::kCorrupt, name + ": trailing bytes");
  if (optimizer) {
    *optimizer = optim::AdamW(model.parameters(), optimizer->options());
    optimizer->first_moments() = std::move(m);
    optimizer->second_moments() = std::move(v);
    optimizer->set_steps_taken(p.header.optimizer_steps);
  }
  return p.header;
}

RfHitModel load_model(const std::filesystem::path& path, Header* header) {
  RfHitModel model(read_header(path).config.model);
  const Header h = load(path, model);
  if (header) *header = h;
  return model;
}

}  // namespace rfhit::ckpt
