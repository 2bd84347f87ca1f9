#include "lpie/checkpoint.hpp"

#include <array>
#include <fstream>
#include <limits>
#include <unordered_set>

#include "lpie/byte_io.hpp"

namespace lpie {

namespace {

constexpr std::array<char, 4> kMagic{'L', 'P', 'C', 'K'};
constexpr std::uint64_t kU32Max = std::numeric_limits<std::uint32_t>::max();

FormatError invalid(const std::string& msg) { return FormatError(FormatError::Kind::invalid, "LPCK: " + msg); }

void put_tensor(std::ostream& os, const std::string& name, const Tensor<float>& t) {
  if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw FormatError(FormatError::Kind::overflow, "LPCK: tensor name too long: " + name.substr(0, 32) + "...");
  }
  byte_io::put(os, static_cast<std::uint16_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  const Shape& s = t.shape();
  for (std::size_t d : {s.n, s.c, s.h, s.w}) {
    if (d > kU32Max) throw FormatError(FormatError::Kind::overflow, "LPCK: dimension of '" + name + "' exceeds u32");
    byte_io::put(os, static_cast<std::uint32_t>(d));
  }
  for (float v : t.data()) byte_io::put_f32(os, v);
}

void need(std::istream& is, std::uint64_t bytes, const std::string& what) {
  const std::uint64_t left = byte_io::remaining(is);
  if (left != UINT64_MAX && left < bytes) {
    throw FormatError(FormatError::Kind::truncated, "LPCK: file ends inside " + what);
  }
}

std::string get_string(std::istream& is, std::uint64_t len, const std::string& what) {
  need(is, len, what);
  std::string s(len, '\0');
  is.read(s.data(), static_cast<std::streamsize>(len));
  if (static_cast<std::uint64_t>(is.gcount()) != len) {
    throw FormatError(FormatError::Kind::truncated, "LPCK: file ends inside " + what);
  }
  return s;
}

}  // namespace

const std::string* CheckpointExtras::find_state(const std::string& key) const {
  for (const auto& [k, v] : state) {
    if (k == key) return &v;
  }
  return nullptr;
}

void write_checkpoint(std::ostream& os, const model::Model<float>& model, const CheckpointExtras& extras) {
  KeyValueText kv;
  model.config().write(kv, "model.");
  kv.set("step", std::to_string(extras.step));
  for (const auto& [k, v] : extras.state) kv.set("state." + k, v);
  const std::string blob = kv.str();

  const std::size_t count = model.params().size() + extras.tensors.size();
  if (blob.size() > kU32Max || count > kU32Max) throw FormatError(FormatError::Kind::overflow, "LPCK: header overflow");
  for (const auto& e : extras.tensors.entries()) {
    if (model.params().contains(e.name)) throw invalid("extra tensor '" + e.name + "' shadows a model parameter");
  }

  os.write(kMagic.data(), kMagic.size());
  byte_io::put(os, kCheckpointVersion);
  byte_io::put(os, static_cast<std::uint32_t>(blob.size()));
  os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  byte_io::put(os, static_cast<std::uint32_t>(count));
  for (const auto& e : model.params().entries()) put_tensor(os, e.name, e.value);
  for (const auto& e : extras.tensors.entries()) put_tensor(os, e.name, e.value);
}

Checkpoint read_checkpoint(std::istream& is) {
  std::array<char, 4> magic{};
  is.read(magic.data(), magic.size());
  if (is.gcount() != 4) throw FormatError(FormatError::Kind::truncated, "LPCK: file shorter than magic");
  if (magic != kMagic) throw FormatError(FormatError::Kind::bad_magic, "LPCK: bad magic bytes");
  const auto version = byte_io::get<std::uint32_t>(is, "LPCK version");
  if (version != kCheckpointVersion) {
    throw FormatError(FormatError::Kind::unsupported_version,
                      "LPCK: version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const auto blob_len = byte_io::get<std::uint32_t>(is, "LPCK config length");
  const std::string blob = get_string(is, blob_len, "config text");

  model::ModelConfig config;
  CheckpointExtras extras;
  try {
    KeyValueText kv = KeyValueText::parse(blob);
    config = model::ModelConfig::read(kv, "model.");
    extras.step = kv.take_u64("step", 0);
    for (auto& [k, v] : kv.take_prefixed("state.")) extras.state.emplace_back(k.substr(6), std::move(v));
    kv.reject_unconsumed();
  } catch (const ConfigError& e) {
    throw invalid(std::string("config text: ") + e.what());
  }

  std::unordered_set<std::string> param_names;
  for (const auto& l : model::conv_layers(config)) {
    param_names.insert(l.path + ".weight");
    param_names.insert(l.path + ".bias");
  }

  const auto count = byte_io::get<std::uint32_t>(is, "LPCK tensor count");
  need(is, static_cast<std::uint64_t>(count) * 18, "tensor table");
  model::ParameterSet<float> params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = byte_io::get<std::uint16_t>(is, "LPCK tensor name length");
    std::string name = get_string(is, name_len, "tensor name");
    std::array<std::uint64_t, 4> dims{};
    for (auto& d : dims) d = byte_io::get<std::uint32_t>(is, "LPCK tensor dims");
    std::uint64_t numel = 1;
    for (auto d : dims) {
      if (d != 0 && numel > std::numeric_limits<std::uint64_t>::max() / 4 / d) {
        throw FormatError(FormatError::Kind::overflow, "LPCK: element count of '" + name + "' overflows");
      }
      numel *= d;
    }
    need(is, numel * 4, "data of '" + name + "'");
    Tensor<float> t(Shape{dims[0], dims[1], dims[2], dims[3]});
    for (auto& v : t.data()) v = byte_io::get_f32(is, "LPCK tensor data");
    auto& dst = param_names.contains(name) ? params : extras.tensors;
    if (params.contains(name) || extras.tensors.contains(name)) throw invalid("duplicate tensor '" + name + "'");
    dst.add(std::move(name), std::move(t));
  }
  try {
    return Checkpoint{model::Model<float>(config, std::move(params)), std::move(extras)};
  } catch (const ShapeError& e) {
    throw FormatError(FormatError::Kind::mismatch, std::string("LPCK: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const model::Model<float>& model,
                     const CheckpointExtras& extras) {
  byte_io::write_atomically(path, [&](std::ostream& os) { write_checkpoint(os, model, extras); });
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError(FormatError::Kind::io, "cannot open checkpoint '" + path.string() + "'");
  return read_checkpoint(is);
}

}  // namespace lpie
