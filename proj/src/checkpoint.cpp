#include "tristyle/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "tristyle/errors.hpp"

namespace tristyle {

namespace {

constexpr char kMagic[8] = {'T', 'S', 'C', 'K', 'P', 'T', '0', '1'};
constexpr char kMagicZ[8] = {'T', 'S', 'C', 'K', 'P', 'T', 'Z', '1'};

std::string serialize_body(const Checkpoint& ckpt) {
  nlohmann::json index = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    index.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size();
  }
  const std::string header = nlohmann::json{{"manifest", ckpt.manifest}, {"tensors", index}}.dump();
  std::string body;
  const std::uint64_t len = header.size();
  body.append(reinterpret_cast<const char*>(&len), sizeof(len));
  body += header;
  for (const auto& [name, t] : ckpt.tensors)
    body.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(float));
  return body;
}

Checkpoint parse_body(const std::string& body, const std::string& origin) {
  if (body.size() < sizeof(std::uint64_t)) fail(ErrorKind::Io, "truncated checkpoint " + origin);
  std::uint64_t len = 0;
  std::memcpy(&len, body.data(), sizeof(len));
  if (body.size() < sizeof(len) + len) fail(ErrorKind::Io, "truncated checkpoint header in " + origin);
  const auto header = nlohmann::json::parse(body.substr(sizeof(len), len));
  const char* payload = body.data() + sizeof(len) + len;
  const std::size_t payload_floats = (body.size() - sizeof(len) - len) / sizeof(float);
  Checkpoint ckpt;
  ckpt.manifest = header.at("manifest");
  for (const auto& entry : header.at("tensors")) {
    Shape shape = entry.at("shape").get<Shape>();
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    const std::size_t count = shape_numel(shape);
    if (offset + count > payload_floats) fail(ErrorKind::Io, "tensor payload out of bounds in " + origin);
    std::vector<float> values(count);
    std::memcpy(values.data(), payload + offset * sizeof(float), count * sizeof(float));
    ckpt.tensors.emplace_back(entry.at("name").get<std::string>(), Tensor(std::move(shape), std::move(values)));
  }
  return ckpt;
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt, bool compressed) {
  std::string body = serialize_body(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) fail(ErrorKind::Io, "cannot write " + tmp);
    if (compressed) {
      uLongf dest_len = compressBound(body.size());
      std::string dest(dest_len, '\0');
      if (compress2(reinterpret_cast<Bytef*>(dest.data()), &dest_len, reinterpret_cast<const Bytef*>(body.data()),
                    body.size(), Z_BEST_SPEED) != Z_OK)
        fail(ErrorKind::Io, "zlib compression failed for " + path.string());
      const std::uint64_t raw = body.size();
      os.write(kMagicZ, sizeof(kMagicZ));
      os.write(reinterpret_cast<const char*>(&raw), sizeof(raw));
      os.write(dest.data(), static_cast<std::streamsize>(dest_len));
    } else {
      os.write(kMagic, sizeof(kMagic));
      os.write(body.data(), static_cast<std::streamsize>(body.size()));
    }
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::Io, "cannot open checkpoint " + path.string());
  std::string data((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (data.size() < sizeof(kMagic)) fail(ErrorKind::Io, "not a checkpoint: " + path.string());
  if (std::memcmp(data.data(), kMagic, sizeof(kMagic)) == 0) return parse_body(data.substr(sizeof(kMagic)), path.string());
  if (std::memcmp(data.data(), kMagicZ, sizeof(kMagicZ)) == 0) {
    std::uint64_t raw = 0;
    std::memcpy(&raw, data.data() + sizeof(kMagicZ), sizeof(raw));
    std::string body(raw, '\0');
    uLongf dest_len = raw;
    const std::size_t head = sizeof(kMagicZ) + sizeof(raw);
    if (uncompress(reinterpret_cast<Bytef*>(body.data()), &dest_len,
                   reinterpret_cast<const Bytef*>(data.data() + head), data.size() - head) != Z_OK ||
        dest_len != raw)
      fail(ErrorKind::Io, "corrupt compressed checkpoint " + path.string());
    return parse_body(body, path.string());
  }
  fail(ErrorKind::Io, "bad checkpoint magic in " + path.string());
}

Checkpoint to_checkpoint(const nn::ParamList& params, nlohmann::json manifest) {
  Checkpoint ckpt;
  ckpt.manifest = std::move(manifest);
  for (const auto& p : params) ckpt.tensors.emplace_back(p.name, p.var.value());
  return ckpt;
}

void load_params(const nn::ParamList& params, const Checkpoint& ckpt, const std::string& prefix) {
  for (const auto& p : params) {
    const Tensor* t = ckpt.find(prefix + p.name);
    if (!t) fail(ErrorKind::State, "checkpoint is missing tensor " + prefix + p.name);
    if (t->shape() != p.var.shape())
      fail(ErrorKind::State, "checkpoint tensor " + prefix + p.name + " has shape " + shape_string(t->shape()) +
                                 ", expected " + shape_string(p.var.shape()));
    ag::Var v = p.var;
    v.mutable_value() = *t;
  }
}

}  // namespace tristyle
