#include "ccg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>

namespace ccg {
namespace {

constexpr char kMagic[8] = {'C', 'C', 'G', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kDtypeF32 = 0;
constexpr std::string_view kOptimPrefix = "optim/";

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) fail("checkpoint ", path, ": truncated file");
  return v;
}

std::string get_string(std::istream& is, std::uint32_t n, const std::filesystem::path& path) {
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) fail("checkpoint ", path, ": truncated file");
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) fail("cannot write checkpoint ", tmp);
    os.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(os, kCheckpointVersion);
    const nlohmann::json header = {{"epoch", ckpt.epoch}, {"step", ckpt.step}, {"config", ckpt.config_text}};
    const std::string text = header.dump();
    put<std::uint32_t>(os, static_cast<std::uint32_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.arrays.size()));
    for (const auto& [name, t] : ckpt.arrays) {
      put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<std::uint32_t>(os, kDtypeF32);
      put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
      for (int d : t.shape) put<std::int64_t>(os, d);
      for (double v : t.data) put<float>(os, static_cast<float>(v));
    }
    if (!os.flush()) fail("failed writing checkpoint ", tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("cannot open checkpoint ", path);
  char magic[sizeof kMagic];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    fail("checkpoint ", path, ": not a checkpoint file");
  }
  const auto version = get<std::uint32_t>(is, path);
  if (version != kCheckpointVersion) {
    fail("checkpoint ", path, ": version ", version, " is not supported (expected ", kCheckpointVersion, ")");
  }
  Checkpoint ckpt;
  const auto header_len = get<std::uint32_t>(is, path);
  try {
    const auto header = nlohmann::json::parse(get_string(is, header_len, path));
    ckpt.epoch = header.at("epoch").get<int>();
    ckpt.step = header.at("step").get<std::int64_t>();
    ckpt.config_text = header.at("config").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    fail("checkpoint ", path, ": bad header: ", e.what());
  }
  const auto count = get<std::uint32_t>(is, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = get_string(is, get<std::uint32_t>(is, path), path);
    const auto dtype = get<std::uint32_t>(is, path);
    if (dtype != kDtypeF32) fail("checkpoint ", path, ": array ", name, " has unknown dtype ", dtype);
    const auto ndim = get<std::uint32_t>(is, path);
    if (ndim > 8) fail("checkpoint ", path, ": array ", name, " has rank ", ndim);
    Shape shape;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      const auto dim = get<std::int64_t>(is, path);
      if (dim < 0 || dim > (1 << 30)) fail("checkpoint ", path, ": array ", name, " has bad dimension ", dim);
      shape.push_back(static_cast<int>(dim));
    }
    Tensor t(shape);
    std::vector<float> raw(t.size());
    if (!raw.empty() && !is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(float)))) {
      fail("checkpoint ", path, ": truncated file");
    }
    for (std::size_t k = 0; k < raw.size(); ++k) t.data[k] = raw[k];
    ckpt.arrays.emplace(std::move(name), std::move(t));
  }
  return ckpt;
}

Checkpoint capture_checkpoint(Model& model, const Sgd* optimizer, int epoch, std::int64_t step) {
  Checkpoint ckpt;
  ckpt.config_text = model.config().to_text();
  ckpt.epoch = epoch;
  ckpt.step = step;
  for (Param* p : model.params()) ckpt.arrays.emplace(p->name, p->value);
  if (optimizer) {
    for (const auto& [name, buf] : optimizer->buffers()) ckpt.arrays.emplace(std::string(kOptimPrefix) + name, buf);
  }
  return ckpt;
}

void restore_checkpoint(const Checkpoint& ckpt, Model& model, Sgd* optimizer) {
  for (Param* p : model.params()) {
    const auto it = ckpt.arrays.find(p->name);
    if (it == ckpt.arrays.end()) fail("checkpoint has no array ", p->name);
    if (it->second.shape != p->value.shape) {
      fail("checkpoint array ", p->name, " has shape ", shape_string(it->second.shape), ", model expects ",
           shape_string(p->value.shape));
    }
    p->value = it->second;
  }
  if (!optimizer) return;
  optimizer->buffers().clear();
  for (const auto& [name, t] : ckpt.arrays) {
    if (name.starts_with(kOptimPrefix)) optimizer->buffers().emplace(name.substr(kOptimPrefix.size()), t);
  }
}

std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& ckpt) {
  auto model = std::make_unique<Model>(parse_config(ckpt.config_text));
  restore_checkpoint(ckpt, *model, nullptr);
  return model;
}

}  // namespace ccg
