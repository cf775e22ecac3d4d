#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fanet/architectures.hpp"

// Checkpoint container: 8-byte magic, little-endian u32 header length, JSON
// header (architecture + tensor table), then raw little-endian float32
// buffers in table order. Parameters come first, batch-norm running
// statistics after. Byte-stable for identical contents.

namespace fanet {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'F', 'A', 'N', 'E',
                                             'T', 'C', 'K', '1'};

inline nlohmann::json arch_to_json(const ArchitectureSpec& s) {
  return nlohmann::json{{"variant", variant_name(s.variant)},
                        {"base_width", s.base_width},
                        {"depth", s.depth},
                        {"num_classes", s.num_classes},
                        {"input_size", s.input_size},
                        {"fsam_r", s.fsam_r},
                        {"fiam_factor", s.fiam_factor},
                        {"grad_mode", grad_mode_name(s.grad_mode)},
                        {"tau", s.tau}};
}

inline ArchitectureSpec arch_from_json(const nlohmann::json& j) {
  ArchitectureSpec s;
  s.variant = parse_variant(j.at("variant").get<std::string>());
  s.base_width = j.at("base_width").get<int64_t>();
  s.depth = j.value("depth", 4);
  s.num_classes = j.at("num_classes").get<int64_t>();
  s.input_size = j.at("input_size").get<int64_t>();
  s.fsam_r = j.value("fsam_r", int64_t{3});
  s.fiam_factor = j.value("fiam_factor", 1.2);
  s.grad_mode = parse_grad_mode(j.value("grad_mode", "surrogate"));
  s.tau = j.value("tau", 0.1);
  s.validate();
  return s;
}

namespace detail {

template <typename T>
struct CheckpointEntry {
  std::string name;
  Shape shape;
  const char* kind;      // "param" | "buffer"
  std::vector<T>* data;  // non-owning
};

template <typename T>
std::vector<CheckpointEntry<T>> checkpoint_entries(Model<T>& model) {
  std::vector<CheckpointEntry<T>> entries;
  ParamRegistry<T> reg = model.parameters();
  for (const Parameter<T>& p : reg.items())
    entries.push_back({p.name, p.tensor.shape(), "param", &p.tensor.values()});
  for (const BufferRef<T>& b : model.buffers())
    entries.push_back(
        {b.name, {static_cast<int64_t>(b.data->size())}, "buffer", b.data});
  return entries;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, Model<T>& model) {
  auto entries = detail::checkpoint_entries(model);
  nlohmann::json header{{"format", 1}, {"arch", arch_to_json(model.spec)}};
  nlohmann::json table = nlohmann::json::array();
  for (const auto& e : entries)
    table.push_back(
        {{"name", e.name}, {"shape", e.shape}, {"kind", e.kind}});
  header["tensors"] = std::move(table);
  std::string hs = header.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("checkpoint: cannot open for writing: " + path);
  f.write(kCheckpointMagic, 8);
  uint32_t len = static_cast<uint32_t>(hs.size());
  f.write(reinterpret_cast<const char*>(&len), 4);
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  std::vector<float> buf;
  for (const auto& e : entries) {
    buf.resize(e.data->size());
    for (size_t i = 0; i < buf.size(); ++i)
      buf[i] = static_cast<float>((*e.data)[i]);
    f.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!f) throw DataError("checkpoint: write failed: " + path);
}

inline nlohmann::json read_checkpoint_header(std::ifstream& f,
                                             const std::string& path) {
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw DataError("checkpoint: bad magic in " + path);
  uint32_t len = 0;
  f.read(reinterpret_cast<char*>(&len), 4);
  std::string hs(len, '\0');
  f.read(hs.data(), len);
  if (!f) throw DataError("checkpoint: truncated header in " + path);
  nlohmann::json header = nlohmann::json::parse(hs);
  if (header.at("format").get<int>() != 1)
    throw DataError("checkpoint: unsupported format version in " + path);
  return header;
}

inline ArchitectureSpec peek_checkpoint_spec(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("checkpoint: cannot open: " + path);
  return arch_from_json(read_checkpoint_header(f, path).at("arch"));
}

template <typename T>
Model<T> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("checkpoint: cannot open: " + path);
  nlohmann::json header = read_checkpoint_header(f, path);
  ArchitectureSpec spec = arch_from_json(header.at("arch"));
  Model<T> model = Model<T>::build(spec, 0);
  auto entries = detail::checkpoint_entries(model);
  const nlohmann::json& table = header.at("tensors");
  if (table.size() != entries.size())
    throw DataError("checkpoint: tensor table mismatch (" +
                    std::to_string(table.size()) + " stored, " +
                    std::to_string(entries.size()) + " expected) in " + path);
  std::vector<float> buf;
  for (size_t i = 0; i < entries.size(); ++i) {
    const nlohmann::json& row = table[i];
    if (row.at("name").get<std::string>() != entries[i].name)
      throw DataError("checkpoint: tensor " + std::to_string(i) +
                      " is '" + row.at("name").get<std::string>() +
                      "', expected '" + entries[i].name + "' in " + path);
    Shape shape = row.at("shape").get<Shape>();
    if (numel_of(shape) != static_cast<int64_t>(entries[i].data->size()))
      throw DataError("checkpoint: shape mismatch for " + entries[i].name +
                      " in " + path);
    buf.resize(entries[i].data->size());
    f.read(reinterpret_cast<char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!f) throw DataError("checkpoint: truncated data in " + path);
    for (size_t j = 0; j < buf.size(); ++j)
      (*entries[i].data)[j] = static_cast<T>(buf[j]);
  }
  return model;
}

}  // namespace fanet
