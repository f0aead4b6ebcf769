#include "hvts/checkpoint.hpp"

#include <algorithm>
#include <utility>
#include <vector>

#include "binio.hpp"

namespace hvts::models {

namespace {

constexpr char kMagic[4] = {'H', 'V', 'T', 'S'};
constexpr std::uint32_t kVersion = 1;

struct NamedBlob {
  std::string name;
  double* data;
  std::size_t count;
};

std::vector<NamedBlob> collect_blobs(Model& model) {
  std::vector<NamedBlob> blobs;
  for (Param& p : model.params()) {
    blobs.push_back({p.name, p.value.data(), p.value.size()});
  }
  for (auto& [name, state] : model.bn_states()) {
    blobs.push_back({name + ".running_mean", state->running_mean.data(),
                     state->running_mean.size()});
    blobs.push_back({name + ".running_var", state->running_var.data(),
                     state->running_var.size()});
  }
  return blobs;
}

}  // namespace

void save_checkpoint(const std::string& path, Model& model) {
  std::string bytes;
  bytes.append(kMagic, 4);
  binio::put_u32(bytes, kVersion);
  const std::string spec = model.spec().to_json();
  binio::put_u32(bytes, static_cast<std::uint32_t>(spec.size()));
  bytes.append(spec);
  const std::vector<NamedBlob> blobs = collect_blobs(model);
  binio::put_u32(bytes, static_cast<std::uint32_t>(blobs.size()));
  for (const NamedBlob& b : blobs) {
    binio::put_u32(bytes, static_cast<std::uint32_t>(b.name.size()));
    bytes.append(b.name);
    binio::put_u64(bytes, b.count);
    for (std::size_t i = 0; i < b.count; ++i) binio::put_f64(bytes, b.data[i]);
  }
  binio::spew(path, bytes);
}

Model load_checkpoint(const std::string& path) {
  const std::string bytes = binio::slurp(path);
  binio::Reader r(bytes, path);
  char magic[4];
  r.raw(magic, 4, "magic");
  if (!std::equal(magic, magic + 4, kMagic)) {
    throw Error(ErrorCategory::Input, path + ": not a model checkpoint (bad magic)");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kVersion) {
    throw Error(ErrorCategory::Input,
                path + ": unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t spec_len = r.u32("spec length");
  const ModelSpec spec = ModelSpec::from_json(r.str(spec_len, "spec"));
  Model model(spec, 0);

  const std::uint32_t blob_count = r.u32("blob count");
  std::vector<NamedBlob> expected = collect_blobs(model);
  if (blob_count != expected.size()) {
    throw Error(ErrorCategory::Input, path + ": checkpoint has " + std::to_string(blob_count) +
                                          " blobs, model needs " +
                                          std::to_string(expected.size()));
  }
  // Blobs arrive in ledger order; enforce it so checkpoints stay canonical.
  for (const NamedBlob& want : expected) {
    const std::uint32_t name_len = r.u32("blob name length");
    const std::string name = r.str(name_len, "blob name");
    if (name != want.name) {
      throw Error(ErrorCategory::Input,
                  path + ": unexpected blob '" + name + "' (want '" + want.name + "')");
    }
    const std::uint64_t count = r.u64("blob size");
    if (count != want.count) {
      throw Error(ErrorCategory::Input, path + ": blob '" + name + "' has " +
                                            std::to_string(count) + " values, expected " +
                                            std::to_string(want.count));
    }
    for (std::uint64_t i = 0; i < count; ++i) want.data[i] = r.f64("blob data");
  }
  if (!r.at_end()) {
    throw Error(ErrorCategory::Input, path + ": trailing bytes after checkpoint payload");
  }
  return model;
}

}  // namespace hvts::models
