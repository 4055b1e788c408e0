#include "istr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint codec assumes a little-endian host");

namespace istr {

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  const size_t at = out.size();
  out.resize(at + 4);
  std::memcpy(out.data() + at, &v, 4);
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  const size_t at = out.size();
  out.resize(at + 8);
  std::memcpy(out.data() + at, &v, 8);
}

void put_str(std::vector<uint8_t>& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

struct Reader {
  const std::vector<uint8_t>& bytes;
  size_t pos = 0;
  const std::string& path;

  void need(size_t n) const {
    if (pos + n > bytes.size()) throw FormatError(path + ": truncated checkpoint");
  }
  uint32_t u32() {
    need(4);
    uint32_t v;
    std::memcpy(&v, bytes.data() + pos, 4);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v;
    std::memcpy(&v, bytes.data() + pos, 8);
    pos += 8;
    return v;
  }
  std::string str() {
    uint32_t len = u32();
    need(len);
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), len);
    pos += len;
    return s;
  }
};

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  std::vector<uint8_t> out;
  out.insert(out.end(), {'I', 'S', 'T', 'R'});
  put_u32(out, kCheckpointVersion);
  put_str(out, model.arch().descriptor());
  put_u64(out, model.seed());
  put_u32(out, static_cast<uint32_t>(model.epochs_trained()));
  put_u32(out, static_cast<uint32_t>(model.metadata().size()));
  for (const auto& [k, v] : model.metadata()) {
    put_str(out, k);
    put_str(out, v);
  }
  put_u32(out, static_cast<uint32_t>(model.params().size()));
  for (const Param& p : model.params()) {
    put_str(out, p.name);
    put_u32(out, static_cast<uint32_t>(p.value.rank()));
    for (int i = 0; i < p.value.rank(); ++i) {
      put_u32(out, static_cast<uint32_t>(p.value.dim(i)));
    }
    const size_t at = out.size();
    const size_t len = sizeof(float) * static_cast<size_t>(p.value.numel());
    out.resize(at + len);
    std::memcpy(out.data() + at, p.value.data(), len);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot create " + path);
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("short write to " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "ISTR", 4) != 0) {
    throw FormatError(path + ": not a model checkpoint (bad magic)");
  }
  Reader r{bytes, 4, path};
  const uint32_t version = r.u32();
  if (version > kCheckpointVersion) {
    throw VersionError(path + ": checkpoint version " + std::to_string(version) +
                       " is newer than supported version " +
                       std::to_string(kCheckpointVersion));
  }
  ModelArch arch = ModelArch::parse(r.str());
  const uint64_t seed = r.u64();
  const uint32_t epochs = r.u32();
  const uint32_t meta_count = r.u32();
  std::map<std::string, std::string> meta;
  for (uint32_t i = 0; i < meta_count; ++i) {
    std::string k = r.str();
    meta[k] = r.str();
  }
  const uint32_t param_count = r.u32();
  std::vector<Param> params;
  params.reserve(param_count);
  for (uint32_t i = 0; i < param_count; ++i) {
    Param p;
    p.name = r.str();
    const uint32_t rank = r.u32();
    if (rank > 8) throw FormatError(path + ": implausible parameter rank");
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(r.u32());
    const int64_t n = shape_numel(shape);
    const size_t len = sizeof(float) * static_cast<size_t>(n);
    r.need(len);
    std::vector<float> data(static_cast<size_t>(n));
    std::memcpy(data.data(), bytes.data() + r.pos, len);
    r.pos += len;
    p.value = Tensor(std::move(shape), std::move(data));
    p.velocity = Tensor(p.value.shape());
    params.push_back(std::move(p));
  }
  if (r.pos != bytes.size()) {
    throw FormatError(path + ": trailing bytes after checkpoint payload");
  }

  Model m = make_model_from_parts(std::move(arch), std::move(params), seed,
                                  static_cast<int>(epochs), std::move(meta));
  // Shape audit: the stored params must match what the descriptor builds.
  Model fresh = Model::build(m.arch(), 0);
  if (fresh.params().size() != m.params().size()) {
    throw FormatError(path + ": parameter list does not match architecture");
  }
  for (size_t i = 0; i < m.params().size(); ++i) {
    if (fresh.params()[i].name != m.params()[i].name ||
        fresh.params()[i].value.shape() != m.params()[i].value.shape()) {
      throw FormatError(path + ": parameter '" + m.params()[i].name +
                        "' does not match architecture");
    }
  }
  return m;
}

}  // namespace istr
