#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "dbswin/training.hpp"

namespace dbswin::training {

namespace {

constexpr char kMagic[4] = {'D', 'B', 'S', 'W'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void arrays(const std::vector<NamedArray>& list) {
    u32(static_cast<std::uint32_t>(list.size()));
    for (const auto& a : list) {
      str(a.name);
      u32(static_cast<std::uint32_t>(a.shape.size()));
      for (auto d : a.shape) u64(d);
      for (double v : a.data) f64(v);
    }
  }

  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : buf(b) {}

  void need(std::size_t n) const {
    if (buf.size() - pos < n) {
      throw CheckpointError("truncated checkpoint at byte " + std::to_string(pos));
    }
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[pos++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
  std::vector<NamedArray> arrays() {
    std::vector<NamedArray> list(u32());
    for (auto& a : list) {
      a.name = str();
      const std::uint32_t rank = u32();
      if (rank > 8) throw CheckpointError("tensor " + a.name + " has implausible rank");
      std::size_t numel = 1;
      for (std::uint32_t i = 0; i < rank; ++i) {
        a.shape.push_back(u64());
        numel *= a.shape.back();
      }
      need(numel * 8);
      a.data.resize(numel);
      for (double& v : a.data) v = f64();
    }
    return list;
  }

  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(Checkpoint::kVersion);
  w.u64(ckpt.epoch);
  w.u32(static_cast<std::uint32_t>(ckpt.config.size()));
  for (const auto& [k, v] : ckpt.config) w.str(k + "=" + v);
  w.arrays(ckpt.params);
  w.arrays(ckpt.momentum);
  for (auto s : ckpt.rng) w.u64(s);
  return std::move(w.out);
}

Checkpoint deserialize(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  r.need(4);
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointError("bad checkpoint magic");
  r.pos = 4;
  const std::uint32_t version = r.u32();
  if (version != Checkpoint::kVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  c.epoch = r.u64();
  const std::uint32_t lines = r.u32();
  for (std::uint32_t i = 0; i < lines; ++i) {
    const std::string line = r.str();
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError("config line without '=': " + line);
    c.config.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  c.params = r.arrays();
  c.momentum = r.arrays();
  for (auto& s : c.rng) s = r.u64();
  if (r.pos != bytes.size()) throw CheckpointError("trailing bytes after checkpoint");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data::IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw data::IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data::IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                  std::istreambuf_iterator<char>()};
  try {
    return deserialize(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

Checkpoint capture(const Trainer& trainer,
                   std::vector<std::pair<std::string, std::string>> config) {
  Checkpoint c;
  c.epoch = trainer.epoch();
  c.config = std::move(config);
  const ParamList& params = trainer.model().params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& t = params[i].tensor;
    c.params.push_back({params[i].name, t.shape(), {t.data().begin(), t.data().end()}});
    c.momentum.push_back({params[i].name, t.shape(), trainer.momentum()[i]});
  }
  c.rng = trainer.rng().state();
  return c;
}

namespace {

std::map<std::string, const NamedArray*> index_by_name(const std::vector<NamedArray>& list) {
  std::map<std::string, const NamedArray*> out;
  for (const auto& a : list) out[a.name] = &a;
  return out;
}

const NamedArray& find_matching(const std::map<std::string, const NamedArray*>& index,
                                const NamedParam& p, const char* what) {
  const auto it = index.find(p.name);
  if (it == index.end()) throw CheckpointError(std::string(what) + " missing for " + p.name);
  if (it->second->shape != p.tensor.shape()) {
    throw CheckpointError(std::string(what) + " " + p.name + " has shape " +
                          shape_str(it->second->shape) + ", model expects " +
                          shape_str(p.tensor.shape()));
  }
  return *it->second;
}

}  // namespace

void load_params(model::Model& model, const Checkpoint& ckpt) {
  const auto index = index_by_name(ckpt.params);
  if (index.size() != model.params().size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(index.size()) +
                          " parameters, model has " + std::to_string(model.params().size()));
  }
  for (auto& p : model.params()) {
    const NamedArray& a = find_matching(index, p, "parameter");
    std::copy(a.data.begin(), a.data.end(), p.tensor.mutable_data().begin());
  }
}

void restore(Trainer& trainer, const Checkpoint& ckpt) {
  load_params(trainer.model(), ckpt);
  const auto index = index_by_name(ckpt.momentum);
  std::vector<std::vector<double>> buffers;
  for (const auto& p : trainer.model().params()) {
    buffers.push_back(find_matching(index, p, "momentum buffer").data);
  }
  trainer.restore(ckpt.epoch, std::move(buffers), ckpt.rng);
}

}  // namespace dbswin::training
