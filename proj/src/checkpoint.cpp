#include "migc/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace migc {

namespace {

constexpr char kMagic[8] = {'M', 'I', 'G', 'C', 'K', 'P', 'T', '1'};

void put_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
void put_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), 8); }

uint32_t get_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
uint64_t get_u64(std::istream& is) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
double get_f64(std::istream& is) {
  double v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

void collect_all(const UNet& net, ParamRegistry& reg) {
  net.collect_backbone(reg);
  net.collect_migc(reg);
}

}  // namespace

void save_checkpoint(const std::string& path, const UNet& net, const NoiseSchedule& sched) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ConfigError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 8);
  put_u32(os, kCheckpointVersion);

  const UNetConfig& c = net.cfg;
  for (int v : {c.img_ch, c.res, c.base, c.mid, c.deep, c.heads, c.d_txt, c.t_dim, c.gn_groups,
                c.vocab, c.max_num, c.sac_hidden, c.spatial_k})
    put_u32(os, static_cast<uint32_t>(v));
  put_u32(os, static_cast<uint32_t>(sched.T));
  put_f64(os, sched.beta0);
  put_f64(os, sched.beta1);

  ParamRegistry reg;
  collect_all(net, reg);
  put_u64(os, reg.items.size());
  for (const auto& [name, v] : reg.items) {
    put_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<uint32_t>(v->val.shape.size()));
    for (int d : v->val.shape) put_u32(os, static_cast<uint32_t>(d));
    put_u64(os, v->val.data.size());
    os.write(reinterpret_cast<const char*>(v->val.data.data()),
             static_cast<std::streamsize>(v->val.data.size() * sizeof(double)));
  }
  put_u64(os, reg.content_hash());
  if (!os) throw ConfigError("short write while saving checkpoint: " + path);
}

LoadedModel load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw ConfigError("not a model checkpoint: " + path);
  const uint32_t version = get_u32(is);
  if (version != kCheckpointVersion)
    throw ConfigError("checkpoint format version " + std::to_string(version) +
                      " unsupported (expected " + std::to_string(kCheckpointVersion) + ")");

  UNetConfig c;
  c.img_ch = static_cast<int>(get_u32(is));
  c.res = static_cast<int>(get_u32(is));
  c.base = static_cast<int>(get_u32(is));
  c.mid = static_cast<int>(get_u32(is));
  c.deep = static_cast<int>(get_u32(is));
  c.heads = static_cast<int>(get_u32(is));
  c.d_txt = static_cast<int>(get_u32(is));
  c.t_dim = static_cast<int>(get_u32(is));
  c.gn_groups = static_cast<int>(get_u32(is));
  c.vocab = static_cast<int>(get_u32(is));
  c.max_num = static_cast<int>(get_u32(is));
  c.sac_hidden = static_cast<int>(get_u32(is));
  c.spatial_k = static_cast<int>(get_u32(is));
  const int T = static_cast<int>(get_u32(is));
  const double b0 = get_f64(is), b1 = get_f64(is);
  if (!is) throw ConfigError("truncated checkpoint header: " + path);

  LoadedModel m;
  Rng rng(0);
  m.net = UNet(c, rng);
  m.sched = NoiseSchedule::linear(T, b0, b1);

  ParamRegistry reg;
  collect_all(m.net, reg);
  const uint64_t n_blocks = get_u64(is);
  if (n_blocks != reg.items.size())
    throw ConfigError("checkpoint block count mismatch: " + std::to_string(n_blocks) + " vs " +
                      std::to_string(reg.items.size()));
  for (uint64_t i = 0; i < n_blocks; ++i) {
    const uint32_t name_len = get_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const uint32_t ndim = get_u32(is);
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = static_cast<int>(get_u32(is));
    const uint64_t numel = get_u64(is);
    Value v = reg.find(name);
    if (!v) throw ConfigError("checkpoint names unknown parameter '" + name + "'");
    if (v->val.shape != shape || v->val.data.size() != numel)
      throw ConfigError("checkpoint shape mismatch for '" + name + "'");
    is.read(reinterpret_cast<char*>(v->val.data.data()),
            static_cast<std::streamsize>(numel * sizeof(double)));
    if (!is) throw ConfigError("truncated checkpoint block '" + name + "'");
  }
  const uint64_t stored_hash = get_u64(is);
  if (!is) throw ConfigError("truncated checkpoint trailer: " + path);
  ParamRegistry verify;
  collect_all(m.net, verify);
  if (verify.content_hash() != stored_hash)
    throw ConfigError("checkpoint content hash mismatch (corrupt file): " + path);
  return m;
}

}  // namespace migc
