#include "inpk/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "inpk/errors.hpp"

namespace inpk {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

constexpr char kMagic[8] = {'I', 'N', 'P', 'K', 'C', 'K', 'P', 'T'};
constexpr std::size_t kDigest = 32;

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_str(std::string& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  Reader(const std::string& s, std::size_t begin, std::size_t end) : s_(s), pos_(begin), end_(end) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, s_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string str() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string out = s_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  void doubles(std::span<double> out) {
    need(out.size() * sizeof(double));
    std::memcpy(out.data(), s_.data() + pos_, out.size() * sizeof(double));
    pos_ += out.size() * sizeof(double);
  }

  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (end_ - pos_ < n) throw IntegrityError("checkpoint payload is truncated");
  }
  const std::string& s_;
  std::size_t pos_, end_;
};

std::string digest(const char* data, std::size_t n) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, n, md, &len, EVP_sha256(), nullptr) != 1 || len != kDigest)
    throw IntegrityError("SHA-256 computation failed");
  return std::string(reinterpret_cast<const char*>(md), len);
}

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned char c : digest(bytes.data(), bytes.size())) {
    out.push_back(hex[c >> 4]);
    out.push_back(hex[c & 15]);
  }
  return out;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string payload;
  put_str(payload, ckpt.config.dump());
  put_str(payload, ckpt.rng_state);
  put<std::uint32_t>(payload, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    put_str(payload, name);
    put<std::uint32_t>(payload, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(payload, d);
    const auto v = t.values();
    payload.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
  }
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, payload.size());
  out += payload;
  out += digest(payload.data(), payload.size());
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  const std::size_t header = sizeof(kMagic) + 4 + 8;
  if (bytes.size() < header + kDigest || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw IntegrityError("not a checkpoint file");
  Reader head(bytes, sizeof(kMagic), header);
  const auto version = head.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw IntegrityError("unsupported checkpoint version " + std::to_string(version));
  const auto size = head.get<std::uint64_t>();
  if (size != bytes.size() - header - kDigest)
    throw IntegrityError("checkpoint size does not match its header");
  if (digest(bytes.data() + header, size) != bytes.substr(header + size))
    throw IntegrityError("checkpoint checksum mismatch");

  Reader r(bytes, header, header + size);
  Checkpoint c;
  try {
    c.config = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw IntegrityError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  c.rng_state = r.str();
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw IntegrityError("implausible tensor rank in checkpoint");
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    Tensor t(shape);
    r.doubles(t.values_mut());
    c.tensors.push_back({std::move(name), t});
  }
  if (!r.done()) throw IntegrityError("trailing bytes in checkpoint payload");
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write checkpoint '" + path + "'");
  const std::string bytes = serialize_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw UsageError("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

void restore_params(const Checkpoint& ckpt, PromptModel& model) {
  std::map<std::string, const Tensor*> stored;
  for (const auto& nt : ckpt.tensors) stored[nt.name] = &nt.tensor;
  const auto params = model.params();
  if (params.size() != stored.size())
    throw IntegrityError("checkpoint holds " + std::to_string(stored.size()) +
                         " tensors but the model has " + std::to_string(params.size()));
  for (auto p : params) {
    auto it = stored.find(p.name);
    if (it == stored.end()) throw IntegrityError("checkpoint lacks tensor '" + p.name + "'");
    if (it->second->shape() != p.tensor.shape())
      throw IntegrityError("tensor '" + p.name + "' has shape " + shape_str(it->second->shape()) +
                           ", model expects " + shape_str(p.tensor.shape()));
    const auto src = it->second->values();
    std::copy(src.begin(), src.end(), p.tensor.values_mut().begin());
  }
}

}  // namespace inpk
