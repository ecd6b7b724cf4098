#include "badiff/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "badiff/errors.hpp"
#include "badiff/training.hpp"

namespace badiff {

uint64_t fnv1a64(const uint8_t* data, size_t size) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < size; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

constexpr uint32_t kCheckpointVersion = 1;

void put_bytes(std::vector<uint8_t>& out, const void* p, size_t n) {
  const uint8_t* b = static_cast<const uint8_t*>(p);
  out.insert(out.end(), b, b + n);
}

template <typename T>
void put_pod(std::vector<uint8_t>& out, T v) {
  put_bytes(out, &v, sizeof(T));
}

void put_string(std::vector<uint8_t>& out, const std::string& s) {
  put_pod<uint32_t>(out, static_cast<uint32_t>(s.size()));
  put_bytes(out, s.data(), s.size());
}

void put_doubles(std::vector<uint8_t>& out, const std::vector<double>& v) {
  put_pod<uint64_t>(out, static_cast<uint64_t>(v.size()));
  put_bytes(out, v.data(), v.size() * sizeof(double));
}

void put_stream(std::vector<uint8_t>& out, const RngStream& s) {
  put_pod<uint64_t>(out, s.seed());
  put_pod<uint64_t>(out, s.counter());
}

struct Reader {
  const std::vector<uint8_t>& bytes;
  size_t pos = 0;

  void read_bytes(void* p, size_t n) {
    if (pos + n > bytes.size()) throw format_error("checkpoint truncated");
    std::memcpy(p, bytes.data() + pos, n);
    pos += n;
  }
  template <typename T>
  T pod() {
    T v;
    read_bytes(&v, sizeof(T));
    return v;
  }
  std::string str() {
    uint32_t n = pod<uint32_t>();
    std::string s(n, '\0');
    read_bytes(s.data(), n);
    return s;
  }
  std::vector<double> doubles() {
    uint64_t n = pod<uint64_t>();
    if (pos + n * sizeof(double) > bytes.size()) {
      throw format_error("checkpoint truncated");
    }
    std::vector<double> v(static_cast<size_t>(n));
    read_bytes(v.data(), static_cast<size_t>(n) * sizeof(double));
    return v;
  }
  RngStream stream() {
    uint64_t seed = pod<uint64_t>();
    uint64_t counter = pod<uint64_t>();
    return RngStream(seed, counter);
  }
};

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw format_error("cannot open checkpoint: " + path);
  return std::vector<uint8_t>((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& config_text,
                     const Model& model, const AdamState& adam,
                     const TrainerRng& rng, int64_t iteration) {
  std::vector<uint8_t> out;
  put_bytes(out, "BADC", 4);
  put_pod<uint32_t>(out, kCheckpointVersion);
  put_string(out, config_text);
  put_pod<int64_t>(out, iteration);
  put_stream(out, rng.data);
  put_stream(out, rng.timestep);
  put_stream(out, rng.noise);
  put_stream(out, rng.budget);

  const ParamSet& params = model.params();
  put_pod<uint32_t>(out, static_cast<uint32_t>(params.size()));
  for (size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = params[i];
    put_string(out, p.name);
    put_pod<uint8_t>(out, p.trainable ? 1 : 0);
    put_pod<uint32_t>(out, static_cast<uint32_t>(p.tensor.shape().size()));
    for (int d : p.tensor.shape()) put_pod<int32_t>(out, d);
    put_doubles(out, p.tensor.values());
  }

  put_pod<int64_t>(out, adam.step_count());
  put_pod<uint32_t>(out, static_cast<uint32_t>(adam.moments_m().size()));
  for (const auto& m : adam.moments_m()) put_doubles(out, m);
  for (const auto& v : adam.moments_v()) put_doubles(out, v);

  uint64_t hash = fnv1a64(out.data(), out.size());
  put_pod<uint64_t>(out, hash);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw format_error("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
  if (!f) throw format_error("checkpoint write failed: " + path);
}

namespace {

Reader open_checked(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 16) throw format_error("checkpoint truncated");
  if (std::memcmp(bytes.data(), "BADC", 4) != 0) {
    throw format_error("checkpoint: bad magic");
  }
  uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  uint64_t computed = fnv1a64(bytes.data(), bytes.size() - 8);
  if (stored != computed) {
    throw format_error("checkpoint: content hash mismatch (corrupted file)");
  }
  Reader r{bytes, 4};
  uint32_t version = r.pod<uint32_t>();
  if (version != kCheckpointVersion) {
    throw format_error("checkpoint: unsupported version " + std::to_string(version));
  }
  return r;
}

}  // namespace

std::string peek_checkpoint_config(const std::string& path) {
  auto bytes = read_file(path);
  Reader r = open_checked(bytes);
  return r.str();
}

LoadedCheckpoint load_checkpoint(const std::string& path, Model& model) {
  auto bytes = read_file(path);
  Reader r = open_checked(bytes);

  LoadedCheckpoint out;
  out.config_text = r.str();
  out.iteration = r.pod<int64_t>();
  out.rng.data = r.stream();
  out.rng.timestep = r.stream();
  out.rng.noise = r.stream();
  out.rng.budget = r.stream();

  uint32_t count = r.pod<uint32_t>();
  ParamSet& params = model.params();
  if (count != params.size()) {
    throw format_error("checkpoint: parameter count mismatch");
  }
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    uint8_t trainable = r.pod<uint8_t>();
    uint32_t ndim = r.pod<uint32_t>();
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = r.pod<int32_t>();
    std::vector<double> data = r.doubles();
    Parameter& p = params[i];
    if (p.name != name || p.tensor.shape() != shape) {
      throw format_error("checkpoint: parameter mismatch at '" + name +
                         "' (model config differs)");
    }
    p.trainable = trainable != 0;
    p.tensor.values() = std::move(data);
  }

  out.adam_step_count = r.pod<int64_t>();
  uint32_t acount = r.pod<uint32_t>();
  if (acount != count) throw format_error("checkpoint: optimizer state mismatch");
  out.adam_m.resize(acount);
  out.adam_v.resize(acount);
  for (uint32_t i = 0; i < acount; ++i) {
    out.adam_m[i] = {params[i].name, r.doubles()};
  }
  for (uint32_t i = 0; i < acount; ++i) {
    out.adam_v[i] = {params[i].name, r.doubles()};
  }
  return out;
}

}  // namespace badiff
