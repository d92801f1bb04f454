#include "docie/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace docie::checkpoint {

namespace {

constexpr char kMagic[4] = {'T', 'R', 'K', '1'};

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, double d) {
  std::uint64_t bits{};
  std::memcpy(&bits, &d, sizeof(bits));
  put_u64(buf, bits);
}

struct Reader {
  const std::string& data;
  size_t pos = 0;

  void need(size_t n, const char* what) const {
    if (pos + n > data.size()) {
      throw std::runtime_error(std::string("checkpoint: truncated ") + what + " at byte " +
                               std::to_string(pos));
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  double f64(const char* what) {
    std::uint64_t bits = u64(what);
    double d{};
    std::memcpy(&d, &bits, sizeof(d));
    return d;
  }
  std::string str(size_t n, const char* what) {
    need(n, what);
    std::string s = data.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void save(const std::string& path, const ParamMap& params) {
  std::string body;
  for (const auto& [name, tensor] : params) {
    put_u32(body, static_cast<std::uint32_t>(name.size()));
    body.append(name);
    put_u32(body, static_cast<std::uint32_t>(tensor.shape().size()));
    for (int d : tensor.shape()) put_u32(body, static_cast<std::uint32_t>(d));
    for (double v : tensor.values()) put_f64(body, v);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  out.write(kMagic, 4);
  std::string len;
  put_u64(len, body.size());
  out.write(len.data(), static_cast<std::streamsize>(len.size()));
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

ParamMap load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < 12 || std::memcmp(data.data(), kMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: " + path + " is not a TRK1 container");
  }
  Reader r{data, 4};
  const std::uint64_t body_len = r.u64("body length");
  if (r.pos + body_len != data.size()) {
    throw std::runtime_error("checkpoint: " + path + " body length mismatch");
  }
  ParamMap params;
  while (r.pos < data.size()) {
    const std::uint32_t name_len = r.u32("name length");
    std::string name = r.str(name_len, "name");
    const std::uint32_t rank = r.u32("rank");
    std::vector<int> shape(rank);
    std::uint64_t count = 1;
    for (auto& d : shape) {
      d = static_cast<int>(r.u32("extent"));
      count *= static_cast<std::uint64_t>(d);
    }
    std::vector<double> values(count);
    for (auto& v : values) v = r.f64("payload");
    params.emplace_back(std::move(name),
                        numkit::Tensor::from_values(std::move(shape), std::move(values)));
  }
  return params;
}

void restore_into(const ParamMap& from, ParamMap& into) {
  for (auto& [name, tensor] : into) {
    const numkit::Tensor* found = nullptr;
    for (const auto& [src_name, src] : from) {
      if (src_name == name) {
        found = &src;
        break;
      }
    }
    if (!found) throw std::runtime_error("checkpoint: missing parameter " + name);
    if (found->shape() != tensor.shape()) {
      throw std::runtime_error("checkpoint: parameter " + name + " has shape " +
                               numkit::shape_to_string(found->shape()) + ", expected " +
                               numkit::shape_to_string(tensor.shape()));
    }
    tensor.values() = found->values();
  }
}

}  // namespace docie::checkpoint
