#include "hybridflow/serialize.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstdint>
#include <cstdio>
#include <stdexcept>

namespace hybridflow {

nlohmann::json tensor_to_json(const grad::Tensor& t) {
  std::string bits;
  bits.reserve(t.size() * 16);
  char buf[17];
  for (double v : t.values()) {
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(std::bit_cast<std::uint64_t>(v)));
    bits.append(buf, 16);
  }
  return {{"shape", t.shape()}, {"bits", bits}};
}

grad::Tensor tensor_from_json(const nlohmann::json& j) {
  grad::Shape shape = j.at("shape").get<grad::Shape>();
  const std::string& bits = j.at("bits").get_ref<const std::string&>();
  const std::size_t n = grad::shape_size(shape);
  if (bits.size() != n * 16) throw std::runtime_error("checkpoint: tensor payload length does not match its shape");
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t u = std::stoull(bits.substr(i * 16, 16), nullptr, 16);
    values[i] = std::bit_cast<double>(u);
  }
  return grad::Tensor(std::move(shape), std::move(values));
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256: digest failed");
  }
  std::string out;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    out += buf;
  }
  return out;
}

}  // namespace hybridflow
