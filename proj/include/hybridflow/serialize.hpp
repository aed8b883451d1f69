#pragma once

#include <string>

#include <json.hpp>

#include "hybridflow/tensor.hpp"

namespace hybridflow {

// Doubles are written as 16-hex-digit IEEE-754 bit patterns so a reload is
// bit-exact.
nlohmann::json tensor_to_json(const grad::Tensor& t);
grad::Tensor tensor_from_json(const nlohmann::json& j);

std::string sha256_hex(const std::string& bytes);

}  // namespace hybridflow
