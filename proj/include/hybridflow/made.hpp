#pragma once

#include <cstdint>
#include <vector>

#include "hybridflow/tape.hpp"

namespace hybridflow::made {

using grad::Tape;
using grad::Tensor;
using grad::Var;

struct MaskedLayer {
  Tensor weight;  // [out, in]
  Tensor mask;    // [out, in], entries 0/1
  Tensor bias;    // [out]
};

// Masked autoregressive conditioner. Output columns [0, d) are shifts and
// [d, 2d) are log-scales; output i has degree i + 1 and so only sees y_{<i}
// and the context.
struct MadeNetwork {
  std::size_t d = 0;
  std::size_t c = 0;
  std::vector<std::size_t> hidden;
  // degrees[0] are input degrees 1..d, then one vector per hidden layer,
  // then the 2d output degrees.
  std::vector<std::vector<int>> degrees;
  std::vector<MaskedLayer> layers;  // hidden layers followed by the output layer
  Tensor context_weight;            // [first layer width, c], unmasked
  Tensor context_out_weight;        // [2d, c], unmasked skip from context to outputs

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
};

// Throws std::invalid_argument when d == 0 or a hidden layer is narrower than d - 1.
MadeNetwork build_made(std::size_t d, std::size_t c, const std::vector<std::size_t>& hidden, std::uint64_t seed);

struct MadeOutput {
  Var shift;      // [batch, d]
  Var log_scale;  // [batch, d], clamped to [-kLogScaleClamp, kLogScaleClamp]
};

inline constexpr double kLogScaleClamp = 7.0;

// ctx may be an empty [batch, 0] matrix when c == 0.
MadeOutput made_forward(const MadeNetwork& net, Tape& tape, Var y, Var ctx);

struct MadeValues {
  Tensor shift;
  Tensor log_scale;
};
MadeValues made_forward(const MadeNetwork& net, const Tensor& y, const Tensor& ctx);

}  // namespace hybridflow::made
