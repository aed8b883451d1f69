#include "hybridflow/made.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "hybridflow/errors.hpp"
#include "hybridflow/random.hpp"

namespace hybridflow::made {

namespace {

Tensor mask_between(const std::vector<int>& dst, const std::vector<int>& src, bool strict) {
  Tensor m({dst.size(), src.size()});
  for (std::size_t o = 0; o < dst.size(); ++o)
    for (std::size_t i = 0; i < src.size(); ++i) m(o, i) = (strict ? dst[o] > src[i] : dst[o] >= src[i]) ? 1.0 : 0.0;
  return m;
}

void fill_uniform(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double bound = fan_in > 0 ? 1.0 / std::sqrt(static_cast<double>(fan_in)) : 0.0;
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double& v : t.values()) v = u(rng);
}

}  // namespace

std::vector<Tensor*> MadeNetwork::parameters() {
  std::vector<Tensor*> out;
  for (MaskedLayer& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  if (c > 0) {
    out.push_back(&context_weight);
    out.push_back(&context_out_weight);
  }
  return out;
}

std::vector<const Tensor*> MadeNetwork::parameters() const {
  std::vector<const Tensor*> out;
  for (Tensor* p : const_cast<MadeNetwork*>(this)->parameters()) out.push_back(p);
  return out;
}

MadeNetwork build_made(std::size_t d, std::size_t c, const std::vector<std::size_t>& hidden, std::uint64_t seed) {
  if (d == 0) throw std::invalid_argument("build_made: target dimension must be at least 1");
  for (std::size_t h : hidden) {
    if (d > 1 && h < d - 1) {
      throw std::invalid_argument("build_made: hidden width " + std::to_string(h) + " cannot realize degrees 1.." +
                                  std::to_string(d - 1));
    }
  }
  MadeNetwork net;
  net.d = d;
  net.c = c;
  net.hidden = hidden;

  std::vector<int> in(d);
  for (std::size_t i = 0; i < d; ++i) in[i] = static_cast<int>(i + 1);
  net.degrees.push_back(in);
  for (std::size_t h : hidden) {
    std::vector<int> deg(h);
    for (std::size_t k = 0; k < h; ++k) deg[k] = d > 1 ? static_cast<int>(k % (d - 1)) + 1 : 0;
    net.degrees.push_back(deg);
  }
  std::vector<int> out(2 * d);
  for (std::size_t i = 0; i < d; ++i) out[i] = out[d + i] = static_cast<int>(i + 1);
  net.degrees.push_back(out);

  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < net.degrees.size(); ++l) {
    const std::vector<int>& src = net.degrees[l];
    const std::vector<int>& dst = net.degrees[l + 1];
    const bool is_output = l + 2 == net.degrees.size();
    MaskedLayer layer{Tensor({dst.size(), src.size()}), mask_between(dst, src, is_output), Tensor({dst.size()})};
    if (!is_output) {
      // The context shares the first layer's fan-in.
      const std::size_t fan_in = src.size() + (l == 0 ? c : 0);
      fill_uniform(layer.weight, fan_in, rng);
      fill_uniform(layer.bias, fan_in, rng);
    }
    net.layers.push_back(std::move(layer));
  }

  const std::size_t first_width = hidden.empty() ? 2 * d : hidden.front();
  net.context_weight = Tensor({first_width, c});
  if (!hidden.empty()) fill_uniform(net.context_weight, d + c, rng);
  net.context_out_weight = Tensor({2 * d, c});
  return net;
}

MadeOutput made_forward(const MadeNetwork& net, Tape& tape, Var y, Var ctx) {
  const Tensor& yv = y.value();
  const Tensor& cv = ctx.value();
  if (yv.rank() != 2 || yv.cols() != net.d) {
    throw ShapeError("made_forward: y has shape " + grad::shape_string(yv.shape()) + ", expected [batch," +
                     std::to_string(net.d) + "]");
  }
  if (net.c > 0 && (cv.rank() != 2 || cv.cols() != net.c || cv.rows() != yv.rows())) {
    throw ShapeError("made_forward: context has shape " + grad::shape_string(cv.shape()) + ", expected [" +
                     std::to_string(yv.rows()) + "," + std::to_string(net.c) + "]");
  }

  Var h = y;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const MaskedLayer& layer = net.layers[l];
    Var a = grad::masked_linear(h, tape.parameter(layer.weight), layer.mask, tape.parameter(layer.bias));
    if (l == 0 && net.c > 0) a = a + grad::matmul(ctx, grad::transpose(tape.parameter(net.context_weight)));
    const bool is_output = l + 1 == net.layers.size();
    if (is_output) {
      if (net.c > 0) a = a + grad::matmul(ctx, grad::transpose(tape.parameter(net.context_out_weight)));
      h = a;
    } else {
      h = grad::tanh(a);
    }
  }
  return MadeOutput{grad::slice_cols(h, 0, net.d),
                    grad::clamp(grad::slice_cols(h, net.d, 2 * net.d), -kLogScaleClamp, kLogScaleClamp)};
}

MadeValues made_forward(const MadeNetwork& net, const Tensor& y, const Tensor& ctx) {
  Tape tape;
  MadeOutput out = made_forward(net, tape, tape.constant(y), tape.constant(ctx));
  return MadeValues{out.shift.value(), out.log_scale.value()};
}

}  // namespace hybridflow::made
