#include "tracewarp/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace tracewarp {

AdamState AdamState::for_params(const std::vector<NamedParam<float>>& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.tensor.numel(), 0.0f);
    s.v.emplace_back(p.tensor.numel(), 0.0f);
  }
  return s;
}

void adam_update(std::span<float> param, std::span<const float> grad, std::span<float> m,
                 std::span<float> v, std::uint64_t step, const AdamOptions& opt) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size())
    throw std::invalid_argument("adam_update: size mismatch");
  const double c1 = 1.0 - std::pow(opt.beta1, double(step));
  const double c2 = 1.0 - std::pow(opt.beta2, double(step));
  const float b1 = float(opt.beta1), b2 = float(opt.beta2);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const float g = grad[i];
    m[i] = b1 * m[i] + (1.0f - b1) * g;
    v[i] = b2 * v[i] + (1.0f - b2) * g * g;
    const double m_hat = m[i] / c1, v_hat = v[i] / c2;
    param[i] = static_cast<float>(param[i] - opt.lr * m_hat / (std::sqrt(v_hat) + opt.eps));
  }
}

void adam_update(const std::vector<NamedParam<float>>& params, AdamState& state, const AdamOptions& opt) {
  if (state.m.size() != params.size()) throw std::invalid_argument("adam_update: state does not match parameters");
  ++state.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto t = params[i].tensor;
    const auto g = t.grad();  // zeros when the tensor received none
    adam_update(t.mutable_data(), g, state.m[i], state.v[i], state.step, opt);
  }
}

}  // namespace tracewarp
