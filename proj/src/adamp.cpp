#include "spmim/adamp.hpp"

#include <algorithm>
#include <cmath>

#include "spmim/errors.hpp"

namespace spmim {
namespace {

// max over rows of |cos(a_row, b_row)| for a [rows, cols] view.
double max_abs_cosine(std::span<const double> a, std::span<const double> b, int rows, double eps) {
  const std::size_t cols = a.size() / static_cast<std::size_t>(rows);
  double worst = 0.0;
  for (int r = 0; r < rows; ++r) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double x = a[r * cols + c], y = b[r * cols + c];
      dot += x * y;
      na += x * x;
      nb += y * y;
    }
    const double denom = std::max(std::sqrt(na), eps) * std::max(std::sqrt(nb), eps);
    worst = std::max(worst, std::abs(dot) / denom);
  }
  return worst;
}

}  // namespace

nlohmann::json AdamPOptions::to_json() const {
  return {{"lr", lr},       {"beta1", beta1},       {"beta2", beta2},         {"eps", eps},
          {"weight_decay", weight_decay}, {"delta", delta}, {"wd_ratio", wd_ratio},
          {"nesterov", nesterov}, {"projection", projection}};
}

AdamPOptions AdamPOptions::from_json(const nlohmann::json& j) {
  AdamPOptions o;
  o.lr = j.at("lr");
  o.beta1 = j.at("beta1");
  o.beta2 = j.at("beta2");
  o.eps = j.at("eps");
  o.weight_decay = j.at("weight_decay");
  o.delta = j.at("delta");
  o.wd_ratio = j.at("wd_ratio");
  o.nesterov = j.at("nesterov");
  o.projection = j.at("projection");
  return o;
}

void project_out_radial(std::span<double> update, std::span<const double> weight, int rows, double eps) {
  const std::size_t cols = weight.size() / static_cast<std::size_t>(rows);
  for (int r = 0; r < rows; ++r) {
    double norm = 0.0;
    for (std::size_t c = 0; c < cols; ++c) norm += weight[r * cols + c] * weight[r * cols + c];
    norm = std::max(std::sqrt(norm), eps);
    double dot = 0.0;
    for (std::size_t c = 0; c < cols; ++c) dot += (weight[r * cols + c] / norm) * update[r * cols + c];
    for (std::size_t c = 0; c < cols; ++c) update[r * cols + c] -= (weight[r * cols + c] / norm) * dot;
  }
}

void AdamP::step(std::span<Parameter* const> params) {
  for (const Parameter* p : params) {
    if (p->grad.shape() != p->value.shape()) throw DimensionError("AdamP: gradient shape mismatch for " + p->name);
    if (!p->grad.all_finite()) throw NumericalError("AdamP: non-finite gradient for " + p->name);
  }
  ++step_;
  const AdamPOptions& o = options_;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(step_));
  const double step_size = o.lr / bc1;

  for (Parameter* p : params) {
    Moments& s = state_[p->name];
    if (s.m.empty()) {
      s.m = Tensor::zeros(p->value.shape());
      s.v = Tensor::zeros(p->value.shape());
    }
    const std::size_t n = p->value.numel();
    Tensor perturb(p->value.shape());
    for (std::size_t i = 0; i < n; ++i) {
      const double g = p->grad[i];
      s.m[i] = o.beta1 * s.m[i] + (1.0 - o.beta1) * g;
      s.v[i] = o.beta2 * s.v[i] + (1.0 - o.beta2) * g * g;
      const double denom = std::sqrt(s.v[i]) / std::sqrt(bc2) + o.eps;
      const double numer = o.nesterov ? o.beta1 * s.m[i] + (1.0 - o.beta1) * g : s.m[i];
      perturb[i] = numer / denom;
    }

    double wd_ratio = 1.0;
    if (o.projection && p->value.rank() > 1) {
      const int channels = p->value.dim(0);
      const std::size_t dim_channel = n / static_cast<std::size_t>(channels);
      // Per-output-channel view first, then the whole tensor as one row.
      for (auto [rows, dim] : {std::pair<int, std::size_t>{channels, dim_channel}, {1, n}}) {
        const double cos = max_abs_cosine(p->grad.data(), p->value.data(), rows, o.eps);
        if (cos < o.delta / std::sqrt(static_cast<double>(dim))) {
          project_out_radial(perturb.data(), p->value.data(), rows, o.eps);
          wd_ratio = o.wd_ratio;
          break;
        }
      }
    }

    if (o.weight_decay > 0.0) {
      const double decay = 1.0 - o.lr * o.weight_decay * wd_ratio;
      for (double& w : p->value.data()) w *= decay;
    }
    for (std::size_t i = 0; i < n; ++i) p->value[i] -= step_size * perturb[i];
  }
}

}  // namespace spmim
