#include "support.hpp"

#include <cmath>

#include "spmim/gradcheck.hpp"

namespace spmim::test {

Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  return Tensor::uniform(shape, lo, hi, rng);
}

EncoderConfig tiny_encoder() {
  EncoderConfig c;
  c.in_channels = 3;
  c.stem_channels = 4;
  c.stem_stride = 2;
  c.stages = {{4, 1, 1.0, 1, 0.0}, {6, 2, 2.0, 1, 0.0}, {8, 2, 2.0, 1, 0.0}};
  c.scales = 3;
  return c;
}

ModelConfig tiny_model(int decoder_width) {
  ModelConfig m;
  m.encoder = tiny_encoder();
  m.decoder = DecoderConfig::uniform(3, decoder_width);
  return m;
}

EncoderConfig random_tiny_encoder(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> width(2, 8), scales(2, 4), rep(1, 2), coin(0, 1);
  EncoderConfig c;
  c.stem_channels = width(rng);
  c.stem_stride = 2;
  c.scales = scales(rng);
  c.stages.clear();
  if (coin(rng)) c.stages.push_back({width(rng), 1, 1.0, 1, 0.0});
  for (int s = 1; s < c.scales; ++s) {
    c.stages.push_back({width(rng), 2, coin(rng) ? 1.0 : 2.0, rep(rng), 0.0});
  }
  if (coin(rng)) c.stages.push_back({width(rng), 1, 3.0, 1, 0.0});
  return c;
}

GradCheck check_parameter_grads(const std::vector<Parameter*>& params, const std::function<Var(Graph&)>& build,
                                double h, std::size_t stride, double floor) {
  {
    Graph g;
    Var loss = build(g);
    g.backward(loss);
  }
  GradCheck result;
  for (Parameter* p : params) {
    const Tensor analytic = p->grad;
    for (std::size_t i = 0; i < p->value.numel(); i += stride) {
      const double saved = p->value[i];
      auto eval = [&](double v) {
        p->value[i] = v;
        Graph g;
        return build(g).value().item();
      };
      const double up = eval(saved + h), down = eval(saved - h);
      p->value[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double err = relative_error(analytic[i], numeric, floor);
      ++result.coords;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = p->name + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic[i]) +
                       " numeric " + std::to_string(numeric);
      }
    }
  }
  return result;
}

std::vector<ImageRecord> smooth_images(int count, int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(0.0, size), rad(size / 8.0, size / 3.0), amp(0.2, 0.6);
  std::vector<ImageRecord> out;
  for (int i = 0; i < count; ++i) {
    Tensor px({3, size, size}, 0.2);
    for (int b = 0; b < 3; ++b) {
      const double cy = pos(rng), cx = pos(rng), r = rad(rng);
      const double a[3] = {amp(rng), amp(rng), amp(rng)};
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < size; ++y)
          for (int x = 0; x < size; ++x) {
            const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
            px[(static_cast<std::size_t>(c) * size + y) * size + x] += a[c] * std::exp(-d2 / (2 * r * r));
          }
    }
    for (double& v : px.data()) v = std::min(v, 1.0);
    out.push_back({"smooth" + std::to_string(i), std::move(px), std::nullopt, ""});
  }
  return out;
}

Tensor naive_conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int pad_begin, int pad_end,
                    int groups) {
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int oh = (h + pad_begin + pad_end - kh) / stride + 1, ow = (wd + pad_begin + pad_end - kw) / stride + 1;
  const int cin_g = cin / groups, cout_g = cout / groups;
  Tensor out({n, cout, oh, ow}, 0.0);
  for (int b = 0; b < n; ++b)
    for (int co = 0; co < cout; ++co)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = bias ? (*bias)[static_cast<std::size_t>(co)] : 0.0;
          const int g = co / cout_g;
          for (int ci = 0; ci < cin_g; ++ci)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const int iy = oy * stride + ky - pad_begin, ix = ox * stride + kx - pad_begin;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += x.at(b, g * cin_g + ci, iy, ix) * w.at(co, ci, ky, kx);
              }
          out.at(b, co, oy, ox) = acc;
        }
  return out;
}

TempDir::TempDir() {
  std::random_device rd;
  for (;;) {
    path_ = std::filesystem::temp_directory_path() / ("spmim-test-" + std::to_string(rd()));
    if (std::filesystem::create_directory(path_)) break;
  }
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

}  // namespace spmim::test
