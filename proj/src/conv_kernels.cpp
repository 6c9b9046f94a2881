#include "conv_kernels.hpp"

#include <algorithm>
#include <cstddef>

namespace spmim::detail {
namespace {

// Columns ox with 0 <= ox*stride + kx - padding < in_w, as [lo, hi).
inline void valid_columns(const ConvGeometry& g, int kx, int& lo, int& hi) {
  int shift = g.padding - kx;
  lo = shift > 0 ? (shift + g.stride - 1) / g.stride : 0;
  int last = g.in_w - 1 + shift;
  hi = last < 0 ? 0 : std::min(g.out_w, last / g.stride + 1);
}

inline std::size_t plane_offset(int n, int c, int channels, int h, int w) {
  return (static_cast<std::size_t>(n) * channels + c) * static_cast<std::size_t>(h) * w;
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, const double* input, const double* weight,
                    const double* bias, const RowRuns& runs, double* output) {
  const int cin_pg = g.in_channels / g.groups;
  const int cout_pg = g.out_channels / g.groups;
  const std::size_t kernel_size = static_cast<std::size_t>(g.kernel_h) * g.kernel_w;

  for (int n = 0; n < g.batch; ++n) {
    for (int co = 0; co < g.out_channels; ++co) {
      double* out = output + plane_offset(n, co, g.out_channels, g.out_h, g.out_w);
      std::fill(out, out + static_cast<std::size_t>(g.out_h) * g.out_w, 0.0);
      if (bias) {
        for (int oy = 0; oy < g.out_h; ++oy) {
          for (auto run : runs.row(n, oy)) {
            std::fill(out + oy * g.out_w + run.begin, out + oy * g.out_w + run.end, bias[co]);
          }
        }
      }
      const int group = co / cout_pg;
      for (int cig = 0; cig < cin_pg; ++cig) {
        const int ci = group * cin_pg + cig;
        const double* in = input + plane_offset(n, ci, g.in_channels, g.in_h, g.in_w);
        const double* wk = weight + (static_cast<std::size_t>(co) * cin_pg + cig) * kernel_size;
        for (int ky = 0; ky < g.kernel_h; ++ky) {
          for (int kx = 0; kx < g.kernel_w; ++kx) {
            const double wv = wk[ky * g.kernel_w + kx];
            int col_lo, col_hi;
            valid_columns(g, kx, col_lo, col_hi);
            for (int oy = 0; oy < g.out_h; ++oy) {
              const int iy = oy * g.stride + ky - g.padding;
              if (iy < 0 || iy >= g.in_h) continue;
              double* orow = out + static_cast<std::size_t>(oy) * g.out_w;
              const double* irow = in + static_cast<std::size_t>(iy) * g.in_w;
              for (auto run : runs.row(n, oy)) {
                const int lo = std::max(run.begin, col_lo);
                const int hi = std::min(run.end, col_hi);
                if (g.stride == 1) {
                  const double* src = irow + (kx - g.padding);
                  for (int ox = lo; ox < hi; ++ox) orow[ox] += wv * src[ox];
                } else {
                  for (int ox = lo; ox < hi; ++ox) {
                    orow[ox] += wv * irow[ox * g.stride + kx - g.padding];
                  }
                }
              }
            }
          }
        }
      }
    }
  }
}

void conv2d_backward(const ConvGeometry& g, const double* input, const double* weight,
                     const double* grad_out, const RowRuns& runs, double* grad_in,
                     double* grad_weight, double* grad_bias) {
  const int cin_pg = g.in_channels / g.groups;
  const int cout_pg = g.out_channels / g.groups;
  const std::size_t kernel_size = static_cast<std::size_t>(g.kernel_h) * g.kernel_w;

  for (int n = 0; n < g.batch; ++n) {
    for (int co = 0; co < g.out_channels; ++co) {
      const double* gout = grad_out + plane_offset(n, co, g.out_channels, g.out_h, g.out_w);
      if (grad_bias) {
        double acc = 0.0;
        for (int oy = 0; oy < g.out_h; ++oy) {
          for (auto run : runs.row(n, oy)) {
            for (int ox = run.begin; ox < run.end; ++ox) acc += gout[oy * g.out_w + ox];
          }
        }
        grad_bias[co] += acc;
      }
      const int group = co / cout_pg;
      for (int cig = 0; cig < cin_pg; ++cig) {
        const int ci = group * cin_pg + cig;
        const std::size_t in_off = plane_offset(n, ci, g.in_channels, g.in_h, g.in_w);
        const double* in = input + in_off;
        double* gin = grad_in ? grad_in + in_off : nullptr;
        const std::size_t wbase = (static_cast<std::size_t>(co) * cin_pg + cig) * kernel_size;
        for (int ky = 0; ky < g.kernel_h; ++ky) {
          for (int kx = 0; kx < g.kernel_w; ++kx) {
            const double wv = weight[wbase + ky * g.kernel_w + kx];
            double wacc = 0.0;
            int col_lo, col_hi;
            valid_columns(g, kx, col_lo, col_hi);
            for (int oy = 0; oy < g.out_h; ++oy) {
              const int iy = oy * g.stride + ky - g.padding;
              if (iy < 0 || iy >= g.in_h) continue;
              const double* grow = gout + static_cast<std::size_t>(oy) * g.out_w;
              const std::size_t irow = static_cast<std::size_t>(iy) * g.in_w;
              for (auto run : runs.row(n, oy)) {
                const int lo = std::max(run.begin, col_lo);
                const int hi = std::min(run.end, col_hi);
                for (int ox = lo; ox < hi; ++ox) {
                  const std::size_t ix = irow + static_cast<std::size_t>(ox * g.stride + kx - g.padding);
                  wacc += grow[ox] * in[ix];
                  if (gin) gin[ix] += wv * grow[ox];
                }
              }
            }
            if (grad_weight) grad_weight[wbase + ky * g.kernel_w + kx] += wacc;
          }
        }
      }
    }
  }
}

}  // namespace spmim::detail
