#pragma once

#include "spmim/spatial_mask.hpp"

namespace spmim::detail {

struct ConvGeometry {
  int batch, in_channels, in_h, in_w;
  int out_channels, kernel_h, kernel_w;
  int stride, padding, groups;
  int out_h, out_w;
};

// Accumulation order per output element is bias, then (ci, ky, kx)
// lexicographic; rows/columns outside `runs` are left at zero.
void conv2d_forward(const ConvGeometry& g, const double* input, const double* weight,
                    const double* bias, const RowRuns& runs, double* output);

// Any of the gradient outputs may be null. Accumulates (+=) into them.
void conv2d_backward(const ConvGeometry& g, const double* input, const double* weight,
                     const double* grad_out, const RowRuns& runs, double* grad_in,
                     double* grad_weight, double* grad_bias);

}  // namespace spmim::detail
