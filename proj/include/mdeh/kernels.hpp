#pragma once

#include "mdeh/tensor.hpp"

namespace mdeh::kernels {

// All kernels operate on NCHW tensors. Backward kernels accumulate into the
// gradient tensors they are handed (callers zero-initialize).

struct ConvDims {
  int n, ci, hi, wi;   // input
  int co, k;           // kernel (square)
  int stride, pad;
  int ho, wo;          // output
};

ConvDims conv_dims(const Tensor& input, const Tensor& weights, int stride, int pad);

/// Cross-correlation, optional bias (pass nullptr to skip).
Tensor conv2d_fwd(const Tensor& input, const Tensor& weights, const Tensor* bias, int stride,
                  int pad);
void conv2d_bwd(const Tensor& input, const Tensor& weights, const Tensor& gout, int stride,
                int pad, Tensor* ginput, Tensor* gweights, Tensor* gbias);

/// Bilinear sampling. `grid` is (N,2,Ho,Wo) holding (u,v) pixel coordinates
/// (integer coordinates are pixel centers). Out-of-range coordinates clamp to
/// the border.
Tensor grid_sample_fwd(const Tensor& image, const Tensor& grid);
void grid_sample_bwd(const Tensor& image, const Tensor& grid, const Tensor& gout, Tensor* gimage,
                     Tensor* ggrid);
/// 1 where the (u,v) sample lies inside [0,W-1]x[0,H-1], else 0. Shape (N,1,Ho,Wo).
Tensor grid_sample_validity(const Tensor& grid, int image_h, int image_w);

/// 3x3 box mean with replicate border, applied per channel.
Tensor box3x3_fwd(const Tensor& input);
void box3x3_bwd(const Tensor& input, const Tensor& gout, Tensor* ginput);

/// Nearest-neighbour 2x upsampling.
Tensor upsample2x_fwd(const Tensor& input);
void upsample2x_bwd(const Tensor& gout, Tensor* ginput);

/// Channel concatenation of two NCHW tensors.
Tensor concat_ch_fwd(const Tensor& a, const Tensor& b);
void concat_ch_bwd(const Tensor& gout, int ca, Tensor* ga, Tensor* gb);

/// x:(N,F) W:(O,F) b:(O) -> (N,O)
Tensor linear_fwd(const Tensor& x, const Tensor& w, const Tensor* bias);
void linear_bwd(const Tensor& x, const Tensor& w, const Tensor& gout, Tensor* gx, Tensor* gw,
                Tensor* gb);

}  // namespace mdeh::kernels
