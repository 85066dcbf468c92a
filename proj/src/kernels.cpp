#include "mdeh/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mdeh::kernels {

ConvDims conv_dims(const Tensor& input, const Tensor& weights, int stride, int pad) {
  if (input.rank() != 4 || weights.rank() != 4)
    throw std::invalid_argument("conv2d: input and weights must be 4-D");
  if (weights.dim(2) != weights.dim(3))
    throw std::invalid_argument("conv2d: only square kernels supported");
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  ConvDims d;
  d.n = input.dim(0);
  d.ci = input.dim(1);
  d.hi = input.dim(2);
  d.wi = input.dim(3);
  d.co = weights.dim(0);
  d.k = weights.dim(2);
  d.stride = stride;
  d.pad = pad;
  if (weights.dim(1) != d.ci)
    throw std::invalid_argument("conv2d: kernel input channels do not match input channels");
  d.ho = (d.hi + 2 * pad - d.k) / stride + 1;
  d.wo = (d.wi + 2 * pad - d.k) / stride + 1;
  if (d.hi + 2 * pad < d.k || d.wi + 2 * pad < d.k)
    throw std::invalid_argument("conv2d: kernel does not fit padded input");
  return d;
}

Tensor conv2d_fwd(const Tensor& input, const Tensor& weights, const Tensor* bias, int stride,
                  int pad) {
  ConvDims d = conv_dims(input, weights, stride, pad);
  Tensor out({d.n, d.co, d.ho, d.wo});
  const float* in = input.data();
  const float* w = weights.data();
  float* o = out.data();
  const std::int64_t in_cstride = static_cast<std::int64_t>(d.hi) * d.wi;
  const std::int64_t out_cstride = static_cast<std::int64_t>(d.ho) * d.wo;
  for (int n = 0; n < d.n; ++n) {
    const float* in_n = in + n * d.ci * in_cstride;
    for (int oc = 0; oc < d.co; ++oc) {
      float* o_c = o + (static_cast<std::int64_t>(n) * d.co + oc) * out_cstride;
      const float bv = bias ? (*bias)[oc] : 0.0f;
      for (std::int64_t i = 0; i < out_cstride; ++i) o_c[i] = bv;
      for (int ic = 0; ic < d.ci; ++ic) {
        const float* in_c = in_n + ic * in_cstride;
        const float* w_c = w + ((static_cast<std::int64_t>(oc) * d.ci + ic) * d.k) * d.k;
        for (int ky = 0; ky < d.k; ++ky) {
          for (int kx = 0; kx < d.k; ++kx) {
            const float wv = w_c[ky * d.k + kx];
            if (wv == 0.0f) continue;
            for (int oy = 0; oy < d.ho; ++oy) {
              const int iy = oy * d.stride + ky - d.pad;
              if (iy < 0 || iy >= d.hi) continue;
              float* orow = o_c + static_cast<std::int64_t>(oy) * d.wo;
              const float* irow = in_c + static_cast<std::int64_t>(iy) * d.wi;
              for (int ox = 0; ox < d.wo; ++ox) {
                const int ix = ox * d.stride + kx - d.pad;
                if (ix < 0 || ix >= d.wi) continue;
                orow[ox] += wv * irow[ix];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

void conv2d_bwd(const Tensor& input, const Tensor& weights, const Tensor& gout, int stride,
                int pad, Tensor* ginput, Tensor* gweights, Tensor* gbias) {
  ConvDims d = conv_dims(input, weights, stride, pad);
  const float* in = input.data();
  const float* w = weights.data();
  const float* go = gout.data();
  const std::int64_t in_cstride = static_cast<std::int64_t>(d.hi) * d.wi;
  const std::int64_t out_cstride = static_cast<std::int64_t>(d.ho) * d.wo;
  for (int n = 0; n < d.n; ++n) {
    for (int oc = 0; oc < d.co; ++oc) {
      const float* go_c = go + (static_cast<std::int64_t>(n) * d.co + oc) * out_cstride;
      if (gbias) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < out_cstride; ++i) acc += go_c[i];
        (*gbias)[oc] += static_cast<float>(acc);
      }
      for (int ic = 0; ic < d.ci; ++ic) {
        const float* in_c = in + (static_cast<std::int64_t>(n) * d.ci + ic) * in_cstride;
        float* gin_c =
            ginput ? ginput->data() + (static_cast<std::int64_t>(n) * d.ci + ic) * in_cstride
                   : nullptr;
        const std::int64_t wbase = (static_cast<std::int64_t>(oc) * d.ci + ic) * d.k * d.k;
        for (int ky = 0; ky < d.k; ++ky) {
          for (int kx = 0; kx < d.k; ++kx) {
            const float wv = w[wbase + ky * d.k + kx];
            double wacc = 0.0;
            for (int oy = 0; oy < d.ho; ++oy) {
              const int iy = oy * d.stride + ky - d.pad;
              if (iy < 0 || iy >= d.hi) continue;
              const float* gorow = go_c + static_cast<std::int64_t>(oy) * d.wo;
              const float* irow = in_c + static_cast<std::int64_t>(iy) * d.wi;
              float* ginrow = gin_c ? gin_c + static_cast<std::int64_t>(iy) * d.wi : nullptr;
              for (int ox = 0; ox < d.wo; ++ox) {
                const int ix = ox * d.stride + kx - d.pad;
                if (ix < 0 || ix >= d.wi) continue;
                const float g = gorow[ox];
                if (gweights) wacc += static_cast<double>(g) * irow[ix];
                if (ginrow) ginrow[ix] += wv * g;
              }
            }
            if (gweights) (*gweights)[wbase + ky * d.k + kx] += static_cast<float>(wacc);
          }
        }
      }
    }
  }
}

static void check_grid(const Tensor& image, const Tensor& grid) {
  if (image.rank() != 4 || grid.rank() != 4)
    throw std::invalid_argument("grid_sample: image and grid must be 4-D");
  if (grid.dim(1) != 2) throw std::invalid_argument("grid_sample: grid needs 2 channels (u,v)");
  if (grid.dim(0) != image.dim(0))
    throw std::invalid_argument("grid_sample: batch mismatch between image and grid");
}

Tensor grid_sample_fwd(const Tensor& image, const Tensor& grid) {
  check_grid(image, grid);
  const int n = image.dim(0), c = image.dim(1), hi = image.dim(2), wi = image.dim(3);
  const int ho = grid.dim(2), wo = grid.dim(3);
  Tensor out({n, c, ho, wo});
  const std::int64_t img_cs = static_cast<std::int64_t>(hi) * wi;
  for (int b = 0; b < n; ++b) {
    const float* gu = grid.data() + (static_cast<std::int64_t>(b) * 2 + 0) * ho * wo;
    const float* gv = grid.data() + (static_cast<std::int64_t>(b) * 2 + 1) * ho * wo;
    for (int y = 0; y < ho; ++y) {
      for (int x = 0; x < wo; ++x) {
        const std::int64_t p = static_cast<std::int64_t>(y) * wo + x;
        float u = std::clamp(gu[p], 0.0f, static_cast<float>(wi - 1));
        float v = std::clamp(gv[p], 0.0f, static_cast<float>(hi - 1));
        const int x0 = std::min(static_cast<int>(u), wi - 2 >= 0 ? wi - 2 : 0);
        const int y0 = std::min(static_cast<int>(v), hi - 2 >= 0 ? hi - 2 : 0);
        const int x1 = std::min(x0 + 1, wi - 1);
        const int y1 = std::min(y0 + 1, hi - 1);
        const float fx = u - static_cast<float>(x0);
        const float fy = v - static_cast<float>(y0);
        const float w00 = (1 - fx) * (1 - fy), w01 = fx * (1 - fy);
        const float w10 = (1 - fx) * fy, w11 = fx * fy;
        for (int ch = 0; ch < c; ++ch) {
          const float* ic = image.data() + (static_cast<std::int64_t>(b) * c + ch) * img_cs;
          out.data()[((static_cast<std::int64_t>(b) * c + ch) * ho + y) * wo + x] =
              w00 * ic[y0 * wi + x0] + w01 * ic[y0 * wi + x1] + w10 * ic[y1 * wi + x0] +
              w11 * ic[y1 * wi + x1];
        }
      }
    }
  }
  return out;
}

void grid_sample_bwd(const Tensor& image, const Tensor& grid, const Tensor& gout, Tensor* gimage,
                     Tensor* ggrid) {
  check_grid(image, grid);
  const int n = image.dim(0), c = image.dim(1), hi = image.dim(2), wi = image.dim(3);
  const int ho = grid.dim(2), wo = grid.dim(3);
  const std::int64_t img_cs = static_cast<std::int64_t>(hi) * wi;
  for (int b = 0; b < n; ++b) {
    const float* gu = grid.data() + (static_cast<std::int64_t>(b) * 2 + 0) * ho * wo;
    const float* gv = grid.data() + (static_cast<std::int64_t>(b) * 2 + 1) * ho * wo;
    for (int y = 0; y < ho; ++y) {
      for (int x = 0; x < wo; ++x) {
        const std::int64_t p = static_cast<std::int64_t>(y) * wo + x;
        const float uraw = gu[p], vraw = gv[p];
        const bool u_in = uraw > 0.0f && uraw < static_cast<float>(wi - 1);
        const bool v_in = vraw > 0.0f && vraw < static_cast<float>(hi - 1);
        const float u = std::clamp(uraw, 0.0f, static_cast<float>(wi - 1));
        const float v = std::clamp(vraw, 0.0f, static_cast<float>(hi - 1));
        const int x0 = std::min(static_cast<int>(u), wi - 2 >= 0 ? wi - 2 : 0);
        const int y0 = std::min(static_cast<int>(v), hi - 2 >= 0 ? hi - 2 : 0);
        const int x1 = std::min(x0 + 1, wi - 1);
        const int y1 = std::min(y0 + 1, hi - 1);
        const float fx = u - static_cast<float>(x0);
        const float fy = v - static_cast<float>(y0);
        float du = 0.0f, dv = 0.0f;
        for (int ch = 0; ch < c; ++ch) {
          const std::int64_t base = (static_cast<std::int64_t>(b) * c + ch);
          const float g = gout.data()[(base * ho + y) * wo + x];
          if (g == 0.0f) continue;
          const float* ic = image.data() + base * img_cs;
          const float p00 = ic[y0 * wi + x0], p01 = ic[y0 * wi + x1];
          const float p10 = ic[y1 * wi + x0], p11 = ic[y1 * wi + x1];
          if (gimage) {
            float* gi = gimage->data() + base * img_cs;
            gi[y0 * wi + x0] += g * (1 - fx) * (1 - fy);
            gi[y0 * wi + x1] += g * fx * (1 - fy);
            gi[y1 * wi + x0] += g * (1 - fx) * fy;
            gi[y1 * wi + x1] += g * fx * fy;
          }
          du += g * ((p01 - p00) * (1 - fy) + (p11 - p10) * fy);
          dv += g * ((p10 - p00) * (1 - fx) + (p11 - p01) * fx);
        }
        if (ggrid) {
          // Clamped samples have zero derivative w.r.t. the raw coordinate.
          float* gg = ggrid->data();
          if (u_in) gg[(static_cast<std::int64_t>(b) * 2 + 0) * ho * wo + p] += du;
          if (v_in) gg[(static_cast<std::int64_t>(b) * 2 + 1) * ho * wo + p] += dv;
        }
      }
    }
  }
}

Tensor grid_sample_validity(const Tensor& grid, int image_h, int image_w) {
  const int n = grid.dim(0), ho = grid.dim(2), wo = grid.dim(3);
  Tensor mask({n, 1, ho, wo});
  for (int b = 0; b < n; ++b) {
    const float* gu = grid.data() + (static_cast<std::int64_t>(b) * 2 + 0) * ho * wo;
    const float* gv = grid.data() + (static_cast<std::int64_t>(b) * 2 + 1) * ho * wo;
    float* m = mask.data() + static_cast<std::int64_t>(b) * ho * wo;
    for (std::int64_t p = 0; p < static_cast<std::int64_t>(ho) * wo; ++p) {
      const bool ok = gu[p] >= 0.0f && gu[p] <= static_cast<float>(image_w - 1) &&
                      gv[p] >= 0.0f && gv[p] <= static_cast<float>(image_h - 1);
      m[p] = ok ? 1.0f : 0.0f;
    }
  }
  return mask;
}

Tensor box3x3_fwd(const Tensor& input) {
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  Tensor out({n, c, h, w});
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const float* in = input.data() + (static_cast<std::int64_t>(b) * c + ch) * h * w;
      float* o = out.data() + (static_cast<std::int64_t>(b) * c + ch) * h * w;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          float acc = 0.0f;
          for (int dy = -1; dy <= 1; ++dy) {
            const int yy = std::clamp(y + dy, 0, h - 1);
            for (int dx = -1; dx <= 1; ++dx) {
              const int xx = std::clamp(x + dx, 0, w - 1);
              acc += in[yy * w + xx];
            }
          }
          o[y * w + x] = acc / 9.0f;
        }
      }
    }
  }
  return out;
}

void box3x3_bwd(const Tensor& input, const Tensor& gout, Tensor* ginput) {
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const float* go = gout.data() + (static_cast<std::int64_t>(b) * c + ch) * h * w;
      float* gi = ginput->data() + (static_cast<std::int64_t>(b) * c + ch) * h * w;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const float g = go[y * w + x] / 9.0f;
          if (g == 0.0f) continue;
          for (int dy = -1; dy <= 1; ++dy) {
            const int yy = std::clamp(y + dy, 0, h - 1);
            for (int dx = -1; dx <= 1; ++dx) {
              const int xx = std::clamp(x + dx, 0, w - 1);
              gi[yy * w + xx] += g;
            }
          }
        }
      }
    }
  }
}

Tensor upsample2x_fwd(const Tensor& input) {
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  Tensor out({n, c, h * 2, w * 2});
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const float* in = input.data() + (static_cast<std::int64_t>(b) * c + ch) * h * w;
      float* o = out.data() + (static_cast<std::int64_t>(b) * c + ch) * h * w * 4;
      for (int y = 0; y < 2 * h; ++y)
        for (int x = 0; x < 2 * w; ++x) o[y * 2 * w + x] = in[(y / 2) * w + (x / 2)];
    }
  return out;
}

void upsample2x_bwd(const Tensor& gout, Tensor* ginput) {
  const int n = ginput->dim(0), c = ginput->dim(1), h = ginput->dim(2), w = ginput->dim(3);
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      float* gi = ginput->data() + (static_cast<std::int64_t>(b) * c + ch) * h * w;
      const float* go = gout.data() + (static_cast<std::int64_t>(b) * c + ch) * h * w * 4;
      for (int y = 0; y < 2 * h; ++y)
        for (int x = 0; x < 2 * w; ++x) gi[(y / 2) * w + (x / 2)] += go[y * 2 * w + x];
    }
}

Tensor concat_ch_fwd(const Tensor& a, const Tensor& b) {
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw std::invalid_argument("concat: N/H/W must match");
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
  Tensor out({n, ca + cb, h, w});
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (int bn = 0; bn < n; ++bn) {
    std::copy_n(a.data() + bn * ca * plane, ca * plane,
                out.data() + static_cast<std::int64_t>(bn) * (ca + cb) * plane);
    std::copy_n(b.data() + bn * cb * plane, cb * plane,
                out.data() + static_cast<std::int64_t>(bn) * (ca + cb) * plane + ca * plane);
  }
  return out;
}

void concat_ch_bwd(const Tensor& gout, int ca, Tensor* ga, Tensor* gb) {
  const int n = gout.dim(0), c = gout.dim(1), h = gout.dim(2), w = gout.dim(3);
  const int cb = c - ca;
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (int bn = 0; bn < n; ++bn) {
    const float* g = gout.data() + static_cast<std::int64_t>(bn) * c * plane;
    if (ga) {
      float* p = ga->data() + static_cast<std::int64_t>(bn) * ca * plane;
      for (std::int64_t i = 0; i < ca * plane; ++i) p[i] += g[i];
    }
    if (gb) {
      float* p = gb->data() + static_cast<std::int64_t>(bn) * cb * plane;
      for (std::int64_t i = 0; i < cb * plane; ++i) p[i] += g[ca * plane + i];
    }
  }
}

Tensor linear_fwd(const Tensor& x, const Tensor& w, const Tensor* bias) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1))
    throw std::invalid_argument("linear: x(N,F) and w(O,F) required");
  const int n = x.dim(0), f = x.dim(1), o = w.dim(0);
  Tensor out({n, o});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < o; ++j) {
      double acc = bias ? (*bias)[j] : 0.0;
      for (int k = 0; k < f; ++k)
        acc += static_cast<double>(x.data()[i * f + k]) * w.data()[j * f + k];
      out.data()[i * o + j] = static_cast<float>(acc);
    }
  return out;
}

void linear_bwd(const Tensor& x, const Tensor& w, const Tensor& gout, Tensor* gx, Tensor* gw,
                Tensor* gb) {
  const int n = x.dim(0), f = x.dim(1), o = w.dim(0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < o; ++j) {
      const float g = gout.data()[i * o + j];
      if (g == 0.0f) continue;
      if (gb) (*gb)[j] += g;
      for (int k = 0; k < f; ++k) {
        if (gx) gx->data()[i * f + k] += g * w.data()[j * f + k];
        if (gw) gw->data()[j * f + k] += g * x.data()[i * f + k];
      }
    }
}

}  // namespace mdeh::kernels
