#include "mdeh/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mdeh/kernels.hpp"

namespace mdeh {

Var Tape::push(Tensor value, bool needs_grad, bool is_leaf, std::function<void(Tape&)> back) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.is_leaf = is_leaf;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  return push(std::move(value), requires_grad, true, {});
}

const Tensor& Tape::value(Var v) const {
  if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
    throw std::invalid_argument("tape: invalid var");
  return nodes_[static_cast<size_t>(v.id)].value;
}

bool Tape::requires_grad(Var v) const { return nodes_[static_cast<size_t>(v.id)].needs_grad; }

Tensor& Tape::grad_buf(int id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (!n.grad_live) {
    n.grad = Tensor(n.value.shape());
    n.grad_live = true;
  }
  return n.grad;
}

const Tensor& Tape::grad(Var v) {
  if (!v.valid()) throw std::invalid_argument("tape: invalid var");
  return grad_buf(v.id);
}

void Tape::accumulate(int id, const Tensor& g) {
  Tensor& dst = grad_buf(id);
  if (dst.numel() == g.numel()) {
    float* d = dst.data();
    const float* s = g.data();
    for (std::int64_t i = 0; i < dst.numel(); ++i) d[i] += s[i];
  } else if (dst.numel() == 1) {
    // Gradient of a broadcast scalar operand: reduce in fixed order.
    double acc = 0.0;
    for (std::int64_t i = 0; i < g.numel(); ++i) acc += g[i];
    dst[0] += static_cast<float>(acc);
  } else {
    throw std::invalid_argument("tape: gradient shape mismatch");
  }
}

namespace {

bool is_unary(EwKind k) {
  switch (k) {
    case EwKind::Tanh:
    case EwKind::Sigmoid:
    case EwKind::Clip:
    case EwKind::Square:
    case EwKind::Abs:
    case EwKind::Reciprocal:
    case EwKind::Sqrt:
      return true;
    default:
      return false;
  }
}

// Broadcast read: tensor is either full-size or scalar.
inline float bread(const Tensor& t, std::int64_t i) { return t.numel() == 1 ? t[0] : t[i]; }

}  // namespace

Var Tape::elementwise(EwKind kind, Var a, std::optional<Var> b) {
  if (is_unary(kind) && b.has_value())
    throw std::invalid_argument("elementwise: unary op-kind given two operands");
  if (!is_unary(kind) && !b.has_value())
    throw std::invalid_argument("elementwise: binary op-kind needs two operands");
  if (kind == EwKind::Clip)
    throw std::invalid_argument("elementwise: use clip(a, lo, hi)");

  const Tensor& av = value(a);
  if (b) {
    const Tensor& bv = value(*b);
    if (!av.same_shape(bv) && !av.is_scalar() && !bv.is_scalar())
      throw std::invalid_argument("elementwise: shape mismatch " + av.shape_str() + " vs " +
                                  bv.shape_str());
  }

  const std::vector<int>& out_shape =
      (b && av.is_scalar() && !value(*b).is_scalar()) ? value(*b).shape() : av.shape();
  Tensor out(out_shape);
  const std::int64_t n = out.numel();

  switch (kind) {
    case EwKind::Add:
      for (std::int64_t i = 0; i < n; ++i) out[i] = bread(av, i) + bread(value(*b), i);
      break;
    case EwKind::Sub:
      for (std::int64_t i = 0; i < n; ++i) out[i] = bread(av, i) - bread(value(*b), i);
      break;
    case EwKind::Mul:
      for (std::int64_t i = 0; i < n; ++i) out[i] = bread(av, i) * bread(value(*b), i);
      break;
    case EwKind::Div:
      for (std::int64_t i = 0; i < n; ++i) {
        const float d = bread(value(*b), i);
        if (d == 0.0f) throw std::domain_error("elementwise div: division by zero");
        out[i] = bread(av, i) / d;
      }
      break;
    case EwKind::Tanh:
      for (std::int64_t i = 0; i < n; ++i) out[i] = std::tanh(av[i]);
      break;
    case EwKind::Sigmoid:
      for (std::int64_t i = 0; i < n; ++i) out[i] = 1.0f / (1.0f + std::exp(-av[i]));
      break;
    case EwKind::Square:
      for (std::int64_t i = 0; i < n; ++i) out[i] = av[i] * av[i];
      break;
    case EwKind::Abs:
      for (std::int64_t i = 0; i < n; ++i) out[i] = std::fabs(av[i]);
      break;
    case EwKind::Reciprocal:
      for (std::int64_t i = 0; i < n; ++i) {
        if (av[i] == 0.0f) throw std::domain_error("elementwise reciprocal: zero input");
        out[i] = 1.0f / av[i];
      }
      break;
    case EwKind::Sqrt:
      for (std::int64_t i = 0; i < n; ++i) {
        if (av[i] < 0.0f) throw std::domain_error("elementwise sqrt: negative input");
        out[i] = std::sqrt(av[i]);
      }
      break;
    default:
      throw std::invalid_argument("elementwise: unhandled op-kind");
  }

  const bool req = requires_grad(a) || (b && requires_grad(*b));
  const int aid = a.id;
  const int bid = b ? b->id : -1;
  Var ov = push(std::move(out), req, false, {});
  const int oid = ov.id;
  if (req) {
    nodes_[static_cast<size_t>(oid)].back = [kind, aid, bid, oid](Tape& t) {
      const Tensor& go = t.grad_buf(oid);
      const Tensor& av = t.nodes_[static_cast<size_t>(aid)].value;
      const Tensor& ov = t.nodes_[static_cast<size_t>(oid)].value;
      const std::int64_t n = go.numel();
      Tensor ga(go.shape());
      Tensor gb;
      const bool want_a = t.nodes_[static_cast<size_t>(aid)].needs_grad;
      const bool want_b = bid >= 0 && t.nodes_[static_cast<size_t>(bid)].needs_grad;
      if (want_b) gb = Tensor(go.shape());
      const Tensor* bv = bid >= 0 ? &t.nodes_[static_cast<size_t>(bid)].value : nullptr;
      for (std::int64_t i = 0; i < n; ++i) {
        const float g = go[i];
        float da = 0.0f, db = 0.0f;
        switch (kind) {
          case EwKind::Add: da = g; db = g; break;
          case EwKind::Sub: da = g; db = -g; break;
          case EwKind::Mul:
            da = g * bread(*bv, i);
            db = g * bread(av, i);
            break;
          case EwKind::Div: {
            const float d = bread(*bv, i);
            da = g / d;
            db = -g * bread(av, i) / (d * d);
            break;
          }
          case EwKind::Tanh: da = g * (1.0f - ov[i] * ov[i]); break;
          case EwKind::Sigmoid: da = g * ov[i] * (1.0f - ov[i]); break;
          case EwKind::Square: da = g * 2.0f * av[i]; break;
          case EwKind::Abs: da = av[i] > 0.0f ? g : (av[i] < 0.0f ? -g : 0.0f); break;
          case EwKind::Reciprocal: da = -g * ov[i] * ov[i]; break;
          case EwKind::Sqrt: da = ov[i] > 0.0f ? g * 0.5f / ov[i] : 0.0f; break;
          default: break;
        }
        if (want_a) ga[i] = da;
        if (want_b) gb[i] = db;
      }
      if (want_a) t.accumulate(aid, ga);
      if (want_b) t.accumulate(bid, gb);
    };
  }
  return ov;
}

Var Tape::clip(Var a, float lo, float hi) {
  const Tensor& av = value(a);
  Tensor out(av.shape());
  for (std::int64_t i = 0; i < av.numel(); ++i) out[i] = std::clamp(av[i], lo, hi);
  const bool req = requires_grad(a);
  const int aid = a.id;
  Var ov = push(std::move(out), req, false, {});
  const int oid = ov.id;
  if (req) {
    nodes_[static_cast<size_t>(oid)].back = [aid, oid, lo, hi](Tape& t) {
      const Tensor& go = t.grad_buf(oid);
      const Tensor& av = t.nodes_[static_cast<size_t>(aid)].value;
      Tensor ga(go.shape());
      for (std::int64_t i = 0; i < go.numel(); ++i)
        ga[i] = (av[i] > lo && av[i] < hi) ? go[i] : 0.0f;
      t.accumulate(aid, ga);
    };
  }
  return ov;
}

Var Tape::leaky_relu(Var a, float slope) {
  // max(x, s*x) = 0.5*(1+s)*x + 0.5*(1-s)*|x|
  Var lin = mul_scalar(a, 0.5f * (1.0f + slope));
  Var mag = mul_scalar(abs(a), 0.5f * (1.0f - slope));
  return add(lin, mag);
}

Var Tape::conv2d(Var input, Var weights, std::optional<Var> bias, int stride, int pad) {
  const Tensor& in = value(input);
  const Tensor& w = value(weights);
  const Tensor* b = bias ? &value(*bias) : nullptr;
  Tensor out = kernels::conv2d_fwd(in, w, b, stride, pad);
  const bool req = requires_grad(input) || requires_grad(weights) || (bias && requires_grad(*bias));
  const int iid = input.id, wid = weights.id, bid = bias ? bias->id : -1;
  Var ov = push(std::move(out), req, false, {});
  const int oid = ov.id;
  if (req) {
    nodes_[static_cast<size_t>(oid)].back = [iid, wid, bid, oid, stride, pad](Tape& t) {
      const Tensor& go = t.grad_buf(oid);
      const Tensor& in = t.nodes_[static_cast<size_t>(iid)].value;
      const Tensor& w = t.nodes_[static_cast<size_t>(wid)].value;
      const bool want_in = t.nodes_[static_cast<size_t>(iid)].needs_grad;
      const bool want_w = t.nodes_[static_cast<size_t>(wid)].needs_grad;
      const bool want_b = bid >= 0 && t.nodes_[static_cast<size_t>(bid)].needs_grad;
      Tensor gi = want_in ? Tensor(in.shape()) : Tensor();
      Tensor gw = want_w ? Tensor(w.shape()) : Tensor();
      Tensor gb = want_b ? Tensor(t.nodes_[static_cast<size_t>(bid)].value.shape()) : Tensor();
      kernels::conv2d_bwd(in, w, go, stride, pad, want_in ? &gi : nullptr,
                          want_w ? &gw : nullptr, want_b ? &gb : nullptr);
      if (want_in) t.accumulate(iid, gi);
      if (want_w) t.accumulate(wid, gw);
      if (want_b) t.accumulate(bid, gb);
    };
  }
  return ov;
}

Var Tape::grid_sample_bilinear(Var image, Var grid) {
  const Tensor& img = value(image);
  const Tensor& g = value(grid);
  Tensor out = kernels::grid_sample_fwd(img, g);
  const bool req = requires_grad(image) || requires_grad(grid);
  const int iid = image.id, gid = grid.id;
  Var ov = push(std::move(out), req, false, {});
  const int oid = ov.id;
  if (req) {
    nodes_[static_cast<size_t>(oid)].back = [iid, gid, oid](Tape& t) {
      const Tensor& go = t.grad_buf(oid);
      const Tensor& img = t.nodes_[static_cast<size_t>(iid)].value;
      const Tensor& grd = t.nodes_[static_cast<size_t>(gid)].value;
      const bool want_img = t.nodes_[static_cast<size_t>(iid)].needs_grad;
      const bool want_grid = t.nodes_[static_cast<size_t>(gid)].needs_grad;
      Tensor gi = want_img ? Tensor(img.shape()) : Tensor();
      Tensor gg = want_grid ? Tensor(grd.shape()) : Tensor();
      kernels::grid_sample_bwd(img, grd, go, want_img ? &gi : nullptr,
                               want_grid ? &gg : nullptr);
      if (want_img) t.accumulate(iid, gi);
      if (want_grid) t.accumulate(gid, gg);
    };
  }
  return ov;
}

Var Tape::reduce(ReduceKind kind, Var a, std::vector<int> axes) {
  const Tensor& av = value(a);
  std::sort(axes.begin(), axes.end());
  for (size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] < 0 || axes[i] >= av.rank())
      throw std::invalid_argument("reduce: axis out of range");
    if (i > 0 && axes[i] == axes[i - 1]) throw std::invalid_argument("reduce: duplicate axis");
    if (av.dim(axes[i]) == 0) throw std::invalid_argument("reduce: empty reduction axis");
  }

  std::vector<int> out_shape;
  std::vector<bool> reduced(static_cast<size_t>(av.rank()), false);
  for (int ax : axes) reduced[static_cast<size_t>(ax)] = true;
  for (int i = 0; i < av.rank(); ++i)
    if (!reduced[static_cast<size_t>(i)]) out_shape.push_back(av.dim(i));
  if (out_shape.empty()) out_shape = {1};

  // in_strides and the input->output index map.
  const int rank = av.rank();
  std::vector<std::int64_t> in_strides(static_cast<size_t>(rank), 1);
  for (int i = rank - 2; i >= 0; --i)
    in_strides[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(i + 1)] * av.dim(i + 1);

  const std::int64_t out_n = numel_of(out_shape);
  std::int64_t red_n = 1;
  for (int ax : axes) red_n *= av.dim(ax);

  std::vector<std::int64_t> out_index_of(static_cast<size_t>(av.numel()));
  {
    std::vector<int> idx(static_cast<size_t>(rank), 0);
    for (std::int64_t flat = 0; flat < av.numel(); ++flat) {
      std::int64_t oi = 0;
      for (int i = 0; i < rank; ++i)
        if (!reduced[static_cast<size_t>(i)]) oi = oi * av.dim(i) + idx[static_cast<size_t>(i)];
      out_index_of[static_cast<size_t>(flat)] = oi;
      for (int i = rank - 1; i >= 0; --i) {
        if (++idx[static_cast<size_t>(i)] < av.dim(i)) break;
        idx[static_cast<size_t>(i)] = 0;
      }
    }
  }

  Tensor out(out_shape);
  std::vector<std::int64_t> argmax;
  if (kind == ReduceKind::Max) {
    argmax.assign(static_cast<size_t>(out_n), -1);
    for (std::int64_t i = 0; i < av.numel(); ++i) {
      const std::int64_t oi = out_index_of[static_cast<size_t>(i)];
      if (argmax[static_cast<size_t>(oi)] < 0 || av[i] > out[oi]) {
        out[oi] = av[i];
        argmax[static_cast<size_t>(oi)] = i;
      }
    }
  } else {
    std::vector<double> acc(static_cast<size_t>(out_n), 0.0);
    for (std::int64_t i = 0; i < av.numel(); ++i)
      acc[static_cast<size_t>(out_index_of[static_cast<size_t>(i)])] += av[i];
    for (std::int64_t i = 0; i < out_n; ++i)
      out[i] = static_cast<float>(kind == ReduceKind::Mean ? acc[static_cast<size_t>(i)] / red_n
                                                           : acc[static_cast<size_t>(i)]);
  }

  const bool req = requires_grad(a);
  const int aid = a.id;
  Var ov = push(std::move(out), req, false, {});
  const int oid = ov.id;
  if (req) {
    auto map = std::move(out_index_of);
    auto am = std::move(argmax);
    nodes_[static_cast<size_t>(oid)].back = [kind, aid, oid, map = std::move(map),
                                             am = std::move(am), red_n](Tape& t) {
      const Tensor& go = t.grad_buf(oid);
      const Tensor& av = t.nodes_[static_cast<size_t>(aid)].value;
      Tensor ga(av.shape());
      if (kind == ReduceKind::Max) {
        for (std::int64_t oi = 0; oi < go.numel(); ++oi)
          ga[am[static_cast<size_t>(oi)]] += go[oi];
      } else {
        const float scale = kind == ReduceKind::Mean ? 1.0f / static_cast<float>(red_n) : 1.0f;
        for (std::int64_t i = 0; i < av.numel(); ++i)
          ga[i] = go[map[static_cast<size_t>(i)]] * scale;
      }
      t.accumulate(aid, ga);
    };
  }
  return ov;
}

Var Tape::reduce_all(ReduceKind kind, Var a) {
  std::vector<int> axes(static_cast<size_t>(value(a).rank()));
  for (size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<int>(i);
  return reduce(kind, a, std::move(axes));
}

Var Tape::upsample2x(Var a) {
  Tensor out = kernels::upsample2x_fwd(value(a));
  const bool req = requires_grad(a);
  const int aid = a.id;
  Var ov = push(std::move(out), req, false, {});
  const int oid = ov.id;
  if (req) {
    nodes_[static_cast<size_t>(oid)].back = [aid, oid](Tape& t) {
      Tensor ga(t.nodes_[static_cast<size_t>(aid)].value.shape());
      kernels::upsample2x_bwd(t.grad_buf(oid), &ga);
      t.accumulate(aid, ga);
    };
  }
  return ov;
}

Var Tape::concat_ch(Var a, Var b) {
  Tensor out = kernels::concat_ch_fwd(value(a), value(b));
  const bool req = requires_grad(a) || requires_grad(b);
  const int aid = a.id, bid = b.id;
  const int ca = value(a).dim(1);
  Var ov = push(std::move(out), req, false, {});
  const int oid = ov.id;
  if (req) {
    nodes_[static_cast<size_t>(oid)].back = [aid, bid, oid, ca](Tape& t) {
      const bool want_a = t.nodes_[static_cast<size_t>(aid)].needs_grad;
      const bool want_b = t.nodes_[static_cast<size_t>(bid)].needs_grad;
      Tensor ga = want_a ? Tensor(t.nodes_[static_cast<size_t>(aid)].value.shape()) : Tensor();
      Tensor gb = want_b ? Tensor(t.nodes_[static_cast<size_t>(bid)].value.shape()) : Tensor();
      kernels::concat_ch_bwd(t.grad_buf(oid), ca, want_a ? &ga : nullptr,
                             want_b ? &gb : nullptr);
      if (want_a) t.accumulate(aid, ga);
      if (want_b) t.accumulate(bid, gb);
    };
  }
  return ov;
}

Var Tape::box3x3(Var a) {
  Tensor out = kernels::box3x3_fwd(value(a));
  const bool req = requires_grad(a);
  const int aid = a.id;
  Var ov = push(std::move(out), req, false, {});
  const int oid = ov.id;
  if (req) {
    nodes_[static_cast<size_t>(oid)].back = [aid, oid](Tape& t) {
      Tensor ga(t.nodes_[static_cast<size_t>(aid)].value.shape());
      kernels::box3x3_bwd(t.nodes_[static_cast<size_t>(aid)].value, t.grad_buf(oid), &ga);
      t.accumulate(aid, ga);
    };
  }
  return ov;
}

Var Tape::linear(Var x, Var w, std::optional<Var> bias) {
  const Tensor* b = bias ? &value(*bias) : nullptr;
  Tensor out = kernels::linear_fwd(value(x), value(w), b);
  const bool req = requires_grad(x) || requires_grad(w) || (bias && requires_grad(*bias));
  const int xid = x.id, wid = w.id, bid = bias ? bias->id : -1;
  Var ov = push(std::move(out), req, false, {});
  const int oid = ov.id;
  if (req) {
    nodes_[static_cast<size_t>(oid)].back = [xid, wid, bid, oid](Tape& t) {
      const Tensor& go = t.grad_buf(oid);
      const Tensor& x = t.nodes_[static_cast<size_t>(xid)].value;
      const Tensor& w = t.nodes_[static_cast<size_t>(wid)].value;
      const bool want_x = t.nodes_[static_cast<size_t>(xid)].needs_grad;
      const bool want_w = t.nodes_[static_cast<size_t>(wid)].needs_grad;
      const bool want_b = bid >= 0 && t.nodes_[static_cast<size_t>(bid)].needs_grad;
      Tensor gx = want_x ? Tensor(x.shape()) : Tensor();
      Tensor gw = want_w ? Tensor(w.shape()) : Tensor();
      Tensor gb = want_b ? Tensor(t.nodes_[static_cast<size_t>(bid)].value.shape()) : Tensor();
      kernels::linear_bwd(x, w, go, want_x ? &gx : nullptr, want_w ? &gw : nullptr,
                          want_b ? &gb : nullptr);
      if (want_x) t.accumulate(xid, gx);
      if (want_w) t.accumulate(wid, gw);
      if (want_b) t.accumulate(bid, gb);
    };
  }
  return ov;
}

void Tape::backward(Var loss) {
  if (!loss.valid() || loss.id >= static_cast<int>(nodes_.size()))
    throw std::invalid_argument("backward: invalid loss var");
  if (nodes_[static_cast<size_t>(loss.id)].value.numel() != 1)
    throw std::invalid_argument("backward: loss must be a scalar");
  // Intermediate gradients are per-sweep; leaf gradients accumulate.
  for (auto& n : nodes_) {
    if (!n.is_leaf && n.grad_live) n.grad.fill(0.0f);
  }
  grad_buf(loss.id)[0] += 1.0f;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs_grad || n.is_leaf || !n.back) continue;
    if (!n.grad_live) continue;  // unreachable from loss
    n.back(*this);
  }
}

void Tape::zero_grad() {
  for (auto& n : nodes_)
    if (n.grad_live) n.grad.fill(0.0f);
}

Tensor finite_difference(const std::function<double(const Tensor&)>& loss_fn, Tensor x,
                         double eps) {
  Tensor g(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const float orig = x[i];
    x[i] = static_cast<float>(orig + eps);
    const double up = loss_fn(x);
    x[i] = static_cast<float>(orig - eps);
    const double dn = loss_fn(x);
    x[i] = orig;
    g[i] = static_cast<float>((up - dn) / (2.0 * eps));
  }
  return g;
}

}  // namespace mdeh
