#include "hvts/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <utility>

namespace hvts::grad {

namespace {

// Left padding on the width axis; even kernels pad one extra on the right.
int pad_left(int kw, Pad pad) { return pad == Pad::SameTime ? (kw - 1) / 2 : 0; }

struct ConvDims {
  int groups, odpg, idpg;  // depths per group on each side
};

ConvDims conv_dims(const Shape4& in, const Shape4& kernel, int groups) {
  if (groups <= 0 || in.d % groups != 0 || kernel.b % groups != 0) {
    throw Error(ErrorCategory::Shape,
                "conv: groups " + std::to_string(groups) + " incompatible with depths in=" +
                    std::to_string(in.d) + " out=" + std::to_string(kernel.b));
  }
  if (kernel.d != in.d / groups) {
    throw Error(ErrorCategory::Shape,
                "conv: kernel depth " + std::to_string(kernel.d) + " != in depth/groups " +
                    std::to_string(in.d / groups));
  }
  return {groups, kernel.b / groups, in.d / groups};
}

// out[b,od,oh,ow] += sum_{idg,kh,kw} in[b,g*idpg+idg,oh+kh,ow+kw-padL] * K[od,idg,kh,kw]
void conv_accumulate(const Tensor4& in, const Tensor4& kernel, Tensor4& out, int groups, Pad pad) {
  const Shape4 is = in.shape(), ks = kernel.shape(), os = out.shape();
  const ConvDims cd = conv_dims(is, ks, groups);
  const int pl = pad_left(ks.w, pad);
  for (int b = 0; b < is.b; ++b) {
    for (int od = 0; od < ks.b; ++od) {
      const int g = od / cd.odpg;
      for (int oh = 0; oh < os.h; ++oh) {
        double* orow = &out.at(b, od, oh, 0);
        for (int idg = 0; idg < cd.idpg; ++idg) {
          const int id = g * cd.idpg + idg;
          for (int kh = 0; kh < ks.h; ++kh) {
            const double* irow = &in.at(b, id, oh + kh, 0);
            const double* krow = &kernel.at(od, idg, kh, 0);
            for (int kw = 0; kw < ks.w; ++kw) {
              const double k = krow[kw];
              if (k == 0.0) continue;
              const int shift = kw - pl;
              const int lo = std::max(0, -shift);
              const int hi = std::min(os.w, is.w - shift);
              for (int ow = lo; ow < hi; ++ow) orow[ow] += k * irow[ow + shift];
            }
          }
        }
      }
    }
  }
}

// Adjoint of conv_accumulate in its input argument:
// gin[b,id,oh+kh,ow+kw-padL] += K[od,idg,kh,kw] * gout[b,od,oh,ow]
void conv_scatter(const Tensor4& gout, const Tensor4& kernel, Tensor4& gin, int groups, Pad pad) {
  const Shape4 gs = gout.shape(), ks = kernel.shape(), is = gin.shape();
  const ConvDims cd = conv_dims(is, ks, groups);
  const int pl = pad_left(ks.w, pad);
  for (int b = 0; b < gs.b; ++b) {
    for (int od = 0; od < ks.b; ++od) {
      const int g = od / cd.odpg;
      for (int oh = 0; oh < gs.h; ++oh) {
        const double* grow = &gout.at(b, od, oh, 0);
        for (int idg = 0; idg < cd.idpg; ++idg) {
          const int id = g * cd.idpg + idg;
          for (int kh = 0; kh < ks.h; ++kh) {
            double* irow = &gin.at(b, id, oh + kh, 0);
            const double* krow = &kernel.at(od, idg, kh, 0);
            for (int kw = 0; kw < ks.w; ++kw) {
              const double k = krow[kw];
              if (k == 0.0) continue;
              const int shift = kw - pl;
              const int lo = std::max(0, -shift);
              const int hi = std::min(gs.w, is.w - shift);
              for (int ow = lo; ow < hi; ++ow) irow[ow + shift] += k * grow[ow];
            }
          }
        }
      }
    }
  }
}

// gK[od,idg,kh,kw] += sum_{b,oh,ow} in[b,id,oh+kh,ow+kw-padL] * gout[b,od,oh,ow]
void conv_kernel_grad(const Tensor4& in, const Tensor4& gout, Tensor4& gkernel, int groups, Pad pad) {
  const Shape4 is = in.shape(), gs = gout.shape(), ks = gkernel.shape();
  const ConvDims cd = conv_dims(is, ks, groups);
  const int pl = pad_left(ks.w, pad);
  for (int b = 0; b < is.b; ++b) {
    for (int od = 0; od < ks.b; ++od) {
      const int g = od / cd.odpg;
      for (int oh = 0; oh < gs.h; ++oh) {
        const double* grow = &gout.at(b, od, oh, 0);
        for (int idg = 0; idg < cd.idpg; ++idg) {
          const int id = g * cd.idpg + idg;
          for (int kh = 0; kh < ks.h; ++kh) {
            const double* irow = &in.at(b, id, oh + kh, 0);
            double* krow = &gkernel.at(od, idg, kh, 0);
            for (int kw = 0; kw < ks.w; ++kw) {
              const int shift = kw - pl;
              const int lo = std::max(0, -shift);
              const int hi = std::min(gs.w, is.w - shift);
              double acc = 0.0;
              for (int ow = lo; ow < hi; ++ow) acc += irow[ow + shift] * grow[ow];
              krow[kw] += acc;
            }
          }
        }
      }
    }
  }
}

}  // namespace

Shape4 conv_output_shape(const Shape4& in, const Shape4& kernel, int groups, Pad pad) {
  conv_dims(in, kernel, groups);
  const int oh = in.h - kernel.h + 1;
  const int ow = pad == Pad::SameTime ? in.w : in.w - kernel.w + 1;
  if (oh <= 0 || ow <= 0) {
    throw Error(ErrorCategory::Shape, "conv: kernel " + kernel.str() +
                                          " does not fit input " + in.str());
  }
  return {in.b, kernel.b, oh, ow};
}

Graph::NodeId Graph::push(Tensor4 value, std::function<void(Graph&)> backprop) {
  if (!value.all_finite()) {
    throw Error(ErrorCategory::Numerical,
                "non-finite values produced at node " + std::to_string(nodes_.size()));
  }
  nodes_.push_back(Node{std::move(value), Tensor4(), std::move(backprop)});
  return static_cast<NodeId>(nodes_.size() - 1);
}

Graph::NodeId Graph::input(Tensor4 value) { return push(std::move(value), nullptr); }

Graph::NodeId Graph::conv2d(NodeId x, NodeId kernel, int groups, Pad pad) {
  const Tensor4& in = nodes_[x].value;
  const Tensor4& k = nodes_[kernel].value;
  Tensor4 out(conv_output_shape(in.shape(), k.shape(), groups, pad));
  conv_accumulate(in, k, out, groups, pad);
  return push(std::move(out), [x, kernel, groups, pad](Graph& g) {
    const NodeId self = g.current_;
    conv_scatter(g.nodes_[self].grad, g.nodes_[kernel].value, g.nodes_[x].grad, groups, pad);
    conv_kernel_grad(g.nodes_[x].value, g.nodes_[self].grad, g.nodes_[kernel].grad, groups, pad);
  });
}

Graph::NodeId Graph::transpose_conv2d(NodeId x, NodeId kernel, int groups, Pad pad) {
  const Tensor4& in = nodes_[x].value;
  const Tensor4& k = nodes_[kernel].value;
  const Shape4 ks = k.shape();
  if (in.shape().d != ks.b) {
    throw Error(ErrorCategory::Shape, "transpose_conv: input depth " +
                                          std::to_string(in.shape().d) +
                                          " != kernel out depth " + std::to_string(ks.b));
  }
  Shape4 os{in.shape().b, groups * ks.d, in.shape().h + ks.h - 1,
            pad == Pad::SameTime ? in.shape().w : in.shape().w + ks.w - 1};
  Tensor4 out(os);
  conv_scatter(in, k, out, groups, pad);
  return push(std::move(out), [x, kernel, groups, pad](Graph& g) {
    const NodeId self = g.current_;
    conv_accumulate(g.nodes_[self].grad, g.nodes_[kernel].value, g.nodes_[x].grad, groups, pad);
    conv_kernel_grad(g.nodes_[self].grad, g.nodes_[x].value, g.nodes_[kernel].grad, groups, pad);
  });
}

Graph::NodeId Graph::batch_norm(NodeId x, NodeId scale, NodeId shift, BatchNormState& state,
                                Phase phase) {
  const Tensor4& in = nodes_[x].value;
  const Shape4 s = in.shape();
  const int depth = s.d;
  if (static_cast<int>(state.running_mean.size()) != depth ||
      nodes_[scale].value.shape().count() != static_cast<std::size_t>(depth) ||
      nodes_[shift].value.shape().count() != static_cast<std::size_t>(depth)) {
    throw Error(ErrorCategory::Shape, "batch_norm: depth mismatch for input " + s.str());
  }
  const std::size_t n = static_cast<std::size_t>(s.b) * s.h * s.w;

  std::vector<double> mean(depth), invstd(depth);
  Tensor4 xhat(s);
  if (phase == Phase::Train) {
    std::vector<double> var(depth);
    for (int d = 0; d < depth; ++d) {
      double acc = 0.0;
      for (int b = 0; b < s.b; ++b)
        for (int h = 0; h < s.h; ++h) {
          const double* row = &in.at(b, d, h, 0);
          for (int w = 0; w < s.w; ++w) acc += row[w];
        }
      mean[d] = acc / static_cast<double>(n);
      double vacc = 0.0;
      for (int b = 0; b < s.b; ++b)
        for (int h = 0; h < s.h; ++h) {
          const double* row = &in.at(b, d, h, 0);
          for (int w = 0; w < s.w; ++w) {
            const double c = row[w] - mean[d];
            vacc += c * c;
          }
        }
      var[d] = vacc / static_cast<double>(n);
      invstd[d] = 1.0 / std::sqrt(var[d] + state.eps);
      const double unbiased = n > 1 ? var[d] * static_cast<double>(n) / (n - 1.0) : var[d];
      state.running_mean[d] = (1.0 - state.momentum) * state.running_mean[d] + state.momentum * mean[d];
      state.running_var[d] = (1.0 - state.momentum) * state.running_var[d] + state.momentum * unbiased;
    }
  } else {
    for (int d = 0; d < depth; ++d) {
      mean[d] = state.running_mean[d];
      invstd[d] = 1.0 / std::sqrt(state.running_var[d] + state.eps);
    }
  }

  Tensor4 out(s);
  const Tensor4& sc = nodes_[scale].value;
  const Tensor4& sh = nodes_[shift].value;
  for (int b = 0; b < s.b; ++b)
    for (int d = 0; d < depth; ++d)
      for (int h = 0; h < s.h; ++h) {
        const double* row = &in.at(b, d, h, 0);
        double* xr = &xhat.at(b, d, h, 0);
        double* orow = &out.at(b, d, h, 0);
        for (int w = 0; w < s.w; ++w) {
          xr[w] = (row[w] - mean[d]) * invstd[d];
          orow[w] = xr[w] * sc[d] + sh[d];
        }
      }

  auto xh = std::make_shared<Tensor4>(std::move(xhat));
  auto istd = std::make_shared<std::vector<double>>(std::move(invstd));
  return push(std::move(out), [x, scale, shift, xh, istd, phase, n](Graph& g) {
    const NodeId self = g.current_;
    const Tensor4& gy = g.nodes_[self].grad;
    const Shape4 s = gy.shape();
    Tensor4& gx = g.nodes_[x].grad;
    Tensor4& gsc = g.nodes_[scale].grad;
    Tensor4& gsh = g.nodes_[shift].grad;
    const Tensor4& sc = g.nodes_[scale].value;
    for (int d = 0; d < s.d; ++d) {
      double s1 = 0.0, s2 = 0.0;
      for (int b = 0; b < s.b; ++b)
        for (int h = 0; h < s.h; ++h) {
          const double* gr = &gy.at(b, d, h, 0);
          const double* xr = &xh->at(b, d, h, 0);
          for (int w = 0; w < s.w; ++w) {
            s1 += gr[w];
            s2 += gr[w] * xr[w];
          }
        }
      gsh[d] += s1;
      gsc[d] += s2;
      const double a = sc[d] * (*istd)[d];
      if (phase == Phase::Train) {
        const double inv_n = 1.0 / static_cast<double>(n);
        for (int b = 0; b < s.b; ++b)
          for (int h = 0; h < s.h; ++h) {
            const double* gr = &gy.at(b, d, h, 0);
            const double* xr = &xh->at(b, d, h, 0);
            double* gxr = &gx.at(b, d, h, 0);
            for (int w = 0; w < s.w; ++w)
              gxr[w] += a * (gr[w] - s1 * inv_n - xr[w] * s2 * inv_n);
          }
      } else {
        for (int b = 0; b < s.b; ++b)
          for (int h = 0; h < s.h; ++h) {
            const double* gr = &gy.at(b, d, h, 0);
            double* gxr = &gx.at(b, d, h, 0);
            for (int w = 0; w < s.w; ++w) gxr[w] += a * gr[w];
          }
      }
    }
  });
}

Graph::NodeId Graph::elu(NodeId x) {
  const Tensor4& in = nodes_[x].value;
  Tensor4 out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i)
    out[i] = in[i] > 0.0 ? in[i] : std::expm1(in[i]);
  return push(std::move(out), [x](Graph& g) {
    const NodeId self = g.current_;
    const Tensor4& gy = g.nodes_[self].grad;
    const Tensor4& y = g.nodes_[self].value;
    const Tensor4& xin = g.nodes_[x].value;
    Tensor4& gx = g.nodes_[x].grad;
    for (std::size_t i = 0; i < gy.size(); ++i)
      gx[i] += gy[i] * (xin[i] > 0.0 ? 1.0 : y[i] + 1.0);
  });
}

Graph::NodeId Graph::avg_pool(NodeId x, int ph, int pw) {
  const Shape4 s = nodes_[x].value.shape();
  if (ph <= 0 || pw <= 0 || s.h % ph != 0 || s.w % pw != 0) {
    throw Error(ErrorCategory::Shape, "avg_pool: window (" + std::to_string(ph) + "," +
                                          std::to_string(pw) + ") does not divide " + s.str());
  }
  const Tensor4& in = nodes_[x].value;
  Tensor4 out(s.b, s.d, s.h / ph, s.w / pw);
  const double inv = 1.0 / (ph * pw);
  for (int b = 0; b < s.b; ++b)
    for (int d = 0; d < s.d; ++d)
      for (int oh = 0; oh < s.h / ph; ++oh)
        for (int ow = 0; ow < s.w / pw; ++ow) {
          double acc = 0.0;
          for (int ih = oh * ph; ih < (oh + 1) * ph; ++ih)
            for (int iw = ow * pw; iw < (ow + 1) * pw; ++iw) acc += in.at(b, d, ih, iw);
          out.at(b, d, oh, ow) = acc * inv;
        }
  return push(std::move(out), [x, ph, pw, inv](Graph& g) {
    const NodeId self = g.current_;
    const Tensor4& gy = g.nodes_[self].grad;
    const Shape4 os = gy.shape();
    Tensor4& gx = g.nodes_[x].grad;
    for (int b = 0; b < os.b; ++b)
      for (int d = 0; d < os.d; ++d)
        for (int oh = 0; oh < os.h; ++oh)
          for (int ow = 0; ow < os.w; ++ow) {
            const double v = gy.at(b, d, oh, ow) * inv;
            for (int ih = oh * ph; ih < (oh + 1) * ph; ++ih)
              for (int iw = ow * pw; iw < (ow + 1) * pw; ++iw) gx.at(b, d, ih, iw) += v;
          }
  });
}

Graph::NodeId Graph::upsample(NodeId x, int fh, int fw) {
  if (fh <= 0 || fw <= 0) {
    throw Error(ErrorCategory::Shape, "upsample: factors must be positive");
  }
  const Tensor4& in = nodes_[x].value;
  const Shape4 s = in.shape();
  Tensor4 out(s.b, s.d, s.h * fh, s.w * fw);
  for (int b = 0; b < s.b; ++b)
    for (int d = 0; d < s.d; ++d)
      for (int ih = 0; ih < s.h; ++ih)
        for (int iw = 0; iw < s.w; ++iw) {
          const double v = in.at(b, d, ih, iw);
          for (int oh = ih * fh; oh < (ih + 1) * fh; ++oh)
            for (int ow = iw * fw; ow < (iw + 1) * fw; ++ow) out.at(b, d, oh, ow) = v;
        }
  return push(std::move(out), [x, fh, fw](Graph& g) {
    const NodeId self = g.current_;
    const Tensor4& gy = g.nodes_[self].grad;
    Tensor4& gx = g.nodes_[x].grad;
    const Shape4 s = gx.shape();
    for (int b = 0; b < s.b; ++b)
      for (int d = 0; d < s.d; ++d)
        for (int ih = 0; ih < s.h; ++ih)
          for (int iw = 0; iw < s.w; ++iw) {
            double acc = 0.0;
            for (int oh = ih * fh; oh < (ih + 1) * fh; ++oh)
              for (int ow = iw * fw; ow < (iw + 1) * fw; ++ow) acc += gy.at(b, d, oh, ow);
            gx.at(b, d, ih, iw) += acc;
          }
  });
}

Graph::NodeId Graph::dropout(NodeId x, double p, Phase phase, Rng& rng) {
  if (p < 0.0 || p >= 1.0) {
    throw Error(ErrorCategory::Numerical, "dropout: p must be in [0,1), got " + std::to_string(p));
  }
  if (phase == Phase::Eval || p == 0.0) return x;
  const Tensor4& in = nodes_[x].value;
  auto mask = std::make_shared<Tensor4>(in.shape());
  const double keep_scale = 1.0 / (1.0 - p);
  Tensor4 out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) {
    (*mask)[i] = rng.uniform() < p ? 0.0 : keep_scale;
    out[i] = in[i] * (*mask)[i];
  }
  return push(std::move(out), [x, mask](Graph& g) {
    const NodeId self = g.current_;
    const Tensor4& gy = g.nodes_[self].grad;
    Tensor4& gx = g.nodes_[x].grad;
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * (*mask)[i];
  });
}

Graph::NodeId Graph::add(NodeId a, NodeId b) {
  const Tensor4& av = nodes_[a].value;
  const Tensor4& bv = nodes_[b].value;
  require_same_shape(av, bv, "add");
  Tensor4 out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  return push(std::move(out), [a, b](Graph& g) {
    const NodeId self = g.current_;
    const Tensor4& gy = g.nodes_[self].grad;
    Tensor4& ga = g.nodes_[a].grad;
    Tensor4& gb = g.nodes_[b].grad;
    for (std::size_t i = 0; i < gy.size(); ++i) {
      ga[i] += gy[i];
      gb[i] += gy[i];
    }
  });
}

Graph::NodeId Graph::bias_add(NodeId x, NodeId bias) {
  const Tensor4& in = nodes_[x].value;
  const Tensor4& bv = nodes_[bias].value;
  const Shape4 s = in.shape();
  if (bv.shape().count() != static_cast<std::size_t>(s.d)) {
    throw Error(ErrorCategory::Shape,
                "bias_add: bias " + bv.shape().str() + " vs input depth " + std::to_string(s.d));
  }
  Tensor4 out(s);
  for (int b = 0; b < s.b; ++b)
    for (int d = 0; d < s.d; ++d)
      for (int h = 0; h < s.h; ++h) {
        const double* row = &in.at(b, d, h, 0);
        double* orow = &out.at(b, d, h, 0);
        for (int w = 0; w < s.w; ++w) orow[w] = row[w] + bv[d];
      }
  return push(std::move(out), [x, bias](Graph& g) {
    const NodeId self = g.current_;
    const Tensor4& gy = g.nodes_[self].grad;
    const Shape4 s = gy.shape();
    Tensor4& gx = g.nodes_[x].grad;
    Tensor4& gb = g.nodes_[bias].grad;
    for (int b = 0; b < s.b; ++b)
      for (int d = 0; d < s.d; ++d)
        for (int h = 0; h < s.h; ++h) {
          const double* gr = &gy.at(b, d, h, 0);
          double* gxr = &gx.at(b, d, h, 0);
          double acc = 0.0;
          for (int w = 0; w < s.w; ++w) {
            gxr[w] += gr[w];
            acc += gr[w];
          }
          gb[d] += acc;
        }
  });
}

Graph::NodeId Graph::scale_by(NodeId x, double s) {
  const Tensor4& in = nodes_[x].value;
  Tensor4 out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * s;
  return push(std::move(out), [x, s](Graph& g) {
    const NodeId self = g.current_;
    const Tensor4& gy = g.nodes_[self].grad;
    Tensor4& gx = g.nodes_[x].grad;
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * s;
  });
}

Graph::NodeId Graph::slice_depth(NodeId x, int from, int to) {
  const Tensor4& in = nodes_[x].value;
  const Shape4 s = in.shape();
  if (from < 0 || to <= from || to > s.d) {
    throw Error(ErrorCategory::Shape, "slice_depth: range [" + std::to_string(from) + "," +
                                          std::to_string(to) + ") invalid for depth " +
                                          std::to_string(s.d));
  }
  Tensor4 out(s.b, to - from, s.h, s.w);
  for (int b = 0; b < s.b; ++b)
    for (int d = from; d < to; ++d)
      for (int h = 0; h < s.h; ++h)
        std::memcpy(&out.at(b, d - from, h, 0), &in.at(b, d, h, 0), sizeof(double) * s.w);
  return push(std::move(out), [x, from](Graph& g) {
    const NodeId self = g.current_;
    const Tensor4& gy = g.nodes_[self].grad;
    const Shape4 os = gy.shape();
    Tensor4& gx = g.nodes_[x].grad;
    for (int b = 0; b < os.b; ++b)
      for (int d = 0; d < os.d; ++d)
        for (int h = 0; h < os.h; ++h) {
          const double* gr = &gy.at(b, d, h, 0);
          double* gxr = &gx.at(b, d + from, h, 0);
          for (int w = 0; w < os.w; ++w) gxr[w] += gr[w];
        }
  });
}

Graph::NodeId Graph::reparam(NodeId mu, NodeId logvar, Tensor4 eps) {
  const Tensor4& m = nodes_[mu].value;
  const Tensor4& lv = nodes_[logvar].value;
  require_same_shape(m, lv, "reparam");
  require_same_shape(m, eps, "reparam(eps)");
  Tensor4 out(m.shape());
  for (std::size_t i = 0; i < m.size(); ++i)
    out[i] = m[i] + std::exp(0.5 * lv[i]) * eps[i];
  return push(std::move(out), [mu, logvar](Graph& g) {
    const NodeId self = g.current_;
    const Tensor4& gy = g.nodes_[self].grad;
    const Tensor4& y = g.nodes_[self].value;
    const Tensor4& m = g.nodes_[mu].value;
    Tensor4& gm = g.nodes_[mu].grad;
    Tensor4& glv = g.nodes_[logvar].grad;
    for (std::size_t i = 0; i < gy.size(); ++i) {
      gm[i] += gy[i];
      glv[i] += gy[i] * 0.5 * (y[i] - m[i]);  // d z / d logvar = 0.5 * sigma * eps
    }
  });
}

Graph::NodeId Graph::kl_standard(NodeId mu, NodeId logvar) {
  const Tensor4& m = nodes_[mu].value;
  const Tensor4& lv = nodes_[logvar].value;
  require_same_shape(m, lv, "kl_standard");
  double acc = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i)
    acc += std::exp(lv[i]) + m[i] * m[i] - 1.0 - lv[i];
  Tensor4 out(1, 1, 1, 1);
  out[0] = 0.5 * acc;
  return push(std::move(out), [mu, logvar](Graph& g) {
    const NodeId self = g.current_;
    const double gy = g.nodes_[self].grad[0];
    const Tensor4& m = g.nodes_[mu].value;
    const Tensor4& lv = g.nodes_[logvar].value;
    Tensor4& gm = g.nodes_[mu].grad;
    Tensor4& glv = g.nodes_[logvar].grad;
    for (std::size_t i = 0; i < m.size(); ++i) {
      gm[i] += gy * m[i];
      glv[i] += gy * 0.5 * (std::exp(lv[i]) - 1.0);
    }
  });
}

Graph::NodeId Graph::kl_gaussian(NodeId mu_q, NodeId logvar_q, NodeId mu_p, NodeId logvar_p) {
  const Tensor4& mq = nodes_[mu_q].value;
  const Tensor4& lq = nodes_[logvar_q].value;
  const Tensor4& mp = nodes_[mu_p].value;
  const Tensor4& lp = nodes_[logvar_p].value;
  require_same_shape(mq, lq, "kl_gaussian");
  require_same_shape(mq, mp, "kl_gaussian");
  require_same_shape(mq, lp, "kl_gaussian");
  double acc = 0.0;
  for (std::size_t i = 0; i < mq.size(); ++i) {
    const double dm = mq[i] - mp[i];
    acc += lp[i] - lq[i] + (std::exp(lq[i]) + dm * dm) / std::exp(lp[i]) - 1.0;
  }
  Tensor4 out(1, 1, 1, 1);
  out[0] = 0.5 * acc;
  return push(std::move(out), [mu_q, logvar_q, mu_p, logvar_p](Graph& g) {
    const NodeId self = g.current_;
    const double gy = g.nodes_[self].grad[0];
    const Tensor4& mq = g.nodes_[mu_q].value;
    const Tensor4& lq = g.nodes_[logvar_q].value;
    const Tensor4& mp = g.nodes_[mu_p].value;
    const Tensor4& lp = g.nodes_[logvar_p].value;
    Tensor4& gmq = g.nodes_[mu_q].grad;
    Tensor4& glq = g.nodes_[logvar_q].grad;
    Tensor4& gmp = g.nodes_[mu_p].grad;
    Tensor4& glp = g.nodes_[logvar_p].grad;
    for (std::size_t i = 0; i < mq.size(); ++i) {
      const double ivp = std::exp(-lp[i]);
      const double dm = mq[i] - mp[i];
      gmq[i] += gy * dm * ivp;
      gmp[i] -= gy * dm * ivp;
      glq[i] += gy * 0.5 * (std::exp(lq[i]) * ivp - 1.0);
      glp[i] += gy * 0.5 * (1.0 - (std::exp(lq[i]) + dm * dm) * ivp);
    }
  });
}

Graph::NodeId Graph::custom_scalar(
    double value, std::vector<NodeId> inputs,
    std::function<void(Graph&, double, const std::vector<NodeId>&)> backward) {
  Tensor4 out(1, 1, 1, 1);
  out[0] = value;
  auto ins = std::make_shared<std::vector<NodeId>>(std::move(inputs));
  auto bw = std::make_shared<std::function<void(Graph&, double, const std::vector<NodeId>&)>>(
      std::move(backward));
  return push(std::move(out), [ins, bw](Graph& g) {
    const NodeId self = g.current_;
    (*bw)(g, g.nodes_[self].grad[0], *ins);
  });
}

void Graph::backward(NodeId root) {
  if (root < 0 || root >= static_cast<NodeId>(nodes_.size())) {
    throw Error(ErrorCategory::Internal, "backward: bad root node id");
  }
  if (nodes_[root].value.size() != 1) {
    throw Error(ErrorCategory::Internal, "backward: root must be scalar");
  }
  for (NodeId id = 0; id <= root; ++id) {
    nodes_[id].grad = Tensor4(nodes_[id].value.shape());
  }
  nodes_[root].grad[0] = 1.0;
  for (NodeId id = root; id >= 0; --id) {
    if (nodes_[id].backprop) {
      current_ = id;
      nodes_[id].backprop(*this);
    }
  }
}

}  // namespace hvts::grad
