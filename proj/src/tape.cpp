#include "xmodal/tape.hpp"

#include <cmath>

namespace xmodal {

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  double e = std::exp(x);  // stable branch for large negative x
  return e / (1.0 + e);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                   " vs " + shape_str(b.shape()));
  }
}

}  // namespace

Var Tape::push(Tensor value, std::function<void(Tape&, const Node&)> pull) {
  Node n;
  n.value = std::move(value);
  n.pull = std::move(pull);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Tape::accum(std::uint32_t parent, const Tensor& g) {
  Node& p = nodes_[parent];
  if (!p.touched) {
    p.grad = Tensor(p.value.shape());
    p.touched = true;
  }
  for (std::size_t i = 0; i < g.numel(); ++i) p.grad[i] += g[i];
}

void Tape::accum_at(std::uint32_t parent, std::size_t index, double g) {
  Node& p = nodes_[parent];
  if (!p.touched) {
    p.grad = Tensor(p.value.shape());
    p.touched = true;
  }
  p.grad[index] += g;
}

const Tensor& Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.touched) return n.grad;
  zero_like_ = Tensor(n.value.shape());
  return zero_like_;
}

Var Tape::leaf(Tensor value) {
  return push(std::move(value), nullptr);
}

Var Tape::add(Var a, Var b) {
  require_same_shape(val(a.id), val(b.id), "add");
  Tensor out = val(a.id);
  const Tensor& vb = val(b.id);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += vb[i];
  return push(std::move(out), [a, b](Tape& t, const Node& self) {
    t.accum(a.id, self.grad);
    t.accum(b.id, self.grad);
  });
}

Var Tape::sub(Var a, Var b) {
  require_same_shape(val(a.id), val(b.id), "sub");
  Tensor out = val(a.id);
  const Tensor& vb = val(b.id);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= vb[i];
  return push(std::move(out), [a, b](Tape& t, const Node& self) {
    t.accum(a.id, self.grad);
    for (std::size_t i = 0; i < self.grad.numel(); ++i)
      t.accum_at(b.id, i, -self.grad[i]);
  });
}

Var Tape::mul(Var a, Var b) {
  require_same_shape(val(a.id), val(b.id), "mul");
  Tensor out = val(a.id);
  const Tensor& vb = val(b.id);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= vb[i];
  return push(std::move(out), [a, b](Tape& t, const Node& self) {
    const Tensor& va = t.val(a.id);
    const Tensor& vb2 = t.val(b.id);
    for (std::size_t i = 0; i < self.grad.numel(); ++i) {
      t.accum_at(a.id, i, self.grad[i] * vb2[i]);
      t.accum_at(b.id, i, self.grad[i] * va[i]);
    }
  });
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& va = val(a.id);
  const Tensor& vb = val(b.id);
  if (va.rank() != 2 || vb.rank() != 2 || va.extent(1) != vb.extent(0)) {
    throw DimError("matmul: incompatible shapes " + shape_str(va.shape()) + " vs " +
                   shape_str(vb.shape()));
  }
  const std::size_t m = va.extent(0), k = va.extent(1), n = vb.extent(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = va.at(i, p);
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) += aip * vb.at(p, j);
    }
  return push(std::move(out), [a, b, m, k, n](Tape& t, const Node& self) {
    const Tensor& va2 = t.val(a.id);
    const Tensor& vb2 = t.val(b.id);
    // dA = dC * B^T, dB = A^T * dC
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        double g = 0.0;
        for (std::size_t j = 0; j < n; ++j) g += self.grad.at(i, j) * vb2.at(p, j);
        t.accum_at(a.id, i * k + p, g);
      }
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t j = 0; j < n; ++j) {
        double g = 0.0;
        for (std::size_t i = 0; i < m; ++i) g += va2.at(i, p) * self.grad.at(i, j);
        t.accum_at(b.id, p * n + j, g);
      }
  });
}

Var Tape::sigmoid(Var x) {
  Tensor out = val(x.id);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = stable_sigmoid(out[i]);
  return push(std::move(out), [x](Tape& t, const Node& self) {
    for (std::size_t i = 0; i < self.grad.numel(); ++i) {
      const double s = self.value[i];
      t.accum_at(x.id, i, self.grad[i] * s * (1.0 - s));
    }
  });
}

Var Tape::relu(Var x) {
  Tensor out = val(x.id);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  return push(std::move(out), [x](Tape& t, const Node& self) {
    const Tensor& vx = t.val(x.id);
    for (std::size_t i = 0; i < self.grad.numel(); ++i) {
      if (vx[i] > 0.0) t.accum_at(x.id, i, self.grad[i]);
    }
  });
}

Var Tape::tanh(Var x) {
  Tensor out = val(x.id);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
  return push(std::move(out), [x](Tape& t, const Node& self) {
    for (std::size_t i = 0; i < self.grad.numel(); ++i) {
      const double y = self.value[i];
      t.accum_at(x.id, i, self.grad[i] * (1.0 - y * y));
    }
  });
}

Var Tape::spatial_max(Var x) {
  const Tensor& vx = val(x.id);
  if (vx.rank() != 3) throw DimError("spatial_max: expected [C,H,W], got " + shape_str(vx.shape()));
  const std::size_t c = vx.extent(0), hw = vx.extent(1) * vx.extent(2);
  Tensor out({c});
  std::vector<std::size_t> argmax(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* base = vx.data() + ch * hw;
    std::size_t best = 0;
    for (std::size_t i = 1; i < hw; ++i) {
      if (base[i] > base[best]) best = i;  // strict > keeps lowest index on ties
    }
    argmax[ch] = best;
    out[ch] = base[best];
  }
  return push(std::move(out), [x, hw, argmax = std::move(argmax)](Tape& t, const Node& self) {
    for (std::size_t ch = 0; ch < self.grad.numel(); ++ch)
      t.accum_at(x.id, ch * hw + argmax[ch], self.grad[ch]);
  });
}

Var Tape::spatial_avg(Var x) {
  const Tensor& vx = val(x.id);
  if (vx.rank() != 3) throw DimError("spatial_avg: expected [C,H,W], got " + shape_str(vx.shape()));
  const std::size_t c = vx.extent(0), hw = vx.extent(1) * vx.extent(2);
  Tensor out({c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    const double* base = vx.data() + ch * hw;
    for (std::size_t i = 0; i < hw; ++i) s += base[i];
    out[ch] = s / static_cast<double>(hw);
  }
  return push(std::move(out), [x, hw](Tape& t, const Node& self) {
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t ch = 0; ch < self.grad.numel(); ++ch) {
      const double g = self.grad[ch] * inv;
      for (std::size_t i = 0; i < hw; ++i) t.accum_at(x.id, ch * hw + i, g);
    }
  });
}

Var Tape::max_over_time(Var h) {
  const Tensor& vh = val(h.id);
  if (vh.rank() != 2) throw DimError("max_over_time: expected [N,D], got " + shape_str(vh.shape()));
  const std::size_t n = vh.extent(0), d = vh.extent(1);
  Tensor out({d});
  std::vector<std::size_t> argmax(d, 0);
  for (std::size_t j = 0; j < d; ++j) {
    double best = vh.at(0, j);
    for (std::size_t i = 1; i < n; ++i) {
      if (vh.at(i, j) > best) {
        best = vh.at(i, j);
        argmax[j] = i;  // first max step wins ties
      }
    }
    out[j] = best;
  }
  return push(std::move(out), [h, d, argmax = std::move(argmax)](Tape& t, const Node& self) {
    for (std::size_t j = 0; j < d; ++j)
      t.accum_at(h.id, argmax[j] * d + j, self.grad[j]);
  });
}

Var Tape::conv2d(Var x, Var w, Var b, std::size_t stride) {
  const Tensor& vx = val(x.id);
  const Tensor& vw = val(w.id);
  const Tensor& vb = val(b.id);
  if (vx.rank() != 3 || vw.rank() != 4)
    throw DimError("conv2d: expected x [Cin,H,W] and w [Cout,Cin,kh,kw], got " +
                   shape_str(vx.shape()) + " and " + shape_str(vw.shape()));
  const std::size_t cin = vx.extent(0), h = vx.extent(1), wdt = vx.extent(2);
  const std::size_t cout = vw.extent(0), kh = vw.extent(2), kw = vw.extent(3);
  if (vw.extent(1) != cin)
    throw DimError("conv2d: input channels " + std::to_string(cin) + " vs kernel " +
                   std::to_string(vw.extent(1)));
  if (vb.rank() != 1 || vb.extent(0) != cout)
    throw DimError("conv2d: bias shape " + shape_str(vb.shape()) + " for " +
                   std::to_string(cout) + " output channels");
  if (h < kh || wdt < kw)
    throw DimError("conv2d: input " + shape_str(vx.shape()) + " smaller than kernel " +
                   shape_str(vw.shape()));
  if (stride == 0) throw InputError("conv2d: stride must be positive");
  const std::size_t ho = (h - kh) / stride + 1, wo = (wdt - kw) / stride + 1;

  Tensor out({cout, ho, wo});
  for (std::size_t oc = 0; oc < cout; ++oc)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double acc = vb[oc];
        for (std::size_t ic = 0; ic < cin; ++ic)
          for (std::size_t ky = 0; ky < kh; ++ky)
            for (std::size_t kx = 0; kx < kw; ++kx)
              acc += vx.at(ic, oy * stride + ky, ox * stride + kx) * vw[(((oc * cin) + ic) * kh + ky) * kw + kx];
        out.at(oc, oy, ox) = acc;
      }
  return push(std::move(out), [x, w, b, stride, cin, kh, kw](Tape& t, const Node& self) {
    const Tensor& vx2 = t.val(x.id);
    const Tensor& vw2 = t.val(w.id);
    const std::size_t cout2 = self.value.extent(0), ho2 = self.value.extent(1),
                      wo2 = self.value.extent(2);
    const std::size_t hwx = vx2.extent(1) * vx2.extent(2), wx = vx2.extent(2);
    for (std::size_t oc = 0; oc < cout2; ++oc)
      for (std::size_t oy = 0; oy < ho2; ++oy)
        for (std::size_t ox = 0; ox < wo2; ++ox) {
          const double g = self.grad.at(oc, oy, ox);
          if (g == 0.0) continue;
          t.accum_at(b.id, oc, g);
          for (std::size_t ic = 0; ic < cin; ++ic)
            for (std::size_t ky = 0; ky < kh; ++ky)
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const std::size_t xi = ic * hwx + (oy * stride + ky) * wx + (ox * stride + kx);
                const std::size_t wi = (((oc * cin) + ic) * kh + ky) * kw + kx;
                t.accum_at(w.id, wi, g * vx2[xi]);
                t.accum_at(x.id, xi, g * vw2[wi]);
              }
        }
  });
}

Var Tape::embed_rows(Var table, const std::vector<std::size_t>& rows) {
  const Tensor& vt = val(table.id);
  if (vt.rank() != 2) throw DimError("embed_rows: expected [V,E], got " + shape_str(vt.shape()));
  if (rows.empty()) throw InputError("embed_rows: empty index list");
  const std::size_t v = vt.extent(0), e = vt.extent(1);
  for (std::size_t r : rows) {
    if (r >= v)
      throw InputError("embed_rows: index " + std::to_string(r) + " out of range for vocabulary of " +
                       std::to_string(v));
  }
  Tensor out({rows.size(), e});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < e; ++j) out.at(i, j) = vt.at(rows[i], j);
  return push(std::move(out), [table, rows, e](Tape& t, const Node& self) {
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < e; ++j)
        t.accum_at(table.id, rows[i] * e + j, self.grad.at(i, j));
  });
}

Var Tape::concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw InputError("concat: no parts");
  std::size_t total = 0;
  for (Var p : parts) {
    if (val(p.id).rank() != 1)
      throw DimError("concat: rank-1 parts required, got " + shape_str(val(p.id).shape()));
    total += val(p.id).numel();
  }
  Tensor out({total});
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& vp = val(p.id);
    for (std::size_t i = 0; i < vp.numel(); ++i) out[off + i] = vp[i];
    off += vp.numel();
  }
  return push(std::move(out), [parts](Tape& t, const Node& self) {
    std::size_t off2 = 0;
    for (Var p : parts) {
      const std::size_t n = t.val(p.id).numel();
      for (std::size_t i = 0; i < n; ++i) t.accum_at(p.id, i, self.grad[off2 + i]);
      off2 += n;
    }
  });
}

Var Tape::stack_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw InputError("stack_rows: no rows");
  const std::size_t d = val(rows[0].id).numel();
  for (Var r : rows) {
    if (val(r.id).rank() != 1 || val(r.id).numel() != d)
      throw DimError("stack_rows: all rows must be rank-1 of length " + std::to_string(d));
  }
  Tensor out({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = val(rows[i].id)[j];
  return push(std::move(out), [rows, d](Tape& t, const Node& self) {
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) t.accum_at(rows[i].id, j, self.grad.at(i, j));
  });
}

Var Tape::slice(Var v, std::size_t offset, std::size_t len) {
  const Tensor& vv = val(v.id);
  if (vv.rank() != 1) throw DimError("slice: rank-1 input required, got " + shape_str(vv.shape()));
  if (offset + len > vv.numel())
    throw DimError("slice: [" + std::to_string(offset) + "," + std::to_string(offset + len) +
                   ") out of range for length " + std::to_string(vv.numel()));
  Tensor out({len});
  for (std::size_t i = 0; i < len; ++i) out[i] = vv[offset + i];
  return push(std::move(out), [v, offset, len](Tape& t, const Node& self) {
    for (std::size_t i = 0; i < len; ++i) t.accum_at(v.id, offset + i, self.grad[i]);
  });
}

Var Tape::reshape(Var v, Shape shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  if (n != val(v.id).numel())
    throw DimError("reshape: element count mismatch " + shape_str(val(v.id).shape()) + " vs " +
                   shape_str(shape));
  Tensor out(std::move(shape),
             std::vector<double>(val(v.id).data(), val(v.id).data() + val(v.id).numel()));
  return push(std::move(out), [v](Tape& t, const Node& self) {
    for (std::size_t i = 0; i < self.grad.numel(); ++i) t.accum_at(v.id, i, self.grad[i]);
  });
}

Var Tape::dot(Var a, Var b) {
  require_same_shape(val(a.id), val(b.id), "dot");
  const Tensor& va = val(a.id);
  const Tensor& vb = val(b.id);
  double s = 0.0;
  for (std::size_t i = 0; i < va.numel(); ++i) s += va[i] * vb[i];
  return push(Tensor::scalar(s), [a, b](Tape& t, const Node& self) {
    const double g = self.grad[0];
    const Tensor& va2 = t.val(a.id);
    const Tensor& vb2 = t.val(b.id);
    for (std::size_t i = 0; i < va2.numel(); ++i) {
      t.accum_at(a.id, i, g * vb2[i]);
      t.accum_at(b.id, i, g * va2[i]);
    }
  });
}

Var Tape::sum(Var x) {
  const Tensor& vx = val(x.id);
  double s = 0.0;
  for (std::size_t i = 0; i < vx.numel(); ++i) s += vx[i];
  return push(Tensor::scalar(s), [x](Tape& t, const Node& self) {
    const double g = self.grad[0];
    for (std::size_t i = 0; i < t.val(x.id).numel(); ++i) t.accum_at(x.id, i, g);
  });
}

Var Tape::sqrt(Var x) {
  Tensor out = val(x.id);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    if (out[i] < 0.0) throw EvalError("sqrt: negative input " + std::to_string(out[i]));
    out[i] = std::sqrt(out[i]);
  }
  return push(std::move(out), [x](Tape& t, const Node& self) {
    for (std::size_t i = 0; i < self.grad.numel(); ++i) {
      const double y = self.value[i];
      if (y > 0.0) t.accum_at(x.id, i, self.grad[i] * 0.5 / y);
      // subgradient 0 at the origin keeps collapsed distances finite
    }
  });
}

Var Tape::log(Var x) {
  Tensor out = val(x.id);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    if (out[i] <= 0.0) throw EvalError("log: non-positive input " + std::to_string(out[i]));
    out[i] = std::log(out[i]);
  }
  return push(std::move(out), [x](Tape& t, const Node& self) {
    const Tensor& vx = t.val(x.id);
    for (std::size_t i = 0; i < self.grad.numel(); ++i)
      t.accum_at(x.id, i, self.grad[i] / vx[i]);
  });
}

Var Tape::recip(Var x) {
  Tensor out = val(x.id);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    if (out[i] == 0.0) throw EvalError("recip: division by zero");
    out[i] = 1.0 / out[i];
  }
  return push(std::move(out), [x](Tape& t, const Node& self) {
    for (std::size_t i = 0; i < self.grad.numel(); ++i) {
      const double y = self.value[i];
      t.accum_at(x.id, i, -self.grad[i] * y * y);
    }
  });
}

Var Tape::clamp(Var x, double lo, double hi) {
  Tensor out = val(x.id);
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] = out[i] < lo ? lo : (out[i] > hi ? hi : out[i]);
  return push(std::move(out), [x, lo, hi](Tape& t, const Node& self) {
    const Tensor& vx = t.val(x.id);
    for (std::size_t i = 0; i < self.grad.numel(); ++i) {
      if (vx[i] >= lo && vx[i] <= hi) t.accum_at(x.id, i, self.grad[i]);
    }
  });
}

Var Tape::add_const(Var x, double c) {
  Tensor out = val(x.id);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += c;
  return push(std::move(out), [x](Tape& t, const Node& self) {
    t.accum(x.id, self.grad);
  });
}

Var Tape::scale_const(Var x, double c) {
  Tensor out = val(x.id);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= c;
  return push(std::move(out), [x, c](Tape& t, const Node& self) {
    for (std::size_t i = 0; i < self.grad.numel(); ++i)
      t.accum_at(x.id, i, self.grad[i] * c);
  });
}

Var Tape::scale_by(Var t_, Var s) {
  if (val(s.id).numel() != 1)
    throw DimError("scale_by: scale must be a 1-element tensor, got " + shape_str(val(s.id).shape()));
  const double sv = val(s.id)[0];
  Tensor out = val(t_.id);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= sv;
  return push(std::move(out), [t_, s](Tape& t, const Node& self) {
    const Tensor& vt = t.val(t_.id);
    const double sv2 = t.val(s.id)[0];
    double gs = 0.0;
    for (std::size_t i = 0; i < self.grad.numel(); ++i) {
      t.accum_at(t_.id, i, self.grad[i] * sv2);
      gs += self.grad[i] * vt[i];
    }
    t.accum_at(s.id, 0, gs);
  });
}

Var Tape::add_n(const std::vector<Var>& xs) {
  if (xs.empty()) throw InputError("add_n: no inputs");
  Tensor out = val(xs[0].id);
  for (std::size_t k = 1; k < xs.size(); ++k) {
    require_same_shape(out, val(xs[k].id), "add_n");
    const Tensor& vk = val(xs[k].id);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += vk[i];
  }
  return push(std::move(out), [xs](Tape& t, const Node& self) {
    for (Var x : xs) t.accum(x.id, self.grad);
  });
}

void Tape::backward(Var root) {
  if (!root.valid() || root.id >= nodes_.size())
    throw InputError("backward: invalid root");
  if (nodes_[root.id].value.numel() != 1)
    throw InputError("backward: root must be scalar, got " +
                     shape_str(nodes_[root.id].value.shape()));
  for (Node& n : nodes_) {
    n.touched = false;
    n.grad = Tensor();
  }
  accum_at(root.id, 0, 1.0);
  // Creation order is topological; one reverse sweep visits each node once.
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.touched && n.pull) n.pull(*this, n);
  }
}

}  // namespace xmodal
