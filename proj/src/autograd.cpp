#include "rgbdmae/autograd.hpp"

#include <cmath>

namespace rgbdmae {

Var Tape::push(Mat value, bool needs_grad, std::function<void(Tape&, i64)> back) {
  Node n;
  n.grad = Mat(value.rows, value.cols);
  n.value = std::move(value);
  n.back = std::move(back);
  n.needs_grad = needs_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<i64>(nodes_.size()) - 1};
}

Var Tape::input(Mat value) { return push(std::move(value), false, nullptr); }

Var Tape::param(Param& p) {
  Var v = push(p.value, true, nullptr);
  node(v).bound = &p;
  return v;
}

double Tape::scalar(Var v) const {
  const Mat& m = value(v);
  if (m.rows != 1 || m.cols != 1) throw DimensionError("scalar() on non-scalar " + m.shape_str());
  return m.d[0];
}

Var Tape::matmul(Var a, Var b) {
  Mat c = mm_nn(value(a), value(b));
  bool g = ng(a) || ng(b);
  return push(std::move(c), g, [a, b](Tape& t, i64 self) {
    const Mat& go = t.node(self).grad;
    if (t.ng(a)) mm_nt_acc(go, t.value(b), t.node(a).grad);
    if (t.ng(b)) mm_tn_acc(t.value(a), go, t.node(b).grad);
  });
}

Var Tape::matmul_nt(Var a, Var b) {
  Mat c = mm_nt(value(a), value(b));
  bool g = ng(a) || ng(b);
  return push(std::move(c), g, [a, b](Tape& t, i64 self) {
    const Mat& go = t.node(self).grad;
    if (t.ng(a)) mm_nn_acc(go, t.value(b), t.node(a).grad);
    if (t.ng(b)) mm_tn_acc(go, t.value(a), t.node(b).grad);
  });
}

Var Tape::add(Var a, Var b) {
  const Mat &va = value(a), &vb = value(b);
  if (!va.same_shape(vb)) throw DimensionError("add: " + va.shape_str() + " vs " + vb.shape_str());
  Mat c = va;
  for (i64 i = 0; i < c.numel(); ++i) c.d[static_cast<size_t>(i)] += vb.d[static_cast<size_t>(i)];
  return push(std::move(c), ng(a) || ng(b), [a, b](Tape& t, i64 self) {
    const Mat& go = t.node(self).grad;
    for (Var p : {a, b}) {
      if (!t.ng(p)) continue;
      Mat& gp = t.node(p).grad;
      for (i64 i = 0; i < go.numel(); ++i) gp.d[static_cast<size_t>(i)] += go.d[static_cast<size_t>(i)];
    }
  });
}

Var Tape::sub(Var a, Var b) {
  const Mat &va = value(a), &vb = value(b);
  if (!va.same_shape(vb)) throw DimensionError("sub: " + va.shape_str() + " vs " + vb.shape_str());
  Mat c = va;
  for (i64 i = 0; i < c.numel(); ++i) c.d[static_cast<size_t>(i)] -= vb.d[static_cast<size_t>(i)];
  return push(std::move(c), ng(a) || ng(b), [a, b](Tape& t, i64 self) {
    const Mat& go = t.node(self).grad;
    if (t.ng(a)) {
      Mat& ga = t.node(a).grad;
      for (i64 i = 0; i < go.numel(); ++i) ga.d[static_cast<size_t>(i)] += go.d[static_cast<size_t>(i)];
    }
    if (t.ng(b)) {
      Mat& gb = t.node(b).grad;
      for (i64 i = 0; i < go.numel(); ++i) gb.d[static_cast<size_t>(i)] -= go.d[static_cast<size_t>(i)];
    }
  });
}

Var Tape::mul(Var a, Var b) {
  const Mat &va = value(a), &vb = value(b);
  if (!va.same_shape(vb)) throw DimensionError("mul: " + va.shape_str() + " vs " + vb.shape_str());
  Mat c = va;
  for (i64 i = 0; i < c.numel(); ++i) c.d[static_cast<size_t>(i)] *= vb.d[static_cast<size_t>(i)];
  return push(std::move(c), ng(a) || ng(b), [a, b](Tape& t, i64 self) {
    const Mat& go = t.node(self).grad;
    if (t.ng(a)) {
      Mat& ga = t.node(a).grad;
      const Mat& vb2 = t.value(b);
      for (i64 i = 0; i < go.numel(); ++i) ga.d[static_cast<size_t>(i)] += go.d[static_cast<size_t>(i)] * vb2.d[static_cast<size_t>(i)];
    }
    if (t.ng(b)) {
      Mat& gb = t.node(b).grad;
      const Mat& va2 = t.value(a);
      for (i64 i = 0; i < go.numel(); ++i) gb.d[static_cast<size_t>(i)] += go.d[static_cast<size_t>(i)] * va2.d[static_cast<size_t>(i)];
    }
  });
}

Var Tape::scale(Var a, double c) {
  Mat v = value(a);
  for (double& x : v.d) x *= c;
  return push(std::move(v), ng(a), [a, c](Tape& t, i64 self) {
    if (!t.ng(a)) return;
    const Mat& go = t.node(self).grad;
    Mat& ga = t.node(a).grad;
    for (i64 i = 0; i < go.numel(); ++i) ga.d[static_cast<size_t>(i)] += c * go.d[static_cast<size_t>(i)];
  });
}

Var Tape::add_rowvec(Var a, Var bias) {
  const Mat &va = value(a), &vb = value(bias);
  if (vb.rows != 1 || vb.cols != va.cols)
    throw DimensionError("add_rowvec: " + va.shape_str() + " + " + vb.shape_str());
  Mat c = va;
  for (i64 r = 0; r < c.rows; ++r) {
    double* cr = c.row(r);
    for (i64 j = 0; j < c.cols; ++j) cr[j] += vb.d[static_cast<size_t>(j)];
  }
  return push(std::move(c), ng(a) || ng(bias), [a, bias](Tape& t, i64 self) {
    const Mat& go = t.node(self).grad;
    if (t.ng(a)) {
      Mat& ga = t.node(a).grad;
      for (i64 i = 0; i < go.numel(); ++i) ga.d[static_cast<size_t>(i)] += go.d[static_cast<size_t>(i)];
    }
    if (t.ng(bias)) {
      Mat& gb = t.node(bias).grad;
      for (i64 r = 0; r < go.rows; ++r) {
        const double* gr = go.row(r);
        for (i64 j = 0; j < go.cols; ++j) gb.d[static_cast<size_t>(j)] += gr[j];
      }
    }
  });
}

Var Tape::add_const(Var a, const Mat& m) {
  const Mat& va = value(a);
  Mat c = va;
  if (m.rows == 1 && m.cols == va.cols) {
    for (i64 r = 0; r < c.rows; ++r)
      for (i64 j = 0; j < c.cols; ++j) c.at(r, j) += m.d[static_cast<size_t>(j)];
  } else if (m.same_shape(va)) {
    for (i64 i = 0; i < c.numel(); ++i) c.d[static_cast<size_t>(i)] += m.d[static_cast<size_t>(i)];
  } else {
    throw DimensionError("add_const: " + va.shape_str() + " + " + m.shape_str());
  }
  return push(std::move(c), ng(a), [a](Tape& t, i64 self) {
    if (!t.ng(a)) return;
    const Mat& go = t.node(self).grad;
    Mat& ga = t.node(a).grad;
    for (i64 i = 0; i < go.numel(); ++i) ga.d[static_cast<size_t>(i)] += go.d[static_cast<size_t>(i)];
  });
}

Var Tape::add_tiled(Var a, const Mat& table, i64 times) {
  const Mat& va = value(a);
  if (va.rows != table.rows * times || va.cols != table.cols)
    throw DimensionError("add_tiled: " + va.shape_str() + " + " + table.shape_str() + " x" + std::to_string(times));
  Mat c = va;
  for (i64 rep = 0; rep < times; ++rep)
    for (i64 r = 0; r < table.rows; ++r) {
      double* cr = c.row(rep * table.rows + r);
      const double* tr = table.row(r);
      for (i64 j = 0; j < c.cols; ++j) cr[j] += tr[j];
    }
  return push(std::move(c), ng(a), [a](Tape& t, i64 self) {
    if (!t.ng(a)) return;
    const Mat& go = t.node(self).grad;
    Mat& ga = t.node(a).grad;
    for (i64 i = 0; i < go.numel(); ++i) ga.d[static_cast<size_t>(i)] += go.d[static_cast<size_t>(i)];
  });
}

namespace {
inline double norm_cdf(double x) { return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)); }
inline double norm_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); }
}  // namespace

Var Tape::gelu(Var x) {
  Mat c = value(x);
  for (double& v : c.d) v = v * norm_cdf(v);
  return push(std::move(c), ng(x), [x](Tape& t, i64 self) {
    if (!t.ng(x)) return;
    const Mat& go = t.node(self).grad;
    const Mat& vx = t.value(x);
    Mat& gx = t.node(x).grad;
    for (i64 i = 0; i < go.numel(); ++i) {
      double v = vx.d[static_cast<size_t>(i)];
      gx.d[static_cast<size_t>(i)] += go.d[static_cast<size_t>(i)] * (norm_cdf(v) + v * norm_pdf(v));
    }
  });
}

Var Tape::square(Var x) {
  Mat c = value(x);
  for (double& v : c.d) v *= v;
  return push(std::move(c), ng(x), [x](Tape& t, i64 self) {
    if (!t.ng(x)) return;
    const Mat& go = t.node(self).grad;
    const Mat& vx = t.value(x);
    Mat& gx = t.node(x).grad;
    for (i64 i = 0; i < go.numel(); ++i)
      gx.d[static_cast<size_t>(i)] += 2.0 * vx.d[static_cast<size_t>(i)] * go.d[static_cast<size_t>(i)];
  });
}

Var Tape::abs(Var x) {
  Mat c = value(x);
  for (double& v : c.d) v = std::fabs(v);
  return push(std::move(c), ng(x), [x](Tape& t, i64 self) {
    if (!t.ng(x)) return;
    const Mat& go = t.node(self).grad;
    const Mat& vx = t.value(x);
    Mat& gx = t.node(x).grad;
    for (i64 i = 0; i < go.numel(); ++i) {
      double v = vx.d[static_cast<size_t>(i)];
      double s = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);  // subgradient 0 at 0
      gx.d[static_cast<size_t>(i)] += s * go.d[static_cast<size_t>(i)];
    }
  });
}

Var Tape::layernorm_rows(Var x, Var gamma, Var beta, double eps) {
  const Mat& vx = value(x);
  const Mat &vg = value(gamma), &vb = value(beta);
  if (vg.rows != 1 || vg.cols != vx.cols || vb.rows != 1 || vb.cols != vx.cols)
    throw DimensionError("layernorm: x " + vx.shape_str() + " gamma " + vg.shape_str());
  Mat c(vx.rows, vx.cols);
  const i64 n = vx.cols;
  for (i64 r = 0; r < vx.rows; ++r) {
    const double* xr = vx.row(r);
    double mean = 0.0;
    for (i64 j = 0; j < n; ++j) mean += xr[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (i64 j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(n);
    double inv = 1.0 / std::sqrt(var + eps);
    double* cr = c.row(r);
    for (i64 j = 0; j < n; ++j) cr[j] = vg.d[static_cast<size_t>(j)] * (xr[j] - mean) * inv + vb.d[static_cast<size_t>(j)];
  }
  bool g = ng(x) || ng(gamma) || ng(beta);
  return push(std::move(c), g, [x, gamma, beta, eps](Tape& t, i64 self) {
    const Mat& go = t.node(self).grad;
    const Mat& vx = t.value(x);
    const Mat& vg = t.value(gamma);
    const i64 n = vx.cols;
    for (i64 r = 0; r < vx.rows; ++r) {
      const double* xr = vx.row(r);
      const double* gr = go.row(r);
      double mean = 0.0;
      for (i64 j = 0; j < n; ++j) mean += xr[j];
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (i64 j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
      var /= static_cast<double>(n);
      double inv = 1.0 / std::sqrt(var + eps);
      if (t.ng(gamma) || t.ng(beta)) {
        Mat& gg = t.node(gamma).grad;
        Mat& gb = t.node(beta).grad;
        for (i64 j = 0; j < n; ++j) {
          double xh = (xr[j] - mean) * inv;
          if (t.ng(gamma)) gg.d[static_cast<size_t>(j)] += gr[j] * xh;
          if (t.ng(beta)) gb.d[static_cast<size_t>(j)] += gr[j];
        }
      }
      if (t.ng(x)) {
        Mat& gx = t.node(x).grad;
        double sum_dxh = 0.0, sum_dxh_xh = 0.0;
        for (i64 j = 0; j < n; ++j) {
          double xh = (xr[j] - mean) * inv;
          double dxh = gr[j] * vg.d[static_cast<size_t>(j)];
          sum_dxh += dxh;
          sum_dxh_xh += dxh * xh;
        }
        double* gxr = gx.row(r);
        for (i64 j = 0; j < n; ++j) {
          double xh = (xr[j] - mean) * inv;
          double dxh = gr[j] * vg.d[static_cast<size_t>(j)];
          gxr[j] += inv * (dxh - sum_dxh / static_cast<double>(n) - xh * sum_dxh_xh / static_cast<double>(n));
        }
      }
    }
  });
}

Var Tape::softmax_rows(Var x) {
  Mat c = value(x);
  for (i64 r = 0; r < c.rows; ++r) {
    double* cr = c.row(r);
    double m = cr[0];
    for (i64 j = 1; j < c.cols; ++j) m = std::max(m, cr[j]);
    double s = 0.0;
    for (i64 j = 0; j < c.cols; ++j) {
      cr[j] = std::exp(cr[j] - m);
      s += cr[j];
    }
    for (i64 j = 0; j < c.cols; ++j) cr[j] /= s;
  }
  return push(std::move(c), ng(x), [x](Tape& t, i64 self) {
    if (!t.ng(x)) return;
    const Mat& go = t.node(self).grad;
    const Mat& p = t.node(self).value;
    Mat& gx = t.node(x).grad;
    for (i64 r = 0; r < p.rows; ++r) {
      const double* pr = p.row(r);
      const double* gr = go.row(r);
      double dot = 0.0;
      for (i64 j = 0; j < p.cols; ++j) dot += gr[j] * pr[j];
      double* gxr = gx.row(r);
      for (i64 j = 0; j < p.cols; ++j) gxr[j] += pr[j] * (gr[j] - dot);
    }
  });
}

Var Tape::log_softmax_rows(Var x) {
  Mat c = value(x);
  for (i64 r = 0; r < c.rows; ++r) {
    double* cr = c.row(r);
    double m = cr[0];
    for (i64 j = 1; j < c.cols; ++j) m = std::max(m, cr[j]);
    double s = 0.0;
    for (i64 j = 0; j < c.cols; ++j) s += std::exp(cr[j] - m);
    double lse = m + std::log(s);
    for (i64 j = 0; j < c.cols; ++j) cr[j] -= lse;
  }
  return push(std::move(c), ng(x), [x](Tape& t, i64 self) {
    if (!t.ng(x)) return;
    const Mat& go = t.node(self).grad;
    const Mat& l = t.node(self).value;
    Mat& gx = t.node(x).grad;
    for (i64 r = 0; r < l.rows; ++r) {
      const double* lr = l.row(r);
      const double* gr = go.row(r);
      double gsum = 0.0;
      for (i64 j = 0; j < l.cols; ++j) gsum += gr[j];
      double* gxr = gx.row(r);
      for (i64 j = 0; j < l.cols; ++j) gxr[j] += gr[j] - std::exp(lr[j]) * gsum;
    }
  });
}

Var Tape::l2normalize_rows(Var x, double eps) {
  const Mat& vx = value(x);
  Mat c(vx.rows, vx.cols);
  for (i64 r = 0; r < vx.rows; ++r) {
    const double* xr = vx.row(r);
    double n2 = 0.0;
    for (i64 j = 0; j < vx.cols; ++j) n2 += xr[j] * xr[j];
    double n = std::max(std::sqrt(n2), eps);
    double* cr = c.row(r);
    for (i64 j = 0; j < vx.cols; ++j) cr[j] = xr[j] / n;
  }
  return push(std::move(c), ng(x), [x, eps](Tape& t, i64 self) {
    if (!t.ng(x)) return;
    const Mat& go = t.node(self).grad;
    const Mat& vx = t.value(x);
    const Mat& y = t.node(self).value;
    Mat& gx = t.node(x).grad;
    for (i64 r = 0; r < vx.rows; ++r) {
      const double* xr = vx.row(r);
      const double* yr = y.row(r);
      const double* gr = go.row(r);
      double n2 = 0.0;
      for (i64 j = 0; j < vx.cols; ++j) n2 += xr[j] * xr[j];
      double n = std::sqrt(n2);
      double* gxr = gx.row(r);
      if (n > eps) {
        double dot = 0.0;
        for (i64 j = 0; j < vx.cols; ++j) dot += yr[j] * gr[j];
        for (i64 j = 0; j < vx.cols; ++j) gxr[j] += (gr[j] - yr[j] * dot) / n;
      } else {
        for (i64 j = 0; j < vx.cols; ++j) gxr[j] += gr[j] / eps;  // norm floored: constant scale
      }
    }
  });
}

Var Tape::gather_rows(Var x, std::vector<i64> idx) {
  const Mat& vx = value(x);
  Mat c(static_cast<i64>(idx.size()), vx.cols);
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= vx.rows) throw DimensionError("gather_rows: index out of range");
    std::memcpy(c.row(static_cast<i64>(i)), vx.row(idx[i]), sizeof(double) * static_cast<size_t>(vx.cols));
  }
  return push(std::move(c), ng(x), [x, idx = std::move(idx)](Tape& t, i64 self) {
    if (!t.ng(x)) return;
    const Mat& go = t.node(self).grad;
    Mat& gx = t.node(x).grad;
    for (size_t i = 0; i < idx.size(); ++i) {
      const double* gr = go.row(static_cast<i64>(i));
      double* gxr = gx.row(idx[i]);
      for (i64 j = 0; j < go.cols; ++j) gxr[j] += gr[j];
    }
  });
}

Var Tape::scatter_rows(Var x, std::vector<i64> idx, i64 out_rows) {
  const Mat& vx = value(x);
  if (static_cast<i64>(idx.size()) != vx.rows) throw DimensionError("scatter_rows: index count != rows");
  Mat c(out_rows, vx.cols);
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= out_rows) throw DimensionError("scatter_rows: index out of range");
    std::memcpy(c.row(idx[i]), vx.row(static_cast<i64>(i)), sizeof(double) * static_cast<size_t>(vx.cols));
  }
  return push(std::move(c), ng(x), [x, idx = std::move(idx)](Tape& t, i64 self) {
    if (!t.ng(x)) return;
    const Mat& go = t.node(self).grad;
    Mat& gx = t.node(x).grad;
    for (size_t i = 0; i < idx.size(); ++i) {
      const double* gr = go.row(idx[i]);
      double* gxr = gx.row(static_cast<i64>(i));
      for (i64 j = 0; j < go.cols; ++j) gxr[j] += gr[j];
    }
  });
}

Var Tape::slice_rows(Var x, i64 begin, i64 count) {
  const Mat& vx = value(x);
  if (begin < 0 || begin + count > vx.rows) throw DimensionError("slice_rows out of range");
  Mat c(count, vx.cols);
  std::memcpy(c.d.data(), vx.row(begin), sizeof(double) * static_cast<size_t>(count * vx.cols));
  return push(std::move(c), ng(x), [x, begin, count](Tape& t, i64 self) {
    if (!t.ng(x)) return;
    const Mat& go = t.node(self).grad;
    Mat& gx = t.node(x).grad;
    for (i64 r = 0; r < count; ++r) {
      const double* gr = go.row(r);
      double* gxr = gx.row(begin + r);
      for (i64 j = 0; j < go.cols; ++j) gxr[j] += gr[j];
    }
  });
}

Var Tape::slice_cols(Var x, i64 begin, i64 count) {
  const Mat& vx = value(x);
  if (begin < 0 || begin + count > vx.cols) throw DimensionError("slice_cols out of range");
  Mat c(vx.rows, count);
  for (i64 r = 0; r < vx.rows; ++r)
    std::memcpy(c.row(r), vx.row(r) + begin, sizeof(double) * static_cast<size_t>(count));
  return push(std::move(c), ng(x), [x, begin, count](Tape& t, i64 self) {
    if (!t.ng(x)) return;
    const Mat& go = t.node(self).grad;
    Mat& gx = t.node(x).grad;
    for (i64 r = 0; r < go.rows; ++r) {
      const double* gr = go.row(r);
      double* gxr = gx.row(r) + begin;
      for (i64 j = 0; j < count; ++j) gxr[j] += gr[j];
    }
  });
}

Var Tape::concat_rows(const std::vector<Var>& xs) {
  if (xs.empty()) throw DimensionError("concat_rows: empty list");
  i64 cols = value(xs[0]).cols, rows = 0;
  bool g = false;
  for (Var v : xs) {
    if (value(v).cols != cols) throw DimensionError("concat_rows: column mismatch");
    rows += value(v).rows;
    g = g || ng(v);
  }
  Mat c(rows, cols);
  i64 off = 0;
  for (Var v : xs) {
    const Mat& m = value(v);
    std::memcpy(c.row(off), m.d.data(), sizeof(double) * static_cast<size_t>(m.numel()));
    off += m.rows;
  }
  return push(std::move(c), g, [xs](Tape& t, i64 self) {
    const Mat& go = t.node(self).grad;
    i64 off = 0;
    for (Var v : xs) {
      const Mat& m = t.value(v);
      if (t.ng(v)) {
        Mat& gv = t.node(v).grad;
        for (i64 r = 0; r < m.rows; ++r) {
          const double* gr = go.row(off + r);
          double* gvr = gv.row(r);
          for (i64 j = 0; j < m.cols; ++j) gvr[j] += gr[j];
        }
      }
      off += m.rows;
    }
  });
}

Var Tape::concat_cols(const std::vector<Var>& xs) {
  if (xs.empty()) throw DimensionError("concat_cols: empty list");
  i64 rows = value(xs[0]).rows, cols = 0;
  bool g = false;
  for (Var v : xs) {
    if (value(v).rows != rows) throw DimensionError("concat_cols: row mismatch");
    cols += value(v).cols;
    g = g || ng(v);
  }
  Mat c(rows, cols);
  i64 off = 0;
  for (Var v : xs) {
    const Mat& m = value(v);
    for (i64 r = 0; r < rows; ++r)
      std::memcpy(c.row(r) + off, m.row(r), sizeof(double) * static_cast<size_t>(m.cols));
    off += m.cols;
  }
  return push(std::move(c), g, [xs](Tape& t, i64 self) {
    const Mat& go = t.node(self).grad;
    i64 off = 0;
    for (Var v : xs) {
      const Mat& m = t.value(v);
      if (t.ng(v)) {
        Mat& gv = t.node(v).grad;
        for (i64 r = 0; r < m.rows; ++r) {
          const double* gr = go.row(r) + off;
          double* gvr = gv.row(r);
          for (i64 j = 0; j < m.cols; ++j) gvr[j] += gr[j];
        }
      }
      off += m.cols;
    }
  });
}

Var Tape::broadcast_row(Var x, i64 n) {
  const Mat& vx = value(x);
  if (vx.rows != 1) throw DimensionError("broadcast_row expects (1,c), got " + vx.shape_str());
  Mat c(n, vx.cols);
  for (i64 r = 0; r < n; ++r) std::memcpy(c.row(r), vx.d.data(), sizeof(double) * static_cast<size_t>(vx.cols));
  return push(std::move(c), ng(x), [x](Tape& t, i64 self) {
    if (!t.ng(x)) return;
    const Mat& go = t.node(self).grad;
    Mat& gx = t.node(x).grad;
    for (i64 r = 0; r < go.rows; ++r) {
      const double* gr = go.row(r);
      for (i64 j = 0; j < go.cols; ++j) gx.d[static_cast<size_t>(j)] += gr[j];
    }
  });
}

Var Tape::mean_rows(Var x) {
  const Mat& vx = value(x);
  Mat c(1, vx.cols);
  for (i64 r = 0; r < vx.rows; ++r) {
    const double* xr = vx.row(r);
    for (i64 j = 0; j < vx.cols; ++j) c.d[static_cast<size_t>(j)] += xr[j];
  }
  double inv = 1.0 / static_cast<double>(vx.rows);
  for (double& v : c.d) v *= inv;
  return push(std::move(c), ng(x), [x, inv](Tape& t, i64 self) {
    if (!t.ng(x)) return;
    const Mat& go = t.node(self).grad;
    Mat& gx = t.node(x).grad;
    for (i64 r = 0; r < gx.rows; ++r) {
      double* gxr = gx.row(r);
      for (i64 j = 0; j < gx.cols; ++j) gxr[j] += go.d[static_cast<size_t>(j)] * inv;
    }
  });
}

Var Tape::reshape_rows(Var x, i64 rows, i64 cols) {
  const Mat& vx = value(x);
  if (rows * cols != vx.numel())
    throw DimensionError("reshape_rows: " + vx.shape_str() + " to (" + std::to_string(rows) + "," +
                         std::to_string(cols) + ")");
  Mat c(rows, cols);
  c.d = vx.d;
  return push(std::move(c), ng(x), [x](Tape& t, i64 self) {
    if (!t.ng(x)) return;
    const Mat& go = t.node(self).grad;
    Mat& gx = t.node(x).grad;
    for (i64 i = 0; i < go.numel(); ++i) gx.d[static_cast<size_t>(i)] += go.d[static_cast<size_t>(i)];
  });
}

Var Tape::weighted_sum(Var x, Mat weights) {
  const Mat& vx = value(x);
  if (!vx.same_shape(weights)) throw DimensionError("weighted_sum: " + vx.shape_str() + " vs " + weights.shape_str());
  Mat c(1, 1);
  for (i64 i = 0; i < vx.numel(); ++i) c.d[0] += vx.d[static_cast<size_t>(i)] * weights.d[static_cast<size_t>(i)];
  return push(std::move(c), ng(x), [x, w = std::move(weights)](Tape& t, i64 self) {
    if (!t.ng(x)) return;
    double g = t.node(self).grad.d[0];
    Mat& gx = t.node(x).grad;
    for (i64 i = 0; i < gx.numel(); ++i) gx.d[static_cast<size_t>(i)] += g * w.d[static_cast<size_t>(i)];
  });
}

void Tape::backward(Var loss) {
  Node& ln = node(loss);
  if (ln.value.rows != 1 || ln.value.cols != 1) throw DimensionError("backward expects scalar loss");
  ln.grad.d[0] = 1.0;
  for (i64 i = static_cast<i64>(nodes_.size()) - 1; i >= 0; --i) {
    Node& n = node(i);
    if (!n.needs_grad && n.bound == nullptr) continue;
    if (n.bound != nullptr) {
      // leaf bound to a Param: accumulate into external grad
      for (i64 j = 0; j < n.grad.numel(); ++j) n.bound->grad.d[static_cast<size_t>(j)] += n.grad.d[static_cast<size_t>(j)];
    } else if (n.back) {
      n.back(*this, i);
    }
  }
}

}  // namespace rgbdmae
