#include "sic/ops.hpp"

#include <cmath>
#include <memory>
#include <utility>

namespace sic {

namespace {

bool wants_grad(const Tensor& t, Tape* tape) {
  auto* im = t.impl();
  if (!im) throw contract_error("use of empty tensor");
  if (im->requires_grad) return true;
  return tape && im->tape == tape && im->tape_id == tape->id() && im->node >= 0 && im->needs_grad;
}

struct Rec {
  Tape* tape = nullptr;
  bool recording = false;
};

Rec probe(std::initializer_list<const Tensor*> inputs) {
  Rec r;
  r.tape = active_tape();
  if (!r.tape) return r;
  for (const Tensor* t : inputs) {
    if (wants_grad(*t, r.tape)) {
      r.recording = true;
      break;
    }
  }
  return r;
}

std::shared_ptr<Vec> grad_of(Rec& r, const Tensor& t) {
  if (!wants_grad(t, r.tape)) return nullptr;
  return r.tape->node_grad(r.tape->ensure_node(t));
}

std::shared_ptr<Vec> register_output(Rec& r, Tensor& out) {
  int node = r.tape->ensure_node(out);
  out.impl()->needs_grad = true;
  return r.tape->node_grad(node);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw dimension_error(std::string(op) + ": shape mismatch");
  }
}

struct ConvGeometry {
  int ci, h, w, co, k, stride, padding, ho, wo;
  int patch_size() const { return ci * k * k; }
  int positions() const { return ho * wo; }
};

ConvGeometry conv_geometry(const Shape& input, const Shape& kernels, int stride, int padding) {
  if (input.size() != 3) throw dimension_error("conv2d: input must be [ch,H,W]");
  if (kernels.size() != 4) throw dimension_error("conv2d: kernels must be [out,ch,k,k]");
  if (kernels[2] != kernels[3]) throw dimension_error("conv2d: kernels must be square");
  if (kernels[1] != input[0]) throw dimension_error("conv2d: channel mismatch");
  if (stride < 1) throw dimension_error("conv2d: stride must be >= 1");
  if (padding < 0) throw dimension_error("conv2d: padding must be >= 0");
  ConvGeometry g;
  g.ci = input[0];
  g.h = input[1];
  g.w = input[2];
  g.co = kernels[0];
  g.k = kernels[2];
  g.stride = stride;
  g.padding = padding;
  if (g.k > g.h + 2 * padding || g.k > g.w + 2 * padding) {
    throw dimension_error("conv2d: kernel larger than padded input");
  }
  g.ho = (g.h + 2 * padding - g.k) / stride + 1;
  g.wo = (g.w + 2 * padding - g.k) / stride + 1;
  return g;
}

// Column q of the result is the flattened receptive field of output position
// q = oy*wo + ox, ordered (ch, ky, kx) to match flattened kernel rows.
std::shared_ptr<Mat> im2col(const Vec& x, const ConvGeometry& g) {
  auto patches = std::make_shared<Mat>(g.patch_size(), g.positions());
  Mat& m = *patches;
  for (int oy = 0; oy < g.ho; ++oy) {
    for (int ox = 0; ox < g.wo; ++ox) {
      const int q = oy * g.wo + ox;
      int row = 0;
      for (int c = 0; c < g.ci; ++c) {
        for (int ky = 0; ky < g.k; ++ky) {
          const int iy = oy * g.stride + ky - g.padding;
          for (int kx = 0; kx < g.k; ++kx, ++row) {
            const int ix = ox * g.stride + kx - g.padding;
            const bool inside = iy >= 0 && iy < g.h && ix >= 0 && ix < g.w;
            m(row, q) = inside ? x[(c * g.h + iy) * g.w + ix] : 0.0f;
          }
        }
      }
    }
  }
  return patches;
}

void col2im_add(Vec& dx, const Mat& dcol, const ConvGeometry& g) {
  for (int oy = 0; oy < g.ho; ++oy) {
    for (int ox = 0; ox < g.wo; ++ox) {
      const int q = oy * g.wo + ox;
      int row = 0;
      for (int c = 0; c < g.ci; ++c) {
        for (int ky = 0; ky < g.k; ++ky) {
          const int iy = oy * g.stride + ky - g.padding;
          for (int kx = 0; kx < g.k; ++kx, ++row) {
            const int ix = ox * g.stride + kx - g.padding;
            if (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w) {
              dx[(c * g.h + iy) * g.w + ix] += dcol(row, q);
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = make_tensor(a.shape(), a.values() + b.values());
  check_finite(out, "add");
  Rec r = probe({&a, &b});
  if (r.recording) {
    auto ga = grad_of(r, a);
    auto gb = grad_of(r, b);
    auto og = register_output(r, out);
    r.tape->record({}, -1, [ga, gb, og]() {
      if (ga) *ga += *og;
      if (gb) *gb += *og;
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = make_tensor(a.shape(), a.values() - b.values());
  check_finite(out, "sub");
  Rec r = probe({&a, &b});
  if (r.recording) {
    auto ga = grad_of(r, a);
    auto gb = grad_of(r, b);
    auto og = register_output(r, out);
    r.tape->record({}, -1, [ga, gb, og]() {
      if (ga) *ga += *og;
      if (gb) *gb -= *og;
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = make_tensor(a.shape(), a.values().cwiseProduct(b.values()));
  check_finite(out, "mul");
  Rec r = probe({&a, &b});
  if (r.recording) {
    auto ga = grad_of(r, a);
    auto gb = grad_of(r, b);
    auto og = register_output(r, out);
    const Tensor av = a;
    const Tensor bv = b;
    r.tape->record({}, -1, [ga, gb, og, av, bv]() {
      if (ga) *ga += og->cwiseProduct(bv.values());
      if (gb) *gb += og->cwiseProduct(av.values());
    });
  }
  return out;
}

Tensor scale(const Tensor& a, Scalar factor) {
  Tensor out = make_tensor(a.shape(), a.values() * factor);
  check_finite(out, "scale");
  Rec r = probe({&a});
  if (r.recording) {
    auto ga = grad_of(r, a);
    auto og = register_output(r, out);
    r.tape->record({}, -1, [ga, og, factor]() { *ga += *og * factor; });
  }
  return out;
}

Tensor add_scalar(const Tensor& a, Scalar value) {
  Tensor out = make_tensor(a.shape(), a.values().array() + value);
  check_finite(out, "add_scalar");
  Rec r = probe({&a});
  if (r.recording) {
    auto ga = grad_of(r, a);
    auto og = register_output(r, out);
    r.tape->record({}, -1, [ga, og]() { *ga += *og; });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) throw dimension_error("matmul: operands must be rank 2");
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2) throw dimension_error("matmul: inner dimensions disagree");
  Eigen::Map<const RowMat> am(a.values().data(), m, k);
  Eigen::Map<const RowMat> bm(b.values().data(), k, n);
  RowMat cm = am * bm;
  Tensor out = make_tensor({m, n}, Eigen::Map<const Vec>(cm.data(), cm.size()));
  check_finite(out, "matmul");
  Rec r = probe({&a, &b});
  if (r.recording) {
    auto ga = grad_of(r, a);
    auto gb = grad_of(r, b);
    auto og = register_output(r, out);
    const Tensor av = a;
    const Tensor bv = b;
    r.tape->record({}, -1, [ga, gb, og, av, bv, m, k, n]() {
      Eigen::Map<const RowMat> g(og->data(), m, n);
      if (ga) {
        Eigen::Map<const RowMat> bm2(bv.values().data(), k, n);
        Eigen::Map<RowMat>(ga->data(), m, k) += g * bm2.transpose();
      }
      if (gb) {
        Eigen::Map<const RowMat> am2(av.values().data(), m, k);
        Eigen::Map<RowMat>(gb->data(), k, n) += am2.transpose() * g;
      }
    });
  }
  return out;
}

Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride, int padding) {
  const ConvGeometry g = conv_geometry(input.shape(), kernels.shape(), stride, padding);
  auto patches = im2col(input.values(), g);
  Eigen::Map<const RowMat> kmat(kernels.values().data(), g.co, g.patch_size());
  RowMat outm = kmat * (*patches);
  Tensor out = make_tensor({g.co, g.ho, g.wo}, Eigen::Map<const Vec>(outm.data(), outm.size()));
  check_finite(out, "conv2d");
  Rec r = probe({&input, &kernels});
  if (r.recording) {
    auto gi = grad_of(r, input);
    auto gk = grad_of(r, kernels);
    auto og = register_output(r, out);
    const Tensor kv = kernels;
    r.tape->record({}, -1, [gi, gk, og, kv, patches, g]() {
      Eigen::Map<const RowMat> gout(og->data(), g.co, g.positions());
      if (gk) {
        Eigen::Map<RowMat>(gk->data(), g.co, g.patch_size()) += gout * patches->transpose();
      }
      if (gi) {
        Eigen::Map<const RowMat> kmat2(kv.values().data(), g.co, g.patch_size());
        Mat dcol = kmat2.transpose() * gout;
        col2im_add(*gi, dcol, g);
      }
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = make_tensor(x.shape(), x.values().cwiseMax(0.0f));
  check_finite(out, "relu");
  Rec r = probe({&x});
  if (r.recording) {
    auto gx = grad_of(r, x);
    auto og = register_output(r, out);
    const Tensor xv = x;
    r.tape->record({}, -1, [gx, og, xv]() {
      gx->array() += (xv.values().array() > 0.0f).select(og->array(), 0.0f);
    });
  }
  return out;
}

Tensor l2_norm(const Tensor& x) {
  double sq = 0.0;
  const Vec& v = x.values();
  for (Eigen::Index i = 0; i < v.size(); ++i) sq += double(v[i]) * double(v[i]);
  const Scalar norm = static_cast<Scalar>(std::sqrt(sq));
  Tensor out = make_tensor({1}, Vec::Constant(1, norm));
  Rec r = probe({&x});
  if (r.recording) {
    auto gx = grad_of(r, x);
    auto og = register_output(r, out);
    const Tensor xv = x;
    r.tape->record({}, -1, [gx, og, xv, norm]() {
      if (norm > 0.0f) *gx += ((*og)[0] / norm) * xv.values();
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  Tensor out = make_tensor({1}, Vec::Constant(1, x.values().sum()));
  check_finite(out, "sum");
  Rec r = probe({&x});
  if (r.recording) {
    auto gx = grad_of(r, x);
    auto og = register_output(r, out);
    r.tape->record({}, -1, [gx, og]() { gx->array() += (*og)[0]; });
  }
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 3) throw dimension_error("global_avg_pool: input must be [ch,H,W]");
  const int c = x.dim(0);
  const Eigen::Index hw = Eigen::Index(x.dim(1)) * x.dim(2);
  if (hw == 0) throw dimension_error("global_avg_pool: empty spatial grid");
  Eigen::Map<const RowMat> xm(x.values().data(), c, hw);
  Vec means = xm.rowwise().mean();
  Tensor out = make_tensor({c}, std::move(means));
  check_finite(out, "global_avg_pool");
  Rec r = probe({&x});
  if (r.recording) {
    auto gx = grad_of(r, x);
    auto og = register_output(r, out);
    r.tape->record({}, -1, [gx, og, c, hw]() {
      Eigen::Map<RowMat> gm(gx->data(), c, hw);
      gm.colwise() += *og / Scalar(hw);
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) throw dimension_error("reshape: element count mismatch");
  Tensor out = make_tensor(std::move(shape), x.values());
  Rec r = probe({&x});
  if (r.recording) {
    auto gx = grad_of(r, x);
    auto og = register_output(r, out);
    r.tape->record({}, -1, [gx, og]() { *gx += *og; });
  }
  return out;
}

Tensor select(const Tensor& x, Eigen::Index index) {
  if (index < 0 || index >= x.numel()) throw contract_error("select: index out of range");
  Tensor out = make_tensor({1}, Vec::Constant(1, x.values()[index]));
  Rec r = probe({&x});
  if (r.recording) {
    auto gx = grad_of(r, x);
    auto og = register_output(r, out);
    r.tape->record({}, -1, [gx, og, index]() { (*gx)[index] += (*og)[0]; });
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw dimension_error("concat_rows: no rows");
  const Eigen::Index d = rows.front().numel();
  const int n = static_cast<int>(rows.size());
  Vec v(Eigen::Index(n) * d);
  for (int i = 0; i < n; ++i) {
    if (rows[i].numel() != d) throw dimension_error("concat_rows: row length mismatch");
    v.segment(i * d, d) = rows[i].values();
  }
  Tensor out = make_tensor({n, static_cast<int>(d)}, std::move(v));
  check_finite(out, "concat_rows");
  Tape* tape = active_tape();
  bool any = false;
  if (tape) {
    for (const Tensor& t : rows) {
      if (wants_grad(t, tape)) {
        any = true;
        break;
      }
    }
  }
  if (any) {
    Rec r;
    r.tape = tape;
    r.recording = true;
    std::vector<std::shared_ptr<Vec>> grads(rows.size());
    for (int i = 0; i < n; ++i) grads[i] = grad_of(r, rows[i]);
    auto og = register_output(r, out);
    r.tape->record({}, -1, [grads, og, d]() {
      for (size_t i = 0; i < grads.size(); ++i) {
        if (grads[i]) *grads[i] += og->segment(Eigen::Index(i) * d, d);
      }
    });
  }
  return out;
}

Tensor patch_norms(const Tensor& input, int ksize, int stride, int padding) {
  Shape kernel_shape{1, input.rank() == 3 ? input.dim(0) : 0, ksize, ksize};
  const ConvGeometry g = conv_geometry(input.shape(), kernel_shape, stride, padding);
  const Vec& x = input.values();
  Vec norms(g.positions());
  for (int oy = 0; oy < g.ho; ++oy) {
    for (int ox = 0; ox < g.wo; ++ox) {
      double sq = 0.0;
      for (int c = 0; c < g.ci; ++c) {
        for (int ky = 0; ky < g.k; ++ky) {
          const int iy = oy * g.stride + ky - g.padding;
          if (iy < 0 || iy >= g.h) continue;
          for (int kx = 0; kx < g.k; ++kx) {
            const int ix = ox * g.stride + kx - g.padding;
            if (ix < 0 || ix >= g.w) continue;
            const double xv = x[(c * g.h + iy) * g.w + ix];
            sq += xv * xv;
          }
        }
      }
      norms[oy * g.wo + ox] = static_cast<Scalar>(std::sqrt(sq));
    }
  }
  Tensor out = make_tensor({g.positions()}, std::move(norms));
  Rec r = probe({&input});
  if (r.recording) {
    auto gx = grad_of(r, input);
    auto og = register_output(r, out);
    const Tensor xv = input;
    const Tensor nv = out;
    r.tape->record({}, -1, [gx, og, xv, nv, g]() {
      const Vec& x2 = xv.values();
      const Vec& n2 = nv.values();
      for (int oy = 0; oy < g.ho; ++oy) {
        for (int ox = 0; ox < g.wo; ++ox) {
          const int q = oy * g.wo + ox;
          if (n2[q] <= 0.0f) continue;
          const Scalar f = (*og)[q] / n2[q];
          if (f == 0.0f) continue;
          for (int c = 0; c < g.ci; ++c) {
            for (int ky = 0; ky < g.k; ++ky) {
              const int iy = oy * g.stride + ky - g.padding;
              if (iy < 0 || iy >= g.h) continue;
              for (int kx = 0; kx < g.k; ++kx) {
                const int ix = ox * g.stride + kx - g.padding;
                if (ix < 0 || ix >= g.w) continue;
                const Eigen::Index idx = (Eigen::Index(c) * g.h + iy) * g.w + ix;
                (*gx)[idx] += f * x2[idx];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor normalize_rows(const Tensor& w, bool allow_zero_rows) {
  if (w.rank() != 2) throw dimension_error("normalize_rows: input must be rank 2");
  const int rows = w.dim(0), cols = w.dim(1);
  Eigen::Map<const RowMat> wm(w.values().data(), rows, cols);
  RowMat ym(rows, cols);
  for (int i = 0; i < rows; ++i) {
    const Scalar n = wm.row(i).norm();
    if (!(n > 0.0f)) {
      if (!allow_zero_rows) throw config_error("normalize_rows: zero weight row");
      ym.row(i).setZero();
      continue;
    }
    ym.row(i) = wm.row(i) / n;
  }
  Tensor out = make_tensor(w.shape(), Eigen::Map<const Vec>(ym.data(), ym.size()));
  check_finite(out, "normalize_rows");
  Rec r = probe({&w});
  if (r.recording) {
    auto gw = grad_of(r, w);
    auto og = register_output(r, out);
    const Tensor wv = w;
    const Tensor yv = out;
    r.tape->record({}, -1, [gw, og, wv, yv, rows, cols]() {
      Eigen::Map<const RowMat> wm2(wv.values().data(), rows, cols);
      Eigen::Map<const RowMat> ym2(yv.values().data(), rows, cols);
      Eigen::Map<const RowMat> gm(og->data(), rows, cols);
      Eigen::Map<RowMat> gwm(gw->data(), rows, cols);
      for (int i = 0; i < rows; ++i) {
        const Scalar n = wm2.row(i).norm();
        if (!(n > 0.0f)) continue;
        const Scalar proj = gm.row(i).dot(ym2.row(i));
        gwm.row(i) += (gm.row(i) - proj * ym2.row(i)) / n;
      }
    });
  }
  return out;
}

Tensor bcos_scale(const Tensor& s, const Tensor& n, Scalar b_exponent, bool frozen_scaling) {
  if (b_exponent < 1.0f) throw config_error("bcos_scale: exponent must be >= 1");
  const Eigen::Index positions = n.numel();
  if (positions == 0 || s.numel() % positions != 0) {
    throw dimension_error("bcos_scale: response count must be a multiple of norm count");
  }
  const Eigen::Index m = s.numel() / positions;
  const Vec& sv = s.values();
  const Vec& nv = n.values();
  Vec factors(sv.size());
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index p = 0; p < positions; ++p) {
      const Eigen::Index idx = i * positions + p;
      factors[idx] = bcos_alignment_factor(sv[idx], nv[p], b_exponent);
    }
  }
  Tensor out = make_tensor(s.shape(), sv.cwiseProduct(factors));
  check_finite(out, "bcos_scale");
  Rec r = probe({&s, &n});
  if (r.recording) {
    auto gs = grad_of(r, s);
    auto gn = frozen_scaling ? nullptr : grad_of(r, n);
    auto og = register_output(r, out);
    const Tensor nvt = n;
    const Tensor yv = out;
    auto fac = std::make_shared<Vec>(std::move(factors));
    r.tape->record({}, -1, [gs, gn, og, nvt, yv, fac, m, positions, b_exponent, frozen_scaling]() {
      const Scalar gain = frozen_scaling ? 1.0f : b_exponent;
      if (gs) *gs += og->cwiseProduct(*fac) * gain;
      if (gn && b_exponent != 1.0f) {
        const Vec& n2 = nvt.values();
        const Vec& y2 = yv.values();
        for (Eigen::Index p = 0; p < positions; ++p) {
          if (n2[p] <= 0.0f) continue;
          Scalar acc = 0.0f;
          for (Eigen::Index i = 0; i < m; ++i) {
            const Eigen::Index idx = i * positions + p;
            acc += (*og)[idx] * y2[idx];
          }
          (*gn)[p] -= (b_exponent - 1.0f) * acc / n2[p];
        }
      }
    });
  }
  return out;
}

Tensor class_sums(const Tensor& x, const std::vector<int>& group_sizes) {
  Eigen::Index total = 0;
  for (int g : group_sizes) {
    if (g <= 0) throw contract_error("class_sums: empty group");
    total += g;
  }
  if (total != x.numel()) throw dimension_error("class_sums: group sizes do not cover input");
  const Vec& v = x.values();
  Vec out_v(static_cast<Eigen::Index>(group_sizes.size()));
  Eigen::Index offset = 0;
  for (size_t c = 0; c < group_sizes.size(); ++c) {
    Scalar acc = 0.0f;
    for (int i = 0; i < group_sizes[c]; ++i) acc += v[offset + i];
    out_v[static_cast<Eigen::Index>(c)] = acc;
    offset += group_sizes[c];
  }
  Tensor out = make_tensor({static_cast<int>(group_sizes.size())}, std::move(out_v));
  check_finite(out, "class_sums");
  Rec r = probe({&x});
  if (r.recording) {
    auto gx = grad_of(r, x);
    auto og = register_output(r, out);
    const std::vector<int> sizes = group_sizes;
    r.tape->record({}, -1, [gx, og, sizes]() {
      Eigen::Index offset2 = 0;
      for (size_t c = 0; c < sizes.size(); ++c) {
        gx->segment(offset2, sizes[c]).array() += (*og)[static_cast<Eigen::Index>(c)];
        offset2 += sizes[c];
      }
    });
  }
  return out;
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  require_same_shape(logits, targets, "bce_with_logits");
  const Vec& mu = logits.values();
  const Vec& t = targets.values();
  const Eigen::Index c = mu.size();
  if (c == 0) throw dimension_error("bce_with_logits: empty logits");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < c; ++i) {
    if (t[i] != 0.0f && t[i] != 1.0f) {
      throw validation_error("bce_with_logits: targets must be exactly 0 or 1");
    }
    const double m = mu[i];
    acc += std::max(m, 0.0) - m * t[i] + std::log1p(std::exp(-std::fabs(m)));
  }
  Tensor out = make_tensor({1}, Vec::Constant(1, static_cast<Scalar>(acc / c)));
  check_finite(out, "bce_with_logits");
  Rec r = probe({&logits});
  if (r.recording) {
    auto gm = grad_of(r, logits);
    auto og = register_output(r, out);
    const Tensor mv = logits;
    const Tensor tv = targets;
    r.tape->record({}, -1, [gm, og, mv, tv, c]() {
      const Vec& mu2 = mv.values();
      const Vec& t2 = tv.values();
      const Scalar g = (*og)[0] / Scalar(c);
      for (Eigen::Index i = 0; i < c; ++i) {
        const Scalar sig = 1.0f / (1.0f + std::exp(-mu2[i]));
        (*gm)[i] += g * (sig - t2[i]);
      }
    });
  }
  return out;
}

void backward(const Tensor& output) {
  detail::TensorImpl* impl = output.impl();
  if (!impl || impl->tape == nullptr || impl->node < 0) {
    throw contract_error("backward: output was not produced under an active tape");
  }
  impl->tape->backward(output);
}

}  // namespace sic
