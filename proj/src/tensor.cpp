#include "warpcell/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace warpcell {

std::int64_t numel_of(const std::vector<int>& dims) {
  std::int64_t n = 1;
  for (int d : dims) {
    if (d <= 0) throw std::invalid_argument("tensor dims must be positive, got " + std::to_string(d));
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<int> d) : dims(std::move(d)), data(static_cast<std::size_t>(numel_of(dims)), 0.0) {}

Tensor Tensor::zeros(std::vector<int> dims) { return Tensor(std::move(dims)); }

Tensor Tensor::full(std::vector<int> dims, double value) {
  Tensor t(std::move(dims));
  std::fill(t.data.begin(), t.data.end(), value);
  return t;
}

Tensor Tensor::from_values(std::vector<int> dims, std::vector<double> values) {
  if (numel_of(dims) != static_cast<std::int64_t>(values.size())) {
    throw std::invalid_argument("from_values: value count does not match dims");
  }
  Tensor t;
  t.dims = std::move(dims);
  t.data = std::move(values);
  return t;
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << ", ";
    os << dims[i];
  }
  os << "]";
  return os.str();
}

bool all_finite(const Tensor& t) {
  for (double v : t.data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor zeros_like(const Tensor& t) { return Tensor::zeros(t.dims); }

static void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                                b.shape_string());
  }
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
  return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  Tensor out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.data[i];
  return out;
}

Tensor scaled(const Tensor& a, double s) {
  Tensor out = a;
  for (double& v : out.data) v *= s;
  return out;
}

void add_inplace(Tensor& dst, const Tensor& src) {
  require_same_shape(dst, src, "add_inplace");
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

void axpy(Tensor& y, double a, const Tensor& x) {
  require_same_shape(y, x, "axpy");
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += a * x.data[i];
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) acc += a.data[i] * b.data[i];
  return acc;
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.data) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

bool exactly_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    if (a.data[i] != b.data[i]) return false;
  }
  return true;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  return concat_channels(std::vector<const Tensor*>{&a, &b});
}

Tensor concat_channels(const std::vector<const Tensor*>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: empty input");
  const Tensor& first = *parts.front();
  if (first.rank() != 3) throw std::invalid_argument("concat_channels: expects rank-3 maps");
  int h = first.dims[0], w = first.dims[1];
  int c_total = 0;
  for (const Tensor* p : parts) {
    if (p->rank() != 3 || p->dims[0] != h || p->dims[1] != w) {
      throw std::invalid_argument("concat_channels: spatial dims mismatch");
    }
    c_total += p->dims[2];
  }
  Tensor out({h, w, c_total});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int c0 = 0;
      for (const Tensor* p : parts) {
        for (int c = 0; c < p->dims[2]; ++c) out.at(y, x, c0 + c) = p->at(y, x, c);
        c0 += p->dims[2];
      }
    }
  }
  return out;
}

Tensor channel_slice(const Tensor& t, int c_begin, int c_end) {
  if (t.rank() != 3) throw std::invalid_argument("channel_slice: expects rank-3 map");
  if (c_begin < 0 || c_end > t.dims[2] || c_begin >= c_end) {
    throw std::invalid_argument("channel_slice: bad channel range");
  }
  Tensor out({t.dims[0], t.dims[1], c_end - c_begin});
  for (int y = 0; y < t.dims[0]; ++y)
    for (int x = 0; x < t.dims[1]; ++x)
      for (int c = c_begin; c < c_end; ++c) out.at(y, x, c - c_begin) = t.at(y, x, c);
  return out;
}

// ---------------------------------------------------------------------------
// conv2d

static void check_conv_shapes(const Tensor& input, const Tensor& kernel, const Tensor* bias) {
  if (input.rank() != 3) {
    throw std::invalid_argument("conv2d: input must be [H, W, C], got " + input.shape_string());
  }
  if (kernel.rank() != 4) {
    throw std::invalid_argument("conv2d: kernel must be [kh, kw, c_in, c_out], got " +
                                kernel.shape_string());
  }
  if (input.dims[2] != kernel.dims[2]) {
    throw std::invalid_argument("conv2d: channel axis mismatch, input has " +
                                std::to_string(input.dims[2]) + " channels but kernel c_in is " +
                                std::to_string(kernel.dims[2]));
  }
  if (bias != nullptr) {
    if (bias->rank() != 1 || bias->dims[0] != kernel.dims[3]) {
      throw std::invalid_argument("conv2d: bias axis must equal kernel c_out (" +
                                  std::to_string(kernel.dims[3]) + "), got " + bias->shape_string());
    }
  }
}

// Eight output channels fill one hardware vector; the accumulators live in
// registers across the whole window walk. Per output channel the addition
// order is bias, then (kh, kw, c_in) — identical to the bounds-checked path.
#if defined(__GNUC__) || defined(__clang__)
#define WARPCELL_VEC8 1
namespace {

typedef double vd8 __attribute__((vector_size(64)));
typedef double vd8u __attribute__((vector_size(64), aligned(8), may_alias));

inline vd8 load8(const double* p) { return *reinterpret_cast<const vd8u*>(p); }

inline void store8(double* p, vd8 v) { *reinterpret_cast<vd8u*>(p) = v; }

void conv_interior_span8(double* __restrict out_px, const double* __restrict in_base,
                         const double* __restrict k_data, const double* __restrict bias, int n,
                         int kh, int kw, int cin, std::size_t row_stride) {
  const vd8 b = bias ? load8(bias) : vd8{};
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    vd8 a0 = b, a1 = b, a2 = b, a3 = b;
    const double* in0 = in_base + static_cast<std::size_t>(i) * cin;
    const double* k = k_data;
    for (int ky = 0; ky < kh; ++ky) {
      const double* in_row = in0 + ky * row_stride;
      for (int kx = 0; kx < kw; ++kx) {
        const double* ip = in_row + static_cast<std::size_t>(kx) * cin;
        for (int ci = 0; ci < cin; ++ci, k += 8) {
          const vd8 kv = load8(k);
          a0 += ip[ci] * kv;
          a1 += ip[cin + ci] * kv;
          a2 += ip[2 * cin + ci] * kv;
          a3 += ip[3 * cin + ci] * kv;
        }
      }
    }
    double* op = out_px + static_cast<std::size_t>(i) * 8;
    store8(op, a0);
    store8(op + 8, a1);
    store8(op + 16, a2);
    store8(op + 24, a3);
  }
  for (; i < n; ++i) {
    vd8 acc = b;
    const double* in0 = in_base + static_cast<std::size_t>(i) * cin;
    const double* k = k_data;
    for (int ky = 0; ky < kh; ++ky) {
      const double* in_row = in0 + ky * row_stride;
      for (int kx = 0; kx < kw; ++kx) {
        const double* ip = in_row + static_cast<std::size_t>(kx) * cin;
        for (int ci = 0; ci < cin; ++ci, k += 8) acc += ip[ci] * load8(k);
      }
    }
    store8(out_px + static_cast<std::size_t>(i) * 8, acc);
  }
}

}  // namespace
#endif

static Tensor conv2d_impl(const Tensor& input, const Tensor& kernel, const Tensor* bias,
                          Padding padding) {
  check_conv_shapes(input, kernel, bias);
  const int h = input.dims[0], w = input.dims[1], cin = input.dims[2];
  const int kh = kernel.dims[0], kw = kernel.dims[1], cout = kernel.dims[3];

  int oh, ow, pad_y, pad_x;
  if (padding == Padding::SameZero) {
    oh = h;
    ow = w;
    pad_y = (kh - 1) / 2;
    pad_x = (kw - 1) / 2;
  } else {
    oh = h - kh + 1;
    ow = w - kw + 1;
    pad_y = 0;
    pad_x = 0;
    if (oh < 1 || ow < 1) {
      throw std::invalid_argument("conv2d: valid padding with kernel " + kernel.shape_string() +
                                  " larger than input " + input.shape_string());
    }
  }

  // Per output channel the addition order is bias, then (kh, kw, c_in).
  // Rows of pixels whose windows lie fully inside the input go through the
  // register-accumulator span; borders and uncommon widths take the
  // bounds-checked path.
  Tensor out({oh, ow, cout});
  const std::size_t row_stride = static_cast<std::size_t>(w) * cin;
  const double* in_data = input.data.data();
  const double* k_data = kernel.data.data();
  const double* bias_data = bias ? bias->data.data() : nullptr;
#ifdef WARPCELL_VEC8
  const bool use_span8 = cout == 8;
#else
  const bool use_span8 = false;
#endif
  const int x_lo = pad_x;
  const int x_hi = std::min(w - kw + pad_x, ow - 1);

  const auto general_pixel = [&](int y, int x) {
    double* acc = &out.data[(static_cast<std::size_t>(y) * ow + x) * cout];
    if (bias_data) {
      for (int co = 0; co < cout; ++co) acc[co] = bias_data[co];
    }
    for (int ky = 0; ky < kh; ++ky) {
      const int sy = y + ky - pad_y;
      if (sy < 0 || sy >= h) continue;
      for (int kx = 0; kx < kw; ++kx) {
        const int sx = x + kx - pad_x;
        if (sx < 0 || sx >= w) continue;
        const double* in_px = &in_data[(static_cast<std::size_t>(sy) * w + sx) * cin];
        const double* k_px = &k_data[(static_cast<std::size_t>(ky) * kw + kx) * cin * cout];
        for (int ci = 0; ci < cin; ++ci) {
          const double v = in_px[ci];
          const double* k_row = k_px + static_cast<std::size_t>(ci) * cout;
          for (int co = 0; co < cout; ++co) acc[co] += v * k_row[co];
        }
      }
    }
  };

  for (int y = 0; y < oh; ++y) {
    const bool y_inside = y >= pad_y && y <= h - kh + pad_y;
    if (y_inside && use_span8 && x_lo <= x_hi) {
      for (int x = 0; x < x_lo; ++x) general_pixel(y, x);
#ifdef WARPCELL_VEC8
      conv_interior_span8(&out.data[(static_cast<std::size_t>(y) * ow + x_lo) * cout],
                          &in_data[(static_cast<std::size_t>(y - pad_y) * w + (x_lo - pad_x)) * cin],
                          k_data, bias_data, x_hi - x_lo + 1, kh, kw, cin, row_stride);
#endif
      for (int x = x_hi + 1; x < ow; ++x) general_pixel(y, x);
    } else {
      for (int x = 0; x < ow; ++x) general_pixel(y, x);
    }
  }
  return out;
}

Tensor conv2d(const Tensor& input, const ConvParams& params, Padding padding) {
  return conv2d_impl(input, params.kernel, &params.bias, padding);
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, Padding padding) {
  return conv2d_impl(input, kernel, nullptr, padding);
}

namespace {

// A run of output pixels with every window tap in bounds, four at a time.
// Kernel-gradient entries accumulate in ascending pixel order (one load/store
// per four contributions); input-gradient entries accumulate tap-major within
// a block — a fixed order, so results stay run-to-run deterministic.
template <bool HasGi, bool HasGk>
void conv_vjp_interior_span(const double* __restrict go_base, const double* __restrict in_base,
                            double* __restrict gi_base, const double* __restrict k_data,
                            double* __restrict gk_data, int n, int kh, int kw, int cin, int cout,
                            std::size_t row_stride) {
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    const double* g0 = go_base + static_cast<std::size_t>(i) * cout;
    const double* g1 = g0 + cout;
    const double* g2 = g1 + cout;
    const double* g3 = g2 + cout;
    const std::size_t base = static_cast<std::size_t>(i) * cin;
    const double* k = k_data;
    double* gk = gk_data;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const std::size_t tap = base + ky * row_stride + static_cast<std::size_t>(kx) * cin;
        const double* ip = in_base + tap;
        double* gp = HasGi ? gi_base + tap : nullptr;
        for (int ci = 0; ci < cin; ++ci) {
          if constexpr (HasGk) {
            const double v0 = ip[ci];
            const double v1 = ip[cin + ci];
            const double v2 = ip[2 * cin + ci];
            const double v3 = ip[3 * cin + ci];
            for (int co = 0; co < cout; ++co) {
              double t = gk[co];
              t += g0[co] * v0;
              t += g1[co] * v1;
              t += g2[co] * v2;
              t += g3[co] * v3;
              gk[co] = t;
            }
            gk += cout;
          }
          if constexpr (HasGi) {
            double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
            for (int co = 0; co < cout; ++co) {
              const double kv = k[co];
              a0 += g0[co] * kv;
              a1 += g1[co] * kv;
              a2 += g2[co] * kv;
              a3 += g3[co] * kv;
            }
            gp[ci] += a0;
            gp[cin + ci] += a1;
            gp[2 * cin + ci] += a2;
            gp[3 * cin + ci] += a3;
          }
          k += cout;
        }
      }
    }
  }
  for (; i < n; ++i) {
    const double* go_px = go_base + static_cast<std::size_t>(i) * cout;
    const double* k = k_data;
    double* gk = gk_data;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const std::size_t tap =
            static_cast<std::size_t>(i) * cin + ky * row_stride + static_cast<std::size_t>(kx) * cin;
        const double* ip = in_base + tap;
        double* gp = HasGi ? gi_base + tap : nullptr;
        for (int ci = 0; ci < cin; ++ci) {
          if constexpr (HasGk) {
            const double v = ip[ci];
            for (int co = 0; co < cout; ++co) gk[co] += go_px[co] * v;
            gk += cout;
          }
          if constexpr (HasGi) {
            double acc = 0.0;
            for (int co = 0; co < cout; ++co) acc += go_px[co] * k[co];
            gp[ci] += acc;
          }
          k += cout;
        }
      }
    }
  }
}

#ifdef WARPCELL_VEC8
// Eight-output-channel variant with vector accumulators. Kernel-gradient
// entries keep ascending pixel order. Input-gradient entries sum their eight
// per-tap products in ascending output-channel order against a transposed
// kernel copy, so every entry sees the same addition order as the
// bounds-checked path; that layout needs c_in == 8 as well.
template <bool HasGi, bool HasGk>
void conv_vjp_interior_span8(const double* __restrict go_base, const double* __restrict in_base,
                             double* __restrict gi_base, const double* __restrict k_tr,
                             double* __restrict gk_data, int n, int kh, int kw, int cin,
                             std::size_t row_stride) {
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    const double* g0 = go_base + static_cast<std::size_t>(i) * 8;
    const double* g1 = g0 + 8;
    const double* g2 = g1 + 8;
    const double* g3 = g2 + 8;
    const vd8 gv0 = load8(g0), gv1 = load8(g1), gv2 = load8(g2), gv3 = load8(g3);
    const std::size_t base = static_cast<std::size_t>(i) * cin;
    double* gk = gk_data;
    const double* kt = k_tr;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const std::size_t tap = base + ky * row_stride + static_cast<std::size_t>(kx) * cin;
        if constexpr (HasGk) {
          const double* ip = in_base + tap;
          for (int ci = 0; ci < cin; ++ci, gk += 8) {
            vd8 t = load8(gk);
            t += gv0 * ip[ci];
            t += gv1 * ip[cin + ci];
            t += gv2 * ip[2 * cin + ci];
            t += gv3 * ip[3 * cin + ci];
            store8(gk, t);
          }
        }
        if constexpr (HasGi) {
          double* gp = gi_base + tap;
          vd8 a0{}, a1{}, a2{}, a3{};
          for (int co = 0; co < 8; ++co, kt += 8) {
            const vd8 kci = load8(kt);
            a0 += g0[co] * kci;
            a1 += g1[co] * kci;
            a2 += g2[co] * kci;
            a3 += g3[co] * kci;
          }
          store8(gp, load8(gp) + a0);
          store8(gp + 8, load8(gp + 8) + a1);
          store8(gp + 16, load8(gp + 16) + a2);
          store8(gp + 24, load8(gp + 24) + a3);
        }
      }
    }
  }
  for (; i < n; ++i) {
    const double* go_px = go_base + static_cast<std::size_t>(i) * 8;
    const vd8 gv = load8(go_px);
    double* gk = gk_data;
    const double* kt = k_tr;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const std::size_t tap =
            static_cast<std::size_t>(i) * cin + ky * row_stride + static_cast<std::size_t>(kx) * cin;
        if constexpr (HasGk) {
          const double* ip = in_base + tap;
          for (int ci = 0; ci < cin; ++ci, gk += 8) {
            vd8 t = load8(gk);
            t += gv * ip[ci];
            store8(gk, t);
          }
        }
        if constexpr (HasGi) {
          double* gp = gi_base + tap;
          vd8 a0{};
          for (int co = 0; co < 8; ++co, kt += 8) a0 += go_px[co] * load8(kt);
          store8(gp, load8(gp) + a0);
        }
      }
    }
  }
}
#endif

}  // namespace

void conv2d_vjp_accumulate(const Tensor& input, const Tensor& kernel, Padding padding,
                           const Tensor& grad_out, Tensor* grad_input, Tensor* grad_kernel,
                           Tensor* grad_bias) {
  check_conv_shapes(input, kernel, nullptr);
  const int h = input.dims[0], w = input.dims[1], cin = input.dims[2];
  const int kh = kernel.dims[0], kw = kernel.dims[1], cout = kernel.dims[3];
  const int pad_y = (padding == Padding::SameZero) ? (kh - 1) / 2 : 0;
  const int pad_x = (padding == Padding::SameZero) ? (kw - 1) / 2 : 0;
  const int oh = (padding == Padding::SameZero) ? h : h - kh + 1;
  const int ow = (padding == Padding::SameZero) ? w : w - kw + 1;
  if (grad_out.rank() != 3 || grad_out.dims[0] != oh || grad_out.dims[1] != ow ||
      grad_out.dims[2] != cout) {
    throw std::invalid_argument("conv2d_vjp: grad_out shape " + grad_out.shape_string() +
                                " does not match output");
  }

  const std::size_t row_stride = static_cast<std::size_t>(w) * cin;
  const int x_lo = pad_x;
  const int x_hi = std::min(w - kw + pad_x, ow - 1);

#ifdef WARPCELL_VEC8
  const bool use_span8 = cout == 8 && (!grad_input || cin == 8);
  std::vector<double> k_tr;
  if (use_span8 && grad_input) {
    k_tr.resize(static_cast<std::size_t>(kh) * kw * 64);
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx)
        for (int ci = 0; ci < 8; ++ci)
          for (int co = 0; co < 8; ++co)
            k_tr[((static_cast<std::size_t>(ky) * kw + kx) * 8 + co) * 8 + ci] =
                kernel.data[((static_cast<std::size_t>(ky) * kw + kx) * 8 + ci) * 8 + co];
  }
#endif

  const auto general_pixel = [&](int y, int x) {
    const double* go_px = &grad_out.data[(static_cast<std::size_t>(y) * ow + x) * cout];
    for (int ky = 0; ky < kh; ++ky) {
      const int sy = y + ky - pad_y;
      if (sy < 0 || sy >= h) continue;
      for (int kx = 0; kx < kw; ++kx) {
        const int sx = x + kx - pad_x;
        if (sx < 0 || sx >= w) continue;
        const double* in_px = &input.data[(static_cast<std::size_t>(sy) * w + sx) * cin];
        double* gi_px =
            grad_input ? &grad_input->data[(static_cast<std::size_t>(sy) * w + sx) * cin] : nullptr;
        for (int ci = 0; ci < cin; ++ci) {
          const std::size_t kbase = ((static_cast<std::size_t>(ky) * kw + kx) * cin + ci) * cout;
          const double* k_px = &kernel.data[kbase];
          double* gk_px = grad_kernel ? &grad_kernel->data[kbase] : nullptr;
          double gi_acc = 0.0;
          for (int co = 0; co < cout; ++co) {
            const double go = go_px[co];
            gi_acc += go * k_px[co];
            if (gk_px) gk_px[co] += go * in_px[ci];
          }
          if (gi_px) gi_px[ci] += gi_acc;
        }
      }
    }
  };

  for (int y = 0; y < oh; ++y) {
    if (grad_bias) {
      const double* go_row = &grad_out.data[static_cast<std::size_t>(y) * ow * cout];
      for (int x = 0; x < ow; ++x)
        for (int co = 0; co < cout; ++co) grad_bias->data[co] += go_row[static_cast<std::size_t>(x) * cout + co];
    }
    const bool y_inside = y >= pad_y && y <= h - kh + pad_y;
    if (y_inside && x_lo <= x_hi && (grad_input || grad_kernel)) {
      for (int x = 0; x < x_lo; ++x) general_pixel(y, x);
      const double* go_base = &grad_out.data[(static_cast<std::size_t>(y) * ow + x_lo) * cout];
      const std::size_t base = (static_cast<std::size_t>(y - pad_y) * w + (x_lo - pad_x)) * cin;
      const double* in_base = &input.data[base];
      double* gi_base = grad_input ? &grad_input->data[base] : nullptr;
      double* gk_data = grad_kernel ? grad_kernel->data.data() : nullptr;
      const int n = x_hi - x_lo + 1;
#ifdef WARPCELL_VEC8
      if (use_span8) {
        if (grad_input && grad_kernel) {
          conv_vjp_interior_span8<true, true>(go_base, in_base, gi_base, k_tr.data(), gk_data, n,
                                              kh, kw, cin, row_stride);
        } else if (grad_input) {
          conv_vjp_interior_span8<true, false>(go_base, in_base, gi_base, k_tr.data(), nullptr, n,
                                               kh, kw, cin, row_stride);
        } else {
          conv_vjp_interior_span8<false, true>(go_base, in_base, nullptr, nullptr, gk_data, n, kh,
                                               kw, cin, row_stride);
        }
      } else
#endif
      if (grad_input && grad_kernel) {
        conv_vjp_interior_span<true, true>(go_base, in_base, gi_base, kernel.data.data(), gk_data,
                                           n, kh, kw, cin, cout, row_stride);
      } else if (grad_input) {
        conv_vjp_interior_span<true, false>(go_base, in_base, gi_base, kernel.data.data(), nullptr,
                                            n, kh, kw, cin, cout, row_stride);
      } else {
        conv_vjp_interior_span<false, true>(go_base, in_base, nullptr, kernel.data.data(), gk_data,
                                            n, kh, kw, cin, cout, row_stride);
      }
      for (int x = x_hi + 1; x < ow; ++x) general_pixel(y, x);
    } else {
      for (int x = 0; x < ow; ++x) general_pixel(y, x);
    }
  }
}

Conv2dGrads conv2d_vjp(const Tensor& input, const ConvParams& params, Padding padding,
                       const Tensor& grad_out) {
  Conv2dGrads g;
  g.input = zeros_like(input);
  g.kernel = zeros_like(params.kernel);
  g.bias = zeros_like(params.bias);
  conv2d_vjp_accumulate(input, params.kernel, padding, grad_out, &g.input, &g.kernel, &g.bias);
  return g;
}

// ---------------------------------------------------------------------------
// activations

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Tensor activation(const Tensor& x, Activ kind) {
  Tensor out = x;
  if (kind == Activ::Sigmoid) {
    for (double& v : out.data) v = sigmoid(v);
  } else {
    for (double& v : out.data) v = std::tanh(v);
  }
  return out;
}

Tensor activation_vjp(const Tensor& y, Activ kind, const Tensor& grad_out) {
  require_same_shape(y, grad_out, "activation_vjp");
  Tensor g = grad_out;
  if (kind == Activ::Sigmoid) {
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] *= y.data[i] * (1.0 - y.data[i]);
  } else {
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] *= 1.0 - y.data[i] * y.data[i];
  }
  return g;
}

// ---------------------------------------------------------------------------
// bilinear sampling

Tensor bilinear_sample(const Tensor& map, const std::vector<std::array<double, 2>>& coords) {
  if (map.rank() != 3) throw std::invalid_argument("bilinear_sample: map must be [H, W, C]");
  const int h = map.dims[0], w = map.dims[1], c = map.dims[2];
  Tensor out({static_cast<int>(coords.size() > 0 ? coords.size() : 1), c});
  if (coords.empty()) {
    out.dims[0] = 0;
    out.data.clear();
    return out;
  }

  auto pixel = [&](int y, int x, int ch) -> double {
    if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
    return map.at(y, x, ch);
  };

  for (std::size_t i = 0; i < coords.size(); ++i) {
    const double y = coords[i][0], x = coords[i][1];
    const double fy = std::floor(y), fx = std::floor(x);
    const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
    const double wy = y - fy, wx = x - fx;
    for (int ch = 0; ch < c; ++ch) {
      const double v = (1.0 - wy) * (1.0 - wx) * pixel(y0, x0, ch) +
                       (1.0 - wy) * wx * pixel(y0, x0 + 1, ch) +
                       wy * (1.0 - wx) * pixel(y0 + 1, x0, ch) +
                       wy * wx * pixel(y0 + 1, x0 + 1, ch);
      out.at(static_cast<int>(i), ch) = v;
    }
  }
  return out;
}

void bilinear_sample_vjp_accumulate(const Tensor& map,
                                    const std::vector<std::array<double, 2>>& coords,
                                    const Tensor& grad_out, Tensor* grad_map,
                                    std::vector<std::array<double, 2>>* grad_coords) {
  const int h = map.dims[0], w = map.dims[1], c = map.dims[2];
  if (grad_out.rank() != 2 || grad_out.dims[0] != static_cast<int>(coords.size()) ||
      grad_out.dims[1] != c) {
    throw std::invalid_argument("bilinear_sample_vjp: grad_out must be [len(coords), C]");
  }
  auto in_bounds = [&](int y, int x) { return y >= 0 && y < h && x >= 0 && x < w; };
  auto pixel = [&](int y, int x, int ch) -> double { return in_bounds(y, x) ? map.at(y, x, ch) : 0.0; };

  for (std::size_t i = 0; i < coords.size(); ++i) {
    const double y = coords[i][0], x = coords[i][1];
    const double fy = std::floor(y), fx = std::floor(x);
    const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
    const double wy = y - fy, wx = x - fx;
    double gy = 0.0, gx = 0.0;
    for (int ch = 0; ch < c; ++ch) {
      const double go = grad_out.at(static_cast<int>(i), ch);
      if (go == 0.0) continue;
      const double v00 = pixel(y0, x0, ch), v01 = pixel(y0, x0 + 1, ch);
      const double v10 = pixel(y0 + 1, x0, ch), v11 = pixel(y0 + 1, x0 + 1, ch);
      if (grad_map) {
        if (in_bounds(y0, x0)) grad_map->at(y0, x0, ch) += go * (1.0 - wy) * (1.0 - wx);
        if (in_bounds(y0, x0 + 1)) grad_map->at(y0, x0 + 1, ch) += go * (1.0 - wy) * wx;
        if (in_bounds(y0 + 1, x0)) grad_map->at(y0 + 1, x0, ch) += go * wy * (1.0 - wx);
        if (in_bounds(y0 + 1, x0 + 1)) grad_map->at(y0 + 1, x0 + 1, ch) += go * wy * wx;
      }
      gy += go * (-(1.0 - wx) * v00 - wx * v01 + (1.0 - wx) * v10 + wx * v11);
      gx += go * (-(1.0 - wy) * v00 + (1.0 - wy) * v01 - wy * v10 + wy * v11);
    }
    if (grad_coords) {
      (*grad_coords)[i][0] += gy;
      (*grad_coords)[i][1] += gx;
    }
  }
}

BilinearGrads bilinear_sample_vjp(const Tensor& map,
                                  const std::vector<std::array<double, 2>>& coords,
                                  const Tensor& grad_out) {
  BilinearGrads g;
  g.map = zeros_like(map);
  g.coords.assign(coords.size(), {0.0, 0.0});
  bilinear_sample_vjp_accumulate(map, coords, grad_out, &g.map, &g.coords);
  return g;
}

}  // namespace warpcell
