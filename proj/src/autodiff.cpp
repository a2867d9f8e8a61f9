#include "menet/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>

namespace menet {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

const char* elementwise_name(Elementwise kind) {
  switch (kind) {
    case Elementwise::kAdd: return "add";
    case Elementwise::kSub: return "sub";
    case Elementwise::kMul: return "mul";
    case Elementwise::kDiv: return "div";
  }
  return "?";
}

template <typename T>
void require_same_tape(Var<T> a, Var<T> b, const char* op) {
  if (a.tape != b.tape || a.tape == nullptr) {
    throw ShapeError(std::string(op) + ": operands live on different tapes");
  }
}

template <typename T>
void require_rank(const BasicTensor<T>& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     " input, got " + shape_to_string(x.shape()));
  }
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

// Rows (c, ky, kx), columns (oy, ox); out-of-image taps read zero.
template <typename T>
void im2col(const T* x, std::size_t cin, std::size_t h, std::size_t w,
            std::size_t kh, std::size_t kw, std::size_t pad, std::size_t ho,
            std::size_t wo, T* col) {
  const auto sh = static_cast<std::ptrdiff_t>(h);
  const auto sw = static_cast<std::ptrdiff_t>(w);
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        T* row = col + ((c * kh + ky) * kw + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy + ky) -
                          static_cast<std::ptrdiff_t>(pad);
          T* dst = row + oy * wo;
          if (iy < 0 || iy >= sh) {
            std::fill(dst, dst + wo, T{0});
            continue;
          }
          const T* src = x + (c * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox + kx) -
                            static_cast<std::ptrdiff_t>(pad);
            dst[ox] = (ix < 0 || ix >= sw) ? T{0} : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, std::size_t cin, std::size_t h, std::size_t w,
                std::size_t kh, std::size_t kw, std::size_t pad, std::size_t ho,
                std::size_t wo, T* x) {
  const auto sh = static_cast<std::ptrdiff_t>(h);
  const auto sw = static_cast<std::ptrdiff_t>(w);
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const T* row = col + ((c * kh + ky) * kw + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy + ky) -
                          static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= sh) continue;
          T* dst = x + (c * h + static_cast<std::size_t>(iy)) * w;
          const T* src = row + oy * wo;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox + kx) -
                            static_cast<std::ptrdiff_t>(pad);
            if (ix >= 0 && ix < sw) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
BasicTensor<T> unfold_tensor(const BasicTensor<T>& x, std::size_t k) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ph = h / k, pw = w / k, rows = c * k * k, m = ph * pw;
  BasicTensor<T> out(Shape{n, rows, m});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::size_t row = (ci * k + ky) * k + kx;
          for (std::size_t py = 0; py < ph; ++py)
            for (std::size_t px = 0; px < pw; ++px)
              out[(b * rows + row) * m + py * pw + px] =
                  x.at(b, ci, py * k + ky, px * k + kx);
        }
  return out;
}

template <typename T>
BasicTensor<T> fold_tensor(const BasicTensor<T>& f, const Shape& image_shape,
                           std::size_t k) {
  const std::size_t n = image_shape[0], c = image_shape[1], w = image_shape[3];
  const std::size_t ph = image_shape[2] / k, pw = w / k, rows = c * k * k,
                    m = ph * pw;
  BasicTensor<T> out(image_shape);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::size_t row = (ci * k + ky) * k + kx;
          for (std::size_t py = 0; py < ph; ++py)
            for (std::size_t px = 0; px < pw; ++px)
              out.at(b, ci, py * k + ky, px * k + kx) =
                  f[(b * rows + row) * m + py * pw + px];
        }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tape

template <typename T>
Tape<T>::Tape()
#ifdef NDEBUG
    : check_finite_(false) {
}
#else
    : check_finite_(true) {
}
#endif

template <typename T>
Var<T> Tape<T>::leaf(BasicTensor<T> value, bool requires_grad) {
  if (value.empty()) throw ShapeError("tape leaf must be a non-empty tensor");
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::record(BasicTensor<T> value, std::vector<std::size_t> inputs,
                       BackwardFn backward, const char* op_name) {
  if (check_finite_ && !value.all_finite()) {
    throw NumericError(std::string(op_name) + " produced non-finite values");
  }
  Node node;
  node.value = std::move(value);
  node.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                   [this](std::size_t i) {
                                     return nodes_.at(i).requires_grad;
                                   });
  if (node.requires_grad) node.backward = std::move(backward);
  node.inputs = std::move(inputs);
  nodes_.push_back(std::move(node));
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
void Tape<T>::accumulate(std::size_t id, BasicTensor<T> g) {
  Node& node = nodes_.at(id);
  if (!node.requires_grad) return;
  if (!node.has_grad) {
    node.grad = std::move(g);
    node.has_grad = true;
    return;
  }
  T* dst = node.grad.raw();
  const T* src = g.raw();
  for (std::size_t i = 0, n = g.numel(); i < n; ++i) dst[i] += src[i];
}

template <typename T>
BasicTensor<T>& Tape<T>::grad_buffer(std::size_t id) {
  Node& node = nodes_.at(id);
  if (!node.has_grad) {
    if (node.grad.shape() == node.value.shape()) {
      node.grad.fill(T{0});
    } else {
      node.grad = BasicTensor<T>(node.value.shape());
    }
    node.has_grad = true;
  }
  return node.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> root, std::size_t stop_below) {
  if (root.tape != this || root.id >= nodes_.size()) {
    throw ShapeError("backward: root is not a node of this tape");
  }
  const Node& r = nodes_[root.id];
  if (r.value.numel() != 1) {
    throw ShapeError("backward: root must be scalar, got shape " +
                     shape_to_string(r.value.shape()));
  }
  if (!r.requires_grad) {
    throw ShapeError("backward: root is detached (depends on no requires_grad input)");
  }
  for (Node& node : nodes_) node.has_grad = false;
  grad_buffer(root.id).fill(T{1});
  for (std::size_t i = root.id + 1; i-- > stop_below;) {
    Node& node = nodes_[i];
    if (node.has_grad && node.backward) node.backward(*this, node.grad);
  }
}

template <typename T>
BasicTensor<T> Tape<T>::grad(Var<T> v) const {
  const Node& node = nodes_.at(v.id);
  if (node.has_grad) return node.grad;
  return BasicTensor<T>(node.value.shape());
}

template <typename T>
std::size_t Tape<T>::first_consumer(std::size_t id) const {
  for (std::size_t i = id + 1; i < nodes_.size(); ++i) {
    const auto& in = nodes_[i].inputs;
    if (std::find(in.begin(), in.end(), id) != in.end()) return i;
  }
  return nodes_.size();
}

template <typename T>
bool Tape<T>::has_grad(Var<T> v) const {
  return nodes_.at(v.id).has_grad;
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> elementwise(Var<T> a, Var<T> b, Elementwise kind) {
  require_same_tape(a, b, elementwise_name(kind));
  Tape<T>& tape = *a.tape;
  const BasicTensor<T>& av = a.value();
  const BasicTensor<T>& bv = b.value();
  if (av.shape() != bv.shape()) {
    throw ShapeError(std::string(elementwise_name(kind)) + ": shape mismatch " +
                     shape_to_string(av.shape()) + " vs " +
                     shape_to_string(bv.shape()));
  }
  const std::size_t n = av.numel();
  BasicTensor<T> out(av.shape());
  switch (kind) {
    case Elementwise::kAdd:
      for (std::size_t i = 0; i < n; ++i) out[i] = av[i] + bv[i];
      break;
    case Elementwise::kSub:
      for (std::size_t i = 0; i < n; ++i) out[i] = av[i] - bv[i];
      break;
    case Elementwise::kMul:
      for (std::size_t i = 0; i < n; ++i) out[i] = av[i] * bv[i];
      break;
    case Elementwise::kDiv:
      if (tape.check_finite() &&
          std::any_of(bv.data().begin(), bv.data().end(),
                      [](T v) { return v == T{0}; })) {
        throw NumericError("div: exact zero divisor");
      }
      for (std::size_t i = 0; i < n; ++i) out[i] = av[i] / bv[i];
      break;
  }
  const std::size_t ai = a.id, bi = b.id;
  return tape.record(
      std::move(out), {ai, bi},
      [ai, bi, kind](Tape<T>& t, const BasicTensor<T>& g) {
        const std::size_t count = g.numel();
        const bool need_a = t.requires_grad(ai), need_b = t.requires_grad(bi);
        switch (kind) {
          case Elementwise::kAdd:
            if (need_a) t.accumulate(ai, g);
            if (need_b) t.accumulate(bi, g);
            break;
          case Elementwise::kSub:
            if (need_a) t.accumulate(ai, g);
            if (need_b) {
              BasicTensor<T> gb(g.shape());
              for (std::size_t i = 0; i < count; ++i) gb[i] = -g[i];
              t.accumulate(bi, std::move(gb));
            }
            break;
          case Elementwise::kMul: {
            const auto& x = t.value(ai);
            const auto& y = t.value(bi);
            if (need_a) {
              BasicTensor<T> ga(g.shape());
              for (std::size_t i = 0; i < count; ++i) ga[i] = g[i] * y[i];
              t.accumulate(ai, std::move(ga));
            }
            if (need_b) {
              BasicTensor<T> gb(g.shape());
              for (std::size_t i = 0; i < count; ++i) gb[i] = g[i] * x[i];
              t.accumulate(bi, std::move(gb));
            }
            break;
          }
          case Elementwise::kDiv: {
            const auto& x = t.value(ai);
            const auto& y = t.value(bi);
            if (need_a) {
              BasicTensor<T> ga(g.shape());
              for (std::size_t i = 0; i < count; ++i) ga[i] = g[i] / y[i];
              t.accumulate(ai, std::move(ga));
            }
            if (need_b) {
              BasicTensor<T> gb(g.shape());
              for (std::size_t i = 0; i < count; ++i)
                gb[i] = -g[i] * x[i] / (y[i] * y[i]);
              t.accumulate(bi, std::move(gb));
            }
            break;
          }
        }
      },
      elementwise_name(kind));
}

template <typename T>
Var<T> elementwise(Var<T> a, std::type_identity_t<T> b, Elementwise kind) {
  Tape<T>& tape = *a.tape;
  if (kind == Elementwise::kDiv && b == T{0} && tape.check_finite()) {
    throw NumericError("div: exact zero divisor");
  }
  const BasicTensor<T>& av = a.value();
  BasicTensor<T> out(av.shape());
  const std::size_t n = av.numel();
  for (std::size_t i = 0; i < n; ++i) {
    switch (kind) {
      case Elementwise::kAdd: out[i] = av[i] + b; break;
      case Elementwise::kSub: out[i] = av[i] - b; break;
      case Elementwise::kMul: out[i] = av[i] * b; break;
      case Elementwise::kDiv: out[i] = av[i] / b; break;
    }
  }
  const std::size_t ai = a.id;
  return tape.record(
      std::move(out), {ai},
      [ai, b, kind](Tape<T>& t, const BasicTensor<T>& g) {
        if (kind == Elementwise::kAdd || kind == Elementwise::kSub) {
          t.accumulate(ai, g);
          return;
        }
        BasicTensor<T> ga(g.shape());
        for (std::size_t i = 0, n = g.numel(); i < n; ++i) {
          ga[i] = kind == Elementwise::kMul ? g[i] * b : g[i] / b;
        }
        t.accumulate(ai, std::move(ga));
      },
      elementwise_name(kind));
}

// ---------------------------------------------------------------------------
// conv2d

template <typename T>
Var<T> conv2d(Var<T> input, Var<T> kernel, std::optional<Var<T>> bias,
              std::size_t padding) {
  require_same_tape(input, kernel, "conv2d");
  if (bias) require_same_tape(input, *bias, "conv2d");
  Tape<T>& tape = *input.tape;
  const BasicTensor<T>& x = input.value();
  const BasicTensor<T>& k = kernel.value();
  require_rank(x, 4, "conv2d input");
  require_rank(k, 4, "conv2d kernel");
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  if (k.dim(1) != cin) {
    throw ShapeError("conv2d: input has " + std::to_string(cin) +
                     " channels but kernel " + shape_to_string(k.shape()) +
                     " expects " + std::to_string(k.dim(1)));
  }
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw ShapeError("conv2d: kernel extents must be odd, got " +
                     shape_to_string(k.shape()));
  }
  const auto ho_signed = static_cast<std::ptrdiff_t>(h + 2 * padding) -
                         static_cast<std::ptrdiff_t>(kh) + 1;
  const auto wo_signed = static_cast<std::ptrdiff_t>(w + 2 * padding) -
                         static_cast<std::ptrdiff_t>(kw) + 1;
  if (ho_signed < 1 || wo_signed < 1) {
    throw ShapeError("conv2d: non-positive output extent for input " +
                     shape_to_string(x.shape()) + ", kernel " +
                     shape_to_string(k.shape()) + ", padding " +
                     std::to_string(padding));
  }
  if (bias && bias->value().shape() != Shape{cout}) {
    throw ShapeError("conv2d: bias shape " +
                     shape_to_string(bias->value().shape()) + " != [" +
                     std::to_string(cout) + "]");
  }
  const auto ho = static_cast<std::size_t>(ho_signed);
  const auto wo = static_cast<std::size_t>(wo_signed);
  const std::size_t patch = cin * kh * kw, pixels = ho * wo;
  // A 1x1 unpadded conv reads the input plane directly as its column matrix.
  const bool direct = kh == 1 && kw == 1 && padding == 0;

  BasicTensor<T> out(Shape{n, cout, ho, wo});
  std::vector<T> col(direct ? 0 : patch * pixels);
  ConstMapMat<T> kmat(k.raw(), static_cast<Eigen::Index>(cout),
                      static_cast<Eigen::Index>(patch));
  for (std::size_t b = 0; b < n; ++b) {
    const T* xb = x.raw() + b * cin * h * w;
    const T* colp = xb;
    if (!direct) {
      im2col(xb, cin, h, w, kh, kw, padding, ho, wo, col.data());
      colp = col.data();
    }
    ConstMapMat<T> cmat(colp, static_cast<Eigen::Index>(patch),
                        static_cast<Eigen::Index>(pixels));
    MapMat<T> omat(out.raw() + b * cout * pixels, static_cast<Eigen::Index>(cout),
                   static_cast<Eigen::Index>(pixels));
    omat.noalias() = kmat * cmat;
    if (bias) {
      const BasicTensor<T>& bv = bias->value();
      for (std::size_t c = 0; c < cout; ++c) {
        omat.row(static_cast<Eigen::Index>(c)).array() += bv[c];
      }
    }
  }

  const std::size_t xi = input.id, ki = kernel.id;
  const std::optional<std::size_t> bi =
      bias ? std::optional<std::size_t>(bias->id) : std::nullopt;
  std::vector<std::size_t> inputs{xi, ki};
  if (bi) inputs.push_back(*bi);
  return tape.record(
      std::move(out), std::move(inputs),
      [=](Tape<T>& t, const BasicTensor<T>& g) {
        const BasicTensor<T>& xv = t.value(xi);
        const BasicTensor<T>& kv = t.value(ki);
        const bool need_x = t.requires_grad(xi), need_k = t.requires_grad(ki);
        const bool need_b = bi && t.requires_grad(*bi);
        const auto P = static_cast<Eigen::Index>(patch);
        const auto Q = static_cast<Eigen::Index>(pixels);
        const auto C = static_cast<Eigen::Index>(cout);
        if (need_k) {
          BasicTensor<T>& dk = t.grad_buffer(ki);
          MapMat<T> dkmat(dk.raw(), C, P);
          std::vector<T> buf(direct ? 0 : patch * pixels);
          for (std::size_t b = 0; b < n; ++b) {
            const T* xb = xv.raw() + b * cin * h * w;
            const T* colp = xb;
            if (!direct) {
              im2col(xb, cin, h, w, kh, kw, padding, ho, wo, buf.data());
              colp = buf.data();
            }
            ConstMapMat<T> cmat(colp, P, Q);
            ConstMapMat<T> gmat(g.raw() + b * cout * pixels, C, Q);
            dkmat.noalias() += gmat * cmat.transpose();
          }
        }
        if (need_b) {
          BasicTensor<T>& db = t.grad_buffer(*bi);
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t c = 0; c < cout; ++c) {
              const T* gp = g.raw() + (b * cout + c) * pixels;
              T acc{0};
              for (std::size_t i = 0; i < pixels; ++i) acc += gp[i];
              db[c] += acc;
            }
        }
        if (need_x) {
          BasicTensor<T>& dx = t.grad_buffer(xi);
          ConstMapMat<T> kmat2(kv.raw(), C, P);
          RowMat<T> dcol(P, Q);
          for (std::size_t b = 0; b < n; ++b) {
            ConstMapMat<T> gmat(g.raw() + b * cout * pixels, C, Q);
            dcol.noalias() = kmat2.transpose() * gmat;
            T* dxb = dx.raw() + b * cin * h * w;
            if (direct) {
              const T* src = dcol.data();
              for (std::size_t i = 0; i < patch * pixels; ++i) dxb[i] += src[i];
            } else {
              col2im_add(dcol.data(), cin, h, w, kh, kw, padding, ho, wo, dxb);
            }
          }
        }
      },
      "conv2d");
}

// ---------------------------------------------------------------------------
// Activations

template <typename T>
Var<T> activation(Var<T> x, Activation kind) {
  Tape<T>& tape = *x.tape;
  const BasicTensor<T>& xv = x.value();
  BasicTensor<T> out(xv.shape());
  const std::size_t n = xv.numel();
  if (kind == Activation::kRelu) {
    T margin = std::numeric_limits<T>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = xv[i] > T{0} ? xv[i] : T{0};
      margin = std::min(margin, std::abs(xv[i]));
    }
    tape.note_relu_margin(margin);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = stable_sigmoid(xv[i]);
  }
  const std::size_t xi = x.id;
  return tape.record(
      std::move(out), {xi},
      [xi, kind](Tape<T>& t, const BasicTensor<T>& g) {
        const BasicTensor<T>& v = t.value(xi);
        BasicTensor<T> gx(g.shape());
        for (std::size_t i = 0, n = g.numel(); i < n; ++i) {
          if (kind == Activation::kRelu) {
            gx[i] = v[i] > T{0} ? g[i] : T{0};
          } else {
            const T s = stable_sigmoid(v[i]);
            gx[i] = g[i] * s * (T{1} - s);
          }
        }
        t.accumulate(xi, std::move(gx));
      },
      kind == Activation::kRelu ? "relu" : "sigmoid");
}

// ---------------------------------------------------------------------------
// Desubpixel / subpixel

template <typename T>
BasicTensor<T> desubpixel_tensor(const BasicTensor<T>& x, std::size_t r) {
  require_rank(x, 4, "desubpixel");
  if (r == 0) throw ShapeError("desubpixel: ratio must be >= 1");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % r != 0 || w % r != 0) {
    throw ShapeError("desubpixel: H and W must be divisible by r=" +
                     std::to_string(r) + ", got " + shape_to_string(x.shape()));
  }
  const std::size_t oh = h / r, ow = w / r;
  BasicTensor<T> out(Shape{n, c * r * r, oh, ow});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t dy = 0; dy < r; ++dy)
        for (std::size_t dx = 0; dx < r; ++dx) {
          const std::size_t co = ci * r * r + dy * r + dx;
          for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j)
              out.at(b, co, i, j) = x.at(b, ci, i * r + dy, j * r + dx);
        }
  return out;
}

template <typename T>
BasicTensor<T> subpixel_tensor(const BasicTensor<T>& x, std::size_t r) {
  require_rank(x, 4, "subpixel");
  if (r == 0) throw ShapeError("subpixel: ratio must be >= 1");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (c % (r * r) != 0) {
    throw ShapeError("subpixel: channel count must be divisible by r*r=" +
                     std::to_string(r * r) + ", got " +
                     shape_to_string(x.shape()));
  }
  const std::size_t oc = c / (r * r);
  BasicTensor<T> out(Shape{n, oc, h * r, w * r});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t co = 0; co < oc; ++co)
      for (std::size_t dy = 0; dy < r; ++dy)
        for (std::size_t dx = 0; dx < r; ++dx) {
          const std::size_t ci = co * r * r + dy * r + dx;
          for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j)
              out.at(b, co, i * r + dy, j * r + dx) = x.at(b, ci, i, j);
        }
  return out;
}

template <typename T>
Var<T> desubpixel(Var<T> x, std::size_t ratio) {
  const std::size_t xi = x.id;
  return x.tape->record(
      desubpixel_tensor(x.value(), ratio), {xi},
      [xi, ratio](Tape<T>& t, const BasicTensor<T>& g) {
        t.accumulate(xi, subpixel_tensor(g, ratio));
      },
      "desubpixel");
}

template <typename T>
Var<T> subpixel(Var<T> x, std::size_t ratio) {
  const std::size_t xi = x.id;
  return x.tape->record(
      subpixel_tensor(x.value(), ratio), {xi},
      [xi, ratio](Tape<T>& t, const BasicTensor<T>& g) {
        t.accumulate(xi, desubpixel_tensor(g, ratio));
      },
      "subpixel");
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var<T> reduce(Var<T> x, Reduction kind) {
  Tape<T>& tape = *x.tape;
  const BasicTensor<T>& xv = x.value();
  const std::size_t count = xv.numel();
  const std::size_t xi = x.id;
  switch (kind) {
    case Reduction::kSum:
    case Reduction::kMean:
    case Reduction::kFrobeniusSq: {
      double acc = 0.0;
      for (std::size_t i = 0; i < count; ++i) {
        const double v = static_cast<double>(xv[i]);
        acc += kind == Reduction::kFrobeniusSq ? v * v : v;
      }
      if (kind == Reduction::kMean) acc /= static_cast<double>(count);
      const char* name = kind == Reduction::kSum    ? "sum"
                         : kind == Reduction::kMean ? "mean"
                                                    : "frobenius_sq";
      return tape.record(
          BasicTensor<T>::scalar(static_cast<T>(acc)), {xi},
          [xi, kind, count](Tape<T>& t, const BasicTensor<T>& g) {
            const BasicTensor<T>& v = t.value(xi);
            BasicTensor<T> gx(v.shape());
            const T seed = g[0];
            if (kind == Reduction::kFrobeniusSq) {
              for (std::size_t i = 0; i < count; ++i) gx[i] = T{2} * v[i] * seed;
            } else {
              const T each =
                  kind == Reduction::kMean ? seed / static_cast<T>(count) : seed;
              gx.fill(each);
            }
            t.accumulate(xi, std::move(gx));
          },
          name);
    }
    case Reduction::kGlobalAvgPool: {
      require_rank(xv, 4, "global_avg_pool");
      const std::size_t n = xv.dim(0), c = xv.dim(1),
                        plane = xv.dim(2) * xv.dim(3);
      BasicTensor<T> out(Shape{n, c, 1, 1});
      for (std::size_t i = 0; i < n * c; ++i) {
        double acc = 0.0;
        const T* p = xv.raw() + i * plane;
        for (std::size_t j = 0; j < plane; ++j) acc += static_cast<double>(p[j]);
        out[i] = static_cast<T>(acc / static_cast<double>(plane));
      }
      return tape.record(
          std::move(out), {xi},
          [xi, n, c, plane](Tape<T>& t, const BasicTensor<T>& g) {
            BasicTensor<T> gx(t.value(xi).shape());
            for (std::size_t i = 0; i < n * c; ++i) {
              const T each = g[i] / static_cast<T>(plane);
              std::fill(gx.raw() + i * plane, gx.raw() + (i + 1) * plane, each);
            }
            t.accumulate(xi, std::move(gx));
          },
          "global_avg_pool");
    }
  }
  throw ShapeError("reduce: unknown kind");
}

// ---------------------------------------------------------------------------
// Matrix ops

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  require_same_tape(a, b, "matmul");
  const BasicTensor<T>& av = a.value();
  const BasicTensor<T>& bv = b.value();
  require_rank(av, 2, "matmul lhs");
  require_rank(bv, 2, "matmul rhs");
  if (av.dim(1) != bv.dim(0)) {
    throw ShapeError("matmul: inner extents differ, " +
                     shape_to_string(av.shape()) + " x " +
                     shape_to_string(bv.shape()));
  }
  const auto m = static_cast<Eigen::Index>(av.dim(0));
  const auto k = static_cast<Eigen::Index>(av.dim(1));
  const auto n = static_cast<Eigen::Index>(bv.dim(1));
  BasicTensor<T> out(Shape{av.dim(0), bv.dim(1)});
  MapMat<T>(out.raw(), m, n).noalias() =
      ConstMapMat<T>(av.raw(), m, k) * ConstMapMat<T>(bv.raw(), k, n);
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(
      std::move(out), {ai, bi},
      [ai, bi, m, k, n](Tape<T>& t, const BasicTensor<T>& g) {
        ConstMapMat<T> gm(g.raw(), m, n);
        if (t.requires_grad(ai)) {
          BasicTensor<T> ga(t.value(ai).shape());
          MapMat<T>(ga.raw(), m, k).noalias() =
              gm * ConstMapMat<T>(t.value(bi).raw(), k, n).transpose();
          t.accumulate(ai, std::move(ga));
        }
        if (t.requires_grad(bi)) {
          BasicTensor<T> gb(t.value(bi).shape());
          MapMat<T>(gb.raw(), k, n).noalias() =
              ConstMapMat<T>(t.value(ai).raw(), m, k).transpose() * gm;
          t.accumulate(bi, std::move(gb));
        }
      },
      "matmul");
}

template <typename T>
Var<T> transpose(Var<T> a) {
  const BasicTensor<T>& av = a.value();
  require_rank(av, 2, "transpose");
  const std::size_t rows = av.dim(0), cols = av.dim(1);
  BasicTensor<T> out(Shape{cols, rows});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = av[i * cols + j];
  const std::size_t ai = a.id;
  return a.tape->record(
      std::move(out), {ai},
      [ai, rows, cols](Tape<T>& t, const BasicTensor<T>& g) {
        BasicTensor<T> ga(Shape{rows, cols});
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < cols; ++j) ga[i * cols + j] = g[j * rows + i];
        t.accumulate(ai, std::move(ga));
      },
      "transpose");
}

// ---------------------------------------------------------------------------
// Misc

template <typename T>
Var<T> scale_channels(Var<T> x, Var<T> gate) {
  require_same_tape(x, gate, "scale_channels");
  const BasicTensor<T>& xv = x.value();
  const BasicTensor<T>& gv = gate.value();
  require_rank(xv, 4, "scale_channels input");
  const std::size_t n = xv.dim(0), c = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  if (gv.shape() != Shape{n, c, 1, 1}) {
    throw ShapeError("scale_channels: gate " + shape_to_string(gv.shape()) +
                     " does not match input " + shape_to_string(xv.shape()));
  }
  BasicTensor<T> out(xv.shape());
  for (std::size_t i = 0; i < n * c; ++i)
    for (std::size_t j = 0; j < plane; ++j)
      out[i * plane + j] = xv[i * plane + j] * gv[i];
  const std::size_t xi = x.id, gi = gate.id;
  return x.tape->record(
      std::move(out), {xi, gi},
      [xi, gi, n, c, plane](Tape<T>& t, const BasicTensor<T>& g) {
        const BasicTensor<T>& xv2 = t.value(xi);
        const BasicTensor<T>& gv2 = t.value(gi);
        if (t.requires_grad(xi)) {
          BasicTensor<T> gx(xv2.shape());
          for (std::size_t i = 0; i < n * c; ++i)
            for (std::size_t j = 0; j < plane; ++j)
              gx[i * plane + j] = g[i * plane + j] * gv2[i];
          t.accumulate(xi, std::move(gx));
        }
        if (t.requires_grad(gi)) {
          BasicTensor<T> gg(gv2.shape());
          for (std::size_t i = 0; i < n * c; ++i) {
            T acc{0};
            for (std::size_t j = 0; j < plane; ++j)
              acc += g[i * plane + j] * xv2[i * plane + j];
            gg[i] = acc;
          }
          t.accumulate(gi, std::move(gg));
        }
      },
      "scale_channels");
}

template <typename T>
Var<T> clamp(Var<T> x, std::type_identity_t<T> lo, std::type_identity_t<T> hi) {
  const BasicTensor<T>& xv = x.value();
  BasicTensor<T> out(xv.shape());
  for (std::size_t i = 0, n = xv.numel(); i < n; ++i)
    out[i] = std::min(std::max(xv[i], lo), hi);
  const std::size_t xi = x.id;
  return x.tape->record(
      std::move(out), {xi},
      [xi, lo, hi](Tape<T>& t, const BasicTensor<T>& g) {
        const BasicTensor<T>& v = t.value(xi);
        BasicTensor<T> gx(g.shape());
        for (std::size_t i = 0, n = g.numel(); i < n; ++i)
          gx[i] = (v[i] > lo && v[i] < hi) ? g[i] : T{0};
        t.accumulate(xi, std::move(gx));
      },
      "clamp");
}

template <typename T>
Var<T> unfold_patches(Var<T> x, std::size_t patch) {
  const BasicTensor<T>& xv = x.value();
  require_rank(xv, 4, "unfold_patches");
  if (patch == 0 || xv.dim(2) % patch != 0 || xv.dim(3) % patch != 0) {
    throw ShapeError("unfold_patches: H and W must be divisible by K=" +
                     std::to_string(patch) + ", got " +
                     shape_to_string(xv.shape()));
  }
  const std::size_t xi = x.id;
  const Shape image_shape = xv.shape();
  return x.tape->record(
      unfold_tensor(xv, patch), {xi},
      [xi, patch, image_shape](Tape<T>& t, const BasicTensor<T>& g) {
        t.accumulate(xi, fold_tensor(g, image_shape, patch));
      },
      "unfold_patches");
}

template <typename T>
Var<T> batch_item(Var<T> x, std::size_t n) {
  const BasicTensor<T>& xv = x.value();
  if (n >= xv.dim(0)) {
    throw ShapeError("batch_item: index " + std::to_string(n) +
                     " out of range for " + shape_to_string(xv.shape()));
  }
  Shape shape(xv.shape().begin() + 1, xv.shape().end());
  if (shape.empty()) shape = Shape{1};
  const std::size_t stride = xv.numel() / xv.dim(0);
  std::vector<T> values(xv.raw() + n * stride, xv.raw() + (n + 1) * stride);
  const std::size_t xi = x.id;
  return x.tape->record(
      BasicTensor<T>(std::move(shape), std::move(values)), {xi},
      [xi, n, stride](Tape<T>& t, const BasicTensor<T>& g) {
        BasicTensor<T>& gx = t.grad_buffer(xi);
        T* dst = gx.raw() + n * stride;
        for (std::size_t i = 0; i < stride; ++i) dst[i] += g[i];
      },
      "batch_item");
}

#define MENET_INSTANTIATE(T)                                                   \
  template class Tape<T>;                                                      \
  template Var<T> elementwise<T>(Var<T>, Var<T>, Elementwise);                 \
  template Var<T> elementwise<T>(Var<T>, std::type_identity_t<T>, Elementwise); \
  template Var<T> conv2d<T>(Var<T>, Var<T>, std::optional<Var<T>>, std::size_t); \
  template Var<T> activation<T>(Var<T>, Activation);                           \
  template BasicTensor<T> desubpixel_tensor<T>(const BasicTensor<T>&, std::size_t); \
  template BasicTensor<T> subpixel_tensor<T>(const BasicTensor<T>&, std::size_t); \
  template Var<T> desubpixel<T>(Var<T>, std::size_t);                          \
  template Var<T> subpixel<T>(Var<T>, std::size_t);                            \
  template Var<T> reduce<T>(Var<T>, Reduction);                                \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                   \
  template Var<T> transpose<T>(Var<T>);                                        \
  template Var<T> scale_channels<T>(Var<T>, Var<T>);                           \
  template Var<T> clamp<T>(Var<T>, std::type_identity_t<T>, std::type_identity_t<T>); \
  template Var<T> unfold_patches<T>(Var<T>, std::size_t);                      \
  template Var<T> batch_item<T>(Var<T>, std::size_t);

MENET_INSTANTIATE(float)
MENET_INSTANTIATE(double)

#undef MENET_INSTANTIATE

}  // namespace menet
