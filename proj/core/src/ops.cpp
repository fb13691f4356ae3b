#include "rce/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Core>
#include <fmt/format.h>

namespace rce::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

MatMap as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
  return MatMap(t.raw(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
ConstMatMap as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMatMap(t.raw(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
MatMap as_matrix(Buffer& v, std::size_t rows, std::size_t cols) {
  return MatMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
ConstMatMap as_matrix(const Buffer& v, std::size_t rows, std::size_t cols) {
  return ConstMatMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw std::invalid_argument(
        fmt::format("{}: {} must have rank {}, got shape {}", op, what, rank, shape_string(t.shape())));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(
        fmt::format("{}: shape mismatch {} vs {}", op, shape_string(a.shape()), shape_string(b.shape())));
  }
}

template <typename F>
Var unary_elementwise(Tape& tape, Var x, F&& forward_and_derivative) {
  const Tensor& xv = tape.value(x);
  Tensor out(xv.shape());
  const bool need = tape.requires_grad(x);
  Buffer deriv(need ? xv.size() : 0);
  for (std::size_t i = 0; i < xv.size(); ++i) {
    auto [y, d] = forward_and_derivative(xv[i]);
    out[i] = y;
    if (need) deriv[i] = d;
  }
  return tape.record(std::move(out), {x}, [deriv = std::move(deriv)](const Tensor& g, std::span<Tensor* const> in) {
    Tensor& gx = *in[0];
    for (std::size_t i = 0; i < deriv.size(); ++i) gx[i] += g[i] * deriv[i];
  });
}

}  // namespace

Var matmul(Tape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  require_rank(av, 2, "matmul", "left operand");
  require_rank(bv, 2, "matmul", "right operand");
  if (av.extent(1) != bv.extent(0)) {
    throw std::invalid_argument(fmt::format("matmul: inner extents disagree for {} and {}", shape_string(av.shape()),
                                            shape_string(bv.shape())));
  }
  const std::size_t m = av.extent(0), k = av.extent(1), n = bv.extent(1);
  Tensor out(Shape{m, n});
  as_matrix(out, m, n).noalias() = as_matrix(av, m, k) * as_matrix(bv, k, n);
  const Tensor* ap = &av;
  const Tensor* bp = &bv;
  return tape.record(std::move(out), {a, b}, [ap, bp, m, k, n](const Tensor& g, std::span<Tensor* const> in) {
    auto gm = as_matrix(g, m, n);
    if (in[0]) as_matrix(*in[0], m, k).noalias() += gm * as_matrix(*bp, k, n).transpose();
    if (in[1]) as_matrix(*in[1], k, n).noalias() += as_matrix(*ap, m, k).transpose() * gm;
  });
}

Var linear(Tape& tape, Var x, Var weight, Var bias) {
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(weight);
  const Tensor& bv = tape.value(bias);
  require_rank(xv, 2, "linear", "input");
  require_rank(wv, 2, "linear", "weight");
  require_rank(bv, 1, "linear", "bias");
  const std::size_t n = xv.extent(0), d = xv.extent(1), o = wv.extent(0);
  if (wv.extent(1) != d || bv.extent(0) != o) {
    throw std::invalid_argument(fmt::format("linear: input {} incompatible with weight {} and bias {}",
                                            shape_string(xv.shape()), shape_string(wv.shape()),
                                            shape_string(bv.shape())));
  }
  Tensor out(Shape{n, o});
  auto om = as_matrix(out, n, o);
  om.noalias() = as_matrix(xv, n, d) * as_matrix(wv, o, d).transpose();
  om.rowwise() += ConstVecMap(bv.raw(), static_cast<Eigen::Index>(o)).transpose();
  const Tensor* xp = &xv;
  const Tensor* wp = &wv;
  return tape.record(std::move(out), {x, weight, bias},
                     [xp, wp, n, d, o](const Tensor& g, std::span<Tensor* const> in) {
                       auto gm = as_matrix(g, n, o);
                       if (in[0]) as_matrix(*in[0], n, d).noalias() += gm * as_matrix(*wp, o, d);
                       if (in[1]) as_matrix(*in[1], o, d).noalias() += gm.transpose() * as_matrix(*xp, n, d);
                       if (in[2]) {
                         VecMap(in[2]->raw(), static_cast<Eigen::Index>(o)) += gm.colwise().sum().transpose();
                       }
                     });
}

Var conv2d(Tape& tape, Var x, Var kernels, std::size_t stride, std::size_t padding) {
  const Tensor& xv = tape.value(x);
  const Tensor& kv = tape.value(kernels);
  require_rank(xv, 4, "conv2d", "input");
  require_rank(kv, 4, "conv2d", "kernels");
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  const std::size_t N = xv.extent(0), C = xv.extent(1), H = xv.extent(2), W = xv.extent(3);
  const std::size_t K = kv.extent(0), kh = kv.extent(2), kw = kv.extent(3);
  if (kv.extent(1) != C) {
    throw std::invalid_argument(fmt::format("conv2d: input {} has {} channels but kernels {} expect {}",
                                            shape_string(xv.shape()), C, shape_string(kv.shape()), kv.extent(1)));
  }
  if (kh > H + 2 * padding || kw > W + 2 * padding) {
    throw std::invalid_argument(fmt::format("conv2d: kernel {}x{} larger than padded input {}x{}", kh, kw,
                                            H + 2 * padding, W + 2 * padding));
  }
  const std::size_t Ho = (H + 2 * padding - kh) / stride + 1;
  const std::size_t Wo = (W + 2 * padding - kw) / stride + 1;
  const std::size_t P = Ho * Wo;
  const std::size_t R = C * kh * kw;
  const std::size_t cols = N * P;

  // im2col: row r = (c, i, j), column = (n, oy, ox).
  Buffer col(R * cols, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        double* dst = col.data() + ((c * kh + i) * kw + j) * cols;
        for (std::size_t n = 0; n < N; ++n) {
          const double* src = xv.raw() + (n * C + c) * H * W;
          for (std::size_t oy = 0; oy < Ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + i) - static_cast<std::ptrdiff_t>(padding);
            double* row = dst + n * P + oy * Wo;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t ox = 0; ox < Wo; ++ox) {
              const std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(ox * stride + j) - static_cast<std::ptrdiff_t>(padding);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
              row[ox] = src[static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)];
            }
          }
        }
      }
    }
  }

  Buffer big(K * cols);
  as_matrix(big, K, cols).noalias() = as_matrix(kv, K, R) * as_matrix(col, R, cols);
  Tensor out(Shape{N, K, Ho, Wo});
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t k = 0; k < K; ++k) {
      std::copy_n(big.data() + k * cols + n * P, P, out.raw() + (n * K + k) * P);
    }
  }

  if (!tape.any_requires_grad({x, kernels})) return tape.record(std::move(out), {x, kernels}, {});

  const Tensor* kp = &kv;
  return tape.record(
      std::move(out), {x, kernels},
      [kp, col = std::move(col), N, C, H, W, K, kh, kw, Ho, Wo, P, R, cols, stride, padding](
          const Tensor& g, std::span<Tensor* const> in) {
        Buffer gbig(K * cols);
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t k = 0; k < K; ++k) {
            std::copy_n(g.raw() + (n * K + k) * P, P, gbig.data() + k * cols + n * P);
          }
        }
        auto gm = as_matrix(gbig, K, cols);
        if (in[1]) as_matrix(*in[1], K, R).noalias() += gm * as_matrix(col, R, cols).transpose();
        if (in[0]) {
          Buffer gcol(R * cols);
          as_matrix(gcol, R, cols).noalias() = as_matrix(*kp, K, R).transpose() * gm;
          Tensor& gx = *in[0];
          for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t i = 0; i < kh; ++i) {
              for (std::size_t j = 0; j < kw; ++j) {
                const double* srcrow = gcol.data() + ((c * kh + i) * kw + j) * cols;
                for (std::size_t n = 0; n < N; ++n) {
                  double* dst = gx.raw() + (n * C + c) * H * W;
                  for (std::size_t oy = 0; oy < Ho; ++oy) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(oy * stride + i) - static_cast<std::ptrdiff_t>(padding);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                    const double* src = srcrow + n * P + oy * Wo;
                    for (std::size_t ox = 0; ox < Wo; ++ox) {
                      const std::ptrdiff_t ix =
                          static_cast<std::ptrdiff_t>(ox * stride + j) - static_cast<std::ptrdiff_t>(padding);
                      if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                      dst[static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)] += src[ox];
                    }
                  }
                }
              }
            }
          }
        }
      });
}

Var add_channel_bias(Tape& tape, Var x, Var bias) {
  const Tensor& xv = tape.value(x);
  const Tensor& bv = tape.value(bias);
  require_rank(xv, 4, "add_channel_bias", "input");
  require_rank(bv, 1, "add_channel_bias", "bias");
  const std::size_t N = xv.extent(0), K = xv.extent(1), P = xv.extent(2) * xv.extent(3);
  if (bv.extent(0) != K) {
    throw std::invalid_argument(fmt::format("add_channel_bias: bias {} does not match channels of {}",
                                            shape_string(bv.shape()), shape_string(xv.shape())));
  }
  Tensor out = xv;
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t k = 0; k < K; ++k) {
      double* p = out.raw() + (n * K + k) * P;
      for (std::size_t q = 0; q < P; ++q) p[q] += bv[k];
    }
  }
  return tape.record(std::move(out), {x, bias}, [N, K, P](const Tensor& g, std::span<Tensor* const> in) {
    if (in[0]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
    }
    if (in[1]) {
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t k = 0; k < K; ++k) {
          const double* p = g.raw() + (n * K + k) * P;
          double s = 0.0;
          for (std::size_t q = 0; q < P; ++q) s += p[q];
          (*in[1])[k] += s;
        }
      }
    }
  });
}

Var leaky_relu(Tape& tape, Var x, double leak) {
  if (!(leak >= 0.0 && leak < 1.0)) throw std::invalid_argument(fmt::format("leaky_relu: leak {} not in [0,1)", leak));
  return unary_elementwise(tape, x, [leak](double v) -> std::pair<double, double> {
    if (v > 0.0) return {v, 1.0};
    return {leak == 0.0 ? 0.0 : leak * v, leak};
  });
}

Var max_pool2d(Tape& tape, Var x, std::size_t window) {
  const Tensor& xv = tape.value(x);
  require_rank(xv, 4, "max_pool2d", "input");
  if (window == 0) throw std::invalid_argument("max_pool2d: window must be positive");
  const std::size_t N = xv.extent(0), C = xv.extent(1), H = xv.extent(2), W = xv.extent(3);
  if (window > H || window > W) {
    throw std::invalid_argument(fmt::format("max_pool2d: window {} larger than input {}", window, shape_string(xv.shape())));
  }
  const std::size_t Ho = H / window, Wo = W / window;
  Tensor out(Shape{N, C, Ho, Wo});
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const double* src = xv.raw() + nc * H * W;
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        std::size_t best = (oy * window) * W + ox * window;
        for (std::size_t i = 0; i < window; ++i) {
          for (std::size_t j = 0; j < window; ++j) {
            const std::size_t idx = (oy * window + i) * W + ox * window + j;
            if (src[idx] > src[best]) best = idx;
          }
        }
        const std::size_t o = (nc * Ho + oy) * Wo + ox;
        out[o] = src[best];
        argmax[o] = nc * H * W + best;
      }
    }
  }
  return tape.record(std::move(out), {x}, [argmax = std::move(argmax)](const Tensor& g, std::span<Tensor* const> in) {
    for (std::size_t o = 0; o < argmax.size(); ++o) (*in[0])[argmax[o]] += g[o];
  });
}

Var reshape(Tape& tape, Var x, Shape shape) {
  Tensor out = tape.value(x).reshaped(std::move(shape));
  return tape.record(std::move(out), {x}, [](const Tensor& g, std::span<Tensor* const> in) {
    for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
  });
}

Var softmax(Tape& tape, Var logits) {
  const Tensor& zv = tape.value(logits);
  if (zv.rank() == 0) throw std::invalid_argument("softmax: scalar input");
  if (!zv.all_finite()) throw std::invalid_argument("softmax: non-finite logits");
  const std::size_t L = zv.shape().back();
  const std::size_t rows = zv.size() / L;
  Tensor out(zv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = zv.raw() + r * L;
    double* p = out.raw() + r * L;
    const double m = *std::max_element(z, z + L);
    double s = 0.0;
    for (std::size_t i = 0; i < L; ++i) {
      p[i] = std::exp(z[i] - m);
      s += p[i];
    }
    for (std::size_t i = 0; i < L; ++i) p[i] /= s;
  }
  Tensor probs = out;
  return tape.record(std::move(out), {logits},
                     [probs = std::move(probs), L, rows](const Tensor& g, std::span<Tensor* const> in) {
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* p = probs.raw() + r * L;
                         const double* gr = g.raw() + r * L;
                         double dot = 0.0;
                         for (std::size_t i = 0; i < L; ++i) dot += gr[i] * p[i];
                         double* gz = in[0]->raw() + r * L;
                         for (std::size_t i = 0; i < L; ++i) gz[i] += p[i] * (gr[i] - dot);
                       }
                     });
}

Var neg(Tape& tape, Var x) { return scale(tape, x, -1.0); }

Var add(Tape& tape, Var a, Var b) {
  require_same_shape(tape.value(a), tape.value(b), "add");
  Tensor out = tape.value(a);
  const Tensor& bv = tape.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return tape.record(std::move(out), {a, b}, [](const Tensor& g, std::span<Tensor* const> in) {
    for (auto* gi : in) {
      if (!gi) continue;
      for (std::size_t i = 0; i < g.size(); ++i) (*gi)[i] += g[i];
    }
  });
}

Var sub(Tape& tape, Var a, Var b) {
  require_same_shape(tape.value(a), tape.value(b), "sub");
  Tensor out = tape.value(a);
  const Tensor& bv = tape.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return tape.record(std::move(out), {a, b}, [](const Tensor& g, std::span<Tensor* const> in) {
    if (in[0]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
    }
    if (in[1]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i] -= g[i];
    }
  });
}

Var mul(Tape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  require_same_shape(av, bv, "mul");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const Tensor* ap = &av;
  const Tensor* bp = &bv;
  return tape.record(std::move(out), {a, b}, [ap, bp](const Tensor& g, std::span<Tensor* const> in) {
    if (in[0]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] * (*bp)[i];
    }
    if (in[1]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i] += g[i] * (*ap)[i];
    }
  });
}

Var scale(Tape& tape, Var x, double factor) {
  return unary_elementwise(tape, x, [factor](double v) -> std::pair<double, double> { return {factor * v, factor}; });
}

Var add_scalar(Tape& tape, Var x, double offset) {
  return unary_elementwise(tape, x, [offset](double v) -> std::pair<double, double> { return {v + offset, 1.0}; });
}

Var square(Tape& tape, Var x) {
  return unary_elementwise(tape, x, [](double v) -> std::pair<double, double> { return {v * v, 2.0 * v}; });
}

Var tanh(Tape& tape, Var x) {
  return unary_elementwise(tape, x, [](double v) -> std::pair<double, double> {
    const double t = std::tanh(v);
    return {t, 1.0 - t * t};
  });
}

Var sum(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  double s = 0.0;
  for (double v : xv.data()) s += v;
  return tape.record(Tensor::scalar(s), {x}, [](const Tensor& g, std::span<Tensor* const> in) {
    const double gv = g[0];
    for (auto& v : in[0]->data()) v += gv;
  });
}

Var mean(Tape& tape, Var x) {
  const double n = static_cast<double>(tape.value(x).size());
  const Tensor& xv = tape.value(x);
  double s = 0.0;
  for (double v : xv.data()) s += v;
  return tape.record(Tensor::scalar(s / n), {x}, [n](const Tensor& g, std::span<Tensor* const> in) {
    const double gv = g[0] / n;
    for (auto& v : in[0]->data()) v += gv;
  });
}

Var sum_rows(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  if (xv.rank() == 0) throw std::invalid_argument("sum_rows: scalar input");
  const std::size_t N = xv.extent(0);
  const std::size_t stride = xv.size() / N;
  Tensor out(Shape{N});
  for (std::size_t n = 0; n < N; ++n) {
    double s = 0.0;
    for (std::size_t i = 0; i < stride; ++i) s += xv[n * stride + i];
    out[n] = s;
  }
  return tape.record(std::move(out), {x}, [N, stride](const Tensor& g, std::span<Tensor* const> in) {
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t i = 0; i < stride; ++i) (*in[0])[n * stride + i] += g[n];
    }
  });
}

}  // namespace rce::ops
