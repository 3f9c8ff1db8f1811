#include "shiftbnn/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "shiftbnn/error.hpp"

namespace shiftbnn {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::ShapeMismatch, what);
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> dims, std::vector<double> data)
    : dims_(std::move(dims)), data_(std::move(data)) {
  require(data_.size() == count(dims_), "tensor data length does not match dims");
}

std::size_t conv_output_extent(std::size_t in, const ConvGeometry& g) {
  require(g.kernel >= 1 && g.stride >= 1, "kernel and stride must be positive");
  const std::size_t padded = in + 2 * g.pad;
  require(padded >= g.kernel, "kernel larger than padded input");
  require((padded - g.kernel) % g.stride == 0, "output extent is not integral");
  return (padded - g.kernel) / g.stride + 1;
}

std::vector<double> rotate180(std::span<const double> kernel) {
  return {kernel.rbegin(), kernel.rend()};
}

void accumulate_kernel_forward(std::span<const double> input_map, std::size_t in_h,
                               std::size_t in_w, std::span<const double> kernel,
                               const ConvGeometry& g, std::span<double> output_map,
                               std::size_t out_h, std::size_t out_w) {
  const std::size_t k = g.kernel;
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t r = 0; r < out_h; ++r) {
    for (std::size_t c = 0; c < out_w; ++c) {
      double acc = output_map[r * out_w + c];
      for (std::size_t kr = 0; kr < k; ++kr) {
        const auto h = static_cast<std::ptrdiff_t>(r * g.stride + kr) - pad;
        if (h < 0 || h >= static_cast<std::ptrdiff_t>(in_h)) continue;
        for (std::size_t kc = 0; kc < k; ++kc) {
          const auto w = static_cast<std::ptrdiff_t>(c * g.stride + kc) - pad;
          if (w < 0 || w >= static_cast<std::ptrdiff_t>(in_w)) continue;
          acc += input_map[static_cast<std::size_t>(h) * in_w + static_cast<std::size_t>(w)] *
                 kernel[kr * k + kc];
        }
      }
      output_map[r * out_w + c] = acc;
    }
  }
}

void accumulate_kernel_data_error(std::span<const double> error_map, std::size_t out_h,
                                  std::size_t out_w, std::span<const double> rotated_kernel,
                                  const ConvGeometry& g, std::span<double> input_error,
                                  std::size_t in_h, std::size_t in_w) {
  const std::size_t k = g.kernel;
  const auto s = static_cast<std::ptrdiff_t>(g.stride);
  for (std::size_t h = 0; h < in_h; ++h) {
    for (std::size_t w = 0; w < in_w; ++w) {
      double acc = input_error[h * in_w + w];
      for (std::size_t kr_rot = 0; kr_rot < k; ++kr_rot) {
        const auto num_r = static_cast<std::ptrdiff_t>(h + g.pad) -
                           static_cast<std::ptrdiff_t>(k - 1 - kr_rot);
        if (num_r < 0 || num_r % s != 0) continue;
        const auto r = static_cast<std::size_t>(num_r / s);
        if (r >= out_h) continue;
        for (std::size_t kc_rot = 0; kc_rot < k; ++kc_rot) {
          const auto num_c = static_cast<std::ptrdiff_t>(w + g.pad) -
                             static_cast<std::ptrdiff_t>(k - 1 - kc_rot);
          if (num_c < 0 || num_c % s != 0) continue;
          const auto c = static_cast<std::size_t>(num_c / s);
          if (c >= out_w) continue;
          acc += error_map[r * out_w + c] * rotated_kernel[kr_rot * k + kc_rot];
        }
      }
      input_error[h * in_w + w] = acc;
    }
  }
}

void accumulate_kernel_weight_grad(std::span<const double> input_map, std::size_t in_h,
                                   std::size_t in_w, std::span<const double> error_map,
                                   std::size_t out_h, std::size_t out_w, const ConvGeometry& g,
                                   std::span<double> grad) {
  const std::size_t k = g.kernel;
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t kr = 0; kr < k; ++kr) {
    for (std::size_t kc = 0; kc < k; ++kc) {
      double acc = grad[kr * k + kc];
      for (std::size_t r = 0; r < out_h; ++r) {
        const auto h = static_cast<std::ptrdiff_t>(r * g.stride + kr) - pad;
        if (h < 0 || h >= static_cast<std::ptrdiff_t>(in_h)) continue;
        for (std::size_t c = 0; c < out_w; ++c) {
          const auto w = static_cast<std::ptrdiff_t>(c * g.stride + kc) - pad;
          if (w < 0 || w >= static_cast<std::ptrdiff_t>(in_w)) continue;
          acc += error_map[r * out_w + c] *
                 input_map[static_cast<std::size_t>(h) * in_w + static_cast<std::size_t>(w)];
        }
      }
      grad[kr * k + kc] = acc;
    }
  }
}

Tensor conv_forward(const Tensor& input, const Tensor& weights, const ConvGeometry& g) {
  require(input.rank() == 3, "conv input must be [N][H][W]");
  require(weights.rank() == 4, "conv weights must be [M][N][K][K]");
  const std::size_t n_in = input.dim(0), in_h = input.dim(1), in_w = input.dim(2);
  const std::size_t m_out = weights.dim(0), k = g.kernel;
  require(weights.dim(1) == n_in, "weight input channels do not match input");
  require(weights.dim(2) == k && weights.dim(3) == k, "weight kernel extent mismatch");
  const std::size_t out_h = conv_output_extent(in_h, g), out_w = conv_output_extent(in_w, g);

  Tensor out({m_out, out_h, out_w});
  const std::size_t in_plane = in_h * in_w, out_plane = out_h * out_w, kk = k * k;
  for (std::size_t m = 0; m < m_out; ++m) {
    std::span<double> out_map(out.data() + m * out_plane, out_plane);
    for (std::size_t n = 0; n < n_in; ++n) {
      accumulate_kernel_forward({input.data() + n * in_plane, in_plane}, in_h, in_w,
                                {weights.data() + (m * n_in + n) * kk, kk}, g, out_map, out_h,
                                out_w);
    }
  }
  return out;
}

Tensor conv_backward_data(const Tensor& errors, const Tensor& weights, const ConvGeometry& g,
                          std::size_t in_h, std::size_t in_w) {
  require(errors.rank() == 3 && weights.rank() == 4, "conv backward data rank mismatch");
  const std::size_t m_out = weights.dim(0), n_in = weights.dim(1), k = g.kernel;
  require(errors.dim(0) == m_out, "error channels do not match kernels");
  const std::size_t out_h = conv_output_extent(in_h, g), out_w = conv_output_extent(in_w, g);
  require(errors.dim(1) == out_h && errors.dim(2) == out_w, "error map extent mismatch");

  Tensor in_err({n_in, in_h, in_w});
  const std::size_t in_plane = in_h * in_w, out_plane = out_h * out_w, kk = k * k;
  for (std::size_t m = m_out; m-- > 0;) {
    for (std::size_t n = n_in; n-- > 0;) {
      const auto rot = rotate180({weights.data() + (m * n_in + n) * kk, kk});
      accumulate_kernel_data_error({errors.data() + m * out_plane, out_plane}, out_h, out_w, rot,
                                   g, {in_err.data() + n * in_plane, in_plane}, in_h, in_w);
    }
  }
  return in_err;
}

Tensor conv_backward_weights(const Tensor& input, const Tensor& errors, const ConvGeometry& g) {
  require(input.rank() == 3 && errors.rank() == 3, "conv backward weights rank mismatch");
  const std::size_t n_in = input.dim(0), in_h = input.dim(1), in_w = input.dim(2);
  const std::size_t m_out = errors.dim(0), k = g.kernel;
  const std::size_t out_h = conv_output_extent(in_h, g), out_w = conv_output_extent(in_w, g);
  require(errors.dim(1) == out_h && errors.dim(2) == out_w, "error map extent mismatch");

  Tensor grad({m_out, n_in, k, k});
  const std::size_t in_plane = in_h * in_w, out_plane = out_h * out_w, kk = k * k;
  for (std::size_t m = 0; m < m_out; ++m)
    for (std::size_t n = 0; n < n_in; ++n)
      accumulate_kernel_weight_grad({input.data() + n * in_plane, in_plane}, in_h, in_w,
                                    {errors.data() + m * out_plane, out_plane}, out_h, out_w, g,
                                    {grad.data() + (m * n_in + n) * kk, kk});
  return grad;
}

Tensor fc_forward(const Tensor& input, const Tensor& weights) {
  require(weights.rank() == 2, "fc weights must be [out][in]");
  require(input.size() == weights.dim(1), "fc input length mismatch");
  Tensor out({weights.dim(0)});
  fc_forward_batch(weights.span(), weights.dim(0), weights.dim(1), input.span(), 1, out.span());
  return out;
}

Tensor fc_backward_data(const Tensor& errors, const Tensor& weights) {
  require(weights.rank() == 2, "fc weights must be [out][in]");
  require(errors.size() == weights.dim(0), "fc error length mismatch");
  const std::size_t out = weights.dim(0), in = weights.dim(1);
  Tensor in_err({in});
  for (std::size_t o = out; o-- > 0;)
    fc_accumulate_row_data_error({weights.data() + o * in, in}, {errors.data() + o, 1}, 1,
                                 in_err.span());
  return in_err;
}

Tensor fc_backward_weights(const Tensor& input, const Tensor& errors) {
  const std::size_t out = errors.size(), in = input.size();
  Tensor grad({out, in});
  for (std::size_t o = 0; o < out; ++o)
    fc_accumulate_row_weight_grad({errors.data() + o, 1}, input.span(), in,
                                  {grad.data() + o * in, in});
  return grad;
}

void fc_forward_batch(std::span<const double> weights, std::size_t out, std::size_t in,
                      std::span<const double> input, std::size_t batch,
                      std::span<double> output) {
  require(weights.size() == out * in, "fc weight length mismatch");
  require(input.size() == in * batch && output.size() == out * batch, "fc batch length mismatch");
  // Four output rows share each input load; every output element still sums
  // its products with the in-index ascending.
  constexpr std::size_t kRows = 4;
  std::vector<double> acc(kRows * batch);
  std::size_t o = 0;
  for (; o + kRows <= out; o += kRows) {
    std::fill(acc.begin(), acc.end(), 0.0);
    double* __restrict a0 = acc.data();
    double* __restrict a1 = a0 + batch;
    double* __restrict a2 = a1 + batch;
    double* __restrict a3 = a2 + batch;
    const double* r0 = weights.data() + o * in;
    const double* r1 = r0 + in;
    const double* r2 = r1 + in;
    const double* r3 = r2 + in;
    for (std::size_t i = 0; i < in; ++i) {
      const double w0 = r0[i], w1 = r1[i], w2 = r2[i], w3 = r3[i];
      const double* __restrict x = input.data() + i * batch;
      for (std::size_t b = 0; b < batch; ++b) {
        a0[b] += w0 * x[b];
        a1[b] += w1 * x[b];
        a2[b] += w2 * x[b];
        a3[b] += w3 * x[b];
      }
    }
    std::copy(acc.begin(), acc.end(), output.begin() + static_cast<std::ptrdiff_t>(o * batch));
  }
  for (; o < out; ++o) {
    double* __restrict a = acc.data();
    std::fill(a, a + batch, 0.0);
    const double* row = weights.data() + o * in;
    for (std::size_t i = 0; i < in; ++i) {
      const double w = row[i];
      const double* __restrict x = input.data() + i * batch;
      for (std::size_t b = 0; b < batch; ++b) a[b] += w * x[b];
    }
    std::copy(a, a + batch, output.begin() + static_cast<std::ptrdiff_t>(o * batch));
  }
}

void fc_accumulate_row_data_error(std::span<const double> row, std::span<const double> err_row,
                                  std::size_t batch, std::span<double> input_error) {
  const double* __restrict e = err_row.data();
  for (std::size_t i = 0; i < row.size(); ++i) {
    const double w = row[i];
    double* __restrict dst = input_error.data() + i * batch;
    for (std::size_t b = 0; b < batch; ++b) dst[b] += w * e[b];
  }
}

void fc_accumulate_row_weight_grad(std::span<const double> err_row,
                                   std::span<const double> input_bmajor, std::size_t in,
                                   std::span<double> grad) {
  double* __restrict g = grad.data();
  const std::size_t batch = err_row.size();
  std::size_t b = 0;
  // Four examples per sweep over the row; each slot still receives them in
  // ascending b order.
  for (; b + 4 <= batch; b += 4) {
    const double e0 = err_row[b], e1 = err_row[b + 1], e2 = err_row[b + 2], e3 = err_row[b + 3];
    const double* __restrict x0 = input_bmajor.data() + b * in;
    const double* __restrict x1 = x0 + in;
    const double* __restrict x2 = x1 + in;
    const double* __restrict x3 = x2 + in;
    for (std::size_t i = 0; i < in; ++i) {
      double v = g[i];
      v += e0 * x0[i];
      v += e1 * x1[i];
      v += e2 * x2[i];
      v += e3 * x3[i];
      g[i] = v;
    }
  }
  for (; b < batch; ++b) {
    const double e = err_row[b];
    const double* __restrict x = input_bmajor.data() + b * in;
    for (std::size_t i = 0; i < in; ++i) g[i] += e * x[i];
  }
}

void fc_accumulate_rows_data_error(std::span<const double* const> rows,
                                   std::span<const double* const> err_rows, std::size_t in,
                                   std::size_t batch, std::span<double> input_error) {
  require(rows.size() == err_rows.size(), "row and error counts differ");
  require(input_error.size() == in * batch, "input error length mismatch");
  if (rows.size() != 4) {
    for (std::size_t j = 0; j < rows.size(); ++j)
      fc_accumulate_row_data_error({rows[j], in}, {err_rows[j], batch}, batch, input_error);
    return;
  }
  const double* __restrict e0 = err_rows[0];
  const double* __restrict e1 = err_rows[1];
  const double* __restrict e2 = err_rows[2];
  const double* __restrict e3 = err_rows[3];
  for (std::size_t i = 0; i < in; ++i) {
    const double w0 = rows[0][i], w1 = rows[1][i], w2 = rows[2][i], w3 = rows[3][i];
    double* __restrict dst = input_error.data() + i * batch;
    for (std::size_t b = 0; b < batch; ++b) {
      double v = dst[b];
      v += w0 * e0[b];
      v += w1 * e1[b];
      v += w2 * e2[b];
      v += w3 * e3[b];
      dst[b] = v;
    }
  }
}

void fc_accumulate_rows_weight_grad(std::span<const double* const> err_rows, std::size_t batch,
                                    std::span<const double> input_bmajor, std::size_t in,
                                    std::span<double* const> grads) {
  require(err_rows.size() == grads.size(), "row and gradient counts differ");
  require(input_bmajor.size() == in * batch, "input length mismatch");
  if (grads.size() != 4) {
    for (std::size_t j = 0; j < grads.size(); ++j)
      fc_accumulate_row_weight_grad({err_rows[j], batch}, input_bmajor, in, {grads[j], in});
    return;
  }
  double* __restrict g0 = grads[0];
  double* __restrict g1 = grads[1];
  double* __restrict g2 = grads[2];
  double* __restrict g3 = grads[3];
  std::size_t b = 0;
  for (; b + 2 <= batch; b += 2) {
    const double* __restrict xa = input_bmajor.data() + b * in;
    const double* __restrict xb = xa + in;
    const double a0 = err_rows[0][b], a1 = err_rows[1][b], a2 = err_rows[2][b],
                 a3 = err_rows[3][b];
    const double b0 = err_rows[0][b + 1], b1 = err_rows[1][b + 1], b2 = err_rows[2][b + 1],
                 b3 = err_rows[3][b + 1];
    for (std::size_t i = 0; i < in; ++i) {
      const double x0 = xa[i], x1 = xb[i];
      double v0 = g0[i], v1 = g1[i], v2 = g2[i], v3 = g3[i];
      v0 += a0 * x0;
      v1 += a1 * x0;
      v2 += a2 * x0;
      v3 += a3 * x0;
      v0 += b0 * x1;
      v1 += b1 * x1;
      v2 += b2 * x1;
      v3 += b3 * x1;
      g0[i] = v0;
      g1[i] = v1;
      g2[i] = v2;
      g3[i] = v3;
    }
  }
  for (; b < batch; ++b) {
    const double* __restrict x = input_bmajor.data() + b * in;
    const double a0 = err_rows[0][b], a1 = err_rows[1][b], a2 = err_rows[2][b],
                 a3 = err_rows[3][b];
    for (std::size_t i = 0; i < in; ++i) {
      g0[i] += a0 * x[i];
      g1[i] += a1 * x[i];
      g2[i] += a2 * x[i];
      g3[i] += a3 * x[i];
    }
  }
}

Tensor relu_forward(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.values()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& grad, const Tensor& output) {
  require(grad.size() == output.size(), "relu gradient length mismatch");
  Tensor g = grad;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(output[i] > 0.0)) g[i] = 0.0;
  return g;
}

PoolResult maxpool_forward(const Tensor& x, std::size_t size, std::size_t stride) {
  require(x.rank() == 3, "maxpool input must be [C][H][W]");
  require(size >= 1 && stride >= 1 && x.dim(1) >= size && x.dim(2) >= size,
          "pool window larger than input");
  const std::size_t ch = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = (h - size) / stride + 1, ow = (w - size) / stride + 1;
  PoolResult res{Tensor({ch, oh, ow}), std::vector<std::size_t>(ch * oh * ow)};
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t r = 0; r < oh; ++r)
      for (std::size_t q = 0; q < ow; ++q) {
        std::size_t best = (c * h + r * stride) * w + q * stride;
        for (std::size_t i = 0; i < size; ++i)
          for (std::size_t j = 0; j < size; ++j) {
            const std::size_t idx = (c * h + r * stride + i) * w + q * stride + j;
            if (x[idx] > x[best]) best = idx;
          }
        const std::size_t o = (c * oh + r) * ow + q;
        res.output[o] = x[best];
        res.argmax[o] = best;
      }
  return res;
}

Tensor maxpool_backward(const Tensor& grad, const std::vector<std::size_t>& argmax,
                        const std::vector<std::size_t>& input_dims) {
  require(grad.size() == argmax.size(), "pool gradient length mismatch");
  Tensor g(input_dims);
  for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += grad[i];
  return g;
}

XentResult softmax_xent(std::span<const double> logits, std::size_t label) {
  require(label < logits.size(), "label out of range");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  std::vector<double> p(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  XentResult res{std::log(z) + mx - logits[label], std::move(p)};
  for (auto& v : res.grad) v /= z;
  res.grad[label] -= 1.0;
  return res;
}

}  // namespace shiftbnn
