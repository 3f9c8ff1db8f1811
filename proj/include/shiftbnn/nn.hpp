#pragma once

// Layer math used by training: convolution, fully-connected, ReLU, max
// pooling and softmax cross-entropy, each with its backward variants.
//
// Convolution is cross-correlation in the forward direction, so the data
// backward pass is a full correlation with 180-degree rotated kernels.
//
// Reduction orders are fixed so every result is bit-reproducible:
//   conv forward          per output element: n, kr, kc ascending
//   conv backward data    m descending (the order kernels come back from
//                         reversed retrieval); per (m, n) partial: rotated
//                         kernel slots ascending, added into the n buffer
//   conv backward weights per kernel slot: r, c ascending
//   fc forward            in-index ascending
//   fc backward data      out-index descending
// All sums accumulate in double.

#include <cstddef>
#include <span>
#include <vector>

#include "shiftbnn/tensor.hpp"

namespace shiftbnn {

struct ConvGeometry {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 0;
};

/// (in + 2*pad - kernel) / stride + 1; throws ShapeMismatch if not integral
/// or non-positive.
std::size_t conv_output_extent(std::size_t in, const ConvGeometry& g);

Tensor conv_forward(const Tensor& input, const Tensor& weights, const ConvGeometry& g);
Tensor conv_backward_data(const Tensor& errors, const Tensor& weights, const ConvGeometry& g,
                          std::size_t in_h, std::size_t in_w);
Tensor conv_backward_weights(const Tensor& input, const Tensor& errors, const ConvGeometry& g);

/// Kernel rotated by 180 degrees (row-major K*K slots reversed).
std::vector<double> rotate180(std::span<const double> kernel);

// Per-kernel building blocks; the training loop calls these directly as
// kernels are reconstructed one (m, n) pair at a time.

/// Adds full-correlation(error_map, rotated_kernel) into `input_error`
/// (one input channel, in_h x in_w).
void accumulate_kernel_data_error(std::span<const double> error_map, std::size_t out_h,
                                  std::size_t out_w, std::span<const double> rotated_kernel,
                                  const ConvGeometry& g, std::span<double> input_error,
                                  std::size_t in_h, std::size_t in_w);

/// Adds correlation(input_map, error_map) into the K*K `grad`.
void accumulate_kernel_weight_grad(std::span<const double> input_map, std::size_t in_h,
                                   std::size_t in_w, std::span<const double> error_map,
                                   std::size_t out_h, std::size_t out_w, const ConvGeometry& g,
                                   std::span<double> grad);

/// One output channel of conv_forward: adds correlation(input_map, kernel)
/// into `output_map`. Used with n ascending.
void accumulate_kernel_forward(std::span<const double> input_map, std::size_t in_h,
                               std::size_t in_w, std::span<const double> kernel,
                               const ConvGeometry& g, std::span<double> output_map,
                               std::size_t out_h, std::size_t out_w);

/// weights: [out][in]
Tensor fc_forward(const Tensor& input, const Tensor& weights);
Tensor fc_backward_data(const Tensor& errors, const Tensor& weights);
Tensor fc_backward_weights(const Tensor& input, const Tensor& errors);

// Minibatch FC kernels over feature-major matrices (element (f, b) at
// f * batch + b). Per-element reduction order matches the single-example
// functions above, so batch results equal per-example results bit for bit.

/// out[o][b] = sum_i w[o][i] * in[i][b]
void fc_forward_batch(std::span<const double> weights, std::size_t out, std::size_t in,
                      std::span<const double> input, std::size_t batch,
                      std::span<double> output);

/// in_err[i][b] += row[i] * err_row[b] for one weight row.
void fc_accumulate_row_data_error(std::span<const double> row, std::span<const double> err_row,
                                  std::size_t batch, std::span<double> input_error);

/// grad[i] += sum_b err_row[b] * input_bmajor[b][i], b ascending.
/// `input_bmajor` is batch-major ([b][i]).
void fc_accumulate_row_weight_grad(std::span<const double> err_row,
                                   std::span<const double> input_bmajor, std::size_t in,
                                   std::span<double> grad);

/// Same result as calling fc_accumulate_row_data_error once per row, in
/// the order given, but with one pass over `input_error`.
void fc_accumulate_rows_data_error(std::span<const double* const> rows,
                                   std::span<const double* const> err_rows, std::size_t in,
                                   std::size_t batch, std::span<double> input_error);

/// Same result as calling fc_accumulate_row_weight_grad for every
/// (err_rows[j], grads[j]) pair, sharing the input loads.
void fc_accumulate_rows_weight_grad(std::span<const double* const> err_rows, std::size_t batch,
                                    std::span<const double> input_bmajor, std::size_t in,
                                    std::span<double* const> grads);

Tensor relu_forward(const Tensor& x);
/// Gradient through ReLU given the forward output.
Tensor relu_backward(const Tensor& grad, const Tensor& output);

struct PoolResult {
  Tensor output;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

/// Max pooling over [C][H][W]; ties pick the first (row-major) maximum.
PoolResult maxpool_forward(const Tensor& x, std::size_t size, std::size_t stride);
Tensor maxpool_backward(const Tensor& grad, const std::vector<std::size_t>& argmax,
                        const std::vector<std::size_t>& input_dims);

struct XentResult {
  double loss;
  std::vector<double> grad;  // softmax - onehot
};

XentResult softmax_xent(std::span<const double> logits, std::size_t label);

}  // namespace shiftbnn
