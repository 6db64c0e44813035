#pragma once

#include <cstddef>
#include <span>

// Dense compute kernels for the toy backbone and the heads.
//
// `serial` is the reference; `parallel` distributes independent output elements over
// OpenMP threads. Every output element is accumulated by exactly one thread in the same
// order as the reference, so the two agree bit-for-bit for any thread count.
// Tensors are contiguous NCHW. Parameter-gradient kernels overwrite their outputs.

namespace ftl::kernels {

struct ConvShape {
  int batch = 1;
  int in_channels = 1;
  int in_height = 1;
  int in_width = 1;
  int out_channels = 1;
  int kernel = 3;
  int stride = 1;
  int pad = 0;

  int out_height() const { return (in_height + 2 * pad - kernel) / stride + 1; }
  int out_width() const { return (in_width + 2 * pad - kernel) / stride + 1; }
  std::size_t input_size() const { return static_cast<std::size_t>(batch) * in_channels * in_height * in_width; }
  std::size_t output_size() const { return static_cast<std::size_t>(batch) * out_channels * out_height() * out_width(); }
  std::size_t weight_size() const { return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel; }
};

struct DenseShape {
  int rows = 1;  // batch
  int in = 1;
  int out = 1;
};

namespace serial {

void conv2d_forward(const ConvShape& s, std::span<const double> input, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> output);
void conv2d_backward_input(const ConvShape& s, std::span<const double> grad_output, std::span<const double> weight,
                           std::span<double> grad_input);
void conv2d_backward_params(const ConvShape& s, std::span<const double> input, std::span<const double> grad_output,
                            std::span<double> grad_weight, std::span<double> grad_bias);
void dense_forward(const DenseShape& s, std::span<const double> x, std::span<const double> weight,
                   std::span<const double> bias, std::span<double> y);
void dense_backward_input(const DenseShape& s, std::span<const double> grad_y, std::span<const double> weight,
                          std::span<double> grad_x);
void dense_backward_params(const DenseShape& s, std::span<const double> x, std::span<const double> grad_y,
                           std::span<double> grad_weight, std::span<double> grad_bias);

}  // namespace serial

namespace parallel {

void conv2d_forward(const ConvShape& s, std::span<const double> input, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> output);
void conv2d_backward_input(const ConvShape& s, std::span<const double> grad_output, std::span<const double> weight,
                           std::span<double> grad_input);
void conv2d_backward_params(const ConvShape& s, std::span<const double> input, std::span<const double> grad_output,
                            std::span<double> grad_weight, std::span<double> grad_bias);
void dense_forward(const DenseShape& s, std::span<const double> x, std::span<const double> weight,
                   std::span<const double> bias, std::span<double> y);
void dense_backward_input(const DenseShape& s, std::span<const double> grad_y, std::span<const double> weight,
                          std::span<double> grad_x);
void dense_backward_params(const DenseShape& s, std::span<const double> x, std::span<const double> grad_y,
                           std::span<double> grad_weight, std::span<double> grad_bias);

}  // namespace parallel

int max_threads();

}  // namespace ftl::kernels
