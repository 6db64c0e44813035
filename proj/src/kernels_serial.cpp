#include <algorithm>

#include "ftl/kernels.hpp"

namespace ftl::kernels::serial {

void conv2d_forward(const ConvShape& s, std::span<const double> input, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> output) {
  const int oh = s.out_height(), ow = s.out_width();
  for (int n = 0; n < s.batch; ++n) {
    for (int co = 0; co < s.out_channels; ++co) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          double acc = bias[co];
          for (int ci = 0; ci < s.in_channels; ++ci) {
            for (int ky = 0; ky < s.kernel; ++ky) {
              const int iy = oy * s.stride - s.pad + ky;
              if (iy < 0 || iy >= s.in_height) continue;
              for (int kx = 0; kx < s.kernel; ++kx) {
                const int ix = ox * s.stride - s.pad + kx;
                if (ix < 0 || ix >= s.in_width) continue;
                acc += weight[((co * s.in_channels + ci) * s.kernel + ky) * s.kernel + kx] *
                       input[((static_cast<std::size_t>(n) * s.in_channels + ci) * s.in_height + iy) * s.in_width + ix];
              }
            }
          }
          output[((static_cast<std::size_t>(n) * s.out_channels + co) * oh + oy) * ow + ox] = acc;
        }
      }
    }
  }
}

void conv2d_backward_input(const ConvShape& s, std::span<const double> grad_output, std::span<const double> weight,
                           std::span<double> grad_input) {
  const int oh = s.out_height(), ow = s.out_width();
  for (int n = 0; n < s.batch; ++n) {
    for (int ci = 0; ci < s.in_channels; ++ci) {
      double* gi = grad_input.data() + (static_cast<std::size_t>(n) * s.in_channels + ci) * s.in_height * s.in_width;
      std::fill(gi, gi + static_cast<std::ptrdiff_t>(s.in_height) * s.in_width, 0.0);
      for (int co = 0; co < s.out_channels; ++co) {
        for (int oy = 0; oy < oh; ++oy) {
          for (int ox = 0; ox < ow; ++ox) {
            const double g = grad_output[((static_cast<std::size_t>(n) * s.out_channels + co) * oh + oy) * ow + ox];
            for (int ky = 0; ky < s.kernel; ++ky) {
              const int iy = oy * s.stride - s.pad + ky;
              if (iy < 0 || iy >= s.in_height) continue;
              for (int kx = 0; kx < s.kernel; ++kx) {
                const int ix = ox * s.stride - s.pad + kx;
                if (ix < 0 || ix >= s.in_width) continue;
                gi[iy * s.in_width + ix] += g * weight[((co * s.in_channels + ci) * s.kernel + ky) * s.kernel + kx];
              }
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_params(const ConvShape& s, std::span<const double> input, std::span<const double> grad_output,
                            std::span<double> grad_weight, std::span<double> grad_bias) {
  const int oh = s.out_height(), ow = s.out_width();
  for (int co = 0; co < s.out_channels; ++co) {
    double bias_acc = 0.0;
    for (int n = 0; n < s.batch; ++n) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          bias_acc += grad_output[((static_cast<std::size_t>(n) * s.out_channels + co) * oh + oy) * ow + ox];
        }
      }
    }
    grad_bias[co] = bias_acc;
    for (int ci = 0; ci < s.in_channels; ++ci) {
      for (int ky = 0; ky < s.kernel; ++ky) {
        for (int kx = 0; kx < s.kernel; ++kx) {
          double acc = 0.0;
          for (int n = 0; n < s.batch; ++n) {
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * s.stride - s.pad + ky;
              if (iy < 0 || iy >= s.in_height) continue;
              for (int ox = 0; ox < ow; ++ox) {
                const int ix = ox * s.stride - s.pad + kx;
                if (ix < 0 || ix >= s.in_width) continue;
                acc += grad_output[((static_cast<std::size_t>(n) * s.out_channels + co) * oh + oy) * ow + ox] *
                       input[((static_cast<std::size_t>(n) * s.in_channels + ci) * s.in_height + iy) * s.in_width + ix];
              }
            }
          }
          grad_weight[((co * s.in_channels + ci) * s.kernel + ky) * s.kernel + kx] = acc;
        }
      }
    }
  }
}

void dense_forward(const DenseShape& s, std::span<const double> x, std::span<const double> weight,
                   std::span<const double> bias, std::span<double> y) {
  for (int r = 0; r < s.rows; ++r) {
    for (int o = 0; o < s.out; ++o) {
      double acc = bias[o];
      for (int i = 0; i < s.in; ++i) acc += x[static_cast<std::size_t>(r) * s.in + i] * weight[static_cast<std::size_t>(o) * s.in + i];
      y[static_cast<std::size_t>(r) * s.out + o] = acc;
    }
  }
}

void dense_backward_input(const DenseShape& s, std::span<const double> grad_y, std::span<const double> weight,
                          std::span<double> grad_x) {
  for (int r = 0; r < s.rows; ++r) {
    for (int i = 0; i < s.in; ++i) {
      double acc = 0.0;
      for (int o = 0; o < s.out; ++o) acc += grad_y[static_cast<std::size_t>(r) * s.out + o] * weight[static_cast<std::size_t>(o) * s.in + i];
      grad_x[static_cast<std::size_t>(r) * s.in + i] = acc;
    }
  }
}

void dense_backward_params(const DenseShape& s, std::span<const double> x, std::span<const double> grad_y,
                           std::span<double> grad_weight, std::span<double> grad_bias) {
  for (int o = 0; o < s.out; ++o) {
    double bias_acc = 0.0;
    for (int r = 0; r < s.rows; ++r) bias_acc += grad_y[static_cast<std::size_t>(r) * s.out + o];
    grad_bias[o] = bias_acc;
    for (int i = 0; i < s.in; ++i) {
      double acc = 0.0;
      for (int r = 0; r < s.rows; ++r) acc += grad_y[static_cast<std::size_t>(r) * s.out + o] * x[static_cast<std::size_t>(r) * s.in + i];
      grad_weight[static_cast<std::size_t>(o) * s.in + i] = acc;
    }
  }
}

}  // namespace ftl::kernels::serial
