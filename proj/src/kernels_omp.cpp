#include <omp.h>

#include <algorithm>

#include "ftl/kernels.hpp"

namespace ftl::kernels {

int max_threads() { return omp_get_max_threads(); }

namespace parallel {

void conv2d_forward(const ConvShape& s, std::span<const double> input, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> output) {
  const int oh = s.out_height(), ow = s.out_width();
  const int planes = s.batch * s.out_channels;
#pragma omp parallel for schedule(static)
  for (int plane = 0; plane < planes; ++plane) {
    const int n = plane / s.out_channels;
    const int co = plane % s.out_channels;
    const double* w = weight.data() + static_cast<std::size_t>(co) * s.in_channels * s.kernel * s.kernel;
    const double* in = input.data() + static_cast<std::size_t>(n) * s.in_channels * s.in_height * s.in_width;
    double* out = output.data() + static_cast<std::size_t>(plane) * oh * ow;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = bias[co];
        for (int ci = 0; ci < s.in_channels; ++ci) {
          const double* in_c = in + static_cast<std::size_t>(ci) * s.in_height * s.in_width;
          const double* w_c = w + static_cast<std::size_t>(ci) * s.kernel * s.kernel;
          for (int ky = 0; ky < s.kernel; ++ky) {
            const int iy = oy * s.stride - s.pad + ky;
            if (iy < 0 || iy >= s.in_height) continue;
            for (int kx = 0; kx < s.kernel; ++kx) {
              const int ix = ox * s.stride - s.pad + kx;
              if (ix < 0 || ix >= s.in_width) continue;
              acc += w_c[ky * s.kernel + kx] * in_c[iy * s.in_width + ix];
            }
          }
        }
        out[oy * ow + ox] = acc;
      }
    }
  }
}

void conv2d_backward_input(const ConvShape& s, std::span<const double> grad_output, std::span<const double> weight,
                           std::span<double> grad_input) {
  const int oh = s.out_height(), ow = s.out_width();
  const int planes = s.batch * s.in_channels;
  // Each task owns one input plane, so the scatter below never races.
#pragma omp parallel for schedule(static)
  for (int plane = 0; plane < planes; ++plane) {
    const int n = plane / s.in_channels;
    const int ci = plane % s.in_channels;
    const double* g = grad_output.data() + static_cast<std::size_t>(n) * s.out_channels * oh * ow;
    double* gi = grad_input.data() + static_cast<std::size_t>(plane) * s.in_height * s.in_width;
    std::fill(gi, gi + static_cast<std::ptrdiff_t>(s.in_height) * s.in_width, 0.0);
    for (int co = 0; co < s.out_channels; ++co) {
      const double* g_c = g + static_cast<std::size_t>(co) * oh * ow;
      const double* w_c = weight.data() + (static_cast<std::size_t>(co) * s.in_channels + ci) * s.kernel * s.kernel;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          const double go = g_c[oy * ow + ox];
          for (int ky = 0; ky < s.kernel; ++ky) {
            const int iy = oy * s.stride - s.pad + ky;
            if (iy < 0 || iy >= s.in_height) continue;
            for (int kx = 0; kx < s.kernel; ++kx) {
              const int ix = ox * s.stride - s.pad + kx;
              if (ix < 0 || ix >= s.in_width) continue;
              gi[iy * s.in_width + ix] += go * w_c[ky * s.kernel + kx];
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
  const int taps = s.in_channels * s.kernel * s.kernel;
  const int work = s.out_channels * (taps + 1);  // one extra slot per channel for the bias
#pragma omp parallel for schedule(static)
  for (int item = 0; item < work; ++item) {
    const int co = item / (taps + 1);
    const int tap = item % (taps + 1);
    double acc = 0.0;
    if (tap == taps) {
      for (int n = 0; n < s.batch; ++n) {
        const double* g = grad_output.data() + (static_cast<std::size_t>(n) * s.out_channels + co) * oh * ow;
        for (int k = 0; k < oh * ow; ++k) acc += g[k];
      }
      grad_bias[co] = acc;
      continue;
    }
    const int ci = tap / (s.kernel * s.kernel);
    const int ky = (tap / s.kernel) % s.kernel;
    const int kx = tap % s.kernel;
    for (int n = 0; n < s.batch; ++n) {
      const double* g = grad_output.data() + (static_cast<std::size_t>(n) * s.out_channels + co) * oh * ow;
      const double* in = input.data() + (static_cast<std::size_t>(n) * s.in_channels + ci) * s.in_height * s.in_width;
      for (int oy = 0; oy < oh; ++oy) {
        const int iy = oy * s.stride - s.pad + ky;
        if (iy < 0 || iy >= s.in_height) continue;
        for (int ox = 0; ox < ow; ++ox) {
          const int ix = ox * s.stride - s.pad + kx;
          if (ix < 0 || ix >= s.in_width) continue;
          acc += g[oy * ow + ox] * in[iy * s.in_width + ix];
        }
      }
    }
    grad_weight[static_cast<std::size_t>(co) * taps + tap] = acc;
  }
}

void dense_forward(const DenseShape& s, std::span<const double> x, std::span<const double> weight,
                   std::span<const double> bias, std::span<double> y) {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < s.rows; ++r) {
    const double* xr = x.data() + static_cast<std::size_t>(r) * s.in;
    for (int o = 0; o < s.out; ++o) {
      const double* wo = weight.data() + static_cast<std::size_t>(o) * s.in;
      double acc = bias[o];
      for (int i = 0; i < s.in; ++i) acc += xr[i] * wo[i];
      y[static_cast<std::size_t>(r) * s.out + o] = acc;
    }
  }
}

void dense_backward_input(const DenseShape& s, std::span<const double> grad_y, std::span<const double> weight,
                          std::span<double> grad_x) {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < s.rows; ++r) {
    const double* gy = grad_y.data() + static_cast<std::size_t>(r) * s.out;
    for (int i = 0; i < s.in; ++i) {
      double acc = 0.0;
      for (int o = 0; o < s.out; ++o) acc += gy[o] * weight[static_cast<std::size_t>(o) * s.in + i];
      grad_x[static_cast<std::size_t>(r) * s.in + i] = acc;
    }
  }
}

void dense_backward_params(const DenseShape& s, std::span<const double> x, std::span<const double> grad_y,
                           std::span<double> grad_weight, std::span<double> grad_bias) {
#pragma omp parallel for schedule(static)
  for (int o = 0; o < s.out; ++o) {
    double bias_acc = 0.0;
    for (int r = 0; r < s.rows; ++r) bias_acc += grad_y[static_cast<std::size_t>(r) * s.out + o];
    grad_bias[o] = bias_acc;
    for (int i = 0; i < s.in; ++i) {
      double acc = 0.0;
      for (int r = 0; r < s.rows; ++r) {
        acc += grad_y[static_cast<std::size_t>(r) * s.out + o] * x[static_cast<std::size_t>(r) * s.in + i];
      }
      grad_weight[static_cast<std::size_t>(o) * s.in + i] = acc;
    }
  }
}

}  // namespace parallel
}  // namespace ftl::kernels
