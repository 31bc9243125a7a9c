#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace warpcell {

/// Dense n-dimensional array of 64-bit floats, row-major with the innermost
/// axis being channels. Feature maps are [H, W, C]; sequences prepend a time
/// axis where noted.
struct Tensor {
  std::vector<int> dims;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> d);

  static Tensor zeros(std::vector<int> dims);
  static Tensor full(std::vector<int> dims, double value);
  static Tensor from_values(std::vector<int> dims, std::vector<double> values);

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(dims.size()); }
  bool same_shape(const Tensor& other) const { return dims == other.dims; }

  double operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }
  double& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }

  // rank-specific accessors; index arithmetic matches row-major layout
  double at(int i) const { return data[static_cast<std::size_t>(i)]; }
  double& at(int i) { return data[static_cast<std::size_t>(i)]; }
  double at(int i, int j) const { return data[static_cast<std::size_t>(i) * dims[1] + j]; }
  double& at(int i, int j) { return data[static_cast<std::size_t>(i) * dims[1] + j]; }
  double at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * dims[1] + x) * dims[2] + c];
  }
  double& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * dims[1] + x) * dims[2] + c];
  }
  double at(int a, int b, int c, int d) const {
    return data[((static_cast<std::size_t>(a) * dims[1] + b) * dims[2] + c) * dims[3] + d];
  }
  double& at(int a, int b, int c, int d) {
    return data[((static_cast<std::size_t>(a) * dims[1] + b) * dims[2] + c) * dims[3] + d];
  }

  std::string shape_string() const;
};

std::int64_t numel_of(const std::vector<int>& dims);
bool all_finite(const Tensor& t);
Tensor zeros_like(const Tensor& t);

// elementwise helpers
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scaled(const Tensor& a, double s);
void add_inplace(Tensor& dst, const Tensor& src);
void axpy(Tensor& y, double a, const Tensor& x);
double dot(const Tensor& a, const Tensor& b);
double max_abs(const Tensor& t);
double max_abs_diff(const Tensor& a, const Tensor& b);
bool exactly_equal(const Tensor& a, const Tensor& b);

Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor concat_channels(const std::vector<const Tensor*>& parts);
Tensor channel_slice(const Tensor& t, int c_begin, int c_end);

/// Convolution weights: kernel [kh, kw, c_in, c_out] and bias [c_out].
struct ConvParams {
  Tensor kernel;
  Tensor bias;
};

enum class Padding { SameZero, Valid };

/// Direct 2-D convolution over an [H, W, Cin] map. SameZero keeps H and W
/// (zero padding, top/left pad = (k-1)/2); Valid shrinks to H-kh+1, W-kw+1.
/// Summation order is fixed (ky, kx, ci) so results are bitwise reproducible.
Tensor conv2d(const Tensor& input, const ConvParams& params, Padding padding);

/// Bias-free variant, used for the state-to-state paths of recurrent cells.
Tensor conv2d(const Tensor& input, const Tensor& kernel, Padding padding);

struct Conv2dGrads {
  Tensor input;
  Tensor kernel;
  Tensor bias;
};
Conv2dGrads conv2d_vjp(const Tensor& input, const ConvParams& params, Padding padding,
                       const Tensor& grad_out);
void conv2d_vjp_accumulate(const Tensor& input, const Tensor& kernel, Padding padding,
                           const Tensor& grad_out, Tensor* grad_input, Tensor* grad_kernel,
                           Tensor* grad_bias);

enum class Activ { Sigmoid, Tanh };

Tensor activation(const Tensor& x, Activ kind);
/// Cotangent w.r.t. x given the forward output y (sigmoid' = y(1-y), tanh' = 1-y^2).
Tensor activation_vjp(const Tensor& y, Activ kind, const Tensor& grad_out);

double sigmoid(double x);

/// Bilinear interpolation of an [H, W, C] map at float (y, x) coordinates.
/// Pixels outside the map read as zero, so samples taken fully outside are 0.
/// Returns [len(coords), C].
Tensor bilinear_sample(const Tensor& map, const std::vector<std::array<double, 2>>& coords);

struct BilinearGrads {
  Tensor map;
  std::vector<std::array<double, 2>> coords;  // d/d(y), d/d(x) per sample
};
BilinearGrads bilinear_sample_vjp(const Tensor& map,
                                  const std::vector<std::array<double, 2>>& coords,
                                  const Tensor& grad_out);
void bilinear_sample_vjp_accumulate(const Tensor& map,
                                    const std::vector<std::array<double, 2>>& coords,
                                    const Tensor& grad_out, Tensor* grad_map,
                                    std::vector<std::array<double, 2>>* grad_coords);

}  // namespace warpcell
