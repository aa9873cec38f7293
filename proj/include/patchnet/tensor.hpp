#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "patchnet/error.hpp"

namespace patchnet {

/// Dense (channels, height, width) array, row-major within each channel.
class Tensor3 {
 public:
  Tensor3() : Tensor3(1, 1, 1) {}
  Tensor3(std::size_t channels, std::size_t height, std::size_t width, double fill = 0.0)
      : c_(channels), h_(height), w_(width) {
    if (c_ == 0 || h_ == 0 || w_ == 0) {
      throw InvalidArgument("Tensor3: all dimensions must be >= 1 (got " + shape_string() + ")");
    }
    data_.assign(c_ * h_ * w_, fill);
  }
  Tensor3(std::size_t channels, std::size_t height, std::size_t width, std::vector<double> data)
      : Tensor3(channels, height, width) {
    if (data.size() != data_.size()) {
      throw InvalidArgument("Tensor3: data length " + std::to_string(data.size()) +
                            " does not match shape " + shape_string());
    }
    data_ = std::move(data);
  }

  std::size_t channels() const { return c_; }
  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  std::size_t plane_size() const { return h_ * w_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t c, std::size_t y, std::size_t x) { return data_[(c * h_ + y) * w_ + x]; }
  double operator()(std::size_t c, std::size_t y, std::size_t x) const { return data_[(c * h_ + y) * w_ + x]; }

  std::span<double> plane(std::size_t c) { return {data_.data() + c * h_ * w_, h_ * w_}; }
  std::span<const double> plane(std::size_t c) const { return {data_.data() + c * h_ * w_, h_ * w_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Tensor3& o) const { return c_ == o.c_ && h_ == o.h_ && w_ == o.w_; }

  std::string shape_string() const {
    return std::to_string(c_) + "x" + std::to_string(h_) + "x" + std::to_string(w_);
  }

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  std::size_t c_, h_, w_;
  std::vector<double> data_;
};

/// Convolution weight: (out_channels, in_channels, kernel_h, kernel_w).
class Tensor4 {
 public:
  Tensor4() : Tensor4(1, 1, 1, 1) {}
  Tensor4(std::size_t out_channels, std::size_t in_channels, std::size_t kernel_h, std::size_t kernel_w,
          double fill = 0.0)
      : o_(out_channels), i_(in_channels), kh_(kernel_h), kw_(kernel_w) {
    if (o_ == 0 || i_ == 0 || kh_ == 0 || kw_ == 0) {
      throw InvalidArgument("Tensor4: all dimensions must be >= 1 (got " + shape_string() + ")");
    }
    data_.assign(o_ * i_ * kh_ * kw_, fill);
  }
  Tensor4(std::size_t out_channels, std::size_t in_channels, std::size_t kernel_h, std::size_t kernel_w,
          std::vector<double> data)
      : Tensor4(out_channels, in_channels, kernel_h, kernel_w) {
    if (data.size() != data_.size()) {
      throw InvalidArgument("Tensor4: data length " + std::to_string(data.size()) +
                            " does not match shape " + shape_string());
    }
    data_ = std::move(data);
  }

  std::size_t out_channels() const { return o_; }
  std::size_t in_channels() const { return i_; }
  std::size_t kernel_h() const { return kh_; }
  std::size_t kernel_w() const { return kw_; }
  std::size_t kernel_size() const { return kh_ * kw_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t o, std::size_t i, std::size_t y, std::size_t x) {
    return data_[((o * i_ + i) * kh_ + y) * kw_ + x];
  }
  double operator()(std::size_t o, std::size_t i, std::size_t y, std::size_t x) const {
    return data_[((o * i_ + i) * kh_ + y) * kw_ + x];
  }

  /// The kh*kw kernel connecting input channel i to output channel o.
  std::span<double> kernel(std::size_t o, std::size_t i) { return {data_.data() + (o * i_ + i) * kh_ * kw_, kh_ * kw_}; }
  std::span<const double> kernel(std::size_t o, std::size_t i) const {
    return {data_.data() + (o * i_ + i) * kh_ * kw_, kh_ * kw_};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Tensor4& o) const { return o_ == o.o_ && i_ == o.i_ && kh_ == o.kh_ && kw_ == o.kw_; }

  std::string shape_string() const {
    return std::to_string(o_) + "x" + std::to_string(i_) + "x" + std::to_string(kh_) + "x" + std::to_string(kw_);
  }

  friend bool operator==(const Tensor4&, const Tensor4&) = default;

 private:
  std::size_t o_, i_, kh_, kw_;
  std::vector<double> data_;
};

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// Complex 2D array for the radix-2 FFT; both sides must be powers of two.
class ComplexPlane {
 public:
  ComplexPlane(std::size_t height, std::size_t width) : h_(height), w_(width) {
    if (!is_power_of_two(h_) || !is_power_of_two(w_)) {
      throw InvalidArgument("ComplexPlane: dims must be powers of two (got " + std::to_string(h_) + "x" +
                            std::to_string(w_) + ")");
    }
    re_.assign(h_ * w_, 0.0);
    im_.assign(h_ * w_, 0.0);
  }

  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  std::size_t size() const { return re_.size(); }

  double& re(std::size_t y, std::size_t x) { return re_[y * w_ + x]; }
  double re(std::size_t y, std::size_t x) const { return re_[y * w_ + x]; }
  double& im(std::size_t y, std::size_t x) { return im_[y * w_ + x]; }
  double im(std::size_t y, std::size_t x) const { return im_[y * w_ + x]; }

  std::vector<double>& re() { return re_; }
  const std::vector<double>& re() const { return re_; }
  std::vector<double>& im() { return im_; }
  const std::vector<double>& im() const { return im_; }

 private:
  std::size_t h_, w_;
  std::vector<double> re_, im_;
};

}  // namespace patchnet
