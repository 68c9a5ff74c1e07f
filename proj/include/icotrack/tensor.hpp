#pragma once

#include <cstdint>
#include <initializer_list>
#include <new>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace icotrack {

// Fixed 64-byte alignment keeps the vectorized kernels on the same code path
// in every run, so repeated runs sum in the same order bit for bit.
template <typename T, size_t Align = 64>
struct AlignedAlloc {
  using value_type = T;
  AlignedAlloc() = default;
  template <class U>
  AlignedAlloc(const AlignedAlloc<U, Align>&) {}
  T* allocate(size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(Align)));
  }
  void deallocate(T* p, size_t) noexcept { ::operator delete(p, std::align_val_t(Align)); }
  template <class U>
  struct rebind {
    using other = AlignedAlloc<U, Align>;
  };
  bool operator==(const AlignedAlloc&) const { return true; }
  bool operator!=(const AlignedAlloc&) const { return false; }
};

// Dense row-major tensor.  Network activations use the index order
// [frame][channel][orientation][cell].
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T, AlignedAlloc<T>> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(size_t(numel_of(shape)), T(0));
  }

  static int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }
  int64_t numel() const { return int64_t(data.size()); }
  int dim(int i) const { return shape[i]; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }
};

}  // namespace icotrack
